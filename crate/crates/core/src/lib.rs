//! Minimal explanations for a goal-directed gridworld agent.
//!
//! The pipeline learns a policy and a world model on a key-door-goal map,
//! scores every state of the optimal path by how hard it is to route around
//! it, extracts the falling edges of that score as subgoals, and answers a
//! questioner's hypothesised route with the earliest subgoal it misses.
//!
//! ```no_run
//! use subgoal_core::prelude::*;
//!
//! let spec = parse_map(CANONICAL_MAP)?;
//! let analysis = analyze(&spec, &AnalysisConfig::default())?;
//! for pair in &analysis.subgoals.subgoals {
//!     println!("{pair} -> {:?}", classify(&spec, pair));
//! }
//! let answer = analysis.explain(None, &[Action::Forward, Action::TurnLeft]);
//! println!("{:?}", answer.explanation);
//! # Ok::<(), subgoal_core::Error>(())
//! ```

pub mod artifact;
pub mod error;
pub mod eval;
pub mod explain;
pub mod gridworld;
pub mod importance;
pub mod mdp;
mod par;
pub mod pipeline;
pub mod policy;
pub mod stats;
pub mod world_model;

pub use error::{BoundsError, Error, Result};
pub use par::is_parallel;

pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::explain::{
        answer_query, classify, derive_keypoints, extract_subgoals, select_explanation,
        simulate_query, Explanation, ExplanationBundle, KeypointSet, Landmark, SubgoalSet,
    };
    pub use crate::gridworld::{parse_map, GridSpec, CANONICAL_MAP, SMALL_MAP};
    pub use crate::importance::{
        importance_exact, importance_mc, importance_profile, ImportanceParams, ImportanceProfile,
    };
    pub use crate::mdp::{Action, Dir, State, StateActionPair, Trajectory};
    pub use crate::pipeline::{analyze, train, Analysis, AnalysisConfig, Trained};
    pub use crate::policy::{optimal_path, train_q_learning, HyperParams, Policy, QTable};
    pub use crate::world_model::{fit, learn, rollout, ActionSource, Learned, TransitionModel};
}
