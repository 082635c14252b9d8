//! The end-to-end analysis: learn, roll out the optimal path, score it and
//! extract subgoals.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError, MODEL_FILE, PATH_FILE, QTABLE_FILE};
use crate::error::{Error, Result};
use crate::explain::{self, ExplanationBundle, SubgoalSet};
use crate::gridworld::GridSpec;
use crate::importance::{self, ImportanceParams, ImportanceProfile};
use crate::mdp::{Action, State, Trajectory};
use crate::policy::{self, HyperParams, Policy, QTable};
use crate::world_model::{self, TransitionModel};

/// Default random actions per importance trial.
pub const DEFAULT_R_NUM: usize = 3;
/// Default importance trials per state.
pub const DEFAULT_S_NUM: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub learner: HyperParams,
    pub seed: u64,
    pub r_num: usize,
    pub s_num: usize,
    /// Subgoal threshold; the profile mean when absent.
    pub epsilon: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            learner: HyperParams::default(),
            seed: 0,
            r_num: DEFAULT_R_NUM,
            s_num: DEFAULT_S_NUM,
            epsilon: None,
        }
    }
}

impl AnalysisConfig {
    pub fn importance_params(&self, model: &TransitionModel) -> ImportanceParams {
        ImportanceParams::for_model(model, self.r_num, self.s_num, self.seed)
    }
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error(transparent)]
    Core(#[from] Error),
}

/// Policy, world model and optimal path: the persisted part of an analysis.
#[derive(Debug, Clone)]
pub struct Trained {
    pub qtable: QTable,
    pub policy: Policy,
    pub model: TransitionModel,
    pub path: Trajectory,
}

/// Greedy path on the model from the map's start.
pub fn model_path(spec: &GridSpec, policy: &Policy, model: &TransitionModel, seed: u64) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    policy::optimal_path(policy, model, spec.start_state(), spec.max_steps, &mut rng)
}

pub fn train(spec: &GridSpec, learner: &HyperParams, seed: u64) -> Result<Trained> {
    let learned = world_model::learn(spec, learner, seed)?;
    let path = model_path(spec, &learned.policy, &learned.model, seed)?;
    Ok(Trained {
        qtable: learned.qtable,
        policy: learned.policy,
        model: learned.model,
        path,
    })
}

impl Trained {
    pub fn spec(&self) -> &GridSpec {
        self.model.spec()
    }

    /// Writes the Q-table, model and path artifacts into `dir`.
    pub fn write(&self, dir: &Path) -> std::result::Result<(), ArtifactError> {
        let spec = self.spec();
        artifact::write(&dir.join(QTABLE_FILE), "qtable", spec, &self.qtable)?;
        artifact::write(&dir.join(MODEL_FILE), "model", spec, &self.model)?;
        artifact::write(&dir.join(PATH_FILE), "path", spec, &self.path)
    }

    /// Reads artifacts written by [`Trained::write`] for `spec`.
    pub fn read(dir: &Path, spec: &GridSpec) -> std::result::Result<Trained, LoadError> {
        let qtable: QTable = artifact::read(&dir.join(QTABLE_FILE), "qtable", spec)?;
        let model: TransitionModel = artifact::read(&dir.join(MODEL_FILE), "model", spec)?;
        let path: Trajectory = artifact::read(&dir.join(PATH_FILE), "path", spec)?;
        if model.spec() != spec {
            return Err(Error::Validation("model artifact describes a different map".into()).into());
        }
        if qtable.num_states != crate::mdp::state_count(spec) {
            return Err(Error::Validation("q-table size does not match the map".into()).into());
        }
        let policy = qtable.greedy_policy(spec);
        Ok(Trained {
            qtable,
            policy,
            model,
            path,
        })
    }
}

/// A trained agent with its importance profile and subgoals.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub trained: Trained,
    pub profile: ImportanceProfile,
    pub subgoals: SubgoalSet,
}

impl Analysis {
    /// Scores the trained path and extracts its subgoals.
    pub fn new(trained: Trained, cfg: &AnalysisConfig) -> Result<Analysis> {
        let params = cfg.importance_params(&trained.model);
        let profile = importance::importance_profile(&trained.model, &trained.policy, &trained.path, &params)?;
        let subgoals = explain::extract_subgoals(&profile, cfg.epsilon)?;
        Ok(Analysis {
            trained,
            profile,
            subgoals,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        self.trained.spec()
    }

    pub fn model(&self) -> &TransitionModel {
        &self.trained.model
    }

    pub fn path(&self) -> &Trajectory {
        &self.trained.path
    }

    /// Answers a hypothesised route from `start`, or from the map's start.
    /// The whole action list is simulated.
    pub fn explain(&self, start: Option<State>, actions: &[Action]) -> ExplanationBundle {
        explain::answer_query(
            &self.trained.model,
            &self.subgoals,
            start.unwrap_or_else(|| self.spec().start_state()),
            actions,
            actions.len(),
        )
    }
}

/// Trains from scratch and analyses the result.
pub fn analyze(spec: &GridSpec, cfg: &AnalysisConfig) -> Result<Analysis> {
    Analysis::new(train(spec, &cfg.learner, cfg.seed)?, cfg)
}
