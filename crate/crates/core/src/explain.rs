//! Subgoals, keypoints and minimal explanations.
//!
//! Subgoals are the falling edges of the importance profile. Given a route
//! proposed by a questioner, keypoints are the subgoals that route never
//! executes, and the explanation is the earliest keypoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridSpec, Pos};
use crate::importance::ImportanceProfile;
use crate::mdp::{pair_set_difference, Action, State, StateActionPair, Trajectory};
use crate::world_model::{rollout, ActionSource, TransitionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgoalSet {
    pub subgoals: Vec<StateActionPair>,
    pub epsilon_used: f64,
    pub source_path: Trajectory,
}

impl SubgoalSet {
    pub fn steps(&self) -> Vec<usize> {
        self.subgoals.iter().filter_map(|p| p.step).collect()
    }

    pub fn len(&self) -> usize {
        self.subgoals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subgoals.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub keypoints: Vec<StateActionPair>,
    pub query: Trajectory,
}

/// The earliest missed subgoal; `None` means the route already covers every subgoal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub pair: Option<StateActionPair>,
}

/// Falling edges of the profile against `epsilon` (defaults to the profile mean).
///
/// Step `t` is selected when `I(s_t) > eps` and `I(s_{t+1}) < eps`; the goal's
/// forced zero serves as `I(s_{t+1})` for the last action. Of two selected
/// steps `t`, `t + 1` only the earlier is kept.
pub fn extract_subgoals(profile: &ImportanceProfile, epsilon: Option<f64>) -> Result<SubgoalSet> {
    let path = &profile.path;
    if path.len() < 2 {
        return Err(Error::InsufficientPath(path.len()));
    }
    if profile.values.len() != path.len() + 1 {
        return Err(Error::Validation(format!(
            "profile has {} values for {} states",
            profile.values.len(),
            path.len() + 1
        )));
    }
    let eps = epsilon.unwrap_or(profile.epsilon);
    let v = &profile.values;
    let mut subgoals: Vec<StateActionPair> = Vec::new();
    for (t, pair) in path.pairs.iter().enumerate() {
        if !(v[t] > eps && v[t + 1] < eps) {
            continue;
        }
        if subgoals.last().and_then(|p| p.step).is_some_and(|prev| prev + 1 == t) {
            continue;
        }
        subgoals.push(StateActionPair::at(pair.state, pair.action, t));
    }
    Ok(SubgoalSet {
        subgoals,
        epsilon_used: eps,
        source_path: path.clone(),
    })
}

/// Seed for sampling stochastic models while simulating a query.
const QUERY_SEED: u64 = 0x5eed;

/// The questioner's route as predicted by the world model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedQuery {
    pub trajectory: Trajectory,
    pub truncated: bool,
}

/// Runs the questioner's action list on the world model from `s0`.
pub fn simulate_query(
    model: &TransitionModel,
    s0: State,
    actions: &[Action],
    max_steps: usize,
) -> SimulatedQuery {
    let mut rng = ChaCha8Rng::seed_from_u64(QUERY_SEED);
    let r = rollout(model, ActionSource::Actions(actions), s0, max_steps, &mut rng);
    SimulatedQuery {
        truncated: r.truncated(),
        trajectory: r.trajectory,
    }
}

/// Subgoals the bad trajectory never executes, compared by `(state, action)` value.
pub fn derive_keypoints(bad: &Trajectory, subgoals: &SubgoalSet) -> KeypointSet {
    KeypointSet {
        keypoints: pair_set_difference(&subgoals.subgoals, &bad.pairs),
        query: bad.clone(),
    }
}

/// The keypoint with the smallest step.
pub fn select_explanation(keypoints: &KeypointSet) -> Explanation {
    let pair = keypoints
        .keypoints
        .iter()
        .min_by_key(|p| p.step.unwrap_or(usize::MAX))
        .copied();
    Explanation { pair }
}

/// Everything returned for one what-if query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationBundle {
    pub predicted_trajectory: Trajectory,
    pub truncated: bool,
    pub subgoals: Vec<StateActionPair>,
    pub keypoints: Vec<StateActionPair>,
    pub explanation: Option<StateActionPair>,
}

/// Simulate, diff against the subgoals and pick the explanation.
pub fn answer_query(
    model: &TransitionModel,
    subgoals: &SubgoalSet,
    s0: State,
    actions: &[Action],
    max_steps: usize,
) -> ExplanationBundle {
    let q = simulate_query(model, s0, actions, max_steps);
    let k = derive_keypoints(&q.trajectory, subgoals);
    let e = select_explanation(&k);
    ExplanationBundle {
        predicted_trajectory: q.trajectory,
        truncated: q.truncated,
        subgoals: subgoals.subgoals.clone(),
        keypoints: k.keypoints,
        explanation: e.pair,
    }
}

/// Named landmarks of the key-door task, recognised by cell position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Landmark {
    GetKey,
    PassDoor,
    ReachGoal,
}

impl Landmark {
    pub fn label(self) -> &'static str {
        match self {
            Landmark::GetKey => "get key",
            Landmark::PassDoor => "pass through door",
            Landmark::ReachGoal => "reach goal",
        }
    }
}

fn adjacent(a: Pos, b: Pos) -> bool {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
}

/// Classifies a pair: next to the goal, in or next to the door cell, or next
/// to the key while still without it.
pub fn classify(spec: &GridSpec, pair: &StateActionPair) -> Option<Landmark> {
    let p = pair.state.pos();
    if adjacent(p, spec.goal_pos) {
        Some(Landmark::ReachGoal)
    } else if p == spec.door_pos || adjacent(p, spec.door_pos) {
        Some(Landmark::PassDoor)
    } else if !pair.state.has_key && (adjacent(p, spec.key_pos) || p == spec.key_pos) {
        Some(Landmark::GetKey)
    } else {
        None
    }
}
