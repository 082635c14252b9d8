//! Tabular Q-learning on the gridworld and greedy policy extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{self, GridSpec};
use crate::mdp::{index_state, state_count, state_index, Action, State, StateActionPair, Trajectory};

/// Linear epsilon decay from `start` to `end` over `decay_episodes`, flat afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_episodes: usize,
}

impl EpsilonSchedule {
    pub fn constant(eps: f64) -> Self {
        EpsilonSchedule {
            start: eps,
            end: eps,
            decay_episodes: 1,
        }
    }

    pub fn at(&self, episode: usize) -> f64 {
        if episode >= self.decay_episodes {
            return self.end;
        }
        let frac = episode as f64 / self.decay_episodes as f64;
        self.start + (self.end - self.start) * frac
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub episodes: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: EpsilonSchedule,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            episodes: 5000,
            alpha: 0.5,
            gamma: 0.95,
            epsilon: EpsilonSchedule {
                start: 1.0,
                end: 0.05,
                decay_episodes: 4000,
            },
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.episodes > 0
            && self.alpha > 0.0
            && self.alpha <= 1.0
            && self.gamma > 0.0
            && self.gamma < 1.0
            && (0.0..=1.0).contains(&self.epsilon.start)
            && (0.0..=1.0).contains(&self.epsilon.end)
            && self.epsilon.decay_episodes > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Validation(format!("invalid hyperparameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: Action,
    pub next: State,
}

/// Every transition observed while acting in the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperienceLog {
    pub transitions: Vec<Transition>,
}

impl ExperienceLog {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn push(&mut self, state: State, action: Action, next: State) {
        self.transitions.push(Transition {
            state,
            action,
            next,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    pub spec_hash: String,
    pub num_states: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(spec: &GridSpec) -> QTable {
        let n = state_count(spec);
        QTable {
            spec_hash: spec.fingerprint(),
            num_states: n,
            values: vec![0.0; n * Action::COUNT],
        }
    }

    pub fn row(&self, state_idx: usize) -> &[f64] {
        &self.values[state_idx * Action::COUNT..(state_idx + 1) * Action::COUNT]
    }

    pub fn get(&self, state_idx: usize, a: Action) -> f64 {
        self.values[state_idx * Action::COUNT + a.index()]
    }

    /// First maximal action in global action order.
    pub fn argmax(&self, state_idx: usize) -> Action {
        let row = self.row(state_idx);
        let mut best = 0;
        for i in 1..Action::COUNT {
            if row[i] > row[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn max(&self, state_idx: usize) -> f64 {
        self.row(state_idx).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn greedy_policy(&self, spec: &GridSpec) -> Policy {
        Policy {
            width: spec.width,
            height: spec.height,
            actions: (0..self.num_states).map(|i| self.argmax(i)).collect(),
        }
    }
}

/// Greedy policy: one action per tabular state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub width: usize,
    pub height: usize,
    pub actions: Vec<Action>,
}

impl Policy {
    /// Builds a policy from an explicit state -> action rule.
    pub fn from_fn(spec: &GridSpec, f: impl Fn(&State) -> Action) -> Policy {
        let actions = (0..state_count(spec))
            .map(|i| f(&index_state(i, spec).expect("index in range")))
            .collect();
        Policy {
            width: spec.width,
            height: spec.height,
            actions,
        }
    }

    pub fn action(&self, s: &State) -> Action {
        let cell = s.x * self.height + s.y;
        let idx = ((cell * 4 + s.dir.index()) * 2 + s.has_key as usize) * 2 + s.door_open as usize;
        self.actions[idx]
    }
}

/// Per-episode auxiliary rewards on selected state-action pairs.
///
/// A pair pays `scale * reward_fn(t + 1)` the first time it is executed in an
/// episode and nothing on later visits.
#[derive(Debug, Clone)]
pub(crate) struct SubRewards {
    slot_of: Vec<Option<usize>>,
    slots: usize,
    scale: f64,
    one_shot: bool,
}

impl SubRewards {
    pub(crate) fn new(spec: &GridSpec, pairs: &[StateActionPair], scale: f64) -> SubRewards {
        let mut slot_of = vec![None; state_count(spec) * Action::COUNT];
        let mut slots = 0;
        for p in pairs {
            let Ok(si) = state_index(&p.state, spec) else {
                continue;
            };
            let k = si * Action::COUNT + p.action.index();
            if slot_of[k].is_none() {
                slot_of[k] = Some(slots);
                slots += 1;
            }
        }
        SubRewards {
            slot_of,
            slots,
            scale,
            one_shot: true,
        }
    }

    pub(crate) fn one_shot(mut self, yes: bool) -> Self {
        self.one_shot = yes;
        self
    }
}

/// Q-learning state shared by policy training and the shaping experiments.
#[derive(Debug, Clone)]
pub(crate) struct QLearner<'a> {
    pub(crate) spec: &'a GridSpec,
    pub(crate) hp: HyperParams,
    pub(crate) q: QTable,
}

impl<'a> QLearner<'a> {
    pub(crate) fn new(spec: &'a GridSpec, hp: HyperParams) -> Self {
        QLearner {
            spec,
            hp,
            q: QTable::zeros(spec),
        }
    }

    /// Runs one epsilon-greedy episode from the start state, updating Q in place.
    pub(crate) fn run_episode<R: Rng>(
        &mut self,
        episode: usize,
        rng: &mut R,
        shaping: Option<&SubRewards>,
        mut log: Option<&mut ExperienceLog>,
    ) {
        let spec = self.spec;
        let eps = self.hp.epsilon.at(episode);
        let mut paid = vec![false; shaping.map_or(0, |s| s.slots)];
        let mut s = spec.start_state();
        let mut si = state_index(&s, spec).expect("start in bounds");
        for t in 0..spec.max_steps {
            let a = if rng.random::<f64>() < eps {
                Action::ALL[rng.random_range(0..Action::COUNT)]
            } else {
                self.q.argmax(si)
            };
            let out = gridworld::step(spec, &s, a, t);
            let ni = state_index(&out.next_state, spec).expect("step stays in bounds");
            let mut reward = out.reward;
            if let Some(sub) = shaping {
                if let Some(slot) = sub.slot_of[si * Action::COUNT + a.index()] {
                    if !paid[slot] || !sub.one_shot {
                        paid[slot] = true;
                        reward += sub.scale * gridworld::reward_fn(t + 1, spec.max_steps);
                    }
                }
            }
            let bootstrap = if out.done { 0.0 } else { self.q.max(ni) };
            let k = si * Action::COUNT + a.index();
            let target = reward + self.hp.gamma * bootstrap;
            self.q.values[k] += self.hp.alpha * (target - self.q.values[k]);
            if let Some(log) = log.as_deref_mut() {
                log.push(s, a, out.next_state);
            }
            if out.done {
                break;
            }
            s = out.next_state;
            si = ni;
        }
    }

    /// Length of the greedy rollout from the start if it reaches the goal within `max_steps`.
    pub(crate) fn greedy_length(&self) -> Option<usize> {
        let spec = self.spec;
        let mut s = spec.start_state();
        for t in 0..spec.max_steps {
            let a = self.q.argmax(state_index(&s, spec).ok()?);
            s = gridworld::transition(spec, &s, a);
            if spec.is_goal(&s) {
                return Some(t + 1);
            }
        }
        None
    }
}

/// Trains a tabular Q-learner from the spec's start state.
///
/// Returns the table and the log of every transition experienced, which
/// feeds the world model.
pub fn train_q_learning(spec: &GridSpec, hp: &HyperParams, seed: u64) -> Result<(QTable, ExperienceLog)> {
    hp.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = QLearner::new(spec, *hp);
    let mut log = ExperienceLog::default();
    for ep in 0..hp.episodes {
        learner.run_episode(ep, &mut rng, None, Some(&mut log));
    }
    if learner.greedy_length().is_none() {
        return Err(Error::TrainingNotConverged {
            episodes: hp.episodes,
            max_steps: spec.max_steps,
        });
    }
    Ok((learner.q, log))
}

/// Anything that can advance a state under an action: the environment or a learned model.
pub trait Dynamics {
    fn successor<R: Rng + ?Sized>(&self, s: &State, a: Action, rng: &mut R) -> Result<State>;
    fn is_goal(&self, s: &State) -> bool;
}

impl Dynamics for GridSpec {
    fn successor<R: Rng + ?Sized>(&self, s: &State, a: Action, _rng: &mut R) -> Result<State> {
        Ok(gridworld::transition(self, s, a))
    }

    fn is_goal(&self, s: &State) -> bool {
        GridSpec::is_goal(self, s)
    }
}

/// Greedy rollout from `s0` until the goal; this is the optimal path.
pub fn optimal_path<D: Dynamics, R: Rng>(
    policy: &Policy,
    dynamics: &D,
    s0: State,
    max_steps: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    let mut steps = Vec::new();
    let mut s = s0;
    while !dynamics.is_goal(&s) {
        if steps.len() >= max_steps {
            return Err(Error::PathNotFound { start: s0, max_steps });
        }
        let a = policy.action(&s);
        let next = dynamics.successor(&s, a, rng)?;
        steps.push((s, a));
        s = next;
    }
    Ok(Trajectory::from_steps(steps, s))
}
