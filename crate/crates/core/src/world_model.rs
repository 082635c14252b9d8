//! Learned tabular transition model `P(s' | s, a)`.
//!
//! Fitted from the experience gathered while the policy is trained, then used
//! in place of the environment for every counterfactual rollout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{self, GridSpec};
use crate::mdp::{index_state, state_count, state_index, Action, State, Trajectory};
use crate::policy::{self, Dynamics, ExperienceLog, HyperParams, Policy, QTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ModelDef", into = "ModelDef")]
pub struct TransitionModel {
    spec: GridSpec,
    /// Indexed by `state_index * 5 + action`; successor index and count, sorted by successor.
    table: Vec<Vec<(usize, u64)>>,
}

#[derive(Serialize, Deserialize)]
struct ModelDef {
    spec: GridSpec,
    entries: Vec<ModelEntry>,
}

#[derive(Serialize, Deserialize)]
struct ModelEntry {
    state: usize,
    action: Action,
    successors: Vec<(usize, u64)>,
}

impl From<ModelDef> for TransitionModel {
    fn from(d: ModelDef) -> Self {
        let mut table = vec![Vec::new(); state_count(&d.spec) * Action::COUNT];
        for e in d.entries {
            if let Some(slot) = table.get_mut(e.state * Action::COUNT + e.action.index()) {
                *slot = e.successors;
            }
        }
        TransitionModel { spec: d.spec, table }
    }
}

impl From<TransitionModel> for ModelDef {
    fn from(m: TransitionModel) -> Self {
        let entries = m
            .table
            .into_iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, successors)| ModelEntry {
                state: k / Action::COUNT,
                action: Action::ALL[k % Action::COUNT],
                successors,
            })
            .collect();
        ModelDef {
            spec: m.spec,
            entries,
        }
    }
}

/// Maximum-likelihood count model over the transitions in `log`.
pub fn fit(spec: &GridSpec, log: &ExperienceLog) -> Result<TransitionModel> {
    if log.is_empty() {
        return Err(Error::EmptyExperience);
    }
    let mut table: Vec<Vec<(usize, u64)>> = vec![Vec::new(); state_count(spec) * Action::COUNT];
    for t in &log.transitions {
        let si = state_index(&t.state, spec)?;
        let ni = state_index(&t.next, spec)?;
        let slot = &mut table[si * Action::COUNT + t.action.index()];
        match slot.binary_search_by_key(&ni, |e| e.0) {
            Ok(i) => slot[i].1 += 1,
            Err(i) => slot.insert(i, (ni, 1)),
        }
    }
    Ok(TransitionModel {
        spec: spec.clone(),
        table,
    })
}

impl TransitionModel {
    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn is_goal_state(&self, s: &State) -> bool {
        self.spec.is_goal(s)
    }

    fn entry(&self, s: &State, a: Action) -> Result<&[(usize, u64)]> {
        let si = state_index(s, &self.spec)?;
        let e = &self.table[si * Action::COUNT + a.index()];
        if e.is_empty() {
            Err(Error::UnmodeledTransition {
                state: *s,
                action: a,
            })
        } else {
            Ok(e)
        }
    }

    pub fn covers(&self, s: &State, a: Action) -> bool {
        self.entry(s, a).is_ok()
    }

    /// True when some action from `s` has been observed.
    pub fn knows_state(&self, s: &State) -> bool {
        Action::ALL.into_iter().any(|a| self.covers(s, a))
    }

    /// Observed `(s, a)` pairs.
    pub fn coverage(&self) -> Vec<(State, Action)> {
        self.table
            .iter()
            .enumerate()
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, _)| {
                let s = index_state(k / Action::COUNT, &self.spec).expect("index in range");
                (s, Action::ALL[k % Action::COUNT])
            })
            .collect()
    }

    pub fn coverage_len(&self) -> usize {
        self.table.iter().filter(|v| !v.is_empty()).count()
    }

    /// Every observed pair has exactly one successor.
    pub fn is_deterministic(&self) -> bool {
        self.table.iter().all(|v| v.len() <= 1)
    }

    /// `P(. | s, a)` as (successor, probability), sorted by successor index.
    pub fn distribution(&self, s: &State, a: Action) -> Result<Vec<(State, f64)>> {
        let e = self.entry(s, a)?;
        let total: u64 = e.iter().map(|x| x.1).sum();
        Ok(e.iter()
            .map(|&(ni, c)| {
                (
                    index_state(ni, &self.spec).expect("index in range"),
                    c as f64 / total as f64,
                )
            })
            .collect())
    }

    /// Most frequently observed successor; lowest index on ties.
    pub fn most_likely(&self, s: &State, a: Action) -> Result<State> {
        let e = self.entry(s, a)?;
        let mut best = e[0];
        for &x in &e[1..] {
            if x.1 > best.1 {
                best = x;
            }
        }
        Ok(index_state(best.0, &self.spec).expect("index in range"))
    }

    /// Samples a successor. Single-outcome entries consume no randomness.
    pub fn predict<R: Rng + ?Sized>(&self, s: &State, a: Action, rng: &mut R) -> Result<State> {
        let e = self.entry(s, a)?;
        let ni = if e.len() == 1 {
            e[0].0
        } else {
            let total: u64 = e.iter().map(|x| x.1).sum();
            let mut draw = rng.random_range(0..total);
            let mut pick = e[e.len() - 1].0;
            for &(ni, c) in e {
                if draw < c {
                    pick = ni;
                    break;
                }
                draw -= c;
            }
            pick
        };
        Ok(index_state(ni, &self.spec).expect("index in range"))
    }
}

impl Dynamics for TransitionModel {
    fn successor<R: Rng + ?Sized>(&self, s: &State, a: Action, rng: &mut R) -> Result<State> {
        self.predict(s, a, rng)
    }

    fn is_goal(&self, s: &State) -> bool {
        self.spec.is_goal(s)
    }
}

/// Where actions come from during a rollout.
#[derive(Debug, Clone, Copy)]
pub enum ActionSource<'a> {
    Policy(&'a Policy),
    Actions(&'a [Action]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutEnd {
    Goal,
    StepLimit,
    ActionsExhausted,
    /// The next transition was never observed; the trajectory stops before it.
    Unmodeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub end: RolloutEnd,
}

impl Rollout {
    pub fn truncated(&self) -> bool {
        self.end == RolloutEnd::Unmodeled
    }
}

/// Simulates on the model alone until the goal, `max_steps`, the end of the
/// action list, or the first unmodeled transition.
pub fn rollout<R: Rng + ?Sized>(
    model: &TransitionModel,
    source: ActionSource<'_>,
    s0: State,
    max_steps: usize,
    rng: &mut R,
) -> Rollout {
    let mut steps = Vec::new();
    let mut s = s0;
    let end = loop {
        if model.is_goal(&s) {
            break RolloutEnd::Goal;
        }
        if steps.len() >= max_steps {
            break RolloutEnd::StepLimit;
        }
        let a = match source {
            ActionSource::Policy(p) => p.action(&s),
            ActionSource::Actions(list) => match list.get(steps.len()) {
                Some(a) => *a,
                None => break RolloutEnd::ActionsExhausted,
            },
        };
        match model.predict(&s, a, rng) {
            Ok(next) => {
                steps.push((s, a));
                s = next;
            }
            Err(_) => break RolloutEnd::Unmodeled,
        }
    };
    Rollout {
        trajectory: Trajectory::from_steps(steps, s),
        end,
    }
}

/// Every `(s, a)` with `s` reachable from the start and not a goal state.
pub fn reachable_pairs(spec: &GridSpec) -> Vec<(State, Action)> {
    gridworld::reachable_states(spec, &spec.start_state())
        .into_iter()
        .filter(|s| !spec.is_goal(s))
        .flat_map(|s| Action::ALL.into_iter().map(move |a| (s, a)))
        .collect()
}

/// Appends uniformly random episodes from the start until every reachable
/// pair has been observed or `max_episodes` is spent. Returns episodes added.
pub fn top_up_coverage<R: Rng>(
    spec: &GridSpec,
    log: &mut ExperienceLog,
    rng: &mut R,
    max_episodes: usize,
) -> usize {
    let key = |s: &State, a: Action| state_index(s, spec).expect("in bounds") * Action::COUNT + a.index();
    let mut needed = vec![false; state_count(spec) * Action::COUNT];
    let mut missing = 0usize;
    for (s, a) in reachable_pairs(spec) {
        needed[key(&s, a)] = true;
        missing += 1;
    }
    let mut mark = |s: &State, a: Action, missing: &mut usize| {
        let k = key(s, a);
        if needed[k] {
            needed[k] = false;
            *missing -= 1;
        }
    };
    for t in &log.transitions {
        mark(&t.state, t.action, &mut missing);
    }
    let mut added = 0;
    while missing > 0 && added < max_episodes {
        let mut s = spec.start_state();
        for _ in 0..spec.max_steps {
            let a = Action::ALL[rng.random_range(0..Action::COUNT)];
            let next = gridworld::transition(spec, &s, a);
            log.push(s, a, next);
            mark(&s, a, &mut missing);
            if spec.is_goal(&next) {
                break;
            }
            s = next;
        }
        added += 1;
    }
    added
}

/// Episode cap for [`top_up_coverage`] used by [`learn`].
pub const TOP_UP_EPISODE_CAP: usize = 200_000;

/// Everything produced by the learning phase.
#[derive(Debug, Clone)]
pub struct Learned {
    pub qtable: QTable,
    pub policy: Policy,
    pub model: TransitionModel,
    pub log_len: usize,
    pub top_up_episodes: usize,
}

/// Trains the policy, tops up exploration and fits the world model.
pub fn learn(spec: &GridSpec, hp: &HyperParams, seed: u64) -> Result<Learned> {
    let (qtable, mut log) = policy::train_q_learning(spec, hp, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let top_up_episodes = top_up_coverage(spec, &mut log, &mut rng, TOP_UP_EPISODE_CAP);
    let model = fit(spec, &log)?;
    let policy = qtable.greedy_policy(spec);
    Ok(Learned {
        qtable,
        policy,
        model,
        log_len: log.len(),
        top_up_episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{parse_map, SMALL_MAP};
    use crate::mdp::Dir;

    fn small() -> GridSpec {
        parse_map(SMALL_MAP).unwrap()
    }

    fn full_log(spec: &GridSpec) -> ExperienceLog {
        let mut log = ExperienceLog::default();
        for (s, a) in reachable_pairs(spec) {
            log.push(s, a, gridworld::transition(spec, &s, a));
        }
        log
    }

    #[test]
    fn single_observation_is_certain() {
        let spec = small();
        let s = spec.start_state();
        let next = gridworld::transition(&spec, &s, Action::TurnRight);
        let mut log = ExperienceLog::default();
        log.push(s, Action::TurnRight, next);
        let m = fit(&spec, &log).unwrap();
        assert_eq!(m.distribution(&s, Action::TurnRight).unwrap(), vec![(next, 1.0)]);
        assert_eq!(m.coverage(), vec![(s, Action::TurnRight)]);
    }

    #[test]
    fn empty_log_is_rejected() {
        assert_eq!(fit(&small(), &ExperienceLog::default()), Err(Error::EmptyExperience));
    }

    #[test]
    fn full_coverage_agrees_with_environment() {
        let spec = small();
        let m = fit(&spec, &full_log(&spec)).unwrap();
        assert!(m.is_deterministic());
        for (s, a) in reachable_pairs(&spec) {
            assert_eq!(m.most_likely(&s, a).unwrap(), gridworld::transition(&spec, &s, a));
            let total: f64 = m.distribution(&s, a).unwrap().iter().map(|x| x.1).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uncovered_pair_is_unmodeled() {
        let spec = small();
        let s = spec.start_state();
        let mut log = ExperienceLog::default();
        log.push(s, Action::TurnLeft, gridworld::transition(&spec, &s, Action::TurnLeft));
        let m = fit(&spec, &log).unwrap();
        let err = m.predict(&s, Action::Forward, &mut rand::rng()).unwrap_err();
        assert_eq!(
            err,
            Error::UnmodeledTransition {
                state: s,
                action: Action::Forward
            }
        );
    }

    #[test]
    fn sampling_frequency_matches_counts() {
        let spec = small();
        let s = State::new(1, 1, Dir::East, false, false);
        let a = State::new(1, 1, Dir::North, false, false);
        let b = State::new(1, 1, Dir::South, false, false);
        let mut log = ExperienceLog::default();
        for _ in 0..3 {
            log.push(s, Action::TurnLeft, a);
            log.push(s, Action::TurnLeft, b);
        }
        let m = fit(&spec, &log).unwrap();
        assert!(!m.is_deterministic());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let hits = (0..10_000)
            .filter(|_| m.predict(&s, Action::TurnLeft, &mut rng).unwrap() == a)
            .count();
        let freq = hits as f64 / 10_000.0;
        // binomial sd at n=10k is 0.005; 0.02 is four sigma
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
    }

    #[test]
    fn empty_action_list_rollout() {
        let spec = small();
        let m = fit(&spec, &full_log(&spec)).unwrap();
        let r = rollout(&m, ActionSource::Actions(&[]), spec.start_state(), 100, &mut rand::rng());
        assert!(r.trajectory.is_empty());
        assert_eq!(r.trajectory.terminal, spec.start_state());
        assert_eq!(r.end, RolloutEnd::ActionsExhausted);
    }

    #[test]
    fn rollout_into_unknown_region_truncates() {
        let spec = small();
        let s = spec.start_state();
        let mut log = ExperienceLog::default();
        let turned = gridworld::transition(&spec, &s, Action::TurnRight);
        log.push(s, Action::TurnRight, turned);
        let m = fit(&spec, &log).unwrap();
        let acts = [Action::TurnRight, Action::Forward, Action::Forward];
        let r = rollout(&m, ActionSource::Actions(&acts), s, 100, &mut rand::rng());
        assert!(r.truncated());
        assert_eq!(r.trajectory.len(), 1);
        assert_eq!(r.trajectory.terminal, turned);
    }

    #[test]
    fn top_up_reaches_full_coverage() {
        let spec = small();
        let mut log = ExperienceLog::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        top_up_coverage(&spec, &mut log, &mut rng, TOP_UP_EPISODE_CAP);
        let m = fit(&spec, &log).unwrap();
        assert!(reachable_pairs(&spec).iter().all(|(s, a)| m.covers(s, *a)));
    }

    #[test]
    fn serde_round_trip_preserves_model() {
        let spec = small();
        let m = fit(&spec, &full_log(&spec)).unwrap();
        let json = serde_json::to_string(&m).unwrap();
        let back: TransitionModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn model_rollout_equals_environment(actions in prop::collection::vec(0usize..5, 0..60)) {
                let spec = small();
                let m = fit(&spec, &full_log(&spec)).unwrap();
                let acts: Vec<Action> = actions.into_iter().map(|i| Action::ALL[i]).collect();
                let r = rollout(&m, ActionSource::Actions(&acts), spec.start_state(), spec.max_steps, &mut rand::rng());
                prop_assert!(!r.truncated());
                let mut s = spec.start_state();
                for (t, p) in r.trajectory.pairs.iter().enumerate() {
                    prop_assert_eq!(p.state, s);
                    prop_assert_eq!(p.action, acts[t]);
                    s = gridworld::transition(&spec, &s, acts[t]);
                }
                prop_assert_eq!(r.trajectory.terminal, s);
            }

            #[test]
            fn fit_ignores_log_order(seed in any::<u64>()) {
                use rand::seq::SliceRandom;
                let spec = small();
                let mut log = full_log(&spec);
                let reference = fit(&spec, &log).unwrap();
                log.transitions.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
                prop_assert_eq!(fit(&spec, &log).unwrap(), reference);
            }
        }
    }
}
