//! Causal importance of states on the optimal path.
//!
//! The importance of a featured state `s_f` is the probability that, after a
//! short random detour from `s_f`, the greedy policy leads the agent back
//! through `s_f` before it reaches the goal. States with no alternative
//! route score high. It approximates the average causal effect of being
//! allowed to take the policy's action at `s_f` on reaching the goal.
//!
//! [`importance_mc`] is the Monte Carlo estimator; [`importance_exact`]
//! enumerates every random detour and is the reference it is checked against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::Pos;
use crate::mdp::{state_count, state_index, Action, State, Trajectory};
use crate::par;
use crate::policy::Policy;
use crate::world_model::TransitionModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportanceParams {
    /// Random actions per trial.
    pub r_num: usize,
    /// Number of trials.
    pub s_num: usize,
    /// Greedy steps allowed per trial before it counts as a non-return.
    pub policy_step_cap: usize,
    pub seed: u64,
}

impl ImportanceParams {
    /// Parameters with the step cap set to four times the state count.
    pub fn for_model(model: &TransitionModel, r_num: usize, s_num: usize, seed: u64) -> Self {
        ImportanceParams {
            r_num,
            s_num,
            policy_step_cap: 4 * state_count(model.spec()),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_num == 0 || self.s_num == 0 || self.policy_step_cap == 0 {
            return Err(Error::Validation(format!(
                "r_num, s_num and policy_step_cap must be >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// How the trials of one estimate ended.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialStats {
    pub returned: usize,
    pub reached_goal: usize,
    /// Greedy phase ran out of steps.
    pub capped: usize,
    /// Random phase found no permitted action.
    pub stalled: usize,
}

impl TrialStats {
    pub fn trials(&self) -> usize {
        self.returned + self.reached_goal + self.capped + self.stalled
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stats: TrialStats,
}

/// Actions usable during the random detour: they must change the state and
/// must not be able to land on the goal.
fn detour_actions(model: &TransitionModel, s: &State, goal: Pos) -> Result<Vec<Action>> {
    let mut out = Vec::with_capacity(Action::COUNT);
    for a in Action::ALL {
        let dist = model.distribution(s, a)?;
        let moves = model.most_likely(s, a)? != *s;
        let ends = dist.iter().any(|(n, p)| *p > 0.0 && n.pos() == goal);
        if moves && !ends {
            out.push(a);
        }
    }
    Ok(out)
}

fn check_query(s_f: &State, s_g: &State, p: &ImportanceParams) -> Result<()> {
    p.validate()?;
    if s_f.pos() == s_g.pos() {
        return Err(Error::InvalidQuery(format!(
            "importance is undefined at the goal state {s_f}"
        )));
    }
    Ok(())
}

/// Monte Carlo importance estimate for `s_f`, with per-outcome trial counts.
pub fn importance_mc_detailed(
    model: &TransitionModel,
    policy: &Policy,
    s_f: &State,
    s_g: &State,
    p: &ImportanceParams,
    rng: &mut impl Rng,
) -> Result<Estimate> {
    check_query(s_f, s_g, p)?;
    let goal = s_g.pos();
    let n = state_count(model.spec());
    let mut detours: Vec<Option<Vec<Action>>> = vec![None; n];
    let mut stats = TrialStats::default();

    'trials: for _ in 0..p.s_num {
        let mut s = *s_f;
        for _ in 0..p.r_num {
            let si = state_index(&s, model.spec())?;
            if detours[si].is_none() {
                detours[si] = Some(detour_actions(model, &s, goal)?);
            }
            let allowed = detours[si].as_deref().unwrap_or_default();
            if allowed.is_empty() {
                stats.stalled += 1;
                continue 'trials;
            }
            let a = allowed[rng.random_range(0..allowed.len())];
            s = model.predict(&s, a, rng)?;
        }
        let mut steps = 0;
        while s.pos() != goal {
            if steps == p.policy_step_cap {
                stats.capped += 1;
                continue 'trials;
            }
            s = model.predict(&s, policy.action(&s), rng)?;
            steps += 1;
            if s == *s_f {
                stats.returned += 1;
                continue 'trials;
            }
        }
        stats.reached_goal += 1;
    }
    Ok(Estimate {
        value: stats.returned as f64 / p.s_num as f64,
        stats,
    })
}

/// Monte Carlo importance `I(s_f, pi)` seeded from `p.seed`.
pub fn importance_mc(
    model: &TransitionModel,
    policy: &Policy,
    s_f: &State,
    s_g: &State,
    p: &ImportanceParams,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    importance_mc_detailed(model, policy, s_f, s_g, p, &mut rng).map(|e| e.value)
}

/// Exact return probability by enumerating every detour of `r_num` actions.
///
/// Each detour step picks uniformly among the permitted actions; the greedy
/// continuation is deterministic. Only defined for deterministic models.
pub fn importance_exact(
    model: &TransitionModel,
    policy: &Policy,
    s_f: &State,
    s_g: &State,
    r_num: usize,
    policy_step_cap: usize,
) -> Result<f64> {
    if !model.is_deterministic() {
        return Err(Error::Unsupported(
            "exact importance needs a deterministic model".into(),
        ));
    }
    if s_f.pos() == s_g.pos() {
        return Err(Error::InvalidQuery(format!(
            "importance is undefined at the goal state {s_f}"
        )));
    }
    let goal = s_g.pos();

    let next = |s: &State, a: Action| -> Result<State> {
        let dist = model.distribution(s, a)?;
        Ok(dist[0].0)
    };

    let returns = |start: State| -> Result<bool> {
        let mut s = start;
        for _ in 0..policy_step_cap {
            if s.pos() == goal {
                return Ok(false);
            }
            s = next(&s, policy.action(&s))?;
            if s == *s_f {
                return Ok(true);
            }
        }
        Ok(false)
    };

    fn walk(
        s: State,
        depth: usize,
        goal: Pos,
        next: &dyn Fn(&State, Action) -> Result<State>,
        returns: &dyn Fn(State) -> Result<bool>,
    ) -> Result<f64> {
        if depth == 0 {
            return Ok(if returns(s)? { 1.0 } else { 0.0 });
        }
        let mut branches = Vec::new();
        for a in Action::ALL {
            let n = next(&s, a)?;
            if n != s && n.pos() != goal {
                branches.push(n);
            }
        }
        if branches.is_empty() {
            return Ok(0.0);
        }
        let w = 1.0 / branches.len() as f64;
        let mut total = 0.0;
        for b in branches {
            total += w * walk(b, depth - 1, goal, next, returns)?;
        }
        Ok(total)
    }

    walk(*s_f, r_num, goal, &next, &returns)
}

/// Importance at every state of a goal-reaching path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceProfile {
    pub path: Trajectory,
    /// One value per visited state, terminal included (fixed at 0).
    pub values: Vec<f64>,
    /// Mean of `values`.
    pub epsilon: f64,
    pub stats: Vec<TrialStats>,
}

impl ImportanceProfile {
    /// Builds a profile from precomputed values; the terminal entry is forced to 0.
    pub fn from_values(path: Trajectory, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != path.len() + 1 {
            return Err(Error::Validation(format!(
                "{} importance values for a path with {} states",
                values.len(),
                path.len() + 1
            )));
        }
        if let Some(last) = values.last_mut() {
            *last = 0.0;
        }
        let epsilon = values.iter().sum::<f64>() / values.len() as f64;
        let stats = vec![TrialStats::default(); values.len()];
        Ok(ImportanceProfile {
            path,
            values,
            epsilon,
            stats,
        })
    }
}

/// Per-state stream so results are independent of evaluation order.
fn state_rng(seed: u64, state_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(state_idx as u64);
    rng
}

/// Monte Carlo importance of every state on `path`. States are evaluated in
/// parallel when the `parallel` feature is on; each uses its own stream
/// derived from `(seed, state_index)`.
pub fn importance_profile(
    model: &TransitionModel,
    policy: &Policy,
    path: &Trajectory,
    p: &ImportanceParams,
) -> Result<ImportanceProfile> {
    p.validate()?;
    if !model.is_goal_state(&path.terminal) {
        return Err(Error::InvalidQuery(
            "importance profile needs a path that ends at the goal".into(),
        ));
    }
    let s_g = path.terminal;
    let states: Vec<State> = path.pairs.iter().map(|x| x.state).collect();
    let estimates = par::map_collect(&states, |s_f| {
        let mut rng = state_rng(p.seed, state_index(s_f, model.spec())?);
        importance_mc_detailed(model, policy, s_f, &s_g, p, &mut rng)
    });
    let mut values = Vec::with_capacity(states.len() + 1);
    let mut stats = Vec::with_capacity(states.len() + 1);
    for e in estimates {
        let e = e?;
        values.push(e.value);
        stats.push(e.stats);
    }
    values.push(0.0);
    stats.push(TrialStats::default());
    let epsilon = values.iter().sum::<f64>() / values.len() as f64;
    Ok(ImportanceProfile {
        path: path.clone(),
        values,
        epsilon,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gridworld::{self, parse_map, GridSpec, SMALL_MAP};
    use crate::mdp::Dir;
    use crate::policy::{ExperienceLog, Policy};
    use crate::world_model::{fit, reachable_pairs};

    fn setup() -> (GridSpec, TransitionModel, Policy) {
        let spec = parse_map(SMALL_MAP).unwrap();
        let mut log = ExperienceLog::default();
        for (s, a) in reachable_pairs(&spec) {
            log.push(s, a, gridworld::transition(&spec, &s, a));
        }
        let model = fit(&spec, &log).unwrap();
        // BFS-optimal policy from every state
        let policy = Policy::from_fn(&spec, |s| {
            gridworld::shortest_path(&spec, s)
                .and_then(|p| p.first().copied())
                .unwrap_or(Action::Forward)
        });
        (spec, model, policy)
    }

    fn goal_state(spec: &GridSpec) -> State {
        State::new(spec.goal_pos.0, spec.goal_pos.1, Dir::East, true, true)
    }

    #[test]
    fn goal_query_is_invalid() {
        let (spec, model, policy) = setup();
        let g = goal_state(&spec);
        let p = ImportanceParams::for_model(&model, 3, 10, 0);
        assert!(matches!(
            importance_mc(&model, &policy, &g, &g, &p),
            Err(Error::InvalidQuery(_))
        ));
        assert!(matches!(
            importance_exact(&model, &policy, &g, &g, 3, 100),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn zero_random_actions_never_return() {
        let (spec, model, policy) = setup();
        let g = goal_state(&spec);
        let path = crate::policy::optimal_path(&policy, &spec, spec.start_state(), 100, &mut rand::rng()).unwrap();
        for s in path.states().iter().take(path.len()) {
            assert_eq!(importance_exact(&model, &policy, s, &g, 0, 1000).unwrap(), 0.0);
        }
    }

    #[test]
    fn single_step_enumeration_is_fraction_of_returning_branches() {
        let (spec, model, policy) = setup();
        let g = goal_state(&spec);
        let path = crate::policy::optimal_path(&policy, &spec, spec.start_state(), 100, &mut rand::rng()).unwrap();
        for s_f in path.states().iter().take(path.len()) {
            // hand enumeration straight off the environment
            let branches: Vec<State> = Action::ALL
                .into_iter()
                .map(|a| gridworld::transition(&spec, s_f, a))
                .filter(|n| n != s_f && n.pos() != spec.goal_pos)
                .collect();
            let returning = branches
                .iter()
                .filter(|b| {
                    let mut s = **b;
                    for _ in 0..1000 {
                        if s.pos() == spec.goal_pos {
                            return false;
                        }
                        s = gridworld::transition(&spec, &s, policy.action(&s));
                        if s == *s_f {
                            return true;
                        }
                    }
                    false
                })
                .count();
            let expected = returning as f64 / branches.len() as f64;
            let got = importance_exact(&model, &policy, s_f, &g, 1, 1000).unwrap();
            assert!((got - expected).abs() < 1e-12, "{s_f}: {got} vs {expected}");
        }
    }

    #[test]
    fn stochastic_model_unsupported_for_exact() {
        let (spec, _, policy) = setup();
        let s = spec.start_state();
        let mut log = ExperienceLog::default();
        log.push(s, Action::TurnLeft, gridworld::transition(&spec, &s, Action::TurnLeft));
        log.push(s, Action::TurnLeft, gridworld::transition(&spec, &s, Action::TurnRight));
        let m = fit(&spec, &log).unwrap();
        let g = goal_state(&spec);
        assert!(matches!(
            importance_exact(&m, &policy, &s, &g, 1, 10),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn capped_trials_count_as_non_return() {
        let (spec, model, _) = setup();
        let spin = Policy::from_fn(&spec, |_| Action::TurnLeft);
        let g = goal_state(&spec);
        let s_f = State::new(1, 1, Dir::East, false, false);
        let p = ImportanceParams {
            r_num: 3,
            s_num: 50,
            policy_step_cap: 7,
            seed: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = importance_mc_detailed(&model, &spin, &s_f, &g, &p, &mut rng).unwrap();
        assert_eq!(e.stats.trials(), 50);
        assert_eq!(e.stats.returned + e.stats.capped, 50);
        assert!(e.stats.capped > 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let (spec, model, policy) = setup();
        let p = ImportanceParams {
            r_num: 0,
            s_num: 10,
            policy_step_cap: 10,
            seed: 0,
        };
        assert!(matches!(
            importance_mc(&model, &policy, &spec.start_state(), &goal_state(&spec), &p),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn profile_from_values_forces_terminal_zero() {
        let t = Trajectory::from_steps(
            vec![
                (State::new(0, 0, Dir::East, false, false), Action::Forward),
                (State::new(1, 0, Dir::East, false, false), Action::Forward),
            ],
            State::new(2, 0, Dir::East, false, false),
        );
        let p = ImportanceProfile::from_values(t.clone(), vec![0.6, 0.3, 0.9]).unwrap();
        assert_eq!(p.values, vec![0.6, 0.3, 0.0]);
        assert!((p.epsilon - 0.3).abs() < 1e-12);
        assert!(ImportanceProfile::from_values(t, vec![0.1]).is_err());
    }
}
