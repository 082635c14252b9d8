//! Subgoal usefulness experiments.
//!
//! A fresh Q-learner receives a decaying sub-reward when it executes a
//! subgoal pair. The number of episodes it needs before its greedy policy
//! follows a shortest path measures how informative the subgoal set is.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::explain::SubgoalSet;
use crate::gridworld::{self, GridSpec};
use crate::mdp::{StateActionPair, Trajectory};
use crate::par;
use crate::policy::{EpsilonSchedule, HyperParams, QLearner, SubRewards};
use crate::stats::{self, t_test_unpaired, TTest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    pub subgoal_pairs: Vec<StateActionPair>,
    pub sub_reward_max: f64,
    pub one_shot_per_episode: bool,
}

impl ShapingConfig {
    pub fn new(subgoal_pairs: Vec<StateActionPair>) -> Self {
        ShapingConfig {
            subgoal_pairs,
            sub_reward_max: 0.5,
            one_shot_per_episode: true,
        }
    }

    pub fn none() -> Self {
        ShapingConfig::new(Vec::new())
    }

    /// Rejects sub-rewards outside `[0, 1)` and pairs that step onto the goal.
    pub fn validate(&self, spec: &GridSpec) -> Result<()> {
        if !(0.0..1.0).contains(&self.sub_reward_max) {
            return Err(Error::Validation(format!(
                "sub_reward_max {} outside [0, 1)",
                self.sub_reward_max
            )));
        }
        if let Some(p) = self
            .subgoal_pairs
            .iter()
            .find(|p| spec.is_goal(&gridworld::transition(spec, &p.state, p.action)))
        {
            return Err(Error::Validation(format!(
                "subgoal {p} reaches the original goal"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub learner: HyperParams,
    /// Episodes allowed before a run is recorded as censored.
    pub episode_budget: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            learner: HyperParams {
                episodes: 20_000,
                alpha: 0.5,
                gamma: 0.95,
                epsilon: EpsilonSchedule {
                    start: 1.0,
                    end: 0.1,
                    decay_episodes: 500,
                },
            },
            episode_budget: 20_000,
        }
    }
}

/// Trains a fresh shaped learner and returns the first (1-based) episode
/// after which the greedy rollout from the start reaches the goal in
/// exactly the BFS-optimal number of steps.
pub fn episodes_to_optimal(
    spec: &GridSpec,
    shaping: &ShapingConfig,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<usize> {
    cfg.learner.validate()?;
    shaping.validate(spec)?;
    let optimal = gridworld::shortest_path(spec, &spec.start_state())
        .ok_or(Error::PathNotFound {
            start: spec.start_state(),
            max_steps: spec.max_steps,
        })?
        .len();
    let sub = SubRewards::new(spec, &shaping.subgoal_pairs, shaping.sub_reward_max)
        .one_shot(shaping.one_shot_per_episode);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut learner = QLearner::new(spec, cfg.learner);
    for ep in 0..cfg.episode_budget {
        learner.run_episode(ep, &mut rng, Some(&sub), None);
        if learner.greedy_length() == Some(optimal) {
            return Ok(ep + 1);
        }
    }
    Err(Error::BudgetExceeded {
        budget: cfg.episode_budget,
        seed,
    })
}

/// Episodes-to-optimal for one condition across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub subgoal_steps: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Censored runs hold the episode budget.
    pub episodes_to_optimal: Vec<usize>,
    pub censored: Vec<bool>,
    pub mean: f64,
    pub variance: f64,
}

impl ExperimentResult {
    pub fn samples(&self) -> Vec<f64> {
        self.episodes_to_optimal.iter().map(|&e| e as f64).collect()
    }
}

/// A labelled subgoal set to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub label: String,
    pub pairs: Vec<StateActionPair>,
}

/// Runs every condition for every seed; runs execute in parallel.
pub fn run_conditions(
    spec: &GridSpec,
    conditions: &[Condition],
    seeds: &[u64],
    cfg: &EvalConfig,
    sub_reward_max: f64,
) -> Result<Vec<ExperimentResult>> {
    let jobs: Vec<(usize, u64)> = (0..conditions.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let outcomes = par::map_collect(&jobs, |&(c, seed)| {
        let shaping = ShapingConfig {
            sub_reward_max,
            ..ShapingConfig::new(conditions[c].pairs.clone())
        };
        match episodes_to_optimal(spec, &shaping, cfg, seed) {
            Ok(n) => Ok((n, false)),
            Err(Error::BudgetExceeded { budget, .. }) => Ok((budget, true)),
            Err(e) => Err(e),
        }
    });
    let mut results = Vec::with_capacity(conditions.len());
    let mut it = outcomes.into_iter();
    for cond in conditions {
        let mut eps = Vec::with_capacity(seeds.len());
        let mut censored = Vec::with_capacity(seeds.len());
        for _ in seeds {
            let (n, c) = it.next().expect("one outcome per job")?;
            eps.push(n);
            censored.push(c);
        }
        let xs: Vec<f64> = eps.iter().map(|&e| e as f64).collect();
        results.push(ExperimentResult {
            label: cond.label.clone(),
            subgoal_steps: cond.pairs.iter().filter_map(|p| p.step).collect(),
            seeds: seeds.to_vec(),
            mean: stats::mean(&xs),
            variance: if xs.len() > 1 { stats::variance(&xs) } else { 0.0 },
            episodes_to_optimal: eps,
            censored,
        });
    }
    Ok(results)
}

/// Derived subgoals minus the one that steps onto the goal.
pub fn non_goal_subgoals(spec: &GridSpec, derived: &SubgoalSet) -> Vec<StateActionPair> {
    derived
        .subgoals
        .iter()
        .filter(|p| !spec.is_goal(&gridworld::transition(spec, &p.state, p.action)))
        .copied()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UsefulnessConfig {
    pub n_runs: usize,
    /// Random subgoal sets drawn per overlap stratum.
    pub random_sets: usize,
    /// Seed for drawing the random subgoal sets.
    pub sample_seed: u64,
}

impl Default for UsefulnessConfig {
    fn default() -> Self {
        UsefulnessConfig {
            n_runs: 10,
            random_sets: 3,
            sample_seed: 0,
        }
    }
}

const DISTINCT_DRAW_ATTEMPTS: usize = 10_000;

/// Label of the derived subgoal set.
pub const DERIVED: &str = "derived";
/// Label prefix of random sets sharing no pair with the derived set.
pub const RANDOM_BOTH: &str = "random_both";
/// Label prefix of random sets sharing exactly one pair with the derived set.
pub const RANDOM_ONE: &str = "random_one";

/// The derived set plus random sets from the optimal path: some sharing no
/// pair with the derived set, some sharing exactly one.
pub fn usefulness_conditions(
    spec: &GridSpec,
    derived: &SubgoalSet,
    cfg: &UsefulnessConfig,
) -> Result<Vec<Condition>> {
    let chosen = non_goal_subgoals(spec, derived);
    if chosen.len() < 2 {
        return Err(Error::Validation(format!(
            "usefulness experiment needs at least two non-goal subgoals, got {}",
            chosen.len()
        )));
    }
    let path = &derived.source_path;
    let derived_steps: Vec<usize> = chosen.iter().filter_map(|p| p.step).collect();
    // the final action enters the goal and is never a sub-reward candidate
    let pool: Vec<StateActionPair> = path.pairs[..path.len().saturating_sub(1)]
        .iter()
        .filter(|p| !derived_steps.contains(&p.step.unwrap_or(usize::MAX)))
        .copied()
        .collect();
    let k = chosen.len();
    if pool.len() < k {
        return Err(Error::Validation("optimal path too short for random subgoals".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.sample_seed);
    let mut seen: Vec<Vec<StateActionPair>> = vec![chosen.clone()];
    // draws until the set differs from every earlier one
    let mut draw = |rng: &mut ChaCha8Rng, shared: bool| -> Result<Vec<StateActionPair>> {
        for _ in 0..DISTINCT_DRAW_ATTEMPTS {
            let fresh = if shared { k - 1 } else { k };
            let mut pick: Vec<StateActionPair> = pool.choose_multiple(rng, fresh).copied().collect();
            if shared {
                pick.push(chosen[rng.random_range(0..k)]);
            }
            pick.sort_by_key(|p| p.step);
            if !seen.contains(&pick) {
                seen.push(pick.clone());
                return Ok(pick);
            }
        }
        Err(Error::Validation(
            "optimal path too short for distinct random subgoal sets".into(),
        ))
    };

    let mut conds = vec![Condition {
        label: DERIVED.into(),
        pairs: chosen.clone(),
    }];
    for i in 0..cfg.random_sets {
        conds.push(Condition {
            label: format!("{RANDOM_BOTH}_{i}"),
            pairs: draw(&mut rng, false)?,
        });
    }
    for i in 0..cfg.random_sets {
        conds.push(Condition {
            label: format!("{RANDOM_ONE}_{i}"),
            pairs: draw(&mut rng, true)?,
        });
    }
    Ok(conds)
}

/// Derived subgoals against random subgoal sets of the same size.
pub fn run_usefulness_experiment(
    spec: &GridSpec,
    derived: &SubgoalSet,
    seeds: &[u64],
    ucfg: &UsefulnessConfig,
    cfg: &EvalConfig,
) -> Result<Vec<ExperimentResult>> {
    let conds = usefulness_conditions(spec, derived, ucfg)?;
    let seeds = &seeds[..ucfg.n_runs.min(seeds.len())];
    run_conditions(spec, &conds, seeds, cfg, 0.5)
}

/// Discounted return from `path` state `from` when the pair at step `to`
/// is executed next along the path, paying `scale * reward_fn`.
fn along_path_value(from: usize, to: usize, scale: f64, gamma: f64, max_steps: usize) -> f64 {
    let delay = to - from;
    scale * gridworld::reward_fn((to + 1).min(max_steps), max_steps) * gamma.powi(delay as i32)
}

/// Whether adding the pair at `step` keeps the next anchor more rewarding
/// than looping back to the added pair.
fn loop_back_is_worse(
    spec: &GridSpec,
    path: &Trajectory,
    step: usize,
    next_anchor: usize,
    gamma: f64,
) -> bool {
    let goal_step = path.len() - 1;
    let Some(after) = path.state_at(step + 1) else {
        return false;
    };
    let scale_next = if next_anchor == goal_step { 1.0 } else { 0.5 };
    let forward = along_path_value(step + 1, next_anchor, scale_next, gamma, spec.max_steps);
    let back = match gridworld::distance_between(spec, &after, &path.pairs[step].state) {
        Some(d) => along_path_value(step + 1, step + 1 + d, 0.5, gamma, spec.max_steps),
        None => 0.0,
    };
    forward > back
}

/// Picks the next additional subgoal: inside the largest gap between
/// consecutive anchors (start, current subgoals, goal-entering step), the
/// step closest to the midpoint whose loop-back reward stays below the
/// reward of the next anchor.
pub fn next_additional_subgoal(
    spec: &GridSpec,
    path: &Trajectory,
    current: &[StateActionPair],
    gamma: f64,
) -> Result<StateActionPair> {
    if path.len() < 2 {
        return Err(Error::InsufficientPath(path.len()));
    }
    let goal_step = path.len() - 1;
    let mut anchors: Vec<usize> = std::iter::once(0)
        .chain(current.iter().filter_map(|p| p.step))
        .chain(std::iter::once(goal_step))
        .collect();
    anchors.sort_unstable();
    anchors.dedup();
    let (lo, hi) = anchors
        .windows(2)
        .map(|w| (w[0], w[1]))
        .max_by_key(|&(a, b)| (b - a, std::cmp::Reverse(a)))
        .ok_or(Error::NoValidAddition)?;
    if hi - lo < 2 {
        return Err(Error::NoValidAddition);
    }
    let mid2 = lo + hi; // twice the midpoint, avoids rounding
    let mut candidates: Vec<usize> = (lo + 1..hi).collect();
    candidates.sort_by_key(|&t| ((2 * t).abs_diff(mid2), t));
    candidates
        .into_iter()
        .find(|&t| loop_back_is_worse(spec, path, t, hi, gamma))
        .map(|t| {
            let p = path.pairs[t];
            StateActionPair::at(p.state, p.action, t)
        })
        .ok_or(Error::NoValidAddition)
}

/// Subgoal sets of size `0..=k_max`: prefixes of the derived set, then the
/// derived set with successive additional subgoals.
pub fn count_conditions(
    spec: &GridSpec,
    derived: &SubgoalSet,
    k_max: usize,
    gamma: f64,
) -> Result<Vec<Condition>> {
    let chosen = non_goal_subgoals(spec, derived);
    if chosen.is_empty() {
        return Err(Error::Validation("count experiment needs a non-goal subgoal".into()));
    }
    let mut conds = Vec::with_capacity(k_max + 1);
    let mut current = Vec::new();
    for k in 0..=k_max {
        if k > 0 {
            if k <= chosen.len() {
                current = chosen[..k].to_vec();
            } else {
                let add = next_additional_subgoal(spec, &derived.source_path, &current, gamma)?;
                current.push(add);
                current.sort_by_key(|p| p.step);
            }
        }
        conds.push(Condition {
            label: format!("k{k}"),
            pairs: current.clone(),
        });
    }
    Ok(conds)
}

/// Episodes-to-optimal against the number of subgoals.
pub fn run_count_experiment(
    spec: &GridSpec,
    derived: &SubgoalSet,
    k_max: usize,
    seeds: &[u64],
    cfg: &EvalConfig,
) -> Result<Vec<ExperimentResult>> {
    let conds = count_conditions(spec, derived, k_max, cfg.learner.gamma)?;
    run_conditions(spec, &conds, seeds, cfg, 0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub mean_a: f64,
    pub mean_b: f64,
    pub test: TTest,
}

pub fn compare(a: &ExperimentResult, b: &ExperimentResult) -> Result<Comparison> {
    Ok(Comparison {
        a: a.label.clone(),
        b: b.label.clone(),
        mean_a: a.mean,
        mean_b: b.mean,
        test: t_test_unpaired(&a.samples(), &b.samples())?,
    })
}

/// The derived condition against each random stratum, pooling the runs of
/// every random set in the stratum.
pub fn compare_strata(results: &[ExperimentResult]) -> Result<Vec<Comparison>> {
    let derived = results
        .iter()
        .find(|r| r.label == DERIVED)
        .ok_or_else(|| Error::Validation("no derived condition among the results".into()))?;
    [RANDOM_BOTH, RANDOM_ONE]
        .into_iter()
        .map(|stratum| {
            let pooled = pooled_samples(results, stratum);
            Ok(Comparison {
                a: derived.label.clone(),
                b: stratum.to_string(),
                mean_a: derived.mean,
                mean_b: stats::mean(&pooled),
                test: t_test_unpaired(&derived.samples(), &pooled)?,
            })
        })
        .collect()
}

/// The first result against every other.
pub fn compare_against_first(results: &[ExperimentResult]) -> Result<Vec<Comparison>> {
    let Some((first, rest)) = results.split_first() else {
        return Ok(Vec::new());
    };
    rest.iter().map(|r| compare(first, r)).collect()
}

/// Each result against the next one.
pub fn compare_consecutive(results: &[ExperimentResult]) -> Result<Vec<Comparison>> {
    results.windows(2).map(|w| compare(&w[0], &w[1])).collect()
}

/// Samples of every result whose label is `prefix` or `prefix_<n>`, in order.
pub fn pooled_samples(results: &[ExperimentResult], prefix: &str) -> Vec<f64> {
    results
        .iter()
        .filter(|r| {
            r.label == prefix
                || r.label
                    .strip_prefix(prefix)
                    .and_then(|rest| rest.strip_prefix('_'))
                    .is_some_and(|n| n.parse::<usize>().is_ok())
        })
        .flat_map(|r| r.samples())
        .collect()
}

/// Committed seeds for the experiments.
pub fn committed_seeds(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}
