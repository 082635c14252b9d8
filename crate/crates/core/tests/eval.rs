use std::collections::BTreeSet;
use std::sync::OnceLock;

use subgoal_core::eval::{
    committed_seeds, count_conditions, episodes_to_optimal, non_goal_subgoals, pooled_samples,
    run_count_experiment, run_usefulness_experiment, usefulness_conditions, EvalConfig, ShapingConfig,
    UsefulnessConfig, RANDOM_BOTH, RANDOM_ONE,
};
use subgoal_core::gridworld::{parse_map, CANONICAL_MAP};
use subgoal_core::pipeline::{analyze, Analysis, AnalysisConfig};

fn canonical() -> &'static Analysis {
    static A: OnceLock<Analysis> = OnceLock::new();
    A.get_or_init(|| analyze(&parse_map(CANONICAL_MAP).unwrap(), &AnalysisConfig::default()).unwrap())
}

fn steps(pairs: &[subgoal_core::mdp::StateActionPair]) -> BTreeSet<usize> {
    pairs.iter().filter_map(|p| p.step).collect()
}

#[test]
fn derived_shaping_beats_no_shaping_on_most_seeds() {
    let a = canonical();
    let spec = a.spec();
    let cfg = EvalConfig::default();
    let shaped = ShapingConfig::new(non_goal_subgoals(spec, &a.subgoals));
    let wins = committed_seeds(10)
        .into_iter()
        .filter(|&seed| {
            let s = episodes_to_optimal(spec, &shaped, &cfg, seed).unwrap_or(cfg.episode_budget);
            let u = episodes_to_optimal(spec, &ShapingConfig::none(), &cfg, seed).unwrap_or(cfg.episode_budget);
            s <= u
        })
        .count();
    assert!(wins > 5, "shaped won on {wins} of 10 seeds");
}

#[test]
fn usefulness_strata_have_the_promised_overlap() {
    let a = canonical();
    let spec = a.spec();
    let ucfg = UsefulnessConfig::default();
    let conds = usefulness_conditions(spec, &a.subgoals, &ucfg).unwrap();
    let derived = steps(&conds[0].pairs);
    assert_eq!(conds.len(), 1 + 2 * ucfg.random_sets);
    let mut seen = BTreeSet::new();
    for c in &conds {
        let s = steps(&c.pairs);
        assert_eq!(s.len(), derived.len(), "{}", c.label);
        assert!(seen.insert(s.clone()), "duplicate set {}", c.label);
        let shared = s.intersection(&derived).count();
        if c.label.starts_with(RANDOM_BOTH) {
            assert_eq!(shared, 0);
        } else if c.label.starts_with(RANDOM_ONE) {
            assert_eq!(shared, 1);
        }
        // the goal-entering step is never a sub-reward
        assert!(!s.contains(&(a.path().len() - 1)));
    }
}

#[test]
fn usefulness_output_shape_and_reproducibility() {
    let a = canonical();
    let spec = a.spec();
    let seeds = committed_seeds(4);
    let ucfg = UsefulnessConfig {
        n_runs: 4,
        random_sets: 2,
        sample_seed: 1,
    };
    let cfg = EvalConfig::default();
    let r1 = run_usefulness_experiment(spec, &a.subgoals, &seeds, &ucfg, &cfg).unwrap();
    let r2 = run_usefulness_experiment(spec, &a.subgoals, &seeds, &ucfg, &cfg).unwrap();
    assert_eq!(r1, r2);
    assert_eq!(r1.len(), 5);
    for r in &r1 {
        assert_eq!(r.episodes_to_optimal.len(), 4);
        assert!(r.episodes_to_optimal.iter().all(|&n| n >= 1));
    }
    assert_eq!(pooled_samples(&r1, RANDOM_BOTH).len(), 8);
    assert_eq!(pooled_samples(&r1, "derived").len(), 4);
}

#[test]
fn count_conditions_extend_the_derived_prefix() {
    let a = canonical();
    let spec = a.spec();
    let conds = count_conditions(spec, &a.subgoals, 4, EvalConfig::default().learner.gamma).unwrap();
    let derived: Vec<usize> = non_goal_subgoals(spec, &a.subgoals).iter().filter_map(|p| p.step).collect();
    assert_eq!(conds.len(), 5);
    for (k, c) in conds.iter().enumerate() {
        assert_eq!(c.pairs.len(), k);
        if k > 0 {
            assert!(steps(&conds[k - 1].pairs).is_subset(&steps(&c.pairs)));
        }
    }
    assert_eq!(steps(&conds[2].pairs), derived.iter().copied().collect());
    // anchors 0, 3, 9, 13: the widest gap is 3..9 with midpoint 6
    assert_eq!(steps(&conds[3].pairs), BTreeSet::from([3, 6, 9]));
}

#[test]
fn count_experiment_runs_every_condition_for_every_seed() {
    let a = canonical();
    let spec = a.spec();
    let seeds = committed_seeds(3);
    let r = run_count_experiment(spec, &a.subgoals, 3, &seeds, &EvalConfig::default()).unwrap();
    assert_eq!(r.iter().map(|x| x.label.as_str()).collect::<Vec<_>>(), ["k0", "k1", "k2", "k3"]);
    for x in &r {
        assert_eq!(x.seeds, seeds);
        assert_eq!(x.censored.len(), 3);
        let budget = EvalConfig::default().episode_budget;
        for (n, c) in x.episodes_to_optimal.iter().zip(&x.censored) {
            assert_eq!(*c, *n == budget);
        }
    }
}
