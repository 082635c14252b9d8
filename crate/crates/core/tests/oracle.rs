//! Importance estimators against a brute-force enumeration over the true
//! environment dynamics.

use subgoal_core::gridworld::{self, parse_map, GridSpec, CANONICAL_MAP, SMALL_MAP};
use subgoal_core::importance::{importance_exact, importance_mc, ImportanceParams};
use subgoal_core::mdp::{state_count, Action, State, Trajectory};
use subgoal_core::pipeline::model_path;
use subgoal_core::policy::{HyperParams, Policy};
use subgoal_core::world_model::{learn, Learned};

/// Probability of passing through `s_f` again, enumerating every uniform
/// random detour of `r` state-changing, goal-avoiding moves and then
/// following `policy` on the real dynamics.
fn enumerate(spec: &GridSpec, policy: &Policy, s_f: State, r: usize) -> f64 {
    let cap = 4 * state_count(spec);
    let comes_back = |mut s: State| {
        for _ in 0..cap {
            if spec.is_goal(&s) {
                return false;
            }
            s = gridworld::transition(spec, &s, policy.action(&s));
            if s == s_f {
                return true;
            }
        }
        false
    };
    let mut frontier = vec![(s_f, 1.0f64)];
    for _ in 0..r {
        let mut next = Vec::new();
        for (s, w) in frontier {
            let moves: Vec<State> = Action::ALL
                .iter()
                .map(|&a| gridworld::transition(spec, &s, a))
                .filter(|n| *n != s && !spec.is_goal(n))
                .collect();
            // a stalled detour contributes nothing
            for n in &moves {
                next.push((*n, w / moves.len() as f64));
            }
        }
        frontier = next;
    }
    frontier
        .into_iter()
        .filter(|(s, _)| comes_back(*s))
        .map(|(_, w)| w)
        .sum()
}

fn setup(map: &str) -> (GridSpec, Learned, Trajectory) {
    let spec = parse_map(map).unwrap();
    let learned = learn(&spec, &HyperParams::default(), 0).unwrap();
    let path = model_path(&spec, &learned.policy, &learned.model, 0).unwrap();
    (spec, learned, path)
}

// Enumeration output on the canonical map, seed 0, three random moves.
const CANONICAL_EXACT: [f64; 14] = [
    0.0,
    0.574074074074074,
    0.574074074074074,
    0.65625,
    0.0,
    0.5185185185185185,
    0.49999999999999994,
    0.6481481481481481,
    0.6874999999999999,
    0.5555555555555555,
    0.18518518518518517,
    0.14814814814814814,
    0.1388888888888889,
    0.8888888888888888,
];

#[test]
fn exact_matches_enumeration_on_canonical_path() {
    let (spec, learned, path) = setup(CANONICAL_MAP);
    let cap = 4 * state_count(&spec);
    assert_eq!(path.len(), CANONICAL_EXACT.len());
    for (t, pair) in path.pairs.iter().enumerate() {
        let oracle = enumerate(&spec, &learned.policy, pair.state, 3);
        let exact = importance_exact(&learned.model, &learned.policy, &pair.state, &path.terminal, 3, cap).unwrap();
        assert!((oracle - CANONICAL_EXACT[t]).abs() < 1e-12, "step {t}: oracle {oracle}");
        assert!((exact - oracle).abs() < 1e-12, "step {t}: exact {exact} oracle {oracle}");
    }
}

#[test]
fn exact_matches_enumeration_for_other_detour_lengths() {
    let (spec, learned, path) = setup(SMALL_MAP);
    let cap = 4 * state_count(&spec);
    for r in 1..=4 {
        for pair in &path.pairs {
            let oracle = enumerate(&spec, &learned.policy, pair.state, r);
            let exact = importance_exact(&learned.model, &learned.policy, &pair.state, &path.terminal, r, cap).unwrap();
            assert!((exact - oracle).abs() < 1e-12, "r {r} at {}: {exact} vs {oracle}", pair.state);
        }
    }
}

#[test]
fn monte_carlo_is_within_tolerance_of_exact() {
    let (spec, learned, path) = setup(SMALL_MAP);
    for pair in &path.pairs {
        let p = ImportanceParams::for_model(&learned.model, 3, 10_000, 0);
        let mc = importance_mc(&learned.model, &learned.policy, &pair.state, &path.terminal, &p).unwrap();
        let exact = enumerate(&spec, &learned.policy, pair.state, 3);
        assert!((mc - exact).abs() <= 0.05, "{}: mc {mc} exact {exact}", pair.state);
        assert!((0.0..=1.0).contains(&mc));
    }
}
