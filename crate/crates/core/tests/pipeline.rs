use std::sync::OnceLock;

use proptest::prelude::*;
use subgoal_core::explain::{classify, Landmark};
use subgoal_core::gridworld::{parse_map, CANONICAL_MAP, SMALL_MAP};
use subgoal_core::importance::{importance_mc, ImportanceParams};
use subgoal_core::mdp::{Action, StateActionPair};
use subgoal_core::pipeline::{analyze, Analysis, AnalysisConfig};

#[derive(serde::Deserialize)]
struct Query {
    actions: Vec<Action>,
}

fn canonical() -> &'static Analysis {
    static A: OnceLock<Analysis> = OnceLock::new();
    A.get_or_init(|| analyze(&parse_map(CANONICAL_MAP).unwrap(), &AnalysisConfig::default()).unwrap())
}

fn query(text: &str) -> Vec<Action> {
    serde_json::from_str::<Query>(text).unwrap().actions
}

#[test]
fn canonical_subgoals_are_key_door_goal() {
    let a = canonical();
    let spec = a.spec();
    let kinds: Vec<Option<Landmark>> = a.subgoals.subgoals.iter().map(|p| classify(spec, p)).collect();
    assert_eq!(
        kinds,
        vec![Some(Landmark::GetKey), Some(Landmark::PassDoor), Some(Landmark::ReachGoal)]
    );
    assert_eq!(a.subgoals.steps(), vec![3, 9, 13]);
    assert_eq!(a.subgoals.subgoals[0].action, Action::Pickup);
}

#[test]
fn canonical_profile_is_high_at_landmarks() {
    let a = canonical();
    let p = &a.profile;
    let eps = p.epsilon;
    let pickup = a.path().pairs.iter().position(|x| x.action == Action::Pickup).unwrap();
    assert!(p.values[pickup] > eps);
    let door = a.spec().door_pos;
    for (t, pair) in a.path().pairs.iter().enumerate() {
        let next = a.path().state_at(t + 1).unwrap();
        let through_door = pair.action == Action::Toggle || pair.state.pos() == door || next.pos() == door;
        if through_door {
            assert!(p.values[t] > eps, "door step {t}");
        }
    }
    assert!(p.values[a.path().len() - 1] > eps);
    assert_eq!(*p.values.last().unwrap(), 0.0);
    let mean = p.values.iter().sum::<f64>() / p.values.len() as f64;
    assert!((mean - eps).abs() < 1e-12);
}

#[test]
fn door_misunderstanding_is_explained_by_the_door() {
    let a = canonical();
    let acts = query(include_str!("../../../assets/queries/door_misunderstanding.json"));
    let expected: StateActionPair =
        serde_json::from_str(include_str!("../../../assets/queries/door_misunderstanding.expected.json")).unwrap();
    let answer = a.explain(None, &acts);
    let got = answer.explanation.unwrap();
    assert_eq!(got, expected);
    assert_eq!(got.step, expected.step);
    assert_eq!(classify(a.spec(), &got), Some(Landmark::PassDoor));
    assert!(!answer.truncated);
}

#[test]
fn optimal_route_needs_no_explanation() {
    let a = canonical();
    let acts = query(include_str!("../../../assets/queries/optimal_route.json"));
    assert_eq!(acts, a.path().actions());
    let answer = a.explain(None, &acts);
    assert!(answer.keypoints.is_empty());
    assert_eq!(answer.explanation, None);
}

#[test]
fn analysis_is_reproducible() {
    let spec = parse_map(SMALL_MAP).unwrap();
    let cfg = AnalysisConfig {
        s_num: 2_000,
        ..AnalysisConfig::default()
    };
    let x = analyze(&spec, &cfg).unwrap();
    let y = analyze(&spec, &cfg).unwrap();
    assert_eq!(x.profile, y.profile);
    assert_eq!(x.subgoals, y.subgoals);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn importance_is_a_probability(step in 0usize..14, r_num in 1usize..5, seed in any::<u64>()) {
        let a = canonical();
        let s_f = a.path().pairs[step].state;
        let p = ImportanceParams { seed, ..ImportanceParams::for_model(&a.trained.model, r_num, 300, seed) };
        let v = importance_mc(&a.trained.model, &a.trained.policy, &s_f, &a.path().terminal, &p).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
    }

    #[test]
    fn profile_thresholds_partition_falling_edges(eps in 0.0f64..1.0) {
        let a = canonical();
        let sg = subgoal_core::explain::extract_subgoals(&a.profile, Some(eps)).unwrap();
        let v = &a.profile.values;
        for t in sg.steps() {
            prop_assert!(v[t] > eps && v[t + 1] < eps);
        }
        for w in sg.steps().windows(2) {
            prop_assert!(w[1] - w[0] >= 2);
        }
    }
}
