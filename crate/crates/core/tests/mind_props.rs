mod common;

use household_tom::mind::{Belief, Categorical};
use household_tom::world::{AgentId, Observation};
use proptest::prelude::*;
use std::collections::{BTreeMap, BTreeSet};

fn cands(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("f{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn belief_calculus(seed in any::<u64>()) {
        if let Err(e) = common::belief_case(seed) {
            prop_assert!(false, "seed {}: {}", seed, e);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn everything_visible_and_absent_resets_to_uniform(k in 1usize..8, at in 0usize..8) {
        let c = cands(k);
        let b = Belief::new().with("beer", Categorical::delta(&c, &c[at % k]));
        let obs = Observation {
            viewer: AgentId(0),
            room: "kitchen".into(),
            visible_objects: BTreeSet::new(),
            visible_agents: BTreeMap::new(),
            open_state: BTreeMap::new(),
            visible_locations: c.iter().cloned().collect(),
        };
        let up = b.update_on_observation(&obs);
        prop_assert_eq!(up.reset, vec!["beer".to_string()]);
        let m = up.belief.marginal("beer").unwrap();
        for l in &c {
            prop_assert!((m.prob(l) - 1.0 / k as f64).abs() < 1e-12);
        }
        prop_assert!(b.try_update_on_observation(&obs).is_err());
    }

    #[test]
    fn mode_breaks_ties_lexicographically(k in 2usize..10) {
        let c = cands(k);
        let u = Categorical::uniform(&c);
        prop_assert_eq!(u.mode(), Some("f0"));
    }
}
