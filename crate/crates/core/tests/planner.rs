mod common;

use common::{bfs_cost, one_agent, pose};
use household_tom::mind::{Belief, Categorical, GoalBelief, PhysicalGoal, SocialGoal};
use household_tom::plan::{
    boltzmann, infer_other_goal, plan_policy, social_plan, AgentSpec, Objective, PlanError,
    PlanSource, Planner, SearchBudget, Step,
};
use household_tom::mind::Utterance;
use household_tom::world::{apply, AgentId, Apartment, PrimitiveAction, WorldState};

fn flat_a() -> Apartment {
    Apartment::template("flat_a").unwrap()
}

fn true_belief(apt: &Apartment, object: &str, at: &str) -> Belief {
    Belief::new().with(object, Categorical::delta(&apt.furniture_ids(), at))
}

fn rearrange_beer() -> Objective {
    Objective::Place {
        object: "beer".into(),
        target: "kitchen_table".into(),
    }
}

#[test]
fn greedy_limit_walks_to_the_object() {
    let apt = flat_a();
    let s = one_agent(&apt, pose("living_room", None), &[("beer", "coffee_table")]);
    let planner = Planner::new(apt.clone());
    let b = true_belief(&apt, "beer", "coffee_table");
    let pol = plan_policy(&planner, &b, &s, AgentId(0), &rearrange_beer(), f64::INFINITY).unwrap();
    assert_eq!(pol.source, PlanSource::ExactSearch);
    assert_eq!(pol.probs.iter().filter(|(_, p)| *p > 0.0).count(), 1);
    assert_eq!(pol.prob(&PrimitiveAction::walk_to("coffee_table")), 1.0);
}

#[test]
fn boltzmann_matches_breadth_first_costs() {
    let apt = flat_a();
    let s = one_agent(&apt, pose("living_room", None), &[("beer", "coffee_table")]);
    let planner = Planner::new(apt.clone());
    let b = true_belief(&apt, "beer", "coffee_table");
    let obj = rearrange_beer();
    let pol = plan_policy(&planner, &b, &s, AgentId(0), &obj, 2.0).unwrap();
    let mut q = Vec::new();
    for (a, _) in &pol.probs {
        let q_a = if *a == PrimitiveAction::Noop {
            -(1.0 + bfs_cost(&apt, &s, AgentId(0), &obj, 10).unwrap() as f64)
        } else {
            let next = apply(&apt, &s, AgentId(0), a).unwrap();
            -(1.0 + bfs_cost(&apt, &next, AgentId(0), &obj, 10).unwrap() as f64)
        };
        q.push(q_a);
    }
    let z: f64 = q.iter().map(|x| (2.0 * x).exp()).sum();
    for ((a, p), q_a) in pol.probs.iter().zip(&q) {
        assert!((p - (2.0 * q_a).exp() / z).abs() < 1e-12, "{a}");
    }
    assert!((pol.total() - 1.0).abs() < 1e-9);
}

#[test]
fn uncertain_agent_opens_the_adjacent_container_first() {
    let apt = flat_a();
    let s = one_agent(&apt, pose("kitchen", Some("fridge")), &[("juice", "kitchen_cabinet")]);
    let planner = Planner::new(apt.clone());
    let mut marginal = std::collections::BTreeMap::new();
    for f in apt.furniture_ids() {
        let p = if f == "fridge" || f == "kitchen_cabinet" { 0.5 } else { 0.0 };
        marginal.insert(f, p);
    }
    let b = Belief::new().with("juice", Categorical::from_weights(marginal).unwrap());
    let obj = Objective::Hold {
        object: "juice".into(),
    };
    let pol = plan_policy(&planner, &b, &s, AgentId(0), &obj, f64::INFINITY).unwrap();
    // expected remaining cost over both possible worlds, from breadth-first search
    let expected = |a: &PrimitiveAction| -> f64 {
        ["fridge", "kitchen_cabinet"]
            .iter()
            .map(|loc| {
                let w = one_agent(&apt, pose("kitchen", Some("fridge")), &[("juice", loc)]);
                let next = apply(&apt, &w, AgentId(0), a).unwrap();
                0.5 * (1.0 + bfs_cost(&apt, &next, AgentId(0), &obj, 10).unwrap() as f64)
            })
            .sum()
    };
    let open = PrimitiveAction::open("fridge");
    let walk = PrimitiveAction::walk_to("kitchen_cabinet");
    assert!(expected(&open) < expected(&walk));
    assert_eq!(pol.mode(), &open);
    assert_eq!(pol.prob(&open), 1.0);
}

#[test]
fn missing_marginal_is_unreachable() {
    let apt = flat_a();
    let s = one_agent(&apt, pose("kitchen", None), &[("beer", "fridge")]);
    let planner = Planner::new(apt);
    let err = plan_policy(&planner, &Belief::new(), &s, AgentId(0), &rearrange_beer(), 2.0).unwrap_err();
    assert!(matches!(err, PlanError::UnreachableGoal { .. }));
}

#[test]
fn exact_table_agrees_with_breadth_first_search() {
    for apt in Apartment::templates() {
        let planner = Planner::new(apt.clone());
        let furniture = apt.furniture_ids();
        let obj_loc = &furniture[furniture.len() / 2];
        for start in apt.rooms.iter().map(|r| pose(r, None)).chain(
            furniture
                .iter()
                .map(|f| pose(apt.room_of(f).unwrap(), Some(f))),
        ) {
            let s = one_agent(&apt, start, &[(apt.object_vocabulary[0].as_str(), obj_loc.as_str())]);
            let object = apt.object_vocabulary[0].clone();
            for objective in [
                Objective::Hold { object: object.clone() },
                Objective::Place { object: object.clone(), target: furniture[0].clone() },
                Objective::Displace { object: object.clone(), avoid: obj_loc.clone() },
            ] {
                assert_eq!(
                    planner.exact_cost(&s, AgentId(0), &objective),
                    bfs_cost(&apt, &s, AgentId(0), &objective, 12),
                    "{} {objective:?}",
                    apt.id
                );
            }
        }
    }
}

#[test]
fn mcts_matches_exact_on_a_small_case() {
    let apt = flat_a();
    let s = one_agent(&apt, pose("living_room", None), &[("beer", "fridge")]);
    let exact = Planner::new(apt.clone());
    let search = Planner::with_budget(
        apt.clone(),
        SearchBudget { max_exact_states: 0, simulations: 2_000, seed: 5 },
    );
    let b = true_belief(&apt, "beer", "fridge");
    let e = plan_policy(&exact, &b, &s, AgentId(0), &rearrange_beer(), f64::INFINITY).unwrap();
    let m = plan_policy(&search, &b, &s, AgentId(0), &rearrange_beer(), f64::INFINITY).unwrap();
    assert_eq!(m.source, PlanSource::Mcts);
    assert_eq!(e.mode(), m.mode());
}

#[test]
fn boltzmann_limits() {
    let p = boltzmann(&[-1.0, -2.0, f64::NEG_INFINITY], 2.0);
    assert!((p[0] - 1.0 / (1.0 + (-2f64).exp())).abs() < 1e-12);
    assert_eq!(p[2], 0.0);
    assert_eq!(boltzmann(&[-1.0, -1.0, -3.0], f64::INFINITY), vec![0.5, 0.5, 0.0]);
}

fn step(agent: u8, action: PrimitiveAction, tick: u32) -> Step {
    Step {
        agent: AgentId(agent),
        action,
        utterance: Utterance::Silence,
        tick,
        belief: Belief::new(),
        goal_belief: GoalBelief::delta(PhysicalGoal::find("x")),
    }
}

fn two_agents(apt: &Apartment, placements: &[(&str, &str)]) -> WorldState {
    WorldState::new(
        apt,
        [(AgentId(0), pose("kitchen", None)), (AgentId(1), pose("kitchen", None))]
            .into_iter()
            .collect(),
        placements.iter().map(|(o, l)| (o.to_string(), l.to_string())).collect(),
    )
    .unwrap()
}

#[test]
fn inquiry_fixes_the_inferred_goal() {
    let apt = flat_a();
    let planner = Planner::new(apt.clone());
    let s0 = two_agents(&apt, &[("beer", "coffee_table")]);
    let mut ask = step(1, PrimitiveAction::Noop, 0);
    ask.utterance = Utterance::inquiry("beer");
    let cands = [PhysicalGoal::find("beer"), PhysicalGoal::find("juice")];
    let g = infer_other_goal(&planner, &s0, &[ask], AgentId(0), &cands, 2.0).unwrap();
    assert_eq!(g.prob(&PhysicalGoal::find("beer")), 1.0);
    let g = infer_other_goal(&planner, &s0, &[], AgentId(0), &cands, 2.0).unwrap();
    assert_eq!(g.prob(&PhysicalGoal::find("juice")), 0.5);
}

#[test]
fn observed_actions_point_at_the_carrot() {
    let apt = Apartment::template("flat_b").unwrap();
    let planner = Planner::new(apt.clone());
    let s0 = two_agents(&apt, &[("carrot", "fridge"), ("potato", "microwave"), ("apple", "desk")]);
    let acts = [
        PrimitiveAction::walk_to("fridge"),
        PrimitiveAction::open("fridge"),
        PrimitiveAction::grab("carrot", "fridge"),
    ];
    let history: Vec<Step> = acts.iter().enumerate().map(|(t, a)| step(1, a.clone(), t as u32)).collect();
    let cands = [
        PhysicalGoal::find("carrot"),
        PhysicalGoal::find("potato"),
        PhysicalGoal::find("apple"),
    ];
    let g = infer_other_goal(&planner, &s0, &history, AgentId(0), &cands, 2.0).unwrap();
    assert_eq!(g.mode(), Some(&cands[0]));

    // brute force: product of level-0 policy probabilities per candidate
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, goal) in cands.iter().enumerate() {
        let mut s = s0.clone();
        let mut ll = 0.0;
        for a in &acts {
            let at = s.placements.get(goal.object()).unwrap().clone();
            let b = true_belief(&apt, goal.object(), &at);
            let pol = plan_policy(&planner, &b, &s, AgentId(1), &Objective::from(goal), 2.0).unwrap();
            ll += pol.prob(a).ln();
            s = apply(&apt, &s, AgentId(1), a).unwrap();
        }
        if ll > best.0 {
            best = (ll, i);
        }
    }
    assert_eq!(best.1, 0);
}

#[test]
fn social_plans() {
    let apt = flat_a();
    let planner = Planner::new(apt.clone());
    let s = two_agents(&apt, &[("book", "kitchen_table")]);
    let b = true_belief(&apt, "book", "kitchen_table");
    let spec = |social| AgentSpec {
        id: AgentId(1),
        physical_goal: PhysicalGoal::find("juice"),
        social_goal: social,
        initial_belief: b.clone(),
        initial_goal_belief: GoalBelief::delta(PhysicalGoal::rearrange("book", "coffee_table")),
    };
    let inferred = GoalBelief::delta(PhysicalGoal::rearrange("book", "coffee_table"));
    let help = social_plan(&planner, &spec(SocialGoal::Help), &b, &inferred, &s, 2.0, 0.5).unwrap();
    assert_eq!(help.mode(), &PrimitiveAction::walk_to("kitchen_table"));

    // hindering a finder never hands over the object
    let find_beer = GoalBelief::delta(PhysicalGoal::find("beer"));
    let hinder = social_plan(&planner, &spec(SocialGoal::Hinder), &b, &find_beer, &s, 2.0, 0.5).unwrap();
    assert!(hinder.probs.iter().all(|(a, _)| !matches!(a, PrimitiveAction::Put { .. })));

    let own = Belief::new().with("juice", Categorical::delta(&apt.furniture_ids(), "fridge"));
    let mut s2 = s.clone();
    s2.placements.insert("juice".into(), "fridge".into());
    let ind = social_plan(&planner, &spec(SocialGoal::Independent), &own, &inferred, &s2, 2.0, 0.5).unwrap();
    let direct = plan_policy(&planner, &own, &s2, AgentId(1), &Objective::Hold { object: "juice".into() }, 2.0).unwrap();
    assert_eq!(ind, direct);
}
