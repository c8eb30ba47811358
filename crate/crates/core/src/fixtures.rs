//! Hand-scripted scenarios for the illustrated examples: a hinderer's
//! belief, a misleading helper-or-hinderer, a helpful relocation under a
//! wrong goal belief, and a hinderer who hides a potato.

use std::collections::BTreeMap;

use crate::gen::{
    belief_hypothesis, belief_of_goal_hypothesis, belief_of_goal_option, belief_option, belief_stem,
    social_hypothesis, social_option, social_stem, split_as, BalanceLabel, BeliefKind, GenError, Polarity, QType,
    Question, ScenarioConfig, ScenarioRecord, SplitKind, BOG_STEM,
};
use crate::mind::{Belief, Categorical, GoalBelief, Hypothesis, PhysicalGoal, SocialGoal, Utterance};
use crate::plan::{AgentSpec, ScenarioTrace, Step};
use crate::world::{apply, AgentId, Apartment, Pose, PrimitiveAction as A, WorldState};

/// One scripted turn: who acts, what they say, what they do.
pub type Turn = (u8, Utterance, A);

fn spec(apt: &Apartment, id: u8, goal: PhysicalGoal, social: SocialGoal, knows: &[(&str, &str)]) -> AgentSpec {
    let locations = apt.furniture_ids();
    let mut belief = Belief::new();
    for o in apt.object_vocabulary.iter() {
        let marginal = match knows.iter().find(|(k, _)| k == o) {
            Some((_, at)) => Categorical::delta(&locations, at),
            None => Categorical::uniform(&locations),
        };
        belief.insert(o.clone(), marginal);
    }
    AgentSpec {
        id: AgentId(id),
        initial_goal_belief: GoalBelief::delta(goal.clone()),
        physical_goal: goal,
        social_goal: social,
        initial_belief: belief,
    }
}

/// Apply a script turn by turn, checking every action is legal.
pub fn scripted_record(
    id: &str,
    config: ScenarioConfig,
    turns: &[Turn],
    split: SplitKind,
) -> Result<ScenarioRecord, GenError> {
    let apt = Apartment::template(&config.apartment)?;
    let mut state = config.s0.clone();
    let mut steps = Vec::new();
    for (k, (agent, utterance, action)) in turns.iter().enumerate() {
        let who = AgentId(*agent);
        state = apply(&apt, &state, who, action)?;
        let spec = &config.specs[*agent as usize];
        steps.push(Step {
            agent: who,
            action: action.clone(),
            utterance: utterance.clone(),
            tick: (k / 2) as u32,
            belief: spec.initial_belief.clone(),
            goal_belief: spec.initial_goal_belief.clone(),
        });
    }
    let trace = ScenarioTrace {
        apartment: config.apartment.clone(),
        s0: config.s0.clone(),
        steps,
        terminal: state,
        specs: config.specs.clone(),
        language: config.language,
        horizon_exhausted: false,
    };
    let channels = split_as(&config, &apt, &trace, split);
    Ok(ScenarioRecord {
        id: id.to_string(),
        config,
        trace,
        channels,
    })
}

fn s0(apt: &Apartment, poses: [&str; 2], placements: &[(&str, &str)]) -> Result<WorldState, GenError> {
    let poses: BTreeMap<AgentId, Pose> = [(AgentId(0), Pose::in_room(poses[0])), (AgentId(1), Pose::in_room(poses[1]))]
        .into_iter()
        .collect();
    let placements = placements.iter().map(|(o, f)| (o.to_string(), f.to_string())).collect();
    Ok(WorldState::new(apt, poses, placements)?)
}

#[allow(clippy::too_many_arguments)]
fn question(
    rec: &ScenarioRecord,
    suffix: &str,
    qtype: QType,
    polarity: Polarity,
    stem: String,
    options: Vec<(String, Hypothesis)>,
    key: usize,
    target: AgentId,
    label: BalanceLabel,
) -> Question {
    Question {
        id: format!("{}-{suffix}", rec.id),
        qtype,
        polarity,
        stem,
        text_channel: rec.channels.text_channel.clone(),
        observation_channel: rec.channels.observation_channel.clone(),
        split_kind: rec.channels.split_kind,
        options: options.iter().map(|(t, _)| t.clone()).collect(),
        key,
        scenario_id: rec.id.clone(),
        target,
        hypotheses: options.into_iter().map(|(_, h)| h).collect(),
        label,
    }
}

fn silent(a: A) -> (Utterance, A) {
    (Utterance::Silence, a)
}

fn interleave(first: Vec<(Utterance, A)>, second: Vec<(Utterance, A)>) -> Vec<Turn> {
    first
        .into_iter()
        .zip(second)
        .flat_map(|((u0, a0), (u1, a1))| [(0, u0, a0), (1, u1, a1)])
        .collect()
}

/// John asks Mary for the beer, she names the coffee table and he finds it
/// there. Conditioned on hindering, the coffee-table belief is least likely.
pub fn hinderer_belief() -> Result<(ScenarioRecord, Question), GenError> {
    let apt = Apartment::template("flat_a")?;
    let find = PhysicalGoal::find("beer");
    let config = ScenarioConfig {
        apartment: apt.id.clone(),
        s0: s0(&apt, ["kitchen", "kitchen"], &[("beer", "coffee_table"), ("juice", "fridge")])?,
        specs: [
            spec(&apt, 0, find.clone(), SocialGoal::Independent, &[]),
            spec(&apt, 1, find, SocialGoal::Help, &[("beer", "coffee_table"), ("juice", "fridge")]),
        ],
        names: ["John".into(), "Mary".into()],
        language: true,
        belief_kind: BeliefKind::True,
        seed: 0,
    };
    let turns = interleave(
        vec![
            (Utterance::inquiry("beer"), A::Noop),
            silent(A::walk_to("coffee_table")),
            silent(A::grab("beer", "coffee_table")),
        ],
        vec![
            (Utterance::inform("beer", "coffee_table"), A::Noop),
            silent(A::Noop),
            silent(A::Noop),
        ],
    );
    let rec = scripted_record("showcase-belief", config, &turns, SplitKind::ConversationVsActions)?;
    let options = ["coffee_table", "kitchen_cabinet", "fridge"]
        .iter()
        .map(|at| {
            (
                belief_option(&apt, "Mary", "beer", at),
                belief_hypothesis(&apt, "beer", at, SocialGoal::Hinder),
            )
        })
        .collect();
    let q = question(
        &rec,
        "belief",
        QType::Belief,
        Polarity::Least,
        belief_stem("Mary", "John", "beer", SocialGoal::Hinder),
        options,
        0,
        AgentId(1),
        BalanceLabel::TrueBelief,
    );
    Ok((rec, q))
}

/// Jessica sends Kevin to the bedroom cabinet, which is empty; the magazine
/// was on the desk all along. Knowing that, she was most likely hindering.
pub fn misleading_responder() -> Result<(ScenarioRecord, Question), GenError> {
    let apt = Apartment::template("flat_b")?;
    let find = PhysicalGoal::find("magazine");
    let config = ScenarioConfig {
        apartment: apt.id.clone(),
        s0: s0(&apt, ["living_room", "living_room"], &[("magazine", "desk"), ("book", "coffee_table")])?,
        specs: [
            spec(&apt, 0, find.clone(), SocialGoal::Independent, &[]),
            spec(&apt, 1, find, SocialGoal::Hinder, &[("magazine", "desk"), ("book", "coffee_table")]),
        ],
        names: ["Kevin".into(), "Jessica".into()],
        language: true,
        belief_kind: BeliefKind::True,
        seed: 0,
    };
    let turns = interleave(
        vec![
            (Utterance::inquiry("magazine"), A::Noop),
            silent(A::walk_to("bedroom_cabinet")),
            silent(A::open("bedroom_cabinet")),
            silent(A::walk_to("desk")),
            silent(A::grab("magazine", "desk")),
        ],
        vec![
            (Utterance::inform("magazine", "bedroom_cabinet"), A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
        ],
    );
    let rec = scripted_record("showcase-social", config, &turns, SplitKind::ConversationVsActions)?;
    let options = [SocialGoal::Help, SocialGoal::Hinder, SocialGoal::Independent]
        .iter()
        .map(|g| {
            (
                social_option("Jessica", "Kevin", "magazine", *g),
                social_hypothesis(&apt, "magazine", "bedroom_cabinet", false, *g),
            )
        })
        .collect();
    let q = question(
        &rec,
        "social",
        QType::SocialGoal,
        Polarity::Most,
        social_stem(&apt, "Jessica", "bedroom_cabinet", Polarity::Most),
        options,
        1,
        AgentId(1),
        BalanceLabel::Adversarial,
    );
    Ok((rec, q))
}

/// David leaves the book on the desk; Sarah, thinking he wants it on the
/// coffee table, carries it there to help.
pub fn helpful_relocation() -> Result<(ScenarioRecord, Question), GenError> {
    let apt = Apartment::template("flat_b")?;
    let truth = PhysicalGoal::rearrange("book", "desk");
    let believed = PhysicalGoal::rearrange("book", "coffee_table");
    let mut mover = spec(&apt, 1, believed.clone(), SocialGoal::Help, &[("book", "kitchen_table")]);
    mover.initial_goal_belief = GoalBelief::delta(believed);
    let config = ScenarioConfig {
        apartment: apt.id.clone(),
        s0: s0(&apt, ["kitchen", "bedroom"], &[("book", "kitchen_table"), ("apple", "fridge")])?,
        specs: [
            spec(&apt, 0, truth, SocialGoal::Independent, &[("book", "kitchen_table")]),
            mover,
        ],
        names: ["David".into(), "Sarah".into()],
        language: false,
        belief_kind: BeliefKind::True,
        seed: 0,
    };
    let turns = interleave(
        vec![
            silent(A::walk_to("kitchen_table")),
            silent(A::grab("book", "kitchen_table")),
            silent(A::walk_to("desk")),
            silent(A::put("book", "desk")),
            silent(A::walk_to_room("kitchen")),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
        ],
        vec![
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::walk_to("desk")),
            silent(A::grab("book", "desk")),
            silent(A::walk_to("coffee_table")),
            silent(A::put("book", "coffee_table")),
        ],
    );
    let rec = scripted_record("showcase-relocation", config, &turns, SplitKind::FirstHalfText)?;
    let options = [
        (SocialGoal::Help, "desk"),
        (SocialGoal::Hinder, "coffee_table"),
        (SocialGoal::Help, "coffee_table"),
    ]
    .iter()
    .map(|(g, wanted)| {
        (
            belief_of_goal_option(&apt, "Sarah", "David", "book", wanted, *g),
            belief_of_goal_hypothesis(&apt, "book", Some("kitchen_table"), wanted, *g),
        )
    })
    .collect();
    let q = question(
        &rec,
        "belief_of_goal",
        QType::BeliefOfGoal,
        Polarity::Most,
        BOG_STEM.to_string(),
        options,
        2,
        AgentId(1),
        BalanceLabel::FalseGoalBelief,
    );
    Ok((rec, q))
}

/// Alice knows the potato is in the fridge. Asked by Bob, she names the
/// bookshelf and stays put; Bob later finds the potato in the fridge. Options are her social goal given that knowledge.
pub fn hidden_potato() -> Result<(ScenarioRecord, Question), GenError> {
    let apt = Apartment::template("flat_d")?;
    let find = PhysicalGoal::find("potato");
    let config = ScenarioConfig {
        apartment: apt.id.clone(),
        s0: s0(&apt, ["kitchen", "kitchen"], &[("potato", "fridge"), ("apple", "kitchen_table")])?,
        specs: [
            spec(&apt, 0, find.clone(), SocialGoal::Independent, &[]),
            spec(&apt, 1, find, SocialGoal::Hinder, &[("potato", "fridge"), ("apple", "kitchen_table")]),
        ],
        names: ["Bob".into(), "Alice".into()],
        language: true,
        belief_kind: BeliefKind::True,
        seed: 0,
    };
    let turns = interleave(
        vec![
            (Utterance::inquiry("potato"), A::Noop),
            silent(A::walk_to("bookshelf")),
            silent(A::walk_to("fridge")),
            silent(A::open("fridge")),
            silent(A::grab("potato", "fridge")),
        ],
        vec![
            (Utterance::inform("potato", "bookshelf"), A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
            silent(A::Noop),
        ],
    );
    let rec = scripted_record("showcase-potato", config, &turns, SplitKind::ConversationVsActions)?;
    let options = [SocialGoal::Help, SocialGoal::Hinder, SocialGoal::Independent]
        .iter()
        .map(|g| {
            (
                social_option("Alice", "Bob", "potato", *g),
                social_hypothesis(&apt, "potato", "fridge", true, *g),
            )
        })
        .collect();
    let q = question(
        &rec,
        "social",
        QType::SocialGoal,
        Polarity::Most,
        social_stem(&apt, "Alice", "fridge", Polarity::Most),
        options,
        1,
        AgentId(1),
        BalanceLabel::Adversarial,
    );
    Ok((rec, q))
}

/// All illustrated questions, in a fixed order.
pub fn showcase_questions() -> Result<Vec<Question>, GenError> {
    Ok(vec![
        hinderer_belief()?.1,
        misleading_responder()?.1,
        helpful_relocation()?.1,
        hidden_potato()?.1,
    ])
}

/// The potato question with the responder's answer replaced by the true
/// location, for probing how unlikely that statement is under hindering.
pub fn potato_counterfactual() -> Result<Question, GenError> {
    let (_, mut q) = hidden_potato()?;
    let apt = Apartment::template("flat_d")?;
    let honest = crate::channel::utterance_line(&apt, 0, "Alice", &Utterance::inform("potato", "fridge"))
        .expect("inform renders");
    for line in q.text_channel.iter_mut() {
        if line.contains("Alice:") && line.contains("bookshelf") {
            *line = honest.clone();
        }
    }
    q.id.push_str("-honest");
    Ok(q)
}
