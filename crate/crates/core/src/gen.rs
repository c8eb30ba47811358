//! Procedural scenario and question generation.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    location_phrase, observation_line, text_action_line, utterance_line, Lexicon, Scene, PLACEHOLDER,
};
use crate::limp::{
    fuse, parse_hypotheses, posterior, uninformed_goal_belief, FusedContext, LimpError, OracleScorer,
    PosteriorResult, ScoringParams,
};
use crate::mind::{
    Belief, Categorical, GoalBelief, Hypothesis, PhysicalGoal, SocialGoal, Utterance, DEFAULT_TAU,
};
use crate::plan::{rollout, AgentSpec, PlanError, RolloutParams, ScenarioTrace, SearchBudget, DEFAULT_BETA, DEFAULT_HORIZON};
use crate::rng::{substream, substream_seed};
use crate::world::{
    display_name, observe, AgentId, Apartment, FurnitureKind, Pose, PrimitiveAction, WorldError, WorldState,
};

pub const GENERATOR_VERSION: &str = concat!("household-tom ", env!("CARGO_PKG_VERSION"));
pub const DEFAULT_MARGIN: f64 = 2.0;
pub const DEFAULT_SCENARIOS: usize = 225;
pub const DEFAULT_PER_TYPE: usize = 300;
const MAX_RESAMPLES: usize = 100;
const BATCH: usize = 16;

const NAMES: [&str; 12] = [
    "Mary", "John", "Kevin", "Jessica", "Sarah", "David", "Michael", "Emma", "Daniel", "Olivia", "James", "Sophia",
];

#[derive(Debug, Error)]
pub enum GenError {
    #[error("no valid scenario after {attempts} resamples")]
    ConstraintUnsatisfiable { attempts: usize },
    #[error("question type does not apply: {0}")]
    Inapplicable(String),
    #[error("key {key} out of range for {options} options")]
    MalformedKey { key: usize, options: usize },
    #[error("budget of {candidates} candidates exhausted; tallies {tallies:?}")]
    BudgetExceeded {
        candidates: usize,
        tallies: BTreeMap<String, usize>,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Limp(#[from] LimpError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QType {
    Belief,
    SocialGoal,
    BeliefOfGoal,
}

impl QType {
    pub const ALL: [QType; 3] = [QType::Belief, QType::SocialGoal, QType::BeliefOfGoal];

    pub fn as_str(self) -> &'static str {
        match self {
            QType::Belief => "belief",
            QType::SocialGoal => "social_goal",
            QType::BeliefOfGoal => "belief_of_goal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Polarity {
    Most,
    Least,
}

impl Polarity {
    fn word(self) -> &'static str {
        match self {
            Polarity::Most => "MOST",
            Polarity::Least => "LEAST",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitKind {
    ConversationVsActions,
    FirstHalfText,
    SecondHalfText,
}

/// Which side of a balance tally a question's key falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceLabel {
    TrueBelief,
    FalseBelief,
    Cooperative,
    Adversarial,
    TrueGoalBelief,
    FalseGoalBelief,
}

impl BalanceLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            BalanceLabel::TrueBelief => "true_belief",
            BalanceLabel::FalseBelief => "false_belief",
            BalanceLabel::Cooperative => "cooperative",
            BalanceLabel::Adversarial => "adversarial",
            BalanceLabel::TrueGoalBelief => "true_goal_belief",
            BalanceLabel::FalseGoalBelief => "false_goal_belief",
        }
    }

    /// The two sides of the tally for a question type, first side first.
    pub fn sides(qtype: QType) -> [BalanceLabel; 2] {
        match qtype {
            QType::Belief => [BalanceLabel::TrueBelief, BalanceLabel::FalseBelief],
            QType::SocialGoal => [BalanceLabel::Cooperative, BalanceLabel::Adversarial],
            QType::BeliefOfGoal => [BalanceLabel::TrueGoalBelief, BalanceLabel::FalseGoalBelief],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityChannels {
    pub text_channel: Vec<String>,
    pub observation_channel: Vec<String>,
    pub split_kind: SplitKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub qtype: QType,
    pub polarity: Polarity,
    pub stem: String,
    pub text_channel: Vec<String>,
    pub observation_channel: Vec<String>,
    pub split_kind: SplitKind,
    pub options: Vec<String>,
    pub key: usize,
    pub scenario_id: String,
    /// Agent whose mental state the question is about.
    pub target: AgentId,
    /// Empty when only the option texts are available.
    #[serde(default)]
    pub hypotheses: Vec<Hypothesis>,
    pub label: BalanceLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeliefKind {
    True,
    False,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub apartment: String,
    pub s0: WorldState,
    pub specs: [AgentSpec; 2],
    pub names: [String; 2],
    pub language: bool,
    /// Belief kind of the agent whose belief drives the interaction: the
    /// responder with language, the first placer without.
    pub belief_kind: BeliefKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub config: ScenarioConfig,
    pub trace: ScenarioTrace,
    pub channels: ModalityChannels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub scenarios: usize,
    pub per_type: usize,
    pub horizon: u32,
    pub beta: f64,
    pub tau: f64,
    pub margin: f64,
    /// Candidate scenarios tried before giving up.
    pub max_candidates: usize,
    pub budget: SearchBudget,
    #[serde(skip, default = "Apartment::templates")]
    pub apartments: Vec<Apartment>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            scenarios: DEFAULT_SCENARIOS,
            per_type: DEFAULT_PER_TYPE,
            horizon: DEFAULT_HORIZON,
            beta: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            margin: DEFAULT_MARGIN,
            max_candidates: 20_000,
            budget: SearchBudget::default(),
            apartments: Apartment::templates(),
        }
    }
}

impl GenConfig {
    pub fn scoring(&self) -> ScoringParams {
        ScoringParams {
            beta: self.beta,
            tau: self.tau,
        }
    }

    pub fn rollout_params(&self, language: bool) -> RolloutParams {
        RolloutParams {
            horizon: self.horizon,
            tau: self.tau,
            beta: self.beta,
            language,
        }
    }

    /// Scenario split: two thirds carry a conversation.
    pub fn language_scenarios(&self) -> usize {
        (self.scenarios as f64 * 2.0 / 3.0).round() as usize
    }

    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if !(self.beta > 0.0 && self.tau > 0.0 && self.margin > 0.0) {
            return bad("beta, tau and margin must be positive");
        }
        if self.horizon == 0 || self.max_candidates == 0 {
            return bad("horizon and candidate budget must be positive");
        }
        if self.apartments.is_empty() {
            return bad("no apartments");
        }
        let lang = self.language_scenarios();
        let silent = self.scenarios - lang;
        if self.per_type > 2 * lang {
            return bad("too few language scenarios for the requested belief and social-goal questions");
        }
        if self.per_type > 0 && silent == 0 {
            return bad("belief-of-goal questions need scenarios without language");
        }
        Ok(())
    }
}

fn uniform_or_delta(locations: &[String], kind: BeliefKind, truth: &str, false_at: Option<&str>) -> Categorical {
    match kind {
        BeliefKind::True => Categorical::delta(locations, truth),
        BeliefKind::False => Categorical::delta(locations, false_at.expect("false location chosen")),
        BeliefKind::Uniform => Categorical::uniform(locations),
    }
}

fn pick_kind(rng: &mut ChaCha8Rng) -> BeliefKind {
    *[BeliefKind::True, BeliefKind::False, BeliefKind::Uniform]
        .choose(rng)
        .expect("nonempty")
}

fn pick_names(rng: &mut ChaCha8Rng) -> [String; 2] {
    let two: Vec<&&str> = NAMES.choose_multiple(rng, 2).collect();
    [two[0].to_string(), two[1].to_string()]
}

fn place_objects(apt: &Apartment, rng: &mut ChaCha8Rng, locations: &[String]) -> Option<Vec<(String, String)>> {
    if apt.object_vocabulary.len() < 2 || locations.is_empty() {
        return None;
    }
    let k = apt.object_vocabulary.len().min(3);
    Some(
        apt.object_vocabulary
            .choose_multiple(rng, k)
            .map(|o| (o.clone(), locations.choose(rng).expect("nonempty").clone()))
            .collect(),
    )
}

/// Surfaces in `room`; containers start closed.
fn visible_at_start(apt: &Apartment, room: &str) -> Vec<String> {
    apt.furniture_in(room)
        .filter(|f| f.kind == FurnitureKind::Surface)
        .map(|f| f.id.clone())
        .collect()
}

fn try_language(apt: &Apartment, rng: &mut ChaCha8Rng) -> Result<Option<ScenarioConfig>, GenError> {
    let locations = apt.furniture_ids();
    if locations.len() < 2 {
        return Ok(None);
    }
    let room = apt.rooms.choose(rng).expect("rooms").clone();
    let Some(objects) = place_objects(apt, rng, &locations) else {
        return Ok(None);
    };
    let (o, truth) = objects[0].clone();
    let (o2, truth2) = objects[1].clone();
    let visible = visible_at_start(apt, &room);
    if visible.contains(&truth) {
        return Ok(None);
    }
    let kind = pick_kind(rng);
    let wrong: Vec<&String> = locations
        .iter()
        .filter(|l| **l != truth && !visible.contains(l))
        .collect();
    let false_at = wrong.choose(rng).map(|s| s.as_str());
    if kind == BeliefKind::False && false_at.is_none() {
        return Ok(None);
    }
    let social = *SocialGoal::ALL.choose(rng).expect("nonempty");
    let names = pick_names(rng);
    let placements: BTreeMap<String, String> = objects.into_iter().collect();
    let poses = [(AgentId(0), Pose::in_room(&room)), (AgentId(1), Pose::in_room(&room))]
        .into_iter()
        .collect();
    let s0 = WorldState::new(apt, poses, placements)?;
    let inquirer = AgentSpec {
        id: AgentId(0),
        physical_goal: PhysicalGoal::find(o.clone()),
        social_goal: SocialGoal::Independent,
        initial_belief: Belief::new().with(o.clone(), Categorical::uniform(&locations)),
        initial_goal_belief: uninformed_goal_belief(apt),
    };
    let responder = AgentSpec {
        id: AgentId(1),
        physical_goal: PhysicalGoal::find(o2.clone()),
        social_goal: social,
        initial_belief: Belief::new()
            .with(o.clone(), uniform_or_delta(&locations, kind, &truth, false_at))
            .with(o2, Categorical::delta(&locations, &truth2)),
        initial_goal_belief: uninformed_goal_belief(apt),
    };
    Ok(Some(ScenarioConfig {
        apartment: apt.id.clone(),
        s0,
        specs: [inquirer, responder],
        names,
        language: true,
        belief_kind: kind,
        seed: rng.gen(),
    }))
}

fn try_silent(apt: &Apartment, rng: &mut ChaCha8Rng) -> Result<Option<ScenarioConfig>, GenError> {
    let locations = apt.furniture_ids();
    if locations.len() < 3 {
        return Ok(None);
    }
    let Some(objects) = place_objects(apt, rng, &locations) else {
        return Ok(None);
    };
    let (o, truth) = objects[0].clone();
    let others: Vec<&String> = locations.iter().filter(|l| **l != truth).collect();
    let targets: Vec<&&String> = others.choose_multiple(rng, 2).collect();
    let (x_j, x_i) = ((*targets[0]).clone(), (*targets[1]).clone());
    let kind = pick_kind(rng);
    let false_at = others.choose(rng).map(|s| s.as_str());
    let social = *[SocialGoal::Help, SocialGoal::Hinder].choose(rng).expect("nonempty");
    let names = pick_names(rng);
    let j_room = apt.rooms.choose(rng).expect("rooms").clone();
    let i_room = apt.room_of(&x_j).expect("furniture has a room").to_string();
    let placements: BTreeMap<String, String> = objects.into_iter().collect();
    let poses = [(AgentId(0), Pose::in_room(j_room)), (AgentId(1), Pose::in_room(i_room))]
        .into_iter()
        .collect();
    let s0 = WorldState::new(apt, poses, placements)?;
    let placer = AgentSpec {
        id: AgentId(0),
        physical_goal: PhysicalGoal::rearrange(o.clone(), x_j.clone()),
        social_goal: SocialGoal::Independent,
        initial_belief: Belief::new().with(o.clone(), uniform_or_delta(&locations, kind, &truth, false_at)),
        initial_goal_belief: uninformed_goal_belief(apt),
    };
    let believed = if social == SocialGoal::Help { &x_i } else { &x_j };
    let mover = AgentSpec {
        id: AgentId(1),
        physical_goal: PhysicalGoal::rearrange(o.clone(), x_i.clone()),
        social_goal: social,
        initial_belief: Belief::new().with(o.clone(), Categorical::delta(&locations, &truth)),
        initial_goal_belief: GoalBelief::delta(PhysicalGoal::rearrange(o, believed.clone())),
    };
    Ok(Some(ScenarioConfig {
        apartment: apt.id.clone(),
        s0,
        specs: [placer, mover],
        names,
        language: false,
        belief_kind: kind,
        seed: rng.gen(),
    }))
}

/// Draw one scenario configuration.
///
/// With language, an uncertain agent looking for an object meets a second
/// agent who may help, hinder or ignore it. Without language, both agents
/// want the same single object on different pieces of furniture.
pub fn sample_scenario(rng: &mut ChaCha8Rng, cfg: &GenConfig, language: bool) -> Result<ScenarioConfig, GenError> {
    if cfg.apartments.is_empty() {
        return Err(GenError::InvalidConfig("no apartments".into()));
    }
    for _ in 0..MAX_RESAMPLES {
        let apt = cfg.apartments.choose(rng).expect("nonempty");
        let drawn = if language {
            try_language(apt, rng)?
        } else {
            try_silent(apt, rng)?
        };
        if let Some(c) = drawn {
            return Ok(c);
        }
    }
    Err(GenError::ConstraintUnsatisfiable {
        attempts: MAX_RESAMPLES,
    })
}

fn scene_of(config: &ScenarioConfig) -> Scene {
    Scene {
        apartment: config.apartment.clone(),
        names: [
            (AgentId(0), config.names[0].clone()),
            (AgentId(1), config.names[1].clone()),
        ]
        .into_iter()
        .collect(),
        starts: config.s0.agent_pose.clone(),
        container_open: config.s0.container_open.clone(),
    }
}

/// Render a trace into two channels with a fixed split.
pub fn split_as(config: &ScenarioConfig, apt: &Apartment, trace: &ScenarioTrace, kind: SplitKind) -> ModalityChannels {
    let scene = scene_of(config);
    let name = |a: AgentId| scene.name(a).to_string();
    let mut text = Vec::new();
    let mut obs = scene.render();
    let half = trace.steps.len().div_ceil(2);
    for (k, step) in trace.steps.iter().enumerate() {
        let who = name(step.agent);
        match kind {
            SplitKind::ConversationVsActions => {
                if let Some(line) = utterance_line(apt, step.tick, &who, &step.utterance) {
                    text.push(line);
                }
                obs.push(observation_line(step.tick, &who, &step.action));
            }
            SplitKind::FirstHalfText | SplitKind::SecondHalfText => {
                let in_text = (k < half) == (kind == SplitKind::FirstHalfText);
                if in_text {
                    text.push(text_action_line(apt, step.tick, &who, &step.action));
                } else {
                    obs.push(observation_line(step.tick, &who, &step.action));
                }
            }
        }
    }
    ModalityChannels {
        text_channel: text,
        observation_channel: obs,
        split_kind: kind,
    }
}

/// Conversations go to text; silent traces are cut at the midpoint with a
/// coin flip deciding which half is told in text.
pub fn split_modalities(
    config: &ScenarioConfig,
    apt: &Apartment,
    trace: &ScenarioTrace,
    rng: &mut ChaCha8Rng,
) -> ModalityChannels {
    let has_talk = trace.steps.iter().any(|s| !s.utterance.is_silence());
    let kind = if has_talk {
        SplitKind::ConversationVsActions
    } else if rng.gen_bool(0.5) {
        SplitKind::FirstHalfText
    } else {
        SplitKind::SecondHalfText
    };
    split_as(config, apt, trace, kind)
}

/// Replace the object of observation line `index` (a grab or put) with the
/// placeholder. Returns the hidden object.
pub fn inject_placeholder(channels: &mut ModalityChannels, index: usize) -> Option<String> {
    let line = channels.observation_channel.get(index)?;
    let parts: Vec<&str> = line.split(" | ").collect();
    if parts.len() != 5 || !(parts[2] == "grab" || parts[2] == "put") {
        return None;
    }
    let hidden = parts[3].to_string();
    let mut out: Vec<String> = parts.iter().map(|s| s.to_string()).collect();
    out[3] = PLACEHOLDER.to_string();
    channels.observation_channel[index] = out.join(" | ");
    Some(hidden)
}

/// Belief-question hypothesis: the speaker believed `object` was at `at`.
pub fn belief_hypothesis(apt: &Apartment, object: &str, at: &str, social: SocialGoal) -> Hypothesis {
    Hypothesis {
        belief_of_state: Belief::new().with(object, Categorical::delta(&apt.furniture_ids(), at)),
        social_goal: social,
        belief_of_goal: GoalBelief::delta(PhysicalGoal::find(object)),
    }
}

/// Social-question hypothesis: the speaker knows whether `object` is at `at`.
pub fn social_hypothesis(apt: &Apartment, object: &str, at: &str, present: bool, social: SocialGoal) -> Hypothesis {
    let locations = apt.furniture_ids();
    let marginal = if present {
        Categorical::delta(&locations, at)
    } else {
        let rest: Vec<&String> = locations.iter().filter(|l| *l != at).collect();
        let mut weights: BTreeMap<String, f64> = locations.iter().map(|l| (l.clone(), 0.0)).collect();
        for l in &rest {
            weights.insert((*l).clone(), 1.0 / rest.len() as f64);
        }
        Categorical::from_weights(weights).expect("positive mass")
    };
    Hypothesis {
        belief_of_state: Belief::new().with(object, marginal),
        social_goal: social,
        belief_of_goal: GoalBelief::delta(PhysicalGoal::find(object)),
    }
}

/// Belief-of-goal hypothesis: the mover thought the other wanted `object`
/// at `wanted`.
pub fn belief_of_goal_hypothesis(
    apt: &Apartment,
    object: &str,
    initial: Option<&str>,
    wanted: &str,
    social: SocialGoal,
) -> Hypothesis {
    let locations = apt.furniture_ids();
    let marginal = match initial {
        Some(at) => Categorical::delta(&locations, at),
        None => Categorical::uniform(&locations),
    };
    Hypothesis {
        belief_of_state: Belief::new().with(object, marginal),
        social_goal: social,
        belief_of_goal: GoalBelief::delta(PhysicalGoal::rearrange(object, wanted)),
    }
}

pub(crate) fn belief_stem(responder: &str, inquirer: &str, object: &str, condition: SocialGoal) -> String {
    let o = display_name(object);
    match condition {
        SocialGoal::Hinder => format!(
            "If {responder} has been trying to hinder {inquirer} from finding the {o}, which of the following statements is LEAST likely?"
        ),
        _ => format!(
            "If {responder} has been trying to help {inquirer} find the {o}, which of the following statements is MOST likely?"
        ),
    }
}

pub(crate) fn belief_option(apt: &Apartment, responder: &str, object: &str, at: &str) -> String {
    format!(
        "When giving information, {responder} believed that the {} was {}.",
        display_name(object),
        location_phrase(apt, at)
    )
}

pub(crate) fn social_stem(apt: &Apartment, responder: &str, at: &str, polarity: Polarity) -> String {
    format!(
        "Assuming that {responder} knows what is {}, which of the following statements is {} likely?",
        location_phrase(apt, at),
        polarity.word()
    )
}

pub(crate) fn social_option(responder: &str, inquirer: &str, object: &str, social: SocialGoal) -> String {
    let o = display_name(object);
    match social {
        SocialGoal::Help => {
            format!("When giving information, {responder} has been trying to help {inquirer} locate the {o}.")
        }
        SocialGoal::Hinder => format!(
            "When giving information, {responder} has been trying to prevent {inquirer} from finding the {o}."
        ),
        SocialGoal::Independent => {
            format!("When giving information, {responder} was indifferent towards {inquirer}'s goals.")
        }
    }
}

pub(crate) const BOG_STEM: &str = "Based on the actions of the agents, which of the following statements is MOST likely?";

pub(crate) fn belief_of_goal_option(apt: &Apartment, mover: &str, placer: &str, object: &str, wanted: &str, social: SocialGoal) -> String {
    let o = display_name(object);
    let verb = if social == SocialGoal::Hinder { "hinder" } else { "help" };
    format!(
        "{mover} believed that {placer} wanted the {o} {}, and moved the {o} to {verb} {placer}.",
        location_phrase(apt, wanted)
    )
}

/// Furniture whose location phrase occurs in `text`, longest match first.
fn find_location(apt: &Apartment, text: &str) -> Option<String> {
    apt.furniture_ids()
        .into_iter()
        .map(|f| (location_phrase(apt, &f), f))
        .filter(|(p, _)| text.contains(p.as_str()))
        .max_by_key(|(p, _)| p.len())
        .map(|(_, f)| f)
}

fn template_err(what: &str, text: &str) -> LimpError {
    LimpError::Template(format!("{what}: {text}"))
}

/// Rebuild option hypotheses from the fixed question templates.
pub fn hypotheses_from_text(question: &Question, fused: &FusedContext) -> Result<Vec<Hypothesis>, LimpError> {
    let apt = &fused.initial_state.apartment;
    let lex = Lexicon::new(apt);
    let first_object = |texts: &[&str]| -> Option<String> {
        texts.iter().find_map(|t| lex.objects_in(t).into_iter().next())
    };
    let option_refs: Vec<&str> = question.options.iter().map(String::as_str).collect();
    match question.qtype {
        QType::Belief => {
            let social = if question.stem.contains("trying to hinder") {
                SocialGoal::Hinder
            } else if question.stem.contains("trying to help") {
                SocialGoal::Help
            } else {
                return Err(template_err("no social condition", &question.stem));
            };
            let object = first_object(&[&question.stem]).ok_or_else(|| template_err("no object", &question.stem))?;
            question
                .options
                .iter()
                .map(|opt| {
                    let at = find_location(apt, opt).ok_or_else(|| template_err("no location", opt))?;
                    Ok(belief_hypothesis(apt, &object, &at, social))
                })
                .collect()
        }
        QType::SocialGoal => {
            let at = find_location(apt, &question.stem).ok_or_else(|| template_err("no location", &question.stem))?;
            let object = first_object(&option_refs)
                .or_else(|| {
                    fused.merged_steps.iter().find_map(|s| match &s.utterance {
                        Utterance::Inquiry { objects } => objects.first().cloned(),
                        _ => None,
                    })
                })
                .ok_or_else(|| template_err("no object", &question.stem))?;
            let initial = fused.initial_state.placements.get(&object).ok_or_else(|| {
                LimpError::UnresolvableCondition(format!(
                    "where the {} started is unknown, so the contents of the {} cannot be checked",
                    display_name(&object),
                    display_name(&at)
                ))
            })?;
            let present = *initial == at;
            question
                .options
                .iter()
                .map(|opt| {
                    let social = if opt.contains("trying to help") {
                        SocialGoal::Help
                    } else if opt.contains("trying to prevent") {
                        SocialGoal::Hinder
                    } else if opt.contains("indifferent") {
                        SocialGoal::Independent
                    } else {
                        return Err(template_err("no social goal", opt));
                    };
                    Ok(social_hypothesis(apt, &object, &at, present, social))
                })
                .collect()
        }
        QType::BeliefOfGoal => {
            let object = first_object(&option_refs).ok_or_else(|| template_err("no object", &question.stem))?;
            let initial = fused.initial_state.placements.get(&object).map(String::as_str);
            question
                .options
                .iter()
                .map(|opt| {
                    let wanted = find_location(apt, opt).ok_or_else(|| template_err("no location", opt))?;
                    let social = if opt.contains(" to hinder ") {
                        SocialGoal::Hinder
                    } else if opt.contains(" to help ") {
                        SocialGoal::Help
                    } else {
                        return Err(template_err("no social goal", opt));
                    };
                    Ok(belief_of_goal_hypothesis(apt, &object, initial, &wanted, social))
                })
                .collect()
        }
    }
}

struct Exchange {
    responder: AgentId,
    object: String,
    stated: String,
    state: WorldState,
}

fn find_exchange(rec: &ScenarioRecord, apt: &Apartment) -> Result<Exchange, GenError> {
    let states = rec.trace.states(apt)?;
    for (k, step) in rec.trace.steps.iter().enumerate() {
        if let Utterance::Inform { facts } = &step.utterance {
            if let Some((o, l)) = facts.first() {
                return Ok(Exchange {
                    responder: step.agent,
                    object: o.clone(),
                    stated: l.clone(),
                    state: states[k].clone(),
                });
            }
        }
    }
    Err(GenError::Inapplicable("no inform in the trace".into()))
}

fn spec_of(rec: &ScenarioRecord, agent: AgentId) -> &AgentSpec {
    &rec.config.specs[agent.0 as usize]
}

fn apartment_of(rec: &ScenarioRecord) -> Result<Apartment, GenError> {
    Ok(Apartment::template(&rec.config.apartment)?)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    rec: &ScenarioRecord,
    qtype: QType,
    polarity: Polarity,
    stem: String,
    mut options: Vec<(String, Hypothesis, bool)>,
    target: AgentId,
    label: BalanceLabel,
    rng: &mut ChaCha8Rng,
) -> Question {
    options.shuffle(rng);
    let key = options.iter().position(|(_, _, k)| *k).expect("one keyed option");
    Question {
        id: String::new(),
        qtype,
        polarity,
        stem,
        text_channel: rec.channels.text_channel.clone(),
        observation_channel: rec.channels.observation_channel.clone(),
        split_kind: rec.channels.split_kind,
        options: options.iter().map(|(t, _, _)| t.clone()).collect(),
        key,
        scenario_id: rec.id.clone(),
        target,
        hypotheses: options.into_iter().map(|(_, h, _)| h).collect(),
        label,
    }
}

/// Where did the responder think the object was, given a stated social
/// goal? Helpers are asked the MOST likely belief and hinderers the LEAST.
pub fn make_belief_question(
    rec: &ScenarioRecord,
    condition: SocialGoal,
    rng: &mut ChaCha8Rng,
) -> Result<Question, GenError> {
    if condition == SocialGoal::Independent {
        return Err(GenError::Inapplicable("belief questions condition on help or hinder".into()));
    }
    let apt = apartment_of(rec)?;
    let ex = find_exchange(rec, &apt)?;
    if spec_of(rec, ex.responder).social_goal == SocialGoal::Independent {
        return Err(GenError::Inapplicable("responder acts independently".into()));
    }
    let inquirer = ex.responder.other();
    let seen = observe(&apt, &ex.state, inquirer)?.visible_locations;
    let pool: Vec<String> = apt
        .furniture_ids()
        .into_iter()
        .filter(|l| *l != ex.stated && !seen.contains(l))
        .collect();
    if pool.len() < 2 {
        return Err(GenError::Inapplicable("fewer than two unsearched locations".into()));
    }
    let distractors: Vec<&String> = pool.choose_multiple(rng, 2).collect();
    let r = &rec.config.names[ex.responder.0 as usize];
    let i = &rec.config.names[inquirer.0 as usize];
    let mut options = vec![(
        belief_option(&apt, r, &ex.object, &ex.stated),
        belief_hypothesis(&apt, &ex.object, &ex.stated, condition),
        true,
    )];
    for d in distractors {
        options.push((
            belief_option(&apt, r, &ex.object, d),
            belief_hypothesis(&apt, &ex.object, d, condition),
            false,
        ));
    }
    let truthful = ex.state.placements.get(&ex.object) == Some(&ex.stated);
    let polarity = if condition == SocialGoal::Hinder {
        Polarity::Least
    } else {
        Polarity::Most
    };
    Ok(assemble(
        rec,
        QType::Belief,
        polarity,
        belief_stem(r, i, &ex.object, condition),
        options,
        ex.responder,
        if truthful {
            BalanceLabel::TrueBelief
        } else {
            BalanceLabel::FalseBelief
        },
        rng,
    ))
}

/// Was the responder helping, hindering or indifferent, assuming it knew
/// what the stated location held?
pub fn make_social_goal_question(
    rec: &ScenarioRecord,
    polarity: Polarity,
    rng: &mut ChaCha8Rng,
) -> Result<Question, GenError> {
    let apt = apartment_of(rec)?;
    let ex = find_exchange(rec, &apt)?;
    if spec_of(rec, ex.responder).social_goal == SocialGoal::Independent {
        return Err(GenError::Inapplicable("responder acts independently".into()));
    }
    let present = ex.state.placements.get(&ex.object) == Some(&ex.stated);
    let key = match (present, polarity) {
        (true, Polarity::Most) | (false, Polarity::Least) => SocialGoal::Help,
        _ => SocialGoal::Hinder,
    };
    let r = &rec.config.names[ex.responder.0 as usize];
    let i = &rec.config.names[ex.responder.other().0 as usize];
    let options = SocialGoal::ALL
        .iter()
        .map(|g| {
            (
                social_option(r, i, &ex.object, *g),
                social_hypothesis(&apt, &ex.object, &ex.stated, present, *g),
                *g == key,
            )
        })
        .collect();
    Ok(assemble(
        rec,
        QType::SocialGoal,
        polarity,
        social_stem(&apt, r, &ex.stated, polarity),
        options,
        ex.responder,
        if present {
            BalanceLabel::Cooperative
        } else {
            BalanceLabel::Adversarial
        },
        rng,
    ))
}

/// Ground truth of a relocation: who moved what where, and the keyed pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Relocation {
    pub placer: AgentId,
    pub mover: AgentId,
    pub object: String,
    pub initial: String,
    pub placed_at: String,
    pub moved_to: String,
    pub key: (SocialGoal, String),
    pub label: BalanceLabel,
}

impl Relocation {
    /// Rival option pairs, excluding the key and the pair that explains the
    /// same move equally well from the opposite stance.
    pub fn rivals(&self, apt: &Apartment) -> Vec<(SocialGoal, String)> {
        let mut out = Vec::new();
        for social in [SocialGoal::Help, SocialGoal::Hinder] {
            for f in apt.furniture_ids() {
                let pair = (social, f);
                let twin = (social == SocialGoal::Hinder && pair.1 == self.placed_at)
                    || (social == SocialGoal::Help && pair.1 == self.moved_to);
                if pair != self.key && !twin {
                    out.push(pair);
                }
            }
        }
        out
    }
}

pub fn relocation(rec: &ScenarioRecord) -> Result<Relocation, GenError> {
    if rec.config.language {
        return Err(GenError::Inapplicable("trace has a conversation".into()));
    }
    let placer = AgentId(0);
    let mover = AgentId(1);
    let object = spec_of(rec, placer).physical_goal.object().to_string();
    let steps = &rec.trace.steps;
    let put_by = |agent: AgentId, from: usize| {
        steps.iter().enumerate().skip(from).find_map(|(k, s)| match &s.action {
            PrimitiveAction::Put { object: o, to } if s.agent == agent && *o == object => Some((k, to.clone())),
            _ => None,
        })
    };
    let (k, placed_at) = put_by(placer, 0).ok_or_else(|| GenError::Inapplicable("object never placed".into()))?;
    let (_, moved_to) = put_by(mover, k + 1).ok_or_else(|| GenError::Inapplicable("object never moved".into()))?;
    let spec = spec_of(rec, mover);
    let wanted = match spec.initial_goal_belief.mode() {
        Some(PhysicalGoal::Rearrange { target, .. }) => target.clone(),
        _ => return Err(GenError::Inapplicable("mover has no rearrangement belief".into())),
    };
    let truth = match &spec_of(rec, placer).physical_goal {
        PhysicalGoal::Rearrange { target, .. } => target.clone(),
        _ => return Err(GenError::Inapplicable("placer is not rearranging".into())),
    };
    let initial = rec
        .trace
        .s0
        .placements
        .get(&object)
        .cloned()
        .ok_or_else(|| GenError::Inapplicable("object not placed at the start".into()))?;
    Ok(Relocation {
        placer,
        mover,
        label: if wanted == truth {
            BalanceLabel::TrueGoalBelief
        } else {
            BalanceLabel::FalseGoalBelief
        },
        key: (spec.social_goal, wanted),
        object,
        initial,
        placed_at,
        moved_to,
    })
}

/// Belief-of-goal question with the given rival pairs.
pub fn belief_of_goal_question_with(
    rec: &ScenarioRecord,
    reloc: &Relocation,
    rivals: &[(SocialGoal, String)],
    rng: &mut ChaCha8Rng,
) -> Result<Question, GenError> {
    let apt = apartment_of(rec)?;
    let mover = &rec.config.names[reloc.mover.0 as usize];
    let placer = &rec.config.names[reloc.placer.0 as usize];
    let option = |(social, wanted): &(SocialGoal, String), keyed: bool| {
        (
            belief_of_goal_option(&apt, mover, placer, &reloc.object, wanted, *social),
            belief_of_goal_hypothesis(&apt, &reloc.object, Some(&reloc.initial), wanted, *social),
            keyed,
        )
    };
    let mut options = vec![option(&reloc.key, true)];
    options.extend(rivals.iter().map(|r| option(r, false)));
    Ok(assemble(
        rec,
        QType::BeliefOfGoal,
        Polarity::Most,
        BOG_STEM.to_string(),
        options,
        reloc.mover,
        reloc.label,
        rng,
    ))
}

/// What did the mover think the placer wanted, paired with its stance?
pub fn make_belief_of_goal_question(rec: &ScenarioRecord, rng: &mut ChaCha8Rng) -> Result<Question, GenError> {
    let reloc = relocation(rec)?;
    let apt = apartment_of(rec)?;
    let pool = reloc.rivals(&apt);
    if pool.len() < 2 {
        return Err(GenError::Inapplicable("too few rival pairs".into()));
    }
    let rivals: Vec<(SocialGoal, String)> = pool.choose_multiple(rng, 2).cloned().collect();
    belief_of_goal_question_with(rec, &reloc, &rivals, rng)
}

/// Whether the keyed option clearly wins under the question's polarity.
pub fn verify_question(question: &Question, result: &PosteriorResult, margin: f64) -> Result<bool, GenError> {
    let n = question.options.len();
    if question.key >= n || result.posterior.len() != n {
        return Err(GenError::MalformedKey {
            key: question.key,
            options: n,
        });
    }
    if result.degraded {
        return Ok(false);
    }
    let p = &result.posterior;
    let pk = p[question.key];
    let rivals = (0..n).filter(|i| *i != question.key).map(|i| p[i]);
    Ok(match question.polarity {
        Polarity::Most => pk > 0.0 && rivals.into_iter().all(|r| pk >= margin * r),
        Polarity::Least => rivals.into_iter().all(|r| r > pk && r >= margin * pk),
    })
}

/// Exact oracle posterior for a question, from its channels alone.
pub fn oracle_posterior(question: &Question, scorer: &OracleScorer) -> Result<PosteriorResult, GenError> {
    let fused = fuse(&question.text_channel, &question.observation_channel)?;
    let hyps = parse_hypotheses(question, &fused)?;
    let prior = vec![1.0 / hyps.len() as f64; hyps.len()];
    Ok(posterior(&hyps, &fused, scorer, &prior, question.target, 0.0)?)
}

pub fn verify_with_oracle(question: &Question, scorer: &OracleScorer, margin: f64) -> Result<bool, GenError> {
    let result = oracle_posterior(question, scorer)?;
    verify_question(question, &result, margin)
}

/// Roll a configuration out and split it into channels.
pub fn realize(
    id: String,
    config: ScenarioConfig,
    cfg: &GenConfig,
    scorer: &OracleScorer,
    split_rng: &mut ChaCha8Rng,
) -> Result<ScenarioRecord, GenError> {
    let apt = match cfg.apartments.iter().find(|a| a.id == config.apartment) {
        Some(a) => a.clone(),
        None => Apartment::template(&config.apartment)?,
    };
    let planner = scorer.planner(&apt)?;
    let trace = rollout(
        &planner,
        &config.s0,
        &config.specs,
        &cfg.rollout_params(config.language),
        config.seed,
    )?;
    let channels = split_modalities(&config, &apt, &trace, split_rng);
    Ok(ScenarioRecord {
        id,
        config,
        trace,
        channels,
    })
}

struct Candidate {
    record: ScenarioRecord,
    questions: Vec<Question>,
    /// Scenario-level balance side: stated location held the object, or
    /// the mover's goal belief was true.
    first_side: bool,
}

fn language_candidate(seed: u64, index: usize, cfg: &GenConfig, scorer: &OracleScorer) -> Result<Result<Candidate, String>, GenError> {
    let i = index as u64;
    let config = sample_scenario(&mut substream(seed, "world", i), cfg, true)?;
    let config = ScenarioConfig {
        seed: substream_seed(seed, "rollout", i),
        ..config
    };
    let record = match realize(format!("lang-{index:05}"), config, cfg, scorer, &mut substream(seed, "channels", i)) {
        Ok(r) => r,
        Err(e) => return Ok(Err(format!("rollout: {e}"))),
    };
    let mut qrng = substream(seed, "questions", i);
    let mut questions = Vec::new();
    let makers: [&dyn Fn(&mut ChaCha8Rng) -> Result<Question, GenError>; 4] = [
        &|r| make_belief_question(&record, SocialGoal::Help, r),
        &|r| make_belief_question(&record, SocialGoal::Hinder, r),
        &|r| make_social_goal_question(&record, Polarity::Most, r),
        &|r| make_social_goal_question(&record, Polarity::Least, r),
    ];
    for make in makers {
        let q = match make(&mut qrng) {
            Ok(q) => q,
            Err(GenError::Inapplicable(why)) => return Ok(Err(format!("inapplicable: {why}"))),
            Err(e) => return Ok(Err(format!("question: {e}"))),
        };
        match verify_with_oracle(&q, scorer, cfg.margin) {
            Ok(true) => questions.push(q),
            Ok(false) => return Ok(Err(format!("unverified {}", q.qtype.as_str()))),
            Err(e) => return Ok(Err(format!("verification: {e}"))),
        }
    }
    let first_side = questions[2].label == BalanceLabel::Cooperative;
    Ok(Ok(Candidate {
        record,
        questions,
        first_side,
    }))
}

fn silent_candidate(
    seed: u64,
    index: usize,
    per_scenario: usize,
    cfg: &GenConfig,
    scorer: &OracleScorer,
) -> Result<Result<Candidate, String>, GenError> {
    let i = index as u64;
    let config = sample_scenario(&mut substream(seed, "world", (1 << 40) + i), cfg, false)?;
    let config = ScenarioConfig {
        seed: substream_seed(seed, "rollout", (1 << 40) + i),
        ..config
    };
    let record = match realize(
        format!("nolang-{index:05}"),
        config,
        cfg,
        scorer,
        &mut substream(seed, "channels", (1 << 40) + i),
    ) {
        Ok(r) => r,
        Err(e) => return Ok(Err(format!("rollout: {e}"))),
    };
    let reloc = match relocation(&record) {
        Ok(r) => r,
        Err(e) => return Ok(Err(format!("inapplicable: {e}"))),
    };
    let apt = apartment_of(&record)?;
    let mut qrng = substream(seed, "questions", (1 << 40) + i);
    let pool = reloc.rivals(&apt);
    let mut pairs: Vec<[usize; 2]> = Vec::new();
    for a in 0..pool.len() {
        for b in a + 1..pool.len() {
            pairs.push([a, b]);
        }
    }
    pairs.shuffle(&mut qrng);
    let mut questions = Vec::new();
    for [a, b] in pairs {
        if questions.len() == per_scenario {
            break;
        }
        let q = belief_of_goal_question_with(&record, &reloc, &[pool[a].clone(), pool[b].clone()], &mut qrng)?;
        match verify_with_oracle(&q, scorer, cfg.margin) {
            Ok(true) => questions.push(q),
            Ok(false) => {}
            Err(e) => return Ok(Err(format!("verification: {e}"))),
        }
    }
    if questions.is_empty() {
        return Ok(Err("no verified belief-of-goal question".into()));
    }
    Ok(Ok(Candidate {
        first_side: reloc.label == BalanceLabel::TrueGoalBelief,
        record,
        questions,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub counts: BTreeMap<String, usize>,
    pub tallies: BTreeMap<String, BTreeMap<String, usize>>,
    /// Candidate scenarios tried and why the rejected ones were dropped.
    pub candidates: usize,
    pub rejections: BTreeMap<String, usize>,
    pub params: GenConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub scenarios: Vec<ScenarioRecord>,
    pub questions: Vec<Question>,
    pub manifest: Manifest,
}

/// One line of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Scenario(ScenarioRecord),
    Question(Question),
}

// Dispatch on `kind` by hand: the derived tagged form buffers the record and
// then rejects integer-keyed maps such as per-agent poses.
impl<'de> Deserialize<'de> for Record {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut v = serde_json::Value::deserialize(d)?;
        let kind = v
            .as_object_mut()
            .and_then(|m| m.remove("kind"))
            .ok_or_else(|| D::Error::missing_field("kind"))?;
        match kind.as_str() {
            Some("scenario") => serde_json::from_value(v).map(Record::Scenario).map_err(D::Error::custom),
            Some("question") => serde_json::from_value(v).map(Record::Question).map_err(D::Error::custom),
            _ => Err(D::Error::unknown_variant(&kind.to_string(), &["scenario", "question"])),
        }
    }
}

/// Counts and balance tallies recomputed from records.
pub fn tally(scenarios: &[ScenarioRecord], questions: &[Question]) -> (BTreeMap<String, usize>, BTreeMap<String, BTreeMap<String, usize>>) {
    let mut counts = BTreeMap::new();
    counts.insert("scenarios".to_string(), scenarios.len());
    counts.insert(
        "language".to_string(),
        scenarios.iter().filter(|s| s.config.language).count(),
    );
    counts.insert(
        "no_language".to_string(),
        scenarios.iter().filter(|s| !s.config.language).count(),
    );
    counts.insert("questions".to_string(), questions.len());
    let mut tallies: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for t in QType::ALL {
        let of_type: Vec<&Question> = questions.iter().filter(|q| q.qtype == t).collect();
        counts.insert(t.as_str().to_string(), of_type.len());
        let entry = tallies.entry(t.as_str().to_string()).or_default();
        for side in BalanceLabel::sides(t) {
            entry.insert(side.as_str().to_string(), of_type.iter().filter(|q| q.label == side).count());
        }
    }
    (counts, tallies)
}

/// Pick `n` questions in order, as close to half per side as the supply
/// allows.
fn balanced_pick(qs: Vec<Question>, qtype: QType, n: usize) -> Vec<Question> {
    let [a, _] = BalanceLabel::sides(qtype);
    let want_a = n.div_ceil(2);
    let want_b = n / 2;
    let have_a = qs.iter().filter(|q| q.label == a).count();
    let have_b = qs.len() - have_a;
    let (take_a, take_b) = if have_a < want_a {
        (have_a, (n - have_a).min(have_b))
    } else if have_b < want_b {
        ((n - have_b).min(have_a), have_b)
    } else {
        (want_a, want_b)
    };
    let (mut ta, mut tb) = (0, 0);
    qs.into_iter()
        .filter(|q| {
            if q.label == a {
                ta += 1;
                ta <= take_a
            } else {
                tb += 1;
                tb <= take_b
            }
        })
        .collect()
}

/// Rejection-sample scenarios and questions until every quota is met.
pub fn build_dataset(seed: u64, cfg: &GenConfig) -> Result<Dataset, GenError> {
    cfg.validate()?;
    let scorer = OracleScorer::with_budget(cfg.scoring(), cfg.budget);
    let n_lang = cfg.language_scenarios();
    let n_silent = cfg.scenarios - n_lang;
    // questions each silent scenario must supply, by balance side
    let share = |questions: usize, scenarios: usize| if scenarios == 0 { 0 } else { questions.div_ceil(scenarios) };
    let silent_need = [
        share(cfg.per_type.div_ceil(2), n_silent.div_ceil(2)),
        share(cfg.per_type / 2, n_silent / 2),
    ];
    let per_silent = silent_need[0].max(silent_need[1]);
    let mut diagnostics: BTreeMap<String, usize> = BTreeMap::new();
    let mut tried = 0usize;
    let mut collect = |language: bool,
                       quota: usize,
                       need: [usize; 2],
                       diagnostics: &mut BTreeMap<String, usize>|
     -> Result<Vec<Candidate>, GenError> {
        let quotas = [quota.div_ceil(2), quota / 2];
        let mut filled = [0usize, 0usize];
        let mut accepted = Vec::new();
        let mut next = 0usize;
        while filled[0] + filled[1] < quota {
            if tried >= cfg.max_candidates {
                return Err(GenError::BudgetExceeded {
                    candidates: tried,
                    tallies: diagnostics.clone(),
                });
            }
            let batch: Vec<usize> = (next..next + BATCH).collect();
            next += BATCH;
            let results: Vec<Result<Result<Candidate, String>, GenError>> = batch
                .par_iter()
                .map(|&k| {
                    if language {
                        language_candidate(seed, k, cfg, &scorer)
                    } else {
                        silent_candidate(seed, k, per_silent, cfg, &scorer)
                    }
                })
                .collect();
            for r in results {
                if filled[0] + filled[1] >= quota || tried >= cfg.max_candidates {
                    break;
                }
                tried += 1;
                match r? {
                    Ok(c) => {
                        let side = usize::from(!c.first_side);
                        if c.questions.len() < need[side] {
                            *diagnostics.entry("too few verified questions".into()).or_default() += 1;
                        } else if filled[side] < quotas[side] {
                            filled[side] += 1;
                            accepted.push(c);
                        } else {
                            *diagnostics.entry("quota full".into()).or_default() += 1;
                        }
                    }
                    Err(reason) => {
                        let key = reason.split(':').next().unwrap_or(&reason).to_string();
                        *diagnostics.entry(key).or_default() += 1;
                    }
                }
            }
        }
        Ok(accepted)
    };
    let lang = collect(true, n_lang, [4, 4], &mut diagnostics)?;
    let silent = collect(false, n_silent, silent_need, &mut diagnostics)?;

    let mut scenarios = Vec::new();
    let mut pools: BTreeMap<QType, Vec<Question>> = BTreeMap::new();
    for c in lang.into_iter().chain(silent) {
        let mut per_type: BTreeMap<QType, usize> = BTreeMap::new();
        for mut q in c.questions {
            let k = per_type.entry(q.qtype).or_default();
            q.id = format!("{}-{}-{}", c.record.id, q.qtype.as_str(), k);
            *k += 1;
            pools.entry(q.qtype).or_default().push(q);
        }
        scenarios.push(c.record);
    }
    let mut questions = Vec::new();
    for t in QType::ALL {
        questions.extend(balanced_pick(pools.remove(&t).unwrap_or_default(), t, cfg.per_type));
    }
    scenarios.sort_by(|a, b| a.id.cmp(&b.id));
    questions.sort_by(|a, b| a.id.cmp(&b.id));
    let (counts, tallies) = tally(&scenarios, &questions);
    Ok(Dataset {
        scenarios,
        questions,
        manifest: Manifest {
            version: GENERATOR_VERSION.to_string(),
            seed,
            counts,
            tallies,
            candidates: tried,
            rejections: diagnostics,
            params: cfg.clone(),
        },
    })
}

impl Dataset {
    /// JSONL text: scenarios first, then questions.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.scenarios {
            out.push_str(&serde_json::to_string(&Record::Scenario(s.clone())).expect("serializable"));
            out.push('\n');
        }
        for q in &self.questions {
            out.push_str(&serde_json::to_string(&Record::Question(q.clone())).expect("serializable"));
            out.push('\n');
        }
        out
    }

    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.manifest).expect("serializable");
        s.push('\n');
        s
    }
}
