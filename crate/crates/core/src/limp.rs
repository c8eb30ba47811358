//! Inference engine: channel fusion, hypothesis parsing and inverse
//! multi-agent planning with a pluggable policy scorer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::{
    parse_observation_line, parse_scene, parse_text_line, ChannelError, ChannelLine, Lexicon,
    ParsedAction, PlaceholderVerb,
};
use crate::gen::{Polarity, Question};
use crate::mind::{Categorical, GoalBelief, Hypothesis, PhysicalGoal, SocialGoal, Utterance};
use crate::plan::{AgentMind, MindParams, PlanError, Planner, SearchBudget, DEFAULT_BETA};
use crate::world::{apply, legal_actions, AgentId, Apartment, Pose, PrimitiveAction, WorldError, WorldState};

/// Floor applied to scorer outputs before taking logs.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LimpError {
    #[error("{object} grabbed from {first} and from {second} without being put down")]
    InconsistentTrace {
        object: String,
        first: String,
        second: String,
    },
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("condition cannot be resolved: {0}")]
    UnresolvableCondition(String),
    #[error("question text does not match any template: {0}")]
    Template(String),
    #[error("scorer failed: {0}")]
    Scorer(String),
    #[error("no steps to score")]
    NoSteps,
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    World(#[from] WorldError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FromText,
    FromObservation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedStep {
    pub tick: u32,
    pub agent: AgentId,
    /// `None` when the step's action could not be recovered.
    pub action: Option<PrimitiveAction>,
    pub action_source: Option<Provenance>,
    pub utterance: Utterance,
    pub utterance_source: Option<Provenance>,
}

/// Initial state as far as the channels reveal it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialState {
    pub apartment: Apartment,
    pub names: BTreeMap<AgentId, String>,
    pub agent_pose: BTreeMap<AgentId, Pose>,
    pub container_open: BTreeMap<String, bool>,
    /// Placements recovered from the trace.
    pub placements: BTreeMap<String, String>,
    /// Objects that appear somewhere in the context.
    pub mentioned: BTreeSet<String>,
}

impl PartialState {
    pub fn unknown(&self) -> impl Iterator<Item = &String> {
        self.mentioned
            .iter()
            .filter(|o| !self.placements.contains_key(*o))
    }

    /// Concrete state holding only the recovered placements.
    pub fn world_state(&self) -> Result<WorldState, WorldError> {
        let mut s = WorldState::new(&self.apartment, self.agent_pose.clone(), self.placements.clone())?;
        for (c, open) in &self.container_open {
            if s.container_open.contains_key(c) {
                s.container_open.insert(c.clone(), *open);
            }
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguousReference {
    pub step: usize,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedContext {
    pub initial_state: PartialState,
    pub merged_steps: Vec<MergedStep>,
    pub ambiguities: Vec<AmbiguousReference>,
    /// Whether any utterance was exchanged.
    pub language: bool,
}

/// First-grab provenance of each object's initial location.
pub fn retrieve_initial_state(actions: &[PrimitiveAction]) -> Result<BTreeMap<String, String>, LimpError> {
    let mut initial: BTreeMap<String, String> = BTreeMap::new();
    let mut put_seen: BTreeSet<&str> = BTreeSet::new();
    for a in actions {
        match a {
            PrimitiveAction::Grab { object, from } => {
                if put_seen.contains(object.as_str()) {
                    continue;
                }
                match initial.get(object) {
                    Some(prev) if prev != from => {
                        return Err(LimpError::InconsistentTrace {
                            object: object.clone(),
                            first: prev.clone(),
                            second: from.clone(),
                        })
                    }
                    Some(_) => {}
                    None => {
                        initial.insert(object.clone(), from.clone());
                    }
                }
            }
            PrimitiveAction::Put { object, .. } => {
                put_seen.insert(object);
            }
            _ => {}
        }
    }
    Ok(initial)
}

pub fn fuse(text_channel: &[String], observation_channel: &[String]) -> Result<FusedContext, LimpError> {
    fuse_with(text_channel, observation_channel, &Apartment::templates())
}

#[derive(Clone)]
enum Track {
    At(String),
    Held(AgentId),
}

/// Merge both channels into one chronological step list and recover the
/// initial placements.
pub fn fuse_with(
    text_channel: &[String],
    observation_channel: &[String],
    apartments: &[Apartment],
) -> Result<FusedContext, LimpError> {
    let (scene, apt) = parse_scene(observation_channel, apartments)?;
    let lex = Lexicon::new(&apt);

    struct Slot {
        action: Option<(ParsedAction, Provenance)>,
        utterance: Option<(Utterance, Provenance)>,
    }
    let mut slots: BTreeMap<(u32, AgentId), Slot> = BTreeMap::new();
    let mut put = |tick, agent, line: ChannelLine, src: Provenance| {
        let slot = slots.entry((tick, agent)).or_insert(Slot {
            action: None,
            utterance: None,
        });
        match line {
            ChannelLine::Action { action, .. } => {
                if slot.action.is_none() {
                    slot.action = Some((action, src));
                }
            }
            ChannelLine::Utterance { utterance, .. } => {
                if slot.utterance.is_none() {
                    slot.utterance = Some((utterance, src));
                }
            }
            ChannelLine::Scene => {}
        }
    };
    let mut language = false;
    for (i, line) in observation_channel.iter().enumerate() {
        let parsed = parse_observation_line(&scene, i, line)?;
        if let ChannelLine::Action { tick, agent, .. } = &parsed {
            put(*tick, *agent, parsed.clone(), Provenance::FromObservation);
        }
    }
    for (i, line) in text_channel.iter().enumerate() {
        let parsed = parse_text_line(&scene, &lex, i, line)?;
        match &parsed {
            ChannelLine::Action { tick, agent, .. } => {
                put(*tick, *agent, parsed.clone(), Provenance::FromText)
            }
            ChannelLine::Utterance { tick, agent, .. } => {
                language = true;
                put(*tick, *agent, parsed.clone(), Provenance::FromText)
            }
            ChannelLine::Scene => {}
        }
    }
    let text_mentions = lex.objects_in(&text_channel.join("\n"));

    let keys: Vec<(u32, AgentId)> = slots.keys().copied().collect();
    let parsed: Vec<Option<ParsedAction>> = keys
        .iter()
        .map(|k| slots[k].action.as_ref().map(|(a, _)| a.clone()))
        .collect();
    let mut resolved: Vec<Option<PrimitiveAction>> = parsed
        .iter()
        .map(|p| match p {
            Some(ParsedAction::Known(a)) => Some(a.clone()),
            _ => None,
        })
        .collect();
    let mut ambiguities = Vec::new();
    let mut tracks: BTreeMap<String, Track> = BTreeMap::new();
    for i in 0..keys.len() {
        let agent = keys[i].1;
        if let Some(ParsedAction::Placeholder { verb, furniture }) = &parsed[i] {
            let fits: Vec<String> = text_mentions
                .iter()
                .filter(|x| placeholder_fits(x, *verb, furniture, agent, &tracks, &resolved[i + 1..]))
                .cloned()
                .collect();
            match fits.len() {
                1 => {
                    resolved[i] = Some(parsed[i].as_ref().expect("placeholder").with_object(&fits[0]))
                }
                0 => {}
                _ => ambiguities.push(AmbiguousReference {
                    step: i,
                    candidates: fits,
                }),
            }
        }
        match &resolved[i] {
            Some(PrimitiveAction::Grab { object, .. }) => {
                tracks.insert(object.clone(), Track::Held(agent));
            }
            Some(PrimitiveAction::Put { object, to }) => {
                tracks.insert(object.clone(), Track::At(to.clone()));
            }
            _ => {}
        }
    }

    let mut merged = Vec::with_capacity(keys.len());
    let mut mentioned: BTreeSet<String> = text_mentions.into_iter().collect();
    for (i, key) in keys.iter().enumerate() {
        let slot = &slots[key];
        let (utterance, utterance_source) = match &slot.utterance {
            Some((u, src)) => (u.clone(), Some(*src)),
            None => (Utterance::Silence, None),
        };
        if let Some(a) = &resolved[i] {
            if let Some(o) = a.object() {
                mentioned.insert(o.to_string());
            }
        }
        match &utterance {
            Utterance::Inquiry { objects } => mentioned.extend(objects.iter().cloned()),
            Utterance::Inform { facts } => mentioned.extend(facts.iter().map(|(o, _)| o.clone())),
            Utterance::Silence => {}
        }
        merged.push(MergedStep {
            tick: key.0,
            agent: key.1,
            action: resolved[i].clone(),
            action_source: slot.action.as_ref().map(|(_, s)| *s),
            utterance,
            utterance_source,
        });
    }
    let known: Vec<PrimitiveAction> = merged.iter().filter_map(|s| s.action.clone()).collect();
    let placements = retrieve_initial_state(&known)?;
    let mut container_open: BTreeMap<String, bool> =
        apt.containers().map(|c| (c.id.clone(), false)).collect();
    container_open.extend(scene.container_open.clone());
    Ok(FusedContext {
        initial_state: PartialState {
            apartment: apt,
            names: scene.names.clone(),
            agent_pose: scene.starts.clone(),
            container_open,
            placements,
            mentioned,
        },
        merged_steps: merged,
        ambiguities,
        language,
    })
}

/// Whether object `x` can be the hidden object of a placeholder step, given
/// the explicit object tracks so far and the explicit steps that follow.
fn placeholder_fits(
    x: &str,
    verb: PlaceholderVerb,
    furniture: &str,
    agent: AgentId,
    tracks: &BTreeMap<String, Track>,
    later: &[Option<PrimitiveAction>],
) -> bool {
    let now = tracks.get(x);
    let next = later.iter().flatten().find(|a| a.object() == Some(x));
    match verb {
        PlaceholderVerb::Grab => {
            let here = match now {
                None => true,
                Some(Track::At(l)) => l == furniture,
                Some(Track::Held(_)) => false,
            };
            // once grabbed, the next explicit touch must be a put
            here && !matches!(next, Some(PrimitiveAction::Grab { .. }))
        }
        PlaceholderVerb::Put => {
            let holding = match now {
                None => true,
                Some(Track::Held(a)) => *a == agent,
                Some(Track::At(_)) => false,
            };
            let consistent = match next {
                Some(PrimitiveAction::Grab { from, .. }) => from == furniture,
                Some(PrimitiveAction::Put { .. }) => false,
                _ => true,
            };
            holding && consistent
        }
    }
}

/// One hypothesis per option. Annotated datasets carry them directly;
/// otherwise they are rebuilt from the question templates.
pub fn parse_hypotheses(question: &Question, fused: &FusedContext) -> Result<Vec<Hypothesis>, LimpError> {
    if question.hypotheses.len() == 3 {
        return Ok(question.hypotheses.clone());
    }
    crate::gen::hypotheses_from_text(question, fused)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemKind {
    Action,
    Utterance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepScore {
    pub step: usize,
    pub kind: ItemKind,
    pub prob: f64,
}

/// Replay position handed to per-step scoring calls.
pub struct StepContext<'a> {
    pub fused: &'a FusedContext,
    /// Index into `fused.merged_steps` of the step being scored.
    pub index: usize,
    pub target: AgentId,
    /// World state just before the step, as far as it can be replayed.
    pub state: &'a WorldState,
}

impl StepContext<'_> {
    pub fn history(&self) -> &[MergedStep] {
        &self.fused.merged_steps[..self.index]
    }
}

/// Source of per-step action and utterance probabilities under a hypothesis.
pub trait PolicyScorer: Send + Sync {
    fn score_action(
        &self,
        ctx: &StepContext<'_>,
        h: &Hypothesis,
        observed: &PrimitiveAction,
    ) -> Result<f64, LimpError>;

    fn score_utterance(&self, ctx: &StepContext<'_>, h: &Hypothesis, observed: &Utterance) -> Result<f64, LimpError>;

    /// Score every step of `target`, utterance first then action.
    fn score_steps(&self, fused: &FusedContext, h: &Hypothesis, target: AgentId) -> Result<Vec<StepScore>, LimpError> {
        let apt = &fused.initial_state.apartment;
        let mut state = fused.initial_state.world_state()?;
        let mut out = Vec::new();
        for (index, step) in fused.merged_steps.iter().enumerate() {
            if step.agent == target {
                let ctx = StepContext {
                    fused,
                    index,
                    target,
                    state: &state,
                };
                out.push(StepScore {
                    step: index,
                    kind: ItemKind::Utterance,
                    prob: self.score_utterance(&ctx, h, &step.utterance)?,
                });
                if let Some(a) = &step.action {
                    out.push(StepScore {
                        step: index,
                        kind: ItemKind::Action,
                        prob: self.score_action(&ctx, h, a)?,
                    });
                }
            }
            if let Some(a) = &step.action {
                if let Ok(next) = apply(apt, &state, step.agent, a) {
                    state = next;
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringParams {
    pub beta: f64,
    pub tau: f64,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            beta: DEFAULT_BETA,
            tau: crate::mind::DEFAULT_TAU,
        }
    }
}

/// Scorer that replays the generator's own forward model under each
/// hypothesis, so posteriors are exact.
pub struct OracleScorer {
    params: ScoringParams,
    budget: SearchBudget,
    planners: Mutex<HashMap<String, Arc<Planner>>>,
}

impl OracleScorer {
    pub fn new(params: ScoringParams) -> Self {
        Self::with_budget(params, SearchBudget::default())
    }

    pub fn with_budget(params: ScoringParams, budget: SearchBudget) -> Self {
        OracleScorer {
            params,
            budget,
            planners: Mutex::new(HashMap::new()),
        }
    }

    pub fn params(&self) -> ScoringParams {
        self.params
    }

    pub fn planner(&self, apt: &Apartment) -> Result<Arc<Planner>, LimpError> {
        let key = serde_json::to_string(apt).map_err(|e| LimpError::Scorer(e.to_string()))?;
        let mut cache = self.planners.lock().expect("planner cache");
        Ok(cache
            .entry(key)
            .or_insert_with(|| Arc::new(Planner::with_budget(apt.clone(), self.budget)))
            .clone())
    }

    /// Own-goal candidates for an agent whose goal the hypothesis leaves
    /// open: what it picked up, where it put things, else anything mentioned.
    fn own_goal_candidates(fused: &FusedContext, target: AgentId) -> Vec<PhysicalGoal> {
        let mut out = BTreeSet::new();
        for s in fused.merged_steps.iter().filter(|s| s.agent == target) {
            match &s.action {
                Some(PrimitiveAction::Grab { object, .. }) => {
                    out.insert(PhysicalGoal::find(object.clone()));
                }
                Some(PrimitiveAction::Put { object, to }) => {
                    out.insert(PhysicalGoal::rearrange(object.clone(), to.clone()));
                }
                _ => {}
            }
        }
        if out.is_empty() {
            out.extend(fused.initial_state.mentioned.iter().map(|o| PhysicalGoal::find(o.clone())));
        }
        out.into_iter().collect()
    }

    fn initial_mind(&self, fused: &FusedContext, h: &Hypothesis, target: AgentId, own: PhysicalGoal) -> AgentMind {
        let ps = &fused.initial_state;
        let locations = ps.apartment.furniture_ids();
        let mut belief = h.belief_of_state.clone();
        for o in &ps.mentioned {
            if belief.marginal(o).is_none() {
                let m = match ps.placements.get(o) {
                    Some(at) => Categorical::delta(&locations, at),
                    None => Categorical::uniform(&locations),
                };
                belief.insert(o.clone(), m);
            }
        }
        let asked_later = fused
            .merged_steps
            .iter()
            .any(|s| s.agent != target && matches!(s.utterance, Utterance::Inquiry { .. }));
        let goal_belief = if asked_later {
            uninformed_goal_belief(&ps.apartment)
        } else {
            h.belief_of_goal.clone()
        };
        AgentMind::from_parts(target, h.social_goal, own, belief, goal_belief)
    }

    fn replay(
        &self,
        fused: &FusedContext,
        planner: &Planner,
        mut mind: AgentMind,
    ) -> Result<Vec<StepScore>, LimpError> {
        let apt = &fused.initial_state.apartment;
        let candidates = apt.furniture_ids();
        let params = MindParams {
            beta: self.params.beta,
            tau: self.params.tau,
            language: fused.language,
        };
        let target = mind.agent;
        let mut state = fused.initial_state.world_state()?;
        let mut out = Vec::new();
        for (index, step) in fused.merged_steps.iter().enumerate() {
            if step.agent == target {
                mind.observe(apt, &state)?;
                let dist = mind.utterance_distribution(&state, &params, &candidates);
                let p_u = dist
                    .iter()
                    .filter(|(u, _)| *u == step.utterance)
                    .map(|(_, p)| p)
                    .sum();
                out.push(StepScore {
                    step: index,
                    kind: ItemKind::Utterance,
                    prob: p_u,
                });
                mind.commit_utterance(&step.utterance);
                if let Some(a) = &step.action {
                    let p_a = match mind.action_policy(planner, &state, &params) {
                        Ok(pol) => pol.prob(a),
                        Err(PlanError::UnreachableGoal { .. }) => 0.0,
                        Err(e) => return Err(e.into()),
                    };
                    out.push(StepScore {
                        step: index,
                        kind: ItemKind::Action,
                        prob: p_a,
                    });
                }
            } else if !step.utterance.is_silence() {
                mind.hear(&step.utterance);
            }
            if let Some(a) = &step.action {
                if let Ok(next) = apply(apt, &state, step.agent, a) {
                    state = next;
                }
                mind.note_action(step.agent, a);
            }
        }
        Ok(out)
    }
}

/// Goal belief of an agent that has no idea what the other wants.
pub fn uninformed_goal_belief(apt: &Apartment) -> GoalBelief {
    let goals: Vec<PhysicalGoal> = apt
        .object_vocabulary
        .iter()
        .map(|o| PhysicalGoal::find(o.clone()))
        .collect();
    GoalBelief::uniform(&goals)
}

impl PolicyScorer for OracleScorer {
    fn score_action(&self, ctx: &StepContext<'_>, h: &Hypothesis, _observed: &PrimitiveAction) -> Result<f64, LimpError> {
        let all = self.score_steps(ctx.fused, h, ctx.target)?;
        Ok(all
            .iter()
            .find(|s| s.step == ctx.index && s.kind == ItemKind::Action)
            .map(|s| s.prob)
            .unwrap_or(1.0))
    }

    fn score_utterance(&self, ctx: &StepContext<'_>, h: &Hypothesis, _observed: &Utterance) -> Result<f64, LimpError> {
        let all = self.score_steps(ctx.fused, h, ctx.target)?;
        Ok(all
            .iter()
            .find(|s| s.step == ctx.index && s.kind == ItemKind::Utterance)
            .map(|s| s.prob)
            .unwrap_or(1.0))
    }

    /// Single replay pass. An agent acting independently has an unstated
    /// goal, which is summed out under a uniform prior; each step then
    /// scores with the predictive mixture so the product is the exact
    /// marginal likelihood.
    fn score_steps(&self, fused: &FusedContext, h: &Hypothesis, target: AgentId) -> Result<Vec<StepScore>, LimpError> {
        let planner = self.planner(&fused.initial_state.apartment)?;
        if h.social_goal != SocialGoal::Independent {
            let own = h
                .belief_of_goal
                .mode()
                .cloned()
                .unwrap_or_else(|| PhysicalGoal::find(""));
            return self.replay(fused, &planner, self.initial_mind(fused, h, target, own));
        }
        let goals = Self::own_goal_candidates(fused, target);
        if goals.is_empty() {
            return Err(LimpError::Scorer("no goal candidates for an independent agent".into()));
        }
        let per_goal: Vec<Vec<StepScore>> = goals
            .iter()
            .map(|g| self.replay(fused, &planner, self.initial_mind(fused, h, target, g.clone())))
            .collect::<Result<_, _>>()?;
        let n = per_goal[0].len();
        let mut weights = vec![1.0 / goals.len() as f64; goals.len()];
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            let total: f64 = weights.iter().sum();
            let p: f64 = if total > 0.0 {
                per_goal
                    .iter()
                    .zip(&weights)
                    .map(|(scores, w)| w / total * scores[t].prob)
                    .sum()
            } else {
                0.0
            };
            for (w, scores) in weights.iter_mut().zip(&per_goal) {
                *w *= scores[t].prob;
            }
            out.push(StepScore {
                step: per_goal[0][t].step,
                kind: per_goal[0][t].kind,
                prob: p,
            });
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Shell command speaking the protocol on stdin/stdout.
    Command(String),
    /// `host:port` of a socket server.
    Tcp(String),
}

impl Endpoint {
    /// `cmd:<shell command>` or `tcp://host:port`.
    pub fn parse(s: &str) -> Option<Endpoint> {
        if let Some(c) = s.strip_prefix("cmd:") {
            Some(Endpoint::Command(c.to_string()))
        } else {
            s.strip_prefix("tcp://").map(|a| Endpoint::Tcp(a.to_string()))
        }
    }
}

enum Connection {
    Process {
        child: Child,
        stdin: ChildStdin,
        stdout: BufReader<ChildStdout>,
    },
    Socket {
        writer: TcpStream,
        reader: BufReader<TcpStream>,
    },
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Process { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Scorer reached over a line-delimited JSON protocol. Requests on one
/// connection are serialized.
pub struct ExternalScorer {
    endpoint: Endpoint,
    conn: Mutex<Option<Connection>>,
}

impl ExternalScorer {
    pub fn new(endpoint: Endpoint) -> Self {
        ExternalScorer {
            endpoint,
            conn: Mutex::new(None),
        }
    }

    fn connect(&self) -> Result<Connection, LimpError> {
        let e = |x: std::io::Error| LimpError::Scorer(x.to_string());
        match &self.endpoint {
            Endpoint::Command(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()
                    .map_err(e)?;
                let stdin = child.stdin.take().expect("piped");
                let stdout = BufReader::new(child.stdout.take().expect("piped"));
                Ok(Connection::Process { child, stdin, stdout })
            }
            Endpoint::Tcp(addr) => {
                let writer = TcpStream::connect(addr).map_err(e)?;
                let reader = BufReader::new(writer.try_clone().map_err(e)?);
                Ok(Connection::Socket { writer, reader })
            }
        }
    }

    fn request(&self, body: &serde_json::Value) -> Result<f64, LimpError> {
        let mut guard = self.conn.lock().expect("scorer connection");
        if guard.is_none() {
            *guard = Some(self.connect()?);
        }
        let conn = guard.as_mut().expect("connected");
        let mut line = body.to_string();
        line.push('\n');
        let mut reply = String::new();
        let io = match conn {
            Connection::Process { stdin, stdout, .. } => stdin
                .write_all(line.as_bytes())
                .and_then(|_| stdin.flush())
                .and_then(|_| stdout.read_line(&mut reply)),
            Connection::Socket { writer, reader } => writer
                .write_all(line.as_bytes())
                .and_then(|_| writer.flush())
                .and_then(|_| reader.read_line(&mut reply)),
        };
        let result = match io {
            Ok(0) => Err(LimpError::Scorer("endpoint closed the connection".into())),
            Ok(_) => serde_json::from_str::<serde_json::Value>(&reply)
                .ok()
                .and_then(|v| v.get("probability").and_then(|p| p.as_f64()))
                .filter(|p| p.is_finite() && *p >= 0.0)
                .ok_or_else(|| LimpError::Scorer(format!("malformed reply: {}", reply.trim()))),
            Err(err) => Err(LimpError::Scorer(err.to_string())),
        };
        if result.is_err() {
            *guard = None;
        }
        result
    }

    fn normalized<T: Serialize + PartialEq>(
        &self,
        ctx: &StepContext<'_>,
        h: &Hypothesis,
        kind: &str,
        candidates: &[T],
        observed: &T,
    ) -> Result<f64, LimpError> {
        let mut total = 0.0;
        let mut hit = 0.0;
        for c in candidates {
            let p = self.request(&json!({
                "history": ctx.history(),
                "initial_state": ctx.fused.initial_state,
                "hypothesis": h,
                "candidate": c,
                "kind": kind,
                "target": ctx.target,
            }))?;
            total += p;
            if c == observed {
                hit += p;
            }
        }
        Ok(if total > 0.0 { hit / total } else { 0.0 })
    }
}

impl PolicyScorer for ExternalScorer {
    fn score_action(&self, ctx: &StepContext<'_>, h: &Hypothesis, observed: &PrimitiveAction) -> Result<f64, LimpError> {
        let apt = &ctx.fused.initial_state.apartment;
        let mut candidates = legal_actions(apt, ctx.state, ctx.target);
        if !candidates.contains(observed) {
            candidates.push(observed.clone());
        }
        self.normalized(ctx, h, "action", &candidates, observed)
    }

    fn score_utterance(&self, ctx: &StepContext<'_>, h: &Hypothesis, observed: &Utterance) -> Result<f64, LimpError> {
        let candidates = utterance_candidates(ctx.fused, observed);
        self.normalized(ctx, h, "utterance", &candidates, observed)
    }
}

/// The observed utterance, silence, and one inform contradicting it.
pub fn utterance_candidates(fused: &FusedContext, observed: &Utterance) -> Vec<Utterance> {
    let locations = fused.initial_state.apartment.furniture_ids();
    let contradicting = match observed {
        Utterance::Inform { facts } if !facts.is_empty() => {
            let (o, l) = &facts[0];
            locations
                .iter()
                .find(|x| *x != l)
                .map(|x| Utterance::inform(o.clone(), x.clone()))
        }
        _ => fused
            .initial_state
            .mentioned
            .iter()
            .next()
            .zip(locations.first())
            .map(|(o, l)| Utterance::inform(o.clone(), l.clone())),
    };
    let mut out = vec![observed.clone()];
    for u in [Some(Utterance::Silence), contradicting].into_iter().flatten() {
        if !out.contains(&u) {
            out.push(u);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub step: usize,
    pub kind: ItemKind,
    pub prob: f64,
    pub log: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Likelihood {
    pub log: f64,
    pub ledger: Vec<LedgerEntry>,
    /// First step whose probability was zero.
    pub zero_step: Option<usize>,
}

/// Sum of log action and utterance probabilities of `target`'s steps.
pub fn log_likelihood(
    fused: &FusedContext,
    h: &Hypothesis,
    scorer: &dyn PolicyScorer,
    target: AgentId,
    epsilon: f64,
) -> Result<Likelihood, LimpError> {
    if fused.merged_steps.is_empty() {
        return Err(LimpError::NoSteps);
    }
    let scores = scorer.score_steps(fused, h, target)?;
    let mut total = 0.0;
    let mut ledger = Vec::with_capacity(scores.len());
    let mut zero_step = None;
    for s in scores {
        let p = s.prob.clamp(0.0, 1.0).max(epsilon);
        let log = p.ln();
        if p == 0.0 && zero_step.is_none() {
            zero_step = Some(s.step);
        }
        total += log;
        ledger.push(LedgerEntry {
            step: s.step,
            kind: s.kind,
            prob: p,
            log,
        });
    }
    Ok(Likelihood {
        log: total,
        ledger,
        zero_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorResult {
    pub log_likelihood: Vec<f64>,
    pub posterior: Vec<f64>,
    pub ledger: Vec<Vec<LedgerEntry>>,
    pub zero_steps: Vec<Option<usize>>,
    /// Every hypothesis had zero likelihood; the posterior is uniform.
    pub degraded: bool,
}

impl PosteriorResult {
    pub fn uniform_degraded(n: usize) -> Self {
        PosteriorResult {
            log_likelihood: vec![f64::NEG_INFINITY; n],
            posterior: vec![1.0 / n as f64; n],
            ledger: vec![Vec::new(); n],
            zero_steps: vec![None; n],
            degraded: true,
        }
    }

    /// Hex SHA-256 of the per-hypothesis ledgers.
    pub fn ledger_digest(&self) -> String {
        let mut h = Sha256::new();
        for (i, entries) in self.ledger.iter().enumerate() {
            h.update(format!("h{i}\n"));
            for e in entries {
                h.update(format!("{}|{:?}|{:e}\n", e.step, e.kind, e.prob));
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Posterior over hypotheses: prior times likelihood, normalized.
pub fn posterior(
    hypotheses: &[Hypothesis],
    fused: &FusedContext,
    scorer: &dyn PolicyScorer,
    prior: &[f64],
    target: AgentId,
    epsilon: f64,
) -> Result<PosteriorResult, LimpError> {
    if hypotheses.is_empty() || prior.len() != hypotheses.len() {
        return Err(LimpError::InvalidPrior("one prior weight per hypothesis required".into()));
    }
    if (prior.iter().sum::<f64>() - 1.0).abs() > 1e-9 || prior.iter().any(|p| *p < 0.0) {
        return Err(LimpError::InvalidPrior(format!("{prior:?}")));
    }
    let lls: Vec<Likelihood> = hypotheses
        .par_iter()
        .map(|h| log_likelihood(fused, h, scorer, target, epsilon))
        .collect::<Result<_, _>>()?;
    let logs: Vec<f64> = lls
        .iter()
        .zip(prior)
        .map(|(l, p)| if *p == 0.0 { f64::NEG_INFINITY } else { p.ln() + l.log })
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let degraded = max == f64::NEG_INFINITY;
    let posterior = if degraded {
        vec![1.0 / hypotheses.len() as f64; hypotheses.len()]
    } else {
        let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = w.iter().sum();
        w.into_iter().map(|x| x / z).collect()
    };
    Ok(PosteriorResult {
        log_likelihood: lls.iter().map(|l| l.log).collect(),
        posterior,
        zero_steps: lls.iter().map(|l| l.zero_step).collect(),
        ledger: lls.into_iter().map(|l| l.ledger).collect(),
        degraded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub index: usize,
    /// Another option shared the winning posterior.
    pub tie: bool,
}

/// Pick the option the posterior favours under the question's polarity;
/// ties go to the lowest index.
pub fn answer(question: &Question, result: &PosteriorResult) -> Answer {
    choose(question.polarity, &result.posterior)
}

pub fn choose(polarity: Polarity, posterior: &[f64]) -> Answer {
    let better = |a: f64, b: f64| match polarity {
        Polarity::Most => a > b,
        Polarity::Least => a < b,
    };
    let mut index = 0;
    for (i, p) in posterior.iter().enumerate().skip(1) {
        if better(*p, posterior[index]) {
            index = i;
        }
    }
    let tie = posterior
        .iter()
        .enumerate()
        .any(|(i, p)| i != index && (p - posterior[index]).abs() <= 1e-9 * p.abs().max(posterior[index].abs()));
    Answer { index, tie }
}
