//! Boltzmann-rational planning for one agent, social-goal conditioning and
//! turn-based rollout of two agents.

mod mcts;
mod model;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mind::{
    response_distribution, sample_weighted, should_inquire, Belief, Categorical, GoalBelief,
    MindError, PhysicalGoal, SocialGoal, Utterance,
};
use crate::world::{apply, legal_actions, observe, AgentId, Apartment, PrimitiveAction, WorldError, WorldState};

use mcts::Mcts;
use model::{AbsState, Model};

pub const DEFAULT_BETA: f64 = 2.0;
pub const DEFAULT_HORIZON: u32 = 40;
pub const DEFAULT_SIMULATIONS: usize = 10_000;
pub const DEFAULT_MAX_EXACT_STATES: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("goal over {object} cannot be reached from the believed state")]
    UnreachableGoal { object: String },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Mind(#[from] MindError),
}

/// What a planner drives toward on a given turn.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Objective {
    /// Be holding the object.
    Hold { object: String },
    /// Leave the object at the target.
    Place { object: String, target: String },
    /// Leave the object anywhere except `avoid`.
    Displace { object: String, avoid: String },
    /// Nothing to do; the agent waits.
    Idle,
}

impl Objective {
    pub fn object(&self) -> Option<&str> {
        match self {
            Objective::Hold { object }
            | Objective::Place { object, .. }
            | Objective::Displace { object, .. } => Some(object),
            Objective::Idle => None,
        }
    }

    pub fn satisfied(&self, state: &WorldState, agent: AgentId) -> bool {
        match self {
            Objective::Idle => true,
            Objective::Hold { object } => state.held_by(agent).any(|o| o == object),
            Objective::Place { object, target } => state.placements.get(object) == Some(target),
            Objective::Displace { object, avoid } => state
                .placements
                .get(object)
                .is_some_and(|at| at != avoid),
        }
    }
}

impl From<&PhysicalGoal> for Objective {
    fn from(g: &PhysicalGoal) -> Self {
        match g {
            PhysicalGoal::Find { object } => Objective::Hold {
                object: object.clone(),
            },
            PhysicalGoal::Rearrange { object, target } => Objective::Place {
                object: object.clone(),
                target: target.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    ExactSearch,
    Mcts,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    /// Largest abstract state space solved exactly.
    pub max_exact_states: usize,
    pub simulations: usize,
    pub seed: u64,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_exact_states: DEFAULT_MAX_EXACT_STATES,
            simulations: DEFAULT_SIMULATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    pub probs: Vec<(PrimitiveAction, f64)>,
    pub beta: f64,
    pub source: PlanSource,
}

impl PolicyDistribution {
    pub fn delta(action: PrimitiveAction, beta: f64) -> Self {
        PolicyDistribution {
            probs: vec![(action, 1.0)],
            beta,
            source: PlanSource::ExactSearch,
        }
    }

    pub fn prob(&self, action: &PrimitiveAction) -> f64 {
        self.probs
            .iter()
            .find(|(a, _)| a == action)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().map(|(_, p)| p).sum()
    }

    /// Most probable action, lowest action first on ties.
    pub fn mode(&self) -> &PrimitiveAction {
        let mut best = &self.probs[0];
        for entry in &self.probs[1..] {
            if entry.1 > best.1 + 1e-12 {
                best = entry;
            }
        }
        &best.0
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> PrimitiveAction {
        sample_weighted(&self.probs, rng).clone()
    }
}

/// Softmax of `beta * q`. Infinite `beta` spreads mass evenly over the
/// maximizers; `-inf` entries get zero.
pub fn boltzmann(q: &[f64], beta: f64) -> Vec<f64> {
    let max = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return vec![0.0; q.len()];
    }
    let weights: Vec<f64> = if beta.is_infinite() {
        q.iter()
            .map(|&x| if (x - max).abs() <= 1e-9 { 1.0 } else { 0.0 })
            .collect()
    } else {
        q.iter()
            .map(|&x| {
                if x == f64::NEG_INFINITY {
                    0.0
                } else {
                    (beta * (x - max)).exp()
                }
            })
            .collect()
    };
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

/// Planner bound to one apartment; caches exact distance tables per
/// objective so repeated queries are cheap. Safe to share across threads.
pub struct Planner {
    apt: Apartment,
    model: Model,
    budget: SearchBudget,
    tables: Mutex<HashMap<Objective, Arc<Vec<u32>>>>,
}

impl fmt::Debug for Planner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Planner")
            .field("apartment", &self.apt.id)
            .field("budget", &self.budget)
            .finish()
    }
}

impl Planner {
    pub fn new(apt: Apartment) -> Self {
        Self::with_budget(apt, SearchBudget::default())
    }

    pub fn with_budget(apt: Apartment, budget: SearchBudget) -> Self {
        let model = Model::new(&apt);
        Planner {
            apt,
            model,
            budget,
            tables: Mutex::new(HashMap::new()),
        }
    }

    pub fn apartment(&self) -> &Apartment {
        &self.apt
    }

    pub fn budget(&self) -> SearchBudget {
        self.budget
    }

    /// Size of the abstract state space searched for this apartment.
    pub fn state_space_size(&self) -> usize {
        self.model.size()
    }

    pub fn uses_exact_search(&self) -> bool {
        self.model.size() <= self.budget.max_exact_states
    }

    fn table(&self, objective: &Objective) -> Arc<Vec<u32>> {
        if let Some(t) = self.tables.lock().expect("table cache").get(objective) {
            return t.clone();
        }
        let t = Arc::new(self.model.distance_table(objective));
        self.tables
            .lock()
            .expect("table cache")
            .entry(objective.clone())
            .or_insert(t)
            .clone()
    }

    /// Exact shortest remaining cost for `agent` in a concrete state.
    pub fn exact_cost(&self, state: &WorldState, agent: AgentId, objective: &Objective) -> Option<u32> {
        let s = self.model.abstract_state(state, agent, objective.object())?;
        let d = self.table(objective)[self.model.index(s)];
        (d != u32::MAX).then_some(d)
    }
}

struct World {
    state: WorldState,
    weight: f64,
    abs: AbsState,
}

enum Values<'a> {
    Exact(Arc<Vec<u32>>),
    Search(Vec<Mcts<'a>>),
}

/// Action distribution for `agent` pursuing `objective` under `belief`.
///
/// `proxy` supplies the agent's pose, hands and container states; the goal
/// object's location is taken from the belief. Q-values average the exact or
/// searched remaining cost over every believed location of the goal object.
pub fn plan_policy(
    planner: &Planner,
    belief: &Belief,
    proxy: &WorldState,
    agent: AgentId,
    objective: &Objective,
    beta: f64,
) -> Result<PolicyDistribution, PlanError> {
    let Some(object) = objective.object() else {
        return Ok(PolicyDistribution::delta(PrimitiveAction::Noop, beta));
    };
    let apt = &planner.apt;
    let unreachable = || PlanError::UnreachableGoal {
        object: object.to_string(),
    };
    let mut worlds = Vec::new();
    let held_by_self = proxy.held_by(agent).any(|o| o == object);
    let mut candidates_states: Vec<(WorldState, f64)> = Vec::new();
    if held_by_self {
        candidates_states.push((proxy.clone(), 1.0));
    } else {
        let marginal = belief.marginal(object).ok_or_else(unreachable)?;
        for (loc, p) in marginal.support() {
            let mut w = proxy.clone();
            for objs in w.holding.values_mut() {
                objs.remove(object);
            }
            w.placements.insert(object.to_string(), loc.clone());
            candidates_states.push((w, p));
        }
    }
    for (state, weight) in candidates_states {
        let abs = planner
            .model
            .abstract_state(&state, agent, Some(object))
            .ok_or_else(unreachable)?;
        worlds.push(World { state, weight, abs });
    }
    if worlds.is_empty() {
        return Err(unreachable());
    }

    let (values, source) = if planner.uses_exact_search() {
        (Values::Exact(planner.table(objective)), PlanSource::ExactSearch)
    } else {
        let mut searches = Vec::new();
        for w in &worlds {
            let seed = planner.budget.seed
                ^ (planner.model.index(w.abs) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let mut m = Mcts::new(&planner.model, objective, ChaCha8Rng::seed_from_u64(seed));
            m.search(w.abs, planner.budget.simulations);
            searches.push(m);
        }
        (Values::Search(searches), PlanSource::Mcts)
    };
    let value = |wi: usize, s: AbsState| -> f64 {
        match &values {
            Values::Exact(t) => match t[planner.model.index(s)] {
                u32::MAX => f64::INFINITY,
                d => d as f64,
            },
            Values::Search(ms) => ms[wi].value(s),
        }
    };

    let actions: Vec<PrimitiveAction> = legal_actions(apt, proxy, agent)
        .into_iter()
        .filter(|a| match a {
            PrimitiveAction::Grab { object: o, .. } => o == object,
            _ => true,
        })
        .collect();
    let mut q = Vec::with_capacity(actions.len());
    for a in &actions {
        let mut total = 0.0;
        for (wi, w) in worlds.iter().enumerate() {
            let (cost, next) = match a {
                PrimitiveAction::Noop => {
                    let done = planner.model.is_goal(objective, w.abs);
                    (if done { 0.0 } else { 1.0 }, w.abs)
                }
                _ => match apply(apt, &w.state, agent, a) {
                    Ok(s) => (
                        1.0,
                        planner
                            .model
                            .abstract_state(&s, agent, Some(object))
                            .unwrap_or(w.abs),
                    ),
                    Err(_) => (1.0, w.abs),
                },
            };
            total += w.weight * -(cost + value(wi, next));
        }
        q.push(if total.is_nan() { f64::NEG_INFINITY } else { total });
    }
    let probs = boltzmann(&q, beta);
    if probs.iter().all(|p| *p == 0.0) {
        return Err(unreachable());
    }
    Ok(PolicyDistribution {
        probs: actions.into_iter().zip(probs).collect(),
        beta,
        source,
    })
}

/// What a socially motivated agent works toward.
///
/// Helpers adopt the other's most likely goal and hinderers its negation.
/// Finding needs no physical help, so both only talk in that case. Without a
/// confident goal belief, or before `engaged`, they wait.
pub fn social_objective(
    social: SocialGoal,
    own_goal: &PhysicalGoal,
    goal_belief: &GoalBelief,
    tau: f64,
    engaged: bool,
) -> Objective {
    match social {
        SocialGoal::Independent => Objective::from(own_goal),
        SocialGoal::Help | SocialGoal::Hinder => {
            if !engaged || goal_belief.entropy() >= tau {
                return Objective::Idle;
            }
            match goal_belief.mode() {
                Some(PhysicalGoal::Rearrange { object, target }) => {
                    if social == SocialGoal::Help {
                        Objective::Place {
                            object: object.clone(),
                            target: target.clone(),
                        }
                    } else {
                        Objective::Displace {
                            object: object.clone(),
                            avoid: target.clone(),
                        }
                    }
                }
                _ => Objective::Idle,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub physical_goal: PhysicalGoal,
    pub social_goal: SocialGoal,
    pub initial_belief: Belief,
    pub initial_goal_belief: GoalBelief,
}

/// Action policy of a fully engaged agent described by `spec`.
pub fn social_plan(
    planner: &Planner,
    spec: &AgentSpec,
    own_belief: &Belief,
    inferred: &GoalBelief,
    state: &WorldState,
    beta: f64,
    tau: f64,
) -> Result<PolicyDistribution, PlanError> {
    let objective = social_objective(spec.social_goal, &spec.physical_goal, inferred, tau, true);
    plan_policy(planner, own_belief, state, spec.id, &objective, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MindParams {
    pub beta: f64,
    pub tau: f64,
    pub language: bool,
}

/// Evolving mental state of one agent during a rollout or a replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentMind {
    pub agent: AgentId,
    pub social: SocialGoal,
    pub own_goal: PhysicalGoal,
    pub belief: Belief,
    pub goal_belief: GoalBelief,
    pub asked: bool,
    pub awaiting_answer: bool,
    pub answered: bool,
    pub pending_question: Option<Vec<String>>,
    pub other_asked: BTreeSet<String>,
    pub other_placed: BTreeSet<String>,
}

impl AgentMind {
    pub fn new(spec: &AgentSpec) -> Self {
        Self::from_parts(
            spec.id,
            spec.social_goal,
            spec.physical_goal.clone(),
            spec.initial_belief.clone(),
            spec.initial_goal_belief.clone(),
        )
    }

    pub fn from_parts(
        agent: AgentId,
        social: SocialGoal,
        own_goal: PhysicalGoal,
        belief: Belief,
        goal_belief: GoalBelief,
    ) -> Self {
        AgentMind {
            agent,
            social,
            own_goal,
            belief,
            goal_belief,
            asked: false,
            awaiting_answer: false,
            answered: false,
            pending_question: None,
            other_asked: BTreeSet::new(),
            other_placed: BTreeSet::new(),
        }
    }

    pub fn observe(&mut self, apt: &Apartment, state: &WorldState) -> Result<(), PlanError> {
        let obs = observe(apt, state, self.agent)?;
        self.belief = self.belief.update_on_observation(&obs).belief;
        Ok(())
    }

    /// Distribution over what the agent says this turn.
    pub fn utterance_distribution(
        &self,
        state: &WorldState,
        params: &MindParams,
        candidates: &[String],
    ) -> Vec<(Utterance, f64)> {
        if let Some(objects) = &self.pending_question {
            return response_distribution(&self.belief, self.social, objects, candidates);
        }
        let object = self.own_goal.object();
        if params.language
            && self.social == SocialGoal::Independent
            && !self.asked
            && !self.other_asked.contains(object)
            && should_inquire(
                &self.belief,
                &self.own_goal,
                state.colocated(self.agent, self.agent.other()),
                params.tau,
            )
        {
            return vec![(Utterance::inquiry(object), 1.0)];
        }
        vec![(Utterance::Silence, 1.0)]
    }

    pub fn commit_utterance(&mut self, u: &Utterance) {
        match u {
            Utterance::Inquiry { .. } => {
                self.asked = true;
                self.awaiting_answer = true;
            }
            Utterance::Inform { .. } => {
                self.pending_question = None;
                self.answered = true;
            }
            Utterance::Silence => {}
        }
    }

    /// Take in what the other agent said.
    pub fn hear(&mut self, u: &Utterance) {
        match u {
            Utterance::Inquiry { objects } => {
                self.other_asked.extend(objects.iter().cloned());
                if let Some(first) = objects.first() {
                    self.goal_belief = GoalBelief::delta(PhysicalGoal::find(first.clone()));
                }
                self.pending_question = Some(objects.clone());
            }
            Utterance::Inform { .. } => {
                if let Ok(b) = self.belief.update_on_inform(u) {
                    self.belief = b;
                }
                self.awaiting_answer = false;
            }
            Utterance::Silence => {}
        }
    }

    pub fn note_action(&mut self, actor: AgentId, action: &PrimitiveAction) {
        if actor != self.agent {
            if let PrimitiveAction::Put { object, .. } = action {
                self.other_placed.insert(object.clone());
            }
        }
    }

    /// Helpers and hinderers without a question to go on engage once the
    /// other agent has put the object down.
    fn engaged(&self) -> bool {
        match self.goal_belief.mode() {
            Some(PhysicalGoal::Rearrange { object, .. }) => self.other_placed.contains(object),
            _ => true,
        }
    }

    pub fn objective(&self, params: &MindParams) -> Objective {
        social_objective(
            self.social,
            &self.own_goal,
            &self.goal_belief,
            params.tau,
            self.engaged(),
        )
    }

    pub fn action_policy(
        &self,
        planner: &Planner,
        state: &WorldState,
        params: &MindParams,
    ) -> Result<PolicyDistribution, PlanError> {
        if self.awaiting_answer {
            return Ok(PolicyDistribution::delta(PrimitiveAction::Noop, params.beta));
        }
        plan_policy(
            planner,
            &self.belief,
            state,
            self.agent,
            &self.objective(params),
            params.beta,
        )
    }

    /// Whether the agent has done its part in `state`.
    pub fn accomplished(&self, state: &WorldState, params: &MindParams) -> bool {
        match self.social {
            SocialGoal::Independent => self.own_goal.satisfied(state, self.agent),
            _ => match self.objective(params) {
                Objective::Idle => self.answered,
                o => o.satisfied(state, self.agent),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub agent: AgentId,
    pub action: PrimitiveAction,
    pub utterance: Utterance,
    /// Round index; both agents act once per round.
    pub tick: u32,
    pub belief: Belief,
    pub goal_belief: GoalBelief,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTrace {
    pub apartment: String,
    pub s0: WorldState,
    pub steps: Vec<Step>,
    pub terminal: WorldState,
    pub specs: [AgentSpec; 2],
    pub language: bool,
    pub horizon_exhausted: bool,
}

impl ScenarioTrace {
    /// Replays the recorded actions from `s0`.
    pub fn replay(&self, apt: &Apartment) -> Result<WorldState, WorldError> {
        let mut s = self.s0.clone();
        for step in &self.steps {
            s = apply(apt, &s, step.agent, &step.action)?;
        }
        Ok(s)
    }

    pub fn states(&self, apt: &Apartment) -> Result<Vec<WorldState>, WorldError> {
        let mut out = vec![self.s0.clone()];
        for step in &self.steps {
            let next = apply(apt, out.last().expect("nonempty"), step.agent, &step.action)?;
            out.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutParams {
    pub horizon: u32,
    pub tau: f64,
    pub beta: f64,
    pub language: bool,
}

impl RolloutParams {
    pub fn mind(&self) -> MindParams {
        MindParams {
            beta: self.beta,
            tau: self.tau,
            language: self.language,
        }
    }
}

/// Simulate both agents taking turns, agent 0 first in every round.
pub fn rollout(
    planner: &Planner,
    world: &WorldState,
    specs: &[AgentSpec; 2],
    params: &RolloutParams,
    seed: u64,
) -> Result<ScenarioTrace, PlanError> {
    let apt = planner.apartment();
    let candidates = apt.furniture_ids();
    let mind_params = params.mind();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut minds = [AgentMind::new(&specs[0]), AgentMind::new(&specs[1])];
    let mut done = [false, false];
    let mut state = world.clone();
    let mut steps = Vec::new();
    let mut finished = false;
    'rounds: for tick in 0..params.horizon {
        for k in 0..2 {
            let other = 1 - k;
            minds[k].observe(apt, &state)?;
            let dist = minds[k].utterance_distribution(&state, &mind_params, &candidates);
            let u = sample_weighted(&dist, &mut rng).clone();
            minds[k].commit_utterance(&u);
            if !u.is_silence() {
                minds[other].hear(&u);
            }
            let policy = minds[k].action_policy(planner, &state, &mind_params)?;
            let action = policy.sample(&mut rng);
            state = apply(apt, &state, minds[k].agent, &action)?;
            let actor = minds[k].agent;
            minds[0].note_action(actor, &action);
            minds[1].note_action(actor, &action);
            steps.push(Step {
                agent: actor,
                action,
                utterance: u,
                tick,
                belief: minds[k].belief.clone(),
                goal_belief: minds[k].goal_belief.clone(),
            });
            for j in 0..2 {
                done[j] |= minds[j].accomplished(&state, &mind_params);
            }
            if done[0] && done[1] {
                finished = true;
                break 'rounds;
            }
        }
    }
    Ok(ScenarioTrace {
        apartment: apt.id.clone(),
        s0: world.clone(),
        steps,
        terminal: state,
        specs: specs.clone(),
        language: params.language,
        horizon_exhausted: !finished,
    })
}

/// Level-1 estimate of the other agent's goal from what `observer` has seen.
///
/// An inquiry names the goal outright. Otherwise each candidate is scored by
/// how well a fully informed planner pursuing it explains the other agent's
/// actions.
pub fn infer_other_goal(
    planner: &Planner,
    s0: &WorldState,
    history: &[Step],
    observer: AgentId,
    candidates: &[PhysicalGoal],
    beta: f64,
) -> Result<GoalBelief, PlanError> {
    for step in history {
        if step.agent == observer {
            continue;
        }
        if let Utterance::Inquiry { objects } = &step.utterance {
            if let Some(first) = objects.first() {
                let goal = candidates
                    .iter()
                    .find(|g| g.object() == first)
                    .cloned()
                    .unwrap_or_else(|| PhysicalGoal::find(first.clone()));
                return Ok(GoalBelief::delta(goal));
            }
        }
    }
    let apt = planner.apartment();
    let locations = apt.furniture_ids();
    let mut log_w = vec![0.0f64; candidates.len()];
    let mut state = s0.clone();
    for step in history {
        if step.agent != observer {
            for (i, g) in candidates.iter().enumerate() {
                let object = g.object();
                let marginal = match state.placements.get(object) {
                    Some(at) => Categorical::delta(&locations, at),
                    None => Categorical::uniform(&locations),
                };
                let belief = Belief::new().with(object, marginal);
                let p = match plan_policy(planner, &belief, &state, step.agent, &Objective::from(g), beta) {
                    Ok(pol) => pol.prob(&step.action),
                    Err(PlanError::UnreachableGoal { .. }) => {
                        1.0 / legal_actions(apt, &state, step.agent).len() as f64
                    }
                    Err(e) => return Err(e),
                };
                log_w[i] += p.ln();
            }
        }
        state = apply(apt, &state, step.agent, &step.action)?;
    }
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(GoalBelief::uniform(candidates));
    }
    let weights = candidates
        .iter()
        .cloned()
        .zip(log_w.iter().map(|l| (l - max).exp()))
        .collect();
    Ok(GoalBelief::from_weights(weights)?)
}
