//! Mental-state machinery: beliefs over object locations, physical and social
//! goals, interactive states and the utterance model.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{AgentId, Observation, Seen, WorldState};

/// Probability that an indifferent responder misreports a location.
pub const INDEPENDENT_MISREPORT: f64 = 0.1;

/// Default entropy threshold (nats) above which a co-located agent asks.
pub const DEFAULT_TAU: f64 = 0.5;

const TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MindError {
    #[error("observation contradicts every location believed for {object}")]
    ContradictoryEvidence { object: String },
    #[error("location {location} is not a candidate for {object}")]
    UnknownLocation { object: String, location: String },
    #[error("object {0} is not tracked by this belief")]
    UnknownObject(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Categorical distribution over candidate locations, keyed by furniture id.
///
/// Every candidate is present as a key, possibly with zero mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Categorical(BTreeMap<String, f64>);

impl Categorical {
    pub fn uniform<S: AsRef<str>>(candidates: &[S]) -> Self {
        let p = 1.0 / candidates.len() as f64;
        Categorical(
            candidates
                .iter()
                .map(|c| (c.as_ref().to_string(), p))
                .collect(),
        )
    }

    pub fn delta<S: AsRef<str>>(candidates: &[S], at: &str) -> Self {
        Categorical(
            candidates
                .iter()
                .map(|c| {
                    let c = c.as_ref();
                    (c.to_string(), if c == at { 1.0 } else { 0.0 })
                })
                .collect(),
        )
    }

    pub fn from_weights(weights: BTreeMap<String, f64>) -> Result<Self, MindError> {
        let total: f64 = weights.values().sum();
        if weights.values().any(|w| *w < 0.0 || !w.is_finite()) || total <= 0.0 {
            return Err(MindError::InvalidDistribution(format!("{weights:?}")));
        }
        Ok(Categorical(
            weights.into_iter().map(|(k, w)| (k, w / total)).collect(),
        ))
    }

    pub fn prob(&self, location: &str) -> f64 {
        self.0.get(location).copied().unwrap_or(0.0)
    }

    pub fn candidates(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, f64)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    /// Locations with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (&String, f64)> {
        self.iter().filter(|(_, p)| *p > 0.0)
    }

    /// Most probable location; ties go to the lexicographically smallest id.
    pub fn mode(&self) -> Option<&str> {
        let mut best: Option<(&str, f64)> = None;
        for (k, p) in &self.0 {
            match best {
                Some((_, bp)) if *p <= bp + TIE_EPS => {}
                _ if *p <= 0.0 => {}
                _ => best = Some((k, *p)),
            }
        }
        best.map(|(k, _)| k)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .values()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.0.values().sum()
    }

    fn zero_out(&mut self, location: &str) {
        if let Some(p) = self.0.get_mut(location) {
            *p = 0.0;
        }
    }

    fn renormalized(mut self) -> Option<Self> {
        let total = self.total();
        if total <= 0.0 {
            return None;
        }
        for p in self.0.values_mut() {
            *p /= total;
        }
        Some(self)
    }
}

/// Per-object location beliefs for the goal-relevant object kinds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief {
    marginals: BTreeMap<String, Categorical>,
}

/// Result of folding an observation into a belief.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationUpdate {
    pub belief: Belief,
    /// Objects whose marginal was reset after contradictory evidence.
    pub reset: Vec<String>,
}

impl Belief {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, object: impl Into<String>, marginal: Categorical) -> Self {
        self.marginals.insert(object.into(), marginal);
        self
    }

    pub fn insert(&mut self, object: impl Into<String>, marginal: Categorical) {
        self.marginals.insert(object.into(), marginal);
    }

    pub fn marginal(&self, object: &str) -> Option<&Categorical> {
        self.marginals.get(object)
    }

    pub fn objects(&self) -> impl Iterator<Item = &String> {
        self.marginals.keys()
    }

    pub fn marginals(&self) -> impl Iterator<Item = (&String, &Categorical)> {
        self.marginals.iter()
    }

    pub fn mode(&self, object: &str) -> Option<&str> {
        self.marginals.get(object).and_then(Categorical::mode)
    }

    pub fn is_valid(&self) -> bool {
        self.marginals.values().all(|m| {
            (m.total() - 1.0).abs() <= 1e-9 && m.iter().all(|(_, p)| p >= 0.0 && p.is_finite())
        })
    }

    pub fn entropy(&self, object: &str) -> Result<f64, MindError> {
        self.marginals
            .get(object)
            .map(Categorical::entropy)
            .ok_or_else(|| MindError::UnknownObject(object.to_string()))
    }

    /// Strict observation update that refuses to resolve contradictions.
    pub fn try_update_on_observation(&self, obs: &Observation) -> Result<Belief, MindError> {
        let up = self.update_on_observation(obs);
        match up.reset.into_iter().next() {
            Some(object) => Err(MindError::ContradictoryEvidence { object }),
            None => Ok(up.belief),
        }
    }

    /// Deterministic-likelihood Bayes filter over one observation.
    ///
    /// A direct sighting collapses the marginal; otherwise every visible
    /// location loses its mass. When nothing is left, the marginal is reset to
    /// uniform over the candidates this observation could not see.
    pub fn update_on_observation(&self, obs: &Observation) -> ObservationUpdate {
        let mut marginals = BTreeMap::new();
        let mut reset = Vec::new();
        for (object, m) in &self.marginals {
            let cands: Vec<&String> = m.candidates().collect();
            if let Some(Seen::At(loc)) = obs.sees_object(object) {
                if m.0.contains_key(loc) {
                    marginals.insert(object.clone(), Categorical::delta(&cands, loc));
                    continue;
                }
            }
            let mut next = m.clone();
            for loc in &obs.visible_locations {
                next.zero_out(loc);
            }
            let next = match next.renormalized() {
                Some(n) => n,
                None => {
                    reset.push(object.clone());
                    let unseen: Vec<&String> = cands
                        .iter()
                        .copied()
                        .filter(|c| !obs.visible_locations.contains(*c))
                        .collect();
                    if unseen.is_empty() {
                        Categorical::uniform(&cands)
                    } else {
                        let mut u = Categorical::uniform(&unseen);
                        for c in &cands {
                            u.0.entry((*c).clone()).or_insert(0.0);
                        }
                        u
                    }
                }
            };
            marginals.insert(object.clone(), next);
        }
        ObservationUpdate {
            belief: Belief { marginals },
            reset,
        }
    }

    /// Full-trust update: each reported location overwrites the marginal.
    pub fn update_on_inform(&self, inform: &Utterance) -> Result<Belief, MindError> {
        let mut out = self.clone();
        if let Utterance::Inform { facts } = inform {
            for (object, location) in facts {
                let m = out
                    .marginals
                    .get_mut(object)
                    .ok_or_else(|| MindError::UnknownObject(object.clone()))?;
                if !m.0.contains_key(location) {
                    return Err(MindError::UnknownLocation {
                        object: object.clone(),
                        location: location.clone(),
                    });
                }
                let cands: Vec<String> = m.candidates().cloned().collect();
                *m = Categorical::delta(&cands, location);
            }
        }
        Ok(out)
    }
}

/// What an agent is physically trying to bring about.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PhysicalGoal {
    /// Hold the object.
    Find { object: String },
    /// Leave the object at a target location.
    Rearrange { object: String, target: String },
}

impl PhysicalGoal {
    pub fn find(object: impl Into<String>) -> Self {
        PhysicalGoal::Find {
            object: object.into(),
        }
    }

    pub fn rearrange(object: impl Into<String>, target: impl Into<String>) -> Self {
        PhysicalGoal::Rearrange {
            object: object.into(),
            target: target.into(),
        }
    }

    pub fn object(&self) -> &str {
        match self {
            PhysicalGoal::Find { object } | PhysicalGoal::Rearrange { object, .. } => object,
        }
    }

    pub fn satisfied(&self, state: &WorldState, agent: AgentId) -> bool {
        match self {
            PhysicalGoal::Find { object } => state.held_by(agent).any(|o| o == object),
            PhysicalGoal::Rearrange { object, target } => {
                state.placements.get(object) == Some(target)
            }
        }
    }
}

impl fmt::Display for PhysicalGoal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhysicalGoal::Find { object } => write!(f, "find({object})"),
            PhysicalGoal::Rearrange { object, target } => write!(f, "rearrange({object}->{target})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SocialGoal {
    Help,
    Hinder,
    Independent,
}

impl SocialGoal {
    pub const ALL: [SocialGoal; 3] = [SocialGoal::Help, SocialGoal::Hinder, SocialGoal::Independent];
}

/// Distribution over the other agent's physical goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GoalBelief(Vec<(PhysicalGoal, f64)>);

impl GoalBelief {
    pub fn uniform(candidates: &[PhysicalGoal]) -> Self {
        let mut goals = candidates.to_vec();
        goals.sort();
        goals.dedup();
        let p = 1.0 / goals.len() as f64;
        GoalBelief(goals.into_iter().map(|g| (g, p)).collect())
    }

    pub fn delta(goal: PhysicalGoal) -> Self {
        GoalBelief(vec![(goal, 1.0)])
    }

    pub fn from_weights(weights: Vec<(PhysicalGoal, f64)>) -> Result<Self, MindError> {
        let mut merged: BTreeMap<PhysicalGoal, f64> = BTreeMap::new();
        for (g, w) in weights {
            if w < 0.0 || !w.is_finite() {
                return Err(MindError::InvalidDistribution(format!("weight {w} for {g}")));
            }
            *merged.entry(g).or_default() += w;
        }
        let total: f64 = merged.values().sum();
        if total <= 0.0 {
            return Err(MindError::InvalidDistribution("all goal weights are zero".into()));
        }
        Ok(GoalBelief(
            merged.into_iter().map(|(g, w)| (g, w / total)).collect(),
        ))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&PhysicalGoal, f64)> {
        self.0.iter().map(|(g, p)| (g, *p))
    }

    pub fn prob(&self, goal: &PhysicalGoal) -> f64 {
        self.0
            .iter()
            .find(|(g, _)| g == goal)
            .map(|(_, p)| *p)
            .unwrap_or(0.0)
    }

    pub fn mode(&self) -> Option<&PhysicalGoal> {
        let mut best: Option<(&PhysicalGoal, f64)> = None;
        for (g, p) in &self.0 {
            if best.is_none_or(|(_, bp)| *p > bp + TIE_EPS) {
                best = Some((g, *p));
            }
        }
        best.map(|(g, _)| g)
    }

    pub fn entropy(&self) -> f64 {
        -self
            .0
            .iter()
            .filter(|(_, p)| *p > 0.0)
            .map(|(_, p)| p * p.ln())
            .sum::<f64>()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, p)| p).sum()
    }
}

/// Nested mental state, limited to two levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "level")]
pub enum InteractiveState {
    #[serde(rename = "0")]
    Level0 { physical: WorldState },
    #[serde(rename = "1")]
    Level1 {
        physical: WorldState,
        other_belief: Belief,
        other_goal: GoalBelief,
    },
}

impl InteractiveState {
    pub fn level(&self) -> u8 {
        match self {
            InteractiveState::Level0 { .. } => 0,
            InteractiveState::Level1 { .. } => 1,
        }
    }

    pub fn physical(&self) -> &WorldState {
        match self {
            InteractiveState::Level0 { physical } | InteractiveState::Level1 { physical, .. } => {
                physical
            }
        }
    }
}

/// Candidate explanation of one agent's behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub belief_of_state: Belief,
    pub social_goal: SocialGoal,
    pub belief_of_goal: GoalBelief,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Utterance {
    Inquiry { objects: Vec<String> },
    Inform { facts: Vec<(String, String)> },
    Silence,
}

impl Utterance {
    pub fn inquiry(object: impl Into<String>) -> Self {
        Utterance::Inquiry {
            objects: vec![object.into()],
        }
    }

    pub fn inform(object: impl Into<String>, location: impl Into<String>) -> Self {
        Utterance::Inform {
            facts: vec![(object.into(), location.into())],
        }
    }

    pub fn is_silence(&self) -> bool {
        matches!(self, Utterance::Silence)
    }

    /// Inform lists at most one location per object.
    pub fn is_well_formed(&self) -> bool {
        match self {
            Utterance::Inform { facts } => {
                let mut seen = std::collections::BTreeSet::new();
                facts.iter().all(|(o, _)| seen.insert(o))
            }
            Utterance::Inquiry { objects } => !objects.is_empty(),
            Utterance::Silence => true,
        }
    }
}

/// True iff the agent shares a room with the other agent and is unsure where
/// its goal object is.
pub fn should_inquire(belief: &Belief, goal: &PhysicalGoal, colocated: bool, threshold: f64) -> bool {
    colocated
        && belief
            .entropy(goal.object())
            .map(|h| h > threshold)
            .unwrap_or(false)
}

/// Exact distribution of a responder's answer to an inquiry.
///
/// Helpers report their belief mode. Hinderers name a uniformly drawn
/// location other than the mode. Indifferent responders report the mode
/// except with probability [`INDEPENDENT_MISREPORT`].
pub fn response_distribution(
    responder_belief: &Belief,
    social: SocialGoal,
    objects: &[String],
    candidates: &[String],
) -> Vec<(Utterance, f64)> {
    let mut per_object: Vec<Vec<((String, String), f64)>> = Vec::new();
    for object in objects {
        let mode = responder_belief
            .mode(object)
            .map(str::to_string)
            .or_else(|| candidates.iter().min().cloned());
        let Some(mode) = mode else { continue };
        let wrong: Vec<&String> = candidates.iter().filter(|c| **c != mode).collect();
        let mut opts = Vec::new();
        match social {
            SocialGoal::Help => opts.push(((object.clone(), mode.clone()), 1.0)),
            SocialGoal::Hinder => {
                if wrong.is_empty() {
                    opts.push(((object.clone(), mode.clone()), 1.0));
                }
                for w in &wrong {
                    opts.push(((object.clone(), (*w).clone()), 1.0 / wrong.len() as f64));
                }
            }
            SocialGoal::Independent => {
                if wrong.is_empty() {
                    opts.push(((object.clone(), mode.clone()), 1.0));
                } else {
                    opts.push(((object.clone(), mode.clone()), 1.0 - INDEPENDENT_MISREPORT));
                    for w in &wrong {
                        opts.push((
                            (object.clone(), (*w).clone()),
                            INDEPENDENT_MISREPORT / wrong.len() as f64,
                        ));
                    }
                }
            }
        }
        per_object.push(opts);
    }
    let mut out: Vec<(Vec<(String, String)>, f64)> = vec![(Vec::new(), 1.0)];
    for opts in per_object {
        out = out
            .into_iter()
            .flat_map(|(facts, p)| {
                opts.iter().map(move |(fact, q)| {
                    let mut f = facts.clone();
                    f.push(fact.clone());
                    (f, p * q)
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|(facts, p)| (Utterance::Inform { facts }, p))
        .collect()
}

/// Answer an inquiry according to the responder's social goal.
pub fn compose_response<R: Rng + ?Sized>(
    responder_belief: &Belief,
    social: SocialGoal,
    inquiry: &Utterance,
    candidates: &[String],
    rng: &mut R,
) -> Utterance {
    let objects = match inquiry {
        Utterance::Inquiry { objects } => objects.as_slice(),
        _ => return Utterance::Inform { facts: Vec::new() },
    };
    let dist = response_distribution(responder_belief, social, objects, candidates);
    sample_weighted(&dist, rng).clone()
}

pub(crate) fn sample_weighted<'a, T, R: Rng + ?Sized>(items: &'a [(T, f64)], rng: &mut R) -> &'a T {
    let total: f64 = items.iter().map(|(_, p)| p).sum();
    let mut x = rng.gen::<f64>() * total;
    for (item, p) in items {
        if x < *p {
            return item;
        }
        x -= p;
    }
    &items.last().expect("nonempty distribution").0
}
