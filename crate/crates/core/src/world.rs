//! Ground-truth household environment.
//!
//! Rooms are nodes and furniture pieces are attachment points inside a room.
//! Walking is a single-step macro, every other verb needs the agent to be
//! standing next to the furniture it touches.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum number of objects an agent can carry at once.
pub const HAND_CAPACITY: usize = 2;

const TEMPLATES_JSON: &str = include_str!("../fixtures/apartments.json");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("illegal action {action} for {agent}: {reason}")]
    IllegalAction {
        agent: AgentId,
        action: PrimitiveAction,
        reason: String,
    },
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("invalid apartment: {0}")]
    InvalidApartment(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("unknown apartment template {0:?}")]
    UnknownTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u8);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "agent{}", self.0)
    }
}

impl AgentId {
    pub fn other(self) -> AgentId {
        AgentId(1 - self.0.min(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FurnitureKind {
    Surface,
    Container,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Furniture {
    pub id: String,
    pub room: String,
    pub kind: FurnitureKind,
}

/// A place an object can rest: a furniture piece, its room and its kind.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Location {
    pub room: String,
    pub furniture: String,
    pub kind: FurnitureKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Apartment {
    pub id: String,
    pub rooms: Vec<String>,
    pub furniture: Vec<Furniture>,
    pub object_vocabulary: Vec<String>,
}

impl Apartment {
    pub fn new(
        id: impl Into<String>,
        rooms: Vec<String>,
        furniture: Vec<Furniture>,
        object_vocabulary: Vec<String>,
    ) -> Result<Self, WorldError> {
        let apt = Apartment {
            id: id.into(),
            rooms,
            furniture,
            object_vocabulary,
        };
        apt.validate()?;
        Ok(apt)
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let rooms: BTreeSet<&str> = self.rooms.iter().map(String::as_str).collect();
        if rooms.len() != self.rooms.len() || rooms.is_empty() {
            return Err(WorldError::InvalidApartment(format!(
                "{}: room ids must be unique and nonempty",
                self.id
            )));
        }
        let mut seen = BTreeSet::new();
        for f in &self.furniture {
            if !rooms.contains(f.room.as_str()) {
                return Err(WorldError::InvalidApartment(format!(
                    "{}: furniture {} references unknown room {}",
                    self.id, f.id, f.room
                )));
            }
            if rooms.contains(f.id.as_str()) || !seen.insert(f.id.as_str()) {
                return Err(WorldError::InvalidApartment(format!(
                    "{}: duplicate identifier {}",
                    self.id, f.id
                )));
            }
        }
        let vocab: BTreeSet<&str> = self.object_vocabulary.iter().map(String::as_str).collect();
        if vocab.len() != self.object_vocabulary.len() {
            return Err(WorldError::InvalidApartment(format!(
                "{}: duplicate object kind",
                self.id
            )));
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Vec<Apartment>, WorldError> {
        let apts: Vec<Apartment> = serde_json::from_str(json)
            .map_err(|e| WorldError::InvalidApartment(e.to_string()))?;
        for a in &apts {
            a.validate()?;
        }
        Ok(apts)
    }

    /// The apartment layouts shipped with the crate.
    pub fn templates() -> Vec<Apartment> {
        Apartment::from_json(TEMPLATES_JSON).expect("bundled apartment fixture is valid")
    }

    pub fn template(id: &str) -> Result<Apartment, WorldError> {
        Apartment::templates()
            .into_iter()
            .find(|a| a.id == id)
            .ok_or_else(|| WorldError::UnknownTemplate(id.to_string()))
    }

    pub fn furniture(&self, id: &str) -> Option<&Furniture> {
        self.furniture.iter().find(|f| f.id == id)
    }

    pub fn location(&self, id: &str) -> Option<Location> {
        self.furniture(id).map(|f| Location {
            room: f.room.clone(),
            furniture: f.id.clone(),
            kind: f.kind,
        })
    }

    pub fn has_room(&self, room: &str) -> bool {
        self.rooms.iter().any(|r| r == room)
    }

    pub fn is_container(&self, id: &str) -> bool {
        matches!(self.furniture(id), Some(f) if f.kind == FurnitureKind::Container)
    }

    pub fn room_of(&self, furniture: &str) -> Option<&str> {
        self.furniture(furniture).map(|f| f.room.as_str())
    }

    pub fn furniture_ids(&self) -> Vec<String> {
        self.furniture.iter().map(|f| f.id.clone()).collect()
    }

    pub fn containers(&self) -> impl Iterator<Item = &Furniture> {
        self.furniture
            .iter()
            .filter(|f| f.kind == FurnitureKind::Container)
    }

    pub fn furniture_in<'a>(&'a self, room: &'a str) -> impl Iterator<Item = &'a Furniture> + 'a {
        self.furniture.iter().filter(move |f| f.room == room)
    }
}

/// Where an agent stands: a room, optionally next to one furniture piece.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Pose {
    pub room: String,
    pub near: Option<String>,
}

impl Pose {
    pub fn in_room(room: impl Into<String>) -> Self {
        Pose {
            room: room.into(),
            near: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum WalkTarget {
    Furniture(String),
    Room(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "verb", rename_all = "snake_case")]
pub enum PrimitiveAction {
    WalkTowards { target: WalkTarget },
    Open { container: String },
    Close { container: String },
    Grab { object: String, from: String },
    Put { object: String, to: String },
    Noop,
}

impl PrimitiveAction {
    pub fn walk_to(furniture: impl Into<String>) -> Self {
        PrimitiveAction::WalkTowards {
            target: WalkTarget::Furniture(furniture.into()),
        }
    }

    pub fn walk_to_room(room: impl Into<String>) -> Self {
        PrimitiveAction::WalkTowards {
            target: WalkTarget::Room(room.into()),
        }
    }

    pub fn grab(object: impl Into<String>, from: impl Into<String>) -> Self {
        PrimitiveAction::Grab {
            object: object.into(),
            from: from.into(),
        }
    }

    pub fn put(object: impl Into<String>, to: impl Into<String>) -> Self {
        PrimitiveAction::Put {
            object: object.into(),
            to: to.into(),
        }
    }

    pub fn open(container: impl Into<String>) -> Self {
        PrimitiveAction::Open {
            container: container.into(),
        }
    }

    pub fn close(container: impl Into<String>) -> Self {
        PrimitiveAction::Close {
            container: container.into(),
        }
    }

    /// Object touched by a Grab or Put.
    pub fn object(&self) -> Option<&str> {
        match self {
            PrimitiveAction::Grab { object, .. } | PrimitiveAction::Put { object, .. } => {
                Some(object)
            }
            _ => None,
        }
    }
}

impl fmt::Display for PrimitiveAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PrimitiveAction::WalkTowards {
                target: WalkTarget::Furniture(id),
            } => write!(f, "walk_towards({id})"),
            PrimitiveAction::WalkTowards {
                target: WalkTarget::Room(id),
            } => write!(f, "walk_towards(room {id})"),
            PrimitiveAction::Open { container } => write!(f, "open({container})"),
            PrimitiveAction::Close { container } => write!(f, "close({container})"),
            PrimitiveAction::Grab { object, from } => write!(f, "grab({object}, {from})"),
            PrimitiveAction::Put { object, to } => write!(f, "put({object}, {to})"),
            PrimitiveAction::Noop => write!(f, "noop"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Seen {
    /// Resting on or inside a furniture piece.
    At(String),
    HeldBy(AgentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub viewer: AgentId,
    pub room: String,
    pub visible_objects: BTreeSet<(String, Seen)>,
    /// Other agents in the viewer's room with the action they just took.
    pub visible_agents: BTreeMap<AgentId, Option<PrimitiveAction>>,
    pub open_state: BTreeMap<String, bool>,
    /// Locations whose full contents the viewer can see.
    pub visible_locations: BTreeSet<String>,
}

impl Observation {
    pub fn sees_object(&self, object: &str) -> Option<&Seen> {
        self.visible_objects
            .iter()
            .find(|(o, _)| o == object)
            .map(|(_, s)| s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub agent_pose: BTreeMap<AgentId, Pose>,
    pub placements: BTreeMap<String, String>,
    pub container_open: BTreeMap<String, bool>,
    pub holding: BTreeMap<AgentId, BTreeSet<String>>,
    #[serde(default)]
    pub last_action: BTreeMap<AgentId, PrimitiveAction>,
    pub tick: u64,
}

impl WorldState {
    /// Fresh state with every container closed and empty hands.
    pub fn new(
        apt: &Apartment,
        poses: BTreeMap<AgentId, Pose>,
        placements: BTreeMap<String, String>,
    ) -> Result<Self, WorldError> {
        let container_open = apt.containers().map(|c| (c.id.clone(), false)).collect();
        let holding = poses.keys().map(|a| (*a, BTreeSet::new())).collect();
        let s = WorldState {
            agent_pose: poses,
            placements,
            container_open,
            holding,
            last_action: BTreeMap::new(),
            tick: 0,
        };
        s.check_invariants(apt)?;
        Ok(s)
    }

    pub fn check_invariants(&self, apt: &Apartment) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::InvalidState(m));
        for (agent, pose) in &self.agent_pose {
            if !apt.has_room(&pose.room) {
                return bad(format!("{agent} in unknown room {}", pose.room));
            }
            if let Some(f) = &pose.near {
                if apt.room_of(f) != Some(pose.room.as_str()) {
                    return bad(format!("{agent} near {f} outside room {}", pose.room));
                }
            }
        }
        for (obj, loc) in &self.placements {
            if apt.furniture(loc).is_none() {
                return bad(format!("{obj} placed at unknown furniture {loc}"));
            }
        }
        let mut held = BTreeSet::new();
        for (agent, objs) in &self.holding {
            if !self.agent_pose.contains_key(agent) {
                return bad(format!("holding entry for unknown {agent}"));
            }
            if objs.len() > HAND_CAPACITY {
                return bad(format!("{agent} holds {} objects", objs.len()));
            }
            for o in objs {
                if self.placements.contains_key(o) || !held.insert(o.clone()) {
                    return bad(format!("object {o} is in more than one place"));
                }
            }
        }
        let containers: BTreeSet<&str> = apt.containers().map(|c| c.id.as_str()).collect();
        let keys: BTreeSet<&str> = self.container_open.keys().map(String::as_str).collect();
        if containers != keys {
            return bad("container_open must cover exactly the containers".into());
        }
        Ok(())
    }

    pub fn pose(&self, agent: AgentId) -> Result<&Pose, WorldError> {
        self.agent_pose
            .get(&agent)
            .ok_or(WorldError::UnknownAgent(agent))
    }

    pub fn held_by(&self, agent: AgentId) -> impl Iterator<Item = &String> {
        self.holding.get(&agent).into_iter().flatten()
    }

    pub fn holder_of(&self, object: &str) -> Option<AgentId> {
        self.holding
            .iter()
            .find(|(_, objs)| objs.contains(object))
            .map(|(a, _)| *a)
    }

    pub fn is_open(&self, container: &str) -> bool {
        self.container_open.get(container).copied().unwrap_or(false)
    }

    /// Every object instance in the state, placed or held.
    pub fn objects(&self) -> BTreeSet<String> {
        self.placements
            .keys()
            .cloned()
            .chain(self.holding.values().flatten().cloned())
            .collect()
    }

    pub fn colocated(&self, a: AgentId, b: AgentId) -> bool {
        match (self.agent_pose.get(&a), self.agent_pose.get(&b)) {
            (Some(pa), Some(pb)) => pa.room == pb.room,
            _ => false,
        }
    }

    fn accessible(&self, apt: &Apartment, furniture: &str) -> bool {
        !apt.is_container(furniture) || self.is_open(furniture)
    }
}

fn illegal<T>(agent: AgentId, action: &PrimitiveAction, reason: &str) -> Result<T, WorldError> {
    Err(WorldError::IllegalAction {
        agent,
        action: action.clone(),
        reason: reason.to_string(),
    })
}

fn check_legal(
    apt: &Apartment,
    state: &WorldState,
    agent: AgentId,
    action: &PrimitiveAction,
) -> Result<(), WorldError> {
    let pose = state.pose(agent)?;
    let adjacent = |f: &str| pose.near.as_deref() == Some(f);
    match action {
        PrimitiveAction::Noop => Ok(()),
        PrimitiveAction::WalkTowards { target } => match target {
            WalkTarget::Furniture(f) => {
                if apt.furniture(f).is_none() {
                    illegal(agent, action, "unknown furniture")
                } else if adjacent(f) {
                    illegal(agent, action, "already adjacent")
                } else {
                    Ok(())
                }
            }
            WalkTarget::Room(r) => {
                if !apt.has_room(r) {
                    illegal(agent, action, "unknown room")
                } else if pose.room == *r && pose.near.is_none() {
                    illegal(agent, action, "already there")
                } else {
                    Ok(())
                }
            }
        },
        PrimitiveAction::Open { container } | PrimitiveAction::Close { container } => {
            let opening = matches!(action, PrimitiveAction::Open { .. });
            if !apt.is_container(container) {
                illegal(agent, action, "not a container")
            } else if !adjacent(container) {
                illegal(agent, action, "not adjacent")
            } else if state.is_open(container) == opening {
                illegal(agent, action, "container already in that state")
            } else {
                Ok(())
            }
        }
        PrimitiveAction::Grab { object, from } => {
            if !apt.object_vocabulary.contains(object) {
                illegal(agent, action, "object kind not in vocabulary")
            } else if !adjacent(from) {
                illegal(agent, action, "not adjacent")
            } else if state.placements.get(object) != Some(from) {
                illegal(agent, action, "object is not there")
            } else if !state.accessible(apt, from) {
                illegal(agent, action, "container is closed")
            } else if state.held_by(agent).count() >= HAND_CAPACITY {
                illegal(agent, action, "hands are full")
            } else {
                Ok(())
            }
        }
        PrimitiveAction::Put { object, to } => {
            if !apt.object_vocabulary.contains(object) {
                illegal(agent, action, "object kind not in vocabulary")
            } else if !adjacent(to) {
                illegal(agent, action, "not adjacent")
            } else if !state.held_by(agent).any(|o| o == object) {
                illegal(agent, action, "not holding object")
            } else if !state.accessible(apt, to) {
                illegal(agent, action, "container is closed")
            } else {
                Ok(())
            }
        }
    }
}

/// Deterministic successor of `state` after `agent` performs `action`.
pub fn apply(
    apt: &Apartment,
    state: &WorldState,
    agent: AgentId,
    action: &PrimitiveAction,
) -> Result<WorldState, WorldError> {
    check_legal(apt, state, agent, action)?;
    let mut next = state.clone();
    match action {
        PrimitiveAction::Noop => {}
        PrimitiveAction::WalkTowards { target } => {
            let pose = next.agent_pose.get_mut(&agent).expect("checked");
            *pose = match target {
                WalkTarget::Furniture(f) => Pose {
                    room: apt.room_of(f).expect("checked").to_string(),
                    near: Some(f.clone()),
                },
                WalkTarget::Room(r) => Pose::in_room(r.clone()),
            };
        }
        PrimitiveAction::Open { container } => {
            next.container_open.insert(container.clone(), true);
        }
        PrimitiveAction::Close { container } => {
            next.container_open.insert(container.clone(), false);
        }
        PrimitiveAction::Grab { object, .. } => {
            next.placements.remove(object);
            next.holding
                .entry(agent)
                .or_default()
                .insert(object.clone());
        }
        PrimitiveAction::Put { object, to } => {
            next.holding.entry(agent).or_default().remove(object);
            next.placements.insert(object.clone(), to.clone());
        }
    }
    next.last_action.insert(agent, action.clone());
    next.tick += 1;
    Ok(next)
}

/// All actions `apply` accepts for `agent`, in a fixed order. Noop is always included.
pub fn legal_actions(apt: &Apartment, state: &WorldState, agent: AgentId) -> Vec<PrimitiveAction> {
    let Ok(pose) = state.pose(agent) else {
        return vec![PrimitiveAction::Noop];
    };
    let mut out = BTreeSet::new();
    out.insert(PrimitiveAction::Noop);
    for f in &apt.furniture {
        if pose.near.as_deref() != Some(f.id.as_str()) {
            out.insert(PrimitiveAction::walk_to(&f.id));
        }
    }
    for r in &apt.rooms {
        if !(pose.room == *r && pose.near.is_none()) {
            out.insert(PrimitiveAction::walk_to_room(r));
        }
    }
    if let Some(near) = &pose.near {
        if apt.is_container(near) {
            if state.is_open(near) {
                out.insert(PrimitiveAction::close(near));
            } else {
                out.insert(PrimitiveAction::open(near));
            }
        }
        if state.accessible(apt, near) {
            let held = state.held_by(agent).count();
            if held < HAND_CAPACITY {
                for (obj, loc) in &state.placements {
                    if loc == near && apt.object_vocabulary.contains(obj) {
                        out.insert(PrimitiveAction::grab(obj, near));
                    }
                }
            }
            for obj in state.held_by(agent) {
                out.insert(PrimitiveAction::put(obj, near));
            }
        }
    }
    out.into_iter().collect()
}

/// What `agent` perceives from where it stands.
pub fn observe(apt: &Apartment, state: &WorldState, agent: AgentId) -> Result<Observation, WorldError> {
    let pose = state.pose(agent)?;
    let room = pose.room.clone();
    let mut visible_locations = BTreeSet::new();
    let mut open_state = BTreeMap::new();
    for f in apt.furniture_in(&room) {
        match f.kind {
            FurnitureKind::Surface => {
                visible_locations.insert(f.id.clone());
            }
            FurnitureKind::Container => {
                let open = state.is_open(&f.id);
                open_state.insert(f.id.clone(), open);
                if open {
                    visible_locations.insert(f.id.clone());
                }
            }
        }
    }
    let mut visible_objects: BTreeSet<(String, Seen)> = state
        .placements
        .iter()
        .filter(|(_, loc)| visible_locations.contains(*loc))
        .map(|(o, loc)| (o.clone(), Seen::At(loc.clone())))
        .collect();
    let mut visible_agents = BTreeMap::new();
    for (other, other_pose) in &state.agent_pose {
        if other_pose.room != room {
            continue;
        }
        for o in state.held_by(*other) {
            visible_objects.insert((o.clone(), Seen::HeldBy(*other)));
        }
        if *other != agent {
            visible_agents.insert(*other, state.last_action.get(other).cloned());
        }
    }
    Ok(Observation {
        viewer: agent,
        room,
        visible_objects,
        visible_agents,
        open_state,
        visible_locations,
    })
}

/// Human-readable form of an identifier: `coffee_table` becomes `coffee table`.
pub fn display_name(id: &str) -> String {
    id.replace('_', " ")
}
