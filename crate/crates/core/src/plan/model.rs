//! Compact single-agent view of the world used by both search backends.
//!
//! Only what matters for moving one goal object is kept: the agent's pose,
//! which containers are open, where the goal object is and how many other
//! objects the agent is carrying.

use std::collections::VecDeque;

use crate::world::{Apartment, AgentId, FurnitureKind, Pose, WorldState, HAND_CAPACITY};

use super::Objective;

pub(crate) const HELD: u8 = u8::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) struct AbsState {
    pub pose: u8,
    pub open: u16,
    pub obj: u8,
    pub extra: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub(crate) enum AbsAction {
    Walk(u8),
    Open(u8),
    Close(u8),
    Grab,
    Put,
    PutOther,
    Noop,
}

pub(crate) struct Model {
    poses: Vec<Pose>,
    furniture: Vec<String>,
    container_bit: Vec<Option<u8>>,
    n_containers: usize,
}

impl Model {
    pub fn new(apt: &Apartment) -> Self {
        let furniture: Vec<String> = apt.furniture_ids();
        let mut poses: Vec<Pose> = apt.rooms.iter().map(Pose::in_room).collect();
        let mut container_bit = Vec::new();
        let mut n_containers = 0;
        for f in &furniture {
            let room = apt.room_of(f).expect("furniture has a room");
            poses.push(Pose {
                room: room.to_string(),
                near: Some(f.clone()),
            });
            if apt.furniture(f).map(|x| x.kind) == Some(FurnitureKind::Container) {
                container_bit.push(Some(n_containers as u8));
                n_containers += 1;
            } else {
                container_bit.push(None);
            }
        }
        Model {
            poses,
            furniture,
            container_bit,
            n_containers,
        }
    }

    fn n_rooms(&self) -> usize {
        self.poses.len() - self.furniture.len()
    }

    pub fn size(&self) -> usize {
        self.poses.len() * (1 << self.n_containers) * (self.furniture.len() + 1) * (HAND_CAPACITY + 1)
    }

    pub fn index(&self, s: AbsState) -> usize {
        let obj = if s.obj == HELD {
            self.furniture.len()
        } else {
            s.obj as usize
        };
        ((s.pose as usize * (1 << self.n_containers) + s.open as usize) * (self.furniture.len() + 1)
            + obj)
            * (HAND_CAPACITY + 1)
            + s.extra as usize
    }

    fn decode(&self, mut i: usize) -> AbsState {
        let extra = (i % (HAND_CAPACITY + 1)) as u8;
        i /= HAND_CAPACITY + 1;
        let obj = i % (self.furniture.len() + 1);
        i /= self.furniture.len() + 1;
        let open = (i % (1 << self.n_containers)) as u16;
        let pose = (i / (1 << self.n_containers)) as u8;
        AbsState {
            pose,
            open,
            obj: if obj == self.furniture.len() { HELD } else { obj as u8 },
            extra,
        }
    }

    pub fn furniture_index(&self, id: &str) -> Option<u8> {
        self.furniture.iter().position(|f| f == id).map(|i| i as u8)
    }

    /// Abstract `state` from `agent`'s point of view. `None` when the goal
    /// object is out of reach (held by someone else or absent).
    pub fn abstract_state(&self, state: &WorldState, agent: AgentId, object: Option<&str>) -> Option<AbsState> {
        let pose = state.agent_pose.get(&agent)?;
        let pose_idx = self.poses.iter().position(|p| p == pose)? as u8;
        let mut open = 0u16;
        for (i, f) in self.furniture.iter().enumerate() {
            if let Some(bit) = self.container_bit[i] {
                if state.is_open(f) {
                    open |= 1 << bit;
                }
            }
        }
        let held: Vec<&String> = state.held_by(agent).collect();
        let (obj, extra) = match object {
            None => (0, held.len()),
            Some(o) => {
                if held.iter().any(|h| *h == o) {
                    (HELD, held.len() - 1)
                } else {
                    let at = state.placements.get(o)?;
                    (self.furniture_index(at)?, held.len())
                }
            }
        };
        Some(AbsState {
            pose: pose_idx,
            open,
            obj,
            extra: extra as u8,
        })
    }

    fn near(&self, s: AbsState) -> Option<u8> {
        let p = s.pose as usize;
        (p >= self.n_rooms()).then(|| (p - self.n_rooms()) as u8)
    }

    fn accessible(&self, s: AbsState, f: u8) -> bool {
        match self.container_bit[f as usize] {
            Some(bit) => s.open & (1 << bit) != 0,
            None => true,
        }
    }

    pub fn is_goal(&self, objective: &Objective, s: AbsState) -> bool {
        match objective {
            Objective::Idle => true,
            Objective::Hold { .. } => s.obj == HELD,
            Objective::Place { target, .. } => {
                s.obj != HELD && Some(s.obj) == self.furniture_index(target)
            }
            Objective::Displace { avoid, .. } => {
                s.obj != HELD && Some(s.obj) != self.furniture_index(avoid)
            }
        }
    }

    /// Deterministic successors mirroring the world rules for the agent
    /// acting alone. Grabbing unrelated objects is never useful and is left
    /// out.
    pub fn successors(&self, s: AbsState) -> Vec<(AbsAction, AbsState)> {
        let mut out = Vec::new();
        for p in 0..self.poses.len() {
            if p == s.pose as usize {
                continue;
            }
            out.push((AbsAction::Walk(p as u8), AbsState { pose: p as u8, ..s }));
        }
        if let Some(f) = self.near(s) {
            if let Some(bit) = self.container_bit[f as usize] {
                let mask = 1u16 << bit;
                if s.open & mask == 0 {
                    out.push((AbsAction::Open(f), AbsState { open: s.open | mask, ..s }));
                } else {
                    out.push((AbsAction::Close(f), AbsState { open: s.open & !mask, ..s }));
                }
            }
            if self.accessible(s, f) {
                if s.obj == f && (s.extra as usize) < HAND_CAPACITY {
                    out.push((AbsAction::Grab, AbsState { obj: HELD, ..s }));
                }
                if s.obj == HELD {
                    out.push((AbsAction::Put, AbsState { obj: f, ..s }));
                }
                if s.extra > 0 {
                    out.push((AbsAction::PutOther, AbsState { extra: s.extra - 1, ..s }));
                }
            }
        }
        out.push((AbsAction::Noop, s));
        out
    }

    /// Shortest action count to any goal state, for every abstract state.
    pub fn distance_table(&self, objective: &Objective) -> Vec<u32> {
        let n = self.size();
        let mut preds: Vec<Vec<u32>> = vec![Vec::new(); n];
        let mut dist = vec![u32::MAX; n];
        let mut queue = VecDeque::new();
        for i in 0..n {
            let s = self.decode(i);
            if !self.valid(s) {
                continue;
            }
            if self.is_goal(objective, s) {
                dist[i] = 0;
                queue.push_back(i);
            }
            for (_, t) in self.successors(s) {
                let j = self.index(t);
                if j != i {
                    preds[j].push(i as u32);
                }
            }
        }
        while let Some(j) = queue.pop_front() {
            let d = dist[j] + 1;
            for &i in &preds[j] {
                let i = i as usize;
                if dist[i] == u32::MAX {
                    dist[i] = d;
                    queue.push_back(i);
                }
            }
        }
        dist
    }

    fn valid(&self, s: AbsState) -> bool {
        let held = s.extra as usize + usize::from(s.obj == HELD);
        held <= HAND_CAPACITY
    }

    /// Cheap scripted plan used as the MCTS rollout: fetch the object and
    /// carry it where the objective wants it.
    pub fn scripted_cost(&self, objective: &Objective, start: AbsState, limit: u32) -> u32 {
        let mut s = start;
        let mut cost = 0;
        while !self.is_goal(objective, s) {
            if cost >= limit {
                return limit * 2;
            }
            let want: Option<u8> = if s.obj == HELD {
                match objective {
                    Objective::Place { target, .. } => self.furniture_index(target),
                    Objective::Displace { avoid, .. } => {
                        let avoid = self.furniture_index(avoid);
                        match self.near(s) {
                            Some(f) if Some(f) != avoid => Some(f),
                            _ => (0..self.furniture.len() as u8).find(|f| Some(*f) != avoid),
                        }
                    }
                    _ => None,
                }
            } else {
                Some(s.obj)
            };
            let Some(f) = want else { return limit * 2 };
            let step = if self.near(s) != Some(f) {
                AbsState {
                    pose: (self.n_rooms() + f as usize) as u8,
                    ..s
                }
            } else if !self.accessible(s, f) {
                let bit = self.container_bit[f as usize].expect("closed means container");
                AbsState {
                    open: s.open | (1 << bit),
                    ..s
                }
            } else if s.obj == HELD {
                AbsState { obj: f, ..s }
            } else if s.extra as usize >= HAND_CAPACITY {
                AbsState {
                    extra: s.extra - 1,
                    ..s
                }
            } else {
                AbsState { obj: HELD, ..s }
            };
            s = step;
            cost += 1;
        }
        cost
    }
}
