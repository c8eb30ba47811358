//! UCT search over the abstract model with a shared transposition table.
//!
//! The domain is deterministic with unit costs, so each node keeps the best
//! cost-to-go found so far and backups take minima instead of averages.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::model::{AbsAction, AbsState, Model};
use super::Objective;

const EXPLORATION: f64 = 1.0;
const DEPTH_LIMIT: usize = 64;

struct Node {
    visits: u32,
    best: f64,
    children: Vec<AbsState>,
}

pub(crate) struct Mcts<'a> {
    model: &'a Model,
    objective: &'a Objective,
    nodes: HashMap<AbsState, Node>,
    rng: ChaCha8Rng,
}

impl<'a> Mcts<'a> {
    pub fn new(model: &'a Model, objective: &'a Objective, rng: ChaCha8Rng) -> Self {
        Mcts {
            model,
            objective,
            nodes: HashMap::new(),
            rng,
        }
    }

    fn rollout(&self, s: AbsState) -> f64 {
        self.model.scripted_cost(self.objective, s, DEPTH_LIMIT as u32) as f64
    }

    /// Best known cost-to-go from `s`.
    pub fn value(&self, s: AbsState) -> f64 {
        if self.model.is_goal(self.objective, s) {
            return 0.0;
        }
        match self.nodes.get(&s) {
            Some(n) => n.best,
            None => self.rollout(s),
        }
    }

    fn expand(&mut self, s: AbsState) {
        let children: Vec<AbsState> = self
            .model
            .successors(s)
            .into_iter()
            .filter(|(a, t)| *a != AbsAction::Noop && *t != s)
            .map(|(_, t)| t)
            .collect();
        let best = self.rollout(s);
        self.nodes.insert(
            s,
            Node {
                visits: 0,
                best,
                children,
            },
        );
    }

    fn select(&mut self, s: AbsState, path: &[AbsState]) -> Option<AbsState> {
        let node = &self.nodes[&s];
        let ln_n = ((node.visits + 1) as f64).ln();
        let mut fresh = Vec::new();
        let mut best: Option<(f64, AbsState)> = None;
        for &c in &node.children {
            if path.contains(&c) {
                continue;
            }
            match self.nodes.get(&c) {
                None => fresh.push(c),
                Some(child) => {
                    let exploit = -(1.0 + self.value(c)) / DEPTH_LIMIT as f64;
                    let explore = EXPLORATION * (ln_n / (child.visits + 1) as f64).sqrt();
                    let score = exploit + explore + self.rng.gen::<f64>() * 1e-9;
                    if best.is_none_or(|(b, _)| score > b) {
                        best = Some((score, c));
                    }
                }
            }
        }
        if let Some(c) = fresh.choose(&mut self.rng) {
            return Some(*c);
        }
        best.map(|(_, c)| c)
    }

    fn simulate(&mut self, root: AbsState) {
        let mut path = vec![root];
        let mut s = root;
        loop {
            if self.model.is_goal(self.objective, s) || path.len() > DEPTH_LIMIT {
                break;
            }
            if !self.nodes.contains_key(&s) {
                self.expand(s);
                break;
            }
            match self.select(s, &path) {
                Some(next) => {
                    path.push(next);
                    s = next;
                }
                None => break,
            }
        }
        for w in path.windows(2).rev() {
            let (parent, child) = (w[0], w[1]);
            let through = 1.0 + self.value(child);
            let node = self.nodes.get_mut(&parent).expect("expanded on the way down");
            node.visits += 1;
            if through < node.best {
                node.best = through;
            }
        }
        if let Some(n) = self.nodes.get_mut(&s) {
            n.visits += 1;
        }
    }

    pub fn search(&mut self, root: AbsState, simulations: usize) {
        if self.model.is_goal(self.objective, root) {
            return;
        }
        for _ in 0..simulations {
            self.simulate(root);
        }
    }
}
