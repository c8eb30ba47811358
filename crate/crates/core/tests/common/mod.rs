#![allow(dead_code)]

pub mod brute;

use std::collections::{BTreeMap, HashSet, VecDeque};

use household_tom::plan::Objective;
use household_tom::world::{apply, legal_actions, AgentId, Apartment, Pose, WorldState};

pub fn pose(room: &str, near: Option<&str>) -> Pose {
    Pose {
        room: room.to_string(),
        near: near.map(str::to_string),
    }
}

pub fn one_agent(apt: &Apartment, p: Pose, placements: &[(&str, &str)]) -> WorldState {
    WorldState::new(
        apt,
        [(AgentId(0), p)].into_iter().collect(),
        placements
            .iter()
            .map(|(o, l)| (o.to_string(), l.to_string()))
            .collect::<BTreeMap<_, _>>(),
    )
    .unwrap()
}

fn key(s: &WorldState) -> WorldState {
    let mut k = s.clone();
    k.tick = 0;
    k.last_action.clear();
    k
}

/// Fewest actions that satisfy `objective`, found by breadth-first search over
/// full world states through the public transition function.
pub fn bfs_cost(
    apt: &Apartment,
    start: &WorldState,
    agent: AgentId,
    objective: &Objective,
    horizon: u32,
) -> Option<u32> {
    let mut seen = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(key(start));
    queue.push_back((start.clone(), 0u32));
    while let Some((s, d)) = queue.pop_front() {
        if objective.satisfied(&s, agent) {
            return Some(d);
        }
        if d == horizon {
            continue;
        }
        for a in legal_actions(apt, &s, agent) {
            let t = apply(apt, &s, agent, &a).unwrap();
            if seen.insert(key(&t)) {
                queue.push_back((t, d + 1));
            }
        }
    }
    None
}

use household_tom::mind::{Belief, Categorical, Utterance};
use household_tom::world::{observe, Observation, PrimitiveAction};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random reachable-looking state: objects scattered, containers randomly
/// open, two agents at random poses holding nothing.
pub fn random_state(apt: &Apartment, rng: &mut ChaCha8Rng) -> WorldState {
    let locations = apt.furniture_ids();
    let mut poses = BTreeMap::new();
    for a in 0..2u8 {
        let f = locations.choose(rng).unwrap();
        let near = if rng.gen_bool(0.5) { Some(f.as_str()) } else { None };
        poses.insert(AgentId(a), pose(apt.room_of(f).unwrap(), near));
    }
    let mut placements = BTreeMap::new();
    for o in &apt.object_vocabulary {
        if rng.gen_bool(0.7) {
            placements.insert(o.clone(), locations.choose(rng).unwrap().clone());
        }
    }
    let mut s = WorldState::new(apt, poses, placements).unwrap();
    for open in s.container_open.values_mut() {
        *open = rng.gen_bool(0.5);
    }
    s
}

/// Random walk of legal actions for both agents.
pub fn random_walk(apt: &Apartment, s: &WorldState, steps: usize, rng: &mut ChaCha8Rng) -> Vec<(AgentId, PrimitiveAction)> {
    let mut out = Vec::new();
    let mut s = s.clone();
    for k in 0..steps {
        let agent = AgentId((k % 2) as u8);
        let a = legal_actions(apt, &s, agent).choose(rng).unwrap().clone();
        s = apply(apt, &s, agent, &a).unwrap();
        out.push((agent, a));
    }
    out
}

/// Random marginal over `cands` with some exact zeros and at least one
/// positive entry.
pub fn random_categorical(cands: &[String], rng: &mut ChaCha8Rng) -> Categorical {
    let mut w: BTreeMap<String, f64> = cands
        .iter()
        .map(|c| (c.clone(), if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.01..1.0) }))
        .collect();
    let pick = cands.choose(rng).unwrap().clone();
    *w.get_mut(&pick).unwrap() += 0.5;
    Categorical::from_weights(w).unwrap()
}

pub fn random_belief(apt: &Apartment, rng: &mut ChaCha8Rng) -> Belief {
    let cands = apt.furniture_ids();
    let mut b = Belief::new();
    for o in &apt.object_vocabulary {
        b.insert(o.clone(), random_categorical(&cands, rng));
    }
    b
}

fn normalized(m: &Categorical) -> Result<(), String> {
    if (m.total() - 1.0).abs() > 1e-9 || m.iter().any(|(_, p)| p < 0.0) {
        return Err(format!("not normalized: {m:?}"));
    }
    Ok(())
}

/// Observation update against a direct enumeration of the posterior.
pub fn check_observation_update(belief: &Belief, obs: &Observation) -> Result<(), String> {
    let up = belief.update_on_observation(obs);
    for (object, prior) in belief.marginals() {
        let got = up.belief.marginal(object).ok_or("marginal dropped")?;
        normalized(got)?;
        let seen_at = obs.visible_objects.iter().find_map(|(o, s)| match s {
            household_tom::world::Seen::At(l) if o == object => Some(l.clone()),
            _ => None,
        });
        let expected: BTreeMap<String, f64> = if let Some(at) = seen_at {
            prior.candidates().map(|c| (c.clone(), if *c == at { 1.0 } else { 0.0 })).collect()
        } else {
            let kept: BTreeMap<String, f64> = prior
                .iter()
                .map(|(c, p)| (c.clone(), if obs.visible_locations.contains(c) { 0.0 } else { p }))
                .collect();
            let z: f64 = kept.values().sum();
            if z > 0.0 {
                if up.reset.contains(object) {
                    return Err(format!("{object}: reset without contradiction"));
                }
                kept.into_iter().map(|(c, p)| (c, p / z)).collect()
            } else {
                if !up.reset.contains(object) {
                    return Err(format!("{object}: contradiction not reported"));
                }
                let unseen = prior.candidates().filter(|c| !obs.visible_locations.contains(*c)).count();
                prior
                    .candidates()
                    .map(|c| {
                        let p = if unseen == 0 {
                            1.0 / prior.candidates().count() as f64
                        } else if obs.visible_locations.contains(c) {
                            0.0
                        } else {
                            1.0 / unseen as f64
                        };
                        (c.clone(), p)
                    })
                    .collect()
            }
        };
        for (c, p) in &expected {
            if (got.prob(c) - p).abs() > 1e-9 {
                return Err(format!("{object}@{c}: got {} want {p}", got.prob(c)));
            }
        }
    }
    Ok(())
}

/// Inform overwrites exactly the named marginal with a point mass.
pub fn check_inform(belief: &Belief, object: &str, at: &str) -> Result<(), String> {
    let next = belief
        .update_on_inform(&Utterance::inform(object, at))
        .map_err(|e| e.to_string())?;
    for (o, m) in next.marginals() {
        normalized(m)?;
        if o == object {
            if m.prob(at) != 1.0 {
                return Err(format!("{o} not collapsed to {at}"));
            }
        } else if Some(m) != belief.marginal(o) {
            return Err(format!("{o} changed by an inform about {object}"));
        }
    }
    Ok(())
}

/// Uniform over k candidates has entropy ln k.
pub fn check_uniform_entropy(k: usize) -> Result<(), String> {
    let cands: Vec<String> = (0..k).map(|i| format!("loc{i:03}")).collect();
    let h = Categorical::uniform(&cands).entropy();
    if (h - (k as f64).ln()).abs() > 1e-12 {
        return Err(format!("entropy {h} for k={k}"));
    }
    let d = Categorical::delta(&cands, &cands[0]).entropy();
    if d.abs() > 1e-12 {
        return Err(format!("delta entropy {d}"));
    }
    Ok(())
}

/// One randomized belief-calculus case derived from `seed`.
pub fn belief_case(seed: u64) -> Result<(), String> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let apts = Apartment::templates();
    let apt = apts.choose(&mut rng).unwrap();
    let state = random_state(apt, &mut rng);
    let agent = AgentId(rng.gen_range(0..2));
    let obs = observe(apt, &state, agent).unwrap();
    let mut belief = random_belief(apt, &mut rng);
    if rng.gen_bool(0.3) {
        // concentrate one marginal on what the viewer sees, to force resets
        let cands = apt.furniture_ids();
        let visible: Vec<&String> = obs.visible_locations.iter().collect();
        if let Some(loc) = visible.choose(&mut rng) {
            let o = apt.object_vocabulary.choose(&mut rng).unwrap();
            if !state.placements.contains_key(o) || !obs.visible_locations.contains(&state.placements[o]) {
                belief.insert(o.clone(), Categorical::delta(&cands, loc));
            }
        }
    }
    check_observation_update(&belief, &obs)?;
    let o = apt.object_vocabulary.choose(&mut rng).unwrap();
    let at = apt.furniture_ids().choose(&mut rng).unwrap().clone();
    check_inform(&belief, o, &at)?;
    check_uniform_entropy(rng.gen_range(1..=64))
}

/// Question counts per type and per balance label, and scenario counts
/// split by language, read straight from dataset JSONL.
pub struct Recount {
    pub scenarios: usize,
    pub language: usize,
    pub questions: usize,
    pub per_type: BTreeMap<String, usize>,
    pub labels: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn recount(jsonl: &str) -> Recount {
    let mut r = Recount {
        scenarios: 0,
        language: 0,
        questions: 0,
        per_type: BTreeMap::new(),
        labels: BTreeMap::new(),
    };
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        match v["kind"].as_str().unwrap() {
            "scenario" => {
                r.scenarios += 1;
                if v["config"]["language"].as_bool().unwrap() {
                    r.language += 1;
                }
            }
            "question" => {
                r.questions += 1;
                let t = v["qtype"].as_str().unwrap().to_string();
                *r.per_type.entry(t.clone()).or_default() += 1;
                *r.labels
                    .entry(t)
                    .or_default()
                    .entry(v["label"].as_str().unwrap().to_string())
                    .or_default() += 1;
            }
            other => panic!("unknown record kind {other}"),
        }
    }
    r
}

/// Largest distance from an even split over the two sides of any type.
pub fn worst_imbalance(r: &Recount) -> usize {
    r.labels
        .values()
        .map(|sides| {
            let v: Vec<usize> = sides.values().copied().collect();
            let (a, b) = (v.first().copied().unwrap_or(0), v.get(1).copied().unwrap_or(0));
            a.abs_diff(b).div_ceil(2)
        })
        .max()
        .unwrap_or(0)
}
