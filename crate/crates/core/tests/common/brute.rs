//! Full-trajectory enumeration in tiny apartments, as an independent check
//! on the per-step factorized posterior.

use std::collections::{BTreeMap, BTreeSet};

use household_tom::limp::{
    posterior, uninformed_goal_belief, FusedContext, MergedStep, OracleScorer, PartialState, Provenance,
    ScoringParams,
};
use household_tom::mind::{GoalBelief, Hypothesis, PhysicalGoal, SocialGoal, Utterance};
use household_tom::plan::{AgentMind, MindParams, Planner};
use household_tom::world::{apply, AgentId, Apartment, Furniture, FurnitureKind, Pose, PrimitiveAction, WorldState};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Path = Vec<(AgentId, Utterance, PrimitiveAction)>;

pub struct MicroWorld {
    pub apt: Apartment,
    pub s0: WorldState,
    pub other: AgentMind,
    pub hypotheses: Vec<Hypothesis>,
    pub truth: usize,
    pub language: bool,
    pub steps: usize,
}

pub fn micro_world(seed: u64) -> MicroWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rooms = vec!["kitchen".to_string(), "living_room".to_string()];
    let n_furniture = rng.gen_range(2..=3);
    let furniture: Vec<Furniture> = (0..n_furniture)
        .map(|i| Furniture {
            id: format!("spot{i}"),
            room: if i < 2 { rooms[i].clone() } else { rooms.choose(&mut rng).unwrap().clone() },
            kind: if rng.gen_bool(0.4) { FurnitureKind::Container } else { FurnitureKind::Surface },
        })
        .collect();
    let vocab: Vec<String> = ["apple", "book"][..rng.gen_range(1..=2)].iter().map(|s| s.to_string()).collect();
    let apt = Apartment::new(format!("micro{seed}"), rooms.clone(), furniture, vocab.clone()).unwrap();
    let locations = apt.furniture_ids();
    let placements = vocab
        .iter()
        .map(|o| (o.clone(), locations.choose(&mut rng).unwrap().clone()))
        .collect();
    let poses: BTreeMap<AgentId, Pose> = (0..2u8)
        .map(|a| (AgentId(a), Pose::in_room(rooms.choose(&mut rng).unwrap().clone())))
        .collect();
    let s0 = WorldState::new(&apt, poses, placements).unwrap();
    let language = rng.gen_bool(0.5);

    let random_goal = |rng: &mut ChaCha8Rng| {
        let o = vocab.choose(rng).unwrap().clone();
        if rng.gen_bool(0.5) {
            PhysicalGoal::find(o)
        } else {
            PhysicalGoal::rearrange(o, locations.choose(rng).unwrap().clone())
        }
    };
    let other = AgentMind::from_parts(
        AgentId(0),
        SocialGoal::Independent,
        random_goal(&mut rng),
        super::random_belief(&apt, &mut rng),
        uninformed_goal_belief(&apt),
    );
    let hypotheses = (0..3)
        .map(|_| Hypothesis {
            belief_of_state: super::random_belief(&apt, &mut rng),
            social_goal: if rng.gen_bool(0.5) { SocialGoal::Help } else { SocialGoal::Hinder },
            belief_of_goal: if language {
                uninformed_goal_belief(&apt)
            } else {
                GoalBelief::delta(random_goal(&mut rng))
            },
        })
        .collect();
    MicroWorld {
        apt,
        s0,
        other,
        hypotheses,
        truth: rng.gen_range(0..3),
        language,
        steps: rng.gen_range(2..=4),
    }
}

fn target_mind(h: &Hypothesis) -> AgentMind {
    let own = h.belief_of_goal.mode().cloned().unwrap_or_else(|| PhysicalGoal::find(""));
    AgentMind::from_parts(AgentId(1), h.social_goal, own, h.belief_of_state.clone(), h.belief_of_goal.clone())
}

struct Walker<'a> {
    w: &'a MicroWorld,
    planner: &'a Planner,
    params: &'a MindParams,
    candidates: Vec<String>,
    out: BTreeMap<String, (Path, f64)>,
}

impl Walker<'_> {
    fn go(&mut self, state: WorldState, minds: [AgentMind; 2], path: Path, p: f64) {
        let k = path.len();
        if k == self.w.steps {
            let key = format!("{path:?}");
            self.out.entry(key).or_insert_with(|| (path.clone(), 0.0)).1 += p;
            return;
        }
        let me = k % 2;
        let actor = AgentId(me as u8);
        let mut seen = minds;
        seen[me].observe(&self.w.apt, &state).unwrap();
        for (u, pu) in seen[me].utterance_distribution(&state, self.params, &self.candidates) {
            if pu <= 0.0 {
                continue;
            }
            let mut after = seen.clone();
            after[me].commit_utterance(&u);
            if !u.is_silence() {
                after[1 - me].hear(&u);
            }
            let Ok(policy) = after[me].action_policy(self.planner, &state, self.params) else {
                continue;
            };
            for (a, pa) in &policy.probs {
                if *pa <= 0.0 {
                    continue;
                }
                let next = apply(&self.w.apt, &state, actor, a).unwrap();
                let mut m = after.clone();
                m[0].note_action(actor, a);
                m[1].note_action(actor, a);
                let mut longer = path.clone();
                longer.push((actor, u.clone(), a.clone()));
                self.go(next, m, longer, p * pu * pa);
            }
        }
    }
}

/// Probability of every complete joint trajectory of `w.steps` turns when
/// the target's mind is `h`.
pub fn enumerate(w: &MicroWorld, h: &Hypothesis, planner: &Planner, params: &MindParams) -> BTreeMap<String, (Path, f64)> {
    let mut walker = Walker {
        w,
        planner,
        params,
        candidates: w.apt.furniture_ids(),
        out: BTreeMap::new(),
    };
    walker.go(w.s0.clone(), [w.other.clone(), target_mind(h)], Vec::new(), 1.0);
    walker.out
}

/// Factorized input built straight from the trajectory and the true start.
pub fn fused_from_path(w: &MicroWorld, path: &Path) -> FusedContext {
    let mentioned: BTreeSet<String> = w.apt.object_vocabulary.iter().cloned().collect();
    FusedContext {
        initial_state: PartialState {
            apartment: w.apt.clone(),
            names: [(AgentId(0), "Ann".to_string()), (AgentId(1), "Ben".to_string())]
                .into_iter()
                .collect(),
            agent_pose: w.s0.agent_pose.clone(),
            container_open: w.s0.container_open.clone(),
            placements: w.s0.placements.clone(),
            mentioned,
        },
        merged_steps: path
            .iter()
            .enumerate()
            .map(|(k, (agent, u, a))| MergedStep {
                tick: (k / 2) as u32,
                agent: *agent,
                action: Some(a.clone()),
                action_source: Some(Provenance::FromObservation),
                utterance: u.clone(),
                utterance_source: if u.is_silence() { None } else { Some(Provenance::FromText) },
            })
            .collect(),
        ambiguities: Vec::new(),
        language: w.language,
    }
}

pub struct BruteOutcome {
    pub max_error: f64,
    pub leaves: usize,
}

/// Compare both posteriors on one trajectory sampled under the true
/// hypothesis.
pub fn brute_force_case(seed: u64) -> Result<BruteOutcome, String> {
    let w = micro_world(seed);
    let params = ScoringParams::default();
    let mind = MindParams {
        beta: params.beta,
        tau: params.tau,
        language: w.language,
    };
    let planner = Planner::new(w.apt.clone());
    let tables: Vec<BTreeMap<String, (Path, f64)>> =
        w.hypotheses.iter().map(|h| enumerate(&w, h, &planner, &mind)).collect();
    for t in &tables {
        let total: f64 = t.values().map(|(_, p)| p).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("seed {seed}: trajectory mass {total}"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let leaves: Vec<&(Path, f64)> = tables[w.truth].values().collect();
    let observed = &leaves
        .choose_weighted(&mut rng, |(_, p)| *p)
        .map_err(|e| e.to_string())?
        .0;
    let key = format!("{observed:?}");
    let joint: Vec<f64> = tables.iter().map(|t| t.get(&key).map_or(0.0, |(_, p)| *p)).collect();
    let z: f64 = joint.iter().sum();
    let expected: Vec<f64> = joint.iter().map(|p| p / z).collect();

    let fused = fused_from_path(&w, observed);
    let scorer = OracleScorer::new(params);
    let got = posterior(&w.hypotheses, &fused, &scorer, &[1.0 / 3.0; 3], AgentId(1), 0.0)
        .map_err(|e| e.to_string())?;
    let max_error = got
        .posterior
        .iter()
        .zip(&expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if max_error > 1e-6 {
        return Err(format!(
            "seed {seed}: factorized {:?} enumerated {:?}",
            got.posterior, expected
        ));
    }
    Ok(BruteOutcome {
        max_error,
        leaves: tables.iter().map(BTreeMap::len).sum(),
    })
}
