//! Run configuration, dataset and prediction files, evaluation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gen::{
    build_dataset, oracle_posterior, verify_question, GenConfig, GenError, QType, Question, Record, ScenarioRecord,
    DEFAULT_MARGIN, DEFAULT_PER_TYPE, DEFAULT_SCENARIOS,
};
use crate::limp::{
    answer, fuse, parse_hypotheses, posterior, Endpoint, ExternalScorer, OracleScorer, PolicyScorer, PosteriorResult,
    ScoringParams, DEFAULT_EPSILON,
};
use crate::mind::DEFAULT_TAU;
use crate::plan::{SearchBudget, DEFAULT_BETA, DEFAULT_HORIZON, DEFAULT_MAX_EXACT_STATES, DEFAULT_SIMULATIONS};

/// Environment variable naming the external scorer endpoint.
pub const SCORER_ENV: &str = "HTOM_SCORER_ENDPOINT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("prediction for unknown question {0}")]
    UnknownQuestionId(String),
    #[error("no prediction for question {0}")]
    MissingPrediction(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{failed} of {checked} questions failed verification")]
    VerificationFailed { checked: usize, failed: usize },
    #[error(transparent)]
    Gen(#[from] GenError),
}

impl HarnessError {
    /// 2 for validation problems, 3 for budget or resource problems.
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Io { .. } | HarnessError::Gen(GenError::BudgetExceeded { .. }) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerKind {
    Oracle,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scenarios: usize,
    pub per_type: usize,
    pub beta: f64,
    pub tau: f64,
    pub horizon: u32,
    pub max_exact_states: usize,
    pub simulations: usize,
    pub margin: f64,
    pub max_candidates: usize,
    pub scorer: ScorerKind,
    /// `cmd:<command>` or `tcp://host:port`; falls back to the environment.
    pub endpoint: Option<String>,
    /// Worker threads; 0 picks the machine default.
    pub workers: usize,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            scenarios: DEFAULT_SCENARIOS,
            per_type: DEFAULT_PER_TYPE,
            beta: DEFAULT_BETA,
            tau: DEFAULT_TAU,
            horizon: DEFAULT_HORIZON,
            max_exact_states: DEFAULT_MAX_EXACT_STATES,
            simulations: DEFAULT_SIMULATIONS,
            margin: DEFAULT_MARGIN,
            max_candidates: 20_000,
            scorer: ScorerKind::Oracle,
            endpoint: None,
            workers: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let ok = self.scenarios > 0
            && self.beta > 0.0
            && self.tau > 0.0
            && self.horizon > 0
            && self.max_exact_states > 0
            && self.simulations > 0
            && self.margin > 0.0
            && self.max_candidates > 0;
        if ok {
            Ok(())
        } else {
            Err(HarnessError::Config("numeric parameters must be positive".into()))
        }
    }

    pub fn budget(&self) -> SearchBudget {
        SearchBudget {
            max_exact_states: self.max_exact_states,
            simulations: self.simulations,
            seed: self.seed,
        }
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            scenarios: self.scenarios,
            per_type: self.per_type,
            horizon: self.horizon,
            beta: self.beta,
            tau: self.tau,
            margin: self.margin,
            max_candidates: self.max_candidates,
            budget: self.budget(),
            ..GenConfig::default()
        }
    }

    pub fn scoring(&self) -> ScoringParams {
        ScoringParams {
            beta: self.beta,
            tau: self.tau,
        }
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out_dir.join("dataset.jsonl")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }

    pub fn predictions_path(&self) -> PathBuf {
        self.out_dir.join("predictions.jsonl")
    }

    pub fn report_path(&self) -> PathBuf {
        self.out_dir.join("report.json")
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Write every file to a temporary sibling first, then rename them all into
/// place, so a failure leaves no partial output.
pub fn write_atomic(files: &[(&Path, &str)]) -> Result<(), HarnessError> {
    let mut staged: Vec<(PathBuf, &Path)> = Vec::new();
    let cleanup = |staged: &[(PathBuf, &Path)]| {
        for (tmp, _) in staged {
            let _ = fs::remove_file(tmp);
        }
    };
    for (path, contents) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            if let Err(e) = fs::create_dir_all(dir) {
                cleanup(&staged);
                return Err(io_err(dir, e));
            }
        }
        let tmp = temp_path(path);
        let written = fs::File::create(&tmp).and_then(|mut f| {
            f.write_all(contents.as_bytes())?;
            f.sync_all()
        });
        if let Err(e) = written {
            let _ = fs::remove_file(&tmp);
            cleanup(&staged);
            return Err(io_err(path, e));
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in &staged {
        if let Err(e) = fs::rename(tmp, path) {
            cleanup(&staged);
            return Err(io_err(path, e));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub dataset: PathBuf,
    pub manifest: PathBuf,
    pub scenarios: usize,
    pub questions: usize,
}

pub fn cli_generate(cfg: &RunConfig) -> Result<GenerateSummary, HarnessError> {
    cfg.validate()?;
    let gen = cfg.gen_config();
    let dataset = cfg.pool()?.install(|| build_dataset(cfg.seed, &gen))?;
    let (d, m) = (cfg.dataset_path(), cfg.manifest_path());
    write_atomic(&[(&d, &dataset.to_jsonl()), (&m, &dataset.manifest_json())])?;
    Ok(GenerateSummary {
        dataset: d,
        manifest: m,
        scenarios: dataset.scenarios.len(),
        questions: dataset.questions.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LoadedDataset {
    pub scenarios: Vec<ScenarioRecord>,
    pub questions: Vec<Question>,
}

fn check_question(q: &Question) -> Result<(), String> {
    if q.options.len() != 3 {
        return Err(format!("question {} has {} options", q.id, q.options.len()));
    }
    if q.key >= q.options.len() {
        return Err(format!("question {} has key {}", q.id, q.key));
    }
    if !(q.hypotheses.is_empty() || q.hypotheses.len() == 3) {
        return Err(format!("question {} has {} hypotheses", q.id, q.hypotheses.len()));
    }
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<LoadedDataset, HarnessError> {
    let mut out = LoadedDataset::default();
    let mut ids = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |reason: String| HarnessError::Schema { line: line_no, reason };
        match serde_json::from_str::<Record>(line).map_err(|e| schema(e.to_string()))? {
            Record::Scenario(s) => out.scenarios.push(s),
            Record::Question(q) => {
                check_question(&q).map_err(schema)?;
                if !ids.insert(q.id.clone()) {
                    return Err(schema(format!("duplicate question id {}", q.id)));
                }
                out.questions.push(q);
            }
        }
    }
    Ok(out)
}

pub fn read_dataset(path: &Path) -> Result<LoadedDataset, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_dataset(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub question_id: String,
    pub chosen: usize,
    pub posterior: Vec<f64>,
    pub ledger_digest: String,
    pub tie: bool,
    pub degraded: bool,
}

/// Scorer picked by the run configuration.
pub enum ScorerChoice {
    Oracle(OracleScorer),
    External(ExternalScorer),
}

impl ScorerChoice {
    pub fn from_config(cfg: &RunConfig) -> Result<Self, HarnessError> {
        match cfg.scorer {
            ScorerKind::Oracle => Ok(ScorerChoice::Oracle(OracleScorer::with_budget(cfg.scoring(), cfg.budget()))),
            ScorerKind::External => {
                let raw = cfg
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var(SCORER_ENV).ok())
                    .ok_or_else(|| HarnessError::Config(format!("external scorer needs an endpoint or {SCORER_ENV}")))?;
                let endpoint = Endpoint::parse(&raw)
                    .ok_or_else(|| HarnessError::Config(format!("unrecognized endpoint {raw}")))?;
                Ok(ScorerChoice::External(ExternalScorer::new(endpoint)))
            }
        }
    }

    fn scorer(&self) -> &dyn PolicyScorer {
        match self {
            ScorerChoice::Oracle(s) => s,
            ScorerChoice::External(s) => s,
        }
    }

    /// Likelihood floor: exact for the oracle, guarded for anything else.
    fn epsilon(&self) -> f64 {
        match self {
            ScorerChoice::Oracle(_) => 0.0,
            ScorerChoice::External(_) => DEFAULT_EPSILON,
        }
    }
}

/// Answer one question; any failure yields a degraded uniform prediction.
pub fn predict(question: &Question, scorer: &ScorerChoice) -> Prediction {
    let n = question.options.len();
    let result = fuse(&question.text_channel, &question.observation_channel)
        .and_then(|fused| {
            let hyps = parse_hypotheses(question, &fused)?;
            let prior = vec![1.0 / n as f64; n];
            posterior(&hyps, &fused, scorer.scorer(), &prior, question.target, scorer.epsilon())
        })
        .unwrap_or_else(|_| PosteriorResult::uniform_degraded(n));
    let a = answer(question, &result);
    Prediction {
        question_id: question.id.clone(),
        chosen: a.index,
        ledger_digest: result.ledger_digest(),
        posterior: result.posterior,
        tie: a.tie,
        degraded: result.degraded,
    }
}

/// Complete predictions already on disk. A torn final line from an
/// interrupted run is ignored.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, HarnessError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<Prediction>(line) {
            Ok(p) => out.push(p),
            Err(_) if i + 1 == lines.len() => {}
            Err(e) => {
                return Err(HarnessError::Schema {
                    line: i + 1,
                    reason: e.to_string(),
                })
            }
        }
    }
    Ok(out)
}

pub fn predictions_jsonl(preds: &[Prediction]) -> String {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p).expect("serializable"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferSummary {
    pub predictions: PathBuf,
    pub computed: usize,
    pub reused: usize,
    pub degraded: usize,
}

/// Predict every question not already present in `out`.
pub fn cli_infer(cfg: &RunConfig, dataset: &Path, out: &Path) -> Result<InferSummary, HarnessError> {
    cfg.validate()?;
    let data = read_dataset(dataset)?;
    let scorer = ScorerChoice::from_config(cfg)?;
    let known: BTreeSet<String> = data.questions.iter().map(|q| q.id.clone()).collect();
    let existing: BTreeMap<String, Prediction> = read_predictions(out)?
        .into_iter()
        .filter(|p| known.contains(&p.question_id))
        .map(|p| (p.question_id.clone(), p))
        .collect();
    let todo: Vec<&Question> = data.questions.iter().filter(|q| !existing.contains_key(&q.id)).collect();
    let fresh: Vec<Prediction> = cfg
        .pool()?
        .install(|| todo.par_iter().map(|q| predict(q, &scorer)).collect());
    let summary = InferSummary {
        predictions: out.to_path_buf(),
        computed: fresh.len(),
        reused: existing.len(),
        degraded: fresh.iter().filter(|p| p.degraded).count(),
    };
    let mut all: Vec<Prediction> = existing.into_values().chain(fresh).collect();
    all.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    write_atomic(&[(out, &predictions_jsonl(&all))])?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub per_type: BTreeMap<String, TypeScore>,
    pub overall: f64,
    pub correct: usize,
    pub total: usize,
    pub ties: usize,
    pub degraded: usize,
    pub wall_clock_secs: f64,
}

impl Report {
    pub fn table(&self) -> String {
        let mut out = format!("{:<16}{:>9}{:>8}{:>10}\n", "type", "correct", "total", "accuracy");
        for (t, s) in &self.per_type {
            out.push_str(&format!("{:<16}{:>9}{:>8}{:>10.4}\n", t, s.correct, s.total, s.accuracy));
        }
        out.push_str(&format!(
            "{:<16}{:>9}{:>8}{:>10.4}\n",
            "all", self.correct, self.total, self.overall
        ));
        out.push_str(&format!("ties {}  degraded {}\n", self.ties, self.degraded));
        out
    }
}

/// Score predictions against the dataset keys.
pub fn evaluate(questions: &[Question], predictions: &[Prediction]) -> Result<Report, HarnessError> {
    let start = Instant::now();
    let by_id: BTreeMap<&str, &Question> = questions.iter().map(|q| (q.id.as_str(), q)).collect();
    let mut seen = BTreeSet::new();
    for p in predictions {
        if !by_id.contains_key(p.question_id.as_str()) {
            return Err(HarnessError::UnknownQuestionId(p.question_id.clone()));
        }
        seen.insert(p.question_id.as_str());
    }
    if let Some(q) = questions.iter().find(|q| !seen.contains(q.id.as_str())) {
        return Err(HarnessError::MissingPrediction(q.id.clone()));
    }
    let mut per_type: BTreeMap<String, TypeScore> = BTreeMap::new();
    for t in QType::ALL {
        if questions.iter().any(|q| q.qtype == t) {
            per_type.insert(
                t.as_str().to_string(),
                TypeScore {
                    correct: 0,
                    total: 0,
                    accuracy: 0.0,
                },
            );
        }
    }
    let (mut correct, mut ties, mut degraded) = (0, 0, 0);
    for p in predictions {
        let q = by_id[p.question_id.as_str()];
        let s = per_type.get_mut(q.qtype.as_str()).expect("type registered");
        s.total += 1;
        if p.chosen == q.key {
            s.correct += 1;
            correct += 1;
        }
        ties += usize::from(p.tie);
        degraded += usize::from(p.degraded);
    }
    for s in per_type.values_mut() {
        s.accuracy = s.correct as f64 / s.total as f64;
    }
    let total = predictions.len();
    Ok(Report {
        per_type,
        overall: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
        correct,
        total,
        ties,
        degraded,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

pub fn cli_eval(dataset: &Path, predictions: &Path, report: Option<&Path>) -> Result<Report, HarnessError> {
    let data = read_dataset(dataset)?;
    let preds = read_predictions(predictions)?;
    let r = evaluate(&data.questions, &preds)?;
    if let Some(path) = report {
        let mut json = serde_json::to_string_pretty(&r).expect("serializable");
        json.push('\n');
        write_atomic(&[(path, &json)])?;
    }
    Ok(r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub checked: usize,
    pub failed: Vec<String>,
}

/// Re-run the oracle gate over every question of a dataset file.
pub fn cli_verify(cfg: &RunConfig, dataset: &Path) -> Result<VerifySummary, HarnessError> {
    cfg.validate()?;
    let data = read_dataset(dataset)?;
    let scorer = OracleScorer::with_budget(cfg.scoring(), cfg.budget());
    let results: Vec<(String, bool)> = cfg.pool()?.install(|| {
        data.questions
            .par_iter()
            .map(|q| {
                let ok = oracle_posterior(q, &scorer)
                    .and_then(|r| verify_question(q, &r, cfg.margin))
                    .unwrap_or(false);
                (q.id.clone(), ok)
            })
            .collect()
    });
    Ok(VerifySummary {
        checked: results.len(),
        failed: results.into_iter().filter(|(_, ok)| !ok).map(|(id, _)| id).collect(),
    })
}
