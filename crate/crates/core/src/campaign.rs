//! Campaign orchestration: resolves a configuration into a controller, a
//! sequence, assessments and a plant, runs one search per seed and writes
//! reports, ladder tables, falsifying traces and replay files.
//!
//! `report.json` and `summary.txt` depend only on the configuration and
//! seeds; wall-clock data goes to `metadata.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::closed_loop::{run_closed_loop, InvariantStats, Scenario, SimulationError, SEQUENCE_INPUTS};
use crate::controller::{merge_json, requirements_for_version, ConfigError, ControllerConfig, VersionLadder};
use crate::corpus;
use crate::monitor::{FitnessReport, RequirementResult};
use crate::plant::{PlantError, PlantParams};
use crate::search::{
    random_then_annealing, simulated_annealing, uniform_random_search, AnnealingSchedule, Candidate, Outcome,
    ScenarioEvaluator, SearchError, SearchResult,
};
use crate::testlang::{instantiate, parse_block, Block, BlockKind, ParseError, SequenceError};
use crate::trace::{Trace, TraceError};

/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "DRIVEFALSIFY_WORKERS";

/// Sampling periods the plant is configured for (SIL and HIL).
pub const SUPPORTED_DT: [f64; 2] = [0.001, 0.01];

/// Requirement columns of the ladder table, in order.
pub const REQUIREMENT_COLUMNS: [&str; 4] = ["F1", "D1", "D2", "D3"];

pub fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{origin}: {source}")]
    Parse { origin: String, source: ParseError },
    #[error("simulation failed: {0}")]
    Simulation(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CampaignError {
    /// Process exit code for this class of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Parse { .. } => 3,
            Self::Simulation(_) => 4,
            Self::Io { .. } => 5,
        }
    }

    fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<ConfigError> for CampaignError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<SimulationError> for CampaignError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::MissingInput { .. }
            | SimulationError::UnsupportedFeedback { .. }
            | SimulationError::Config(_)
            | SimulationError::Monitor(_) => Self::Config(e.to_string()),
            SimulationError::Sequence(SequenceError::OutOfRange { .. })
            | SimulationError::Sequence(SequenceError::MissingParameter(_))
            | SimulationError::Sequence(SequenceError::UnknownParameter(_))
            | SimulationError::Sequence(SequenceError::DurationMismatch { .. }) => {
                Self::Config(e.to_string())
            }
            other => Self::Simulation(other.to_string()),
        }
    }
}

impl From<SequenceError> for CampaignError {
    fn from(e: SequenceError) -> Self {
        SimulationError::from(e).into()
    }
}

impl From<SearchError<SimulationError>> for CampaignError {
    fn from(e: SearchError<SimulationError>) -> Self {
        match CampaignError::from(e.source) {
            Self::Simulation(msg) => Self::Simulation(format!("evaluation {}: {msg}", e.iteration)),
            other => other,
        }
    }
}

impl From<TraceError> for CampaignError {
    fn from(e: TraceError) -> Self {
        Self::Simulation(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Random,
    Sa,
    #[default]
    RandomThenSa,
}

impl Algorithm {
    fn total_budget(self, budget: usize, sa_budget: usize) -> usize {
        match self {
            Self::Random | Self::Sa => budget,
            Self::RandomThenSa => budget + sa_budget,
        }
    }
}

fn default_budget() -> usize {
    20
}

fn default_sa_budget() -> usize {
    50
}

fn default_dt() -> f64 {
    0.001
}

/// One campaign: a controller, a sequence, a set of assessments and a search
/// run per seed. Relative file paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    /// Bundled version id.
    #[serde(default)]
    pub version: Option<String>,
    /// Full inline controller configuration, instead of `version`.
    #[serde(default)]
    pub controller: Option<ControllerConfig>,
    /// Fields replaced on top of the version or inline configuration.
    #[serde(default)]
    pub overrides: Option<Value>,
    /// Row label; defaults to the version id.
    #[serde(default)]
    pub label: Option<String>,
    /// Bundled sequence name (`TS1`..`TS6`) or a path to a `.tst` file.
    pub sequence: String,
    /// Bundled requirement ids or paths. Defaults to the version's requirements.
    #[serde(default)]
    pub assessments: Option<Vec<String>>,
    #[serde(default)]
    pub algorithm: Algorithm,
    /// Random-search budget, or the annealing budget when `algorithm` is `sa`.
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// Annealing budget after an unsuccessful random phase.
    #[serde(default = "default_sa_budget")]
    pub sa_budget: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// s; defaults to the sequence's declared duration.
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Plant parameters replaced on top of the bundled defaults.
    #[serde(default)]
    pub plant: Option<Value>,
    #[serde(default)]
    pub annealing: AnnealingSchedule,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl CampaignConfig {
    pub fn new(version: &str, sequence: &str) -> Self {
        Self {
            version: Some(version.to_string()),
            controller: None,
            overrides: None,
            label: None,
            sequence: sequence.to_string(),
            assessments: None,
            algorithm: Algorithm::default(),
            budget: default_budget(),
            sa_budget: default_sa_budget(),
            seeds: default_seeds(),
            dt: default_dt(),
            duration: None,
            output_dir: None,
            plant: None,
            annealing: AnnealingSchedule::default(),
            base_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        config.output_dir = config.output_dir.as_deref().map(|d| config.resolve_path(d));
        Ok(config)
    }

    fn resolve_path(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }
}

/// Source text of a block, kept so replay files are self-contained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedSource {
    pub name: String,
    pub source: String,
}

/// A campaign configuration resolved into runnable parts.
#[derive(Debug, Clone)]
pub struct Setup {
    pub label: String,
    pub controller: ControllerConfig,
    pub sequence: Block,
    pub sequence_source: NamedSource,
    pub assessments: Vec<Block>,
    pub assessment_sources: Vec<NamedSource>,
    pub plant: PlantParams,
    pub duration: f64,
}

fn resolve_controller(
    version: Option<&str>,
    inline: Option<&ControllerConfig>,
    overrides: Option<&Value>,
) -> Result<(String, ControllerConfig, Option<Vec<String>>), CampaignError> {
    let (label, base, requirements) = match (version, inline) {
        (Some(_), Some(_)) => {
            return Err(CampaignError::Config(
                "give either `version` or `controller`, not both".into(),
            ))
        }
        (Some(id), None) => (
            id.to_string(),
            VersionLadder::bundled().get(id)?.config.clone(),
            Some(requirements_for_version(id)?),
        ),
        (None, Some(cfg)) => ("custom".to_string(), cfg.clone(), None),
        (None, None) => {
            return Err(CampaignError::Config(
                "a controller `version` or inline `controller` is required".into(),
            ))
        }
    };
    let cfg = match overrides {
        Some(patch) if !patch.is_object() => {
            return Err(CampaignError::Config("`overrides` must be a JSON object".into()))
        }
        Some(patch) => base.with_overrides(patch)?,
        None => base,
    };
    cfg.validate()?;
    Ok((label, cfg, requirements))
}

fn load_block(
    reference: &str,
    bundled: &[(&str, &str)],
    base: impl Fn(&Path) -> PathBuf,
    kind: BlockKind,
) -> Result<(Block, NamedSource), CampaignError> {
    let (origin, source) = match bundled.iter().find(|(name, _)| *name == reference) {
        Some((_, src)) => (reference.to_string(), src.to_string()),
        None => {
            let path = base(Path::new(reference));
            let text = fs::read_to_string(&path).map_err(|e| CampaignError::io(&path, e))?;
            (path.display().to_string(), text)
        }
    };
    let block = parse_block(&source).map_err(|source| CampaignError::Parse {
        origin: origin.clone(),
        source,
    })?;
    if block.kind != kind {
        return Err(CampaignError::Config(format!(
            "`{origin}` is not a test {}",
            match kind {
                BlockKind::Sequence => "sequence",
                BlockKind::Assessment => "assessment",
            }
        )));
    }
    let named = NamedSource {
        name: block.name.clone(),
        source,
    };
    Ok((block, named))
}

fn plant_with(overrides: Option<&Value>, dt: f64) -> Result<PlantParams, CampaignError> {
    if !SUPPORTED_DT.contains(&dt) {
        return Err(CampaignError::Config(format!(
            "dt = {dt} s is not a supported sampling period (use 0.001 or 0.01)"
        )));
    }
    let mut value = serde_json::to_value(PlantParams::default()).expect("plant parameters serialize");
    if let Some(patch) = overrides {
        if !patch.is_object() {
            return Err(CampaignError::Config("`plant` must be a JSON object".into()));
        }
        merge_json(&mut value, patch);
    }
    let plant: PlantParams =
        serde_json::from_value(value).map_err(|e| CampaignError::Config(format!("plant: {e}")))?;
    let plant = plant.with_dt(dt);
    plant
        .validate()
        .map_err(|e: PlantError| CampaignError::Config(format!("plant: {e}")))?;
    Ok(plant)
}

pub fn resolve(config: &CampaignConfig) -> Result<Setup, CampaignError> {
    let (version_label, controller, version_requirements) = resolve_controller(
        config.version.as_deref(),
        config.controller.as_ref(),
        config.overrides.as_ref(),
    )?;
    let base = |p: &Path| config.resolve_path(p);
    let (sequence, sequence_source) = load_block(
        &config.sequence,
        &corpus::SEQUENCE_SOURCES,
        base,
        BlockKind::Sequence,
    )?;

    let assessment_refs = match (&config.assessments, version_requirements) {
        (Some(refs), _) => refs.clone(),
        (None, Some(reqs)) => reqs,
        (None, None) => REQUIREMENT_COLUMNS.iter().map(|s| s.to_string()).collect(),
    };
    let mut assessments = Vec::with_capacity(assessment_refs.len());
    let mut assessment_sources = Vec::with_capacity(assessment_refs.len());
    for reference in &assessment_refs {
        let (block, source) = load_block(
            reference,
            &corpus::ASSESSMENT_SOURCES,
            base,
            BlockKind::Assessment,
        )?;
        if assessments.iter().any(|b: &Block| b.name == block.name) {
            return Err(CampaignError::Config(format!(
                "assessment `{}` listed twice",
                block.name
            )));
        }
        assessments.push(block);
        assessment_sources.push(source);
    }

    let duration = match (config.duration, sequence.duration) {
        (Some(requested), Some(declared)) if (requested - declared).abs() > 1e-9 => {
            return Err(CampaignError::Config(format!(
                "duration {requested} s does not match `{}`, which declares {declared} s",
                sequence.name
            )))
        }
        (Some(d), _) | (None, Some(d)) => d,
        (None, None) => {
            return Err(CampaignError::Config(format!(
                "sequence `{}` declares no duration; set `duration`",
                sequence.name
            )))
        }
    };
    if !(duration.is_finite() && duration > 0.0) {
        return Err(CampaignError::Config(format!(
            "duration must be positive, got {duration}"
        )));
    }

    Ok(Setup {
        label: config.label.clone().unwrap_or(version_label),
        controller,
        sequence,
        sequence_source,
        assessments,
        assessment_sources,
        plant: plant_with(config.plant.as_ref(), config.dt)?,
        duration,
    })
}

/// Number of parallel workers: `DRIVEFALSIFY_WORKERS`, else the available cores.
pub fn worker_count() -> Result<usize, CampaignError> {
    match std::env::var(WORKERS_ENV) {
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CampaignError::Config(format!(
                "{WORKERS_ENV} must be a positive integer, got `{text}`"
            ))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return None;
        }
        Some(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub result: SearchResult,
    pub violated_requirements: Vec<String>,
    pub evaluations: usize,
    pub invariants: InvariantStats,
    /// Relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay_file: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Pass,
    Fail,
    NotTested,
}

impl Mark {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::Pass => "✓",
            Self::Fail => "✗",
            Self::NotTested => "N.T.",
        }
    }
}

/// One ladder row: which requirements a campaign falsified and how quickly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderRow {
    pub id: String,
    pub sequence: String,
    /// Median falsifying iteration over the falsified seeds, or `>budget`.
    pub iterations: String,
    pub falsified: usize,
    pub seeds: usize,
    pub marks: IndexMap<String, Mark>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub seeds: usize,
    pub falsified: usize,
    pub violated_requirements: Vec<String>,
    /// Evaluations used per seed.
    pub iterations: Stats,
    pub invariants: InvariantStats,
    pub row: LadderRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub label: String,
    pub sequence: String,
    pub assessments: Vec<String>,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub sa_budget: usize,
    pub dt: f64,
    pub duration: f64,
    pub runs: Vec<RunRecord>,
    pub summary: CampaignSummary,
    /// Seconds per seed; written to `metadata.json` only.
    #[serde(skip)]
    pub wall_time: Option<Stats>,
}

impl CampaignReport {
    pub fn run(&self, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.seed == seed)
    }
}

/// Builds the summary from per-run records alone.
pub fn summarize(
    label: &str,
    sequence: &str,
    assessments: &[String],
    total_budget: usize,
    runs: &[RunRecord],
) -> CampaignSummary {
    let mut violated: Vec<String> = Vec::new();
    for run in runs {
        for id in &run.violated_requirements {
            if !violated.contains(id) {
                violated.push(id.clone());
            }
        }
    }
    let order = |id: &String| assessments.iter().position(|a| a == id).unwrap_or(usize::MAX);
    violated.sort_by_key(order);

    let mut falsifying: Vec<usize> = runs
        .iter()
        .filter_map(|r| r.result.falsifying_iteration())
        .collect();
    falsifying.sort_unstable();
    let iterations = match falsifying.len() {
        0 => format!(">{total_budget}"),
        n => falsifying[(n - 1) / 2].to_string(),
    };

    let mut columns: Vec<String> = REQUIREMENT_COLUMNS.iter().map(|s| s.to_string()).collect();
    columns.extend(
        assessments
            .iter()
            .filter(|a| !columns.contains(a))
            .cloned()
            .collect::<Vec<_>>(),
    );
    let marks = columns
        .into_iter()
        .map(|id| {
            let mark = if !assessments.contains(&id) {
                Mark::NotTested
            } else if violated.contains(&id) {
                Mark::Fail
            } else {
                Mark::Pass
            };
            (id, mark)
        })
        .collect();

    let invariants = runs
        .iter()
        .fold(InvariantStats::default(), |acc, r| InvariantStats {
            overlap_samples: acc.overlap_samples + r.invariants.overlap_samples,
            floor_violations: acc.floor_violations + r.invariants.floor_violations,
        });

    CampaignSummary {
        seeds: runs.len(),
        falsified: falsifying.len(),
        violated_requirements: violated,
        iterations: Stats::of(runs.iter().map(|r| r.result.iterations_used as f64)).unwrap_or_default(),
        invariants,
        row: LadderRow {
            id: label.to_string(),
            sequence: sequence.to_string(),
            iterations,
            falsified: falsifying.len(),
            seeds: runs.len(),
            marks,
        },
    }
}

struct SeedRun {
    result: SearchResult,
    evaluations: usize,
    invariants: InvariantStats,
}

fn search_seed(
    setup: &Setup,
    config: &CampaignConfig,
    seed: u64,
    workers: usize,
) -> Result<SeedRun, CampaignError> {
    let evaluator = ScenarioEvaluator::new(
        setup.sequence.clone(),
        setup.controller.clone(),
        setup.plant.clone(),
        setup.assessments.clone(),
        setup.duration,
    );
    let space = evaluator.space();
    let result = match config.algorithm {
        Algorithm::Random => uniform_random_search(&space, config.budget, seed, &evaluator, workers)?,
        Algorithm::Sa => simulated_annealing(&space, config.budget, seed, &config.annealing, &evaluator)?,
        Algorithm::RandomThenSa => random_then_annealing(
            &space,
            config.budget,
            config.sa_budget,
            seed,
            &config.annealing,
            &evaluator,
            workers,
        )?,
    };
    Ok(SeedRun {
        result,
        evaluations: evaluator.evaluations(),
        invariants: evaluator.invariants(),
    })
}

fn run_seeds(setup: &Setup, config: &CampaignConfig, workers: usize) -> Result<Vec<SeedRun>, CampaignError> {
    let seeds = &config.seeds;
    if workers <= 1 || seeds.len() < workers {
        // Few seeds: parallelise inside each random phase instead.
        return seeds
            .iter()
            .map(|&s| search_seed(setup, config, s, workers))
            .collect();
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(workers) {
        let results: Vec<Result<SeedRun, CampaignError>> = std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| scope.spawn(move || search_seed(setup, config, seed, 1)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("search worker panicked"))
                .collect()
        });
        for result in results {
            runs.push(result?);
        }
    }
    Ok(runs)
}

fn validate(config: &CampaignConfig) -> Result<(), CampaignError> {
    if config.seeds.is_empty() {
        return Err(CampaignError::Config("the seed list is empty".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = config.seeds.iter().find(|s| !seen.insert(**s)) {
        return Err(CampaignError::Config(format!("seed {dup} is listed twice")));
    }
    if config.budget < 1 {
        return Err(CampaignError::Config("budget must be at least 1".into()));
    }
    Ok(())
}

pub fn run_campaign(config: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    validate(config)?;
    let setup = resolve(config)?;
    let workers = worker_count()?;
    let started_at = SystemTime::now();
    let started = Instant::now();
    let seed_runs = run_seeds(&setup, config, workers)?;
    let elapsed = started.elapsed().as_secs_f64();

    if let Some(dir) = &config.output_dir {
        fs::create_dir_all(dir).map_err(|e| CampaignError::io(dir, e))?;
    }
    let mut runs = Vec::with_capacity(seed_runs.len());
    for run in seed_runs {
        let seed = run.result.seed;
        let violated = match &run.result.outcome {
            Outcome::Falsified { report, .. } => report.violated_requirements.clone(),
            Outcome::Nff => Vec::new(),
        };
        let mut record = RunRecord {
            seed,
            result: run.result,
            violated_requirements: violated,
            evaluations: run.evaluations,
            invariants: run.invariants,
            trace_file: None,
            replay_file: None,
        };
        if let (
            Some(dir),
            Outcome::Falsified {
                candidate,
                iteration,
                report,
            },
        ) = (&config.output_dir, &record.result.outcome)
        {
            let trace_name = format!("traces/seed-{seed}.csv");
            let replay_name = format!("replays/seed-{seed}.json");
            let outcome = simulate_setup(&setup, candidate, true)?;
            let trace = outcome.trace.expect("trace was recorded");
            write_file(&dir.join(&trace_name), &trace.to_csv())?;
            let replay = ReplayFile::new(
                &setup,
                candidate.clone(),
                Some(seed),
                Some(*iteration),
                report.fitness,
            );
            write_file(&dir.join(&replay_name), &replay.to_json())?;
            record.trace_file = Some(trace_name);
            record.replay_file = Some(replay_name);
        }
        runs.push(record);
    }

    let assessments: Vec<String> = setup.assessments.iter().map(|b| b.name.clone()).collect();
    let summary = summarize(
        &setup.label,
        &setup.sequence.name,
        &assessments,
        config.algorithm.total_budget(config.budget, config.sa_budget),
        &runs,
    );
    let report = CampaignReport {
        label: setup.label.clone(),
        sequence: setup.sequence.name.clone(),
        assessments,
        algorithm: config.algorithm,
        budget: config.budget,
        sa_budget: config.sa_budget,
        dt: config.dt,
        duration: setup.duration,
        summary,
        wall_time: Stats::of(runs.iter().map(|r| r.result.wall_time)),
        runs,
    };

    if let Some(dir) = &config.output_dir {
        write_file(&dir.join("report.json"), &to_json(&report))?;
        write_file(&dir.join("summary.txt"), &render_summary(&report))?;
        let metadata = serde_json::json!({
            "started_unix_s": started_at.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
            "elapsed_s": elapsed,
            "workers": workers,
            "wall_time_per_seed_s": report.wall_time,
            "seeds": report.runs.iter().map(|r| serde_json::json!({
                "seed": r.seed,
                "wall_time_s": r.result.wall_time,
            })).collect::<Vec<_>>(),
        });
        write_file(&dir.join("metadata.json"), &to_json(&metadata))?;
    }
    Ok(report)
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
    text.push('\n');
    text
}

fn write_file(path: &Path, contents: &str) -> Result<(), CampaignError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CampaignError::io(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| CampaignError::io(path, e))
}

fn fmt_fitness(f: f64) -> String {
    if f.is_finite() {
        format!("{f:.4}")
    } else if f > 0.0 {
        "+inf".into()
    } else {
        "-inf".into()
    }
}

pub fn render_summary(report: &CampaignReport) -> String {
    let s = &report.summary;
    let mut out = String::new();
    let _ = writeln!(out, "controller  {}", report.label);
    let _ = writeln!(
        out,
        "sequence    {} ({} s at dt = {} s)",
        report.sequence, report.duration, report.dt
    );
    let _ = writeln!(out, "assessments {}", report.assessments.join(", "));
    let _ = writeln!(
        out,
        "search      {:?}, budget {} + {}",
        report.algorithm, report.budget, report.sa_budget
    );
    let _ = writeln!(out, "falsified   {}/{} seeds", s.falsified, s.seeds);
    if !s.violated_requirements.is_empty() {
        let _ = writeln!(out, "violated    {}", s.violated_requirements.join(", "));
    }
    let _ = writeln!(
        out,
        "iterations  mean {:.1}, min {}, max {}",
        s.iterations.mean, s.iterations.min, s.iterations.max
    );
    let _ = writeln!(
        out,
        "invariants  {} overlap samples, {} floor violations",
        s.invariants.overlap_samples, s.invariants.floor_violations
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "{:>6}  {:>10}  {:>10}  violated",
        "seed", "iterations", "fitness"
    );
    for run in &report.runs {
        let fitness = match &run.result.outcome {
            Outcome::Falsified { report, .. } => report.fitness,
            Outcome::Nff => run
                .result
                .best
                .as_ref()
                .map_or(f64::INFINITY, |b| b.report.fitness),
        };
        let iterations = match run.result.falsifying_iteration() {
            Some(i) => i.to_string(),
            None => format!("NFF ({})", run.result.iterations_used),
        };
        let _ = writeln!(
            out,
            "{:>6}  {:>10}  {:>10}  {}",
            run.seed,
            iterations,
            fmt_fitness(fitness),
            run.violated_requirements.join(",")
        );
    }
    out
}

/// Everything needed to re-run one concrete scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayFile {
    pub label: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub iteration: Option<usize>,
    pub sequence: NamedSource,
    pub assessments: Vec<NamedSource>,
    pub controller: ControllerConfig,
    pub plant: PlantParams,
    pub duration: f64,
    pub candidate: Candidate,
    /// Fitness observed when the file was written; absent when infinite.
    #[serde(default)]
    pub fitness: Option<f64>,
}

impl ReplayFile {
    pub fn new(
        setup: &Setup,
        candidate: Candidate,
        seed: Option<u64>,
        iteration: Option<usize>,
        fitness: f64,
    ) -> Self {
        Self {
            label: setup.label.clone(),
            seed,
            iteration,
            sequence: setup.sequence_source.clone(),
            assessments: setup.assessment_sources.clone(),
            controller: setup.controller.clone(),
            plant: setup.plant.clone(),
            duration: setup.duration,
            candidate,
            fitness: fitness.is_finite().then_some(fitness),
        }
    }

    pub fn to_json(&self) -> String {
        to_json(self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CampaignError::Config(format!("{}: {e}", path.display())))
    }

    pub fn setup(&self) -> Result<Setup, CampaignError> {
        let parse = |named: &NamedSource| {
            parse_block(&named.source).map_err(|source| CampaignError::Parse {
                origin: named.name.clone(),
                source,
            })
        };
        self.controller.validate()?;
        self.plant
            .validate()
            .map_err(|e| CampaignError::Config(format!("plant: {e}")))?;
        Ok(Setup {
            label: self.label.clone(),
            controller: self.controller.clone(),
            sequence: parse(&self.sequence)?,
            sequence_source: self.sequence.clone(),
            assessments: self.assessments.iter().map(parse).collect::<Result<_, _>>()?,
            assessment_sources: self.assessments.clone(),
            plant: self.plant.clone(),
            duration: self.duration,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SimulationRun {
    pub report: FitnessReport,
    pub requirements: Vec<RequirementResult>,
    pub invariants: InvariantStats,
    pub trace: Option<Trace>,
}

fn simulate_setup(
    setup: &Setup,
    candidate: &Candidate,
    record: bool,
) -> Result<SimulationRun, CampaignError> {
    let seq = instantiate(&setup.sequence, candidate)?;
    let outcome = run_closed_loop(
        &Scenario {
            sequence: &seq,
            controller: &setup.controller,
            plant: &setup.plant,
            assessments: &setup.assessments,
            duration: setup.duration,
        },
        record,
    )?;
    Ok(SimulationRun {
        report: outcome.report,
        requirements: outcome.requirements,
        invariants: outcome.invariants,
        trace: outcome.trace,
    })
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub run: SimulationRun,
    /// The same scenario re-run at another sampling period.
    pub compared: Option<(f64, FitnessReport)>,
}

/// Re-runs a replay file; with `compare_dt`, also at that sampling period.
pub fn replay_file(
    replay: &ReplayFile,
    compare_dt: Option<f64>,
    record: bool,
) -> Result<ReplayOutcome, CampaignError> {
    let setup = replay.setup()?;
    let run = simulate_setup(&setup, &replay.candidate, record)?;
    let compared = match compare_dt {
        Some(dt) => {
            if !SUPPORTED_DT.contains(&dt) {
                return Err(CampaignError::Config(format!(
                    "dt = {dt} s is not a supported sampling period (use 0.001 or 0.01)"
                )));
            }
            let other = Setup {
                plant: setup.plant.clone().with_dt(dt),
                ..setup.clone()
            };
            Some((dt, simulate_setup(&other, &replay.candidate, false)?.report))
        }
        None => None,
    };
    Ok(ReplayOutcome { run, compared })
}

/// One manual run of a concrete candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateRequest {
    pub version: Option<String>,
    pub controller: Option<ControllerConfig>,
    pub overrides: Option<Value>,
    pub sequence: String,
    pub assessments: Option<Vec<String>>,
    pub candidate: Candidate,
    pub dt: f64,
    pub duration: Option<f64>,
    pub plant: Option<Value>,
    pub output_dir: Option<PathBuf>,
}

impl SimulateRequest {
    pub fn new(version: &str, sequence: &str, candidate: Candidate) -> Self {
        Self {
            version: Some(version.to_string()),
            controller: None,
            overrides: None,
            sequence: sequence.to_string(),
            assessments: None,
            candidate,
            dt: default_dt(),
            duration: None,
            plant: None,
            output_dir: None,
        }
    }
}

/// Simulates one candidate; writes `inputs.csv`, `outputs.csv` and
/// `report.json` when an output directory is given.
pub fn simulate_once(request: &SimulateRequest) -> Result<SimulationRun, CampaignError> {
    let mut config = CampaignConfig::new("", &request.sequence);
    config.version = request.version.clone();
    config.controller = request.controller.clone();
    config.overrides = request.overrides.clone();
    config.assessments = request.assessments.clone();
    config.dt = request.dt;
    config.duration = request.duration;
    config.plant = request.plant.clone();
    let setup = resolve(&config)?;
    // Rejects out-of-range or missing parameters before anything runs.
    instantiate(&setup.sequence, &request.candidate)?;
    let run = simulate_setup(&setup, &request.candidate, true)?;

    if let Some(dir) = &request.output_dir {
        let trace = run.trace.as_ref().expect("trace was recorded");
        let inputs = trace.select(&SEQUENCE_INPUTS)?;
        let output_names: Vec<&str> = trace.names().filter(|n| !SEQUENCE_INPUTS.contains(n)).collect();
        let outputs = trace.select(&output_names)?;
        write_file(&dir.join("inputs.csv"), &inputs.to_csv())?;
        write_file(&dir.join("outputs.csv"), &outputs.to_csv())?;
        let replay = ReplayFile::new(&setup, request.candidate.clone(), None, None, run.report.fitness);
        write_file(&dir.join("replay.json"), &replay.to_json())?;
        write_file(&dir.join("report.json"), &to_json(&run.report))?;
    }
    Ok(run)
}

/// A set of campaigns rendered as one version-ladder table. Each row is a
/// campaign configuration object merged over `defaults`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderConfig {
    #[serde(default)]
    pub defaults: serde_json::Map<String, Value>,
    pub rows: Vec<serde_json::Map<String, Value>>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl LadderConfig {
    pub fn from_json(text: &str) -> Result<Self, CampaignError> {
        serde_json::from_str(text).map_err(|e| CampaignError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CampaignError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| CampaignError::io(path, e))?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        if let (Some(base), Some(dir)) = (&config.base_dir, &config.output_dir) {
            if dir.is_relative() {
                config.output_dir = Some(base.join(dir));
            }
        }
        Ok(config)
    }

    /// The per-row campaign configurations, without output directories.
    pub fn campaigns(&self) -> Result<Vec<CampaignConfig>, CampaignError> {
        if self.rows.is_empty() {
            return Err(CampaignError::Config("the ladder has no rows".into()));
        }
        self.rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut merged = self.defaults.clone();
                merged.extend(row.clone());
                if merged.contains_key("output_dir") {
                    return Err(CampaignError::Config(format!(
                        "row {}: set `output_dir` on the ladder, not per row",
                        i + 1
                    )));
                }
                let mut config: CampaignConfig = serde_json::from_value(Value::Object(merged))
                    .map_err(|e| CampaignError::Config(format!("row {}: {e}", i + 1)))?;
                config.base_dir = self.base_dir.clone();
                Ok(config)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub rows: Vec<LadderRow>,
    pub campaigns: Vec<CampaignReport>,
}

fn slug(text: &str) -> String {
    text.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn run_ladder(config: &LadderConfig) -> Result<LadderReport, CampaignError> {
    let campaigns = config.campaigns()?;
    let mut reports = Vec::with_capacity(campaigns.len());
    for (i, mut campaign) in campaigns.into_iter().enumerate() {
        if let Some(dir) = &config.output_dir {
            let label = campaign
                .label
                .clone()
                .or_else(|| campaign.version.clone())
                .unwrap_or_default();
            let name = format!("{:02}-{}-{}", i + 1, slug(&label), slug(&campaign.sequence));
            campaign.output_dir = Some(dir.join(name));
        }
        reports.push(run_campaign(&campaign)?);
    }
    let report = LadderReport {
        rows: reports.iter().map(|r| r.summary.row.clone()).collect(),
        campaigns: reports,
    };
    if let Some(dir) = &config.output_dir {
        write_file(&dir.join("ladder.csv"), &ladder_csv(&report.rows))?;
        write_file(&dir.join("ladder.txt"), &ladder_table(&report.rows))?;
        write_file(&dir.join("ladder.json"), &to_json(&report.rows))?;
    }
    Ok(report)
}

fn columns(rows: &[LadderRow]) -> Vec<String> {
    let mut columns: Vec<String> = Vec::new();
    for row in rows {
        for id in row.marks.keys() {
            if !columns.contains(id) {
                columns.push(id.clone());
            }
        }
    }
    columns
}

pub fn ladder_csv(rows: &[LadderRow]) -> String {
    let columns = columns(rows);
    let mut out = String::from("id,sequence,iterations,falsified,seeds");
    for c in &columns {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for row in rows {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            row.id, row.sequence, row.iterations, row.falsified, row.seeds
        );
        for c in &columns {
            let mark = match row.marks.get(c).copied().unwrap_or(Mark::NotTested) {
                Mark::Pass => "pass",
                Mark::Fail => "fail",
                Mark::NotTested => "not_tested",
            };
            out.push(',');
            out.push_str(mark);
        }
        out.push('\n');
    }
    out
}

pub fn ladder_table(rows: &[LadderRow]) -> String {
    let columns = columns(rows);
    let mut header = vec![
        "ID".to_string(),
        "TS#".to_string(),
        "#IT".to_string(),
        "falsified".to_string(),
    ];
    header.extend(columns.iter().cloned());
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|row| {
            let mut cells = vec![
                row.id.clone(),
                row.sequence.clone(),
                row.iterations.clone(),
                format!("{}/{}", row.falsified, row.seeds),
            ];
            cells.extend(columns.iter().map(|c| {
                row.marks
                    .get(c)
                    .copied()
                    .unwrap_or(Mark::NotTested)
                    .symbol()
                    .to_string()
            }));
            cells
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|i| {
            std::iter::once(&header)
                .chain(&body)
                .map(|r| r[i].chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        padded.join("  ").trim_end().to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for cells in &body {
        out.push_str(&line(cells));
        out.push('\n');
    }
    out
}
