//! Falsification drivers: uniform random search and simulated annealing over
//! the search parameters of a test sequence.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::closed_loop::{run_closed_loop, InvariantStats, Scenario, SimulationError};
use crate::controller::ControllerConfig;
use crate::monitor::FitnessReport;
use crate::plant::PlantParams;
use crate::testlang::{instantiate, Block, SearchParameter, PARAM_PREFIX};

/// Values for the search parameters of one sequence.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Candidate {
    values: IndexMap<String, f64>,
}

impl Candidate {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Self {
        let mut c = Self::default();
        for (name, value) in pairs {
            c.insert(name.to_string(), value);
        }
        c
    }

    pub fn insert(&mut self, name: String, value: f64) {
        self.values.insert(name, value);
    }

    /// Looks a parameter up by full (`Hecate_x`) or short (`x`) name.
    pub fn get(&self, name: &str) -> Option<f64> {
        if let Some(v) = self.values.get(name) {
            return Some(*v);
        }
        match name.strip_prefix(PARAM_PREFIX) {
            Some(short) => self.values.get(short).copied(),
            None => self.values.get(&format!("{PARAM_PREFIX}{name}")).copied(),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.values.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub params: Vec<SearchParameter>,
}

impl SearchSpace {
    pub fn of(block: &Block) -> Self {
        Self {
            params: block.params.clone(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Candidate {
        let mut c = Candidate::default();
        for p in &self.params {
            c.insert(p.name.clone(), rng.random_range(p.min..=p.max));
        }
        c
    }

    pub fn contains(&self, c: &Candidate) -> bool {
        c.len() == self.params.len()
            && self
                .params
                .iter()
                .all(|p| c.get(&p.name).is_some_and(|v| p.contains(v)))
    }

    /// Gaussian perturbation with standard deviation `sigma_fraction` of each
    /// range, reflected back into the bounds.
    pub fn neighbour(&self, c: &Candidate, sigma_fraction: f64, rng: &mut impl Rng) -> Candidate {
        let mut next = Candidate::default();
        for p in &self.params {
            let x = c.get(&p.name).expect("candidate covers the space");
            let range = p.range();
            let y = if range > 0.0 {
                let noise = Normal::new(0.0, sigma_fraction * range).expect("positive sigma");
                reflect(x + noise.sample(rng), p.min, p.max)
            } else {
                p.min
            };
            next.insert(p.name.clone(), y);
        }
        next
    }
}

/// Folds `x` back into `[lo, hi]` by mirroring at the bounds.
pub fn reflect(x: f64, lo: f64, hi: f64) -> f64 {
    let width = hi - lo;
    if width <= 0.0 {
        return lo;
    }
    let period = 2.0 * width;
    let mut r = (x - lo).rem_euclid(period);
    if r > width {
        r = period - r;
    }
    (lo + r).clamp(lo, hi)
}

/// Anything that scores a candidate; fitness < 0 means falsified.
pub trait Evaluator: Sync {
    type Error: std::error::Error + Send;

    fn evaluate(&self, candidate: &Candidate) -> Result<FitnessReport, Self::Error>;
}

#[derive(Debug, Error)]
#[error("evaluation {iteration} failed: {source}")]
pub struct SearchError<E: std::error::Error> {
    pub iteration: usize,
    pub candidate: Candidate,
    #[source]
    pub source: E,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Falsified {
        candidate: Candidate,
        report: FitnessReport,
        /// 1-based evaluation index.
        iteration: usize,
    },
    Nff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub algorithm: String,
    pub seed: u64,
    pub outcome: Outcome,
    pub iterations_used: usize,
    #[serde(with = "finite_vec")]
    pub fitness_history: Vec<f64>,
    /// Lowest-fitness candidate seen.
    pub best: Option<BestCandidate>,
    /// Seconds; kept out of serialized reports so they stay reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestCandidate {
    pub candidate: Candidate,
    pub report: FitnessReport,
    pub iteration: usize,
}

impl SearchResult {
    pub fn falsified(&self) -> bool {
        matches!(self.outcome, Outcome::Falsified { .. })
    }

    pub fn falsifying_iteration(&self) -> Option<usize> {
        match self.outcome {
            Outcome::Falsified { iteration, .. } => Some(iteration),
            Outcome::Nff => None,
        }
    }
}

struct Tracker {
    history: Vec<f64>,
    best: Option<BestCandidate>,
}

impl Tracker {
    fn new() -> Self {
        Self {
            history: Vec::new(),
            best: None,
        }
    }

    fn record(&mut self, candidate: &Candidate, report: &FitnessReport) -> usize {
        self.history.push(report.fitness);
        let iteration = self.history.len();
        if self
            .best
            .as_ref()
            .is_none_or(|b| report.fitness < b.report.fitness)
        {
            self.best = Some(BestCandidate {
                candidate: candidate.clone(),
                report: report.clone(),
                iteration,
            });
        }
        iteration
    }

    fn finish(self, algorithm: &str, seed: u64, outcome: Outcome, started: Instant) -> SearchResult {
        SearchResult {
            algorithm: algorithm.to_string(),
            seed,
            outcome,
            iterations_used: self.history.len(),
            fitness_history: self.history,
            best: self.best,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }
}

fn evaluate_all<E: Evaluator>(
    evaluator: &E,
    candidates: &[Candidate],
    workers: usize,
) -> Vec<Result<FitnessReport, E::Error>> {
    if workers <= 1 || candidates.len() <= 1 {
        return candidates.iter().map(|c| evaluator.evaluate(c)).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = candidates
            .iter()
            .map(|c| scope.spawn(move || evaluator.evaluate(c)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluator panicked"))
            .collect()
    })
}

/// Uniform random search. Candidates are drawn up front from a seeded
/// ChaCha8 stream and may be evaluated `workers` at a time; the reported
/// falsification is always the one with the lowest index.
pub fn uniform_random_search<E: Evaluator>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    evaluator: &E,
    workers: usize,
) -> Result<SearchResult, SearchError<E::Error>> {
    assert!(budget >= 1, "search budget must be at least 1");
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidates: Vec<Candidate> = (0..budget).map(|_| space.sample(&mut rng)).collect();
    let mut tracker = Tracker::new();
    for chunk in candidates.chunks(workers.max(1)) {
        for (candidate, result) in chunk.iter().zip(evaluate_all(evaluator, chunk, workers)) {
            let report = result.map_err(|source| SearchError {
                iteration: tracker.history.len() + 1,
                candidate: candidate.clone(),
                source,
            })?;
            let iteration = tracker.record(candidate, &report);
            if report.is_violation() {
                let outcome = Outcome::Falsified {
                    candidate: candidate.clone(),
                    report,
                    iteration,
                };
                return Ok(tracker.finish("random", seed, outcome, started));
            }
        }
    }
    Ok(tracker.finish("random", seed, Outcome::Nff, started))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnealingSchedule {
    /// Initial temperature; defaults to the magnitude of the first fitness.
    pub t0: Option<f64>,
    pub alpha: f64,
    /// Neighbour standard deviation as a fraction of each parameter range.
    pub sigma_fraction: f64,
}

impl Default for AnnealingSchedule {
    fn default() -> Self {
        Self {
            t0: None,
            alpha: 0.95,
            sigma_fraction: 0.1,
        }
    }
}

impl AnnealingSchedule {
    pub fn temperature(&self, t0: f64, k: usize) -> f64 {
        t0 * self.alpha.powi(k as i32)
    }
}

/// Metropolis acceptance: always for non-worsening moves, otherwise with
/// probability `exp(-delta / temperature)`.
pub fn acceptance_probability(current: f64, proposed: f64, temperature: f64) -> f64 {
    if proposed <= current {
        return 1.0;
    }
    let delta = proposed - current;
    if !delta.is_finite() || temperature <= 0.0 {
        return 0.0;
    }
    (-delta / temperature).exp()
}

pub fn simulated_annealing<E: Evaluator>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    schedule: &AnnealingSchedule,
    evaluator: &E,
) -> Result<SearchResult, SearchError<E::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    anneal(
        space,
        budget,
        seed,
        schedule,
        evaluator,
        &mut rng,
        Tracker::new(),
        "sa",
    )
}

#[allow(clippy::too_many_arguments)]
fn anneal<E: Evaluator>(
    space: &SearchSpace,
    budget: usize,
    seed: u64,
    schedule: &AnnealingSchedule,
    evaluator: &E,
    rng: &mut ChaCha8Rng,
    mut tracker: Tracker,
    algorithm: &str,
) -> Result<SearchResult, SearchError<E::Error>> {
    assert!(budget >= 1, "search budget must be at least 1");
    let started = Instant::now();
    let offset = tracker.history.len();
    let evaluate = |tracker: &mut Tracker, candidate: &Candidate| {
        let report = evaluator.evaluate(candidate).map_err(|source| SearchError {
            iteration: tracker.history.len() + 1,
            candidate: candidate.clone(),
            source,
        })?;
        let iteration = tracker.record(candidate, &report);
        Ok::<_, SearchError<E::Error>>((report, iteration))
    };

    let mut current = space.sample(rng);
    let (report, iteration) = evaluate(&mut tracker, &current)?;
    let mut current_fitness = report.fitness;
    if report.is_violation() {
        let outcome = Outcome::Falsified {
            candidate: current,
            report,
            iteration,
        };
        return Ok(tracker.finish(algorithm, seed, outcome, started));
    }
    let t0 = schedule.t0.unwrap_or({
        let magnitude = current_fitness.abs();
        if magnitude.is_finite() && magnitude > 0.0 {
            magnitude
        } else {
            1.0
        }
    });

    for k in 0..budget - 1 {
        let proposal = space.neighbour(&current, schedule.sigma_fraction, rng);
        let (report, iteration) = evaluate(&mut tracker, &proposal)?;
        if report.is_violation() {
            let outcome = Outcome::Falsified {
                candidate: proposal,
                report,
                iteration,
            };
            return Ok(tracker.finish(algorithm, seed, outcome, started));
        }
        let p = acceptance_probability(current_fitness, report.fitness, schedule.temperature(t0, k));
        if p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p) {
            current = proposal;
            current_fitness = report.fitness;
        }
    }
    debug_assert_eq!(tracker.history.len(), offset + budget);
    Ok(tracker.finish(algorithm, seed, Outcome::Nff, started))
}

/// Random search, then (if nothing was found) simulated annealing on a
/// separate stream of the same seed. Iterations are counted across both.
pub fn random_then_annealing<E: Evaluator>(
    space: &SearchSpace,
    random_budget: usize,
    sa_budget: usize,
    seed: u64,
    schedule: &AnnealingSchedule,
    evaluator: &E,
    workers: usize,
) -> Result<SearchResult, SearchError<E::Error>> {
    let started = Instant::now();
    let mut first = uniform_random_search(space, random_budget, seed, evaluator, workers)?;
    if first.falsified() || sa_budget == 0 {
        first.algorithm = "random+sa".into();
        return Ok(first);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let tracker = Tracker {
        history: first.fitness_history,
        best: first.best,
    };
    let mut result = anneal(
        space,
        sa_budget,
        seed,
        schedule,
        evaluator,
        &mut rng,
        tracker,
        "random+sa",
    )?;
    result.iterations_used = result.fitness_history.len();
    result.wall_time = started.elapsed().as_secs_f64();
    Ok(result)
}

/// Evaluates candidates by closed-loop simulation of one sequence against a
/// set of assessments. Tracks output invariants across all evaluations.
#[derive(Debug)]
pub struct ScenarioEvaluator {
    pub sequence: Block,
    pub controller: ControllerConfig,
    pub plant: PlantParams,
    pub assessments: Vec<Block>,
    pub duration: f64,
    evaluations: AtomicUsize,
    overlap_samples: AtomicUsize,
    floor_violations: AtomicUsize,
}

impl ScenarioEvaluator {
    pub fn new(
        sequence: Block,
        controller: ControllerConfig,
        plant: PlantParams,
        assessments: Vec<Block>,
        duration: f64,
    ) -> Self {
        Self {
            sequence,
            controller,
            plant,
            assessments,
            duration,
            evaluations: AtomicUsize::new(0),
            overlap_samples: AtomicUsize::new(0),
            floor_violations: AtomicUsize::new(0),
        }
    }

    pub fn space(&self) -> SearchSpace {
        SearchSpace::of(&self.sequence)
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::Relaxed)
    }

    /// Invariant violations summed over every evaluation so far.
    pub fn invariants(&self) -> InvariantStats {
        InvariantStats {
            overlap_samples: self.overlap_samples.load(Ordering::Relaxed),
            floor_violations: self.floor_violations.load(Ordering::Relaxed),
        }
    }
}

impl Evaluator for ScenarioEvaluator {
    type Error = SimulationError;

    fn evaluate(&self, candidate: &Candidate) -> Result<FitnessReport, SimulationError> {
        let seq = instantiate(&self.sequence, candidate)?;
        let outcome = run_closed_loop(
            &Scenario {
                sequence: &seq,
                controller: &self.controller,
                plant: &self.plant,
                assessments: &self.assessments,
                duration: self.duration,
            },
            false,
        )?;
        self.evaluations.fetch_add(1, Ordering::Relaxed);
        self.overlap_samples
            .fetch_add(outcome.invariants.overlap_samples, Ordering::Relaxed);
        self.floor_violations
            .fetch_add(outcome.invariants.floor_violations, Ordering::Relaxed);
        Ok(outcome.report)
    }
}

/// Re-runs one candidate end to end.
pub fn replay(
    candidate: &Candidate,
    sequence: &Block,
    controller: &ControllerConfig,
    assessments: &[Block],
    plant: &PlantParams,
    duration: f64,
) -> Result<FitnessReport, SimulationError> {
    let seq = instantiate(sequence, candidate)?;
    let outcome = run_closed_loop(
        &Scenario {
            sequence: &seq,
            controller,
            plant,
            assessments,
            duration,
        },
        false,
    )?;
    Ok(outcome.report)
}

mod finite_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(|x| x.is_finite().then_some(*x)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(Vec::<Option<f64>>::deserialize(d)?
            .into_iter()
            .map(|x| x.unwrap_or(f64::INFINITY))
            .collect())
    }
}
