//! Quantitative (robustness) semantics for assessment blocks.
//!
//! Atoms map to signed margins (`p <= q` to `q - p`, `p >= q` to `p - q`,
//! `p == q` to `-|p - q|`), conjunction to `min`, disjunction to `max`, and
//! negation is pushed down to the atoms. A margin of exactly zero passes.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus;
use crate::testlang::ast::{Block, BlockKind, CmpOp, EvalContext, Expr};
use crate::testlang::machine::{Sample, StepMachine};
use crate::trace::Trace;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("trace has no signal `{signal}` required by assessment `{assessment}`")]
    MissingSignal { assessment: String, signal: String },
    #[error("block `{0}` is a sequence, not an assessment")]
    NotAnAssessment(String),
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RobustnessValue(pub f64);

impl RobustnessValue {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn passed(self) -> bool {
        self.0 >= 0.0
    }
}

pub fn robustness(expr: &Expr, ctx: &EvalContext) -> RobustnessValue {
    RobustnessValue(rob(expr, false, ctx))
}

fn rob(expr: &Expr, negated: bool, ctx: &EvalContext) -> f64 {
    match expr {
        Expr::Bool(b) => {
            if *b != negated {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        }
        Expr::Not(e) => rob(e, !negated, ctx),
        Expr::And(a, b) if !negated => rob(a, false, ctx).min(rob(b, false, ctx)),
        Expr::And(a, b) => rob(a, true, ctx).max(rob(b, true, ctx)),
        Expr::Or(a, b) if !negated => rob(a, false, ctx).max(rob(b, false, ctx)),
        Expr::Or(a, b) => rob(a, true, ctx).min(rob(b, true, ctx)),
        Expr::Cmp(op, a, b) => {
            let (p, q) = (a.eval_num(ctx), b.eval_num(ctx));
            let op = if negated { negate(*op) } else { *op };
            let margin = match op {
                CmpOp::Le | CmpOp::Lt => q - p,
                CmpOp::Ge | CmpOp::Gt => p - q,
                CmpOp::Eq => -(p - q).abs(),
                CmpOp::Ne => (p - q).abs(),
            };
            if margin.is_nan() {
                f64::NEG_INFINITY
            } else {
                margin
            }
        }
        _ => unreachable!("robustness of a numeric expression"),
    }
}

fn negate(op: CmpOp) -> CmpOp {
    match op {
        CmpOp::Le => CmpOp::Gt,
        CmpOp::Lt => CmpOp::Ge,
        CmpOp::Ge => CmpOp::Lt,
        CmpOp::Gt => CmpOp::Le,
        CmpOp::Eq => CmpOp::Ne,
        CmpOp::Ne => CmpOp::Eq,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// No `verify` statement was ever active.
    VacuousPass,
}

impl Verdict {
    pub fn of(fitness: f64) -> Self {
        if fitness < 0.0 {
            Verdict::Fail
        } else if fitness == f64::INFINITY {
            Verdict::VacuousPass
        } else {
            Verdict::Pass
        }
    }
}

/// Outcome of monitoring one assessment over one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct RequirementResult {
    pub id: String,
    pub min_robustness: f64,
    /// Time of the first sample reaching the minimum.
    pub min_time: Option<f64>,
    pub first_violation_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessReport {
    #[serde(with = "finite_or_null")]
    pub fitness: f64,
    pub verdict: Verdict,
    pub first_violation_time: Option<f64>,
    pub min_time: Option<f64>,
    #[serde(with = "finite_map")]
    pub per_requirement: IndexMap<String, f64>,
    pub violated_requirements: Vec<String>,
}

impl FitnessReport {
    pub fn combine(results: &[RequirementResult]) -> Self {
        let mut fitness = f64::INFINITY;
        let mut min_time = None;
        let mut first_violation_time: Option<f64> = None;
        let mut per_requirement = IndexMap::new();
        let mut violated_requirements = Vec::new();
        for r in results {
            if r.min_robustness < fitness {
                fitness = r.min_robustness;
                min_time = r.min_time;
            }
            if let Some(tv) = r.first_violation_time {
                first_violation_time = Some(first_violation_time.map_or(tv, |f| f.min(tv)));
            }
            if r.min_robustness < 0.0 {
                violated_requirements.push(r.id.clone());
            }
            per_requirement.insert(r.id.clone(), r.min_robustness);
        }
        Self {
            fitness,
            verdict: Verdict::of(fitness),
            first_violation_time,
            min_time,
            per_requirement,
            violated_requirements,
        }
    }

    pub fn is_violation(&self) -> bool {
        self.fitness < 0.0
    }
}

/// Online monitor for one assessment; feed it one sample at a time.
#[derive(Debug, Clone)]
pub struct AssessmentMonitor<'b> {
    machine: StepMachine<'b>,
    prev: Vec<f64>,
    started: bool,
    min: f64,
    min_time: Option<f64>,
    first_violation_time: Option<f64>,
}

impl<'b> AssessmentMonitor<'b> {
    pub fn new(block: &'b Block) -> Result<Self, MonitorError> {
        if block.kind != BlockKind::Assessment {
            return Err(MonitorError::NotAnAssessment(block.name.clone()));
        }
        Ok(Self {
            machine: StepMachine::new(block),
            prev: vec![0.0; block.observed.len()],
            started: false,
            min: f64::INFINITY,
            min_time: None,
            first_violation_time: None,
        })
    }

    /// Names of the signals `update` expects, in order.
    pub fn signals(&self) -> &'b [String] {
        &self.machine.block().observed
    }

    /// Robustness contributed by the sample (+inf when no verify is active).
    pub fn update(&mut self, t: f64, values: &[f64]) -> f64 {
        if !self.started {
            self.prev.copy_from_slice(values);
            self.started = true;
        }
        let sample = Sample {
            t,
            signals: values,
            prev: &self.prev,
            params: &[],
        };
        self.machine.update(&sample);
        let block = self.machine.block();
        let mut worst = f64::INFINITY;
        for (level, &step) in self.machine.active().iter().enumerate() {
            let ctx = sample.context(self.machine.elapsed(level, t));
            for verify in &block.step(step).verifies {
                worst = worst.min(rob(&verify.expr, false, &ctx) * verify.scale);
            }
        }
        self.prev.copy_from_slice(values);
        if worst < self.min {
            self.min = worst;
            self.min_time = Some(t);
        }
        if worst < 0.0 && self.first_violation_time.is_none() {
            self.first_violation_time = Some(t);
        }
        worst
    }

    pub fn current_min(&self) -> f64 {
        self.min
    }

    pub fn finish(&self) -> RequirementResult {
        RequirementResult {
            id: self.machine.block().name.clone(),
            min_robustness: self.min,
            min_time: self.min_time,
            first_violation_time: self.first_violation_time,
        }
    }
}

/// Monitors one assessment over a recorded trace.
pub fn requirement_result(block: &Block, trace: &Trace) -> Result<RequirementResult, MonitorError> {
    let mut monitor = AssessmentMonitor::new(block)?;
    let columns = block
        .observed
        .iter()
        .map(|name| {
            trace.get(name).ok_or_else(|| MonitorError::MissingSignal {
                assessment: block.name.clone(),
                signal: name.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut row = vec![0.0; columns.len()];
    for k in 0..trace.len() {
        for (slot, column) in row.iter_mut().zip(&columns) {
            *slot = column[k];
        }
        monitor.update(trace.time(k), &row);
    }
    Ok(monitor.finish())
}

pub fn trace_fitness(block: &Block, trace: &Trace) -> Result<FitnessReport, MonitorError> {
    Ok(FitnessReport::combine(&[requirement_result(block, trace)?]))
}

/// Fitness of a trace against several assessments, combined by `min`.
pub fn assess(blocks: &[Block], trace: &Trace) -> Result<FitnessReport, MonitorError> {
    let results = blocks
        .iter()
        .map(|b| requirement_result(b, trace))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FitnessReport::combine(&results))
}

/// The shipped F1, D1, D2 and D3 assessments.
pub fn requirement_assessments() -> &'static [Block] {
    corpus::assessments()
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    /// `null` stands for +inf: only a vacuous minimum is non-finite.
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

mod finite_map {
    use indexmap::IndexMap;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &IndexMap<String, f64>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k, v.is_finite().then_some(*v))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<IndexMap<String, f64>, D::Error> {
        let raw = IndexMap::<String, Option<f64>>::deserialize(d)?;
        Ok(raw
            .into_iter()
            .map(|(k, v)| (k, v.unwrap_or(f64::INFINITY)))
            .collect())
    }
}
