//! Parameter instantiation and input generation for test sequences.

use thiserror::Error;

use super::ast::{Block, BlockKind, SearchParameter};
use super::machine::{Sample, StepMachine};
use crate::search::Candidate;
use crate::trace::{Trace, TraceError};

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("block `{0}` is an assessment, not a sequence")]
    NotASequence(String),
    #[error("missing value for parameter `{0}`")]
    MissingParameter(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("parameter `{name}` = {value} is outside [{min}, {max}]")]
    OutOfRange {
        name: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("sequence reads plant signals ({0}); run it in closed loop")]
    NeedsFeedback(String),
    #[error("requested duration {requested} s differs from the sequence's {declared} s")]
    DurationMismatch { declared: f64, requested: f64 },
    #[error("signal `{signal}` has no value at t = {t}")]
    Unassigned { signal: String, t: f64 },
    #[error("signal `{signal}` is not finite at t = {t}")]
    NonFinite { signal: String, t: f64 },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

/// A sequence whose search parameters have been replaced by values.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcreteSequence {
    pub block: Block,
    pub candidate: Candidate,
}

impl ConcreteSequence {
    pub fn name(&self) -> &str {
        &self.block.name
    }

    pub fn duration(&self) -> Option<f64> {
        self.block.duration
    }

    /// Checks a requested scenario length against the declared one.
    pub fn check_duration(&self, requested: f64) -> Result<(), SequenceError> {
        match self.block.duration {
            Some(declared) if (declared - requested).abs() > 1e-9 => {
                Err(SequenceError::DurationMismatch { declared, requested })
            }
            _ => Ok(()),
        }
    }
}

pub fn list_parameters(block: &Block) -> &[SearchParameter] {
    &block.params
}

pub fn instantiate(block: &Block, candidate: &Candidate) -> Result<ConcreteSequence, SequenceError> {
    if block.kind != BlockKind::Sequence {
        return Err(SequenceError::NotASequence(block.name.clone()));
    }
    for name in candidate.names() {
        if !block
            .params
            .iter()
            .any(|p| p.name == name || p.short_name() == name)
        {
            return Err(SequenceError::UnknownParameter(name.to_string()));
        }
    }
    let mut values = Vec::with_capacity(block.params.len());
    let mut resolved = Candidate::default();
    for param in &block.params {
        let value = candidate
            .get(&param.name)
            .ok_or_else(|| SequenceError::MissingParameter(param.name.clone()))?;
        if !param.contains(value) {
            return Err(SequenceError::OutOfRange {
                name: param.name.clone(),
                value,
                min: param.min,
                max: param.max,
            });
        }
        values.push(value);
        resolved.insert(param.name.clone(), value);
    }

    let mut concrete = block.clone();
    for step in &mut concrete.steps {
        if let Some(when) = &mut step.when {
            *when = when.substitute_params(&values);
        }
        for tr in &mut step.transitions {
            tr.condition = tr.condition.substitute_params(&values);
        }
        for action in &mut step.actions {
            action.value = action.value.substitute_params(&values);
        }
    }
    concrete.params.clear();
    debug_assert!(concrete.is_parameter_free());
    Ok(ConcreteSequence {
        block: concrete,
        candidate: resolved,
    })
}

/// Sample-by-sample evaluation of a concrete sequence, fed with the plant
/// signals the sequence observes.
#[derive(Debug, Clone)]
pub struct SequenceRunner<'a> {
    machine: StepMachine<'a>,
    outputs: Vec<f64>,
    prev: Vec<f64>,
    first: bool,
}

impl<'a> SequenceRunner<'a> {
    pub fn new(seq: &'a ConcreteSequence) -> Self {
        Self {
            machine: StepMachine::new(&seq.block),
            outputs: vec![f64::NAN; seq.block.outputs.len()],
            prev: vec![0.0; seq.block.observed.len()],
            first: true,
        }
    }

    /// Output signal values at time `t`, in declaration order.
    pub fn step(&mut self, t: f64, observed: &[f64]) -> Result<&[f64], SequenceError> {
        let block = self.machine.block();
        assert_eq!(observed.len(), block.observed.len(), "observed signal count");
        if self.first {
            self.prev.copy_from_slice(observed);
            self.first = false;
        }
        let sample = Sample {
            t,
            signals: observed,
            prev: &self.prev,
            params: &[],
        };
        self.machine.update(&sample);
        self.outputs.fill(f64::NAN);
        self.machine.assign(&sample, &mut self.outputs);
        self.prev.copy_from_slice(observed);
        for (i, v) in self.outputs.iter().enumerate() {
            if !v.is_finite() {
                let signal = block.outputs[i].clone();
                return Err(if v.is_nan() && !self.assigned(i) {
                    SequenceError::Unassigned { signal, t }
                } else {
                    SequenceError::NonFinite { signal, t }
                });
            }
        }
        Ok(&self.outputs)
    }

    fn assigned(&self, output: usize) -> bool {
        let block = self.machine.block();
        self.machine
            .active()
            .iter()
            .any(|&s| block.step(s).actions.iter().any(|a| a.target == output))
    }

    pub fn active_steps(&self) -> Vec<String> {
        self.machine.active_names()
    }
}

/// Open-loop input trace of a sequence that reads no plant signals.
pub fn generate_input_trace(seq: &ConcreteSequence, duration: f64, dt: f64) -> Result<Trace, SequenceError> {
    if !seq.block.observed.is_empty() {
        return Err(SequenceError::NeedsFeedback(seq.block.observed.join(", ")));
    }
    seq.check_duration(duration)?;
    let len = Trace::samples_for(duration, dt);
    let mut columns = vec![Vec::with_capacity(len); seq.block.outputs.len()];
    let mut runner = SequenceRunner::new(seq);
    for k in 0..len {
        let values = runner.step(k as f64 * dt, &[])?;
        for (column, &v) in columns.iter_mut().zip(values) {
            column.push(v);
        }
    }
    let mut trace = Trace::new(dt, len)?;
    for (name, column) in seq.block.outputs.iter().zip(columns) {
        trace.insert(name.clone(), column)?;
    }
    Ok(trace)
}
