//! Closed-loop execution: test sequence -> cruise controller -> plant, with
//! the assessments monitored while the simulation runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ConfigError, ControllerConfig, ControllerInput, CruiseController};
use crate::monitor::{AssessmentMonitor, FitnessReport, MonitorError, RequirementResult};
use crate::plant::{PlantError, PlantParams, Vehicle, VehicleInput, VehicleState};
use crate::testlang::{Block, ConcreteSequence, SequenceError, SequenceRunner};
use crate::trace::{Trace, TraceError};

/// Signals of a closed-loop trace, in column order.
pub const SIGNALS: [&str; 13] = [
    "desired_velocity",
    "driver_throttle",
    "driver_brake",
    "slope",
    "throttle",
    "brake",
    "cc_active",
    "velocity",
    "velocity_ms",
    "accel_long",
    "jerk_long",
    "pitch_angle",
    "pitch_accel",
];

/// Sequence outputs the loop consumes.
pub const SEQUENCE_INPUTS: [&str; 4] = ["desired_velocity", "driver_throttle", "driver_brake", "slope"];

/// Plant signals a sequence may observe: those known at the start of a sample.
pub const FEEDBACK_SIGNALS: [&str; 3] = ["velocity", "velocity_ms", "pitch_angle"];

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("sequence `{sequence}` does not assign `{signal}`")]
    MissingInput { sequence: String, signal: String },
    #[error("sequence `{sequence}` observes `{signal}`, which is not available as feedback")]
    UnsupportedFeedback { sequence: String, signal: String },
    #[error(transparent)]
    Sequence(#[from] SequenceError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub sequence: &'a ConcreteSequence,
    pub controller: &'a ControllerConfig,
    pub plant: &'a PlantParams,
    pub assessments: &'a [Block],
    pub duration: f64,
}

/// Output-side invariants observed over a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InvariantStats {
    /// Samples where throttle and brake were both positive.
    pub overlap_samples: usize,
    /// Samples where the throttle was strictly between 0 and 5 %.
    pub floor_violations: usize,
}

#[derive(Debug, Clone)]
pub struct SimulationOutcome {
    pub report: FitnessReport,
    pub requirements: Vec<RequirementResult>,
    pub invariants: InvariantStats,
    pub samples: usize,
    /// Full trace, when recording was requested.
    pub trace: Option<Trace>,
}

fn position(names: &[String], name: &str) -> Option<usize> {
    names.iter().position(|n| n == name)
}

pub fn run_closed_loop(scenario: &Scenario, record: bool) -> Result<SimulationOutcome, SimulationError> {
    let seq = scenario.sequence;
    let block = &seq.block;
    scenario.controller.validate()?;
    scenario.plant.validate()?;
    seq.check_duration(scenario.duration)?;

    let input_index = SEQUENCE_INPUTS.map(|name| position(&block.outputs, name));
    if let Some(missing) = input_index.iter().position(Option::is_none) {
        return Err(SimulationError::MissingInput {
            sequence: block.name.clone(),
            signal: SEQUENCE_INPUTS[missing].to_string(),
        });
    }
    let input_index = input_index.map(|i| i.expect("checked above"));
    let feedback_index = block
        .observed
        .iter()
        .map(|name| {
            FEEDBACK_SIGNALS.iter().position(|f| f == name).ok_or_else(|| {
                SimulationError::UnsupportedFeedback {
                    sequence: block.name.clone(),
                    signal: name.clone(),
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut monitors = scenario
        .assessments
        .iter()
        .map(AssessmentMonitor::new)
        .collect::<Result<Vec<_>, _>>()?;
    let mut monitor_index = Vec::with_capacity(monitors.len());
    for (block, monitor) in scenario.assessments.iter().zip(&monitors) {
        let index = monitor
            .signals()
            .iter()
            .map(|name| {
                SIGNALS
                    .iter()
                    .position(|s| s == name)
                    .ok_or_else(|| MonitorError::MissingSignal {
                        assessment: block.name.clone(),
                        signal: name.clone(),
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        monitor_index.push(index);
    }

    let dt = scenario.plant.dt;
    let n = Trace::samples_for(scenario.duration, dt);
    let mut runner = SequenceRunner::new(seq);
    let mut controller = CruiseController::new(scenario.controller.clone(), dt);
    let mut vehicle = Vehicle::new(scenario.plant.clone(), VehicleState::at_rest());
    let mut columns: Vec<Vec<f64>> = if record {
        (0..SIGNALS.len()).map(|_| Vec::with_capacity(n)).collect()
    } else {
        Vec::new()
    };
    let mut feedback = vec![0.0; feedback_index.len()];
    let mut monitor_row: Vec<Vec<f64>> = monitor_index.iter().map(|ix| vec![0.0; ix.len()]).collect();
    let mut invariants = InvariantStats::default();

    for k in 0..n {
        let t = k as f64 * dt;
        let state = vehicle.state();
        let available = [vehicle.velocity_kmh(), state.velocity, state.pitch_angle];
        for (slot, &i) in feedback.iter_mut().zip(&feedback_index) {
            *slot = available[i];
        }
        let outputs = runner.step(t, &feedback)?;
        let [desired, driver_throttle, driver_brake, slope] = input_index.map(|i| outputs[i]);
        // Range-check the scripted pedals and grade before they reach the controller.
        VehicleInput::new(driver_throttle, driver_brake, slope)?;

        let command = controller.step(&ControllerInput {
            desired_velocity: desired,
            measured_velocity: vehicle.velocity_kmh(),
            slope,
            driver_throttle,
            driver_brake,
            t,
        });
        let input = VehicleInput::new(command.throttle, command.brake, slope)?;
        let sample = vehicle.advance(&input)?;

        if command.throttle > 0.0 && command.brake > 0.0 {
            invariants.overlap_samples += 1;
        }
        if command.throttle > 0.0 && command.throttle < 5.0 {
            invariants.floor_violations += 1;
        }

        let row = [
            desired,
            driver_throttle,
            driver_brake,
            slope,
            command.throttle,
            command.brake,
            if command.cc_active { 1.0 } else { 0.0 },
            sample.velocity_kmh,
            sample.velocity_ms,
            sample.accel_long,
            sample.jerk_long,
            sample.pitch_angle,
            sample.pitch_accel,
        ];
        for ((monitor, index), values) in monitors.iter_mut().zip(&monitor_index).zip(&mut monitor_row) {
            for (slot, &i) in values.iter_mut().zip(index) {
                *slot = row[i];
            }
            monitor.update(t, values);
        }
        if record {
            for (column, value) in columns.iter_mut().zip(row) {
                column.push(value);
            }
        }
    }

    let requirements: Vec<RequirementResult> = monitors.iter().map(AssessmentMonitor::finish).collect();
    let trace = if record {
        let mut trace = Trace::new(dt, n)?;
        for (name, column) in SIGNALS.iter().zip(columns) {
            trace.insert(*name, column)?;
        }
        Some(trace)
    } else {
        None
    };
    Ok(SimulationOutcome {
        report: FitnessReport::combine(&requirements),
        requirements,
        invariants,
        samples: n,
        trace,
    })
}
