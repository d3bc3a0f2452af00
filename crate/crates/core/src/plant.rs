//! Longitudinal vehicle surrogate.
//!
//! A point mass on a straight road driven by throttle, brake and grade, plus a
//! damped pitch oscillator excited by longitudinal acceleration. Integration is
//! semi-implicit Euler at a fixed step.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Trace, TraceError};

pub const GRAVITY: f64 = 9.81;
pub const KMH_PER_MS: f64 = 3.6;

/// Sampling periods of the two supported execution modes.
pub const SIL_DT: f64 = 0.001;
pub const HIL_DT: f64 = 0.01;

const DEFAULT_PARAMS_JSON: &str = include_str!("../data/plant_default.json");

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("{field} = {value} is outside [{min}, {max}]")]
    InputOutOfRange {
        field: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("plant parameter `{0}` must be positive and finite")]
    BadParameter(&'static str),
    #[error("non-finite state at sample {index} (t = {time} s)")]
    NonFinite { index: usize, time: f64 },
    #[error("input trace sampled at {got} s but plant step is {expected} s")]
    SamplingMismatch { expected: f64, got: f64 },
    #[error("input trace is empty")]
    EmptyInput,
    #[error("invalid plant parameter file: {0}")]
    Config(#[from] serde_json::Error),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pedal positions and road grade, all in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleInput {
    throttle: f64,
    brake: f64,
    slope: f64,
}

fn check_range(field: &'static str, value: f64, min: f64, max: f64) -> Result<f64, PlantError> {
    if value.is_finite() && (min..=max).contains(&value) {
        Ok(value)
    } else {
        Err(PlantError::InputOutOfRange {
            field,
            value,
            min,
            max,
        })
    }
}

impl VehicleInput {
    pub const ZERO: VehicleInput = VehicleInput {
        throttle: 0.0,
        brake: 0.0,
        slope: 0.0,
    };

    pub fn new(throttle: f64, brake: f64, slope: f64) -> Result<Self, PlantError> {
        Ok(Self {
            throttle: check_range("throttle", throttle, 0.0, 100.0)?,
            brake: check_range("brake", brake, 0.0, 100.0)?,
            slope: check_range("slope", slope, -5.0, 5.0)?,
        })
    }

    pub fn throttle(&self) -> f64 {
        self.throttle
    }

    pub fn brake(&self) -> f64 {
        self.brake
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// m/s, never negative.
    pub velocity: f64,
    /// m/s², acting over the step that produced this state.
    pub accel_long: f64,
    /// m/s³, backward difference of `accel_long`.
    pub jerk_long: f64,
    /// rad
    pub pitch_angle: f64,
    /// rad/s
    pub pitch_rate: f64,
    /// rad/s²
    pub pitch_accel: f64,
}

impl VehicleState {
    pub fn at_rest() -> Self {
        Self::default()
    }

    pub fn cruising(velocity: f64) -> Self {
        Self {
            velocity,
            ..Self::default()
        }
    }

    fn is_finite(&self) -> bool {
        [
            self.velocity,
            self.accel_long,
            self.jerk_long,
            self.pitch_angle,
            self.pitch_rate,
            self.pitch_accel,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// kg
    pub mass: f64,
    /// N, traction limit at low speed.
    pub max_drive_force: f64,
    /// W
    pub max_power: f64,
    /// N at 100 % brake.
    pub max_brake_force: f64,
    /// N·s²/m²
    pub drag_coeff: f64,
    /// N
    pub rolling_coeff: f64,
    /// kg·m²
    pub pitch_inertia: f64,
    /// N·m/rad
    pub pitch_stiffness: f64,
    /// N·m·s/rad
    pub pitch_damping: f64,
    /// m
    pub pitch_coupling: f64,
    /// Pedal travel (percent) below which the engine delivers no drive force.
    pub throttle_deadband: f64,
    /// m/s. Rolling resistance and brake force fade in as `tanh(v / stop_speed)`.
    pub stop_speed: f64,
    /// s
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_PARAMS_JSON).expect("bundled plant parameters are valid")
    }
}

impl PlantParams {
    pub fn from_json(text: &str) -> Result<Self, PlantError> {
        let params: PlantParams = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PlantError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("mass", self.mass),
            ("max_drive_force", self.max_drive_force),
            ("max_power", self.max_power),
            ("max_brake_force", self.max_brake_force),
            ("drag_coeff", self.drag_coeff),
            ("rolling_coeff", self.rolling_coeff),
            ("pitch_inertia", self.pitch_inertia),
            ("pitch_stiffness", self.pitch_stiffness),
            ("pitch_damping", self.pitch_damping),
            ("pitch_coupling", self.pitch_coupling),
            ("stop_speed", self.stop_speed),
            ("dt", self.dt),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::BadParameter(name));
            }
        }
        if !(0.0..100.0).contains(&self.throttle_deadband) {
            return Err(PlantError::BadParameter("throttle_deadband"));
        }
        Ok(())
    }

    /// Tractive force available at full throttle.
    pub fn available_drive_force(&self, velocity: f64) -> f64 {
        self.max_drive_force.min(self.max_power / velocity.max(0.1))
    }

    /// Fraction of available drive force delivered at a pedal position.
    pub fn throttle_fraction(&self, throttle: f64) -> f64 {
        (throttle - self.throttle_deadband).max(0.0) / (100.0 - self.throttle_deadband)
    }

    /// Smooth stand-in for `sign(v)` on the non-negative half line.
    fn motion_factor(&self, velocity: f64) -> f64 {
        (velocity / self.stop_speed).tanh()
    }

    /// Net longitudinal force in the direction of travel, gravity included.
    pub fn net_force(&self, velocity: f64, input: &VehicleInput) -> f64 {
        let drive = self.throttle_fraction(input.throttle) * self.available_drive_force(velocity);
        let motion = self.motion_factor(velocity);
        let brake = input.brake / 100.0 * self.max_brake_force * motion;
        let drag = self.drag_coeff * velocity * velocity;
        let rolling = self.rolling_coeff * motion;
        let grade = self.mass * GRAVITY * (input.slope / 100.0).atan().sin();
        drive - brake - drag - rolling - grade
    }
}

/// Advances the vehicle by one step of `params.dt`.
///
/// The returned state carries the new velocity and pitch, together with the
/// acceleration, jerk and pitch acceleration that acted during the step.
pub fn step_dynamics(
    state: &VehicleState,
    input: &VehicleInput,
    params: &PlantParams,
) -> Option<VehicleState> {
    let dt = params.dt;
    let v = state.velocity;
    let mut accel = params.net_force(v, input) / params.mass;
    // No reverse motion: the vehicle comes to rest instead.
    if v + accel * dt < 0.0 {
        accel = -v / dt;
    }
    let velocity = (v + accel * dt).max(0.0);
    let jerk = (accel - state.accel_long) / dt;

    let torque = -params.pitch_stiffness * state.pitch_angle
        - params.pitch_damping * state.pitch_rate
        - params.pitch_coupling * params.mass * accel;
    let pitch_accel = torque / params.pitch_inertia;
    let pitch_rate = state.pitch_rate + pitch_accel * dt;
    let pitch_angle = state.pitch_angle + pitch_rate * dt;

    let next = VehicleState {
        velocity,
        accel_long: accel,
        jerk_long: jerk,
        pitch_angle,
        pitch_rate,
        pitch_accel,
    };
    next.is_finite().then_some(next)
}

/// Plant output signal names, in export order.
pub const OUTPUT_SIGNALS: [&str; 6] = [
    "velocity",
    "velocity_ms",
    "accel_long",
    "jerk_long",
    "pitch_angle",
    "pitch_accel",
];

/// Per-sample plant outputs. Row `k` holds the velocity and pitch angle at `t_k`
/// and the acceleration terms acting over `[t_k, t_k + dt)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample {
    pub velocity_kmh: f64,
    pub velocity_ms: f64,
    pub accel_long: f64,
    pub jerk_long: f64,
    pub pitch_angle: f64,
    pub pitch_accel: f64,
}

impl PlantSample {
    pub fn values(&self) -> [f64; 6] {
        [
            self.velocity_kmh,
            self.velocity_ms,
            self.accel_long,
            self.jerk_long,
            self.pitch_angle,
            self.pitch_accel,
        ]
    }
}

/// A plant instance that owns its state and advances one sample at a time.
#[derive(Debug, Clone)]
pub struct Vehicle {
    params: PlantParams,
    state: VehicleState,
    index: usize,
}

impl Vehicle {
    pub fn new(params: PlantParams, initial: VehicleState) -> Self {
        Self {
            params,
            state: initial,
            index: 0,
        }
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn velocity_kmh(&self) -> f64 {
        self.state.velocity * KMH_PER_MS
    }

    /// Applies `input` for one step and reports the sample for the current time.
    pub fn advance(&mut self, input: &VehicleInput) -> Result<PlantSample, PlantError> {
        let before = self.state;
        let after = step_dynamics(&before, input, &self.params).ok_or(PlantError::NonFinite {
            index: self.index,
            time: self.index as f64 * self.params.dt,
        })?;
        self.state = after;
        self.index += 1;
        Ok(PlantSample {
            velocity_kmh: before.velocity * KMH_PER_MS,
            velocity_ms: before.velocity,
            accel_long: after.accel_long,
            jerk_long: after.jerk_long,
            pitch_angle: before.pitch_angle,
            pitch_accel: after.pitch_accel,
        })
    }
}

/// Open-loop simulation of `inputs` (signals `throttle`, `brake`, `slope`).
pub fn simulate(initial: &VehicleState, inputs: &Trace, params: &PlantParams) -> Result<Trace, PlantError> {
    params.validate()?;
    if inputs.is_empty() {
        return Err(PlantError::EmptyInput);
    }
    if (inputs.dt() - params.dt).abs() > 1e-12 * params.dt {
        return Err(PlantError::SamplingMismatch {
            expected: params.dt,
            got: inputs.dt(),
        });
    }
    let throttle = inputs.require("throttle")?;
    let brake = inputs.require("brake")?;
    let slope = inputs.require("slope")?;

    let n = inputs.len();
    let mut columns: [Vec<f64>; 6] = std::array::from_fn(|_| Vec::with_capacity(n));
    let mut vehicle = Vehicle::new(params.clone(), *initial);
    for i in 0..n {
        let input = VehicleInput::new(throttle[i], brake[i], slope[i])?;
        let sample = vehicle.advance(&input)?;
        for (column, value) in columns.iter_mut().zip(sample.values()) {
            column.push(value);
        }
    }

    let mut out = Trace::new(params.dt, n)?;
    for (name, column) in OUTPUT_SIGNALS.iter().zip(columns) {
        out.insert(*name, column)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> PlantParams {
        PlantParams::default()
    }

    #[test]
    fn default_params_validate() {
        params().validate().unwrap();
        assert_eq!(params().dt, SIL_DT);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        assert!(VehicleInput::new(101.0, 0.0, 0.0).is_err());
        assert!(VehicleInput::new(0.0, -1.0, 0.0).is_err());
        assert!(VehicleInput::new(0.0, 0.0, 5.5).is_err());
        assert!(VehicleInput::new(f64::NAN, 0.0, 0.0).is_err());
        assert!(VehicleInput::new(100.0, 100.0, -5.0).is_ok());
    }

    #[test]
    fn rest_is_an_equilibrium() {
        let next = step_dynamics(&VehicleState::at_rest(), &VehicleInput::ZERO, &params()).unwrap();
        assert_eq!(next.velocity, 0.0);
        assert_eq!(next.accel_long, 0.0);
        assert_eq!(next.jerk_long, 0.0);
        assert_eq!(next.pitch_angle, 0.0);
        assert_eq!(next.pitch_accel, 0.0);
    }

    #[test]
    fn pitch_decays_at_rest() {
        let p = params();
        let mut state = VehicleState {
            pitch_angle: 0.01,
            ..VehicleState::default()
        };
        for _ in 0..20_000 {
            state = step_dynamics(&state, &VehicleInput::ZERO, &p).unwrap();
        }
        assert!(state.pitch_angle.abs() < 1e-6);
        assert_eq!(state.velocity, 0.0);
    }

    #[test]
    fn full_brake_decelerates() {
        let input = VehicleInput::new(0.0, 100.0, 0.0).unwrap();
        let next = step_dynamics(&VehicleState::cruising(20.0), &input, &params()).unwrap();
        assert!(next.accel_long < 0.0);
        assert!(next.velocity < 20.0);
    }

    #[test]
    fn braking_never_reverses() {
        let p = params();
        let input = VehicleInput::new(0.0, 100.0, 5.0).unwrap();
        let mut state = VehicleState::cruising(2.0);
        for _ in 0..10_000 {
            state = step_dynamics(&state, &input, &p).unwrap();
            assert!(state.velocity >= 0.0);
        }
        assert_eq!(state.velocity, 0.0);
    }

    #[test]
    fn open_loop_sampling_mismatch() {
        let mut inputs = Trace::new(0.01, 10).unwrap();
        for name in ["throttle", "brake", "slope"] {
            inputs.insert(name, vec![0.0; 10]).unwrap();
        }
        assert!(matches!(
            simulate(&VehicleState::at_rest(), &inputs, &params()),
            Err(PlantError::SamplingMismatch { .. })
        ));
    }

    #[test]
    fn deadband_delivers_no_force() {
        let p = params();
        assert_eq!(p.throttle_fraction(0.0), 0.0);
        assert_eq!(p.throttle_fraction(p.throttle_deadband), 0.0);
        assert_eq!(p.throttle_fraction(100.0), 1.0);
    }
}
