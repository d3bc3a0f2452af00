use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest non-zero throttle the controller emits when the floor is enabled.
pub const THROTTLE_FLOOR: f64 = 5.0;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown controller version `{0}`")]
    UnknownVersion(String),
    #[error("invalid controller configuration: {0}")]
    Invalid(String),
    #[error("malformed controller configuration: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingMode {
    None,
    /// Continuous slew-rate limit on the command.
    RateLimit,
    /// Logistic blend with near-zero initial slope.
    Sigmoid,
    /// Hermite cubic with zero end slopes.
    CubicSpline,
    /// Cubic for throttle transitions, quintic (zero slope and curvature at
    /// both ends) whenever the transition involves the brake.
    QuinticBrake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    /// %/(km/h)
    pub kp: f64,
    /// %/(km/h·s)
    pub ki: f64,
    /// %·s/(km/h)
    pub kd: f64,
    /// %/(km/h), feedforward on the desired velocity.
    pub kff: f64,
    pub brakes_enabled: bool,
    pub smoothing_mode: SmoothingMode,
    /// s
    pub smoothing_duration: f64,
    /// %/s, used by [`SmoothingMode::RateLimit`].
    pub slew_rate: f64,
    pub grade_compensation: bool,
    /// % command per % grade.
    pub grade_gain: f64,
    pub throttle_floor_enabled: bool,
    /// Upper bound on the brake command, percent.
    pub brake_cap: f64,
    pub integral_reset_on_change: bool,
    /// Bound on the accumulated error (km/h·s); `None` disables clamping.
    pub integral_clamp: Option<f64>,
    pub mutual_exclusion: bool,
    /// Driver pedal level (percent) above which the driver has control.
    pub deactivation_threshold: f64,
    /// Desired-velocity jump (km/h) recognised as a setpoint change.
    pub change_threshold: f64,
    /// Time constant (s) of the optional first-order lag on the slope signal.
    pub slope_lag: Option<f64>,
}

impl ControllerConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: ControllerConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        for (name, value) in [
            ("kp", self.kp),
            ("ki", self.ki),
            ("kd", self.kd),
            ("kff", self.kff),
            ("grade_gain", self.grade_gain),
        ] {
            if !value.is_finite() {
                return invalid(format!("{name} must be finite"));
            }
        }
        if !(self.smoothing_duration.is_finite() && self.smoothing_duration > 0.0) {
            return invalid(format!(
                "smoothing_duration must be positive, got {}",
                self.smoothing_duration
            ));
        }
        if !(self.slew_rate.is_finite() && self.slew_rate > 0.0) {
            return invalid(format!("slew_rate must be positive, got {}", self.slew_rate));
        }
        if !(self.brake_cap > 0.0 && self.brake_cap <= 100.0) {
            return invalid(format!("brake_cap must lie in (0, 100], got {}", self.brake_cap));
        }
        if !(self.deactivation_threshold.is_finite() && self.deactivation_threshold >= 0.0) {
            return invalid(format!(
                "deactivation_threshold must be non-negative, got {}",
                self.deactivation_threshold
            ));
        }
        if !(self.change_threshold.is_finite() && self.change_threshold >= 0.0) {
            return invalid("change_threshold must be non-negative".into());
        }
        if let Some(clamp) = self.integral_clamp {
            if !(clamp.is_finite() && clamp >= 0.0) {
                return invalid(format!("integral_clamp must be non-negative, got {clamp}"));
            }
        }
        if let Some(lag) = self.slope_lag {
            if !(lag.is_finite() && lag > 0.0) {
                return invalid(format!("slope_lag must be positive, got {lag}"));
            }
        }
        Ok(())
    }

    /// Returns a copy with the fields in `overrides` (a JSON object) replaced.
    pub fn with_overrides(&self, overrides: &serde_json::Value) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self)?;
        merge_json(&mut value, overrides);
        let cfg: ControllerConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Shallow-recursive merge of `patch` into `target`.
pub(crate) fn merge_json(target: &mut serde_json::Value, patch: &serde_json::Value) {
    match (target, patch) {
        (serde_json::Value::Object(target), serde_json::Value::Object(patch)) => {
            for (key, value) in patch {
                match target.get_mut(key) {
                    Some(slot) if slot.is_object() && value.is_object() => merge_json(slot, value),
                    _ => {
                        target.insert(key.clone(), value.clone());
                    }
                }
            }
        }
        (target, patch) => *target = patch.clone(),
    }
}
