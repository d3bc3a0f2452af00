//! Transition profiles `[0, 1] -> [0, 1]` used to blend the command after a
//! change in the driving mode.

use super::config::SmoothingMode;

/// Steepness of the logistic before renormalisation.
const SIGMOID_STEEPNESS: f64 = 10.0;

pub fn cubic(tau: f64) -> f64 {
    let tau = tau.clamp(0.0, 1.0);
    tau * tau * (3.0 - 2.0 * tau)
}

pub fn quintic(tau: f64) -> f64 {
    let tau = tau.clamp(0.0, 1.0);
    tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau))
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Logistic centred at `tau = 0.5` and rescaled to hit exactly 0 and 1 at the ends.
pub fn sigmoid(tau: f64) -> f64 {
    let tau = tau.clamp(0.0, 1.0);
    let lo = logistic(-0.5 * SIGMOID_STEEPNESS);
    let hi = logistic(0.5 * SIGMOID_STEEPNESS);
    (logistic(SIGMOID_STEEPNESS * (tau - 0.5)) - lo) / (hi - lo)
}

/// Maximum of `d profile / d tau` over `[0, 1]`.
pub fn max_slope(mode: SmoothingMode, involves_brake: bool) -> f64 {
    match mode {
        SmoothingMode::CubicSpline => 1.5,
        SmoothingMode::QuinticBrake if involves_brake => 1.875,
        SmoothingMode::QuinticBrake => 1.5,
        SmoothingMode::Sigmoid => {
            let lo = logistic(-0.5 * SIGMOID_STEEPNESS);
            let hi = logistic(0.5 * SIGMOID_STEEPNESS);
            0.25 * SIGMOID_STEEPNESS / (hi - lo)
        }
        SmoothingMode::None | SmoothingMode::RateLimit => f64::INFINITY,
    }
}

/// Profile value for an event-armed smoothing mode. `None` for modes that do
/// not blend.
pub fn profile(mode: SmoothingMode, tau: f64, involves_brake: bool) -> Option<f64> {
    match mode {
        SmoothingMode::Sigmoid => Some(sigmoid(tau)),
        SmoothingMode::CubicSpline => Some(cubic(tau)),
        SmoothingMode::QuinticBrake if involves_brake => Some(quintic(tau)),
        SmoothingMode::QuinticBrake => Some(cubic(tau)),
        SmoothingMode::None | SmoothingMode::RateLimit => None,
    }
}
