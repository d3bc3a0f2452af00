//! Cruise controller: PID, grade compensation, change detection, smoothing and
//! output split, composed once per plant step.
//!
//! Every historical behaviour is a flag in [`ControllerConfig`]; the bundled
//! version ladder in [`versions`] maps version ids onto flag bundles.

mod config;
pub mod smoothing;
pub mod versions;

pub(crate) use config::merge_json;
pub use config::{ConfigError, ControllerConfig, SmoothingMode, THROTTLE_FLOOR};
pub use versions::{config_for_version, requirements_for_version, VersionLadder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerInput {
    /// km/h
    pub desired_velocity: f64,
    /// km/h
    pub measured_velocity: f64,
    /// percent grade
    pub slope: f64,
    pub driver_throttle: f64,
    pub driver_brake: f64,
    /// s
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// km/h·s
    pub integral_acc: f64,
    /// km/h
    pub prev_error: f64,
    pub cc_active: bool,
    pub smoothing_active: bool,
    pub smoothing_start_time: f64,
    pub smoothing_from: f64,
    pub smoothing_to: f64,
    /// Whether the current window blends through the brake, fixed on its first sample.
    pub smoothing_brake: Option<bool>,
    /// km/h; NaN before the first sample.
    pub prev_desired_velocity: f64,
    /// Last signed command applied to the vehicle (throttle minus brake).
    pub prev_command: f64,
    pub slope_estimate: Option<f64>,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            integral_acc: 0.0,
            prev_error: 0.0,
            cc_active: false,
            smoothing_active: false,
            smoothing_start_time: 0.0,
            smoothing_from: 0.0,
            smoothing_to: 0.0,
            smoothing_brake: None,
            prev_desired_velocity: f64::NAN,
            prev_command: 0.0,
            slope_estimate: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangeEvent {
    None,
    /// Pedals released: the controller takes over.
    Takeover,
    SetpointChange,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitOutput {
    pub throttle: f64,
    pub brake: f64,
    pub cc_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub throttle: f64,
    pub brake: f64,
    pub cc_active: bool,
    pub event: ChangeEvent,
}

fn driver_in_control(input: &ControllerInput, cfg: &ControllerConfig) -> bool {
    input.driver_throttle > cfg.deactivation_threshold || input.driver_brake > cfg.deactivation_threshold
}

fn clamp_integral(state: &mut ControllerState, cfg: &ControllerConfig) {
    if let Some(bound) = cfg.integral_clamp {
        state.integral_acc = state.integral_acc.clamp(-bound, bound);
    }
}

/// PID on the velocity error (km/h) plus feedforward on the desired velocity.
/// Returns a signed command in percent: positive throttle, negative brake.
pub fn pid_update(
    state: &mut ControllerState,
    input: &ControllerInput,
    cfg: &ControllerConfig,
    dt: f64,
) -> f64 {
    let error = input.desired_velocity - input.measured_velocity;
    state.integral_acc += error * dt;
    clamp_integral(state, cfg);
    let derivative = (error - state.prev_error) / dt;
    state.prev_error = error;
    cfg.kp * error + cfg.ki * state.integral_acc + cfg.kd * derivative + cfg.kff * input.desired_velocity
}

/// Raises the command uphill and lowers it downhill.
pub fn apply_grade(raw: f64, slope: f64, cfg: &ControllerConfig) -> f64 {
    if cfg.grade_compensation {
        raw + cfg.grade_gain * slope
    } else {
        raw
    }
}

fn arm_smoothing(state: &mut ControllerState, t: f64) {
    state.smoothing_active = true;
    state.smoothing_start_time = t;
    state.smoothing_from = state.prev_command;
    state.smoothing_to = state.prev_command;
    state.smoothing_brake = None;
}

/// Classifies the sample and applies the bookkeeping tied to each event:
/// engaging the controller, resetting the integral, arming the smoother.
pub fn detect_change(
    state: &mut ControllerState,
    input: &ControllerInput,
    cfg: &ControllerConfig,
) -> ChangeEvent {
    let setpoint_moved = (input.desired_velocity - state.prev_desired_velocity).abs() > cfg.change_threshold;
    state.prev_desired_velocity = input.desired_velocity;

    let event = if !state.cc_active && !driver_in_control(input, cfg) {
        ChangeEvent::Takeover
    } else if state.cc_active && setpoint_moved {
        ChangeEvent::SetpointChange
    } else {
        ChangeEvent::None
    };

    match event {
        ChangeEvent::Takeover => {
            state.cc_active = true;
            state.integral_acc = 0.0;
            state.prev_error = input.desired_velocity - input.measured_velocity;
            arm_smoothing(state, input.t);
        }
        ChangeEvent::SetpointChange => {
            if cfg.integral_reset_on_change {
                state.integral_acc = 0.0;
            }
            arm_smoothing(state, input.t);
        }
        ChangeEvent::None => {}
    }
    event
}

/// Shapes the (clamped) raw command. Event-armed modes blend from the command
/// held at the change towards the live raw value and pass it through once the
/// smoothing window has elapsed.
pub fn smooth_transition(
    state: &mut ControllerState,
    raw: f64,
    t: f64,
    dt: f64,
    cfg: &ControllerConfig,
) -> f64 {
    match cfg.smoothing_mode {
        SmoothingMode::None => raw,
        SmoothingMode::RateLimit => {
            let step = cfg.slew_rate * dt;
            raw.clamp(state.prev_command - step, state.prev_command + step)
        }
        mode => {
            if !state.smoothing_active {
                return raw;
            }
            let tau = (t - state.smoothing_start_time) / cfg.smoothing_duration;
            if tau >= 1.0 {
                state.smoothing_active = false;
                return raw;
            }
            state.smoothing_to = raw;
            let from = state.smoothing_from;
            let involves_brake = *state.smoothing_brake.get_or_insert(from < 0.0 || raw < 0.0);
            let weight = smoothing::profile(mode, tau, involves_brake).unwrap_or(1.0);
            from + (raw - from) * weight
        }
    }
}

/// Turns the signed command into pedal signals, handing control to the driver
/// when either pedal is pressed beyond the deactivation threshold.
pub fn output_split(
    command: f64,
    input: &ControllerInput,
    cfg: &ControllerConfig,
    state: &mut ControllerState,
) -> SplitOutput {
    let (mut throttle, mut brake) = if driver_in_control(input, cfg) {
        state.cc_active = false;
        state.smoothing_active = false;
        (input.driver_throttle, input.driver_brake)
    } else {
        let mut throttle = command.clamp(0.0, 100.0);
        if cfg.throttle_floor_enabled && throttle > 0.0 && throttle < THROTTLE_FLOOR {
            throttle = THROTTLE_FLOOR;
        }
        let brake = if cfg.brakes_enabled && command < 0.0 {
            (-command).min(cfg.brake_cap)
        } else {
            0.0
        };
        (throttle, brake)
    };
    if cfg.mutual_exclusion && throttle > 0.0 && brake > 0.0 {
        throttle = 0.0;
    }
    brake = brake.min(100.0);
    SplitOutput {
        throttle,
        brake,
        cc_active: state.cc_active,
    }
}

/// One controller sample: detect change, PID, grade, smoothing, split.
pub fn controller_step(
    state: &mut ControllerState,
    input: &ControllerInput,
    cfg: &ControllerConfig,
    dt: f64,
) -> ControllerOutput {
    let slope = match cfg.slope_lag {
        Some(lag) => {
            let estimate = state.slope_estimate.unwrap_or(input.slope);
            let next = estimate + (input.slope - estimate) * dt / (lag + dt);
            state.slope_estimate = Some(next);
            next
        }
        None => input.slope,
    };

    let event = detect_change(state, input, cfg);
    if driver_in_control(input, cfg) {
        let out = output_split(0.0, input, cfg, state);
        state.prev_command = out.throttle - out.brake;
        return ControllerOutput {
            throttle: out.throttle,
            brake: out.brake,
            cc_active: false,
            event,
        };
    }

    let raw = pid_update(state, input, cfg, dt);
    let floor = if cfg.brakes_enabled {
        -cfg.brake_cap
    } else {
        -100.0
    };
    let graded = apply_grade(raw, slope, cfg).clamp(floor, 100.0);
    let command = smooth_transition(state, graded, input.t, dt, cfg);
    let out = output_split(command, input, cfg, state);
    state.prev_command = command;
    ControllerOutput {
        throttle: out.throttle,
        brake: out.brake,
        cc_active: out.cc_active,
        event,
    }
}

/// Controller instance owning its configuration and state.
#[derive(Debug, Clone)]
pub struct CruiseController {
    cfg: ControllerConfig,
    state: ControllerState,
    dt: f64,
}

impl CruiseController {
    pub fn new(cfg: ControllerConfig, dt: f64) -> Self {
        Self {
            cfg,
            state: ControllerState::default(),
            dt,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn step(&mut self, input: &ControllerInput) -> ControllerOutput {
        controller_step(&mut self.state, input, &self.cfg, self.dt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 0.001;

    fn cfg() -> ControllerConfig {
        config_for_version("7.5").unwrap()
    }

    fn input(desired: f64, measured: f64) -> ControllerInput {
        ControllerInput {
            desired_velocity: desired,
            measured_velocity: measured,
            slope: 0.0,
            driver_throttle: 0.0,
            driver_brake: 0.0,
            t: 0.0,
        }
    }

    fn active_state() -> ControllerState {
        ControllerState {
            cc_active: true,
            ..ControllerState::default()
        }
    }

    #[test]
    fn pid_feedforward_only() {
        let c = ControllerConfig { kff: 0.5, ..cfg() };
        let mut state = active_state();
        let raw = pid_update(&mut state, &input(100.0, 100.0), &c, DT);
        assert_eq!(raw, 50.0);
    }

    #[test]
    fn pid_proportional_term() {
        let c = ControllerConfig {
            kp: 2.0,
            ki: 0.0,
            kd: 0.0,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_error = 3.0;
        let raw = pid_update(&mut state, &input(80.0, 77.0), &c, DT);
        assert!((raw - (6.0 + c.kff * 80.0)).abs() < 1e-12);
    }

    #[test]
    fn pid_integral_closed_form() {
        let c = ControllerConfig {
            kp: 0.0,
            ki: 0.1,
            kd: 0.0,
            kff: 0.0,
            integral_clamp: None,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_error = 1.0;
        let mut raw = 0.0;
        for _ in 0..10_000 {
            raw = pid_update(&mut state, &input(51.0, 50.0), &c, DT);
        }
        assert!((raw - 1.0).abs() < 1e-9, "{raw}");
    }

    #[test]
    fn integral_clamp_bounds_the_term() {
        let c = ControllerConfig {
            integral_clamp: Some(10.0),
            ..cfg()
        };
        let mut state = active_state();
        for _ in 0..100_000 {
            pid_update(&mut state, &input(150.0, 0.0), &c, DT);
            assert!(state.integral_acc.abs() <= 10.0);
        }
    }

    #[test]
    fn grade_compensation() {
        let on = ControllerConfig {
            grade_compensation: true,
            grade_gain: 4.0,
            ..cfg()
        };
        assert_eq!(apply_grade(30.0, 0.0, &on), 30.0);
        assert_eq!(apply_grade(30.0, 2.0, &on), 38.0);
        assert_eq!(apply_grade(30.0, -2.0, &on), 22.0);
        let off = ControllerConfig {
            grade_compensation: false,
            ..on
        };
        assert_eq!(apply_grade(30.0, 4.0, &off), 30.0);
    }

    #[test]
    fn change_detection() {
        let c = ControllerConfig {
            integral_reset_on_change: true,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_desired_velocity = 80.0;
        assert_eq!(
            detect_change(&mut state, &input(80.0, 70.0), &c),
            ChangeEvent::None
        );

        state.integral_acc = 12.0;
        assert_eq!(
            detect_change(&mut state, &input(120.0, 70.0), &c),
            ChangeEvent::SetpointChange
        );
        assert_eq!(state.integral_acc, 0.0);
        assert!(state.smoothing_active);
    }

    #[test]
    fn integral_survives_change_without_reset_flag() {
        let c = ControllerConfig {
            integral_reset_on_change: false,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_desired_velocity = 80.0;
        state.integral_acc = 12.0;
        detect_change(&mut state, &input(120.0, 70.0), &c);
        assert_eq!(state.integral_acc, 12.0);
    }

    #[test]
    fn pedal_release_hands_back_to_controller() {
        let c = cfg();
        let mut state = ControllerState::default();
        let mut pressed = input(80.0, 60.0);
        pressed.driver_throttle = 20.0;
        let out = controller_step(&mut state, &pressed, &c, DT);
        assert!(!out.cc_active);
        assert_eq!(out.throttle, 20.0);

        let released = input(80.0, 60.0);
        let out = controller_step(&mut state, &released, &c, DT);
        assert_eq!(out.event, ChangeEvent::Takeover);
        assert!(out.cc_active);
        // The smoother starts from the pedal position the driver left.
        assert!((out.throttle - 20.0).abs() < 1e-9);
    }

    #[test]
    fn engages_from_standstill_with_pedals_up() {
        let mut state = ControllerState::default();
        let out = controller_step(&mut state, &input(50.0, 0.0), &cfg(), DT);
        assert_eq!(out.event, ChangeEvent::Takeover);
        assert!(out.cc_active);
    }

    #[test]
    fn driver_brake_deactivates() {
        let mut state = active_state();
        let mut i = input(80.0, 80.0);
        i.driver_brake = 6.0;
        let out = output_split(40.0, &i, &cfg(), &mut state);
        assert!(!out.cc_active);
        assert_eq!((out.throttle, out.brake), (0.0, 6.0));
    }

    #[test]
    fn brakeless_controller_never_brakes() {
        let c = ControllerConfig {
            brakes_enabled: false,
            ..cfg()
        };
        let out = output_split(-30.0, &input(50.0, 80.0), &c, &mut active_state());
        assert_eq!((out.throttle, out.brake), (0.0, 0.0));
    }

    #[test]
    fn throttle_floor() {
        let c = ControllerConfig {
            throttle_floor_enabled: true,
            ..cfg()
        };
        let out = output_split(3.0, &input(50.0, 50.0), &c, &mut active_state());
        assert_eq!(out.throttle, 5.0);
        let out = output_split(0.0, &input(50.0, 50.0), &c, &mut active_state());
        assert_eq!(out.throttle, 0.0);
    }

    #[test]
    fn brake_cap_limits_brake() {
        let c = ControllerConfig {
            brake_cap: 30.0,
            ..cfg()
        };
        let out = output_split(-80.0, &input(50.0, 80.0), &c, &mut active_state());
        assert_eq!(out.brake, 30.0);
    }

    #[test]
    fn mutual_exclusion_lets_brake_win() {
        let mut i = input(50.0, 80.0);
        i.driver_throttle = 30.0;
        i.driver_brake = 20.0;
        let on = ControllerConfig {
            mutual_exclusion: true,
            ..cfg()
        };
        let out = output_split(0.0, &i, &on, &mut active_state());
        assert_eq!((out.throttle, out.brake), (0.0, 20.0));
        let off = ControllerConfig {
            mutual_exclusion: false,
            ..cfg()
        };
        let out = output_split(0.0, &i, &off, &mut active_state());
        assert_eq!((out.throttle, out.brake), (30.0, 20.0));
    }

    #[test]
    fn cubic_smoothing_boundaries() {
        let c = ControllerConfig {
            smoothing_mode: SmoothingMode::CubicSpline,
            smoothing_duration: 2.0,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_command = 10.0;
        arm_smoothing(&mut state, 5.0);
        assert_eq!(smooth_transition(&mut state, 50.0, 5.0, DT, &c), 10.0);
        assert_eq!(smooth_transition(&mut state, 50.0, 6.0, DT, &c), 30.0);
        assert_eq!(smooth_transition(&mut state, 50.0, 7.0, DT, &c), 50.0);
        assert!(!state.smoothing_active);
    }

    #[test]
    fn rate_limit_bounds_slew() {
        let c = ControllerConfig {
            smoothing_mode: SmoothingMode::RateLimit,
            slew_rate: 20.0,
            ..cfg()
        };
        let mut state = active_state();
        let out = smooth_transition(&mut state, 100.0, 0.0, DT, &c);
        assert!((out - 0.02).abs() < 1e-12);
    }

    #[test]
    fn settled_controller_without_feedforward_is_idle() {
        let c = ControllerConfig {
            kff: 0.0,
            grade_compensation: false,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_desired_velocity = 60.0;
        state.prev_error = 0.0;
        let out = controller_step(&mut state, &input(60.0, 60.0), &c, DT);
        assert_eq!(out.throttle, 0.0);
        assert_eq!(out.brake, 0.0);
    }

    #[test]
    fn quintic_profile_is_fixed_for_the_window() {
        let c = ControllerConfig {
            smoothing_mode: SmoothingMode::QuinticBrake,
            smoothing_duration: 2.0,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_command = 60.0;
        arm_smoothing(&mut state, 0.0);
        // Raw falls through zero mid-window; the blend must stay continuous.
        let mut prev = smooth_transition(&mut state, 10.0, 0.0, DT, &c);
        for k in 1..2000 {
            let t = k as f64 * DT;
            let raw = 10.0 - 10.0 * t;
            let out = smooth_transition(&mut state, raw, t, DT, &c);
            assert!((out - prev).abs() < 0.2, "jump {prev} -> {out} at t = {t}");
            prev = out;
        }
        assert_eq!(state.smoothing_brake, Some(false));
    }

    #[test]
    fn signed_command_bounded_by_brake_cap() {
        let c = ControllerConfig {
            smoothing_mode: SmoothingMode::None,
            brake_cap: 30.0,
            ..cfg()
        };
        let mut state = active_state();
        state.prev_desired_velocity = 20.0;
        let out = controller_step(&mut state, &input(20.0, 140.0), &c, DT);
        assert_eq!(out.brake, 30.0);
        assert_eq!(state.prev_command, -30.0);
    }
}
