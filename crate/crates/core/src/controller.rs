//! Trajectory tracking: longitudinal feedback on speed and along-track
//! position, and rear-wheel feedback steering, both driven by analytic
//! reference quantities of a [`ContinuousTrajectory`].

use crate::geometry::{wrap_angle, Pose2};
use crate::neural_trajectory::{curvature_of, ContinuousTrajectory, V_MIN};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    pub k_d: f64,
    pub k_v: f64,
    pub k_theta: f64,
    pub k_e: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            k_d: 0.5,
            k_v: 1.0,
            k_theta: 1.0,
            k_e: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub gains: ControllerGains,
    pub wheelbase: f64,
    pub max_steer: f64,
    /// Acceleration at full throttle or full brake.
    pub a_max: f64,
    /// Lower bound on `|1 − κ_r e|` in the steering law.
    pub curvature_guard: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            wheelbase: 2.6,
            max_steer: 0.6,
            a_max: 3.0,
            curvature_guard: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub position: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    /// Tangential acceleration.
    pub accel: f64,
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrackingErrors {
    /// Lateral offset of the vehicle from the reference, positive left.
    pub lateral: f64,
    pub heading: f64,
    /// How far the vehicle lags behind the reference along its heading.
    pub along_track: f64,
    /// Reference speed minus vehicle speed.
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub throttle: f64,
    pub brake: f64,
    pub steer: f64,
}

/// Reference at `t` (clamped to `[0, T]`). Below [`V_MIN`] the heading is
/// `previous_heading` and the curvature is zero.
pub fn reference_at(traj: &ContinuousTrajectory, t: f64, previous_heading: f64) -> ReferencePoint {
    let t = t.clamp(0.0, traj.horizon);
    let s = traj.eval(t);
    let speed = s.speed();
    let moving = speed >= V_MIN;
    let heading = if moving {
        wrap_angle(s.velocity[1].atan2(s.velocity[0]))
    } else {
        wrap_angle(previous_heading)
    };
    let accel = (s.velocity[0] * s.acceleration[0] + s.velocity[1] * s.acceleration[1]) / speed.max(V_MIN);
    let curvature = if moving { curvature_of(&s).unwrap_or(0.0) } else { 0.0 };
    ReferencePoint {
        position: s.position,
        heading,
        speed,
        accel,
        curvature,
    }
}

pub fn compute_errors(pose: &Pose2, speed: f64, r: &ReferencePoint) -> TrackingErrors {
    let frame = Pose2::new(r.position[0], r.position[1], r.heading);
    let d = frame.to_local([pose.x, pose.y]);
    TrackingErrors {
        lateral: d[1],
        heading: wrap_angle(pose.heading - r.heading),
        along_track: -d[0],
        speed: r.speed - speed,
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        // Two-term series; exact to double precision in this range.
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Commanded yaw rate of the rear-wheel feedback law.
pub fn yaw_rate_command(err: &TrackingErrors, r: &ReferencePoint, cfg: &ControllerConfig) -> f64 {
    let g = &cfg.gains;
    let denom = 1.0 - r.curvature * err.lateral;
    let denom = if denom < 0.0 {
        -denom.abs().max(cfg.curvature_guard)
    } else {
        denom.max(cfg.curvature_guard)
    };
    r.speed * r.curvature * err.heading.cos() / denom
        - g.k_theta * r.speed.abs() * err.heading
        - g.k_e * r.speed * sinc(err.heading) * err.lateral
}

/// Steering angle for the commanded yaw rate at vehicle speed `speed`.
pub fn lateral_control(err: &TrackingErrors, r: &ReferencePoint, speed: f64, cfg: &ControllerConfig) -> f64 {
    let omega = yaw_rate_command(err, r, cfg);
    (omega * cfg.wheelbase / speed.max(V_MIN)).atan().clamp(-cfg.max_steer, cfg.max_steer)
}

/// Commanded acceleration split into mutually exclusive throttle and brake.
pub fn longitudinal_control(err: &TrackingErrors, r: &ReferencePoint, cfg: &ControllerConfig) -> (f64, f64) {
    let g = &cfg.gains;
    let a_c = g.k_d * err.along_track + g.k_v * err.speed + r.accel;
    if a_c > 0.0 {
        ((a_c / cfg.a_max).min(1.0), 0.0)
    } else if a_c < 0.0 {
        (0.0, (-a_c / cfg.a_max).min(1.0))
    } else {
        (0.0, 0.0)
    }
}

/// Per-thread tracker holding the heading memory used at standstill.
#[derive(Debug, Clone)]
pub struct Tracker {
    pub config: ControllerConfig,
    last_heading: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerOutput {
    pub command: ControlCommand,
    pub errors: TrackingErrors,
    pub reference: ReferencePoint,
}

impl Tracker {
    pub fn new(config: ControllerConfig) -> Self {
        Self {
            config,
            last_heading: 0.0,
        }
    }

    /// Resets the heading memory, e.g. when a new plan arrives.
    pub fn set_heading_memory(&mut self, heading: f64) {
        self.last_heading = heading;
    }

    /// One control tick: `pose` and `speed` are in the trajectory's frame.
    pub fn update(&mut self, traj: &ContinuousTrajectory, t: f64, pose: &Pose2, speed: f64) -> TrackerOutput {
        let reference = reference_at(traj, t, self.last_heading);
        self.last_heading = reference.heading;
        let errors = compute_errors(pose, speed, &reference);
        let steer = lateral_control(&errors, &reference, speed, &self.config);
        let (throttle, brake) = longitudinal_control(&errors, &reference, &self.config);
        TrackerOutput {
            command: ControlCommand { throttle, brake, steer },
            errors,
            reference,
        }
    }
}
