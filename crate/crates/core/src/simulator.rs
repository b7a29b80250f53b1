//! Closed-loop harness: a kinematic bicycle, a planner task that publishes
//! plans with a configurable delay, and a tracker task that follows the most
//! recently published plan.
//!
//! The default mode runs both tasks on one simulated clock and is bit
//! reproducible. The realtime mode runs them on two threads that share only
//! the latest [`PlanHandle`].

use crate::controller::{ControlCommand, ControllerConfig, Tracker, TrackerOutput, TrackingErrors};
use crate::driving_model::DrivingModel;
use crate::geometry::{Pose2, Route, RouteSegment};
use crate::neural_trajectory::{fit, ContinuousTrajectory, FitOptions, FitSample};
use crate::potential_map::{GridSpec, PotentialConfig, PotentialMap};
use crate::scenario_data::{render_view, ScenarioTag, SpeedProfile, FRAME_DT, HORIZON, WINDOW};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub v: f64,
}

impl VehicleState {
    pub fn pose(&self) -> Pose2 {
        Pose2::new(self.x, self.y, self.heading)
    }
}

/// Explicit Euler step of the kinematic bicycle.
pub fn step_plant(s: &VehicleState, cmd: &ControlCommand, dt: f64, wheelbase: f64, a_max: f64) -> VehicleState {
    let (sn, cs) = s.heading.sin_cos();
    let a = a_max * (cmd.throttle - cmd.brake);
    VehicleState {
        x: s.x + s.v * cs * dt,
        y: s.y + s.v * sn * dt,
        heading: s.heading + s.v * cmd.steer.tan() / wheelbase * dt,
        v: (s.v + a * dt).max(0.0),
    }
}

/// An immutable published plan: the trajectory is expressed in the frame of
/// `anchor`, the vehicle pose when planning started at `t_start`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanHandle {
    pub id: u64,
    pub trajectory: ContinuousTrajectory,
    pub anchor: Pose2,
    pub t_start: f64,
    checksum: u64,
}

impl PlanHandle {
    pub fn new(id: u64, trajectory: ContinuousTrajectory, anchor: Pose2, t_start: f64) -> Self {
        let checksum = Self::digest(id, &trajectory, &anchor, t_start);
        Self {
            id,
            trajectory,
            anchor,
            t_start,
            checksum,
        }
    }

    fn digest(id: u64, traj: &ContinuousTrajectory, anchor: &Pose2, t_start: f64) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ id;
        let values = traj
            .freq
            .iter()
            .chain(&traj.phase)
            .chain(&traj.weight_x)
            .chain(&traj.weight_y)
            .chain(&traj.bias)
            .chain([&anchor.x, &anchor.y, &anchor.heading, &t_start]);
        for v in values {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }

    /// True if the contents still match the checksum taken at construction.
    pub fn is_intact(&self) -> bool {
        self.checksum == Self::digest(self.id, &self.trajectory, &self.anchor, self.t_start)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    #[default]
    Simulated,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub control_dt: f64,
    pub plan_period: f64,
    pub latency: f64,
    pub controller: ControllerConfig,
    pub goal_radius: f64,
    /// Center distance to an obstacle that counts as a collision.
    pub collision_distance: f64,
    /// Speed below which the vehicle counts as stopped.
    pub stop_speed: f64,
    /// Seeded uniform perturbation of the start pose: lateral meters.
    pub lateral_jitter: f64,
    /// Seeded uniform perturbation of the start pose: heading radians.
    pub heading_jitter: f64,
    pub mode: SimMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.02,
            plan_period: 0.4,
            latency: 0.0,
            controller: ControllerConfig::default(),
            goal_radius: 2.0,
            collision_distance: 1.5,
            stop_speed: 0.3,
            lateral_jitter: 0.3,
            heading_jitter: 0.03,
            mode: SimMode::Simulated,
        }
    }
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.control_dt > 0.0 && self.plan_period > 0.0) {
            return Err(Error::InvalidConfig("rates must be positive".into()));
        }
        if !(self.latency >= 0.0) {
            return Err(Error::InvalidConfig("latency must be non-negative".into()));
        }
        Ok(())
    }

    fn ticks(&self, seconds: f64) -> u64 {
        (seconds / self.control_dt - 1e-9).ceil().max(0.0) as u64
    }
}

/// A closed-loop task: follow `route` at `speed` to the point at arclength
/// `goal_s`, avoiding `obstacles`; if `stop_at_goal` the vehicle must come
/// to rest there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub tag: ScenarioTag,
    pub route: Route,
    pub speed: f64,
    pub goal_s: f64,
    #[serde(default)]
    pub stop_at_goal: bool,
    #[serde(default)]
    pub obstacles: Vec<[f64; 2]>,
    /// Initial lateral offset from the route start, positive left.
    #[serde(default)]
    pub initial_offset: f64,
    /// Defaults to `goal_s / speed + 10` seconds.
    #[serde(default)]
    pub budget: Option<f64>,
}

impl Scenario {
    pub fn goal(&self) -> [f64; 2] {
        let p = self.route.pose_at(self.goal_s);
        [p.x, p.y]
    }

    pub fn budget(&self) -> f64 {
        self.budget.unwrap_or(self.goal_s / self.speed.max(0.5) + 10.0)
    }

    /// Vehicle state at t = 0, with the seeded start-pose perturbation.
    pub fn initial_state(&self, cfg: &SimConfig, seed: u64) -> VehicleState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jitter = |span: f64| if span > 0.0 { rng.random_range(-span..=span) } else { 0.0 };
        let lateral = self.initial_offset + jitter(cfg.lateral_jitter);
        let dh = jitter(cfg.heading_jitter);
        let start = self.route.pose_at(0.0);
        let p = start.to_world([0.0, lateral]);
        VehicleState {
            x: p[0],
            y: p[1],
            heading: start.heading + dh,
            v: self.speed,
        }
    }
}

/// The fixed 30-scenario suite: ten straight roads, ten constant-curvature
/// turns, and ten stops behind an obstacle.
pub fn standard_suite() -> Vec<Scenario> {
    let speeds = [3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 7.5];
    let mut out = Vec::with_capacity(30);
    for (i, &v) in speeds.iter().enumerate() {
        out.push(Scenario {
            name: format!("straight_{i:02}"),
            tag: ScenarioTag::Straight,
            route: Route::arc(60.0, 0.0),
            speed: v,
            goal_s: 40.0,
            stop_at_goal: false,
            obstacles: vec![],
            initial_offset: 0.0,
            budget: None,
        });
    }
    for (i, &v) in speeds.iter().enumerate() {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let curvature = sign * (0.03 + 0.007 * i as f64);
        // A quarter turn, capped so the goal stays well inside one lap.
        let length = (std::f64::consts::FRAC_PI_2 / curvature.abs()).min(45.0);
        out.push(Scenario {
            name: format!("turn_{i:02}"),
            tag: ScenarioTag::Turn,
            route: Route::new(Pose2::IDENTITY, vec![RouteSegment { length: length + 20.0, curvature }]),
            speed: v,
            goal_s: length,
            stop_at_goal: false,
            obstacles: vec![],
            initial_offset: 0.0,
            budget: None,
        });
    }
    for (i, &v) in speeds.iter().enumerate() {
        let obstacle_s = 20.0 + 1.5 * i as f64;
        out.push(Scenario {
            name: format!("stop_{i:02}"),
            tag: ScenarioTag::Stop,
            route: Route::arc(80.0, 0.0),
            speed: v,
            goal_s: obstacle_s - 2.0,
            stop_at_goal: true,
            obstacles: vec![[obstacle_s, 0.0]],
            initial_offset: 0.0,
            budget: None,
        });
    }
    out
}

/// Everything a planner may look at when a plan is requested.
pub struct PlanRequest<'a> {
    pub scenario: &'a Scenario,
    /// Vehicle pose at the snapshot; the plan is expressed in this frame.
    pub pose: Pose2,
    pub speed: f64,
    /// Arclength of the pose's projection onto the route.
    pub route_s: f64,
    /// Potential maps, oldest first, rendered from past poses.
    pub window: &'a [PotentialMap],
}

pub trait Planner: Send + Sync {
    fn plan(&self, req: &PlanRequest) -> Result<ContinuousTrajectory>;

    /// Whether [`PlanRequest::window`] must be rendered.
    fn needs_maps(&self) -> bool {
        true
    }
}

/// Runs the trained network on the rendered window.
pub struct ModelPlanner {
    pub model: DrivingModel,
}

impl Planner for ModelPlanner {
    fn plan(&self, req: &PlanRequest) -> Result<ContinuousTrajectory> {
        self.model.plan(req.window, req.speed)
    }
}

/// Follows the route with a closed-form speed profile, the way the expert
/// demonstrations are generated, and fits it with the sinusoidal basis.
#[derive(Debug, Clone)]
pub struct OraclePlanner {
    /// Deceleration used for planned stops.
    pub comfort_decel: f64,
    /// Jerk bound for speed changes.
    pub jerk: f64,
    pub fit: FitOptions,
}

impl Default for OraclePlanner {
    fn default() -> Self {
        Self {
            comfort_decel: 1.5,
            jerk: 1.0,
            fit: FitOptions::default(),
        }
    }
}

impl OraclePlanner {
    /// `(s, v, a)` relative to the snapshot.
    fn profile(&self, req: &PlanRequest) -> impl Fn(f64) -> (f64, f64, f64) {
        let v = req.speed;
        let sc = req.scenario;
        enum P {
            Change(SpeedProfile),
            CruiseStop { v: f64, cruise: f64, decel: f64 },
            Hold,
        }
        let p = if sc.stop_at_goal {
            let d = sc.goal_s - req.route_s;
            if d <= 0.05 {
                P::Hold
            } else {
                let v = v.max((2.0 * self.comfort_decel * d).sqrt().min(2.0));
                let decel = (v * v / (2.0 * d)).max(self.comfort_decel);
                let cruise = (d - v * v / (2.0 * decel)).max(0.0);
                P::CruiseStop { v, cruise, decel }
            }
        } else {
            P::Change(SpeedProfile::JerkLimited {
                v0: v,
                v1: sc.speed,
                jerk: self.jerk,
            })
        };
        move |t: f64| match &p {
            P::Change(prof) => prof.at(t),
            P::Hold => (0.0, 0.0, 0.0),
            P::CruiseStop { v, cruise, decel } => {
                let t_cruise = if *v > 0.0 { cruise / v } else { 0.0 };
                if t < t_cruise {
                    (v * t, *v, 0.0)
                } else {
                    let (s, sv, a) = SpeedProfile::ConstantDecel { v0: *v, decel: *decel }.at(t - t_cruise);
                    (cruise + s, sv, a)
                }
            }
        }
    }
}

impl Planner for OraclePlanner {
    fn plan(&self, req: &PlanRequest) -> Result<ContinuousTrajectory> {
        let profile = self.profile(req);
        let route = &req.scenario.route;
        let samples: Vec<FitSample> = (0..=60)
            .map(|k| {
                let t = k as f64 * HORIZON / 60.0;
                let (s, v, a) = profile(t);
                let p = route.pose_at(req.route_s + s);
                let kappa = route.curvature_at(req.route_s + s);
                let (sn, cs) = p.heading.sin_cos();
                let an = v * v * kappa;
                let vel = [v * cs, v * sn];
                let acc = [a * cs - an * sn, a * sn + an * cs];
                FitSample {
                    t,
                    position: req.pose.to_local([p.x, p.y]),
                    velocity: Some(req.pose.rotate_to_local(vel)),
                    acceleration: Some(req.pose.rotate_to_local(acc)),
                }
            })
            .collect();
        fit(&samples, HORIZON, &self.fit)
    }

    fn needs_maps(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub state: VehicleState,
    pub command: ControlCommand,
    pub errors: TrackingErrors,
    /// Offset from the route, positive left.
    pub route_offset: f64,
    /// Id of the plan being tracked, if any.
    pub plan_id: Option<u64>,
    /// Query time into the tracked plan.
    pub plan_age: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Success,
    Collision,
    Timeout,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub scenario: String,
    pub seed: u64,
    pub latency: f64,
    pub kind: OutcomeKind,
    pub time: f64,
    pub reason: String,
    pub max_route_offset: f64,
    pub plans: u64,
}

impl Outcome {
    pub fn success(&self) -> bool {
        self.kind == OutcomeKind::Success
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimTrace {
    pub rows: Vec<TraceRow>,
}

impl SimTrace {
    pub const HEADER: &'static str = "t,x,y,heading,v,throttle,brake,steer,e_lateral,e_heading,e_along,e_speed,route_offset,plan_id,plan_age";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let plan = r.plan_id.map(|i| i.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.t,
                r.state.x,
                r.state.y,
                r.state.heading,
                r.state.v,
                r.command.throttle,
                r.command.brake,
                r.command.steer,
                r.errors.lateral,
                r.errors.heading,
                r.errors.along_track,
                r.errors.speed,
                r.route_offset,
                plan,
                r.plan_age
            ));
        }
        out
    }
}

/// Past poses at control-tick resolution, used to render older frames.
struct PoseHistory {
    poses: Vec<Pose2>,
    dt: f64,
}

impl PoseHistory {
    /// Pose `back` seconds before tick `tick`. Before t = 0 the start pose is
    /// rolled back along its heading at the initial speed.
    fn at(&self, tick: usize, back: f64, v0: f64) -> Pose2 {
        let steps = (back / self.dt).round() as usize;
        if steps <= tick {
            return self.poses[tick - steps];
        }
        let first = self.poses[0];
        let extra = (steps - tick) as f64 * self.dt * v0;
        let (s, c) = first.heading.sin_cos();
        Pose2::new(first.x - c * extra, first.y - s * extra, first.heading)
    }
}

/// Shared view of the world for rendering windows.
struct World<'a> {
    scenario: &'a Scenario,
    grid: GridSpec,
    potential: PotentialConfig,
}

impl World<'_> {
    fn window(&self, history: &PoseHistory, tick: usize, hint: f64) -> Result<Vec<PotentialMap>> {
        let v0 = self.scenario.speed;
        let mut maps = Vec::with_capacity(WINDOW);
        for j in (0..WINDOW).rev() {
            let pose = history.at(tick, FRAME_DT * j as f64, v0);
            let s = self.project(&pose, hint - v0 * FRAME_DT * j as f64);
            let (map, _) =
                render_view(&self.scenario.route, s, &pose, &self.scenario.obstacles, &self.grid, &self.potential)?;
            maps.push(map);
        }
        Ok(maps)
    }

    fn project(&self, pose: &Pose2, hint: f64) -> f64 {
        self.scenario.route.project_within([pose.x, pose.y], hint - 6.0, hint + 6.0)
    }
}

fn plan_once(
    planner: &dyn Planner,
    world: &World,
    history: &PoseHistory,
    tick: usize,
    state: &VehicleState,
    route_s: f64,
) -> Result<ContinuousTrajectory> {
    let window = if planner.needs_maps() {
        world.window(history, tick, route_s)?
    } else {
        vec![]
    };
    planner.plan(&PlanRequest {
        scenario: world.scenario,
        pose: state.pose(),
        speed: state.v,
        route_s,
        window: &window,
    })
}

fn tracker_step(tracker: &mut Tracker, handle: &PlanHandle, t: f64, state: &VehicleState) -> TrackerOutput {
    let local = handle.anchor.relative(&state.pose());
    tracker.update(&handle.trajectory, t - handle.t_start, &local, state.v)
}

/// Outcome judgment shared by both modes.
struct Judge<'a> {
    scenario: &'a Scenario,
    cfg: &'a SimConfig,
    goal: [f64; 2],
}

impl Judge<'_> {
    fn check(&self, s: &VehicleState) -> Option<(OutcomeKind, String)> {
        for o in &self.scenario.obstacles {
            let d = (s.x - o[0]).hypot(s.y - o[1]);
            if d < self.cfg.collision_distance {
                return Some((OutcomeKind::Collision, format!("within {d:.2} m of obstacle")));
            }
        }
        let d = (s.x - self.goal[0]).hypot(s.y - self.goal[1]);
        if d <= self.cfg.goal_radius && (!self.scenario.stop_at_goal || s.v < self.cfg.stop_speed) {
            return Some((OutcomeKind::Success, format!("reached goal ({d:.2} m)")));
        }
        None
    }
}

/// Runs one closed-loop episode in simulated time.
pub fn run_episode(planner: &dyn Planner, scenario: &Scenario, cfg: &SimConfig, seed: u64) -> Result<(SimTrace, Outcome)> {
    cfg.validate()?;
    if cfg.mode == SimMode::Realtime {
        return run_realtime(planner, scenario, cfg, seed);
    }
    let world = World {
        scenario,
        grid: GridSpec::default(),
        potential: PotentialConfig::default(),
    };
    let judge = Judge {
        scenario,
        cfg,
        goal: scenario.goal(),
    };
    let mut state = scenario.initial_state(cfg, seed);
    let mut history = PoseHistory {
        poses: vec![state.pose()],
        dt: cfg.control_dt,
    };
    let mut tracker = Tracker::new(cfg.controller);
    tracker.set_heading_memory(0.0);
    let plan_every = cfg.ticks(cfg.plan_period).max(1);
    let budget_ticks = cfg.ticks(scenario.budget());
    let mut pending: Vec<(f64, PlanHandle)> = vec![];
    let mut active: Option<PlanHandle> = None;
    let mut next_id = 0u64;
    let mut route_s = world.project(&state.pose(), 0.0);
    let mut trace = SimTrace::default();
    let mut max_offset: f64 = 0.0;
    let outcome = |kind, tick: u64, reason: String, max_offset: f64, plans: u64| Outcome {
        scenario: scenario.name.clone(),
        seed,
        latency: cfg.latency,
        kind,
        time: tick as f64 * cfg.control_dt,
        reason,
        max_route_offset: max_offset,
        plans,
    };

    let mut tick: u64 = 0;
    loop {
        if tick >= budget_ticks {
            let o = outcome(OutcomeKind::Timeout, tick, "time budget exhausted".into(), max_offset, next_id);
            return Ok((trace, o));
        }
        let t = tick as f64 * cfg.control_dt;
        if tick % plan_every == 0 {
            match plan_once(planner, &world, &history, tick as usize, &state, route_s) {
                Ok(traj) => {
                    pending.push((t + cfg.latency, PlanHandle::new(next_id, traj, state.pose(), t)));
                    next_id += 1;
                }
                Err(e) => {
                    let o = outcome(OutcomeKind::Failed, tick, format!("planner error: {e}"), max_offset, next_id);
                    return Ok((trace, o));
                }
            }
        }
        // Publish every plan whose delay has elapsed, newest last.
        let due = t + 1e-9;
        while let Some(pos) = pending.iter().position(|(at, _)| *at <= due) {
            let (_, h) = pending.remove(pos);
            if active.as_ref().is_none_or(|a| a.id < h.id) {
                tracker.set_heading_memory(h.anchor.relative(&state.pose()).heading);
                active = Some(h);
            }
        }
        let (command, errors, plan_id, plan_age) = match &active {
            Some(h) => {
                let out = tracker_step(&mut tracker, h, t, &state);
                (out.command, out.errors, Some(h.id), t - h.t_start)
            }
            None => (ControlCommand::default(), TrackingErrors::default(), None, 0.0),
        };
        route_s = world.project(&state.pose(), route_s);
        let offset = scenario.route.lateral_offset([state.x, state.y], route_s);
        max_offset = max_offset.max(offset.abs());
        trace.rows.push(TraceRow {
            t,
            state,
            command,
            errors,
            route_offset: offset,
            plan_id,
            plan_age,
        });
        state = step_plant(&state, &command, cfg.control_dt, cfg.controller.wheelbase, cfg.controller.a_max);
        history.poses.push(state.pose());
        tick += 1;
        if let Some((kind, reason)) = judge.check(&state) {
            return Ok((trace, outcome(kind, tick, reason, max_offset, next_id)));
        }
    }
}

/// Statistics of a realtime run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RealtimeStats {
    pub plans_published: u64,
    pub tracker_reads: u64,
    /// Reads whose handle failed its checksum; always zero when publication
    /// is an atomic swap of an immutable value.
    pub torn_reads: u64,
}

/// Two-thread run on the wall clock. Not reproducible; exists to exercise
/// the plan exchange.
pub fn run_realtime(
    planner: &dyn Planner,
    scenario: &Scenario,
    cfg: &SimConfig,
    seed: u64,
) -> Result<(SimTrace, Outcome)> {
    Ok(run_realtime_with_stats(planner, scenario, cfg, seed)?.0)
}

pub fn run_realtime_with_stats(
    planner: &dyn Planner,
    scenario: &Scenario,
    cfg: &SimConfig,
    seed: u64,
) -> Result<((SimTrace, Outcome), RealtimeStats)> {
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::time::{Duration, Instant};

    cfg.validate()?;
    let world = World {
        scenario,
        grid: GridSpec::default(),
        potential: PotentialConfig::default(),
    };
    let judge = Judge {
        scenario,
        cfg,
        goal: scenario.goal(),
    };
    let init = scenario.initial_state(cfg, seed);
    let vehicle = Mutex::new((init, 0.0f64, vec![init.pose()]));
    let latest: Mutex<Option<Arc<PlanHandle>>> = Mutex::new(None);
    let done = AtomicBool::new(false);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let clock = Instant::now();
    let now = || clock.elapsed().as_secs_f64();
    let mut stats = RealtimeStats::default();
    let budget = scenario.budget();

    let result = std::thread::scope(|scope| {
        let planner_thread = scope.spawn(|| {
            let mut published = 0u64;
            let mut route_s = 0.0;
            while !done.load(Ordering::Acquire) {
                let t_s = now();
                let (state, poses) = {
                    let g = vehicle.lock().expect("vehicle lock");
                    (g.0, g.2.clone())
                };
                route_s = world.project(&state.pose(), route_s);
                let history = PoseHistory {
                    poses,
                    dt: cfg.control_dt,
                };
                let tick = history.poses.len() - 1;
                match plan_once(planner, &world, &history, tick, &state, route_s) {
                    Ok(traj) => {
                        let handle = Arc::new(PlanHandle::new(published, traj, state.pose(), t_s));
                        let wait = t_s + cfg.latency - now();
                        if wait > 0.0 {
                            std::thread::sleep(Duration::from_secs_f64(wait));
                        }
                        *latest.lock().expect("plan lock") = Some(handle);
                        published += 1;
                    }
                    Err(e) => {
                        *failure.lock().expect("failure lock") = Some(e.to_string());
                        done.store(true, Ordering::Release);
                    }
                }
                let next = t_s + cfg.plan_period - now();
                if next > 0.0 {
                    std::thread::sleep(Duration::from_secs_f64(next));
                }
            }
            published
        });

        let mut tracker = Tracker::new(cfg.controller);
        let mut trace = SimTrace::default();
        let mut max_offset: f64 = 0.0;
        let mut route_s = 0.0;
        let mut last_id = None;
        let mut verdict = None;
        while verdict.is_none() {
            let t = now();
            if t >= budget {
                verdict = Some((OutcomeKind::Timeout, "time budget exhausted".to_string(), t));
                break;
            }
            if let Some(msg) = failure.lock().expect("failure lock").clone() {
                verdict = Some((OutcomeKind::Failed, format!("planner error: {msg}"), t));
                break;
            }
            let handle = latest.lock().expect("plan lock").clone();
            let state = vehicle.lock().expect("vehicle lock").0;
            let (command, errors, plan_id, plan_age) = match &handle {
                Some(h) => {
                    stats.tracker_reads += 1;
                    if !h.is_intact() {
                        stats.torn_reads += 1;
                    }
                    if last_id != Some(h.id) {
                        tracker.set_heading_memory(h.anchor.relative(&state.pose()).heading);
                        last_id = Some(h.id);
                    }
                    let out = tracker_step(&mut tracker, h, t, &state);
                    (out.command, out.errors, Some(h.id), t - h.t_start)
                }
                None => (ControlCommand::default(), TrackingErrors::default(), None, 0.0),
            };
            route_s = world.project(&state.pose(), route_s);
            let offset = scenario.route.lateral_offset([state.x, state.y], route_s);
            max_offset = max_offset.max(offset.abs());
            trace.rows.push(TraceRow {
                t,
                state,
                command,
                errors,
                route_offset: offset,
                plan_id,
                plan_age,
            });
            let next = step_plant(&state, &command, cfg.control_dt, cfg.controller.wheelbase, cfg.controller.a_max);
            {
                let mut g = vehicle.lock().expect("vehicle lock");
                g.0 = next;
                g.1 = t;
                g.2.push(next.pose());
            }
            if let Some((kind, reason)) = judge.check(&next) {
                verdict = Some((kind, reason, t));
                break;
            }
            let sleep = t + cfg.control_dt - now();
            if sleep > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(sleep));
            }
        }
        done.store(true, Ordering::Release);
        let published = planner_thread.join().expect("planner thread panicked");
        (trace, verdict.expect("loop exits with a verdict"), max_offset, published)
    });
    let (trace, (kind, reason, time), max_offset, published) = result;
    stats.plans_published = published;
    let outcome = Outcome {
        scenario: scenario.name.clone(),
        seed,
        latency: cfg.latency,
        kind,
        time,
        reason,
        max_route_offset: max_offset,
        plans: published,
    };
    Ok(((trace, outcome), stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub latency_ms: f64,
    pub runs: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub failures: usize,
    pub success_rate: f64,
}

/// Success rate per latency over every scenario and seed, in the order the
/// latencies are given.
pub fn sweep_latency(
    planner: &dyn Planner,
    scenarios: &[Scenario],
    latencies: &[f64],
    seeds: &[u64],
    base: &SimConfig,
) -> Result<(Vec<LatencyRow>, Vec<Outcome>)> {
    if scenarios.is_empty() || latencies.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs scenarios, latencies, and seeds".into()));
    }
    let mut rows = Vec::with_capacity(latencies.len());
    let mut outcomes = Vec::new();
    for &latency in latencies {
        let cfg = SimConfig {
            latency,
            mode: SimMode::Simulated,
            ..*base
        };
        let mut row = LatencyRow {
            latency_ms: latency * 1000.0,
            runs: 0,
            successes: 0,
            collisions: 0,
            timeouts: 0,
            failures: 0,
            success_rate: 0.0,
        };
        for sc in scenarios {
            for &seed in seeds {
                let (_, o) = run_episode(planner, sc, &cfg, seed)?;
                row.runs += 1;
                match o.kind {
                    OutcomeKind::Success => row.successes += 1,
                    OutcomeKind::Collision => row.collisions += 1,
                    OutcomeKind::Timeout => row.timeouts += 1,
                    OutcomeKind::Failed => row.failures += 1,
                }
                outcomes.push(o);
            }
        }
        row.success_rate = row.successes as f64 / row.runs as f64;
        rows.push(row);
    }
    Ok((rows, outcomes))
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("latency_ms,runs,successes,collisions,timeouts,failures,success_rate\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.latency_ms, r.runs, r.successes, r.collisions, r.timeouts, r.failures, r.success_rate
        ));
    }
    out
}
