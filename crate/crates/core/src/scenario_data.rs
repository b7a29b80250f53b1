//! Synthetic expert demonstrations, causal relabeling, and the episode file
//! format.
//!
//! An episode is one decision instant: a window of potential maps ending at
//! `t0`, the speed at `t0`, and the expert's next `T` seconds sampled at
//! 10 Hz in the vehicle frame at `t0`.

use crate::geometry::{norm, Pose2, Route};
use crate::io::{sha256_hex, write_atomic};
use crate::potential_map::{
    build_goal_potential, build_obstacle_potential, compose, GridSpec, IntentionPath, PotentialConfig,
    PotentialMap,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const HORIZON: f64 = 3.0;
pub const LABEL_DT: f64 = 0.1;
pub const LABEL_LEN: usize = 31;
/// Number of maps in a window (`K + 1`).
pub const WINDOW: usize = 4;
pub const FRAME_DT: f64 = 0.1;
/// 30 km/h.
pub const SPEED_LIMIT: f64 = 30.0 / 3.6;
pub const MAX_CURVATURE: f64 = 0.2;
/// Length of the intention path drawn into each map.
pub const INTENTION_LENGTH: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
    pub speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioTag {
    Straight,
    Turn,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub id: String,
    pub scenario_tag: ScenarioTag,
    /// Speed at the decision instant.
    pub v0: f64,
    /// Potential maps, oldest first; the last one is the current frame.
    pub map_window: Vec<PotentialMap>,
    /// Occupied cells of the current frame.
    pub obstacle_cells: Vec<(usize, usize)>,
    pub label: Vec<TrajectorySample>,
}

impl Episode {
    pub fn newest_map(&self) -> &PotentialMap {
        self.map_window.last().expect("window is non-empty")
    }

    pub fn horizon(&self) -> f64 {
        self.label.last().map(|s| s.t).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverFamily {
    Straight,
    Turn,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManeuverSpec {
    pub family: ManeuverFamily,
    /// Path curvature, 1/m (positive turns left).
    pub curvature: f64,
    pub v0: f64,
    pub target_speed: f64,
    /// m/s³ bound on the speed change profile.
    pub jerk_limit: f64,
    /// Obstacle position in the route frame (stop family).
    pub obstacle: Option<[f64; 2]>,
    /// Start displacement from the route, meters, positive left.
    #[serde(default)]
    pub lateral_offset: f64,
    /// Start heading relative to the route tangent, radians.
    #[serde(default)]
    pub heading_offset: f64,
}

/// Largest accepted start displacement from the route.
pub const MAX_LATERAL_OFFSET: f64 = 3.0;
/// Largest accepted start heading error.
pub const MAX_HEADING_OFFSET: f64 = 0.5;

impl ManeuverSpec {
    pub fn straight(v0: f64) -> Self {
        Self {
            family: ManeuverFamily::Straight,
            curvature: 0.0,
            v0,
            target_speed: v0,
            jerk_limit: 1.0,
            obstacle: None,
            lateral_offset: 0.0,
            heading_offset: 0.0,
        }
    }

    pub fn turn(curvature: f64, v0: f64) -> Self {
        Self {
            family: ManeuverFamily::Turn,
            curvature,
            ..Self::straight(v0)
        }
    }

    pub fn stop(v0: f64, obstacle_distance: f64) -> Self {
        Self {
            family: ManeuverFamily::Stop,
            target_speed: 0.0,
            obstacle: Some([obstacle_distance, 0.0]),
            ..Self::straight(v0)
        }
    }

    pub fn tag(&self) -> ScenarioTag {
        match self.family {
            ManeuverFamily::Straight => ScenarioTag::Straight,
            ManeuverFamily::Turn => ScenarioTag::Turn,
            ManeuverFamily::Stop => ScenarioTag::Stop,
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Infeasible(msg));
        if !(self.curvature.abs() <= MAX_CURVATURE) {
            return bad(format!("|curvature| {} exceeds {MAX_CURVATURE}", self.curvature));
        }
        if !(self.lateral_offset.abs() <= MAX_LATERAL_OFFSET) {
            return bad(format!("|lateral_offset| {} exceeds {MAX_LATERAL_OFFSET}", self.lateral_offset));
        }
        if !(self.heading_offset.abs() <= MAX_HEADING_OFFSET) {
            return bad(format!("|heading_offset| {} exceeds {MAX_HEADING_OFFSET}", self.heading_offset));
        }
        for (name, v) in [("v0", self.v0), ("target_speed", self.target_speed)] {
            if !(0.0..=SPEED_LIMIT + 1e-9).contains(&v) {
                return bad(format!("{name} {v} outside [0, {SPEED_LIMIT:.2}] m/s"));
            }
        }
        match self.family {
            ManeuverFamily::Straight if self.curvature != 0.0 => bad("straight maneuver with curvature".into()),
            ManeuverFamily::Stop if self.obstacle.is_none() => bad("stop maneuver without obstacle".into()),
            _ if self.target_speed != self.v0 && self.family != ManeuverFamily::Stop && !(self.jerk_limit > 0.0) => {
                bad("speed change with non-positive jerk limit".into())
            }
            _ => Ok(()),
        }
    }
}

/// Closed-form longitudinal profile: arclength, speed, tangential acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpeedProfile {
    /// Symmetric jerk-limited S-curve from `v0` to `v1` (no acceleration cap).
    JerkLimited { v0: f64, v1: f64, jerk: f64 },
    /// Constant deceleration until standstill.
    ConstantDecel { v0: f64, decel: f64 },
}

impl SpeedProfile {
    /// `(s, v, a)` at time `t ≥ 0`.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        match *self {
            SpeedProfile::JerkLimited { v0, v1, jerk } => {
                let dv = v1 - v0;
                if dv == 0.0 || jerk <= 0.0 {
                    return (v0 * t, v0, 0.0);
                }
                let sg = dv.signum();
                let t1 = (dv.abs() / jerk).sqrt();
                if t <= t1 {
                    return (
                        v0 * t + sg * jerk * t.powi(3) / 6.0,
                        v0 + sg * jerk * t * t / 2.0,
                        sg * jerk * t,
                    );
                }
                let s1 = v0 * t1 + sg * jerk * t1.powi(3) / 6.0;
                let vm = v0 + sg * jerk * t1 * t1 / 2.0;
                if t <= 2.0 * t1 {
                    let u = t - t1;
                    return (
                        s1 + vm * u + sg * jerk * (t1 * u * u / 2.0 - u.powi(3) / 6.0),
                        vm + sg * jerk * (t1 * u - u * u / 2.0),
                        sg * jerk * (t1 - u),
                    );
                }
                let s2 = s1 + vm * t1 + sg * jerk * (t1.powi(3) / 2.0 - t1.powi(3) / 6.0);
                (s2 + v1 * (t - 2.0 * t1), v1, 0.0)
            }
            SpeedProfile::ConstantDecel { v0, decel } => {
                if decel <= 0.0 {
                    return (v0 * t, v0, 0.0);
                }
                let t_stop = v0 / decel;
                if t < t_stop {
                    (v0 * t - decel * t * t / 2.0, v0 - decel * t, -decel)
                } else {
                    (v0 * v0 / (2.0 * decel), 0.0, 0.0)
                }
            }
        }
    }
}

/// Lateral displacement from the route as a function of route arclength:
/// a cubic that takes the start offset and slope to zero over `length`
/// meters, extended linearly behind the start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub offset: f64,
    pub slope: f64,
    pub length: f64,
}

impl Recovery {
    /// `(d, d', d'')` at arclength `s`.
    pub fn at(&self, s: f64) -> (f64, f64, f64) {
        let (d0, m0, l) = (self.offset, self.slope, self.length);
        if s < 0.0 {
            return (d0 + m0 * s, m0, 0.0);
        }
        if s >= l {
            return (0.0, 0.0, 0.0);
        }
        let u = s / l;
        let (u2, u3) = (u * u, u * u * u);
        let d = d0 * (2.0 * u3 - 3.0 * u2 + 1.0) + l * m0 * (u3 - 2.0 * u2 + u);
        let d1 = (d0 * (6.0 * u2 - 6.0 * u) + l * m0 * (3.0 * u2 - 4.0 * u + 1.0)) / l;
        let d2 = (d0 * (12.0 * u - 6.0) + l * m0 * (6.0 * u - 4.0)) / (l * l);
        (d, d1, d2)
    }
}

/// A maneuver's path and speed profile, evaluable in closed form. The route,
/// obstacles and `ego` live in the route frame; samples are returned in the
/// vehicle frame at t0.
#[derive(Debug, Clone)]
pub struct Maneuver {
    pub route: Route,
    pub profile: SpeedProfile,
    pub obstacles: Vec<[f64; 2]>,
    pub recovery: Recovery,
    /// Vehicle pose at t0.
    pub ego: Pose2,
}

/// Shortest distance over which a start offset is recovered.
pub const MIN_RECOVERY_LENGTH: f64 = 5.0;
/// Recovery distance per m/s of initial speed.
pub const RECOVERY_DISTANCE_PER_SPEED: f64 = 2.0;

/// Margin kept between the expert's stop point and the obstacle.
pub const EXPERT_STOP_MARGIN: f64 = 2.0;

impl Maneuver {
    pub fn from_spec(spec: &ManeuverSpec) -> Result<Self> {
        spec.validate()?;
        let route = Route::arc(200.0, spec.curvature);
        let (profile, obstacles) = match spec.family {
            ManeuverFamily::Stop => {
                let obstacle = spec.obstacle.expect("validated");
                let d = route.project_within(obstacle, 0.0, 100.0);
                let stop_at = d - EXPERT_STOP_MARGIN;
                if stop_at <= 0.0 && spec.v0 > 0.0 {
                    return Err(Error::Infeasible(format!("obstacle {d:.2} m ahead leaves no room to stop")));
                }
                let decel = if spec.v0 > 0.0 { spec.v0 * spec.v0 / (2.0 * stop_at) } else { 0.0 };
                (SpeedProfile::ConstantDecel { v0: spec.v0, decel }, vec![obstacle])
            }
            _ => (
                SpeedProfile::JerkLimited {
                    v0: spec.v0,
                    v1: spec.target_speed,
                    jerk: spec.jerk_limit,
                },
                vec![],
            ),
        };
        let kappa0 = route.curvature_at(0.0);
        let recovery = Recovery {
            offset: spec.lateral_offset,
            slope: spec.heading_offset.tan() * (1.0 - kappa0 * spec.lateral_offset),
            length: MIN_RECOVERY_LENGTH.max(RECOVERY_DISTANCE_PER_SPEED * spec.v0),
        };
        let mut m = Self {
            route,
            profile,
            obstacles,
            recovery,
            ego: Pose2::IDENTITY,
        };
        m.ego = m.path_pose(0.0);
        Ok(m)
    }

    /// Route-frame point of the driven path at route arclength `s`, with its
    /// first and second derivatives with respect to `s`.
    fn path_point(&self, s: f64) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let c = self.route.pose_at(s);
        let kappa = self.route.curvature_at(s);
        let (d, d1, d2) = self.recovery.at(s);
        let (sn, cs) = c.heading.sin_cos();
        let (tan, nor) = ([cs, sn], [-sn, cs]);
        let along1 = 1.0 - kappa * d;
        let (along2, across2) = (-2.0 * kappa * d1, kappa * along1 + d2);
        (
            [c.x + nor[0] * d, c.y + nor[1] * d],
            [tan[0] * along1 + nor[0] * d1, tan[1] * along1 + nor[1] * d1],
            [tan[0] * along2 + nor[0] * across2, tan[1] * along2 + nor[1] * across2],
        )
    }

    /// Route-frame pose on the driven path at route arclength `s`.
    pub fn path_pose(&self, s: f64) -> Pose2 {
        let (p, dp, _) = self.path_point(s);
        Pose2::new(p[0], p[1], dp[1].atan2(dp[0]))
    }

    /// Exact position/velocity/acceleration at time `t` (vehicle frame at t0).
    pub fn sample(&self, t: f64) -> TrajectorySample {
        let (s, v, a) = self.profile.at(t);
        let (p, dp, ddp) = self.path_point(s);
        let vel = [dp[0] * v, dp[1] * v];
        let acc = [ddp[0] * v * v + dp[0] * a, ddp[1] * v * v + dp[1] * a];
        let velocity = self.ego.rotate_to_local(vel);
        TrajectorySample {
            t,
            position: self.ego.to_local(p),
            velocity,
            acceleration: self.ego.rotate_to_local(acc),
            speed: velocity[0].hypot(velocity[1]),
        }
    }
}

/// Renders the composed map seen from `ego` (a pose in the t0 frame).
pub fn render_frame(
    route: &Route,
    ego_s: f64,
    obstacles: &[[f64; 2]],
    spec: &GridSpec,
    cfg: &PotentialConfig,
) -> Result<(PotentialMap, Vec<(usize, usize)>)> {
    render_view(route, ego_s, &route.pose_at(ego_s), obstacles, spec, cfg)
}

/// Renders the composed map seen from an arbitrary `ego` pose whose
/// projection onto the route is `from_s`.
pub fn render_view(
    route: &Route,
    from_s: f64,
    ego: &Pose2,
    obstacles: &[[f64; 2]],
    spec: &GridSpec,
    cfg: &PotentialConfig,
) -> Result<(PotentialMap, Vec<(usize, usize)>)> {
    let path = intention_path(route, from_s, ego, spec)?;
    let goal = build_goal_potential(&path, spec, cfg)?;
    let cells = obstacle_cells(obstacles, ego, spec);
    let obstacle = build_obstacle_potential(&cells, spec, cfg)?;
    Ok((compose(&goal, &obstacle)?, cells))
}

/// Route points from `from_s` forward, in `ego`'s frame. Points before the
/// path enters the grid are skipped; the path ends where it first leaves.
pub fn intention_path(route: &Route, from_s: f64, ego: &Pose2, spec: &GridSpec) -> Result<IntentionPath> {
    let step = spec.cell_size / 2.0;
    let n = (INTENTION_LENGTH / step).round() as usize;
    let mut pts = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let p = route.pose_at(from_s + i as f64 * step);
        let local = ego.to_local([p.x, p.y]);
        if spec.contains(local) {
            pts.push(local);
        } else if !pts.is_empty() {
            break;
        }
    }
    IntentionPath::new(pts)
}

/// Cells occupied by the given t0-frame obstacles, seen from `ego`.
pub fn obstacle_cells(obstacles: &[[f64; 2]], ego: &Pose2, spec: &GridSpec) -> Vec<(usize, usize)> {
    let mut cells: Vec<(usize, usize)> = obstacles.iter().filter_map(|&o| spec.cell_of(ego.to_local(o))).collect();
    cells.sort_unstable();
    cells.dedup();
    cells
}

/// Builds one expert episode. The window's older frames place the ego
/// `v0 · 0.1 s` further back along the path per frame; with a start offset
/// the path behind the ego continues its initial heading.
pub fn generate_episode(spec: &ManeuverSpec, seed: u64) -> Result<Episode> {
    generate_episode_with(spec, seed, &GridSpec::default(), &PotentialConfig::default())
}

pub fn generate_episode_with(
    spec: &ManeuverSpec,
    seed: u64,
    grid: &GridSpec,
    cfg: &PotentialConfig,
) -> Result<Episode> {
    let maneuver = Maneuver::from_spec(spec)?;
    let label: Vec<TrajectorySample> = (0..LABEL_LEN).map(|k| maneuver.sample(k as f64 * LABEL_DT)).collect();
    if let Some(s) = label.iter().find(|s| !grid.contains(s.position)) {
        return Err(Error::Infeasible(format!(
            "label leaves the grid at t = {:.1} s ({:.2}, {:.2})",
            s.t, s.position[0], s.position[1]
        )));
    }
    let mut map_window = Vec::with_capacity(WINDOW);
    let mut newest_cells = vec![];
    for j in (0..WINDOW).rev() {
        let ego_s = -spec.v0 * FRAME_DT * j as f64;
        let ego = maneuver.path_pose(ego_s);
        let (map, cells) = render_view(&maneuver.route, ego_s, &ego, &maneuver.obstacles, grid, cfg)?;
        map_window.push(map);
        newest_cells = cells;
    }
    Ok(Episode {
        id: format!("ep_{seed:016x}"),
        scenario_tag: spec.tag(),
        v0: label[0].speed,
        map_window,
        obstacle_cells: newest_cells,
        label,
    })
}

// ------------------------------------------------------------------ relabel

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelabelConfig {
    pub margin: f64,
    pub vehicle_radius: f64,
    /// Obstacle potential at or above which a cell counts as occupied.
    pub threshold: f64,
}

impl Default for RelabelConfig {
    fn default() -> Self {
        Self {
            margin: 2.0,
            vehicle_radius: 1.0,
            threshold: 0.5,
        }
    }
}

/// Centers of cells whose obstacle potential reaches the threshold.
pub fn hot_cells(ep: &Episode, cfg: &RelabelConfig, pcfg: &PotentialConfig) -> Result<Vec<[f64; 2]>> {
    let spec = *ep.newest_map().spec();
    let obstacle = build_obstacle_potential(&ep.obstacle_cells, &spec, pcfg)?;
    let mut out = vec![];
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            if obstacle.get(r, c) >= cfg.threshold {
                out.push(spec.cell_center(r, c));
            }
        }
    }
    Ok(out)
}

pub fn collides(p: [f64; 2], hot: &[[f64; 2]], radius: f64) -> bool {
    hot.iter().any(|h| (h[0] - p[0]).hypot(h[1] - p[1]) <= radius)
}

/// Arclength-parameterized polyline through the label positions.
struct Polyline {
    points: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Polyline {
    fn new(points: Vec<[f64; 2]>) -> Self {
        let mut cum = vec![0.0];
        for w in points.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + norm([w[1][0] - w[0][0], w[1][1] - w[0][1]]));
        }
        Self { points, cum }
    }

    /// Position and unit tangent at arclength `s` (clamped to the polyline).
    fn at(&self, s: f64) -> ([f64; 2], [f64; 2]) {
        let n = self.points.len();
        let mut i = self.cum.partition_point(|&c| c <= s).saturating_sub(1).min(n.saturating_sub(2));
        // Skip zero-length segments so the tangent is defined.
        while i + 1 < n && self.cum[i + 1] - self.cum[i] <= 0.0 {
            if i == 0 {
                break;
            }
            i -= 1;
        }
        if n < 2 || self.cum[i + 1] - self.cum[i] <= 0.0 {
            return (self.points[0], [0.0, 0.0]);
        }
        let len = self.cum[i + 1] - self.cum[i];
        let (a, b) = (self.points[i], self.points[i + 1]);
        let u = ((s - self.cum[i]) / len).clamp(0.0, 1.0);
        let tangent = [(b[0] - a[0]) / len, (b[1] - a[1]) / len];
        ([a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])], tangent)
    }
}

/// Re-times a label that runs into an obstacle as a constant-deceleration stop
/// `margin` meters before the first colliding sample, along the original path.
/// Episodes without a collision are returned unchanged.
pub fn relabel_causal(ep: &Episode, cfg: &RelabelConfig) -> Result<Episode> {
    relabel_causal_with(ep, cfg, &PotentialConfig::default())
}

pub fn relabel_causal_with(ep: &Episode, cfg: &RelabelConfig, pcfg: &PotentialConfig) -> Result<Episode> {
    let hot = hot_cells(ep, cfg, pcfg)?;
    let first_hit =
        |samples: &[TrajectorySample]| samples.iter().position(|s| collides(s.position, &hot, cfg.vehicle_radius));
    let Some(mut hit) = first_hit(&ep.label) else {
        return Ok(ep.clone());
    };
    let path = Polyline::new(ep.label.iter().map(|s| s.position).collect());
    let origin = ep.label[0].position;
    let v0 = ep.v0;
    // Arclength of each relabeled sample along the original path.
    let mut arclengths: Vec<f64> = path.cum.clone();
    loop {
        let s_c = arclengths[hit];
        let d_s = (s_c - cfg.margin).max(0.0);
        let (samples, s_of) = if d_s == 0.0 || v0 <= 0.0 {
            let pinned = ep
                .label
                .iter()
                .map(|s| TrajectorySample {
                    t: s.t,
                    position: origin,
                    ..Default::default()
                })
                .collect::<Vec<_>>();
            let zeros = vec![0.0; ep.label.len()];
            (pinned, zeros)
        } else {
            let profile = SpeedProfile::ConstantDecel {
                v0,
                decel: v0 * v0 / (2.0 * d_s),
            };
            let mut out = Vec::with_capacity(ep.label.len());
            let mut s_of = Vec::with_capacity(ep.label.len());
            for l in &ep.label {
                let (s, v, a) = profile.at(l.t);
                let s = s.min(d_s);
                let (p, tan) = path.at(s);
                out.push(TrajectorySample {
                    t: l.t,
                    position: p,
                    velocity: [v * tan[0], v * tan[1]],
                    acceleration: [a * tan[0], a * tan[1]],
                    speed: v,
                });
                s_of.push(s);
            }
            (out, s_of)
        };
        match first_hit(&samples) {
            // A non-convex obstacle layout can still be touched earlier along
            // the path; pull the stop back and retry.
            Some(k) if d_s > 0.0 && v0 > 0.0 => {
                hit = k;
                arclengths = s_of;
            }
            _ => {
                return Ok(Episode {
                    label: samples,
                    ..ep.clone()
                })
            }
        }
    }
}

// ------------------------------------------------------------------ datasets

/// Distribution over maneuvers used by the dataset generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSet {
    pub straight_weight: f64,
    pub turn_weight: f64,
    pub stop_weight: f64,
    pub speed_range: [f64; 2],
    pub stop_speed_range: [f64; 2],
    pub curvature_range: [f64; 2],
    pub stop_distance_range: [f64; 2],
    /// Largest expert deceleration accepted for stop maneuvers.
    pub max_decel: f64,
    /// Target speed is drawn from `v0 ± speed_change`.
    pub speed_change: f64,
    pub jerk_limit: f64,
    /// Start offsets from the route are drawn from `±lateral_offset_max`.
    pub lateral_offset_max: f64,
    /// Start heading errors are drawn from `±heading_offset_max`.
    pub heading_offset_max: f64,
}

impl Default for ScenarioSet {
    fn default() -> Self {
        Self {
            straight_weight: 0.35,
            turn_weight: 0.4,
            stop_weight: 0.25,
            speed_range: [1.0, SPEED_LIMIT],
            stop_speed_range: [0.0, SPEED_LIMIT],
            curvature_range: [0.01, 0.12],
            stop_distance_range: [4.0, 28.0],
            max_decel: 4.0,
            speed_change: 0.0,
            jerk_limit: 1.0,
            lateral_offset_max: 1.0,
            heading_offset_max: 0.15,
        }
    }
}

impl ScenarioSet {
    /// Draws a feasible maneuver; infeasible draws are rejected and redrawn.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> ManeuverSpec {
        loop {
            let spec = self.draw(rng);
            if Maneuver::from_spec(&spec).is_ok() && generate_label_fits(&spec) {
                return spec;
            }
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> ManeuverSpec {
        let spec = self.draw_nominal(rng);
        let symmetric = |rng: &mut R, m: f64| if m > 0.0 { rng.random_range(-m..m) } else { 0.0 };
        ManeuverSpec {
            lateral_offset: symmetric(rng, self.lateral_offset_max),
            heading_offset: symmetric(rng, self.heading_offset_max),
            ..spec
        }
    }

    fn draw_nominal<R: Rng>(&self, rng: &mut R) -> ManeuverSpec {
        let total = self.straight_weight + self.turn_weight + self.stop_weight;
        let pick = rng.random_range(0.0..total);
        let uniform = |rng: &mut R, r: [f64; 2]| if r[1] > r[0] { rng.random_range(r[0]..r[1]) } else { r[0] };
        let v0 = uniform(rng, self.speed_range);
        let target = if self.speed_change > 0.0 {
            (v0 + rng.random_range(-self.speed_change..self.speed_change)).clamp(0.0, SPEED_LIMIT)
        } else {
            v0
        };
        if pick < self.straight_weight {
            ManeuverSpec {
                target_speed: target,
                jerk_limit: self.jerk_limit,
                ..ManeuverSpec::straight(v0)
            }
        } else if pick < self.straight_weight + self.turn_weight {
            let k = uniform(rng, self.curvature_range);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            ManeuverSpec {
                target_speed: target,
                jerk_limit: self.jerk_limit,
                ..ManeuverSpec::turn(sign * k, v0)
            }
        } else {
            let v0 = uniform(rng, self.stop_speed_range);
            let min_d = EXPERT_STOP_MARGIN + v0 * v0 / (2.0 * self.max_decel);
            let lo = self.stop_distance_range[0].max(min_d + 0.5);
            let hi = self.stop_distance_range[1].max(lo);
            let d = uniform(rng, [lo, hi]);
            ManeuverSpec::stop(v0, d)
        }
    }

    /// Generates `count` episodes with per-episode seeds derived from `seed`.
    /// Results are in index order regardless of how they were produced.
    pub fn generate(&self, seed: u64, count: usize) -> Result<Vec<Episode>> {
        (0..count).map(|i| self.generate_one(seed, i)).collect()
    }

    pub fn generate_one(&self, seed: u64, index: usize) -> Result<Episode> {
        let ep_seed = episode_seed(seed, index);
        let mut rng = ChaCha8Rng::seed_from_u64(ep_seed);
        let spec = self.sample(&mut rng);
        let mut ep = generate_episode(&spec, ep_seed)?;
        ep.id = format!("ep_{index:05}");
        Ok(ep)
    }
}

fn generate_label_fits(spec: &ManeuverSpec) -> bool {
    let Ok(m) = Maneuver::from_spec(spec) else { return false };
    let grid = GridSpec::default();
    (0..LABEL_LEN).all(|k| grid.contains(m.sample(k as f64 * LABEL_DT).position))
}

/// SplitMix64 of `(seed, index)`: independent, order-free per-episode seeds.
pub fn episode_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index as u64)
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ------------------------------------------------------------------ file format

#[derive(Serialize, Deserialize)]
struct LabelArrays {
    t: Vec<f64>,
    position: Vec<[f64; 2]>,
    velocity: Vec<[f64; 2]>,
    acceleration: Vec<[f64; 2]>,
    speed: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeDoc {
    id: String,
    scenario_tag: ScenarioTag,
    v0: f64,
    horizon: f64,
    maps: Vec<String>,
    obstacle_cells: Vec<(usize, usize)>,
    label: LabelArrays,
}

/// File name of the `k`-th window map of episode `id`.
pub fn map_file_name(id: &str, k: usize) -> String {
    format!("{id}.map{k}.bin")
}

/// Writes `<dir>/<id>.json` and its sibling map files. Returns the JSON path
/// and a checksum over the JSON followed by the map payloads.
pub fn write_episode(dir: &Path, ep: &Episode) -> Result<(PathBuf, String)> {
    let maps: Vec<String> = (0..ep.map_window.len()).map(|k| map_file_name(&ep.id, k)).collect();
    let doc = EpisodeDoc {
        id: ep.id.clone(),
        scenario_tag: ep.scenario_tag,
        v0: ep.v0,
        horizon: ep.horizon(),
        maps: maps.clone(),
        obstacle_cells: ep.obstacle_cells.clone(),
        label: LabelArrays {
            t: ep.label.iter().map(|s| s.t).collect(),
            position: ep.label.iter().map(|s| s.position).collect(),
            velocity: ep.label.iter().map(|s| s.velocity).collect(),
            acceleration: ep.label.iter().map(|s| s.acceleration).collect(),
            speed: ep.label.iter().map(|s| s.speed).collect(),
        },
    };
    let json = serde_json::to_vec_pretty(&doc)?;
    let mut hashed = json.clone();
    for (name, map) in maps.iter().zip(&ep.map_window) {
        let bytes = map.to_bytes()?;
        write_atomic(&dir.join(name), &bytes)?;
        hashed.extend_from_slice(&bytes);
    }
    let path = dir.join(format!("{}.json", ep.id));
    write_atomic(&path, &json)?;
    Ok((path, sha256_hex(&hashed)))
}

/// Reads an episode written by [`write_episode`]; also returns its checksum.
pub fn read_episode_checked(path: &Path) -> Result<(Episode, String)> {
    let json = std::fs::read(path)?;
    let doc: EpisodeDoc = serde_json::from_slice(&json).map_err(|e| Error::format(json_field(&e), e.to_string()))?;
    let n = doc.label.t.len();
    if n == 0 {
        return Err(Error::format("label.t", "empty label"));
    }
    for (field, len) in [
        ("label.position", doc.label.position.len()),
        ("label.velocity", doc.label.velocity.len()),
        ("label.acceleration", doc.label.acceleration.len()),
        ("label.speed", doc.label.speed.len()),
    ] {
        if len != n {
            return Err(Error::format(field, format!("{len} entries, expected {n}")));
        }
    }
    if doc.label.t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::format("label.t", "times not strictly increasing"));
    }
    if doc.maps.len() != WINDOW {
        return Err(Error::format("maps", format!("{} maps, expected {WINDOW}", doc.maps.len())));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut hashed = json.clone();
    let mut map_window = Vec::with_capacity(WINDOW);
    for (k, name) in doc.maps.iter().enumerate() {
        let bytes = std::fs::read(dir.join(name)).map_err(|e| Error::format(format!("maps[{k}]"), e.to_string()))?;
        let map = PotentialMap::from_bytes(&bytes).map_err(|e| Error::format(format!("maps[{k}]"), e.to_string()))?;
        hashed.extend_from_slice(&bytes);
        map_window.push(map);
    }
    if map_window.windows(2).any(|w| w[0].spec() != w[1].spec()) {
        return Err(Error::format("maps", "grid specs differ within the window"));
    }
    let label = (0..n)
        .map(|k| TrajectorySample {
            t: doc.label.t[k],
            position: doc.label.position[k],
            velocity: doc.label.velocity[k],
            acceleration: doc.label.acceleration[k],
            speed: doc.label.speed[k],
        })
        .collect();
    let ep = Episode {
        id: doc.id,
        scenario_tag: doc.scenario_tag,
        v0: doc.v0,
        map_window,
        obstacle_cells: doc.obstacle_cells,
        label,
    };
    Ok((ep, sha256_hex(&hashed)))
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    Ok(read_episode_checked(path)?.0)
}

/// Best-effort name of the JSON field a serde error refers to.
fn json_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    if let Some(start) = msg.find('`') {
        if let Some(len) = msg[start + 1..].find('`') {
            return msg[start + 1..start + 1 + len].to_string();
        }
    }
    format!("line {} column {}", e.line(), e.column())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub file: String,
    pub checksum: String,
}

/// Lists a generated dataset: every episode file with its seed and checksum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seed: u64,
    pub count: usize,
    pub scenario_set: ScenarioSet,
    pub episodes: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_atomic(&path, &serde_json::to_vec_pretty(self)?)?;
        Ok(path)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let bytes = std::fs::read(dir.join(MANIFEST_FILE))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::format(json_field(&e), e.to_string()))
    }
}

/// Writes episodes plus a manifest into `dir`.
pub fn write_dataset(dir: &Path, seed: u64, set: &ScenarioSet, episodes: &[Episode]) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        let (path, checksum) = write_episode(dir, ep)?;
        entries.push(ManifestEntry {
            id: ep.id.clone(),
            seed: episode_seed(seed, i),
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            checksum,
        });
    }
    let manifest = DatasetManifest {
        seed,
        count: episodes.len(),
        scenario_set: set.clone(),
        episodes: entries,
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Reads every episode listed in the manifest, verifying checksums.
pub fn read_dataset(dir: &Path) -> Result<(DatasetManifest, Vec<Episode>)> {
    let manifest = DatasetManifest::read(dir)?;
    let mut out = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let (ep, checksum) = read_episode_checked(&dir.join(&entry.file))?;
        if checksum != entry.checksum {
            return Err(Error::format(
                format!("episodes[{}].checksum", entry.id),
                "file contents do not match the manifest",
            ));
        }
        out.push(ep);
    }
    Ok((manifest, out))
}
