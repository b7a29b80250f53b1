//! Bird's-eye potential maps.
//!
//! A goal map is a smoothed raster of the intention path, an obstacle map is a
//! per-cell maximum of Gaussian bumps around occupied cells, and the composed
//! map is their clamped difference. Rows run along the vehicle's longitudinal
//! axis (x), columns along the lateral axis (y, positive left).

use crate::geometry::point_segment_distance;
use crate::io::{decode_framed, encode_framed, write_atomic};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub cell_size: f64,
    /// Vehicle-frame coordinates of the outer corner of cell (0, 0).
    pub origin: [f64; 2],
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            rows: 64,
            cols: 64,
            cell_size: 0.5,
            origin: [0.0, -16.0],
        }
    }
}

impl GridSpec {
    /// A grid of `n × n` cells covering `[0, n·cell) × [−n·cell/2, n·cell/2)`.
    pub fn square(n: usize, cell_size: f64) -> Self {
        Self {
            rows: n,
            cols: n,
            cell_size,
            origin: [0.0, -(n as f64) * cell_size / 2.0],
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> [f64; 2] {
        [self.rows as f64 * self.cell_size, self.cols as f64 * self.cell_size]
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.origin[0] + (row as f64 + 0.5) * self.cell_size,
            self.origin[1] + (col as f64 + 0.5) * self.cell_size,
        ]
    }

    /// Cell containing a vehicle-frame point, `None` outside the grid.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let r = ((p[0] - self.origin[0]) / self.cell_size).floor();
        let c = ((p[1] - self.origin[1]) / self.cell_size).floor();
        if r >= 0.0 && c >= 0.0 && (r as usize) < self.rows && (c as usize) < self.cols {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_some()
    }

    fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || !(self.cell_size > 0.0) {
            return Err(Error::InvalidConfig(format!("degenerate grid {self:?}")));
        }
        Ok(())
    }
}

/// Tunables for rasterization and smoothing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    /// Cells whose center lies within this distance of the path are set in the mask.
    pub lane_half_width: f64,
    /// Gaussian smoothing σ, in cells.
    pub smoothing_sigma_cells: f64,
    /// Kernel truncation radius in multiples of σ.
    pub truncation_sigmas: f64,
    /// σ of the obstacle bump, in meters.
    pub obstacle_sigma: f64,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        Self {
            lane_half_width: 1.0,
            smoothing_sigma_cells: 2.0,
            truncation_sigmas: 3.0,
            obstacle_sigma: 1.5,
        }
    }
}

impl PotentialConfig {
    /// One-sided truncated Gaussian taps `g[k] = exp(−k²/2σ²)`, `k = 0..=R`.
    pub fn smoothing_taps(&self) -> Vec<f64> {
        let sigma = self.smoothing_sigma_cells;
        let radius = (self.truncation_sigmas * sigma).ceil() as usize;
        (0..=radius)
            .map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp())
            .collect()
    }
}

/// Ordered vehicle-frame points describing the local route to the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentionPath {
    points: Vec<[f64; 2]>,
}

impl IntentionPath {
    pub const MAX_LENGTH: f64 = 32.0;

    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::format("intention_path", "non-finite point"));
        }
        let path = Self { points };
        if path.arclength() > Self::MAX_LENGTH + 1e-9 {
            return Err(Error::format(
                "intention_path",
                format!("arclength {:.3} m exceeds {} m", path.arclength(), Self::MAX_LENGTH),
            ));
        }
        Ok(path)
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn arclength(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }

    pub fn max_spacing(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMap {
    spec: GridSpec,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MapHeader {
    rows: usize,
    cols: usize,
    cell_size: f64,
    origin: [f64; 2],
}

impl PotentialMap {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.len() {
            return Err(Error::format(
                "values",
                format!("expected {} values, found {}", spec.len(), values.len()),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::format("values", format!("{v} outside [-1, 1]")));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: GridSpec) -> Self {
        Self {
            spec,
            values: vec![0.0; spec.len()],
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols + col]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = MapHeader {
            rows: self.spec.rows,
            cols: self.spec.cols,
            cell_size: self.spec.cell_size,
            origin: self.spec.origin,
        };
        encode_framed(&header, &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values) = decode_framed(bytes, |h: &MapHeader| h.rows * h.cols)?;
        let spec = GridSpec {
            rows: h.rows,
            cols: h.cols,
            cell_size: h.cell_size,
            origin: h.origin,
        };
        Self::new(spec, values)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Binary PGM with values mapped affinely from [−1, 1] to [0, 255].
    /// Row 0 (nearest the vehicle) is written last so forward points up.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.spec.cols, self.spec.rows).into_bytes();
        for r in (0..self.spec.rows).rev() {
            for c in 0..self.spec.cols {
                let v = self.get(r, c);
                out.push(((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Binary mask of cells whose centers lie within `half_width` of the path.
pub fn rasterize_path(path: &IntentionPath, spec: &GridSpec, half_width: f64) -> Vec<bool> {
    let mut mask = vec![false; spec.len()];
    let pts = path.points();
    let segments: Vec<([f64; 2], [f64; 2])> = if pts.len() == 1 {
        vec![(pts[0], pts[0])]
    } else {
        pts.windows(2).map(|w| (w[0], w[1])).collect()
    };
    let cs = spec.cell_size;
    let to_index = |v: f64, o: f64, n: usize| -> usize {
        (((v - o) / cs).floor().max(0.0) as usize).min(n.saturating_sub(1))
    };
    for (a, b) in segments {
        let r0 = to_index(a[0].min(b[0]) - half_width, spec.origin[0], spec.rows);
        let r1 = to_index(a[0].max(b[0]) + half_width, spec.origin[0], spec.rows);
        let c0 = to_index(a[1].min(b[1]) - half_width, spec.origin[1], spec.cols);
        let c1 = to_index(a[1].max(b[1]) + half_width, spec.origin[1], spec.cols);
        for r in r0..=r1 {
            for c in c0..=c1 {
                let idx = r * spec.cols + c;
                if !mask[idx] && point_segment_distance(spec.cell_center(r, c), a, b) <= half_width {
                    mask[idx] = true;
                }
            }
        }
    }
    mask
}

/// Separable convolution with a symmetric truncated kernel; zero padding.
fn smooth_separable(input: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let radius = taps.len() as isize - 1;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for k in -radius..=radius {
                let cc = c as isize + k;
                if cc >= 0 && (cc as usize) < cols {
                    acc += taps[k.unsigned_abs()] * input[r * cols + cc as usize];
                }
            }
            tmp[r * cols + c] = acc;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = 0.0;
            for k in -radius..=radius {
                let rr = r as isize + k;
                if rr >= 0 && (rr as usize) < rows {
                    acc += taps[k.unsigned_abs()] * tmp[rr as usize * cols + c];
                }
            }
            out[r * cols + c] = acc;
        }
    }
    out
}

/// Goal-guided potential: the path mask smoothed by a truncated Gaussian and
/// rescaled to a unit maximum.
pub fn build_goal_potential(
    path: &IntentionPath,
    spec: &GridSpec,
    cfg: &PotentialConfig,
) -> Result<PotentialMap> {
    spec.validate()?;
    if path.is_empty() {
        return Err(Error::EmptyIntentionPath);
    }
    if let Some(p) = path.points().iter().find(|p| !spec.contains(**p)) {
        return Err(Error::OutOfBounds {
            what: "intention path point",
            detail: format!("({:.3}, {:.3})", p[0], p[1]),
        });
    }
    let mask = rasterize_path(path, spec, cfg.lane_half_width);
    let binary: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    let mut values = smooth_separable(&binary, spec.rows, spec.cols, &cfg.smoothing_taps());
    let peak = values.iter().copied().fold(0.0, f64::max);
    if peak > 0.0 {
        for v in &mut values {
            *v = (*v / peak).clamp(0.0, 1.0);
        }
    }
    Ok(PotentialMap { spec: *spec, values })
}

/// Obstacle potential: per-cell maximum of `exp(−d²/2σ²)` over occupied cells.
pub fn build_obstacle_potential(
    occupied: &[(usize, usize)],
    spec: &GridSpec,
    cfg: &PotentialConfig,
) -> Result<PotentialMap> {
    spec.validate()?;
    if let Some(&(r, c)) = occupied.iter().find(|(r, c)| *r >= spec.rows || *c >= spec.cols) {
        return Err(Error::OutOfBounds {
            what: "obstacle cell",
            detail: format!("({r}, {c}) in {}x{} grid", spec.rows, spec.cols),
        });
    }
    let mut values = vec![0.0; spec.len()];
    if occupied.is_empty() {
        return Ok(PotentialMap { spec: *spec, values });
    }
    let centers: Vec<[f64; 2]> = occupied.iter().map(|&(r, c)| spec.cell_center(r, c)).collect();
    let denom = 2.0 * cfg.obstacle_sigma * cfg.obstacle_sigma;
    for r in 0..spec.rows {
        for c in 0..spec.cols {
            let p = spec.cell_center(r, c);
            let nearest = centers
                .iter()
                .map(|o| (p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2))
                .fold(f64::INFINITY, f64::min);
            values[r * spec.cols + c] = (-nearest / denom).exp();
        }
    }
    Ok(PotentialMap { spec: *spec, values })
}

/// `clamp(goal − obstacle, −1, 1)` elementwise.
pub fn compose(goal: &PotentialMap, obstacle: &PotentialMap) -> Result<PotentialMap> {
    if goal.spec != obstacle.spec {
        return Err(Error::SpecMismatch(format!("{:?} vs {:?}", goal.spec, obstacle.spec)));
    }
    let values = goal
        .values
        .iter()
        .zip(&obstacle.values)
        .map(|(g, o)| (g - o).clamp(-1.0, 1.0))
        .collect();
    Ok(PotentialMap { spec: goal.spec, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight_path(len: f64) -> IntentionPath {
        let n = (len / 0.25) as usize;
        IntentionPath::new((0..=n).map(|i| [i as f64 * 0.25, 0.0]).collect()).unwrap()
    }

    /// Direct 2-D convolution of the mask with the square-truncated Gaussian,
    /// normalized by the map peak. Independent of the separable path.
    fn brute_force_goal(mask: &[bool], spec: &GridSpec, cfg: &PotentialConfig) -> Vec<f64> {
        let sigma = cfg.smoothing_sigma_cells;
        let radius = (cfg.truncation_sigmas * sigma).ceil() as i64;
        let (rows, cols) = (spec.rows as i64, spec.cols as i64);
        let mut raw = vec![0.0; spec.len()];
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = 0.0;
                for dr in -radius..=radius {
                    for dc in -radius..=radius {
                        let (rr, cc) = (r + dr, c + dc);
                        if rr < 0 || cc < 0 || rr >= rows || cc >= cols {
                            continue;
                        }
                        if mask[(rr * cols + cc) as usize] {
                            acc += (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
                        }
                    }
                }
                raw[(r * cols + c) as usize] = acc;
            }
        }
        let peak = raw.iter().copied().fold(0.0, f64::max);
        raw.iter().map(|v| v / peak).collect()
    }

    #[test]
    fn empty_path_is_rejected() {
        let path = IntentionPath::new(vec![]).unwrap();
        let err = build_goal_potential(&path, &GridSpec::default(), &PotentialConfig::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "empty intention path");
    }

    #[test]
    fn out_of_bounds_path_is_rejected() {
        let path = IntentionPath::new(vec![[0.0, 0.0], [-1.0, 0.0]]).unwrap();
        assert!(matches!(
            build_goal_potential(&path, &GridSpec::default(), &PotentialConfig::default()),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn grid_round_trip() {
        let spec = GridSpec::default();
        assert_eq!(spec.extent(), [32.0, 32.0]);
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                assert_eq!(spec.cell_of(spec.cell_center(r, c)), Some((r, c)));
            }
        }
        assert_eq!(spec.cell_of([0.0, -16.0]), Some((0, 0)));
        assert_eq!(spec.cell_of([32.0, 0.0]), None);
        assert_eq!(spec.cell_of([1.0, 16.0]), None);
    }

    #[test]
    fn straight_centerline_peaks_on_center_and_decays_laterally() {
        let spec = GridSpec::default();
        let map = build_goal_potential(&straight_path(30.0), &spec, &PotentialConfig::default()).unwrap();
        assert!((map.max() - 1.0).abs() < 1e-15);
        // The path runs along y = 0, the boundary between columns 31 and 32.
        let row = 30;
        assert_eq!(map.get(row, 31), map.get(row, 32));
        let peak_row = (0..spec.rows).map(|r| map.get(r, 32)).fold(0.0, f64::max);
        assert_eq!(peak_row, 1.0);
        for k in 0..15 {
            let here = map.get(row, 32 + k);
            let next = map.get(row, 33 + k);
            assert!(next <= here, "non-monotone at lateral offset {k}");
            assert_eq!(here, map.get(row, 31 - k), "asymmetric at offset {k}");
        }
        // Mask spans columns 30..=33; the kernel reaches 6 cells further.
        assert!(map.get(row, 39) > 0.0);
        assert_eq!(map.get(row, 40), 0.0);
    }

    #[test]
    fn single_point_bump_is_radially_symmetric() {
        let spec = GridSpec::default();
        let center = spec.cell_center(20, 40);
        let path = IntentionPath::new(vec![center]).unwrap();
        let map = build_goal_potential(&path, &spec, &PotentialConfig::default()).unwrap();
        assert_eq!(map.get(20, 40), 1.0);
        // Row and column passes round differently, so symmetry across the
        // diagonal holds to the last ulp rather than bitwise.
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-15;
        for d in 1..8 {
            let v = map.get(20 + d, 40);
            assert!(close(v, map.get(20 - d, 40)));
            assert!(close(v, map.get(20, 40 + d)));
            assert!(close(v, map.get(20, 40 - d)));
            assert!(v < map.get(20 + d - 1, 40));
        }
        assert!(close(map.get(21, 42), map.get(22, 41)));
    }

    #[test]
    fn l_shaped_path_matches_direct_convolution() {
        let spec = GridSpec::default();
        let cfg = PotentialConfig::default();
        let mut pts: Vec<[f64; 2]> = (0..=40).map(|i| [i as f64 * 0.25, 0.0]).collect();
        pts.extend((1..=32).map(|i| [10.0, i as f64 * 0.25]));
        let path = IntentionPath::new(pts).unwrap();
        let map = build_goal_potential(&path, &spec, &cfg).unwrap();
        let mask = rasterize_path(&path, &spec, cfg.lane_half_width);
        let oracle = brute_force_goal(&mask, &spec, &cfg);
        for &(r, c) in &[(20usize, 32usize), (20, 40), (5, 30), (25, 45), (10, 36), (0, 0)] {
            let idx = r * spec.cols + c;
            assert!((map.values()[idx] - oracle[idx]).abs() < 1e-12, "cell ({r},{c})");
        }
        let max_err = map
            .values()
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 1e-12);
    }

    #[test]
    fn obstacle_potential_cases() {
        let spec = GridSpec::default();
        let cfg = PotentialConfig::default();
        let empty = build_obstacle_potential(&[], &spec, &cfg).unwrap();
        assert!(empty.values().iter().all(|&v| v == 0.0));

        let single = build_obstacle_potential(&[(10, 10)], &spec, &cfg).unwrap();
        assert_eq!(single.get(10, 10), 1.0);

        let cells = [(10, 20), (14, 26)];
        let two = build_obstacle_potential(&cells, &spec, &cfg).unwrap();
        for r in 0..spec.rows {
            for c in 0..spec.cols {
                let p = spec.cell_center(r, c);
                let mut best: f64 = 0.0;
                for &(or, oc) in &cells {
                    let o = spec.cell_center(or, oc);
                    let d = ((p[0] - o[0]).powi(2) + (p[1] - o[1]).powi(2)).sqrt();
                    best = best.max((-d * d / (2.0 * 1.5 * 1.5)).exp());
                }
                assert!((two.get(r, c) - best).abs() < 1e-15);
            }
        }

        assert!(matches!(
            build_obstacle_potential(&[(64, 0)], &spec, &cfg),
            Err(Error::OutOfBounds { .. })
        ));
    }

    #[test]
    fn compose_cases() {
        let spec = GridSpec::square(2, 1.0);
        let goal = PotentialMap::new(spec, vec![0.6, 0.0, 0.3, 1.0]).unwrap();
        let obstacle = PotentialMap::new(spec, vec![0.9, 1.0, 0.0, 0.0]).unwrap();
        let c = compose(&goal, &obstacle).unwrap();
        assert!((c.get(0, 0) + 0.3).abs() < 1e-15);
        assert_eq!(c.get(0, 1), -1.0);
        assert_eq!(compose(&goal, &PotentialMap::zeros(spec)).unwrap(), goal);
        let other = PotentialMap::zeros(GridSpec::square(3, 1.0));
        assert!(matches!(compose(&goal, &other), Err(Error::SpecMismatch(_))));
    }

    #[test]
    fn serialization_round_trip_and_pgm() {
        let spec = GridSpec::default();
        let map = build_goal_potential(&straight_path(20.0), &spec, &PotentialConfig::default()).unwrap();
        let back = PotentialMap::from_bytes(&map.to_bytes().unwrap()).unwrap();
        assert_eq!(back, map);
        let pgm = map.to_pgm();
        assert!(pgm.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(pgm.len(), b"P5\n64 64\n255\n".len() + 64 * 64);
        let bytes = map.to_bytes().unwrap();
        assert!(PotentialMap::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    fn arb_path() -> impl Strategy<Value = IntentionPath> {
        (0.5f64..30.0, -10.0f64..10.0, -0.15f64..0.15, 1usize..60).prop_map(|(x0, y0, k, n)| {
            let mut pts = vec![];
            let (mut x, mut y, mut h): (f64, f64, f64) = (x0.min(31.0), y0, 0.0);
            for _ in 0..n {
                pts.push([x, y]);
                x += 0.4 * h.cos();
                y += 0.4 * h.sin();
                h += k * 0.4;
                if !(0.0..32.0).contains(&x) || !(-16.0..16.0).contains(&y) {
                    break;
                }
            }
            IntentionPath::new(pts).unwrap()
        })
    }

    proptest! {
        #[test]
        fn outputs_are_bounded(path in arb_path(), obs in prop::collection::vec((0usize..64, 0usize..64), 0..6)) {
            let spec = GridSpec::default();
            let cfg = PotentialConfig::default();
            let g = build_goal_potential(&path, &spec, &cfg).unwrap();
            let o = build_obstacle_potential(&obs, &spec, &cfg).unwrap();
            prop_assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert!((g.max() - 1.0).abs() < 1e-12);
            prop_assert!(o.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let c = compose(&g, &o).unwrap();
            prop_assert!(c.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        }

        #[test]
        fn compose_is_monotone_in_goal(path in arb_path(), cell in (0usize..64, 0usize..64), bump in 0.0f64..1.0) {
            let spec = GridSpec::default();
            let cfg = PotentialConfig::default();
            let g = build_goal_potential(&path, &spec, &cfg).unwrap();
            let o = build_obstacle_potential(&[(20, 30)], &spec, &cfg).unwrap();
            let base = compose(&g, &o).unwrap();
            let mut raised = g.values().to_vec();
            let idx = cell.0 * spec.cols + cell.1;
            raised[idx] = (raised[idx] + bump).min(1.0);
            let raised = compose(&PotentialMap::new(spec, raised).unwrap(), &o).unwrap();
            prop_assert!(raised.values()[idx] >= base.values()[idx]);
        }

        #[test]
        fn resampling_that_keeps_mask_keeps_map(path in arb_path()) {
            // Inserting midpoints of existing segments leaves the polyline, and
            // therefore the mask, unchanged.
            let spec = GridSpec::default();
            let cfg = PotentialConfig::default();
            let pts = path.points();
            let mut dense = vec![pts[0]];
            for w in pts.windows(2) {
                dense.push([(w[0][0] + w[1][0]) / 2.0, (w[0][1] + w[1][1]) / 2.0]);
                dense.push(w[1]);
            }
            let dense = IntentionPath::new(dense).unwrap();
            prop_assert_eq!(rasterize_path(&path, &spec, 1.0), rasterize_path(&dense, &spec, 1.0));
            let a = build_goal_potential(&path, &spec, &cfg).unwrap();
            let b = build_goal_potential(&dense, &spec, &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
