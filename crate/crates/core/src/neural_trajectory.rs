//! Continuous trajectories as a linear combination of sinusoidal basis
//! functions of normalized time.
//!
//! With `τ = t / T` and `z_i = ω_i τ + φ_i`, each axis is
//!
//! ```text
//! p(t)  =  Σ w_i cos z_i + b
//! p'(t) = −(1/T)  Σ w_i ω_i  sin z_i
//! p''(t)= −(1/T²) Σ w_i ω_i² cos z_i
//! ```
//!
//! so velocity and acceleration are exact, and gradients of any loss on them
//! flow back into `{ω, φ, w, b}` in closed form.

use crate::{Error, Result};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Speed below which heading and curvature are undefined.
pub const V_MIN: f64 = 0.05;

/// Basis nonlinearity. `LeakyRelu` exists for the "w/o cos" ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    #[default]
    Cosine,
    LeakyRelu,
}

const LEAKY_SLOPE: f64 = 0.2;

impl BasisKind {
    /// `(f(z), f'(z), f''(z))`.
    #[inline]
    fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            BasisKind::Cosine => {
                let (s, c) = z.sin_cos();
                (c, -s, -c)
            }
            BasisKind::LeakyRelu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (LEAKY_SLOPE * z, LEAKY_SLOPE, 0.0)
                }
            }
        }
    }

    /// Third derivative, needed for ∂acc/∂φ and ∂acc/∂ω.
    #[inline]
    fn third(self, z: f64) -> f64 {
        match self {
            BasisKind::Cosine => z.sin(),
            BasisKind::LeakyRelu => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KinematicState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub acceleration: [f64; 2],
}

impl KinematicState {
    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTrajectory {
    /// Horizon `T` in seconds.
    pub horizon: f64,
    #[serde(default)]
    pub basis: BasisKind,
    /// Frequencies per unit normalized time.
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
    pub weight_x: Vec<f64>,
    pub weight_y: Vec<f64>,
    pub bias: [f64; 2],
}

/// Gradients with respect to every trajectory coefficient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CoefficientGrads {
    pub freq: Vec<f64>,
    pub phase: Vec<f64>,
    pub weight_x: Vec<f64>,
    pub weight_y: Vec<f64>,
    pub bias: [f64; 2],
}

impl CoefficientGrads {
    pub fn zeros(m: usize) -> Self {
        Self {
            freq: vec![0.0; m],
            phase: vec![0.0; m],
            weight_x: vec![0.0; m],
            weight_y: vec![0.0; m],
            bias: [0.0; 2],
        }
    }
}

impl ContinuousTrajectory {
    pub fn new(
        horizon: f64,
        basis: BasisKind,
        freq: Vec<f64>,
        phase: Vec<f64>,
        weight_x: Vec<f64>,
        weight_y: Vec<f64>,
        bias: [f64; 2],
    ) -> Result<Self> {
        let m = freq.len();
        if phase.len() != m || weight_x.len() != m || weight_y.len() != m {
            return Err(Error::format("coefficients", "basis arrays differ in length"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::format("horizon", format!("{horizon} is not positive")));
        }
        let all = freq.iter().chain(&phase).chain(&weight_x).chain(&weight_y).chain(&bias);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::format("coefficients", "non-finite coefficient"));
        }
        Ok(Self {
            horizon,
            basis,
            freq,
            phase,
            weight_x,
            weight_y,
            bias,
        })
    }

    /// A trajectory that stays at `position` for the whole horizon.
    pub fn constant(horizon: f64, position: [f64; 2]) -> Self {
        Self {
            horizon,
            basis: BasisKind::Cosine,
            freq: vec![],
            phase: vec![],
            weight_x: vec![],
            weight_y: vec![],
            bias: position,
        }
    }

    pub fn basis_count(&self) -> usize {
        self.freq.len()
    }

    pub fn is_extrapolation(&self, t: f64) -> bool {
        !(0.0..=self.horizon).contains(&t)
    }

    pub fn eval(&self, t: f64) -> KinematicState {
        let inv_t = 1.0 / self.horizon;
        let tau = t * inv_t;
        let mut s = KinematicState {
            position: self.bias,
            ..Default::default()
        };
        for i in 0..self.freq.len() {
            let w = self.freq[i];
            let (f, df, d2f) = self.basis.eval(w * tau + self.phase[i]);
            let (wx, wy) = (self.weight_x[i], self.weight_y[i]);
            s.position[0] += wx * f;
            s.position[1] += wy * f;
            let dv = df * w * inv_t;
            s.velocity[0] += wx * dv;
            s.velocity[1] += wy * dv;
            let da = d2f * w * w * inv_t * inv_t;
            s.acceleration[0] += wx * da;
            s.acceleration[1] += wy * da;
        }
        s
    }

    pub fn eval_batch(&self, times: &[f64]) -> Vec<KinematicState> {
        times.iter().map(|&t| self.eval(t)).collect()
    }

    /// Signed curvature `(x'y'' − y'x'') / |v|³` from the analytic derivatives.
    pub fn curvature(&self, t: f64) -> Result<f64> {
        curvature_of(&self.eval(t))
    }

    /// Chain rule from upstream gradients on position/velocity/acceleration at
    /// time `t` to the coefficients.
    pub fn backward_through_eval(&self, t: f64, upstream: &KinematicState) -> CoefficientGrads {
        let mut g = CoefficientGrads::zeros(self.basis_count());
        self.accumulate_grads(t, upstream, &mut g);
        g
    }

    /// As [`Self::backward_through_eval`] but accumulating into `out`.
    pub fn accumulate_grads(&self, t: f64, up: &KinematicState, out: &mut CoefficientGrads) {
        let inv_t = 1.0 / self.horizon;
        let inv_t2 = inv_t * inv_t;
        let tau = t * inv_t;
        out.bias[0] += up.position[0];
        out.bias[1] += up.position[1];
        for i in 0..self.freq.len() {
            let w = self.freq[i];
            let z = w * tau + self.phase[i];
            let (f, df, d2f) = self.basis.eval(z);
            let d3f = self.basis.third(z);
            let (wx, wy) = (self.weight_x[i], self.weight_y[i]);

            // d{pos, vel, acc}/d weight
            let dpos_dw = f;
            let dvel_dw = df * w * inv_t;
            let dacc_dw = d2f * w * w * inv_t2;
            out.weight_x[i] +=
                up.position[0] * dpos_dw + up.velocity[0] * dvel_dw + up.acceleration[0] * dacc_dw;
            out.weight_y[i] +=
                up.position[1] * dpos_dw + up.velocity[1] * dvel_dw + up.acceleration[1] * dacc_dw;

            // Upstream contracted with the per-axis weights.
            let gp = up.position[0] * wx + up.position[1] * wy;
            let gv = up.velocity[0] * wx + up.velocity[1] * wy;
            let ga = up.acceleration[0] * wx + up.acceleration[1] * wy;

            // d/dφ: dz/dφ = 1
            out.phase[i] += gp * df + gv * d2f * w * inv_t + ga * d3f * w * w * inv_t2;
            // d/dω: dz/dω = τ
            out.freq[i] += gp * df * tau
                + gv * (d2f * tau * w + df) * inv_t
                + ga * (d3f * tau * w * w + 2.0 * d2f * w) * inv_t2;
        }
    }

    /// Rotates and translates the trajectory rigidly (new = R·old + offset).
    pub fn transformed(&self, rotation: f64, offset: [f64; 2]) -> Self {
        let (s, c) = rotation.sin_cos();
        let mut out = self.clone();
        for i in 0..self.freq.len() {
            let (x, y) = (self.weight_x[i], self.weight_y[i]);
            out.weight_x[i] = c * x - s * y;
            out.weight_y[i] = s * x + c * y;
        }
        let (bx, by) = (self.bias[0], self.bias[1]);
        out.bias = [c * bx - s * by + offset[0], s * bx + c * by + offset[1]];
        out
    }
}

/// Curvature of a kinematic state; errors below [`V_MIN`].
pub fn curvature_of(s: &KinematicState) -> Result<f64> {
    let [vx, vy] = s.velocity;
    let [ax, ay] = s.acceleration;
    let speed2 = vx * vx + vy * vy;
    if speed2.sqrt() < V_MIN {
        return Err(Error::CurvatureUndefined);
    }
    Ok((vx * ay - vy * ax) / speed2.powf(1.5))
}

/// A sample to fit: time, position and optional velocity.
#[derive(Debug, Clone, Copy)]
pub struct FitSample {
    pub t: f64,
    pub position: [f64; 2],
    pub velocity: Option<[f64; 2]>,
    pub acceleration: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub basis_count: usize,
    pub velocity_weight: f64,
    pub acceleration_weight: f64,
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            basis_count: 32,
            velocity_weight: 1.0,
            acceleration_weight: 0.3,
            ridge: 1e-10,
        }
    }
}

/// Fixed frequency/phase grid used by [`fit`]: cosine and sine pairs at
/// frequencies `0.5·(j+1)`.
pub fn fit_basis(m: usize) -> (Vec<f64>, Vec<f64>) {
    let freq = (0..m).map(|i| 0.5 * (i / 2 + 1) as f64).collect();
    let phase = (0..m)
        .map(|i| if i % 2 == 0 { 0.0 } else { -std::f64::consts::FRAC_PI_2 })
        .collect();
    (freq, phase)
}

/// Least-squares fit of weights and biases on a fixed basis to position (and
/// optionally velocity/acceleration) samples. Used for scripted planners and
/// for reference trajectories in tests.
pub fn fit(samples: &[FitSample], horizon: f64, opts: &FitOptions) -> Result<ContinuousTrajectory> {
    if samples.is_empty() {
        return Err(Error::EmptyLabel);
    }
    let m = opts.basis_count;
    let (freq, phase) = fit_basis(m);
    let probe = ContinuousTrajectory {
        horizon,
        basis: BasisKind::Cosine,
        freq: freq.clone(),
        phase: phase.clone(),
        weight_x: vec![0.0; m],
        weight_y: vec![0.0; m],
        bias: [0.0; 2],
    };
    // Unknowns per axis: m weights + bias. Rows: one per supplied quantity.
    let mut rows: Vec<(Vec<f64>, [f64; 2])> = vec![];
    for s in samples {
        let tau = s.t / horizon;
        let mut pos_row = vec![0.0; m + 1];
        let mut vel_row = vec![0.0; m + 1];
        let mut acc_row = vec![0.0; m + 1];
        for i in 0..m {
            let (f, df, d2f) = probe.basis.eval(freq[i] * tau + phase[i]);
            pos_row[i] = f;
            vel_row[i] = df * freq[i] / horizon;
            acc_row[i] = d2f * freq[i] * freq[i] / (horizon * horizon);
        }
        pos_row[m] = 1.0;
        rows.push((pos_row, s.position));
        if let Some(v) = s.velocity {
            let wv = opts.velocity_weight;
            rows.push((vel_row.iter().map(|x| x * wv).collect(), [v[0] * wv, v[1] * wv]));
        }
        if let Some(a) = s.acceleration {
            let wa = opts.acceleration_weight;
            rows.push((acc_row.iter().map(|x| x * wa).collect(), [a[0] * wa, a[1] * wa]));
        }
    }
    let n = m + 1;
    let design = DMatrix::from_fn(rows.len() + n, n, |r, c| {
        if r < rows.len() {
            rows[r].0[c]
        } else if r - rows.len() == c {
            opts.ridge.sqrt()
        } else {
            0.0
        }
    });
    let svd = design.svd(true, true);
    let solve = |axis: usize| -> Result<DVector<f64>> {
        let rhs = DVector::from_fn(rows.len() + n, |r, _| if r < rows.len() { rows[r].1[axis] } else { 0.0 });
        svd.solve(&rhs, 1e-12)
            .map_err(|e| Error::InvalidConfig(format!("least-squares fit failed: {e}")))
    };
    let sx = solve(0)?;
    let sy = solve(1)?;
    ContinuousTrajectory::new(
        horizon,
        BasisKind::Cosine,
        freq,
        phase,
        sx.iter().take(m).copied().collect(),
        sy.iter().take(m).copied().collect(),
        [sx[m], sy[m]],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_traj(rng: &mut ChaCha8Rng, m: usize, basis: BasisKind) -> ContinuousTrajectory {
        let mut v = |lo: f64, hi: f64, n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(lo..hi)).collect() };
        let freq = v(0.1, 12.0, m);
        let phase = v(-3.1, 3.1, m);
        let wx = v(-5.0, 5.0, m);
        let wy = v(-5.0, 5.0, m);
        let b = v(-3.0, 3.0, 2);
        let h = v(0.5, 5.0, 1)[0];
        ContinuousTrajectory::new(h, basis, freq, phase, wx, wy, [b[0], b[1]]).unwrap()
    }

    fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(scale)
    }

    #[test]
    fn single_basis_closed_form() {
        let tr = ContinuousTrajectory::new(1.0, BasisKind::Cosine, vec![2.0], vec![0.0], vec![1.0], vec![0.0], [0.0, 0.0]).unwrap();
        let s = tr.eval(0.0);
        assert_eq!(s.position[0], 1.0);
        assert_eq!(s.velocity[0], 0.0);
        assert_eq!(s.acceleration[0], -4.0);
    }

    #[test]
    fn zero_weights_give_constant_bias() {
        let tr = ContinuousTrajectory::new(3.0, BasisKind::Cosine, vec![1.0, 7.0], vec![0.3, 1.0], vec![0.0; 2], vec![0.0; 2], [1.5, -2.0]).unwrap();
        for t in [0.0, 0.7, 3.0, 4.5] {
            let s = tr.eval(t);
            assert_eq!(s.position, [1.5, -2.0]);
            assert_eq!(s.velocity, [0.0, 0.0]);
            assert_eq!(s.acceleration, [0.0, 0.0]);
        }
    }

    #[test]
    fn rejects_malformed_coefficients() {
        assert!(ContinuousTrajectory::new(0.0, BasisKind::Cosine, vec![], vec![], vec![], vec![], [0.0; 2]).is_err());
        assert!(ContinuousTrajectory::new(1.0, BasisKind::Cosine, vec![1.0], vec![], vec![1.0], vec![1.0], [0.0; 2]).is_err());
        assert!(ContinuousTrajectory::new(1.0, BasisKind::Cosine, vec![f64::NAN], vec![0.0], vec![1.0], vec![1.0], [0.0; 2]).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..50 {
            let tr = random_traj(&mut rng, 8, BasisKind::Cosine);
            for _ in 0..20 {
                let t = rng.random_range(0.0..tr.horizon);
                let s = tr.eval(t);
                let (p, m) = (tr.eval(t + h), tr.eval(t - h));
                for a in 0..2 {
                    let fd_v = (p.position[a] - m.position[a]) / (2.0 * h);
                    let fd_a = (p.velocity[a] - m.velocity[a]) / (2.0 * h);
                    let vscale = tr.weight_x.iter().chain(&tr.weight_y).zip(tr.freq.iter().cycle()).map(|(w, f)| (w * f).abs()).sum::<f64>() / tr.horizon;
                    assert!(rel_err(s.velocity[a], fd_v, 1e-3 * vscale) < 1e-6);
                    assert!(rel_err(s.acceleration[a], fd_a, 1e-3 * vscale * 12.0 / tr.horizon) < 1e-6);
                }
            }
        }
    }

    #[test]
    fn eval_batch_is_elementwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tr = random_traj(&mut rng, 6, BasisKind::Cosine);
        assert!(tr.eval_batch(&[]).is_empty());
        assert_eq!(tr.eval_batch(&[0.0])[0], tr.eval(0.0));
        let times: Vec<f64> = (0..31).map(|k| k as f64 * 0.1).collect();
        let batch = tr.eval_batch(&times);
        for (t, s) in times.iter().zip(&batch) {
            assert_eq!(*s, tr.eval(*t));
        }
    }

    #[test]
    fn curvature_cases() {
        let straight = ContinuousTrajectory::new(3.0, BasisKind::Cosine, vec![1.0, 2.0], vec![-1.5, 0.2], vec![10.0, 1.0], vec![0.0, 0.0], [0.0; 2]).unwrap();
        assert_eq!(straight.curvature(1.0).unwrap(), 0.0);
        let stopped = ContinuousTrajectory::constant(3.0, [1.0, 1.0]);
        assert_eq!(stopped.curvature(1.0).unwrap_err().to_string(), "curvature undefined at near-zero speed");

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tr = random_traj(&mut rng, 5, BasisKind::Cosine);
        let mut mirrored = tr.clone();
        mirrored.weight_y.iter_mut().for_each(|w| *w = -*w);
        mirrored.bias[1] = -mirrored.bias[1];
        for t in [0.2, 0.9, 1.7] {
            if let Ok(k) = tr.curvature(t) {
                assert!((k + mirrored.curvature(t).unwrap()).abs() < 1e-12 * k.abs().max(1.0));
            }
        }
    }

    /// Arc of radius 10 at 5 m/s, sampled analytically and fitted.
    pub(crate) fn fitted_circle() -> ContinuousTrajectory {
        let (r, v) = (10.0, 5.0);
        let samples: Vec<FitSample> = (0..=60)
            .map(|k| {
                let t = k as f64 * 0.05;
                let th = v * t / r;
                FitSample {
                    t,
                    position: [r * th.sin(), r * (1.0 - th.cos())],
                    velocity: Some([v * th.cos(), v * th.sin()]),
                    acceleration: Some([-v * v / r * th.sin(), v * v / r * th.cos()]),
                }
            })
            .collect();
        fit(&samples, 3.0, &FitOptions::default()).unwrap()
    }

    #[test]
    fn fitted_circle_has_analytic_curvature() {
        let tr = fitted_circle();
        for t in [0.3, 1.0, 1.5, 2.0, 2.7] {
            let k = tr.curvature(t).unwrap();
            assert!((k - 0.1).abs() < 1e-3, "kappa({t}) = {k}");
            assert!((tr.eval(t).speed() - 5.0).abs() < 1e-3);
        }
        assert!(tr.eval(0.0).position[0].abs() < 1e-4);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tr = random_traj(&mut rng, 4, BasisKind::Cosine);
        let g = tr.backward_through_eval(1.0, &KinematicState::default());
        assert_eq!(g, CoefficientGrads::zeros(4));
        let unit = KinematicState { position: [1.0, 0.0], ..Default::default() };
        assert_eq!(tr.backward_through_eval(0.4, &unit).bias, [1.0, 0.0]);
    }

    /// Finite-difference Jacobian of every output w.r.t. every coefficient.
    fn check_jacobian(tr: &ContinuousTrajectory, t: f64) -> f64 {
        let eps = 1e-6;
        let flat = |s: &KinematicState| -> [f64; 6] {
            [s.position[0], s.position[1], s.velocity[0], s.velocity[1], s.acceleration[0], s.acceleration[1]]
        };
        let mut worst: f64 = 0.0;
        for out in 0..6 {
            let mut up = [0.0; 6];
            up[out] = 1.0;
            let upstream = KinematicState {
                position: [up[0], up[1]],
                velocity: [up[2], up[3]],
                acceleration: [up[4], up[5]],
            };
            let g = tr.backward_through_eval(t, &upstream);
            let m = tr.basis_count();
            let mut check = |analytic: f64, perturb: &dyn Fn(&mut ContinuousTrajectory, f64)| {
                let mut p = tr.clone();
                perturb(&mut p, eps);
                let mut n = tr.clone();
                perturb(&mut n, -eps);
                let fd = (flat(&p.eval(t))[out] - flat(&n.eval(t))[out]) / (2.0 * eps);
                worst = worst.max(rel_err(analytic, fd, 1e-4));
            };
            for i in 0..m {
                check(g.freq[i], &|c, e| c.freq[i] += e);
                check(g.phase[i], &|c, e| c.phase[i] += e);
                check(g.weight_x[i], &|c, e| c.weight_x[i] += e);
                check(g.weight_y[i], &|c, e| c.weight_y[i] += e);
            }
            check(g.bias[0], &|c, e| c.bias[0] += e);
            check(g.bias[1], &|c, e| c.bias[1] += e);
        }
        worst
    }

    #[test]
    fn coefficient_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let tr = random_traj(&mut rng, 4, BasisKind::Cosine);
            let t = rng.random_range(0.0..tr.horizon);
            let worst = check_jacobian(&tr, t);
            assert!(worst < 1e-3, "max relative error {worst}");
        }
    }

    #[test]
    fn leaky_basis_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let tr = random_traj(&mut rng, 4, BasisKind::LeakyRelu);
            let t = rng.random_range(0.0..tr.horizon);
            // Skip the measure-zero case of a kink within the FD stencil.
            let tau = t / tr.horizon;
            if tr.freq.iter().zip(&tr.phase).any(|(w, p)| (w * tau + p).abs() < 1e-3) {
                continue;
            }
            assert!(check_jacobian(&tr, t) < 1e-3);
        }
    }

    #[test]
    fn leaky_basis_has_piecewise_linear_position() {
        let tr = ContinuousTrajectory::new(2.0, BasisKind::LeakyRelu, vec![4.0], vec![-1.0], vec![1.0], vec![0.0], [0.0; 2]).unwrap();
        // z = 2t − 1: kink at t = 0.5.
        assert!((tr.eval(0.0).position[0] + 0.2).abs() < 1e-15);
        assert!((tr.eval(1.0).position[0] - 1.0).abs() < 1e-15);
        assert_eq!(tr.eval(1.0).velocity[0], 2.0);
        assert_eq!(tr.eval(0.2).velocity[0], 0.4);
        assert_eq!(tr.eval(1.0).acceleration[0], 0.0);
    }

    #[test]
    fn json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = random_traj(&mut rng, 3, BasisKind::Cosine);
        let back: ContinuousTrajectory = serde_json::from_str(&serde_json::to_string(&tr).unwrap()).unwrap();
        assert_eq!(back, tr);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn time_rescaling(seed in 0u64..1000, alpha in 0.2f64..5.0, tfrac in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = random_traj(&mut rng, 6, BasisKind::Cosine);
            let mut stretched = tr.clone();
            stretched.horizon *= alpha;
            let t = tfrac * tr.horizon;
            let a = tr.eval(t);
            let b = stretched.eval(alpha * t);
            for ax in 0..2 {
                prop_assert!((a.position[ax] - b.position[ax]).abs() <= 1e-12 * a.position[ax].abs().max(1.0));
                prop_assert!((a.velocity[ax] / alpha - b.velocity[ax]).abs() <= 1e-12 * a.velocity[ax].abs().max(1.0));
            }
        }

        #[test]
        fn smooth_under_dense_sampling(seed in 0u64..1000) {
            // Adjacent 1 ms samples never jump by more than the acceleration bound allows.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = random_traj(&mut rng, 6, BasisKind::Cosine);
            let dt = 1e-3;
            let n = (tr.horizon / dt) as usize;
            let states: Vec<_> = (0..=n).map(|k| tr.eval(k as f64 * dt)).collect();
            let max_acc = states.iter().map(|s| s.acceleration[0].abs().max(s.acceleration[1].abs())).fold(0.0, f64::max);
            let max_dv = states.windows(2).map(|w| (w[1].velocity[0] - w[0].velocity[0]).abs().max((w[1].velocity[1] - w[0].velocity[1]).abs())).fold(0.0, f64::max);
            // Mean-value theorem plus slack for the acceleration varying inside a step.
            prop_assert!(max_dv <= 1.05 * max_acc * dt + 1e-12);
        }

        #[test]
        fn transform_is_rigid(seed in 0u64..1000, rot in -3.0f64..3.0, ox in -5.0f64..5.0, oy in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tr = random_traj(&mut rng, 5, BasisKind::Cosine);
            let moved = tr.transformed(rot, [ox, oy]);
            let t = 0.37 * tr.horizon;
            let (a, b) = (tr.eval(t), moved.eval(t));
            prop_assert!((a.speed() - b.speed()).abs() < 1e-9 * a.speed().max(1.0));
            if let (Ok(k1), Ok(k2)) = (tr.curvature(t), moved.curvature(t)) {
                prop_assert!((k1 - k2).abs() < 1e-9 * k1.abs().max(1.0));
            }
        }
    }
}
