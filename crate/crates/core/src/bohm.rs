//! One-dimensional Bohmian trajectories in a two-branch free Gaussian packet.
//!
//! Units are `ħ = m = 1`. Each branch is a free Gaussian with width `w`,
//! initial center `x0_k` and group velocity `v_k`:
//!
//! `ψ_k(x,t) = (2πw²)^(-1/4) (1+iτ)^(-1/2) exp(−(x−x0_k−v_k t)²/(4w²(1+iτ)) + i v_k (x−x0_k) − i v_k² t/2)`
//!
//! with `τ = t/(2w²)`, and `ψ = a_1 ψ_1 + a_2 ψ_2`. Particles move with
//! `dx/dt = Im(∂_x ψ / ψ)`.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{invalid, Error, Result};
use crate::runner::derive_seed;

/// `|ψ|` below this is treated as a node.
pub const NODE_FLOOR: f64 = 1e-30;
/// Branch overlap that counts as separated.
pub const SEPARATION_OVERLAP: f64 = 1e-10;
pub const STEP_TOL: f64 = 1e-8;
const MIN_STEP: f64 = 1e-14;
const GRID_POINTS: usize = 100_001;
const GRID_HALF_WIDTHS: f64 = 12.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketPair {
    pub a: [Complex64; 2],
    pub x0: [f64; 2],
    pub v: [f64; 2],
    pub w: f64,
}

impl PacketPair {
    pub fn new(a: [Complex64; 2], x0: [f64; 2], v: [f64; 2], w: f64) -> Result<Self> {
        if !(w > 0.0 && w.is_finite()) {
            return Err(invalid("width must be positive"));
        }
        if x0.iter().chain(&v).any(|z| !z.is_finite()) {
            return Err(invalid("centers and velocities must be finite"));
        }
        let s = a[0].norm_sqr() + a[1].norm_sqr();
        if (s - 1.0).abs() > 1e-10 {
            return Err(Error::Unnormalized(s));
        }
        let p = PacketPair { a, x0, v, w };
        let norm = p.initial_norm();
        if (norm - 1.0).abs() > 1e-8 {
            return Err(Error::Unnormalized(norm));
        }
        Ok(p)
    }

    /// Real amplitudes `(√p1, √(1−p1))`, `w = 1`, both packets starting at the
    /// origin with velocities `±5`.
    pub fn standard(p1: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p1) {
            return Err(invalid("p1 must lie in [0, 1]"));
        }
        Self::new(
            [Complex64::new(p1.sqrt(), 0.0), Complex64::new((1.0 - p1).sqrt(), 0.0)],
            [0.0, 0.0],
            [5.0, -5.0],
            1.0,
        )
    }

    /// Both initial centers moved by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        PacketPair { x0: [self.x0[0] + delta, self.x0[1] + delta], ..*self }
    }

    pub fn weights(&self) -> [f64; 2] {
        [self.a[0].norm_sqr(), self.a[1].norm_sqr()]
    }

    pub fn center(&self, k: usize, t: f64) -> f64 {
        self.x0[k] + self.v[k] * t
    }

    /// Standard deviation of `|ψ_k(x,t)|²`.
    pub fn spread(&self, t: f64) -> f64 {
        let tau = t / (2.0 * self.w * self.w);
        self.w * (1.0 + tau * tau).sqrt()
    }

    /// `ln ψ_k` and its `x` derivative.
    fn log_branch(&self, k: usize, x: f64, t: f64) -> (Complex64, Complex64) {
        let w2 = self.w * self.w;
        let one_i_tau = Complex64::new(1.0, t / (2.0 * w2));
        let d = x - self.center(k, t);
        let i = Complex64::i();
        let ln = -0.25 * (2.0 * std::f64::consts::PI * w2).ln() - 0.5 * one_i_tau.ln() - d * d / (4.0 * w2 * one_i_tau)
            + i * (self.v[k] * (x - self.x0[k]) - 0.5 * self.v[k] * self.v[k] * t);
        let dln = -d / (2.0 * w2 * one_i_tau) + i * self.v[k];
        (ln, dln)
    }

    /// `(ln|ψ|, ψ'/ψ)` with the branch sum done relative to the larger branch.
    fn log_psi_and_ratio(&self, x: f64, t: f64) -> (f64, Complex64) {
        let zero = Complex64::new(0.0, 0.0);
        let terms: Vec<(Complex64, Complex64)> = (0..2)
            .filter(|&k| self.a[k] != zero)
            .map(|k| {
                let (ln, d) = self.log_branch(k, x, t);
                (ln + self.a[k].ln(), d)
            })
            .collect();
        let m = terms.iter().map(|(l, _)| l.re).fold(f64::NEG_INFINITY, f64::max);
        let mut s = zero;
        let mut ds = zero;
        for (l, d) in &terms {
            let e = (l - m).exp();
            s += e;
            ds += e * d;
        }
        (m + s.norm().ln(), ds / s)
    }

    pub fn psi(&self, x: f64, t: f64) -> Complex64 {
        (0..2)
            .map(|k| self.a[k] * self.log_branch(k, x, t).0.exp())
            .sum()
    }

    pub fn density(&self, x: f64, t: f64) -> f64 {
        let (ln_abs, _) = self.log_psi_and_ratio(x, t);
        (2.0 * ln_abs).exp()
    }

    fn grid_range(&self, t: f64) -> (f64, f64) {
        let s = self.spread(t);
        let lo = self.center(0, t).min(self.center(1, t)) - GRID_HALF_WIDTHS * s;
        let hi = self.center(0, t).max(self.center(1, t)) + GRID_HALF_WIDTHS * s;
        (lo, hi)
    }

    /// `∫|ψ(x,0)|² dx` by the trapezoid rule.
    pub fn initial_norm(&self) -> f64 {
        let grid = Grid::new(|x| self.density(x, 0.0), self.grid_range(0.0));
        grid.total
    }

    /// Bhattacharyya overlap `∫|ψ_1||ψ_2| dx = exp(−d²/(8s²))` of the two branches.
    pub fn overlap(&self, t: f64) -> f64 {
        let d = self.center(0, t) - self.center(1, t);
        let s = self.spread(t);
        (-d * d / (8.0 * s * s)).exp()
    }

    /// Earliest time after which the overlap stays below [`SEPARATION_OVERLAP`].
    ///
    /// `overlap < ε` iff `d² > 8 ln(1/ε) s²`, which is a quadratic in `t`; the
    /// answer is its largest root, clamped at zero.
    pub fn t_sep(&self) -> Result<f64> {
        let l8 = 8.0 * SEPARATION_OVERLAP.ln().abs();
        let w2 = self.w * self.w;
        let d0 = self.x0[0] - self.x0[1];
        let dv = self.v[0] - self.v[1];
        let qa = dv * dv - l8 / (4.0 * w2);
        let qb = 2.0 * d0 * dv;
        let qc = d0 * d0 - l8 * w2;
        if qa <= 0.0 {
            return Err(Error::Degenerate(format!(
                "branches do not stay separated below overlap {SEPARATION_OVERLAP:e}; need |Δv|·w > {:.4}",
                (l8 / 4.0).sqrt()
            )));
        }
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            return Ok(0.0);
        }
        let root = (-qb + disc.sqrt()) / (2.0 * qa);
        Ok(root.max(0.0))
    }
}

/// `Im(∂_x ψ / ψ)`.
pub fn guidance_velocity(p: &PacketPair, x: f64, t: f64) -> Result<f64> {
    let (ln_abs, ratio) = p.log_psi_and_ratio(x, t);
    if !(ln_abs >= NODE_FLOOR.ln()) || !ratio.im.is_finite() {
        return Err(Error::Degenerate(format!("node of ψ near x = {x}, t = {t}")));
    }
    Ok(ratio.im)
}

fn rk4(p: &PacketPair, x: f64, t: f64, h: f64) -> Result<f64> {
    let k1 = guidance_velocity(p, x, t)?;
    let k2 = guidance_velocity(p, x + 0.5 * h * k1, t + 0.5 * h)?;
    let k3 = guidance_velocity(p, x + 0.5 * h * k2, t + 0.5 * h)?;
    let k4 = guidance_velocity(p, x + h * k3, t + h)?;
    Ok(x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
}

struct Stepper<'a> {
    p: &'a PacketPair,
    h: f64,
    steps: u64,
    rejected: u64,
}

impl Stepper<'_> {
    /// Advance from `t0` to `t1` with step doubling.
    fn advance(&mut self, mut x: f64, t0: f64, t1: f64) -> Result<f64> {
        let mut t = t0;
        while t < t1 {
            let h = self.h.min(t1 - t);
            let attempt = rk4(self.p, x, t, h).and_then(|full| {
                let half = rk4(self.p, x, t, 0.5 * h)?;
                let two = rk4(self.p, half, t + 0.5 * h, 0.5 * h)?;
                Ok((full, two))
            });
            match attempt {
                Ok((full, two)) => {
                    let err = (two - full).abs() / 15.0;
                    if err <= STEP_TOL {
                        x = two + (two - full) / 15.0;
                        t = if h == t1 - t { t1 } else { t + h };
                        self.steps += 1;
                        let grow = if err == 0.0 { 4.0 } else { (0.9 * (STEP_TOL / err).powf(0.2)).min(4.0) };
                        // a step clipped to land on t1 should not shrink the working step
                        self.h = if h < self.h { self.h.max(h * grow) } else { h * grow };
                    } else {
                        self.rejected += 1;
                        self.h = h * (0.9 * (STEP_TOL / err).powf(0.2)).max(0.1);
                    }
                }
                Err(_) => {
                    self.rejected += 1;
                    self.h = 0.25 * h;
                }
            }
            if self.h < MIN_STEP {
                return Err(Error::Degenerate(format!("integration stalled at x = {x}, t = {t}")));
            }
        }
        Ok(x)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// 1-based branch, `None` when unresolved.
    pub branch: Option<usize>,
    pub steps: u64,
    pub rejected_steps: u64,
    pub diagnostics: Option<String>,
}

fn nearest_branch(p: &PacketPair, x: f64, t: f64) -> usize {
    if (x - p.center(0, t)).abs() <= (x - p.center(1, t)).abs() {
        1
    } else {
        2
    }
}

/// Integrate from `x0` at `t = 0`, reporting positions every `dt` up to `t_end`.
pub fn integrate_trajectory(p: &PacketPair, x0: f64, dt: f64, t_end: f64) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) || !x0.is_finite() {
        return Err(invalid("need dt > 0, t_end ≥ 0 and finite x0"));
    }
    let t_sep = p.t_sep()?;
    let n = (t_end / dt).ceil() as usize;
    let mut times = vec![0.0];
    let mut positions = vec![x0];
    let mut stepper = Stepper { p, h: dt.min(1e-2), steps: 0, rejected: 0 };
    let mut x = x0;
    let mut diagnostics = None;
    for i in 1..=n {
        let t0 = times[i - 1];
        let t1 = if i == n { t_end } else { i as f64 * dt };
        match stepper.advance(x, t0, t1) {
            Ok(next) => x = next,
            Err(e) => {
                diagnostics = Some(e.to_string());
                break;
            }
        }
        times.push(t1);
        positions.push(x);
    }
    let finished = diagnostics.is_none();
    let branch = (finished && t_end >= t_sep).then(|| nearest_branch(p, x, t_end));
    if finished && branch.is_none() {
        diagnostics = Some(format!("t_end = {t_end} is before t_sep = {t_sep}"));
    }
    Ok(Trajectory { times, positions, branch, steps: stepper.steps, rejected_steps: stepper.rejected, diagnostics })
}

/// Position at `t_end`, or `None` if the integrator stalls.
pub fn flow(p: &PacketPair, x0: f64, t_end: f64) -> Option<f64> {
    let mut stepper = Stepper { p, h: 1e-2, steps: 0, rejected: 0 };
    stepper.advance(x0, 0.0, t_end).ok()
}

fn final_branch(p: &PacketPair, x0: f64, t_end: f64) -> Option<usize> {
    flow(p, x0, t_end).map(|x| nearest_branch(p, x, t_end))
}

/// Tabulated density with a trapezoid CDF for inverse-CDF sampling.
struct Grid {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl Grid {
    fn new<F: Fn(f64) -> f64>(f: F, (lo, hi): (f64, f64)) -> Self {
        let h = (hi - lo) / (GRID_POINTS - 1) as f64;
        let xs: Vec<f64> = (0..GRID_POINTS).map(|i| lo + i as f64 * h).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
        let mut cdf = Vec::with_capacity(GRID_POINTS);
        cdf.push(0.0);
        for i in 1..GRID_POINTS {
            cdf.push(cdf[i - 1] + 0.5 * h * (ys[i - 1] + ys[i]));
        }
        let total = *cdf.last().unwrap();
        Grid { xs, cdf, total }
    }

    /// `x` with `CDF(x) = u · total`, linear between grid points.
    fn quantile(&self, u: f64) -> f64 {
        let target = u * self.total;
        let i = self.cdf.partition_point(|&c| c < target).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let f = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + f * (self.xs[i] - self.xs[i - 1])
    }

    /// Normalized mass above `x`.
    fn upper_mass(&self, x: f64) -> f64 {
        let i = self.xs.partition_point(|&g| g < x).clamp(1, self.xs.len() - 1);
        let (x0, x1) = (self.xs[i - 1], self.xs[i]);
        let f = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        let c = self.cdf[i - 1] + f * (self.cdf[i] - self.cdf[i - 1]);
        1.0 - c / self.total
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialDensity {
    /// `|ψ(x,0)|²`.
    Equilibrium,
    /// `|ψ(x − shift, 0)|²`.
    Shifted { shift: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InitialDensity {
    fn grid(&self, p: &PacketPair) -> Result<Grid> {
        let (lo, hi) = p.grid_range(0.0);
        Ok(match *self {
            InitialDensity::Equilibrium => Grid::new(|x| p.density(x, 0.0), (lo, hi)),
            InitialDensity::Shifted { shift } => Grid::new(|x| p.density(x - shift, 0.0), (lo + shift, hi + shift)),
            InitialDensity::Uniform { lo, hi } => {
                if !(hi > lo) {
                    return Err(invalid("uniform density needs hi > lo"));
                }
                Grid::new(|_| 1.0, (lo, hi))
            }
        })
    }
}

/// Initial positions drawn by inverse CDF, one derived seed per sample.
pub fn sample_initial(p: &PacketPair, density: &InitialDensity, samples: usize, seed: u64) -> Result<Vec<f64>> {
    let grid = density.grid(p)?;
    Ok((0..samples)
        .map(|i| {
            let u: f64 = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64)).random();
            grid.quantile(u)
        })
        .collect())
}

/// Initial position separating the two basins, found by bisection on the
/// final assignment (branch with the larger velocity lies to the right).
pub fn basin_boundary(p: &PacketPair, t_end: f64) -> Result<f64> {
    let (mut lo, mut hi) = p.grid_range(0.0);
    let right = if p.v[0] >= p.v[1] { 1 } else { 2 };
    let is_right = |x: f64| final_branch(p, x, t_end).map(|b| b == right);
    if is_right(lo) != Some(false) || is_right(hi) != Some(true) {
        return Err(Error::Degenerate("no basin boundary inside the sampling window".into()));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        match is_right(mid) {
            Some(true) => hi = mid,
            Some(false) => lo = mid,
            None => return Err(Error::Degenerate(format!("integration stalled at x0 = {mid}"))),
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivarianceReport {
    pub packet: PacketPair,
    pub density: InitialDensity,
    pub samples: usize,
    pub seed: u64,
    pub t_end: f64,
    pub grid_points: usize,
    pub counts: [u64; 2],
    pub unresolved: u64,
    pub fractions: [f64; 2],
    /// `(|a_1|², |a_2|²)`.
    pub targets: [f64; 2],
    pub sigmas: [f64; 2],
    pub z_scores: [f64; 2],
    pub within_three_sigma: bool,
    /// Initial position separating the basins.
    pub boundary: Option<f64>,
    /// `|ψ(x,0)|²` mass of each basin by quadrature.
    pub basin_mass: Option<[f64; 2]>,
    /// Mass of each basin under the sampling density.
    pub sampling_basin_mass: Option<[f64; 2]>,
}

pub fn equivariance_report(p: &PacketPair, samples: usize, seed: u64, density: InitialDensity) -> Result<EquivarianceReport> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let t_end = p.t_sep()?;
    let xs = sample_initial(p, &density, samples, seed)?;
    let branches: Vec<Option<usize>> = xs.par_iter().map(|&x| final_branch(p, x, t_end)).collect();
    let mut counts = [0u64; 2];
    let mut unresolved = 0;
    for b in &branches {
        match b {
            Some(k) => counts[k - 1] += 1,
            None => unresolved += 1,
        }
    }
    let n = samples as f64;
    let fractions = [counts[0] as f64 / n, counts[1] as f64 / n];
    let targets = p.weights();
    let sigmas = targets.map(|q| (q * (1.0 - q) / n).sqrt());
    let z = |k: usize| {
        let d = fractions[k] - targets[k];
        if sigmas[k] > 0.0 {
            d / sigmas[k]
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        }
    };
    let z_scores = [z(0), z(1)];
    let boundary = if targets[0] > 0.0 && targets[1] > 0.0 { basin_boundary(p, t_end).ok() } else { None };
    let right = if p.v[0] >= p.v[1] { 0 } else { 1 };
    let split = |m: f64| {
        let mut out = [0.0; 2];
        out[right] = m;
        out[1 - right] = 1.0 - m;
        out
    };
    let basin_mass = boundary.map(|b| split(Grid::new(|x| p.density(x, 0.0), p.grid_range(0.0)).upper_mass(b)));
    let sampling_basin_mass = match boundary {
        Some(b) => Some(split(density.grid(p)?.upper_mass(b))),
        None => None,
    };
    Ok(EquivarianceReport {
        packet: *p,
        density,
        samples,
        seed,
        t_end,
        grid_points: GRID_POINTS,
        counts,
        unresolved,
        fractions,
        targets,
        sigmas,
        z_scores,
        within_three_sigma: unresolved == 0 && z_scores.iter().all(|z| z.abs() <= 3.0),
        boundary,
        basin_mass,
        sampling_basin_mass,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct NoCrossingReport {
    pub pairs: usize,
    pub sampled_times: usize,
    pub violations: usize,
    /// Smallest `x_b(t) − x_a(t)` seen.
    pub min_gap: f64,
    pub stalled: usize,
}

/// Integrate `pairs` neighbouring pairs from the equilibrium cloud and check
/// that their order is preserved at every sampled time.
pub fn no_crossing_check(p: &PacketPair, pairs: usize, dt: f64, seed: u64) -> Result<NoCrossingReport> {
    let t_end = p.t_sep()?;
    let mut xs = sample_initial(p, &InitialDensity::Equilibrium, 2 * pairs, seed)?;
    xs.sort_by(f64::total_cmp);
    let results: Vec<Result<(usize, f64, bool)>> = xs
        .par_chunks(2)
        .map(|c| {
            let (lo, hi) = (c[0].min(c[1]), c[0].max(c[1]));
            let a = integrate_trajectory(p, lo, dt, t_end)?;
            let b = integrate_trajectory(p, hi, dt, t_end)?;
            let stalled = a.diagnostics.is_some() || b.diagnostics.is_some();
            let mut bad = 0;
            let mut gap = f64::INFINITY;
            for (xa, xb) in a.positions.iter().zip(&b.positions) {
                gap = gap.min(xb - xa);
                if lo < hi && xa >= xb {
                    bad += 1;
                }
            }
            Ok((bad, gap, stalled))
        })
        .collect();
    let mut violations = 0;
    let mut min_gap = f64::INFINITY;
    let mut stalled = 0;
    for r in results {
        let (bad, gap, s) = r?;
        violations += bad;
        min_gap = min_gap.min(gap);
        stalled += s as usize;
    }
    Ok(NoCrossingReport { pairs, sampled_times: (t_end / dt).ceil() as usize + 1, violations, min_gap, stalled })
}

#[derive(Clone, Debug, Serialize)]
pub struct DensityTransportReport {
    pub t: f64,
    pub samples: usize,
    pub bins: usize,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub pass: bool,
}

/// Evolve an equilibrium cloud to `t` and compare with `|ψ(x,t)|²` on
/// equal-probability bins.
pub fn density_transport(p: &PacketPair, t: f64, samples: usize, bins: usize, seed: u64) -> Result<DensityTransportReport> {
    if bins < 2 || samples < bins {
        return Err(invalid("need at least two bins and one sample per bin"));
    }
    let xs = sample_initial(p, &InitialDensity::Equilibrium, samples, seed)?;
    let finals: Vec<Option<f64>> = xs.par_iter().map(|&x| flow(p, x, t)).collect();
    if finals.iter().any(Option::is_none) {
        return Err(Error::Degenerate("integration stalled during transport".into()));
    }
    let grid = Grid::new(|x| p.density(x, t), p.grid_range(t));
    let edges: Vec<f64> = (1..bins).map(|i| grid.quantile(i as f64 / bins as f64)).collect();
    let mut counts = vec![0u64; bins];
    for x in finals.into_iter().flatten() {
        counts[edges.partition_point(|&e| e < x)] += 1;
    }
    let expected = samples as f64 / bins as f64;
    let chi2: f64 = counts.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let dof = bins - 1;
    let dist = ChiSquared::new(dof as f64).map_err(|e| invalid(e.to_string()))?;
    let p_value = dist.sf(chi2);
    Ok(DensityTransportReport { t, samples, bins, chi2, dof, p_value, pass: p_value > 0.01 })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContextualityProbe {
    pub x0: f64,
    pub delta: f64,
    /// Assignment with both branch centers moved by `+delta`.
    pub plus: Option<usize>,
    /// Assignment with both branch centers moved by `−delta`.
    pub minus: Option<usize>,
    pub flipped: bool,
}

pub fn contextuality_probe(p: &PacketPair, x0: f64, delta: f64) -> Result<ContextualityProbe> {
    let (plus_p, minus_p) = (p.shifted(delta), p.shifted(-delta));
    let t_end = p.t_sep()?.max(plus_p.t_sep()?).max(minus_p.t_sep()?);
    let plus = final_branch(&plus_p, x0, t_end);
    let minus = final_branch(&minus_p, x0, t_end);
    Ok(ContextualityProbe {
        x0,
        delta,
        plus,
        minus,
        flipped: plus.is_some() && minus.is_some() && plus != minus,
    })
}
