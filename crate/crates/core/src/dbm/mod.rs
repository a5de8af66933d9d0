//! β-Dyson Brownian motion
//!
//! dλᵢ = √(2/(βn))·dBᵢ + (1/n)·Σ_{j≠i} dt/(λᵢ − λⱼ),
//!
//! with particles frozen at ±∞ allowed (they never move and exert no force, but count
//! in n). Two integrators are provided:
//!
//! * [`Scheme::Explicit`]: Euler–Maruyama with dyadic sub-stepping; a substep is
//!   accepted when every displacement is at most 0.4 of the particle's smallest
//!   adjacent gap, after which positions are re-sorted.
//! * [`Scheme::SemiImplicit`]: the stiff nearest-neighbour repulsion is taken at the
//!   end of the substep and the remaining far-field drift at the start,
//!   λ′ − h·near(λ′) = λ + h·far(λ) + σ·ΔW. The left side is the proximal map of a
//!   strictly convex log-barrier on adjacent gaps, so λ′ is unique and strictly
//!   ordered for every noise draw; Newton on the tridiagonal system solves it in O(n)
//!   per iteration. The explicit far field needs h ≤ n / max_i Σ_{|j−i|≥2} (λᵢ − λⱼ)⁻²;
//!   larger substeps are halved, and when that would take more than
//!   [`FULL_IMPLICIT_HALVINGS`] halvings (a tight cluster such as the δ₀ fan) the
//!   whole drift is taken implicitly instead, λ′ − h·drift(λ′) = λ + σ·ΔW.
//!
//! Both consume Brownian increments from a [`BrownianTree`] so rejected substeps are
//! refined by Brownian bridges and coupled systems share increments exactly.

pub mod ensemble;
pub mod noise;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{ExtendedReal, FiniteMeasure};

pub use ensemble::{beta_ensemble_sample, beta_ensemble_top};
pub use noise::{BrownianTree, NoiseStream};

/// Default number of allowed halvings below the initial substep.
pub const MAX_HALVINGS: u32 = 20;
/// Largest accepted displacement as a fraction of the smallest adjacent gap.
pub const DISPLACEMENT_CAP: f64 = 0.4;
/// Width of the equispaced fan replacing a point mass in the initial data.
pub const DELTA_FAN_WIDTH: f64 = 1e-9;

/// Stability halvings after which a substep switches to the fully implicit solve.
pub const FULL_IMPLICIT_HALVINGS: u32 = 6;

const COLLISION_GAP: f64 = 1e-14;
const FULL_SOLVE_MAX_ITER: usize = 200;
const NEAR_SOLVE_MAX_ITER: usize = 100;

/// Time-stepping scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheme {
    /// Sub-stepped explicit Euler–Maruyama with a 0.4-gap displacement cap.
    #[default]
    Explicit,
    /// Nearest-neighbour implicit, far-field explicit Euler with substeps no longer
    /// than `h_max`.
    SemiImplicit { h_max: f64 },
}

/// Counters accumulated by the integrator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    pub substeps: u64,
    pub rejections: u64,
    pub crossings: u64,
    pub newton_iterations: u64,
    pub full_implicit_steps: u64,
    pub max_depth: u32,
}

impl StepStats {
    pub fn merge(&mut self, other: &StepStats) {
        self.substeps += other.substeps;
        self.rejections += other.rejections;
        self.crossings += other.crossings;
        self.newton_iterations += other.newton_iterations;
        self.full_implicit_steps += other.full_implicit_steps;
        self.max_depth = self.max_depth.max(other.max_depth);
    }
}

/// Ordered particle configuration λ₁ ≥ … ≥ λₙ.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    plus_frozen: usize,
    finite: Vec<f64>,
    minus_frozen: usize,
    beta: f64,
    time: f64,
}

impl ParticleSystem {
    /// Builds a system from non-increasing positions (+∞ prefix, strictly decreasing
    /// finite block, −∞ suffix).
    pub fn new(positions: &[ExtendedReal], beta: f64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidArgument("no particles".into()));
        }
        if !(beta >= 1.0) {
            return Err(Error::InvalidArgument(format!("beta must be at least 1, got {beta}")));
        }
        let plus = positions.iter().take_while(|&&x| x == f64::INFINITY).count();
        let minus = positions.iter().rev().take_while(|&&x| x == f64::NEG_INFINITY).count();
        if plus + minus > positions.len() {
            return Err(Error::InvalidArgument("inconsistent frozen particles".into()));
        }
        let finite: Vec<f64> = positions[plus..positions.len() - minus].to_vec();
        for w in finite.windows(2) {
            if !(w[0] > w[1]) {
                return Err(Error::InvalidArgument(format!(
                    "positions not strictly decreasing at {} , {}",
                    w[0], w[1]
                )));
            }
        }
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("frozen particles must be a prefix (+inf) or suffix (-inf)".into()));
        }
        Ok(Self { plus_frozen: plus, finite, minus_frozen: minus, beta, time: 0.0 })
    }

    /// Sorts the finite positions first; frozen entries may appear anywhere.
    pub fn from_unsorted(positions: &[ExtendedReal], beta: f64) -> Result<Self> {
        let mut p = positions.to_vec();
        if p.iter().any(|x| x.is_nan()) {
            return Err(Error::InvalidArgument("NaN position".into()));
        }
        p.sort_by(|a, b| b.total_cmp(a));
        Self::new(&p, beta)
    }

    /// n particles on an equispaced fan of width `DELTA_FAN_WIDTH` ending at `top`,
    /// standing in for the point mass at `top`.
    pub fn delta_fan(n: usize, top: f64, beta: f64) -> Result<Self> {
        let p: Vec<f64> = if n == 1 {
            vec![top]
        } else {
            (0..n).map(|i| top - DELTA_FAN_WIDTH * i as f64 / (n - 1) as f64).collect()
        };
        Self::new(&p, beta)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn positions(&self) -> Vec<ExtendedReal> {
        let mut p = Vec::with_capacity(self.n_total());
        p.extend(std::iter::repeat_n(f64::INFINITY, self.plus_frozen));
        p.extend_from_slice(&self.finite);
        p.extend(std::iter::repeat_n(f64::NEG_INFINITY, self.minus_frozen));
        p
    }

    /// Finite block, strictly decreasing.
    pub fn finite(&self) -> &[f64] {
        &self.finite
    }

    /// 0-based global index of the first finite particle.
    pub fn first_finite_index(&self) -> usize {
        self.plus_frozen
    }

    pub fn n_total(&self) -> usize {
        self.plus_frozen + self.finite.len() + self.minus_frozen
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Diffusion coefficient √(2/(βn)); zero for β = ∞.
    pub fn noise_scale(&self) -> f64 {
        if self.beta.is_infinite() {
            0.0
        } else {
            (2.0 / (self.beta * self.n_total() as f64)).sqrt()
        }
    }

    /// Empirical measure with weight 1/n per particle.
    pub fn empirical_measure(&self) -> Result<FiniteMeasure> {
        FiniteMeasure::empirical(&self.positions(), self.n_total())
    }

    /// Largest finite particle.
    pub fn top(&self) -> Option<f64> {
        self.finite.first().copied()
    }

    /// Empirical Stieltjes transform (1/n)·Σ 1/(λᵢ − z) over finite particles.
    pub fn empirical_stieltjes(&self, z: num_complex::Complex64) -> num_complex::Complex64 {
        let mut acc = crate::stieltjes::ComplexSum::default();
        for &x in &self.finite {
            acc.add(num_complex::Complex64::new(x - z.re, -z.im).inv());
        }
        acc.value() / self.n_total() as f64
    }
}

fn check_gaps(x: &[f64]) -> Result<()> {
    let scale = x.first().map_or(1.0, |a| a.abs()).max(x.last().map_or(1.0, |a| a.abs())).max(1.0);
    for (k, w) in x.windows(2).enumerate() {
        let gap = w[0] - w[1];
        if !(gap >= COLLISION_GAP * scale) {
            return Err(Error::Collision { index: k, gap });
        }
    }
    Ok(())
}

/// Σ_{j≠i} 1/(xᵢ − xⱼ) into `d`.
fn pair_sums(x: &[f64], d: &mut [f64]) {
    let n = x.len();
    d.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let xi = x[i];
        let mut acc = [0.0f64; 4];
        let tail = &x[i + 1..];
        let dt = &mut d[i + 1..];
        let mut chunks = tail.chunks_exact(4);
        let mut dchunks = dt.chunks_exact_mut(4);
        for (xc, dc) in (&mut chunks).zip(&mut dchunks) {
            for l in 0..4 {
                let r = 1.0 / (xi - xc[l]);
                acc[l] += r;
                dc[l] -= r;
            }
        }
        for (&xj, dj) in chunks.remainder().iter().zip(dchunks.into_remainder()) {
            let r = 1.0 / (xi - xj);
            acc[0] += r;
            *dj -= r;
        }
        d[i] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
}

#[cfg(test)]
/// Σ_{j≠i} 1/(xᵢ − xⱼ) into `d` and Σ_{j≠i} 1/(xᵢ − xⱼ)² into `s`.
fn pair_sums_with_curvature(x: &[f64], d: &mut [f64], s: &mut [f64]) {
    let n = x.len();
    d.iter_mut().for_each(|v| *v = 0.0);
    s.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n {
        let xi = x[i];
        let mut acc = [0.0f64; 4];
        let mut acc2 = [0.0f64; 4];
        let tail = &x[i + 1..];
        let (dh, dt) = d.split_at_mut(i + 1);
        let (sh, st) = s.split_at_mut(i + 1);
        let mut chunks = tail.chunks_exact(4);
        let mut dchunks = dt.chunks_exact_mut(4);
        let mut schunks = st.chunks_exact_mut(4);
        for ((xc, dc), sc) in (&mut chunks).zip(&mut dchunks).zip(&mut schunks) {
            for l in 0..4 {
                let r = 1.0 / (xi - xc[l]);
                let r2 = r * r;
                acc[l] += r;
                acc2[l] += r2;
                dc[l] -= r;
                sc[l] += r2;
            }
        }
        for ((&xj, dj), sj) in chunks.remainder().iter().zip(dchunks.into_remainder()).zip(schunks.into_remainder()) {
            let r = 1.0 / (xi - xj);
            acc[0] += r;
            acc2[0] += r * r;
            *dj -= r;
            *sj += r * r;
        }
        dh[i] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
        sh[i] += (acc2[0] + acc2[1]) + (acc2[2] + acc2[3]);
    }
}

/// Drift vector (1/n)·Σ_{j≠i, finite} 1/(λᵢ − λⱼ), zero for frozen particles.
pub fn drift(sys: &ParticleSystem) -> Result<Vec<f64>> {
    check_gaps(&sys.finite)?;
    let mut d = vec![0.0; sys.finite.len()];
    pair_sums(&sys.finite, &mut d);
    let inv_n = 1.0 / sys.n_total() as f64;
    let mut out = vec![0.0; sys.n_total()];
    for (k, v) in d.into_iter().enumerate() {
        out[sys.plus_frozen + k] = v * inv_n;
    }
    Ok(out)
}

#[derive(Debug, Default, Clone)]
struct Workspace {
    drift: Vec<f64>,
    drift_valid: bool,
    proposal: Vec<f64>,
    y: Vec<f64>,
    g: Vec<f64>,
    s: Vec<f64>,
    cand: Vec<f64>,
    g_cand: Vec<f64>,
    s_cand: Vec<f64>,
    delta: Vec<f64>,
    c_prime: Vec<f64>,
    hermite: Vec<f64>,
    wmat: Vec<f64>,
    tri_d: Vec<f64>,
    tri_c: Vec<f64>,
    cg_r: Vec<f64>,
    cg_z: Vec<f64>,
    cg_p: Vec<f64>,
    cg_q: Vec<f64>,
    far: Vec<f64>,
    far_s: Vec<f64>,
    far_curvature: f64,
}

impl Workspace {
    fn resize(&mut self, m: usize) {
        for v in [
            &mut self.drift,
            &mut self.proposal,
            &mut self.y,
            &mut self.g,
            &mut self.s,
            &mut self.cand,
            &mut self.g_cand,
            &mut self.s_cand,
            &mut self.delta,
            &mut self.c_prime,
            &mut self.far,
            &mut self.far_s,
            &mut self.tri_d,
            &mut self.tri_c,
            &mut self.cg_r,
            &mut self.cg_z,
            &mut self.cg_p,
            &mut self.cg_q,
        ] {
            v.resize(m, 0.0);
        }
    }
}

/// Time integrator holding the scheme and reusable buffers.
#[derive(Debug, Clone)]
pub struct Integrator {
    pub scheme: Scheme,
    pub max_halvings: u32,
    work: Vec<Workspace>,
    dw: Vec<f64>,
}

impl Integrator {
    pub fn new(scheme: Scheme) -> Self {
        Self { scheme, max_halvings: MAX_HALVINGS, work: Vec::new(), dw: Vec::new() }
    }

    /// One macro step of length `dt` using the increments addressed by `noise`.
    pub fn step(&mut self, sys: &mut ParticleSystem, dt: f64, noise: &NoiseStream) -> Result<StepStats> {
        self.advance(&mut [sys], dt, noise)
    }

    /// One macro step of length `dt` for several systems driven by the same increments.
    /// A substep is committed only if it is acceptable for every system.
    pub fn advance(&mut self, systems: &mut [&mut ParticleSystem], dt: f64, noise: &NoiseStream) -> Result<StepStats> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidArgument(format!("step length must be positive, got {dt}")));
        }
        let n = systems[0].n_total();
        let beta = systems[0].beta;
        if systems.iter().any(|s| s.n_total() != n || s.beta != beta) {
            return Err(Error::InvalidArgument("coupled systems need equal n and beta".into()));
        }
        if self.work.len() < systems.len() {
            self.work.resize(systems.len(), Workspace::default());
        }
        for (w, s) in self.work.iter_mut().zip(systems.iter()) {
            w.resize(s.finite.len());
            w.drift_valid = false;
            check_gaps(&s.finite)?;
        }
        let t0 = systems[0].time;
        let base_depth = match self.scheme {
            Scheme::Explicit => 0,
            Scheme::SemiImplicit { h_max } => {
                if !(h_max > 0.0) {
                    return Err(Error::InvalidArgument("h_max must be positive".into()));
                }
                ((dt / h_max).log2().ceil().max(0.0) as u32).min(40)
            }
        };
        let floor_depth = base_depth + self.max_halvings;
        let mut stats = StepStats::default();
        let mut tree = BrownianTree::new(*noise, dt, n);
        let (mut depth, mut pos) = (base_depth, 0u64);
        let mut elapsed = 0.0;
        self.dw.resize(n, 0.0);
        loop {
            let h = dt / (1u64 << depth) as f64;
            self.dw.copy_from_slice(tree.increment(depth, pos));
            let mut ok = true;
            for (k, sys) in systems.iter().enumerate() {
                let w = &mut self.work[k];
                let accepted = match self.scheme {
                    Scheme::Explicit => propose_explicit(sys, h, &self.dw, w),
                    Scheme::SemiImplicit { .. } => match propose_semi_implicit(sys, h, &self.dw, w) {
                        Proposal::Split(it) => {
                            stats.newton_iterations += it as u64;
                            true
                        }
                        Proposal::Full(it) => {
                            stats.newton_iterations += it as u64;
                            stats.full_implicit_steps += 1;
                            true
                        }
                        Proposal::Reject => false,
                    },
                };
                if !accepted {
                    ok = false;
                    break;
                }
            }
            if ok {
                // re-sort and require strict order before committing anything
                let mut crossings = 0u64;
                for w in self.work.iter_mut().take(systems.len()) {
                    if w.proposal.windows(2).any(|p| !(p[0] > p[1])) {
                        crossings += 1;
                        w.proposal.sort_by(|a, b| b.total_cmp(a));
                        if w.proposal.windows(2).any(|p| !(p[0] > p[1])) {
                            ok = false;
                        }
                    }
                }
                if ok {
                    for (k, sys) in systems.iter_mut().enumerate() {
                        let w = &mut self.work[k];
                        std::mem::swap(&mut sys.finite, &mut w.proposal);
                        w.drift_valid = false;
                    }
                    elapsed += h;
                    for sys in systems.iter_mut() {
                        sys.time = t0 + elapsed;
                    }
                    stats.crossings += crossings;
                    stats.substeps += 1;
                    stats.max_depth = stats.max_depth.max(depth - base_depth);
                    pos += 1;
                    while depth > base_depth && pos % 2 == 0 {
                        pos /= 2;
                        depth -= 1;
                    }
                    if pos == 1u64 << depth {
                        break;
                    }
                    continue;
                }
            }
            stats.rejections += 1;
            if depth >= floor_depth {
                return Err(Error::StepFailure { time: t0 + elapsed });
            }
            depth += 1;
            pos *= 2;
        }
        for sys in systems.iter_mut() {
            sys.time = t0 + dt;
        }
        Ok(stats)
    }
}

fn propose_explicit(sys: &ParticleSystem, h: f64, dw: &[f64], w: &mut Workspace) -> bool {
    let x = &sys.finite;
    let m = x.len();
    if !w.drift_valid {
        pair_sums(x, &mut w.drift);
        let inv_n = 1.0 / sys.n_total() as f64;
        w.drift.iter_mut().for_each(|d| *d *= inv_n);
        w.drift_valid = true;
    }
    let sigma = sys.noise_scale();
    let off = sys.plus_frozen;
    for i in 0..m {
        let disp = h * w.drift[i] + sigma * dw[off + i];
        let mut gap = f64::INFINITY;
        if i > 0 {
            gap = gap.min(x[i - 1] - x[i]);
        }
        if i + 1 < m {
            gap = gap.min(x[i] - x[i + 1]);
        }
        if !(disp.abs() <= DISPLACEMENT_CAP * gap) {
            return false;
        }
        w.proposal[i] = x[i] + disp;
    }
    true
}

enum Proposal {
    Split(usize),
    Full(usize),
    Reject,
}

/// Σ over |j − i| ≥ 2 of 1/(xᵢ − xⱼ) into `d`; returns max_i Σ_{|j−i|≥2} 1/(xᵢ − xⱼ)².
fn far_sums(x: &[f64], d: &mut [f64], s: &mut [f64]) -> f64 {
    let n = x.len();
    d.iter_mut().for_each(|v| *v = 0.0);
    s.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..n.saturating_sub(2) {
        let xi = x[i];
        let mut acc = [0.0f64; 4];
        let mut acc2 = [0.0f64; 4];
        let (dh, dt) = d.split_at_mut(i + 2);
        let (sh, st) = s.split_at_mut(i + 2);
        let mut chunks = x[i + 2..].chunks_exact(4);
        let mut dchunks = dt.chunks_exact_mut(4);
        let mut schunks = st.chunks_exact_mut(4);
        for ((xc, dc), sc) in (&mut chunks).zip(&mut dchunks).zip(&mut schunks) {
            for l in 0..4 {
                let r = 1.0 / (xi - xc[l]);
                let r2 = r * r;
                acc[l] += r;
                acc2[l] += r2;
                dc[l] -= r;
                sc[l] += r2;
            }
        }
        for ((&xj, dj), sj) in chunks.remainder().iter().zip(dchunks.into_remainder()).zip(schunks.into_remainder()) {
            let r = 1.0 / (xi - xj);
            acc[0] += r;
            acc2[0] += r * r;
            *dj -= r;
            *sj += r * r;
        }
        dh[i] += (acc[0] + acc[1]) + (acc[2] + acc[3]);
        sh[i] += (acc2[0] + acc2[1]) + (acc2[2] + acc2[3]);
    }
    s.iter().fold(0.0, |a, &b| a.max(b))
}

fn propose_semi_implicit(sys: &ParticleSystem, h: f64, dw: &[f64], w: &mut Workspace) -> Proposal {
    let x = &sys.finite;
    let m = x.len();
    let n = sys.n_total() as f64;
    if !w.drift_valid {
        w.far_curvature = far_sums(x, &mut w.far, &mut w.far_s);
        w.drift_valid = true;
    }
    // explicit far field is stable for h·λ_max(far Laplacian)/n ≤ 2; Gershgorin gives
    // λ_max ≤ 2·max row sum, and we keep a factor 2 margin
    let h_stable = if w.far_curvature > 0.0 { n / w.far_curvature } else { f64::INFINITY };
    if h > h_stable {
        let halvings_needed = (h / h_stable).log2().ceil();
        if halvings_needed > FULL_IMPLICIT_HALVINGS as f64 {
            return match propose_implicit(sys, h, dw, w) {
                Some(it) => Proposal::Full(it),
                None => Proposal::Reject,
            };
        }
        return Proposal::Reject;
    }
    let sigma = sys.noise_scale();
    let off = sys.plus_frozen;
    let mut ymax: f64 = 0.0;
    for i in 0..m {
        w.y[i] = x[i] + h * w.far[i] / n + sigma * dw[off + i];
        ymax = ymax.max(w.y[i].abs());
    }
    let y = std::mem::take(&mut w.y);
    let out = solve_near(x, &y, h / n, ymax, w);
    w.y = y;
    match out {
        Some(it) => Proposal::Split(it),
        None => Proposal::Reject,
    }
}

/// Newton solve of λ − c·near(λ) = y, near(λ)ᵢ = Σ_{j=i±1} 1/(λᵢ − λⱼ), from λ = x.
/// The Jacobian I + c·T (T the gap-weighted path Laplacian) is tridiagonal and SPD.
fn solve_near(x: &[f64], y: &[f64], c: f64, ymax: f64, w: &mut Workspace) -> Option<usize> {
    let m = x.len();
    if m == 1 {
        w.proposal[0] = y[0];
        return Some(0);
    }
    let tol = 1e-13 * (1.0 + ymax);
    let residual = |lam: &[f64], g: &mut [f64], inv_gap2: &mut [f64]| -> f64 {
        let mut norm2 = 0.0;
        let mut left = 0.0;
        for i in 0..m {
            let right = if i + 1 < m {
                let r = 1.0 / (lam[i] - lam[i + 1]);
                inv_gap2[i] = r * r;
                r
            } else {
                0.0
            };
            g[i] = lam[i] - c * (right - left) - y[i];
            left = right;
            norm2 += g[i] * g[i];
        }
        norm2
    };
    w.proposal.copy_from_slice(x);
    let mut norm2 = residual(&w.proposal, &mut w.g, &mut w.s_cand);
    for it in 0..NEAR_SOLVE_MAX_ITER {
        let gmax = w.g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if gmax <= tol {
            return Some(it);
        }
        // Thomas algorithm on (I + c·T) δ = −g with T_{i,i+1} = −1/gapᵢ²
        let q = &w.s_cand;
        let diag = |i: usize| 1.0 + c * (if i > 0 { q[i - 1] } else { 0.0 } + if i + 1 < m { q[i] } else { 0.0 });
        let mut denom = diag(0);
        let mut c_prev = -c * q[0] / denom;
        w.c_prime[0] = c_prev;
        w.delta[0] = -w.g[0] / denom;
        for i in 1..m {
            let a = -c * q[i - 1];
            denom = diag(i) - a * c_prev;
            c_prev = if i + 1 < m { -c * q[i] / denom } else { 0.0 };
            w.c_prime[i] = c_prev;
            w.delta[i] = (-w.g[i] - a * w.delta[i - 1]) / denom;
        }
        for i in (0..m - 1).rev() {
            w.delta[i] -= w.c_prime[i] * w.delta[i + 1];
        }
        let lam = &w.proposal;
        let mut alpha_max = f64::INFINITY;
        for i in 0..m - 1 {
            let closing = w.delta[i + 1] - w.delta[i];
            if closing > 0.0 {
                alpha_max = alpha_max.min((lam[i] - lam[i + 1]) / closing);
            }
        }
        let mut alpha = if alpha_max.is_finite() { (0.9 * alpha_max).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..m {
                w.cand[i] = w.proposal[i] + alpha * w.delta[i];
            }
            if w.cand.windows(2).all(|p| p[0] > p[1]) {
                let n2 = residual(&w.cand, &mut w.g_cand, &mut w.s);
                if n2 < norm2 {
                    std::mem::swap(&mut w.proposal, &mut w.cand);
                    std::mem::swap(&mut w.g, &mut w.g_cand);
                    std::mem::swap(&mut w.s_cand, &mut w.s);
                    norm2 = n2;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            let gmax = w.g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            return if gmax <= 1e3 * tol { Some(it) } else { None };
        }
    }
    None
}

/// Newton solve of λ′ − h·drift(λ′) = y with y = λ + σ·ΔW. The Jacobian I + c·L
/// (L the Laplacian with weights (λᵢ − λⱼ)⁻², c = h/n) is dense and SPD; each Newton
/// system is solved inexactly by conjugate gradients preconditioned with its
/// tridiagonal part. Returns Newton plus CG iterations, or `None` on failure.
fn propose_implicit(sys: &ParticleSystem, h: f64, dw: &[f64], w: &mut Workspace) -> Option<usize> {
    let x = &sys.finite;
    let m = x.len();
    let sigma = sys.noise_scale();
    let off = sys.plus_frozen;
    let c = h / sys.n_total() as f64;
    let mut ymax: f64 = 0.0;
    for i in 0..m {
        w.y[i] = x[i] + sigma * dw[off + i];
        ymax = ymax.max(w.y[i].abs());
    }
    if m == 1 {
        w.proposal[0] = w.y[0];
        return Some(0);
    }
    let tol = 1e-13 * (1.0 + ymax);
    if ray_start(x, &w.y, c, &mut w.proposal) > 2.0 {
        // strong expansion: the cluster is tighter than the step's equilibrium scale,
        // whose shape is given by Hermite zeros
        if w.hermite.len() != m {
            w.hermite = hermite_zeros(m);
        }
        ray_start(&w.hermite, &w.y, c, &mut w.proposal);
    }
    w.wmat.resize(m * m, 0.0);
    let residual = |lam: &[f64], y: &[f64], d: &mut [f64], g: &mut [f64]| -> f64 {
        pair_sums(lam, d);
        let mut norm2 = 0.0;
        for i in 0..m {
            g[i] = lam[i] - c * d[i] - y[i];
            norm2 += g[i] * g[i];
        }
        norm2
    };
    let mut norm2 = residual(&w.proposal, &w.y, &mut w.drift, &mut w.g);
    let mut work = 0;
    for _ in 0..FULL_SOLVE_MAX_ITER {
        let gmax = w.g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if gmax <= tol {
            return Some(work);
        }
        work += 1;
        build_weights(&w.proposal, &mut w.wmat, &mut w.s);
        let eta = (gmax / (1.0 + ymax)).clamp(1e-10, 1e-2);
        work += pcg_newton(c, eta, w);
        let lam = &w.proposal;
        let mut alpha_max = f64::INFINITY;
        for i in 0..m - 1 {
            let closing = w.delta[i + 1] - w.delta[i];
            if closing > 0.0 {
                alpha_max = alpha_max.min((lam[i] - lam[i + 1]) / closing);
            }
        }
        let mut alpha = if alpha_max.is_finite() { (0.9 * alpha_max).min(1.0) } else { 1.0 };
        let mut accepted = false;
        for _ in 0..60 {
            for i in 0..m {
                w.cand[i] = w.proposal[i] + alpha * w.delta[i];
            }
            if w.cand.windows(2).all(|p| p[0] > p[1]) {
                let n2 = residual(&w.cand, &w.y, &mut w.g_cand, &mut w.c_prime);
                if n2 < norm2 {
                    std::mem::swap(&mut w.proposal, &mut w.cand);
                    std::mem::swap(&mut w.g, &mut w.c_prime);
                    norm2 = n2;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            let gmax = w.g.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
            return if gmax <= 1e3 * tol { Some(work) } else { None };
        }
    }
    None
}

/// Dense weights W_ij = (λᵢ − λⱼ)⁻² (zero diagonal) and row sums.
fn build_weights(lam: &[f64], wmat: &mut [f64], rows: &mut [f64]) {
    let m = lam.len();
    rows.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..m {
        wmat[i * m + i] = 0.0;
        let mut acc = 0.0;
        for j in i + 1..m {
            let r = 1.0 / (lam[i] - lam[j]);
            let r2 = r * r;
            wmat[i * m + j] = r2;
            acc += r2;
            rows[j] += r2;
        }
        rows[i] += acc;
    }
    for i in 0..m {
        for j in 0..i {
            wmat[i * m + j] = wmat[j * m + i];
        }
    }
}

/// Preconditioned CG for (I + c·(diag(rows) − W)) δ = −g to relative tolerance `eta`.
/// Uses `w.wmat`, `w.s` (row sums) and `w.g`; writes `w.delta`. Returns CG iterations.
fn pcg_newton(c: f64, eta: f64, w: &mut Workspace) -> usize {
    let m = w.g.len();
    // tridiagonal part factorised once: denominators in tri_d, multipliers in tri_c
    let offd = |wm: &[f64], i: usize| -c * wm[i * m + i + 1];
    let mut denom = 1.0 + c * w.s[0];
    w.tri_d[0] = denom;
    w.tri_c[0] = if m > 1 { offd(&w.wmat, 0) / denom } else { 0.0 };
    for i in 1..m {
        let a = offd(&w.wmat, i - 1);
        denom = 1.0 + c * w.s[i] - a * w.tri_c[i - 1];
        w.tri_d[i] = denom;
        w.tri_c[i] = if i + 1 < m { offd(&w.wmat, i) / denom } else { 0.0 };
    }
    let precondition = |wm: &[f64], tri_d: &[f64], tri_c: &[f64], r: &[f64], z: &mut [f64]| {
        z[0] = r[0] / tri_d[0];
        for i in 1..m {
            z[i] = (r[i] - offd(wm, i - 1) * z[i - 1]) / tri_d[i];
        }
        for i in (0..m - 1).rev() {
            z[i] -= tri_c[i] * z[i + 1];
        }
    };
    let apply = |wm: &[f64], rows: &[f64], v: &[f64], out: &mut [f64]| {
        for i in 0..m {
            let row = &wm[i * m..(i + 1) * m];
            let mut acc = [0.0f64; 4];
            let mut rc = row.chunks_exact(4);
            let mut vc = v.chunks_exact(4);
            for (a, b) in (&mut rc).zip(&mut vc) {
                for l in 0..4 {
                    acc[l] += a[l] * b[l];
                }
            }
            let mut tail = 0.0;
            for (a, b) in rc.remainder().iter().zip(vc.remainder()) {
                tail += a * b;
            }
            let wv = (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail;
            out[i] = v[i] + c * (rows[i] * v[i] - wv);
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for i in 0..m {
        w.delta[i] = 0.0;
        w.cg_r[i] = -w.g[i];
    }
    let b_norm = dot(&w.cg_r, &w.cg_r).sqrt();
    precondition(&w.wmat, &w.tri_d, &w.tri_c, &w.cg_r, &mut w.cg_z);
    w.cg_p.copy_from_slice(&w.cg_z);
    let mut rz = dot(&w.cg_r, &w.cg_z);
    let mut iters = 0;
    for _ in 0..4 * m.max(50) {
        iters += 1;
        apply(&w.wmat, &w.s, &w.cg_p, &mut w.cg_q);
        let pq = dot(&w.cg_p, &w.cg_q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for i in 0..m {
            w.delta[i] += alpha * w.cg_p[i];
            w.cg_r[i] -= alpha * w.cg_q[i];
        }
        if dot(&w.cg_r, &w.cg_r).sqrt() <= eta * b_norm {
            break;
        }
        precondition(&w.wmat, &w.tri_d, &w.tri_c, &w.cg_r, &mut w.cg_z);
        let rz_new = dot(&w.cg_r, &w.cg_z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            w.cg_p[i] = w.cg_z[i] + beta * w.cg_p[i];
        }
    }
    iters
}

/// Initial iterate ȳ + κ·(x − x̄), with κ minimising the proximal energy
/// ½|λ − y|² − c·Σ_{i<j} log(λᵢ − λⱼ) along that ray. Starting from a tight cluster
/// this jumps straight to the right scale.
fn ray_start(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) -> f64 {
    let m = x.len() as f64;
    let xbar = x.iter().sum::<f64>() / m;
    let ybar = y.iter().sum::<f64>() / m;
    let (mut dd, mut dy) = (0.0, 0.0);
    for (&xi, &yi) in x.iter().zip(y) {
        let d = xi - xbar;
        dd += d * d;
        dy += d * (yi - ybar);
    }
    let pairs = 0.5 * m * (m - 1.0);
    let kappa = (dy + (dy * dy + 4.0 * dd * c * pairs).sqrt()) / (2.0 * dd);
    for (o, &xi) in out.iter_mut().zip(x) {
        *o = ybar + kappa * (xi - xbar);
    }
    kappa
}

/// Zeros of the Hermite polynomial Hₘ, descending. They solve xᵢ = Σ_{j≠i} 1/(xᵢ − xⱼ),
/// the equilibrium of a cluster under the implicit step.
fn hermite_zeros(m: usize) -> Vec<f64> {
    let diag = vec![0.0; m];
    let off: Vec<f64> = (1..m).map(|k| (0.5 * k as f64).sqrt()).collect();
    let mut z = ensemble::tridiagonal_eigenvalues(&diag, &off);
    z.sort_by(|a, b| b.total_cmp(a));
    z
}

/// Snapshots of an evolution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<(f64, ParticleSystem)>,
    pub stats: StepStats,
}

impl Trajectory {
    /// Writes `time,index,position` rows (1-based index).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "time,index,position")?;
        for (t, sys) in &self.snapshots {
            for (k, x) in sys.positions().iter().enumerate() {
                let pos = if x.is_finite() {
                    crate::fmt17(*x)
                } else if *x > 0.0 {
                    "inf".into()
                } else {
                    "-inf".into()
                };
                writeln!(out, "{},{},{}", crate::fmt17(*t), k + 1, pos)?;
            }
        }
        Ok(())
    }
}

/// Macro-step boundaries from `t0` to `t0 + horizon` with the observation times inserted.
fn step_schedule(t0: f64, horizon: f64, macro_dt: f64, observers: &[f64]) -> Result<Vec<f64>> {
    if !(horizon >= 0.0) || !(macro_dt > 0.0) {
        return Err(Error::InvalidArgument("horizon must be nonnegative and macro_dt positive".into()));
    }
    let t1 = t0 + horizon;
    let eps = 1e-12 * (1.0 + t1.abs());
    for &o in observers {
        if o < t0 - eps || o > t1 + eps {
            return Err(Error::InvalidArgument(format!("observation time {o} outside [{t0}, {t1}]")));
        }
    }
    let mut pts = vec![t0];
    let steps = (horizon / macro_dt - 1e-9).ceil().max(0.0) as usize;
    for k in 1..steps {
        pts.push(t0 + k as f64 * macro_dt);
    }
    if horizon > 0.0 {
        pts.push(t1);
    }
    pts.extend(observers.iter().map(|&o| o.clamp(t0, t1)));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= eps);
    Ok(pts)
}

fn observer_hits(times: &[f64], observers: &[f64], eps: f64) -> Vec<bool> {
    times.iter().map(|&t| observers.iter().any(|&o| (o - t).abs() <= eps)).collect()
}

/// Evolves `sys` over `horizon`, recording snapshots at the observation times (or at
/// the final time if none are given). Macro step k uses noise counter `noise.counter + k`.
pub fn evolve(
    sys: &ParticleSystem,
    horizon: f64,
    macro_dt: f64,
    noise: NoiseStream,
    observers: &[f64],
    integrator: &mut Integrator,
) -> Result<Trajectory> {
    let (a, _) = evolve_many(std::slice::from_ref(sys), horizon, macro_dt, noise, observers, integrator)?;
    Ok(a.into_iter().next().unwrap())
}

/// Evolves two systems with identical Brownian increments.
pub fn evolve_coupled(
    a: &ParticleSystem,
    b: &ParticleSystem,
    horizon: f64,
    macro_dt: f64,
    noise: NoiseStream,
    observers: &[f64],
    integrator: &mut Integrator,
) -> Result<(Trajectory, Trajectory)> {
    let (mut trajs, _) = evolve_many(&[a.clone(), b.clone()], horizon, macro_dt, noise, observers, integrator)?;
    let tb = trajs.pop().unwrap();
    let ta = trajs.pop().unwrap();
    Ok((ta, tb))
}

fn evolve_many(
    systems: &[ParticleSystem],
    horizon: f64,
    macro_dt: f64,
    noise: NoiseStream,
    observers: &[f64],
    integrator: &mut Integrator,
) -> Result<(Vec<Trajectory>, StepStats)> {
    let t0 = systems[0].time;
    let schedule = step_schedule(t0, horizon, macro_dt, observers)?;
    let eps = 1e-12 * (1.0 + (t0 + horizon).abs());
    let hits = if observers.is_empty() {
        let mut h = vec![false; schedule.len()];
        *h.last_mut().unwrap() = true;
        h
    } else {
        observer_hits(&schedule, observers, eps)
    };
    let mut current: Vec<ParticleSystem> = systems.to_vec();
    let mut trajs: Vec<Trajectory> =
        systems.iter().map(|_| Trajectory { snapshots: Vec::new(), stats: StepStats::default() }).collect();
    let mut total = StepStats::default();
    if hits[0] {
        for (tr, s) in trajs.iter_mut().zip(&current) {
            tr.snapshots.push((schedule[0], s.clone()));
        }
    }
    for k in 1..schedule.len() {
        let dt = schedule[k] - schedule[k - 1];
        let stream = NoiseStream { counter: noise.counter + (k - 1) as u64, ..noise };
        let mut refs: Vec<&mut ParticleSystem> = current.iter_mut().collect();
        let st = integrator.advance(&mut refs, dt, &stream)?;
        for s in current.iter_mut() {
            s.time = schedule[k];
        }
        total.merge(&st);
        if hits[k] {
            for (tr, s) in trajs.iter_mut().zip(&current) {
                tr.snapshots.push((schedule[k], s.clone()));
            }
        }
    }
    for tr in trajs.iter_mut() {
        tr.stats = total;
    }
    Ok((trajs, total))
}

/// Run metadata exported next to trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub stream_id: u64,
    pub scheme: Scheme,
    pub macro_dt: f64,
    pub max_halvings: u32,
    pub displacement_cap: f64,
    pub stats: StepStats,
}
