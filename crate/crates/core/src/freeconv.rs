//! Free convolution μ_t = μ₀ ⊞ μ_sc^(t) of an atomic measure with the semicircle law of
//! variance t.
//!
//! Everything is driven by the subordination map M(w) = w − t·m₀(w), which sends the
//! region Λ_t = {w ∈ ℍ : ∫ dμ₀(x)/|x − w|² < 1/t} conformally onto ℍ. Its boundary is
//! the graph u ↦ u + i·v_t(u); M maps the boundary monotonically onto ℝ, and the
//! density of μ_t at y = M(u + i·v_t(u)) is v_t(u)/(πt).
//!
//! Measures of mass A ≠ 1 are handled by rescaling to the probability measure
//! μ̃(I) = A⁻¹·μ(A^{1/2}·I) and mapping results back: m_t(z) = A^{1/2}·m̃_t(A^{−1/2}z).

use std::f64::consts::PI;
use std::io::Write;
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measures::{inverted_cdf, ExtendedReal, FiniteMeasure, Neumaier};
use crate::numerics::{adaptive_panels, bracketed_root};
use crate::stieltjes::{real_jet, stieltjes, ComplexSum};

/// Times at or below this are treated as t = 0.
pub const DEGENERATE_TIME: f64 = 1e-14;

/// Maximum number of support intervals reported.
pub const MAX_INTERVALS: usize = 64;

const CACHE_INITIAL: usize = 257;
const CACHE_MAX: usize = 8193;

/// Leading-order edge coefficients of μ_t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeExpansion {
    /// A(t) = 2/(−t³·m₀″(ξ(t))).
    pub a_coeff: f64,
    /// 𝔠(t) = −2⁻⁹·t·m₀″(ξ(t))·ξ(t)².
    pub c_width: f64,
}

/// Edge summary as exported to JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeReport {
    pub t: f64,
    pub xi: f64,
    pub edge_right: f64,
    pub edge_left: f64,
    pub a_coeff: f64,
    pub c_width: f64,
}

/// Sample of the boundary curve in unit (mass-one) coordinates.
#[derive(Debug, Clone, Copy)]
struct BoundarySample {
    u: f64,
    v: f64,
    /// Re M(u + i v)
    y: f64,
    /// μ̃_t([y, ∞))
    tail: f64,
}

/// Support intervals of μ_t detected from the sign structure of v_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportIntervals {
    pub intervals: Vec<(f64, f64)>,
    pub truncated: bool,
}

/// Solver handle for μ₀ ⊞ μ_sc^(t).
#[derive(Debug)]
pub struct FreeConvolution {
    mu0: FiniteMeasure,
    t: f64,
    mass: f64,
    sqrt_mass: f64,
    // unit-mass rescaled atoms
    xs: Vec<f64>,
    ws: Vec<f64>,
    degenerate: bool,
    xi_plus: f64,
    xi_minus: f64,
    edge_right: f64,
    edge_left: f64,
    cache: OnceLock<Vec<BoundarySample>>,
}

impl Clone for FreeConvolution {
    fn clone(&self) -> Self {
        let cache = OnceLock::new();
        if let Some(c) = self.cache.get() {
            let _ = cache.set(c.clone());
        }
        Self {
            mu0: self.mu0.clone(),
            t: self.t,
            mass: self.mass,
            sqrt_mass: self.sqrt_mass,
            xs: self.xs.clone(),
            ws: self.ws.clone(),
            degenerate: self.degenerate,
            xi_plus: self.xi_plus,
            xi_minus: self.xi_minus,
            edge_right: self.edge_right,
            edge_left: self.edge_left,
            cache,
        }
    }
}

impl FreeConvolution {
    /// Prepares μ₀ ⊞ μ_sc^(t). Mass at ±∞ is ignored; the finite part must be nonzero.
    pub fn new(mu0: &FiniteMeasure, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("time must be nonnegative, got {t}")));
        }
        let mass = mu0.finite_mass();
        if !(mass > 0.0) {
            return Err(Error::NoBracket("measure has no finite mass".into()));
        }
        let sqrt_mass = mass.sqrt();
        let xs: Vec<f64> = mu0.positions().iter().map(|&x| x / sqrt_mass).collect();
        let ws: Vec<f64> = mu0.weights().iter().map(|&w| w / mass).collect();
        let degenerate = t <= DEGENERATE_TIME;
        let mut fc = Self {
            mu0: mu0.clone(),
            t,
            mass,
            sqrt_mass,
            xs,
            ws,
            degenerate,
            xi_plus: 0.0,
            xi_minus: 0.0,
            edge_right: 0.0,
            edge_left: 0.0,
            cache: OnceLock::new(),
        };
        if degenerate {
            let hi = mu0.max_finite().unwrap();
            let lo = mu0.min_finite().unwrap();
            fc.xi_plus = hi;
            fc.edge_right = hi;
            fc.xi_minus = lo;
            fc.edge_left = lo;
        } else {
            let (xp, ep) = unit_edge(&fc.xs, &fc.ws, t, 1.0)?;
            let (xm, em) = unit_edge(&fc.xs, &fc.ws, t, -1.0)?;
            fc.xi_plus = xp * sqrt_mass;
            fc.edge_right = ep * sqrt_mass;
            fc.xi_minus = xm * sqrt_mass;
            fc.edge_left = em * sqrt_mass;
        }
        Ok(fc)
    }

    pub fn mu0(&self) -> &FiniteMeasure {
        &self.mu0
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Finite mass A of μ₀ (and of μ_t).
    pub fn mass(&self) -> f64 {
        self.mass
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// ξ(t): solution of m₀′(ξ) = 1/t right of the support.
    pub fn xi_plus(&self) -> f64 {
        self.xi_plus
    }

    /// Mirror of [`xi_plus`](Self::xi_plus) left of the support.
    pub fn xi_minus(&self) -> f64 {
        self.xi_minus
    }

    /// E_t = max supp μ_t.
    pub fn edge_right(&self) -> f64 {
        self.edge_right
    }

    /// min supp μ_t.
    pub fn edge_left(&self) -> f64 {
        self.edge_left
    }

    /// v_t(u) = inf{v ≥ 0 : ∫ dμ₀/((u − x)² + v²) ≤ 1/t}.
    pub fn boundary_height(&self, u: f64) -> f64 {
        if self.degenerate {
            return 0.0;
        }
        unit_height(&self.xs, &self.ws, self.t, u / self.sqrt_mass) * self.sqrt_mass
    }

    /// Whether w lies in Λ_t (strict inequality).
    pub fn in_lambda(&self, w: Complex64) -> bool {
        if !(w.im > 0.0) {
            return false;
        }
        let mut acc = Neumaier::new();
        for (&x, &wt) in self.mu0.positions().iter().zip(self.mu0.weights()) {
            let d = x - w.re;
            acc.add(wt / (d * d + w.im * w.im));
        }
        self.t * acc.sum() < 1.0
    }

    /// M(w) = w − t·m₀(w).
    pub fn forward_map(&self, w: Complex64) -> Result<Complex64> {
        if self.t == 0.0 {
            return Ok(w);
        }
        Ok(w - self.t * stieltjes(&self.mu0, w)?)
    }

    /// A(t) and 𝔠(t) at the right edge.
    pub fn edge_expansion(&self) -> Result<EdgeExpansion> {
        if self.degenerate {
            return Err(Error::InvalidArgument("edge expansion needs t > 0".into()));
        }
        let (_, _, m2) = real_jet(&self.mu0, self.xi_plus)?;
        Ok(EdgeExpansion {
            a_coeff: 2.0 / (-self.t.powi(3) * m2),
            c_width: -(2f64.powi(-9)) * self.t * m2 * self.xi_plus * self.xi_plus,
        })
    }

    /// Edge summary for export.
    pub fn edge_report(&self) -> Result<EdgeReport> {
        let e = self.edge_expansion()?;
        Ok(EdgeReport {
            t: self.t,
            xi: self.xi_plus,
            edge_right: self.edge_right,
            edge_left: self.edge_left,
            a_coeff: e.a_coeff,
            c_width: e.c_width,
        })
    }

    fn cache(&self) -> &[BoundarySample] {
        self.cache.get_or_init(|| self.build_cache())
    }

    fn unit_sample(&self, u: f64) -> BoundarySample {
        let v = unit_height(&self.xs, &self.ws, self.t, u);
        let (y, tail) = unit_image_and_tail(&self.xs, &self.ws, self.t, u, v);
        BoundarySample { u, v, y, tail }
    }

    fn build_cache(&self) -> Vec<BoundarySample> {
        let lo = self.xi_minus / self.sqrt_mass;
        let hi = self.xi_plus / self.sqrt_mass;
        let mut samples: Vec<BoundarySample> = (0..CACHE_INITIAL)
            .map(|k| {
                let u =
                    if k == CACHE_INITIAL - 1 { hi } else { lo + (hi - lo) * k as f64 / (CACHE_INITIAL - 1) as f64 };
                self.unit_sample(u)
            })
            .collect();
        let y_span = ((self.edge_right - self.edge_left) / self.sqrt_mass).max(f64::MIN_POSITIVE);
        loop {
            let v_max = samples.iter().map(|s| s.v).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
            let mut refined = Vec::with_capacity(samples.len() * 2);
            let mut changed = false;
            for pair in samples.windows(2) {
                let (a, b) = (pair[0], pair[1]);
                refined.push(a);
                let coarse = (b.v - a.v).abs() > v_max / 64.0
                    || (b.y - a.y).abs() > y_span / 256.0
                    || (b.tail - a.tail).abs() > 1.0 / 256.0;
                let mid = 0.5 * (a.u + b.u);
                if coarse && mid > a.u && mid < b.u && samples.len() + refined.len() < 2 * CACHE_MAX {
                    refined.push(self.unit_sample(mid));
                    changed = true;
                }
            }
            refined.push(*samples.last().unwrap());
            samples = refined;
            if !changed || samples.len() >= CACHE_MAX {
                break;
            }
        }
        samples
    }

    /// Boundary-cache samples (u, v_t(u)) in original coordinates.
    pub fn boundary_samples(&self) -> Vec<(f64, f64)> {
        if self.degenerate {
            return Vec::new();
        }
        self.cache().iter().map(|s| (s.u * self.sqrt_mass, s.v * self.sqrt_mass)).collect()
    }

    /// Finds the unit boundary parameter whose image is the unit point `yu`.
    fn solve_unit_u_for_y(&self, yu: f64) -> f64 {
        let cache = self.cache();
        let k = cache.partition_point(|s| s.y < yu).clamp(1, cache.len() - 1);
        let (a, b) = (cache[k - 1], cache[k]);
        let f = |u: f64| {
            let v = unit_height(&self.xs, &self.ws, self.t, u);
            unit_image(&self.xs, &self.ws, self.t, u, v) - yu
        };
        let scale = 1.0 + yu.abs();
        bracketed_root(f, a.u, b.u, a.y - yu, b.y - yu, 1e-15 * scale, 1e-14 * scale, 300)
    }

    /// Density ϱ_t(y).
    pub fn density(&self, y: f64) -> f64 {
        if self.degenerate || !(y > self.edge_left && y < self.edge_right) {
            return 0.0;
        }
        let yu = y / self.sqrt_mass;
        let u = self.solve_unit_u_for_y(yu);
        let v = unit_height(&self.xs, &self.ws, self.t, u);
        // ϱ(y) = √A·ϱ̃(y/√A), ϱ̃ = ṽ/(πt)
        self.sqrt_mass * v / (PI * self.t)
    }

    /// Boundary point w(y) ∈ ∂Λ_t with M(w) = y (real w outside the support).
    pub fn boundary_point(&self, y: f64) -> Result<Complex64> {
        if self.degenerate {
            return Ok(Complex64::new(y, 0.0));
        }
        let yu = y / self.sqrt_mass;
        let w = if y >= self.edge_right {
            Complex64::new(self.real_preimage(yu, 1.0), 0.0)
        } else if y <= self.edge_left {
            Complex64::new(self.real_preimage(yu, -1.0), 0.0)
        } else {
            let u = self.solve_unit_u_for_y(yu);
            Complex64::new(u, unit_height(&self.xs, &self.ws, self.t, u))
        };
        Ok(w * self.sqrt_mass)
    }

    /// Real preimage (unit coordinates) of a unit point outside the support.
    fn real_preimage(&self, yu: f64, side: f64) -> f64 {
        let (xi, e) = if side > 0.0 {
            (self.xi_plus / self.sqrt_mass, self.edge_right / self.sqrt_mass)
        } else {
            (self.xi_minus / self.sqrt_mass, self.edge_left / self.sqrt_mass)
        };
        if (yu - e) * side <= 0.0 {
            return xi;
        }
        let f = |u: f64| u - self.t * unit_real_m(&self.xs, &self.ws, u) - yu;
        let (a, b) = if side > 0.0 { (xi, yu) } else { (yu, xi) };
        let scale = 1.0 + yu.abs();
        bracketed_root(f, a, b, f(a), f(b), 1e-15 * scale, 1e-15 * scale, 300)
    }

    /// Hilbert transform Hϱ_t(y) = (πt)⁻¹·Re(w − y) at the boundary point w(y).
    pub fn hilbert(&self, y: f64) -> Result<f64> {
        if self.degenerate {
            return Err(Error::InvalidArgument("Hilbert transform needs t > 0".into()));
        }
        let w = self.boundary_point(y)?;
        Ok((w.re - y) / (PI * self.t))
    }

    /// m_t(z) for Im z > 0, or for real z outside [edge_left, edge_right].
    pub fn stieltjes_fc(&self, z: Complex64) -> Result<Complex64> {
        if self.degenerate {
            return stieltjes(&self.mu0, z);
        }
        if z.im == 0.0 {
            if z.re > self.edge_right || z.re < self.edge_left {
                let side = if z.re > self.edge_right { 1.0 } else { -1.0 };
                let wu = self.real_preimage(z.re / self.sqrt_mass, side);
                return Ok(Complex64::new(unit_real_m(&self.xs, &self.ws, wu) * self.sqrt_mass, 0.0));
            }
            return Err(Error::InvalidArgument(format!("z = {} lies on the support", z.re)));
        }
        if !(z.im > 0.0) || !z.re.is_finite() || !z.im.is_finite() {
            return Err(Error::InvalidArgument(format!("z = {z} is not in the upper half-plane")));
        }
        let w = self.subordination_unit(z / self.sqrt_mass)?;
        Ok(unit_m(&self.xs, &self.ws, w)?.0 * self.sqrt_mass)
    }

    /// Subordination point w ∈ Λ_t with M(w) = z.
    pub fn subordination(&self, z: Complex64) -> Result<Complex64> {
        if self.degenerate {
            return Ok(z);
        }
        if !(z.im > 0.0) {
            return Err(Error::InvalidArgument(format!("z = {z} is not in the upper half-plane")));
        }
        Ok(self.subordination_unit(z / self.sqrt_mass)? * self.sqrt_mass)
    }

    fn subordination_unit(&self, z: Complex64) -> Result<Complex64> {
        let t = self.t;
        let spread = self.xs.iter().map(|x| (x - z.re).abs()).fold(0.0, f64::max);
        let h_final = z.im;
        let h0 = (10.0 * h_final).max(3.0 * (t.sqrt() + spread));
        let stages = ((h0 / h_final).ln() / 1.5f64.ln()).ceil().max(8.0) as usize;
        let ratio = (h_final / h0).powf(1.0 / stages as f64);
        let mut zk = Complex64::new(z.re, h0);
        let mut w = zk + t * unit_m(&self.xs, &self.ws, zk)?.0;
        if !self.unit_in_lambda(w) {
            w = zk;
        }
        let budget = 200 + 4 * stages;
        let mut steps = 0usize;
        for k in 1..=stages {
            let h = if k == stages { h_final } else { h0 * ratio.powi(k as i32) };
            zk = Complex64::new(z.re, h);
            let last = k == stages;
            let tol = if last { 1e-14 * (1.0 + zk.norm()) } else { 1e-4 * h };
            let (m, mut m1) = unit_m(&self.xs, &self.ws, w)?;
            let mut resid = w - t * m - zk;
            loop {
                if resid.norm() <= tol {
                    break;
                }
                if steps >= budget {
                    if last && resid.norm() <= 1e-10 * (1.0 + zk.norm()) {
                        break;
                    }
                    return Err(Error::NonConvergence(format!(
                        "subordination at z = {} + {}i: residual {:e}",
                        z.re * self.sqrt_mass,
                        z.im * self.sqrt_mass,
                        resid.norm()
                    )));
                }
                steps += 1;
                let delta = -resid / (1.0 - t * m1);
                let mut alpha = 1.0;
                let mut accepted = false;
                for _ in 0..60 {
                    let cand = w + alpha * delta;
                    if cand.im > 0.0 {
                        let (mc, m1c) = unit_m(&self.xs, &self.ws, cand)?;
                        let mw = cand - t * mc;
                        let rc = mw - zk;
                        if mw.im > 0.0 && rc.norm() < resid.norm() {
                            w = cand;
                            m1 = m1c;
                            resid = rc;
                            accepted = true;
                            break;
                        }
                    }
                    alpha *= 0.5;
                }
                if !accepted {
                    if last && resid.norm() <= 1e-10 * (1.0 + zk.norm()) {
                        break;
                    }
                    if !last {
                        break;
                    }
                    return Err(Error::NonConvergence(format!(
                        "subordination stalled at z = {} + {}i: residual {:e}",
                        z.re * self.sqrt_mass,
                        z.im * self.sqrt_mass,
                        resid.norm()
                    )));
                }
            }
        }
        Ok(w)
    }

    fn unit_in_lambda(&self, w: Complex64) -> bool {
        if !(w.im > 0.0) {
            return false;
        }
        let mut acc = Neumaier::new();
        for (&x, &wt) in self.xs.iter().zip(&self.ws) {
            let d = x - w.re;
            acc.add(wt / (d * d + w.im * w.im));
        }
        self.t * acc.sum() < 1.0
    }

    /// μ_t([y, ∞)).
    pub fn tail_mass(&self, y: f64) -> f64 {
        if self.degenerate {
            return self.mu0.finite_part().map(|m| m.mass_at_or_above(y)).unwrap_or(0.0);
        }
        if y <= self.edge_left {
            return self.mass;
        }
        if y >= self.edge_right {
            return 0.0;
        }
        let u = self.solve_unit_u_for_y(y / self.sqrt_mass);
        let v = unit_height(&self.xs, &self.ws, self.t, u);
        unit_image_and_tail(&self.xs, &self.ws, self.t, u, v).1.clamp(0.0, 1.0) * self.mass
    }

    /// μ_t((−∞, y]).
    pub fn cdf(&self, y: f64) -> f64 {
        (self.mass - self.tail_mass(y)).max(0.0)
    }

    /// μ_t((−∞, y]) by adaptive Gauss–Kronrod quadrature of the density (independent
    /// of the closed-form antiderivative used by [`cdf`](Self::cdf)).
    pub fn cdf_by_quadrature(&self, y: f64, tol: f64) -> f64 {
        if y <= self.edge_left {
            return 0.0;
        }
        // per support interval, substitute x = a + s² (or b − s²) to absorb the
        // square-root endpoints
        let intervals = self.support_intervals().intervals;
        let share = tol / (2 * intervals.len().max(1)) as f64;
        let mut total = 0.0;
        for (a, b) in intervals {
            if y <= a {
                break;
            }
            let mid = 0.5 * (a + b);
            let top = y.min(b);
            let left_end = top.min(mid);
            let f = |s: f64| 2.0 * s * self.density(a + s * s);
            total += adaptive_panels(f, 0.0, (left_end - a).sqrt(), share, 4096).0;
            if top > mid {
                let g = |s: f64| 2.0 * s * self.density(b - s * s);
                total += adaptive_panels(g, (b - top).sqrt(), (b - mid).sqrt(), share, 4096).0;
            }
        }
        total
    }

    /// Inverted cumulative density γ_t(q) = sup{γ : μ_t([γ, ∞)) ≥ q}.
    pub fn quantile(&self, q: f64) -> ExtendedReal {
        if self.degenerate {
            return inverted_cdf(&self.mu0.finite_part().expect("finite part"), q);
        }
        if q < 0.0 {
            return f64::INFINITY;
        }
        if q > self.mass {
            return f64::NEG_INFINITY;
        }
        if q == 0.0 {
            return self.edge_right;
        }
        let target = q / self.mass;
        let cache = self.cache();
        // tail decreases along the cache
        let k = cache.partition_point(|s| s.tail > target).clamp(1, cache.len() - 1);
        let (a, b) = (cache[k - 1], cache[k]);
        let f = |u: f64| {
            let v = unit_height(&self.xs, &self.ws, self.t, u);
            unit_image_and_tail(&self.xs, &self.ws, self.t, u, v).1 - target
        };
        let u = bracketed_root(f, a.u, b.u, a.tail - target, b.tail - target, 1e-15 * (1.0 + a.u.abs()), 1e-15, 300);
        let v = unit_height(&self.xs, &self.ws, self.t, u);
        unit_image(&self.xs, &self.ws, self.t, u, v) * self.sqrt_mass
    }

    /// Classical locations γ_i(t) = γ_t((i − ½)/n), i = 1..⌊An⌋.
    pub fn classical_locations(&self, n: usize) -> Vec<f64> {
        if n == 0 {
            return Vec::new();
        }
        let count = (self.mass * n as f64 + 1e-9).floor() as usize;
        (1..=count).map(|i| self.quantile((i as f64 - 0.5) / n as f64)).collect()
    }

    /// Support intervals from runs of v_t > 0 on the boundary cache.
    pub fn support_intervals(&self) -> SupportIntervals {
        if self.degenerate {
            let pts = self.mu0.positions().iter().map(|&x| (x, x)).collect();
            return SupportIntervals { intervals: pts, truncated: false };
        }
        let cache = self.cache();
        let mut intervals = Vec::new();
        let mut truncated = false;
        let mut start: Option<usize> = None;
        for (k, s) in cache.iter().enumerate() {
            let inside = s.v > 0.0;
            match (inside, start) {
                (true, None) => start = Some(k),
                (false, Some(k0)) => {
                    if intervals.len() == MAX_INTERVALS {
                        truncated = true;
                        break;
                    }
                    intervals.push(self.refine_interval(cache, k0, k));
                    start = None;
                }
                _ => {}
            }
        }
        if let Some(k0) = start {
            if intervals.len() == MAX_INTERVALS {
                truncated = true;
            } else {
                intervals.push(self.refine_interval(cache, k0, cache.len()));
            }
        }
        SupportIntervals { intervals, truncated }
    }

    fn refine_interval(&self, cache: &[BoundarySample], k0: usize, k1: usize) -> (f64, f64) {
        let edge = |inside: f64, outside: f64| {
            let (mut a, mut b) = (inside, outside);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m == a || m == b {
                    break;
                }
                if unit_height(&self.xs, &self.ws, self.t, m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            b
        };
        let lo_u = if k0 == 0 { cache[0].u } else { edge(cache[k0].u, cache[k0 - 1].u) };
        let hi_u = if k1 >= cache.len() { cache[cache.len() - 1].u } else { edge(cache[k1 - 1].u, cache[k1].u) };
        let lo =
            if k0 == 0 { self.edge_left } else { unit_image(&self.xs, &self.ws, self.t, lo_u, 0.0) * self.sqrt_mass };
        let hi = if k1 >= cache.len() {
            self.edge_right
        } else {
            unit_image(&self.xs, &self.ws, self.t, hi_u, 0.0) * self.sqrt_mass
        };
        (lo, hi)
    }

    /// Writes a `y,rho,cdf` table on `points` equispaced nodes spanning the support.
    pub fn write_density_csv<W: Write>(&self, mut out: W, points: usize) -> Result<()> {
        writeln!(out, "y,rho,cdf")?;
        let (lo, hi) = (self.edge_left, self.edge_right);
        let points = points.max(2);
        for k in 0..points {
            let y = lo + (hi - lo) * k as f64 / (points - 1) as f64;
            writeln!(out, "{},{},{}", crate::fmt17(y), crate::fmt17(self.density(y)), crate::fmt17(self.cdf(y)))?;
        }
        Ok(())
    }

    /// Writes a `y,rho,cdf` table on the given nodes.
    pub fn write_density_csv_at<W: Write>(&self, mut out: W, ys: &[f64]) -> Result<()> {
        writeln!(out, "y,rho,cdf")?;
        for &y in ys {
            writeln!(out, "{},{},{}", crate::fmt17(y), crate::fmt17(self.density(y)), crate::fmt17(self.cdf(y)))?;
        }
        Ok(())
    }
}

/// ξ and edge for the right (side = 1) or left (side = −1) end of a free convolution.
pub fn right_edge(mu0: &FiniteMeasure, t: f64) -> Result<(f64, f64)> {
    let fc = FreeConvolution::new(mu0, t)?;
    Ok((fc.xi_plus, fc.edge_right))
}

/// Mirror image of [`right_edge`]: (w₋, 𝔢₋).
pub fn left_edge(mu0: &FiniteMeasure, t: f64) -> Result<(f64, f64)> {
    let fc = FreeConvolution::new(mu0, t)?;
    Ok((fc.xi_minus, fc.edge_left))
}

/// Edge expansion coefficients of μ₀ ⊞ μ_sc^(t).
pub fn edge_expansion(mu0: &FiniteMeasure, t: f64) -> Result<EdgeExpansion> {
    FreeConvolution::new(mu0, t)?.edge_expansion()
}

// ---- unit-mass kernels --------------------------------------------------------------

fn unit_m(xs: &[f64], ws: &[f64], z: Complex64) -> Result<(Complex64, Complex64)> {
    let mut m = ComplexSum::default();
    let mut m1 = ComplexSum::default();
    for (&x, &w) in xs.iter().zip(ws) {
        let d = Complex64::new(x - z.re, -z.im);
        if d.norm() < 1e-300 {
            return Err(Error::Pole(x));
        }
        let inv = d.inv();
        let a = w * inv;
        m.add(a);
        m1.add(a * inv);
    }
    Ok((m.value(), m1.value()))
}

fn unit_real_m(xs: &[f64], ws: &[f64], u: f64) -> f64 {
    let mut acc = Neumaier::new();
    for (&x, &w) in xs.iter().zip(ws) {
        acc.add(w / (x - u));
    }
    acc.sum()
}

/// Solves m₀′(ξ) = 1/t right (side = 1) or left (side = −1) of the atoms.
///
/// Works with ψ(ξ) = (Σ w/(ξ − x)²)^{−1/2} − √t, which is concave and increasing on the
/// outer side, so Newton iterates started inside the bracket approach the root
/// monotonically from below.
fn unit_edge(xs: &[f64], ws: &[f64], t: f64, side: f64) -> Result<(f64, f64)> {
    let (x_ext, w_ext) = if side > 0.0 { (xs[0], ws[0]) } else { (xs[xs.len() - 1], ws[ws.len() - 1]) };
    // work in the reflected coordinate s = side·ξ so the outer side is always "right"
    let psi = |s: f64| -> (f64, f64) {
        let xi = side * s;
        let (mut i2, mut i3) = (Neumaier::new(), Neumaier::new());
        for (&x, &w) in xs.iter().zip(ws) {
            let d = side * (xi - x);
            let inv = 1.0 / d;
            i2.add(w * inv * inv);
            i3.add(w * inv * inv * inv);
        }
        let i2 = i2.sum();
        let i3 = i3.sum();
        (i2.powf(-0.5) - t.sqrt(), i2.powf(-1.5) * i3)
    };
    let s_ext = side * x_ext;
    let mut lo = s_ext + 0.5 * (t * w_ext).sqrt();
    let mut hi = s_ext + t.sqrt() * 1.000001 + 1e-300;
    let (flo, _) = psi(lo);
    let (fhi, _) = psi(hi);
    if !(flo < 0.0) {
        return Err(Error::NoBracket(format!("left end not below the root (psi = {flo:e})")));
    }
    if !(fhi >= 0.0) {
        return Err(Error::NoBracket(format!("no sign change within the search horizon (psi = {fhi:e})")));
    }
    for _ in 0..4 {
        let mid = 0.5 * (lo + hi);
        if psi(mid).0 < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // safeguarded Newton: keep the bracket, fall back to bisection when a step leaves it
    let mut s = lo;
    for _ in 0..200 {
        let (f, df) = psi(s);
        if f == 0.0 {
            break;
        }
        if f < 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let newton = s - f / df;
        let next = if newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if (next - s).abs() <= 1e-16 * s.abs() || hi - lo <= 1e-16 * s.abs() {
            s = next;
            break;
        }
        s = next;
    }
    let xi = side * s;
    let m = unit_real_m(xs, ws, xi);
    Ok((xi, xi - t * m))
}

/// v_t(u) for a unit-mass atomic measure.
///
/// Solves g(s) = 1/I(s) − t = 0 for s = v², I(s) = Σ w/((u − x)² + s). g is concave and
/// increasing, so Newton from any point with g < 0 converges monotonically from below.
fn unit_height(xs: &[f64], ws: &[f64], t: f64, u: f64) -> f64 {
    let eval = |s: f64| -> (f64, f64) {
        let (mut i1, mut i2) = (Neumaier::new(), Neumaier::new());
        for (&x, &w) in xs.iter().zip(ws) {
            let d = x - u;
            let inv = 1.0 / (d * d + s);
            i1.add(w * inv);
            i2.add(w * inv * inv);
        }
        (i1.sum(), i2.sum())
    };
    let mut s;
    let mut at_atom = 0.0;
    for (&x, &w) in xs.iter().zip(ws) {
        if x == u {
            at_atom += w;
        }
    }
    if at_atom > 0.0 {
        s = 0.5 * t * at_atom;
    } else {
        let (i0, _) = eval(0.0);
        if i0 * t <= 1.0 {
            return 0.0;
        }
        s = 0.0;
    }
    for _ in 0..200 {
        let (i1, i2) = eval(s);
        let g = 1.0 / i1 - t;
        if g >= 0.0 {
            break;
        }
        let dg = i2 / (i1 * i1);
        let step = -g / dg;
        let next = s + step;
        if !(step > 1e-16 * next) {
            s = next;
            break;
        }
        s = next;
    }
    s.max(0.0).sqrt()
}

fn unit_image(xs: &[f64], ws: &[f64], t: f64, u: f64, v: f64) -> f64 {
    let mut re = Neumaier::new();
    for (&x, &w) in xs.iter().zip(ws) {
        let d = x - u;
        re.add(w * d / (d * d + v * v));
    }
    u - t * re.sum()
}

/// (Re M(w), μ̃_t([Re M(w), ∞))) at w = u + iv on the boundary curve.
///
/// Tail mass = π⁻¹·[Σ wᵢ·arg(u − xᵢ + iv) + t·Re m₀(w)·Im m₀(w)], the antiderivative of
/// π⁻¹ Im m₀(w) dM(w) along the boundary.
fn unit_image_and_tail(xs: &[f64], ws: &[f64], t: f64, u: f64, v: f64) -> (f64, f64) {
    let (mut re, mut im, mut ang) = (Neumaier::new(), Neumaier::new(), Neumaier::new());
    for (&x, &w) in xs.iter().zip(ws) {
        let d = x - u;
        let inv = 1.0 / (d * d + v * v);
        re.add(w * d * inv);
        im.add(w * v * inv);
        ang.add(w * v.atan2(-d));
    }
    let (mr, mi) = (re.sum(), im.sum());
    (u - t * mr, (ang.sum() + t * mr * mi) / PI)
}
