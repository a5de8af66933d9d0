//! Characteristics of the complex Burgers equation and the edge-tracking domain.
//!
//! Along z_s(u) = u − s·m₀(u) the Stieltjes transform m_s(z_s) stays equal to m₀(u).
//! Writing z_s = E_s + κ_s + iη_s, the distance κ_s to the moving edge shrinks as s
//! grows, and the lemmas checked in [`monotonicity_report`] quantify how fast.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measures::{FiniteMeasure, Neumaier};
use crate::stieltjes::stieltjes;

/// Default lower endpoint check tolerance for the lemma inequalities.
pub const SLACK_TOLERANCE: f64 = -1e-9;

/// Default cap on enumerated lattice points.
pub const LATTICE_BUDGET: usize = 1_000_000;

/// Exponent of the lattice spacing n^{−LATTICE_EXPONENT}.
pub const LATTICE_EXPONENT: i32 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSample {
    pub time: f64,
    pub z: Complex64,
    /// Re z − E_s.
    pub kappa: f64,
    pub eta: f64,
    pub edge: f64,
}

/// One characteristic started at `u`, sampled at increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicPath {
    pub u: Complex64,
    pub m0_u: Complex64,
    pub samples: Vec<PathSample>,
}

impl CharacteristicPath {
    pub fn terminal(&self) -> &PathSample {
        self.samples.last().expect("paths have at least one sample")
    }
}

/// μ₀ together with its right edges on a fixed time grid.
///
/// Edges are recomputed per grid time rather than interpolated: the sign of κ_s is
/// sensitive to edge error.
#[derive(Debug, Clone)]
pub struct EdgeFamily {
    mu0: FiniteMeasure,
    times: Vec<f64>,
    edges: Vec<f64>,
}

impl EdgeFamily {
    pub fn new(mu0: &FiniteMeasure, times: &[f64]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidArgument("empty time grid".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || !(times[0] >= 0.0) {
            return Err(Error::InvalidArgument("time grid must be nonnegative and strictly increasing".into()));
        }
        let edges = times
            .iter()
            .map(|&s| FreeConvolution::new(mu0, s).map(|fc| fc.edge_right()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mu0: mu0.clone(), times: times.to_vec(), edges })
    }

    pub fn mu0(&self) -> &FiniteMeasure {
        &self.mu0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }
}

/// t·∫ dμ₀(x)/|x − u|², which is < 1 exactly on Λ_t.
pub fn lambda_index(mu0: &FiniteMeasure, u: Complex64, t: f64) -> f64 {
    let mut acc = Neumaier::new();
    for (&x, &w) in mu0.positions().iter().zip(mu0.weights()) {
        let d = x - u.re;
        acc.add(w / (d * d + u.im * u.im));
    }
    t * acc.sum()
}

/// Samples the characteristic from `u` at every time of the family.
///
/// The boundary of Λ_t is admitted (η = 0 there); points strictly outside its closure
/// raise [`Error::DomainExit`].
pub fn flow_on_family(family: &EdgeFamily, u: Complex64) -> Result<CharacteristicPath> {
    if !(u.im > 0.0) {
        return Err(Error::DomainExit(u.re, u.im));
    }
    if lambda_index(&family.mu0, u, family.horizon()) > 1.0 {
        return Err(Error::DomainExit(u.re, u.im));
    }
    let m0_u = stieltjes(&family.mu0, u)?;
    let samples = family
        .times
        .iter()
        .zip(&family.edges)
        .map(|(&s, &edge)| {
            let z = u - s * m0_u;
            PathSample { time: s, z, kappa: z.re - edge, eta: z.im.max(0.0), edge }
        })
        .collect();
    Ok(CharacteristicPath { u, m0_u, samples })
}

/// Characteristic from `u` sampled at `times` (sorted internally), with edges of `fc.mu0()`.
pub fn flow_forward(fc: &FreeConvolution, u: Complex64, times: &[f64]) -> Result<CharacteristicPath> {
    let mut ts = times.to_vec();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    flow_on_family(&EdgeFamily::new(fc.mu0(), &ts)?, u)
}

/// Paths for many starting points, in parallel.
pub fn flow_many(family: &EdgeFamily, us: &[Complex64]) -> Vec<Result<CharacteristicPath>> {
    us.par_iter().map(|&u| flow_on_family(family, u)).collect()
}

/// z_s = z_t + (t − s)·m_t(z_t): moves a point backward along its characteristic.
pub fn flow_between(z_t: Complex64, m_val: Complex64, t: f64, s: f64) -> Complex64 {
    z_t + (t - s) * m_val
}

/// Starting point u with z_t(u) = w, i.e. u = w + t·m_t(w).
pub fn pull_back(fc: &FreeConvolution, w: Complex64) -> Result<Complex64> {
    Ok(flow_between(w, fc.stieltjes_fc(w)?, fc.time(), 0.0))
}

/// |m_t(z_t(u)) − m₀(u)| at the time of `fc`.
pub fn conservation_error(fc: &FreeConvolution, u: Complex64) -> Result<f64> {
    let m0 = stieltjes(fc.mu0(), u)?;
    let z = u - fc.time() * m0;
    Ok((fc.stieltjes_fc(z)? - m0).norm())
}

/// inf over η* ≤ x ≤ T² of μ₀([−x, 0])/x^{3/2}, the best constant in the density lower
/// bound for an atomic measure supported in [−∞, 0].
///
/// The ratio decreases between atoms, so the infimum is approached just before each
/// atom depth, at x = T², or at x = η*. With η* = 0 the infimum runs over (0, T²].
pub fn density_lower_bound(mu0: &FiniteMeasure, eta_star: f64, horizon: f64) -> Result<f64> {
    if let Some(top) = mu0.max_finite() {
        if top > 0.0 {
            return Err(Error::InvalidMeasure(format!("atom at {top} lies right of 0")));
        }
    }
    if !(eta_star >= 0.0) {
        return Err(Error::InvalidArgument("eta_star must be nonnegative".into()));
    }
    let x_max = horizon * horizon;
    if x_max < eta_star {
        return Err(Error::InvalidArgument("horizon² below eta_star".into()));
    }
    let pos = mu0.positions();
    let wts = mu0.weights();
    // mass in [−x, 0] for x just below `depth`
    let mass_above = |depth: f64| -> f64 { pos.iter().zip(wts).filter(|(&p, _)| -p < depth).map(|(_, &w)| w).sum() };
    let mass_within = |x: f64| -> f64 { pos.iter().zip(wts).filter(|(&p, _)| -p <= x).map(|(_, &w)| w).sum() };
    let mut best = mass_within(x_max) / x_max.powf(1.5);
    if eta_star > 0.0 {
        best = best.min(mass_within(eta_star) / eta_star.powf(1.5));
    }
    for &p in pos {
        let depth = -p;
        if depth > eta_star && depth <= x_max {
            best = best.min(mass_above(depth) / depth.powf(1.5));
        }
    }
    Ok(best)
}

/// Constants of the edge-tracking profile f(t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidityProfile {
    /// Smallest scale η* on which the initial density lower bound holds.
    pub eta_star: f64,
    /// Density lower-bound constant: μ₀([−x, 0]) ≥ b·x^{3/2}.
    pub density_const: f64,
    /// Edge-mass constant 𝔠 = b·ℭ^{−3/2}.
    pub mass_const: f64,
    /// Window constant ℭ = 2²¹/b².
    pub window_const: f64,
    pub n: usize,
    /// Time horizon T (the density bound is assumed up to x = T²).
    pub horizon: f64,
}

impl RigidityProfile {
    /// Profile with the default constants derived from `density_const`.
    pub fn new(eta_star: f64, density_const: f64, n: usize, horizon: f64) -> Result<Self> {
        if !(density_const > 0.0 && density_const < 1.0) {
            return Err(Error::InvalidArgument(format!("density constant {density_const} outside (0, 1)")));
        }
        if !(eta_star > 0.0) || n == 0 || !(horizon > 0.0) {
            return Err(Error::InvalidArgument("eta_star, n and horizon must be positive".into()));
        }
        let window_const = 2f64.powi(21) / (density_const * density_const);
        let mass_const = density_const * window_const.powf(-1.5);
        Ok(Self { eta_star, density_const, mass_const, window_const, n, horizon })
    }

    /// Profile whose η* is raised so that ℭ²η* equals the floor; then f is constant.
    pub fn at_floor(density_const: f64, n: usize, horizon: f64) -> Result<Self> {
        let mut p = Self::new(1.0, density_const, n, horizon)?;
        p.eta_star = p.floor() / (p.window_const * p.window_const);
        Ok(p)
    }

    /// Profile for an atomic μ₀ with the best density constant at scale `eta_star`.
    pub fn for_measure(mu0: &FiniteMeasure, eta_star: f64, n: usize, horizon: f64) -> Result<Self> {
        let b = density_lower_bound(mu0, eta_star, horizon)?;
        Self::new(eta_star, b, n, horizon)
    }

    /// (log n)¹⁵ n^{−2/3}.
    pub fn floor(&self) -> f64 {
        let n = self.n as f64;
        n.ln().powi(15) * n.powf(-2.0 / 3.0)
    }

    /// ℭ√η*, the time after which f starts to decrease.
    pub fn window(&self) -> f64 {
        self.window_const * self.eta_star.sqrt()
    }

    /// f(t) = max{ℭ√η* − 𝔠·max(0, t − ℭ√η*)/8, (log n)^{15/2} n^{−1/3}}².
    pub fn f(&self, t: f64) -> f64 {
        let w = self.window();
        let n = self.n as f64;
        let root_floor = n.ln().powf(7.5) * n.powf(-1.0 / 3.0);
        let r = (w - self.mass_const * (t - w).max(0.0) / 8.0).max(root_floor);
        r * r
    }

    /// 𝔐 = 6(T + ℭ²η*).
    pub fn domain_height(&self) -> f64 {
        6.0 * (self.horizon + self.window_const * self.window_const * self.eta_star)
    }
}

/// f(t) of the profile.
pub fn f_profile(p: &RigidityProfile, t: f64) -> f64 {
    p.f(t)
}

/// Membership of z in the spectral domain 𝒟_t, t being the time of `fc`.
pub fn domain_contains(fc: &FreeConvolution, p: &RigidityProfile, frak_m: f64, z: Complex64) -> Result<bool> {
    if !(z.im > 0.0) {
        return Ok(false);
    }
    let t = fc.time();
    let top = frak_m - 2.0 * t;
    if z.re < fc.edge_right() + p.f(t) || z.re > top || z.im > top {
        return Ok(false);
    }
    let n = p.n as f64;
    let im_m = fc.stieltjes_fc(z)?.im;
    Ok(im_m > 0.0 && 1.0 / (n.ln() * n * im_m) <= z.im)
}

/// Points of the lattice (ℤ·h)² inside 𝒟₀.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    /// Grid spacing actually used.
    pub spacing: f64,
    /// spacing/n⁻⁸; 1 when the full lattice fits the budget.
    pub coarsening: f64,
    pub coarsened: bool,
    pub points: Vec<Complex64>,
}

/// Enumerates the lattice inside 𝒟₀ (`fc0` at time 0), coarsening the n⁻⁸ spacing by an
/// integer factor when the bounding box would exceed `budget` points.
pub fn lattice_points(fc0: &FreeConvolution, p: &RigidityProfile, frak_m: f64, budget: usize) -> Result<Lattice> {
    let base = (p.n as f64).powi(-LATTICE_EXPONENT);
    let re_lo = fc0.edge_right() + p.f(0.0);
    let hi = frak_m;
    if !(re_lo <= hi) || !(hi > 0.0) {
        return Ok(Lattice { spacing: base, coarsening: 1.0, coarsened: false, points: Vec::new() });
    }
    let count = |h: f64| ((hi / h).floor() - (re_lo / h).ceil() + 1.0).max(0.0) * (hi / h).floor();
    let mut factor = 1.0f64;
    if count(base) > budget as f64 {
        factor = ((count(base) / budget as f64).sqrt()).ceil();
        while count(base * factor) > budget as f64 {
            factor = (factor * 1.01).ceil();
        }
    }
    let h = base * factor;
    let (j0, j1) = ((re_lo / h).ceil() as i64, (hi / h).floor() as i64);
    let k1 = (hi / h).floor() as i64;
    let mut points = Vec::new();
    for j in j0..=j1 {
        for k in 1..=k1 {
            let z = Complex64::new(j as f64 * h, k as f64 * h);
            if domain_contains(fc0, p, frak_m, z)? {
                points.push(z);
            }
        }
    }
    Ok(Lattice { spacing: h, coarsening: factor, coarsened: factor > 1.0, points })
}

/// A point u of the full n⁻⁸ lattice in 𝒟₀ with z_t(u) ∈ 𝒟_t, chosen among the grid
/// neighbours of the exact preimage of `w` to minimise |z_t(u) − w|.
///
/// Returns `(u, z_t(u))`, or `None` when no neighbour qualifies.
pub fn nearest_lattice_point(
    fc_t: &FreeConvolution,
    p: &RigidityProfile,
    frak_m: f64,
    w: Complex64,
) -> Result<Option<(Complex64, Complex64)>> {
    let h = (p.n as f64).powi(-LATTICE_EXPONENT);
    let fc0 = FreeConvolution::new(fc_t.mu0(), 0.0)?;
    let u = pull_back(fc_t, w)?;
    let (j, k) = ((u.re / h).floor(), (u.im / h).floor());
    let mut best: Option<(f64, Complex64, Complex64)> = None;
    for dj in -1..=2 {
        for dk in -1..=2 {
            let cand = Complex64::new((j + dj as f64) * h, (k + dk as f64) * h);
            if !domain_contains(&fc0, p, frak_m, cand)? {
                continue;
            }
            let z = cand - fc_t.time() * stieltjes(fc_t.mu0(), cand)?;
            if !domain_contains(fc_t, p, frak_m, z)? {
                continue;
            }
            let d = (z - w).norm();
            if best.is_none_or(|b| d < b.0) {
                best = Some((d, cand, z));
            }
        }
    }
    Ok(best.map(|(_, u, z)| (u, z)))
}

/// Outcome of one family of inequality checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityTally {
    pub checked: usize,
    pub violated: usize,
    /// Smallest (lhs − rhs) seen; +∞ when nothing was checked.
    pub worst_slack: f64,
    /// Grid times where the hypotheses of this inequality failed.
    pub skipped: usize,
}

impl Default for InequalityTally {
    fn default() -> Self {
        Self { checked: 0, violated: 0, worst_slack: f64::INFINITY, skipped: 0 }
    }
}

impl InequalityTally {
    fn record(&mut self, slack: f64) {
        self.checked += 1;
        if slack < SLACK_TOLERANCE {
            self.violated += 1;
        }
        self.worst_slack = self.worst_slack.min(slack);
    }

    pub fn merge(&mut self, other: &Self) {
        self.checked += other.checked;
        self.violated += other.violated;
        self.skipped += other.skipped;
        self.worst_slack = self.worst_slack.min(other.worst_slack);
    }
}

/// Lemma checks along one path (or merged across many).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// κ_s − κ_t ≥ (t − s)·Im m_t(z_t)·κ_t/η_t.
    pub kappa_gain: InequalityTally,
    /// √κ_s − √κ_t ≥ 𝔠(t − s)/4 for s ≥ ℭ√η*.
    pub sqrt_kappa_gain: InequalityTally,
    /// κ_s − f(s) ≥ (t − s)/2·Im m_t(z_t)·κ_t/η_t for s ≥ ℭ√η*, when κ_t ≥ f(t).
    pub profile_gain: InequalityTally,
    /// Paths whose terminal point violates κ_t ≥ 0 (or sits on ∂Λ_t).
    pub hypotheses_unmet: usize,
    pub paths: usize,
}

impl MonotonicityReport {
    pub fn violations(&self) -> usize {
        self.kappa_gain.violated + self.sqrt_kappa_gain.violated + self.profile_gain.violated
    }

    pub fn merge(&mut self, other: &Self) {
        self.kappa_gain.merge(&other.kappa_gain);
        self.sqrt_kappa_gain.merge(&other.sqrt_kappa_gain);
        self.profile_gain.merge(&other.profile_gain);
        self.hypotheses_unmet += other.hypotheses_unmet;
        self.paths += other.paths;
    }
}

/// Checks the κ-monotonicity inequalities between the terminal time t of `path` and
/// every earlier grid time s, only where their hypotheses (including κ_s ≤ T²) hold.
pub fn monotonicity_report(family: &EdgeFamily, path: &CharacteristicPath, p: &RigidityProfile) -> MonotonicityReport {
    let mut rep = MonotonicityReport { paths: 1, ..Default::default() };
    debug_assert_eq!(family.times.len(), path.samples.len());
    let last = path.terminal();
    let (t, kappa_t, eta_t) = (last.time, last.kappa, last.eta);
    if !(kappa_t >= 0.0) || !(eta_t > 0.0) {
        rep.hypotheses_unmet = 1;
        return rep;
    }
    // Im m_t(z_t) = Im m₀(u) by conservation
    let rate = path.m0_u.im * kappa_t / eta_t;
    let cap = p.horizon * p.horizon;
    let window = p.window();
    let f_t = p.f(t);
    for smp in &path.samples {
        let s = smp.time;
        let ks = smp.kappa;
        if ks > cap {
            rep.kappa_gain.skipped += 1;
            rep.sqrt_kappa_gain.skipped += 1;
            rep.profile_gain.skipped += 1;
            continue;
        }
        rep.kappa_gain.record((ks - kappa_t) - (t - s) * rate);
        if s >= window {
            rep.sqrt_kappa_gain.record(ks.max(0.0).sqrt() - kappa_t.sqrt() - p.mass_const * (t - s) / 4.0);
        } else {
            rep.sqrt_kappa_gain.skipped += 1;
        }
        if s >= window && kappa_t >= f_t {
            rep.profile_gain.record(ks - p.f(s) - 0.5 * (t - s) * rate);
        } else {
            rep.profile_gain.skipped += 1;
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stieltjes::semicircle_stieltjes;

    fn delta0() -> FiniteMeasure {
        FiniteMeasure::dirac(0.0, 1.0).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn flow_forward_examples() {
        let fc = FreeConvolution::new(&delta0(), 1.0).unwrap();
        let p = flow_forward(&fc, c(0.0, 1.0), &[0.0, 1.0]).unwrap();
        let end = p.terminal();
        assert!(end.z.norm() < 1e-15);
        assert!((end.kappa + 2.0).abs() < 1e-12);
        assert_eq!(end.eta, 0.0);
        assert_eq!(p.samples[0].z, c(0.0, 1.0));

        let p = flow_forward(&fc, c(0.0, 2.0), &[1.0]).unwrap();
        assert!((p.terminal().z - c(0.0, 1.5)).norm() < 1e-15);
        // outside the closure of Λ₁
        assert!(matches!(flow_forward(&fc, c(0.0, 0.5), &[1.0]), Err(Error::DomainExit(..))));
    }

    #[test]
    fn flow_between_examples() {
        assert_eq!(flow_between(c(0.3, 0.2), c(1.0, 1.0), 0.7, 0.7), c(0.3, 0.2));
        assert_eq!(flow_between(c(0.0, 1.0), c(0.0, 1.0), 1.0, 0.0), c(0.0, 2.0));
        let fc = FreeConvolution::new(&delta0(), 1.0).unwrap();
        let u = c(0.4, 1.7);
        let p = flow_forward(&fc, u, &[0.0, 0.5, 1.0]).unwrap();
        let back = flow_between(p.terminal().z, p.m0_u, 1.0, 0.0);
        assert!((back - u).norm() < 1e-12);
    }

    #[test]
    fn path_satisfies_flow_identity() {
        let mu = FiniteMeasure::atomize_uniform(-1.0, 0.0, 1.0, 50).unwrap();
        let fc = FreeConvolution::new(&mu, 0.5).unwrap();
        let u = c(0.6, 0.9);
        let p = flow_forward(&fc, u, &[0.0, 0.1, 0.25, 0.5]).unwrap();
        for w in p.samples.windows(2) {
            assert!(w[1].eta <= w[0].eta);
        }
        for s in &p.samples {
            assert!((s.z - (u - s.time * p.m0_u)).norm() < 1e-12);
        }
        assert!(conservation_error(&fc, u).unwrap() < 1e-10);
    }

    #[test]
    fn pull_back_inverts_the_flow() {
        let fc = FreeConvolution::new(&delta0(), 1.0).unwrap();
        let w = c(2.5, 0.5);
        let u = pull_back(&fc, w).unwrap();
        assert!((u - fc.time() * stieltjes(&delta0(), u).unwrap() - w).norm() < 1e-12);
        assert!(lambda_index(&delta0(), u, 1.0) < 1.0);
    }

    #[test]
    fn density_constant_of_atoms() {
        // δ₀: F ≡ 1 so the infimum is at x = T²
        let b = density_lower_bound(&delta0(), 1e-3, 100.0).unwrap();
        assert!((b - 1e-6).abs() < 1e-18);
        // two atoms: just below depth 1 only the top half counts
        let mu = FiniteMeasure::new(&[(0.0, 0.5), (-1.0, 0.5)]).unwrap();
        let b = density_lower_bound(&mu, 0.01, 1.0).unwrap();
        assert!((b - 0.5).abs() < 1e-15);
        let b = density_lower_bound(&mu, 0.01, 2.0).unwrap();
        assert!((b - 0.125).abs() < 1e-15);
        let bad = FiniteMeasure::dirac(0.5, 1.0).unwrap();
        assert!(density_lower_bound(&bad, 0.01, 10.0).is_err());
    }

    #[test]
    fn profile_examples() {
        let p = RigidityProfile::new(1e-40, 0.5, 400, 100.0).unwrap();
        assert_eq!(p.window_const, 2f64.powi(23));
        assert!((p.mass_const - 0.5 * 2f64.powf(-34.5)).abs() < 1e-25);
        // floor dominates at this n
        for t in [0.0, 0.5, 10.0] {
            assert!((p.f(t) - p.floor()).abs() <= 1e-12 * p.floor());
        }
        // window dominates, then decreases linearly in √f down to the floor
        let p = RigidityProfile::new(1e-6, 0.5, 2, 100.0).unwrap();
        let w = p.window();
        assert!(p.window_const.powi(2) * p.eta_star > p.floor());
        assert!((p.f(0.5 * w) - p.window_const.powi(2) * p.eta_star).abs() < 1e-9 * p.f(0.0));
        assert_eq!(p.f(0.0), p.f(w));
        let far = (1.0 + 8.0 / p.mass_const) * w;
        assert!((p.f(far) - p.floor()).abs() < 1e-12 * p.floor());
        let (s, t) = (w * 1.5, w * 3.0);
        // both roots are ≈ w, so allow rounding on that scale
        assert!(p.f(s).sqrt() - p.f(t).sqrt() <= p.mass_const * (t - s) / 8.0 + 1e-12 * w);
        let q = RigidityProfile::at_floor(0.5, 50, 100.0).unwrap();
        assert!((q.f(0.0) - q.floor()).abs() < 1e-9 * q.floor());
        assert!(RigidityProfile::new(1e-3, 1.5, 10, 100.0).is_err());
    }

    #[test]
    fn domain_examples() {
        let mu = delta0();
        let fc = FreeConvolution::new(&mu, 1.0).unwrap();
        let p = RigidityProfile::at_floor(1e-6, 5, 100.0).unwrap();
        let big_m = p.domain_height();
        let e = fc.edge_right();
        let f = p.f(1.0);
        assert!(!domain_contains(&fc, &p, big_m, c(e + 0.5 * f, 1.0)).unwrap());
        assert!(!domain_contains(&fc, &p, big_m, c(e + f + 1.0, big_m)).unwrap());
        // direct evaluation with the closed-form semicircle transform
        for im in [0.1, 200.0] {
            let z = c(e + f, im);
            let n = 5.0f64;
            let expect = 1.0 / (n.ln() * n * semicircle_stieltjes(1.0, z).im) <= im;
            assert_eq!(domain_contains(&fc, &p, big_m, z).unwrap(), expect);
        }
        assert!(domain_contains(&fc, &p, big_m, c(e + f, 200.0)).unwrap());
    }

    #[test]
    fn lattice_respects_budget_and_domain() {
        let mu = delta0();
        let fc0 = FreeConvolution::new(&mu, 0.0).unwrap();
        let p = RigidityProfile::at_floor(1e-6, 10, 100.0).unwrap();
        let big_m = p.domain_height();
        let lat = lattice_points(&fc0, &p, big_m, 2000).unwrap();
        assert!(lat.coarsened && lat.coarsening > 1.0);
        assert!(!lat.points.is_empty() && lat.points.len() <= 2000);
        for &z in &lat.points {
            assert!(domain_contains(&fc0, &p, big_m, z).unwrap());
        }
        // an empty domain
        let empty = lattice_points(&fc0, &p, p.f(0.0) * 0.5, 2000).unwrap();
        assert!(empty.points.is_empty());
    }

    #[test]
    fn lattice_point_approximates_preimage() {
        let mu = delta0();
        let fc = FreeConvolution::new(&mu, 0.5).unwrap();
        let p = RigidityProfile::at_floor(1e-6, 10, 100.0).unwrap();
        let big_m = p.domain_height();
        let w = c(fc.edge_right() + p.f(0.5) * 1.5, 0.5 * big_m);
        assert!(domain_contains(&fc, &p, big_m, w).unwrap());
        let (_, z) = nearest_lattice_point(&fc, &p, big_m, w).unwrap().unwrap();
        assert!((z - w).norm() <= 1e-5);
    }

    #[test]
    fn monotonicity_example_path() {
        let mu = delta0();
        let t = 1.0;
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let times: Vec<f64> = (0..50).map(|k| t * k as f64 / 49.0).collect();
        let family = EdgeFamily::new(&mu, &times).unwrap();
        let u = pull_back(&fc, c(fc.edge_right() + 0.5, 0.5)).unwrap();
        let path = flow_on_family(&family, u).unwrap();
        let p = RigidityProfile::for_measure(&mu, 1e-3, 400, 100.0).unwrap();
        let rep = monotonicity_report(&family, &path, &p);
        assert_eq!(rep.hypotheses_unmet, 0);
        assert_eq!(rep.kappa_gain.checked, 50);
        assert_eq!(rep.violations(), 0);
        // s = t contributes zero slack
        assert!(rep.kappa_gain.worst_slack.abs() < 1e-12);
    }

    #[test]
    fn negative_terminal_kappa_is_flagged() {
        let mu = delta0();
        let family = EdgeFamily::new(&mu, &[0.0, 0.5, 1.0]).unwrap();
        let path = flow_on_family(&family, c(0.0, 1.2)).unwrap();
        assert!(path.terminal().kappa < 0.0);
        let p = RigidityProfile::for_measure(&mu, 1e-3, 400, 100.0).unwrap();
        let rep = monotonicity_report(&family, &path, &p);
        assert_eq!(rep.hypotheses_unmet, 1);
        assert_eq!(rep.kappa_gain.checked + rep.sqrt_kappa_gain.checked + rep.profile_gain.checked, 0);
    }
}
