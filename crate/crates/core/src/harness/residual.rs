//! Loop-equation residual |m̃_s(w) − m_s(w)| on the spectral domain, and weak
//! convergence of the empirical measure in Lévy distance.

use num_complex::Complex64;

use crate::characteristics::{density_lower_bound, domain_contains, RigidityProfile};
use crate::dbm::ParticleSystem;
use crate::error::Result;
use crate::freeconv::FreeConvolution;
use crate::stats::mean;

use super::{initial_data, simulate_trials, Check, ExperimentConfig, ExperimentReport, Table};

/// Bisection steps of the Lévy distance.
const LEVY_BISECTIONS: usize = 60;
/// The weak-convergence comparison uses n / WEAK_COARSENING particles as the small size.
const WEAK_COARSENING: usize = 4;
/// Largest accepted Lévy distance at the configured n.
const LEVY_CAP: f64 = 0.05;

/// Lévy distance between the empirical law of `positions` (weight 1/n each, n = len,
/// ±∞ entries allowed) and a continuous CDF `cdf`.
///
/// Feasibility of ε reduces to the jump points a₁ ≤ … ≤ aₙ of the empirical CDF:
/// G(a_k − ε) ≤ F(a_k−) + ε and G(a_k + ε) ≥ F(a_k) − ε.
pub fn levy_to_continuous(positions: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = positions.len();
    if n == 0 {
        return f64::NAN;
    }
    let mut xs: Vec<f64> = positions.to_vec();
    xs.sort_by(f64::total_cmp);
    let below = xs.iter().filter(|x| **x == f64::NEG_INFINITY).count();
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    let nf = n as f64;
    let feasible = |eps: f64| {
        finite.iter().enumerate().all(|(k, &a)| {
            let before = (below + k) as f64 / nf;
            let after = (below + k + 1) as f64 / nf;
            cdf(a - eps) <= before + eps && cdf(a + eps) >= after - eps
        })
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    if feasible(0.0) {
        return 0.0;
    }
    for _ in 0..LEVY_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Lévy distances between the empirical measure at the final time and μ_t, one per
/// completed trial, for `n` particles; also returns the excluded-trial count.
pub fn weak_convergence(cfg: &ExperimentConfig, n: usize, stream_offset: u64) -> Result<(Vec<f64>, usize)> {
    let (sys, mu0) = initial_data(cfg, n)?;
    let fc = FreeConvolution::new(&mu0, cfg.final_time())?;
    let trials = simulate_trials(cfg, &sys, stream_offset)?;
    let mut out = Vec::new();
    let mut excluded = 0;
    for tr in &trials {
        match tr {
            Some(tr) => {
                let last = &tr.snapshots.last().expect("final snapshot").1;
                out.push(levy_to_continuous(&last.positions(), |y| fc.cdf(y)));
            }
            None => excluded += 1,
        }
    }
    Ok((out, excluded))
}

/// Edge-tracking profile of μ₀ shifted so its top atom sits at 0. With η* = 0 the
/// profile is pinned at its floor, which is the η* → 0 limit of the domain.
fn profile_for(mu0: &crate::measures::FiniteMeasure, cfg: &ExperimentConfig) -> Result<RigidityProfile> {
    let top = mu0.max_finite().unwrap_or(0.0);
    let shifted = mu0.affine(1.0, -top, 1.0)?;
    if cfg.eta_star > 0.0 {
        RigidityProfile::for_measure(&shifted, cfg.eta_star, cfg.n, cfg.horizon)
    } else {
        let b = density_lower_bound(&shifted, 0.0, cfg.horizon)?;
        RigidityProfile::at_floor(b, cfg.n, cfg.horizon)
    }
}

/// Stopping-time bound (log n)^{7/2} / (n √(Im w·(Re w − E_s + Im w))).
fn stoptime_bound(n: f64, edge: f64, w: Complex64) -> f64 {
    n.ln().powf(3.5) / (n * (w.im * (w.re - edge + w.im)).sqrt())
}

/// Sample points of the spectral domain at time `s`, tagged by kind: 0 literal domain,
/// 1 near-edge points meeting every constraint except the profile offset, 2 the far
/// point E_s + 1 + i.
fn domain_points(fc: &FreeConvolution, p: &RigidityProfile, samples: usize) -> Result<Vec<(Complex64, u8)>> {
    let n = p.n as f64;
    let frak_m = p.domain_height();
    let s = fc.time();
    let e = fc.edge_right();
    let top = frak_m - 2.0 * s;
    let side = ((samples as f64).sqrt().ceil() as usize).max(2);
    let logspace = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..side).map(|j| lo * (hi / lo).powf(j as f64 / (side - 1) as f64)).take(k).collect()
    };
    let mut pts = Vec::new();
    // literal domain: Re w ≥ E_s + f(s)
    let re_lo = e + p.f(s);
    if re_lo < top {
        for x in logspace(re_lo, top, side) {
            for y in logspace(1.0 / (n * n), top, side) {
                let w = Complex64::new(x, y);
                if domain_contains(fc, p, frak_m, w)? {
                    pts.push((w, 0));
                }
            }
        }
    }
    let kappa_hi = (top - e).min(1.0);
    let kappa_lo = n.powf(-2.0 / 3.0);
    if kappa_lo < kappa_hi {
        for kappa in logspace(kappa_lo, kappa_hi, side) {
            for eta in logspace(1.0 / n, top.min(1.0), side) {
                let w = Complex64::new(e + kappa, eta);
                let im_m = fc.stieltjes_fc(w)?.im;
                if im_m > 0.0 && 1.0 / (n.ln() * n * im_m) <= eta {
                    pts.push((w, 1));
                }
            }
        }
    }
    pts.push((Complex64::new(e + 1.0, 1.0), 2));
    Ok(pts)
}

fn residual_rows(
    sys: &ParticleSystem,
    fc: &FreeConvolution,
    points: &[(Complex64, u8)],
    trial: usize,
    table: &mut Table,
) -> Result<(usize, usize, usize, usize)> {
    let n = sys.n_total() as f64;
    let e = fc.edge_right();
    let (mut within, mut total, mut far_within, mut far_total) = (0, 0, 0, 0);
    for &(w, kind) in points {
        let r = (sys.empirical_stieltjes(w) - fc.stieltjes_fc(w)?).norm();
        let bound = stoptime_bound(n, e, w);
        table.push(vec![trial as f64, fc.time(), w.re, w.im, kind as f64, r, bound]);
        total += 1;
        if r <= bound {
            within += 1;
        }
        if kind == 2 {
            far_total += 1;
            let dist = (w.re - e).hypot(w.im);
            if r <= 2.0 / (n * dist * dist) {
                far_within += 1;
            }
        }
    }
    Ok((within, total, far_within, far_total))
}

/// Fraction of sampled (s, w) pairs with |m̃_s(w) − m_s(w)| within the stopping-time
/// bound, plus weak convergence of the empirical measure at the final time.
pub fn loop_residual_diagnostic(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let n = cfg.n;
    let mut report = ExperimentReport::new(cfg);
    let (sys, mu0) = initial_data(cfg, n)?;
    let profile = profile_for(&mu0, cfg);
    let mut grids = Vec::new();
    let mut literal = 0usize;
    for &s in &cfg.t_grid {
        let fc = FreeConvolution::new(&mu0, s)?;
        let pts = match &profile {
            Ok(p) => domain_points(&fc, p, cfg.domain_samples)?,
            Err(_) => vec![(Complex64::new(fc.edge_right() + 1.0, 1.0), 2)],
        };
        literal += pts.iter().filter(|p| p.1 == 0).count();
        grids.push((fc, pts));
    }
    if let Err(e) = &profile {
        report.check(Check::unmet("density_lower_bound", e.to_string()));
    }
    report.note("literal_domain_points_per_trial", literal as f64);

    let trials = simulate_trials(cfg, &sys, 0)?;
    let mut table = Table::new(&["trial", "time", "re_w", "im_w", "kind", "residual", "bound"]);
    let (mut within, mut total, mut far_within, mut far_total) = (0, 0, 0, 0);
    let mut levy = Vec::new();
    for (k, tr) in trials.iter().enumerate() {
        let Some(tr) = tr else {
            report.excluded_trials += 1;
            continue;
        };
        for ((_, s), (fc, pts)) in tr.snapshots.iter().zip(&grids) {
            let (a, b, c, d) = residual_rows(s, fc, pts, k, &mut table)?;
            within += a;
            total += b;
            far_within += c;
            far_total += d;
        }
        let (_, last) = tr.snapshots.last().expect("final snapshot");
        let fc = &grids.last().expect("time grid").0;
        levy.push(levy_to_continuous(&last.positions(), |y| fc.cdf(y)));
    }
    let frac = if total > 0 { within as f64 / total as f64 } else { f64::NAN };
    report.check(Check::new(
        "stoptime_fraction",
        total > 0 && frac >= cfg.loop_fraction,
        frac,
        cfg.loop_fraction,
        format!("{within} of {total} sampled (s, w) pairs within the bound"),
    ));
    report
        .note("far_point_crude_fraction", if far_total > 0 { far_within as f64 / far_total as f64 } else { f64::NAN });
    report.tables.insert("residual".into(), table);

    // weak convergence: every trial at n, and on average against n / 4
    let worst = levy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.check(Check::new(
        "levy_distance",
        !levy.is_empty() && worst <= LEVY_CAP,
        worst,
        LEVY_CAP,
        format!("largest over {} trials at n = {n}", levy.len()),
    ));
    let small = (n / WEAK_COARSENING).max(1);
    let (coarse, excluded) = weak_convergence(cfg, small, 1 << 40)?;
    report.excluded_trials += excluded;
    let (m_big, m_small) = (mean(&levy), mean(&coarse));
    report.note(&format!("levy_mean_n{n}"), m_big);
    report.note(&format!("levy_mean_n{small}"), m_small);
    report.check(Check::new(
        "levy_decreases",
        m_big < m_small,
        m_big,
        m_small,
        format!("mean Levy distance at n = {n} against n = {small}"),
    ));
    let mut lt = Table::new(&["trial", "levy_n", "levy_small"]);
    for (k, (a, b)) in levy.iter().zip(&coarse).enumerate() {
        lt.push(vec![k as f64, *a, *b]);
    }
    report.tables.insert("levy".into(), lt);
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn levy_of_point_mass_against_uniform() {
        // F = δ_{1/2}, G uniform on [0, 1]: ε solves ε = 1/2 − ε
        let d = levy_to_continuous(&[0.5], |y| y.clamp(0.0, 1.0));
        assert!((d - 0.25).abs() < 1e-12, "{d}");
    }

    #[test]
    fn levy_of_quantile_sample_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
        let d = levy_to_continuous(&xs, |y| y.clamp(0.0, 1.0));
        assert!(d <= 0.5 / n as f64 + 1e-12, "{d}");
    }

    #[test]
    fn far_point_bound_is_finite() {
        let b = stoptime_bound(400.0, 2.0, Complex64::new(3.0, 1.0));
        assert!(b > 0.0 && b < 1.0);
    }
}
