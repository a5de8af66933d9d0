//! Worked examples with explicit initial data: the uniform law on [−1, 0] and
//! measures of small support.

use std::f64::consts::PI;

use crate::error::Result;
use crate::freeconv::FreeConvolution;
use crate::stats::mean;

use super::{initial_data, reference_measure, simulate_trials, Check, ExperimentConfig, ExperimentReport, Table};

/// Largest gap between the symmetric values ϱ_t(−½ + a) and ϱ_t(−½ − a) tolerated.
const SYMMETRY_TOLERANCE: f64 = 1e-8;
/// Largest |ξ² + ξ − t| tolerated.
const XI_TOLERANCE: f64 = 1e-10;
/// Largest admissible ratio of fitted top-particle constants when n doubles.
const FIT_GROWTH: f64 = 1.5;

fn grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let k = points.max(2);
    (0..k).map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64).collect()
}

/// Open grid: `points` equispaced interior points of (lo, hi).
fn interior(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (1..=points).map(|j| lo + (hi - lo) * j as f64 / (points + 1) as f64).collect()
}

/// Edge asymptotics, symmetry and boundedness of the density, the ξ equation, and the
/// simulated top-particle bound for uniform initial data on [−1, 0].
pub fn uniform_profile_checks(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(cfg);
    let mu0 = reference_measure(cfg)?;
    let mut edges = Table::new(&["t", "xi", "xi_residual", "edge", "closed_form", "fitted_constant"]);
    let mut dens = Table::new(&["t", "y", "density", "mirror"]);
    let (mut worst_c, mut worst_xi, mut worst_sym, mut max_density) = (0.0f64, 0.0f64, 0.0f64, f64::NEG_INFINITY);
    for &t in &cfg.t_grid {
        let fc = FreeConvolution::new(&mu0, t)?;
        let xi = fc.xi_plus();
        let e = fc.edge_right();
        let closed = (1.0 + (1.0 / t).ln()) * t;
        let c = (e - closed).abs() / (t * t);
        let res = (xi * xi + xi - t).abs();
        edges.push(vec![t, xi, res, e, closed, c]);
        report.note(&format!("edge_t{t}"), e);
        worst_c = worst_c.max(c);
        worst_xi = worst_xi.max(res);
        // The support is symmetric about −½, so a runs over [0, E⁺ + ½]. The outermost
        // pair is taken at the computed edges themselves: the density has a square-root
        // zero there, and −½ + (E⁺ + ½) is off E⁺ by a rounding error that would show up
        // at the 1e−8 level.
        let em = fc.edge_left();
        worst_sym = worst_sym.max((em + 1.0 + e).abs());
        let a_grid = grid(0.0, e + 0.5, cfg.grid_points);
        for (j, a) in a_grid.iter().enumerate() {
            let (y, y_mirror) = if j + 1 == a_grid.len() { (e, em) } else { (-0.5 + a, -0.5 - a) };
            let (r, m) = (fc.density(y), fc.density(y_mirror));
            dens.push(vec![t, y, r, m]);
            worst_sym = worst_sym.max((r - m).abs());
            max_density = max_density.max(r.max(m));
        }
    }
    report.check(Check::new(
        "edge_expansion",
        worst_c <= cfg.edge_constant,
        worst_c,
        cfg.edge_constant,
        "fitted C in |E_t - (1 + log 1/t) t| <= C t^2",
    ));
    report.check(Check::new(
        "density_symmetry",
        worst_sym <= SYMMETRY_TOLERANCE,
        worst_sym,
        SYMMETRY_TOLERANCE,
        "largest |rho(-1/2 + a) - rho(-1/2 - a)| and |E- + 1 + E+|",
    ));
    report.check(Check::new("density_at_most_one", max_density <= 1.0, max_density, 1.0, "largest sampled density"));
    report.check(Check::new("xi_equation", worst_xi <= XI_TOLERANCE, worst_xi, XI_TOLERANCE, "|xi^2 + xi - t|"));
    report.tables.insert("edges".into(), edges);
    report.tables.insert("density".into(), dens);

    if cfg.trials > 0 {
        top_particle_checks(cfg, &mut report)?;
    }
    Ok(report.finish())
}

/// sup_{s ≤ t} |λ₁(s) − γ₁(s)| against C(t + log n·√(t/n)) over the time grid, fitted
/// per particle count.
fn top_particle_checks(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let mut counts = cfg.n_values.clone();
    if !counts.contains(&cfg.n) {
        counts.push(cfg.n);
    }
    counts.sort_unstable();
    let mut table = Table::new(&["n", "trial", "time", "running_sup", "scale", "ratio"]);
    let mut fitted = Vec::new();
    let mut worst = 0.0f64;
    for (j, &n) in counts.iter().enumerate() {
        let (sys, mu_n) = initial_data(cfg, n)?;
        let nf = n as f64;
        let gamma1: Vec<f64> = cfg
            .t_grid
            .iter()
            .map(|&t| Ok(FreeConvolution::new(&mu_n, t)?.quantile(0.5 / nf)))
            .collect::<Result<_>>()?;
        let trials = simulate_trials(cfg, &sys, (j as u64) << 32)?;
        let mut per_trial = Vec::new();
        for (k, tr) in trials.iter().enumerate() {
            let Some(tr) = tr else {
                report.excluded_trials += 1;
                continue;
            };
            let mut sup = (sys.top().unwrap_or(0.0) - mu_n.max_finite().unwrap_or(0.0)).abs();
            let mut ratio = 0.0f64;
            for ((t, s), &g) in tr.snapshots.iter().zip(&gamma1) {
                sup = sup.max((s.top().unwrap_or(f64::NEG_INFINITY) - g).abs());
                let scale = t + nf.ln() * (t / nf).sqrt();
                table.push(vec![nf, k as f64, *t, sup, scale, sup / scale]);
                ratio = ratio.max(sup / scale);
            }
            per_trial.push(ratio);
            worst = worst.max(ratio);
        }
        let c = mean(&per_trial);
        report.note(&format!("top_fitted_constant_n{n}"), c);
        fitted.push(c);
    }
    report.check(Check::new(
        "top_particle_bound",
        worst <= cfg.fit_cap,
        worst,
        cfg.fit_cap,
        "largest sup_s |lambda_1 - gamma_1| / (t + log n sqrt(t/n))",
    ));
    let growth = fitted.windows(2).map(|w| w[1] / w[0]).fold(0.0f64, f64::max);
    report.check(Check::new(
        "top_fit_scaling",
        fitted.len() < 2 || growth <= FIT_GROWTH,
        growth,
        FIT_GROWTH,
        "ratio of fitted constants between consecutive particle counts",
    ));
    report.tables.insert("top_particle".into(), table);
    Ok(())
}

/// Edges, density sandwiches and the quantile-gap bound for initial data supported in
/// [−c/2, c/2].
pub fn small_support_checks(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(cfg);
    let mu0 = reference_measure(cfg)?;
    let c = match (mu0.max_finite(), mu0.min_finite()) {
        (Some(hi), Some(lo)) => 2.0 * hi.abs().max(lo.abs()),
        _ => 0.0,
    };
    let m = cfg.support_m;
    report.note("support_width", c);
    let mut sandwich = Table::new(&["t", "y", "density", "lower", "upper", "region"]);
    let mut gaps = Table::new(&["t", "y", "y_prime", "gap", "bound"]);
    let (mut edge_dev, mut sandwich_bad, mut gap_bad, mut sampled) = (0.0f64, 0usize, 0usize, 0usize);
    let mut any = false;
    for &t in &cfg.t_grid {
        let rt = t.sqrt();
        if rt < 25.0 * c * m * m {
            report.check(Check::unmet(
                &format!("hypothesis_t{t}"),
                format!("sqrt(t) = {rt} < 25 c M^2 = {}", 25.0 * c * m * m),
            ));
            continue;
        }
        any = true;
        let fc = FreeConvolution::new(&mu0, t)?;
        let (ep, em) = (fc.edge_right(), fc.edge_left());
        edge_dev = edge_dev.max((ep - 2.0 * rt).abs()).max((em + 2.0 * rt).abs());
        report.note(&format!("edge_right_t{t}"), ep);
        report.note(&format!("edge_left_t{t}"), em);

        let window = 2.0 * rt * (1.0 - (2.0 * m).powi(-2)).sqrt();
        let semicircle = |y: f64| (4.0 * t - y * y).max(0.0).sqrt() / (2.0 * PI * t);
        let mut record = |y: f64, lo: f64, hi: f64, region: f64| {
            let r = fc.density(y);
            sandwich.push(vec![t, y, r, lo, hi, region]);
            sampled += 1;
            if !(r >= lo && r <= hi) {
                sandwich_bad += 1;
            }
        };
        for y in grid(-window, window, cfg.grid_points) {
            let s = semicircle(y);
            record(y, 2.0 / 3.0 * s, 1.5 * s, 0.0);
        }
        let t32 = t.powf(1.5);
        for y in interior(window, ep, cfg.grid_points) {
            let s = ((ep - y) / t32).sqrt();
            record(y, 2.0 / (3.0 * PI) * s, 1.5 / PI * s, 1.0);
        }
        for y in interior(em, -window, cfg.grid_points) {
            let s = ((y - em) / t32).sqrt();
            record(y, 2.0 / (3.0 * PI) * s, 1.5 / PI * s, -1.0);
        }

        let qs = grid(0.0, 4.0 / 7.0, cfg.grid_points.min(101));
        let gamma: Vec<f64> = qs.iter().map(|&q| fc.quantile(q)).collect();
        let k24 = (24.0 * PI).powf(2.0 / 3.0) * rt;
        for a in 0..qs.len() {
            for b in a..qs.len() {
                let gap = gamma[a] - gamma[b];
                let bound = k24 * (qs[b].powf(2.0 / 3.0) - qs[a].powf(2.0 / 3.0));
                if b == a + 1 || (a == 0 && b + 1 == qs.len()) {
                    gaps.push(vec![t, qs[a], qs[b], gap, bound]);
                }
                if gap > bound {
                    gap_bad += 1;
                }
            }
        }
    }
    if any {
        report.check(Check::new(
            "edge_location",
            edge_dev <= 2.0 * c,
            edge_dev,
            2.0 * c,
            "max |E_t^(+/-) -/+ 2 sqrt(t)|",
        ));
        report.check(Check::new(
            "density_sandwich",
            sandwich_bad == 0,
            sandwich_bad as f64,
            0.0,
            format!("points outside the middle and edge sandwiches out of {sampled}"),
        ));
        report.check(Check::new(
            "quantile_gap",
            gap_bad == 0,
            gap_bad as f64,
            0.0,
            "pairs 0 <= y <= y' <= 4/7 violating the gap bound",
        ));
    }
    report.tables.insert("sandwich".into(), sandwich);
    report.tables.insert("quantile_gaps".into(), gaps);
    Ok(report.finish())
}
