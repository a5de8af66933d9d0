//! Edge rigidity, bulk rigidity and edge universality.

use crate::characteristics::density_lower_bound;
use crate::dbm::{beta_ensemble_top, NoiseStream};
use crate::error::Result;
use crate::freeconv::FreeConvolution;
use crate::measures::FiniteMeasure;
use crate::stats::{ks_two_sample, mean, median, quantile, Summary};

use super::{initial_data, par_trials, simulate_trials, Check, ExperimentConfig, ExperimentReport, Table};

/// Derivation tag of the reference-sampler streams.
const REFERENCE_TAG: u64 = 0x7265_6665;

/// Checks the averaged density lower bound μ₀([−x, 0]) ≥ b·x^{3/2} after moving the
/// top of the support to 0.
fn assumption_check(mu0: &FiniteMeasure, cfg: &ExperimentConfig) -> Result<Check> {
    let Some(top) = mu0.max_finite() else {
        return Ok(Check::unmet("density_lower_bound", "no finite atoms"));
    };
    let shifted = mu0.affine(1.0, -top, 1.0)?;
    let b = density_lower_bound(&shifted, cfg.eta_star, cfg.horizon)?;
    Ok(if b > 0.0 {
        Check::new("density_lower_bound", true, b, 0.0, format!("eta*={} T={}", cfg.eta_star, cfg.horizon))
    } else {
        Check::unmet("density_lower_bound", format!("best constant {b} is not positive"))
    })
}

/// Top-particle fluctuations n^{2/3}(λ₁(t) − E_t), maximised over the time grid.
pub fn rigidity_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let n = cfg.n;
    let mut report = ExperimentReport::new(cfg);
    let (sys, mu0) = initial_data(cfg, n)?;
    report.check(assumption_check(&mu0, cfg)?);

    let edges: Vec<f64> =
        cfg.t_grid.iter().map(|&t| FreeConvolution::new(&mu0, t).map(|fc| fc.edge_right())).collect::<Result<_>>()?;
    let nf = n as f64;
    let log_n = nf.ln();
    let scale = nf.powf(2.0 / 3.0);
    let literal = log_n.powi(15) / scale;

    let trials = simulate_trials(cfg, &sys, 0)?;
    let mut table = Table::new(&["trial", "time", "top", "edge", "rescaled"]);
    let mut per_trial = Table::new(&["trial", "max_rescaled", "max_rescaled_over_log", "max_excess"]);
    let mut stats = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    for (k, tr) in trials.iter().enumerate() {
        let Some(tr) = tr else {
            report.excluded_trials += 1;
            continue;
        };
        let mut best = f64::NEG_INFINITY;
        let mut excess = f64::NEG_INFINITY;
        for ((t, s), &e) in tr.snapshots.iter().zip(&edges) {
            let top = s.top().unwrap_or(f64::NEG_INFINITY);
            let r = scale * (top - e);
            table.push(vec![k as f64, *t, top, e, r]);
            best = best.max(r);
            excess = excess.max(top - e);
        }
        per_trial.push(vec![k as f64, best, best / log_n, excess]);
        stats.push(best);
        worst_excess = worst_excess.max(excess);
    }
    let used = stats.len();
    report.check(Check::new(
        "literal_bound",
        used > 0 && worst_excess <= literal,
        worst_excess,
        literal,
        "max over trials and times of lambda_1 - E_t against (log n)^15 n^(-2/3)",
    ));
    let q = quantile(&stats, cfg.percentile);
    report.check(Check::new(
        "percentile_cap",
        used > 0 && q <= cfg.cap,
        q,
        cfg.cap,
        format!("{} percentile of n^(2/3)(lambda_1 - E_t) over {used} trials", cfg.percentile),
    ));
    report.note("percentile_over_log", q / log_n);
    put_summary(&mut report, "rescaled", &stats);
    report.tables.insert("rigidity".into(), table);
    report.tables.insert("rigidity_trials".into(), per_trial);
    Ok(report.finish())
}

fn put_summary(report: &mut ExperimentReport, prefix: &str, xs: &[f64]) {
    let s = Summary::of(xs);
    for (k, v) in [
        ("count", s.count as f64),
        ("mean", s.mean),
        ("std_dev", s.std_dev),
        ("min", s.min),
        ("q05", s.q05),
        ("median", s.median),
        ("q95", s.q95),
        ("max", s.max),
    ] {
        report.note(&format!("{prefix}_{k}"), v);
    }
}

/// Rescaled bulk deviations min(i, n+1−i)^{1/3} n^{2/3} |λ_i − γ_i| / log n at the final
/// time, for each particle count in `n_values`.
pub fn bulk_rigidity_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(cfg);
    let t = cfg.final_time();
    let mut table = Table::new(&["n", "trial", "max_rescaled", "argmax", "middle_deviation", "top_deviation"]);
    let mut fitted = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    let (mut middle_wins, mut compared) = (0usize, 0usize);
    for (j, &n) in cfg.n_values.iter().enumerate() {
        let (sys, mu0) = initial_data(cfg, n)?;
        if j == 0 {
            report.check(assumption_check(&mu0, cfg)?);
        }
        let gamma = FreeConvolution::new(&mu0, t)?.classical_locations(n);
        let nf = n as f64;
        let factor = nf.powf(2.0 / 3.0) / nf.ln().max(f64::MIN_POSITIVE);
        let trials = simulate_trials(cfg, &sys, (j as u64) << 32)?;
        let mut maxima = Vec::new();
        for (k, tr) in trials.iter().enumerate() {
            let Some(tr) = tr else {
                report.excluded_trials += 1;
                continue;
            };
            let lambda = tr.snapshots.last().expect("final snapshot").1.positions();
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0usize);
            for (i, (&l, &g)) in lambda.iter().zip(&gamma).enumerate() {
                let rank = (i + 1).min(n - i) as f64;
                let r = rank.cbrt() * factor * (l - g).abs();
                if r > best {
                    best = r;
                    arg = i + 1;
                }
            }
            let mid = n / 2;
            let middle = if n >= 2 { (lambda[mid - 1] - gamma[mid - 1]).abs() } else { f64::NAN };
            let top = (lambda[0] - gamma[0]).abs();
            if n >= 2 {
                compared += 1;
                if middle < top {
                    middle_wins += 1;
                }
            }
            table.push(vec![nf, k as f64, best, arg as f64, middle, top]);
            maxima.push(best);
            worst = worst.max(best);
        }
        let c = mean(&maxima);
        report.note(&format!("fitted_constant_n{n}"), c);
        fitted.push(c);
    }
    report.check(Check::new(
        "bulk_bound",
        worst.is_finite() && worst <= cfg.bulk_bound,
        worst,
        cfg.bulk_bound,
        "max over n, trials and i of the rescaled deviation",
    ));
    let growth = fitted.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    report.check(Check::new(
        "fitted_constant_non_increasing",
        fitted.len() < 2 || growth <= 0.0,
        if fitted.len() < 2 { 0.0 } else { growth },
        0.0,
        "largest increase of the mean rescaled deviation between consecutive n",
    ));
    let frac = if compared > 0 { middle_wins as f64 / compared as f64 } else { f64::NAN };
    report.check(Check::new(
        "middle_below_top",
        compared == 0 || frac >= 0.8,
        frac,
        0.8,
        "fraction of trials with |lambda_(n/2) - gamma_(n/2)| < |lambda_1 - gamma_1|",
    ));
    report.tables.insert("bulk".into(), table);
    Ok(report.finish())
}

/// Reference draws reference_n^{2/3}(2 − λ_max) of the tridiagonal β-ensemble.
pub fn reference_edge_statistic(cfg: &ExperimentConfig, beta: f64) -> Vec<f64> {
    let m = cfg.reference_n;
    let scale = (m as f64).powf(2.0 / 3.0);
    par_trials(cfg.reference_samples, |k| {
        let stream = NoiseStream::new(cfg.seed, k).derived(REFERENCE_TAG ^ beta.to_bits());
        scale * (2.0 - beta_ensemble_top(m, beta, &stream))
    })
}

/// Edge statistic n^{2/3} A(t)^{1/3} (E_t − λ₁(t)) against the tridiagonal reference.
pub fn universality_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let n = cfg.n;
    let mut report = ExperimentReport::new(cfg);
    let nf = n as f64;
    let min_time = cfg.min_time.unwrap_or_else(|| nf.powf(-1.0 / 3.0 + cfg.edge_exponent).max(0.0));
    report.note("min_time", min_time);
    let (sys, mu0) = initial_data(cfg, n)?;
    let edges: Vec<(f64, f64)> = cfg
        .t_grid
        .iter()
        .map(|&t| {
            let fc = FreeConvolution::new(&mu0, t)?;
            Ok((fc.edge_right(), fc.edge_expansion()?.a_coeff))
        })
        .collect::<Result<_>>()?;
    let admitted: Vec<usize> = (0..cfg.t_grid.len()).filter(|&j| cfg.t_grid[j] >= min_time).collect();
    if admitted.is_empty() {
        report.check(Check::unmet("time_window", format!("no observation time reaches {min_time}")));
        return Ok(report.finish());
    }

    let trials = simulate_trials(cfg, &sys, 0)?;
    let mut table = Table::new(&["trial", "time", "top", "edge", "a_coeff", "statistic"]);
    let mut by_time: Vec<Vec<f64>> = vec![Vec::new(); cfg.t_grid.len()];
    for (k, tr) in trials.iter().enumerate() {
        let Some(tr) = tr else {
            report.excluded_trials += 1;
            continue;
        };
        for &j in &admitted {
            let (t, s) = &tr.snapshots[j];
            let (e, a) = edges[j];
            let top = s.top().unwrap_or(f64::NEG_INFINITY);
            let stat = nf.powf(2.0 / 3.0) * a.cbrt() * (e - top);
            table.push(vec![k as f64, *t, top, e, a, stat]);
            by_time[j].push(stat);
        }
    }

    let reference = reference_edge_statistic(cfg, cfg.beta);
    let other_beta = if cfg.beta == 2.0 { 1.0 } else { 2.0 };
    let other = reference_edge_statistic(cfg, other_beta);
    let mut ref_table = Table::new(&["sample", "statistic", "other_beta_statistic"]);
    for (k, (a, b)) in reference.iter().zip(&other).enumerate() {
        ref_table.push(vec![k as f64, *a, *b]);
    }

    for &j in &admitted {
        let t = cfg.t_grid[j];
        let sample = &by_time[j];
        let ks = ks_two_sample(sample, &reference);
        report.check(Check::new(
            &format!("ks_t{t}"),
            !sample.is_empty() && ks.distance <= cfg.ks_threshold,
            ks.distance,
            cfg.ks_threshold,
            format!("p-value {:.4}, {} vs {} samples", ks.p_value, ks.n_a, ks.n_b),
        ));
        report.note(&format!("ks_t{t}"), ks.distance);
        report.note(&format!("p_value_t{t}"), ks.p_value);
        if sample.len() >= 100 {
            report.note(&format!("ks_first100_t{t}"), ks_two_sample(&sample[..100], &reference).distance);
        }
        let med = median(sample);
        report.check(Check::new(
            &format!("median_positive_t{t}"),
            med > 0.0,
            med,
            0.0,
            "median of E_t - lambda_1 statistic",
        ));
        put_summary(&mut report, &format!("statistic_t{t}"), sample);
    }
    let sep = ks_two_sample(&reference, &other).distance;
    report.check(Check::new(
        "beta_distinguishable",
        sep >= 0.1,
        sep,
        0.1,
        format!("KS between reference samples at beta {} and {}", cfg.beta, other_beta),
    ));
    put_summary(&mut report, "reference", &reference);
    report.tables.insert("universality".into(), table);
    report.tables.insert("reference".into(), ref_table);
    Ok(report.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentKind, Verdict};

    #[test]
    fn small_rigidity_run_is_deterministic() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Rigidity);
        cfg.n = 20;
        cfg.trials = 4;
        cfg.t_grid = vec![0.5, 1.0];
        let a = rigidity_experiment(&cfg).unwrap();
        let b = rigidity_experiment(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.tables["rigidity"].rows.len(), 8);
        assert_eq!(a.checks[0].verdict, Verdict::Pass);
    }

    #[test]
    fn uniform_data_meets_density_assumption() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Rigidity);
        cfg.initial_data = crate::harness::InitialKind::Uniform;
        let (_, mu) = initial_data(&cfg, 50).unwrap();
        let c = assumption_check(&mu, &cfg).unwrap();
        assert_eq!(c.verdict, Verdict::Pass);
        assert!(c.value > 0.0);
    }

    #[test]
    fn reference_statistic_has_tracy_widom_scale() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Universality);
        cfg.reference_n = 200;
        cfg.reference_samples = 200;
        let r = reference_edge_statistic(&cfg, 2.0);
        // TW2 of E - lambda has mean near 1.77
        let m = mean(&r);
        assert!(m > 1.2 && m < 2.4, "{m}");
    }
}
