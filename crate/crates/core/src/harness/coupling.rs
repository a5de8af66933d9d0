//! Coupled evolutions sharing one Brownian motion, and the deterministic quantile
//! comparison of the flows.

use crate::dbm::{evolve_coupled, Integrator, NoiseStream, ParticleSystem, Trajectory};
use crate::error::{Error, Result};
use crate::freeconv::FreeConvolution;
use crate::measures::FiniteMeasure;

use super::{par_trials, Check, ExperimentConfig, ExperimentReport, Table};

/// Frozen +∞ particles heading the gap-dominated configuration.
const GAP_PREFIX: usize = 5;
const WIDE_SPACING: f64 = 0.03;
const NARROW_SPACING: f64 = 0.01;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Claim {
    /// λ_i(t) ≥ λ̃_i(t) on the indices finite in both.
    Height,
    /// λ_i − λ_j ≥ λ̃_i − λ̃_j for i < j finite in the first system.
    Gap,
    /// λ_i(t) = λ̃_i(t).
    Identical,
}

struct Pair {
    name: &'static str,
    claim: Claim,
    upper: ParticleSystem,
    lower: ParticleSystem,
}

fn fan(count: usize, spacing: f64) -> Vec<f64> {
    (0..count).map(|k| -spacing * k as f64).collect()
}

fn pairs(n: usize, beta: f64) -> Result<Vec<Pair>> {
    let quarter = (n / 4).max(1);
    let delta = ParticleSystem::delta_fan(n, 0.0, beta)?;
    // ¼δ₀ with the remaining particles frozen at −∞
    let mut small = ParticleSystem::delta_fan(quarter, 0.0, beta)?.positions();
    small.resize(n, f64::NEG_INFINITY);
    let small = ParticleSystem::new(&small, beta)?;

    let prefix = GAP_PREFIX.min(n.saturating_sub(1));
    let last_finite = (prefix + (n - prefix).div_ceil(2)).min(n);
    let mut wide = vec![f64::INFINITY; prefix];
    wide.extend(fan(last_finite - prefix, WIDE_SPACING));
    wide.resize(n, f64::NEG_INFINITY);
    let narrow = fan(n, NARROW_SPACING);
    Ok(vec![
        Pair { name: "identical", claim: Claim::Identical, upper: delta.clone(), lower: delta.clone() },
        Pair { name: "height", claim: Claim::Height, upper: delta, lower: small },
        Pair {
            name: "gap",
            claim: Claim::Gap,
            upper: ParticleSystem::new(&wide, beta)?,
            lower: ParticleSystem::new(&narrow, beta)?,
        },
    ])
}

/// Largest violation of the claim in one snapshot pair (≤ 0 when it holds).
fn violation(claim: Claim, a: &ParticleSystem, b: &ParticleSystem) -> f64 {
    let (pa, pb) = (a.positions(), b.positions());
    let both = |i: usize| pa[i].is_finite() && pb[i].is_finite();
    let mut worst = f64::NEG_INFINITY;
    match claim {
        Claim::Identical => {
            for i in 0..pa.len() {
                let d = if both(i) {
                    (pa[i] - pb[i]).abs()
                } else if pa[i] == pb[i] {
                    0.0
                } else {
                    f64::INFINITY
                };
                worst = worst.max(d);
            }
        }
        Claim::Height => {
            for i in (0..pa.len()).filter(|&i| both(i)) {
                worst = worst.max(pb[i] - pa[i]);
            }
        }
        Claim::Gap => {
            let idx: Vec<usize> = (0..pa.len()).filter(|&i| both(i)).collect();
            for (x, &i) in idx.iter().enumerate() {
                for &j in &idx[x + 1..] {
                    worst = worst.max((pb[i] - pb[j]) - (pa[i] - pa[j]));
                }
            }
        }
    }
    worst
}

fn hypothesis_holds(claim: Claim, a: &ParticleSystem, b: &ParticleSystem) -> bool {
    claim == Claim::Identical || violation(claim, a, b) <= 0.0
}

/// Shared-noise couplings (identical, height-ordered, gap-dominated) and the
/// deterministic quantile comparison of ¼δ₀ against δ₀.
pub fn coupling_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let n = cfg.n;
    let mut report = ExperimentReport::new(cfg);
    let scheme = cfg.scheme_for(n);
    let mut table = Table::new(&["pair", "trial", "time", "violation"]);
    for (p, pair) in pairs(n, cfg.beta)?.into_iter().enumerate() {
        if !hypothesis_holds(pair.claim, &pair.upper, &pair.lower) {
            report.check(Check::unmet(&format!("{}_coupling", pair.name), "initial data violate the ordering"));
            continue;
        }
        let runs: Vec<Result<(Trajectory, Trajectory)>> = par_trials(cfg.trials, |k| {
            let mut integ = Integrator::new(scheme);
            let noise = NoiseStream::new(cfg.seed, ((p as u64) << 32) + k);
            evolve_coupled(&pair.upper, &pair.lower, cfg.final_time(), cfg.macro_dt, noise, &cfg.t_grid, &mut integ)
        });
        let (mut worst, mut violations, mut used) = (f64::NEG_INFINITY, 0usize, 0usize);
        for (k, run) in runs.into_iter().enumerate() {
            let (ta, tb) = match run {
                Ok(r) => r,
                Err(Error::StepFailure { .. } | Error::Collision { .. }) => {
                    report.excluded_trials += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            used += 1;
            for ((t, a), (_, b)) in ta.snapshots.iter().zip(&tb.snapshots) {
                let v = violation(pair.claim, a, b);
                table.push(vec![p as f64, k as f64, *t, v]);
                worst = worst.max(v);
                if v > cfg.coupling_tolerance {
                    violations += 1;
                }
            }
        }
        report.note(&format!("{}_worst_violation", pair.name), worst);
        report.check(Check::new(
            &format!("{}_coupling", pair.name),
            used > 0 && violations == 0,
            violations as f64,
            0.0,
            format!("snapshots beyond {} over {used} trials; worst {worst:e}", cfg.coupling_tolerance),
        ));
    }
    report.tables.insert("coupling".into(), table);
    quantile_comparison(cfg, &mut report)?;
    Ok(report.finish())
}

/// γ_t(y) ≤ γ̃_t(y) for ¼δ₀ against δ₀ on an equispaced grid of (0, ¼], and the edge
/// ordering 2√(t/4) ≤ 2√t.
fn quantile_comparison(cfg: &ExperimentConfig, report: &mut ExperimentReport) -> Result<()> {
    let lighter = FiniteMeasure::dirac(0.0, 0.25)?;
    let heavier = FiniteMeasure::dirac(0.0, 1.0)?;
    let top = lighter.total_mass();
    let k = cfg.quantile_points.max(1);
    let mut table = Table::new(&["time", "y", "lighter", "heavier"]);
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut edge_violations = 0usize;
    for &t in &cfg.t_grid {
        let (a, b) = (FreeConvolution::new(&lighter, t)?, FreeConvolution::new(&heavier, t)?);
        if a.edge_right() > b.edge_right() {
            edge_violations += 1;
        }
        for j in 1..=k {
            let y = top * j as f64 / k as f64;
            let (ga, gb) = (a.quantile(y), b.quantile(y));
            table.push(vec![t, y, ga, gb]);
            worst = worst.max(ga - gb);
            if ga > gb {
                violations += 1;
            }
        }
    }
    report.note("quantile_worst_difference", worst);
    report.check(Check::new(
        "quantile_comparison",
        violations == 0,
        violations as f64,
        0.0,
        format!("{k}-point y-grid per time; worst gamma - gamma~ = {worst:e}"),
    ));
    report.check(Check::new(
        "edge_ordering",
        edge_violations == 0,
        edge_violations as f64,
        0.0,
        "2 sqrt(t/4) <= 2 sqrt(t)",
    ));
    report.tables.insert("quantiles".into(), table);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{ExperimentKind, Verdict};

    #[test]
    fn pairs_satisfy_their_hypotheses() {
        for p in pairs(50, 2.0).unwrap() {
            assert!(hypothesis_holds(p.claim, &p.upper, &p.lower), "{}", p.name);
        }
        let p = &pairs(50, 2.0).unwrap()[2];
        assert_eq!(p.upper.first_finite_index(), GAP_PREFIX);
        assert!(p.upper.positions().last().unwrap().is_infinite());
    }

    #[test]
    fn violation_measures() {
        let a = ParticleSystem::new(&[1.0, 0.0], 2.0).unwrap();
        let b = ParticleSystem::new(&[1.5, 0.0], 2.0).unwrap();
        assert_eq!(violation(Claim::Height, &a, &b), 0.5);
        assert_eq!(violation(Claim::Gap, &a, &b), 0.5);
        assert_eq!(violation(Claim::Identical, &a, &a), 0.0);
    }

    #[test]
    fn short_coupling_run_passes() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Coupling);
        cfg.n = 12;
        cfg.trials = 2;
        cfg.macro_dt = 1e-3;
        cfg.t_grid = vec![0.05, 0.1];
        cfg.quantile_points = 10;
        let r = coupling_experiment(&cfg).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{:#?}", r.checks);
    }
}
