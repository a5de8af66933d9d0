//! Desk-scale experiments: edge and bulk rigidity, edge universality, couplings, the
//! worked examples with explicit initial data, and the loop-equation residual.
//!
//! Each experiment turns a probability statement into a percentile or fraction rule
//! at a fixed trial count. Trials run in parallel over stream ids; every table is
//! assembled in trial order so reports are byte-identical under any thread count.

pub mod config;
mod coupling;
mod edge;
mod examples;
mod residual;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbm::{evolve, Integrator, NoiseStream, ParticleSystem, Trajectory, DELTA_FAN_WIDTH};
use crate::error::{Error, Result};
use crate::measures::FiniteMeasure;

pub use config::{ExperimentConfig, ExperimentKind, InitialKind, SchemeChoice, CONFIG_KEYS};
pub use coupling::coupling_experiment;
pub use edge::{bulk_rigidity_experiment, rigidity_experiment, universality_experiment};
pub use examples::{small_support_checks, uniform_profile_checks};
pub use residual::{levy_to_continuous, loop_residual_diagnostic, weak_convergence};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "DBM_EDGE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    HypothesisUnmet,
}

impl Verdict {
    /// Process exit status: 0 pass, 2 fail, 3 hypothesis unmet.
    pub fn exit_code(self) -> i32 {
        match self {
            Verdict::Pass => 0,
            Verdict::Fail => 2,
            Verdict::HypothesisUnmet => 3,
        }
    }

    fn combine(self, other: Verdict) -> Verdict {
        match (self, other) {
            (Verdict::Fail, _) | (_, Verdict::Fail) => Verdict::Fail,
            (Verdict::HypothesisUnmet, _) | (_, Verdict::HypothesisUnmet) => Verdict::HypothesisUnmet,
            _ => Verdict::Pass,
        }
    }
}

/// One acceptance rule and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub verdict: Verdict,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, pass: bool, value: f64, threshold: f64, detail: impl Into<String>) -> Self {
        let verdict = if pass { Verdict::Pass } else { Verdict::Fail };
        Self { name: name.into(), verdict, value, threshold, detail: detail.into() }
    }

    pub fn unmet(name: &str, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            verdict: Verdict::HypothesisUnmet,
            value: f64::NAN,
            threshold: f64::NAN,
            detail: detail.into(),
        }
    }
}

/// A numeric table exported as CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|&x| crate::fmt17(x)).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Everything an experiment produces except wall-clock time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub tables: BTreeMap<String, Table>,
    pub summary: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub excluded_trials: usize,
    pub verdict: Verdict,
}

impl ExperimentReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            config: config.clone(),
            tables: BTreeMap::new(),
            summary: BTreeMap::new(),
            checks: Vec::new(),
            excluded_trials: 0,
            verdict: Verdict::Pass,
        }
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn note(&mut self, key: &str, value: f64) {
        self.summary.insert(key.into(), value);
    }

    /// Recomputes the overall verdict from the checks.
    pub fn finish(mut self) -> Self {
        self.verdict = self.checks.iter().fold(Verdict::Pass, |v, c| v.combine(c.verdict));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise") + "\n"
    }

    /// One `name: verdict (value vs threshold)` line per check.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| {
                let v = match c.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                    Verdict::HypothesisUnmet => "UNMET",
                };
                format!("{} {}: {} (threshold {}) {}", v, c.name, c.value, c.threshold, c.detail)
            })
            .collect()
    }

    /// Writes `report.json` and one CSV per table into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        for (name, table) in &self.tables {
            let f = std::fs::File::create(dir.join(format!("{name}.csv")))?;
            table.write_csv(std::io::BufWriter::new(f))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    experiment: String,
    seconds: f64,
    threads: usize,
}

/// Worker count: `DBM_EDGE_THREADS` if set and positive, otherwise all cores.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&k| k > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over trial indices in parallel, keeping trial order.
pub(crate) fn par_trials<T: Send>(trials: usize, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    (0..trials as u64).into_par_iter().map(f).collect()
}

/// Runs the configured experiment, writing outputs when `output_dir` is set.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_with_threads(cfg, thread_count())
}

/// [`run`] on a pool of exactly `threads` workers.
pub fn run_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let report = pool.install(|| match cfg.experiment {
        ExperimentKind::Rigidity => rigidity_experiment(cfg),
        ExperimentKind::Bulk => bulk_rigidity_experiment(cfg),
        ExperimentKind::Universality => universality_experiment(cfg),
        ExperimentKind::Coupling => coupling_experiment(cfg),
        ExperimentKind::UniformProfile => uniform_profile_checks(cfg),
        ExperimentKind::SmallSupport => small_support_checks(cfg),
        ExperimentKind::LoopResidual => loop_residual_diagnostic(cfg),
    })?;
    if let Some(dir) = &cfg.output_dir {
        let dir = Path::new(dir);
        report.write_to(dir)?;
        let timing = Timing {
            experiment: cfg.experiment.name().into(),
            seconds: start.elapsed().as_secs_f64(),
            threads: threads.max(1),
        };
        std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&timing).unwrap() + "\n")?;
    }
    Ok(report)
}

/// Initial particles and the initial measure they represent, for `n` particles.
///
/// For continuous laws the measure returned is the n-point atomisation, i.e. the
/// exact empirical initial data.
pub fn initial_data(cfg: &ExperimentConfig, n: usize) -> Result<(ParticleSystem, FiniteMeasure)> {
    let beta = cfg.beta;
    match cfg.initial_data {
        InitialKind::Delta0 => Ok((ParticleSystem::delta_fan(n, 0.0, beta)?, FiniteMeasure::dirac(0.0, 1.0)?)),
        InitialKind::Uniform => {
            let mu = FiniteMeasure::atomize_uniform(-1.0, 0.0, 1.0, n)?;
            Ok((ParticleSystem::new(mu.positions(), beta)?, mu))
        }
        InitialKind::SmallSupport => {
            let c = cfg.support_width;
            let mu = FiniteMeasure::atomize_uniform(-c / 2.0, c / 2.0, 1.0, n)?;
            Ok((ParticleSystem::new(mu.positions(), beta)?, mu))
        }
        InitialKind::TwoAtom => {
            let c = cfg.support_width;
            let top = n.div_ceil(2);
            let fan =
                |k: usize, count: usize| if count > 1 { DELTA_FAN_WIDTH * k as f64 / (count - 1) as f64 } else { 0.0 };
            let mut p: Vec<f64> = (0..top).map(|k| c / 2.0 - fan(k, top)).collect();
            p.extend((0..n - top).map(|k| -c / 2.0 - fan(k, n - top)));
            let mu = FiniteMeasure::new(&[(c / 2.0, top as f64 / n as f64), (-c / 2.0, (n - top) as f64 / n as f64)])?;
            Ok((ParticleSystem::new(&p, beta)?, mu))
        }
        InitialKind::Atoms => {
            let mu = FiniteMeasure::empirical(&cfg.atom_positions, n)?;
            Ok((ParticleSystem::from_unsorted(&cfg.atom_positions, beta)?, mu))
        }
    }
}

fn gauss_panels(atoms: usize) -> usize {
    atoms.div_ceil(8).max(1)
}

/// Fine atomisation of the initial law for deterministic checks: Gauss–Legendre
/// panels with about `atoms` nodes for continuous laws.
pub fn reference_measure(cfg: &ExperimentConfig) -> Result<FiniteMeasure> {
    match cfg.initial_data {
        InitialKind::Delta0 => FiniteMeasure::dirac(0.0, 1.0),
        InitialKind::Uniform => FiniteMeasure::atomize_uniform_gauss(-1.0, 0.0, 1.0, gauss_panels(cfg.atoms)),
        InitialKind::SmallSupport => {
            let c = cfg.support_width;
            FiniteMeasure::atomize_uniform_gauss(-c / 2.0, c / 2.0, 1.0, gauss_panels(cfg.atoms))
        }
        InitialKind::TwoAtom => {
            let c = cfg.support_width;
            FiniteMeasure::new(&[(c / 2.0, 0.5), (-c / 2.0, 0.5)])
        }
        InitialKind::Atoms => FiniteMeasure::empirical(&cfg.atom_positions, cfg.atom_positions.len().max(1)),
    }
}

/// Evolves one trial per stream id from `sys`, observing at `cfg.t_grid`.
///
/// Trials whose step control fails (substep floor or collision) come back as `None`.
pub(crate) fn simulate_trials(
    cfg: &ExperimentConfig,
    sys: &ParticleSystem,
    stream_offset: u64,
) -> Result<Vec<Option<Trajectory>>> {
    let scheme = cfg.scheme_for(sys.n_total());
    let results = par_trials(cfg.trials, |k| {
        let mut integ = Integrator::new(scheme);
        let noise = NoiseStream::new(cfg.seed, stream_offset + k);
        evolve(sys, cfg.final_time() - sys.time(), cfg.macro_dt, noise, &cfg.t_grid, &mut integ)
    });
    results
        .into_iter()
        .map(|r| match r {
            Ok(tr) => Ok(Some(tr)),
            Err(Error::StepFailure { .. } | Error::Collision { .. }) => Ok(None),
            Err(e) => Err(e),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdicts_combine_and_map_to_exit_codes() {
        assert_eq!(Verdict::Pass.combine(Verdict::HypothesisUnmet), Verdict::HypothesisUnmet);
        assert_eq!(Verdict::HypothesisUnmet.combine(Verdict::Fail), Verdict::Fail);
        assert_eq!(Verdict::Fail.exit_code(), 2);
        assert_eq!(Verdict::HypothesisUnmet.exit_code(), 3);
    }

    #[test]
    fn table_csv_uses_seventeen_digits() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![0.1, f64::NAN]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1.0000000000000001e-1,nan\n");
    }

    #[test]
    fn initial_data_shapes() {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Rigidity);
        cfg.initial_data = InitialKind::Uniform;
        let (sys, mu) = initial_data(&cfg, 4).unwrap();
        assert_eq!(sys.finite(), &[-0.125, -0.375, -0.625, -0.875]);
        assert_eq!(mu.positions().len(), 4);
        cfg.initial_data = InitialKind::TwoAtom;
        cfg.support_width = 0.5;
        let (sys, mu) = initial_data(&cfg, 5).unwrap();
        assert_eq!(sys.finite().len(), 5);
        assert_eq!(mu.weights(), &[0.6, 0.4]);
    }
}
