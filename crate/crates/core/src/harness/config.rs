//! Experiment configuration: a flat JSON object with documented keys.
//!
//! A run starts from the preset of its experiment, then merges the config file, then
//! applies `key=value` overrides. Unknown keys are errors at every stage.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::dbm::Scheme;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Rigidity,
    Bulk,
    Universality,
    Coupling,
    UniformProfile,
    SmallSupport,
    LoopResidual,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        Self::Rigidity,
        Self::Bulk,
        Self::Universality,
        Self::Coupling,
        Self::UniformProfile,
        Self::SmallSupport,
        Self::LoopResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Rigidity => "rigidity",
            Self::Bulk => "bulk",
            Self::Universality => "universality",
            Self::Coupling => "coupling",
            Self::UniformProfile => "uniform_profile",
            Self::SmallSupport => "small_support",
            Self::LoopResidual => "loop_residual",
        }
    }
}

/// Shape of the initial particle configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// All particles at 0 (an equispaced 1e−9 fan).
    Delta0,
    /// Classical locations (1 − 2i)/(2n) of the uniform law on [−1, 0].
    Uniform,
    /// Classical locations of the uniform law on [−w/2, w/2], w = `support_width`.
    SmallSupport,
    /// Half the mass at each of ±w/2.
    TwoAtom,
    /// Explicit positions from `atom_positions`.
    Atoms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    /// Semi-implicit with `h_max` (default 1/n).
    Auto,
    Explicit,
    SemiImplicit,
}

/// All experiment parameters. Field docs double as `--help` text via [`CONFIG_KEYS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n: usize,
    pub n_values: Vec<usize>,
    pub beta: f64,
    pub trials: usize,
    pub t_grid: Vec<f64>,
    pub seed: u64,
    pub initial_data: InitialKind,
    pub support_width: f64,
    pub atom_positions: Vec<f64>,
    pub output_dir: Option<String>,
    pub scheme: SchemeChoice,
    pub h_max: Option<f64>,
    pub macro_dt: f64,
    pub horizon: f64,
    pub eta_star: f64,
    pub cap: f64,
    pub percentile: f64,
    pub bulk_bound: f64,
    pub reference_n: usize,
    pub reference_samples: usize,
    pub ks_threshold: f64,
    pub min_time: Option<f64>,
    pub edge_exponent: f64,
    pub coupling_tolerance: f64,
    pub quantile_points: usize,
    pub domain_samples: usize,
    pub loop_fraction: f64,
    pub atoms: usize,
    pub grid_points: usize,
    pub edge_constant: f64,
    pub fit_cap: f64,
    pub support_m: f64,
}

/// `(key, description)` for every config key, in file order.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("experiment", "rigidity | bulk | universality | coupling | uniform_profile | small_support | loop_residual"),
    ("n", "number of particles (frozen ones included)"),
    ("n_values", "particle counts compared by the bulk experiment"),
    ("beta", "inverse temperature, >= 1"),
    ("trials", "independent trials (stream ids 0..trials)"),
    ("t_grid", "observation times, positive and strictly increasing"),
    ("seed", "64-bit seed of the counter-based noise"),
    ("initial_data", "delta0 | uniform | small_support | two_atom | atoms"),
    ("support_width", "width c of small_support / two_atom data"),
    ("atom_positions", "positions for initial_data = atoms"),
    ("output_dir", "directory for report.json, timing.json and CSV tables (null: no files)"),
    ("scheme", "auto | explicit | semi_implicit"),
    ("h_max", "largest semi-implicit substep (null: 1/n)"),
    ("macro_dt", "macro step; one noise counter per macro step"),
    ("horizon", "time horizon T of the density lower bound (>= 100)"),
    ("eta_star", "scale eta* of the density lower bound (0: none)"),
    ("cap", "rigidity: cap on the percentile of n^(2/3)(lambda_1 - E_t)"),
    ("percentile", "rigidity: percentile compared with cap"),
    ("bulk_bound", "bulk: bound on the rescaled deviation divided by log n"),
    ("reference_n", "universality: size of the tridiagonal reference"),
    ("reference_samples", "universality: number of reference samples"),
    ("ks_threshold", "universality: largest accepted KS distance"),
    ("min_time", "universality: earliest time compared (null: max(0, n^(-1/3 + edge_exponent)))"),
    ("edge_exponent", "universality: exponent a in n^(-1/3 + a)"),
    ("coupling_tolerance", "coupling: discretisation allowance for the comparisons"),
    ("quantile_points", "coupling: y-grid size of the deterministic quantile comparison"),
    ("domain_samples", "loop_residual: spectral-domain points per observation time"),
    ("loop_fraction", "loop_residual: required fraction of points within the bound"),
    ("atoms", "node count of the Gauss-Legendre atomisation of continuous laws in deterministic checks"),
    ("grid_points", "density grid size in deterministic checks"),
    ("edge_constant", "uniform_profile: C in |E_t - (1 + log 1/t) t| <= C t^2"),
    ("fit_cap", "uniform_profile: cap on the fitted constant of the top-particle bound"),
    ("support_m", "small_support: the constant M of the hypothesis sqrt(t) >= 25 c M^2"),
];

impl ExperimentConfig {
    /// Shipped defaults for each experiment.
    pub fn preset(kind: ExperimentKind) -> Self {
        let mut c = Self {
            experiment: kind,
            n: 400,
            n_values: vec![200, 400],
            beta: 2.0,
            trials: 50,
            t_grid: vec![1.0],
            seed: 20240601,
            initial_data: InitialKind::Delta0,
            support_width: 0.01,
            atom_positions: Vec::new(),
            output_dir: None,
            scheme: SchemeChoice::Auto,
            h_max: None,
            macro_dt: 0.25,
            horizon: 100.0,
            eta_star: 0.0,
            cap: 3.0,
            percentile: 0.95,
            bulk_bound: 5.0,
            reference_n: 2000,
            reference_samples: 400,
            ks_threshold: 0.1,
            min_time: None,
            edge_exponent: 0.1,
            coupling_tolerance: 1e-6,
            quantile_points: 50,
            domain_samples: 64,
            loop_fraction: 0.99,
            atoms: 8000,
            grid_points: 201,
            edge_constant: 5.0,
            fit_cap: 10.0,
            support_m: 100.0,
        };
        match kind {
            ExperimentKind::Rigidity => {}
            ExperimentKind::Bulk => {
                c.trials = 20;
                c.initial_data = InitialKind::SmallSupport;
            }
            ExperimentKind::Universality => {
                c.n = 500;
                c.trials = 400;
            }
            ExperimentKind::Coupling => {
                c.n = 50;
                c.trials = 10;
                c.macro_dt = 1e-4;
                c.t_grid = (1..=20).map(|k| 0.05 * k as f64).collect();
            }
            ExperimentKind::UniformProfile => {
                c.initial_data = InitialKind::Uniform;
                c.t_grid = vec![0.01, 0.02, 0.05, 0.1];
                c.trials = 20;
            }
            ExperimentKind::SmallSupport => {
                c.initial_data = InitialKind::TwoAtom;
                c.support_width = 1e-6;
                c.trials = 0;
            }
            ExperimentKind::LoopResidual => {
                c.trials = 20;
                c.t_grid = vec![0.25, 0.5, 0.75, 1.0];
            }
        }
        c
    }

    /// Preset, then `file` (if any), then `overrides` of the form `key=value`.
    ///
    /// The preset is that of the `experiment` named by the last override or the file,
    /// falling back to `kind`.
    pub fn load(kind: ExperimentKind, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let parsed = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
                Some(
                    serde_json::from_str::<Value>(&text)
                        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
                )
            }
            None => None,
        };
        let mut kind = kind;
        if let Some(k) = parsed.as_ref().and_then(|v| v.get("experiment")) {
            kind = serde_json::from_value(k.clone()).map_err(|e| Error::Config(format!("experiment: {e}")))?;
        }
        for o in overrides {
            if let Some(raw) = o.strip_prefix("experiment=") {
                kind = serde_json::from_value(Value::String(raw.trim_matches('"').to_string()))
                    .map_err(|e| Error::Config(format!("experiment: {e}")))?;
            }
        }
        let mut value = serde_json::to_value(Self::preset(kind)).expect("preset serialises");
        if let Some(parsed) = parsed {
            merge(&mut value, parsed)?;
        }
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("n must be positive".into());
        }
        if !(self.beta >= 1.0) {
            return bad(format!("beta must be >= 1, got {}", self.beta));
        }
        if self.t_grid.is_empty() || self.t_grid.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return bad("t_grid must hold positive finite times".into());
        }
        if self.t_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return bad("t_grid must be strictly increasing".into());
        }
        if !(self.macro_dt > 0.0) {
            return bad("macro_dt must be positive".into());
        }
        if matches!(self.h_max, Some(h) if !(h > 0.0)) {
            return bad("h_max must be positive".into());
        }
        if !(self.percentile > 0.0 && self.percentile <= 1.0)
            || !(self.loop_fraction >= 0.0 && self.loop_fraction <= 1.0)
        {
            return bad("percentile and loop_fraction must lie in (0, 1]".into());
        }
        if matches!(self.initial_data, InitialKind::SmallSupport | InitialKind::TwoAtom) && !(self.support_width > 0.0)
        {
            return bad("support_width must be positive".into());
        }
        if self.initial_data == InitialKind::Atoms && self.atom_positions.len() != self.n {
            return bad(format!("atom_positions has {} entries but n = {}", self.atom_positions.len(), self.n));
        }
        if self.n_values.contains(&0) {
            return bad("n_values must be positive".into());
        }
        Ok(())
    }

    /// Integration scheme for `n` particles.
    pub fn scheme_for(&self, n: usize) -> Scheme {
        let h = self.h_max.unwrap_or(1.0 / n as f64);
        match self.scheme {
            SchemeChoice::Explicit => Scheme::Explicit,
            SchemeChoice::Auto | SchemeChoice::SemiImplicit => Scheme::SemiImplicit { h_max: h },
        }
    }

    /// Last observation time.
    pub fn final_time(&self) -> f64 {
        *self.t_grid.last().unwrap()
    }
}

fn merge(base: &mut Value, patch: Value) -> Result<()> {
    let Value::Object(patch) = patch else {
        return Err(Error::Config("config file must hold a JSON object".into()));
    };
    let base = base.as_object_mut().unwrap();
    for (k, v) in patch {
        if !base.contains_key(&k) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        base.insert(k, v);
    }
    Ok(())
}

/// Applies `a.b.c=value`; the value is parsed as JSON and falls back to a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let obj: &mut Map<String, Value> = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{}` is not an object", keys[..i].join("."))))?;
        if !obj.contains_key(*key) {
            return Err(Error::Config(format!("unknown key `{path}`")));
        }
        if i + 1 == keys.len() {
            obj.insert(key.to_string(), value);
            return Ok(());
        }
        node = obj.get_mut(*key).unwrap();
    }
    Ok(())
}
