//! Acceptance suite: one PASS/FAIL line per criterion with its runtime and budget.
//!
//! Run with `cargo test -p dbm-edge --test acceptance`. A single criterion can be
//! selected by number as the first free argument, e.g. `-- 4`.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use dbm_edge::characteristics::{
    conservation_error, density_lower_bound, flow_on_family, lambda_index, monotonicity_report, pull_back, EdgeFamily,
    MonotonicityReport, RigidityProfile,
};
use dbm_edge::freeconv::{right_edge, FreeConvolution};
use dbm_edge::harness::{self, Check, ExperimentConfig, ExperimentKind, ExperimentReport, Verdict};
use dbm_edge::{ComplexPoint, FiniteMeasure};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn failed_checks(r: &ExperimentReport) -> Vec<&Check> {
    r.checks.iter().filter(|c| c.verdict != Verdict::Pass).collect()
}

fn describe(r: &ExperimentReport, names: &[&str]) -> String {
    r.checks
        .iter()
        .filter(|c| names.is_empty() || names.contains(&c.name.as_str()))
        .map(|c| format!("{}={:.4e}/{:.4e}", c.name, c.value, c.threshold))
        .collect::<Vec<_>>()
        .join(" ")
}

fn report_outcome(r: &ExperimentReport, names: &[&str]) -> Outcome {
    let bad: Vec<&Check> =
        failed_checks(r).into_iter().filter(|c| names.is_empty() || names.contains(&c.name.as_str())).collect();
    let mut detail = describe(r, names);
    if r.excluded_trials > 0 {
        detail.push_str(&format!(" excluded={}", r.excluded_trials));
    }
    Outcome::new(bad.is_empty(), detail)
}

fn c1_semicircle() -> Outcome {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    let (mut edge_err, mut dens_err) = (0.0f64, 0.0f64);
    for t in [0.25, 1.0, 4.0] {
        let (_, e) = right_edge(&mu, t).unwrap();
        let exact = 2.0 * t.sqrt();
        edge_err = edge_err.max((e - exact).abs() / exact);
        let fc = FreeConvolution::new(&mu, t).unwrap();
        for k in 0..200 {
            let x = -exact + 2.0 * exact * (k as f64 + 0.5) / 200.0;
            let oracle = (4.0 * t - x * x).max(0.0).sqrt() / (2.0 * PI * t);
            dens_err = dens_err.max((fc.density(x) - oracle).abs());
        }
    }
    Outcome::new(
        edge_err <= 1e-9 && dens_err <= 1e-6,
        format!("edge rel err {edge_err:.2e} (1e-9), density err {dens_err:.2e} (1e-6)"),
    )
}

fn c2_uniform() -> Outcome {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::UniformProfile);
    cfg.trials = 0;
    let r = harness::run(&cfg).unwrap();
    report_outcome(&r, &["edge_expansion", "density_symmetry", "density_at_most_one", "xi_equation"])
}

fn c3_edge_expansion() -> Outcome {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    let (mut a_err, mut bound_bad, mut points) = (0.0f64, 0usize, 0usize);
    let mut analytic = 0.0f64;
    for t in [0.25f64, 1.0, 4.0] {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let ex = fc.edge_expansion().unwrap();
        a_err = a_err.max((ex.a_coeff - t.powf(-0.5)).abs());
        analytic = analytic.max((ex.a_coeff - t.powf(-1.5)).abs());
        let e = fc.edge_right();
        for k in 1..=200 {
            let x = ex.c_width / 4.0 * k as f64 / 200.0;
            let lead = (ex.a_coeff * x).sqrt() / PI;
            points += 1;
            if (fc.density(e - x) - lead).abs() > x / ex.c_width * lead {
                bound_bad += 1;
            }
        }
    }
    Outcome::new(
        a_err <= 1e-9 && bound_bad == 0,
        format!(
            "max |A(t) - t^(-1/2)| = {a_err:.3e} (1e-9); expansion bound violated at {bound_bad}/{points}; \
             max |A(t) - t^(-3/2)| = {analytic:.1e}"
        ),
    )
}

/// Top atom moved to 0 (the density assumption is stated for the right end at 0).
fn test_measures() -> Vec<(&'static str, FiniteMeasure)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut atoms: Vec<(f64, f64)> = (0..5).map(|_| (-rng.random::<f64>(), rng.random::<f64>() + 0.1)).collect();
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    let top = atoms.iter().map(|a| a.0).fold(f64::NEG_INFINITY, f64::max);
    for a in atoms.iter_mut() {
        *a = (a.0 - top, a.1 / total);
    }
    let uniform = FiniteMeasure::atomize_uniform(-1.0, 0.0, 1.0, 1000).unwrap();
    let shift = -uniform.max_finite().unwrap();
    vec![
        ("delta0", FiniteMeasure::dirac(0.0, 1.0).unwrap()),
        ("uniform", uniform.affine(1.0, shift, 1.0).unwrap()),
        ("five_atom", FiniteMeasure::new(&atoms).unwrap()),
    ]
}

fn c4_conservation() -> Outcome {
    let t = 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut count = 0;
    for (_, mu) in test_measures() {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let mut k = 0;
        while k < 100 {
            let u = ComplexPoint::new(rng.random_range(-3.0..2.0), rng.random_range(0.0..2.5));
            if u.im <= 0.0 || lambda_index(&mu, u, t) >= 1.0 {
                continue;
            }
            worst = worst.max(conservation_error(&fc, u).unwrap());
            k += 1;
        }
        count += k;
    }
    Outcome::new(worst <= 1e-8, format!("max |m_t(z_t(u)) - m0(u)| = {worst:.2e} over {count} points (1e-8)"))
}

fn c5_monotonicity() -> Outcome {
    let t = 1.0;
    let horizon = 100.0;
    let times: Vec<f64> = (0..50).map(|k| t * k as f64 / 49.0).collect();
    let mut total = MonotonicityReport::default();
    let mut details = Vec::new();
    for (name, mu) in test_measures() {
        let b = density_lower_bound(&mu, 0.0, horizon).unwrap();
        // η* small enough that the profile window ℭ√η* is 0.05, so every lemma is live
        let window_const = 2f64.powi(21) / (b * b);
        let eta_star = (0.05 / window_const).powi(2);
        let p = RigidityProfile::new(eta_star, b, 5, horizon).unwrap();
        let family = EdgeFamily::new(&mu, &times).unwrap();
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let e = fc.edge_right();
        let mut rep = MonotonicityReport::default();
        for k in 0..50 {
            // half the paths end near the edge, half beyond f(t) so the profile lemma applies
            let kappa = if k < 25 {
                1e-3 * 1e4f64.powf(k as f64 / 24.0)
            } else {
                1.2 * p.f(t) * 8f64.powf((k - 25) as f64 / 24.0)
            };
            let eta = 1e-3 * 1e3f64.powf((k % 7) as f64 / 6.0);
            let u = pull_back(&fc, ComplexPoint::new(e + kappa, eta)).unwrap();
            let path = flow_on_family(&family, u).unwrap();
            rep.merge(&monotonicity_report(&family, &path, &p));
        }
        details.push(format!(
            "{name}: checked {}/{}/{} violations {} unmet {}",
            rep.kappa_gain.checked,
            rep.sqrt_kappa_gain.checked,
            rep.profile_gain.checked,
            rep.violations(),
            rep.hypotheses_unmet
        ));
        total.merge(&rep);
    }
    let pass = total.violations() == 0 && total.hypotheses_unmet == 0 && total.paths == 150;
    Outcome::new(
        pass,
        format!(
            "{}; worst slacks {:.2e}/{:.2e}/{:.2e}",
            details.join("; "),
            total.kappa_gain.worst_slack,
            total.sqrt_kappa_gain.worst_slack,
            total.profile_gain.worst_slack
        ),
    )
}

fn c6_coupling() -> Outcome {
    let cfg = ExperimentConfig::preset(ExperimentKind::Coupling);
    report_outcome(&harness::run(&cfg).unwrap(), &[])
}

fn c8_rigidity() -> Outcome {
    let cfg = ExperimentConfig::preset(ExperimentKind::Rigidity);
    report_outcome(&harness::run(&cfg).unwrap(), &[])
}

fn c9_bulk() -> Outcome {
    let cfg = ExperimentConfig::preset(ExperimentKind::Bulk);
    report_outcome(&harness::run(&cfg).unwrap(), &["bulk_bound", "fitted_constant_non_increasing"])
}

fn c10_universality() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for beta in [2.0, 1.0] {
        let mut cfg = ExperimentConfig::preset(ExperimentKind::Universality);
        cfg.beta = beta;
        let r = harness::run(&cfg).unwrap();
        let o = report_outcome(&r, &["ks_t1"]);
        pass &= o.pass;
        detail.push(format!("beta={beta}: {} (p {:.3})", o.detail, r.summary["p_value_t1"]));
    }
    Outcome::new(pass, detail.join("; "))
}

fn loop_report() -> ExperimentReport {
    harness::run(&ExperimentConfig::preset(ExperimentKind::LoopResidual)).unwrap()
}

fn c7_weak_convergence(r: &ExperimentReport) -> Outcome {
    report_outcome(r, &["levy_distance", "levy_decreases"])
}

fn c11_loop_residual(r: &ExperimentReport) -> Outcome {
    report_outcome(r, &["stoptime_fraction"])
}

fn c12_determinism() -> Outcome {
    let mut cfg = ExperimentConfig::preset(ExperimentKind::Rigidity);
    cfg.n = 100;
    cfg.trials = 6;
    cfg.t_grid = vec![0.5, 1.0];
    let base = std::env::temp_dir().join(format!("dbm-edge-acceptance-{}", std::process::id()));
    let mut snapshots = Vec::new();
    for (k, threads) in [1usize, 1, 2, 4].into_iter().enumerate() {
        let dir = base.join(format!("run{k}"));
        cfg.output_dir = Some(dir.display().to_string());
        harness::run_with_threads(&cfg, threads).unwrap();
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timing.json")
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        snapshots.push(files);
    }
    std::fs::remove_dir_all(&base).ok();
    // reports embed output_dir, which differs per run; compare with it blanked
    let normalise = |files: &[(String, Vec<u8>)], k: usize| -> Vec<(String, Vec<u8>)> {
        let dir = base.join(format!("run{k}")).display().to_string();
        files.iter().map(|(n, b)| (n.clone(), String::from_utf8_lossy(b).replace(&dir, "DIR").into_bytes())).collect()
    };
    let first = normalise(&snapshots[0], 0);
    let identical = (1..snapshots.len()).all(|k| normalise(&snapshots[k], k) == first);
    Outcome::new(identical && first.len() >= 3, format!("{} files x 4 runs (threads 1, 1, 2, 4)", first.len()))
}

/// Criteria whose target cannot hold for a correct implementation. They still run and
/// print FAIL; only an unexpected outcome (a new failure, or one of these passing)
/// makes the suite exit nonzero.
const KNOWN_FAILURES: &[(u32, &str)] = &[(3, "A(t) of the point mass is t^(-3/2), equal to t^(-1/2) only at t = 1")];

fn main() {
    let only: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let wanted = |k: u32| only.is_none_or(|o| o == k);
    let (mut passed, mut failed, mut unexpected) = (0, 0, Vec::new());
    // `charged` is time spent outside `f` on work shared with another criterion
    let mut emit = |k: u32, name: &str, budget: Duration, charged: Duration, f: &mut dyn FnMut() -> Outcome| {
        if !wanted(k) {
            return;
        }
        let start = Instant::now();
        let o = f();
        let dt = start.elapsed() + charged;
        let ok = o.pass && dt <= budget;
        let known = KNOWN_FAILURES.iter().find(|f| f.0 == k).map(|f| f.1);
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
        if ok == known.is_some() {
            unexpected.push(k);
        }
        println!(
            "criterion {k:>2} [{}] {name} ({:.1} s, budget {} s): {}{}",
            if ok { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs(),
            o.detail,
            known.map(|r| format!(" [known failure: {r}]")).unwrap_or_default()
        );
    };
    let s = Duration::from_secs;
    let none = Duration::ZERO;
    emit(1, "semicircle oracle", s(5), none, &mut c1_semicircle);
    emit(2, "uniform-example oracle", s(30), none, &mut c2_uniform);
    emit(3, "edge expansion", s(5), none, &mut c3_edge_expansion);
    emit(4, "flow conservation", s(10), none, &mut c4_conservation);
    emit(5, "monotonicity lemmas", s(30), none, &mut c5_monotonicity);
    emit(6, "coupling", s(120), none, &mut c6_coupling);
    // criteria 7 and 11 share one loop_residual run, charged in full to both
    let (lr, lt) = if wanted(7) || wanted(11) {
        let start = Instant::now();
        (Some(loop_report()), start.elapsed())
    } else {
        (None, none)
    };
    emit(7, "weak convergence", s(180), lt, &mut || c7_weak_convergence(lr.as_ref().unwrap()));
    emit(8, "edge rigidity", s(300), none, &mut c8_rigidity);
    emit(9, "bulk rigidity", s(300), none, &mut c9_bulk);
    emit(10, "universality", s(900), none, &mut c10_universality);
    emit(11, "loop-equation residual", s(300), lt, &mut || c11_loop_residual(lr.as_ref().unwrap()));
    emit(12, "determinism", s(60), none, &mut c12_determinism);
    println!("acceptance: {passed} passed, {failed} failed, unexpected outcomes: {unexpected:?}");
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
