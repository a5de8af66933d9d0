use dbm_edge::characteristics::{
    conservation_error, domain_contains, flow_forward, lambda_index, nearest_lattice_point, pull_back, RigidityProfile,
};
use dbm_edge::freeconv::FreeConvolution;
use dbm_edge::stieltjes::stieltjes;
use dbm_edge::{ComplexPoint, FiniteMeasure};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn measure() -> impl Strategy<Value = FiniteMeasure> {
    prop::collection::vec((-2.0f64..0.0, 0.05f64..1.0), 1..6).prop_map(|a| FiniteMeasure::new(&a).unwrap())
}

/// Random points of 𝒟_t for δ₀ data at n = 10, where the domain is far from the
/// spectrum but nonempty.
fn domain_samples(fc: &FreeConvolution, p: &RigidityProfile, count: usize, seed: u64) -> Vec<ComplexPoint> {
    let frak_m = p.domain_height();
    let top = frak_m - 2.0 * fc.time();
    let lo = fc.edge_right() + p.f(fc.time());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let w = ComplexPoint::new(rng.random_range(lo..top), rng.random_range(0.0..top));
        if domain_contains(fc, p, frak_m, w).unwrap() {
            out.push(w);
        }
    }
    out
}

fn small_n_profile() -> RigidityProfile {
    RigidityProfile::at_floor(1e-6, 10, 100.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn flow_conserves_the_transform(mu in measure(), t in 0.05f64..2.0, re in -4.0f64..3.0, im in 0.01f64..3.0) {
        let u = ComplexPoint::new(re, im);
        prop_assume!(lambda_index(&mu, u, t) < 1.0);
        let fc = FreeConvolution::new(&mu, t).unwrap();
        prop_assert!(conservation_error(&fc, u).unwrap() <= 1e-8);
    }

    #[test]
    fn eta_decreases_along_characteristics(mu in measure(), t in 0.05f64..2.0, re in -4.0f64..3.0, im in 0.01f64..3.0) {
        let u = ComplexPoint::new(re, im);
        prop_assume!(lambda_index(&mu, u, t) <= 1.0);
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let times: Vec<f64> = (0..=20).map(|k| t * k as f64 / 20.0).collect();
        let path = flow_forward(&fc, u, &times).unwrap();
        prop_assert!(path.samples.windows(2).all(|w| w[0].eta >= w[1].eta));
    }
}

#[test]
fn spectral_domain_shrinks_backward_in_time() {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    let p = small_n_profile();
    let frak_m = p.domain_height();
    let t = 1.0;
    let fc = FreeConvolution::new(&mu, t).unwrap();
    let grid: Vec<FreeConvolution> =
        (0..=10).map(|k| FreeConvolution::new(&mu, t * k as f64 / 10.0).unwrap()).collect();
    for w in domain_samples(&fc, &p, 50, 1) {
        let u = pull_back(&fc, w).unwrap();
        let m0 = stieltjes(&mu, u).unwrap();
        for fs in &grid {
            let z = u - fs.time() * m0;
            assert!(domain_contains(fs, &p, frak_m, z).unwrap(), "w = {w}, s = {}", fs.time());
        }
    }
}

#[test]
fn lattice_approximates_the_domain() {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    let p = small_n_profile();
    let fc = FreeConvolution::new(&mu, 0.5).unwrap();
    let tol = (p.n as f64).powi(-5);
    for w in domain_samples(&fc, &p, 20, 2) {
        let (_, z) = nearest_lattice_point(&fc, &p, p.domain_height(), w)
            .unwrap()
            .unwrap_or_else(|| panic!("no lattice point for {w}"));
        assert!((z - w).norm() <= tol, "{w}: {}", (z - w).norm());
    }
}
