use dbm_edge::numerics::integrate;
use dbm_edge::stieltjes::{dist_to_support, semicircle_density, stieltjes, stieltjes_deriv};
use dbm_edge::{ComplexPoint, FiniteMeasure};
use proptest::prelude::*;

fn measure() -> impl Strategy<Value = FiniteMeasure> {
    prop::collection::vec((-3.0f64..3.0, 0.01f64..1.0), 1..10).prop_map(|a| FiniteMeasure::new(&a).unwrap())
}

fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn transform_bounds(mu in measure(), re in -4.0f64..4.0, im in 1e-3f64..3.0, p in 1u32..=4) {
        let z = ComplexPoint::new(re, im);
        let mass = mu.finite_mass();
        let dist = dist_to_support(&mu, z);
        let m = stieltjes(&mu, z).unwrap();
        let slack = 1.0 + 1e-12;
        prop_assert!(m.norm() <= slack * mass / dist);
        let d1 = stieltjes_deriv(&mu, z, 1).unwrap();
        prop_assert!(d1.norm() <= slack * m.im / z.im, "|m'| = {} > {}", d1.norm(), m.im / z.im);
        let dp = stieltjes_deriv(&mu, z, p).unwrap();
        prop_assert!(dp.norm() <= slack * factorial(p) * mass / dist.powi(p as i32 + 1));
    }
}

#[test]
fn inversion_recovers_the_uniform_density() {
    let mu = FiniteMeasure::atomize_uniform_gauss(-1.0, 0.0, 1.0, 20_000).unwrap();
    for x in [-0.8, -0.5, -0.2] {
        let mut prev = f64::INFINITY;
        for y in [0.1, 0.03, 0.01] {
            let err = (stieltjes(&mu, ComplexPoint::new(x, y)).unwrap().im / std::f64::consts::PI - 1.0).abs();
            // the exact defect is (arctan(y/(1 + x)) + arctan(y/−x))/π ≤ 2y/(π·min(−x, 1 + x))
            let bound = 2.0 * y / (std::f64::consts::PI * (-x).min(1.0 + x));
            assert!(err <= bound, "x = {x}, y = {y}: {err} > {bound}");
            assert!(err < prev);
            prev = err;
        }
    }
}

#[test]
fn semicircle_has_unit_mass() {
    for t in [0.25f64, 1.0, 4.0] {
        let r = 2.0 * t.sqrt();
        let total = integrate(|x| semicircle_density(t, x).unwrap(), -r, r, 1e-12);
        assert!((total - 1.0).abs() <= 1e-8, "t = {t}: {total}");
    }
}
