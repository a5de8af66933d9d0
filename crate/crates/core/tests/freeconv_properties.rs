use dbm_edge::characteristics::{density_lower_bound, RigidityProfile};
use dbm_edge::freeconv::FreeConvolution;
use dbm_edge::stieltjes::stieltjes;
use dbm_edge::{ComplexPoint, FiniteMeasure};
use proptest::prelude::*;

fn measure() -> impl Strategy<Value = FiniteMeasure> {
    prop::collection::vec((-2.0f64..2.0, 0.05f64..1.0), 1..6).prop_map(|a| FiniteMeasure::new(&a).unwrap())
}

fn uniform() -> FiniteMeasure {
    FiniteMeasure::atomize_uniform_gauss(-1.0, 0.0, 1.0, 250).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stieltjes_is_constant_along_the_flow(
        mu in measure(),
        t in 0.05f64..3.0,
        re in -4.0f64..4.0,
        im in 0.01f64..4.0,
    ) {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let u = ComplexPoint::new(re, im);
        prop_assume!(fc.in_lambda(u));
        let m0 = stieltjes(&mu, u).unwrap();
        let mt = fc.stieltjes_fc(fc.forward_map(u).unwrap()).unwrap();
        prop_assert!((mt - m0).norm() <= 1e-8 * (1.0 + m0.norm()), "{mt} vs {m0}");
    }

    #[test]
    fn support_lies_under_the_boundary_curve(mu in measure(), t in 0.01f64..3.0) {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        for &x in mu.positions() {
            prop_assert!(fc.boundary_height(x) > 0.0);
        }
        prop_assert!(fc.edge_right() >= mu.max_finite().unwrap());
        prop_assert!(fc.edge_left() <= mu.min_finite().unwrap());
    }

    #[test]
    fn boundary_image_is_increasing(mu in measure(), t in 0.01f64..3.0) {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let images: Vec<f64> = fc
            .boundary_samples()
            .into_iter()
            .map(|(u, v)| fc.forward_map(ComplexPoint::new(u, v)).unwrap().re)
            .collect();
        prop_assert!(images.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn edge_is_below_twice_root_t_under_the_density_assumption() {
    let half_semicircle: Vec<(f64, f64)> = (0..400)
        .map(|k| {
            let x = -2.0 * (k as f64 + 0.5) / 400.0;
            (x, (4.0 - x * x).sqrt() / 400.0)
        })
        .collect();
    let measures = [FiniteMeasure::dirac(0.0, 1.0).unwrap(), uniform(), FiniteMeasure::new(&half_semicircle).unwrap()];
    for mu in &measures {
        let shifted = mu.affine(1.0, -mu.max_finite().unwrap(), 1.0 / mu.total_mass()).unwrap();
        assert!(density_lower_bound(&shifted, 0.0, 10.0).unwrap() > 0.0);
        for t in [0.01f64, 0.1, 1.0, 4.0] {
            let fc = FreeConvolution::new(&shifted, t).unwrap();
            assert!(fc.edge_right() <= 2.0 * t.sqrt() * (1.0 + 1e-12), "t = {t}: {}", fc.edge_right());
        }
    }
}

#[test]
fn square_root_expansion_of_the_semicircle() {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    for t in [0.25, 1.0, 4.0] {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        let ex = fc.edge_expansion().unwrap();
        for k in 1..=100 {
            let x = ex.c_width / 4.0 * k as f64 / 100.0;
            let lead = (ex.a_coeff * x).sqrt() / std::f64::consts::PI;
            let err = (fc.density(fc.edge_right() - x) - lead).abs();
            assert!(err <= x / ex.c_width * lead, "t = {t}, x = {x}: {err}");
        }
    }
}

#[test]
fn imaginary_part_lower_bound_near_the_edge() {
    let mu = FiniteMeasure::dirac(0.0, 1.0).unwrap();
    let horizon = 10.0;
    let b = density_lower_bound(&mu, 0.0, horizon).unwrap();
    let p = RigidityProfile::at_floor(b, 100, horizon).unwrap();
    for t in [0.25, 1.0, 4.0] {
        let fc = FreeConvolution::new(&mu, t).unwrap();
        for i in 0..12 {
            for j in 0..12 {
                let kappa = 1e-4 * 10f64.powf(i as f64 / 3.0);
                let eta = 1e-4 * 10f64.powf(j as f64 / 3.0);
                let m = fc.stieltjes_fc(ComplexPoint::new(fc.edge_right() + kappa, eta)).unwrap();
                let bound = p.mass_const * eta / (8.0 * (kappa + eta).sqrt());
                assert!(m.im >= bound, "t = {t}, kappa = {kappa}, eta = {eta}");
            }
        }
    }
}

#[test]
fn density_solves_the_transport_equation() {
    let h = 1e-4;
    for mu in [FiniteMeasure::dirac(0.0, 1.0).unwrap(), uniform()] {
        let t = 1.0;
        let (before, now, after) = (
            FreeConvolution::new(&mu, t - h).unwrap(),
            FreeConvolution::new(&mu, t).unwrap(),
            FreeConvolution::new(&mu, t + h).unwrap(),
        );
        let (lo, hi) = (now.edge_left(), now.edge_right());
        let flux = |y: f64| now.density(y) * now.hilbert(y).unwrap();
        for k in 1..20 {
            let y = lo + (hi - lo) * k as f64 / 20.0;
            let dt = (after.density(y) - before.density(y)) / (2.0 * h);
            let dy = (flux(y + h) - flux(y - h)) / (2.0 * h);
            let r = (dt - std::f64::consts::PI * dy).abs();
            assert!(r <= 1e-3, "y = {y}: residual {r}");
        }
    }
}
