//! Stieltjes transforms of atomic measures and the rescaled semicircle density.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::measures::{FiniteMeasure, Neumaier};

/// Highest supported derivative order.
pub const MAX_DERIVATIVE: u32 = 6;

const POLE_EPS: f64 = 1e-300;

/// Compensated complex accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct ComplexSum {
    re: Neumaier,
    im: Neumaier,
}

impl ComplexSum {
    #[inline]
    pub(crate) fn add(&mut self, z: Complex64) {
        self.re.add(z.re);
        self.im.add(z.im);
    }

    #[inline]
    pub(crate) fn value(&self) -> Complex64 {
        Complex64::new(self.re.sum(), self.im.sum())
    }
}

#[inline]
fn check_pole(x: f64, z: Complex64) -> Result<Complex64> {
    let d = Complex64::new(x - z.re, -z.im);
    if d.norm() < POLE_EPS {
        return Err(Error::Pole(x));
    }
    Ok(d)
}

/// m(z) = Σ wᵢ/(xᵢ − z) over the finite atoms.
pub fn stieltjes(mu: &FiniteMeasure, z: Complex64) -> Result<Complex64> {
    let mut acc = ComplexSum::default();
    for (&x, &w) in mu.positions().iter().zip(mu.weights()) {
        let d = check_pole(x, z)?;
        acc.add(w / d);
    }
    Ok(acc.value())
}

/// p-th derivative m⁽ᵖ⁾(z) = Σ p!·wᵢ/(xᵢ − z)^{p+1}, for 1 ≤ p ≤ 6.
pub fn stieltjes_deriv(mu: &FiniteMeasure, z: Complex64, p: u32) -> Result<Complex64> {
    if p == 0 || p > MAX_DERIVATIVE {
        return Err(Error::InvalidArgument(format!("derivative order {p} outside 1..=6")));
    }
    let fact: f64 = (1..=p).map(f64::from).product();
    let mut acc = ComplexSum::default();
    for (&x, &w) in mu.positions().iter().zip(mu.weights()) {
        let d = check_pole(x, z)?;
        let inv = d.inv();
        acc.add(fact * w * inv.powu(p + 1));
    }
    Ok(acc.value())
}

/// (m(z), m′(z)) in one pass.
pub fn stieltjes_and_derivative(mu: &FiniteMeasure, z: Complex64) -> Result<(Complex64, Complex64)> {
    let mut m = ComplexSum::default();
    let mut m1 = ComplexSum::default();
    for (&x, &w) in mu.positions().iter().zip(mu.weights()) {
        let d = check_pole(x, z)?;
        let inv = d.inv();
        let t = w * inv;
        m.add(t);
        m1.add(t * inv);
    }
    Ok((m.value(), m1.value()))
}

/// Real-axis values (m(x), m′(x), m″(x)) for x strictly outside the finite support.
pub fn real_jet(mu: &FiniteMeasure, x: f64) -> Result<(f64, f64, f64)> {
    let (mut m0, mut m1, mut m2) = (Neumaier::new(), Neumaier::new(), Neumaier::new());
    for (&a, &w) in mu.positions().iter().zip(mu.weights()) {
        let d = a - x;
        if d.abs() < POLE_EPS {
            return Err(Error::Pole(a));
        }
        let inv = 1.0 / d;
        let t = w * inv;
        m0.add(t);
        m1.add(t * inv);
        m2.add(2.0 * t * inv * inv);
    }
    Ok((m0.sum(), m1.sum(), m2.sum()))
}

/// Distance from z to the finite support.
pub fn dist_to_support(mu: &FiniteMeasure, z: Complex64) -> f64 {
    let xs = mu.positions();
    if xs.is_empty() {
        return f64::INFINITY;
    }
    // positions are descending; nearest atoms to Re z bracket it
    let k = xs.partition_point(|&x| x > z.re);
    let mut best = f64::INFINITY;
    for j in [k.wrapping_sub(1), k] {
        if let Some(&x) = xs.get(j) {
            best = best.min(Complex64::new(x - z.re, -z.im).norm());
        }
    }
    best
}

/// Rescaled semicircle density t^{−1/2}·ϱ_sc(t^{−1/2}x), ϱ_sc(x) = √(4 − x²)/(2π).
pub fn semicircle_density(t: f64, x: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidArgument(format!("semicircle variance must be positive, got {t}")));
    }
    let s = x / t.sqrt();
    let r = 4.0 - s * s;
    Ok(if r > 0.0 { r.sqrt() / (2.0 * std::f64::consts::PI * t.sqrt()) } else { 0.0 })
}

/// Stieltjes transform of the semicircle of variance t, (−z + √(z² − 4t))/(2t) on the
/// branch with positive imaginary part in ℍ.
pub fn semicircle_stieltjes(t: f64, z: Complex64) -> Complex64 {
    let r = (z * z - 4.0 * t).sqrt();
    let a = (-z + r) / (2.0 * t);
    let b = (-z - r) / (2.0 * t);
    if z.im >= 0.0 {
        if a.im >= b.im {
            a
        } else {
            b
        }
    } else if a.im <= b.im {
        a
    } else {
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{LN_2, PI};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn dirac_at_i() {
        let d = FiniteMeasure::dirac(0.0, 1.0).unwrap();
        let m = stieltjes(&d, c(0.0, 1.0)).unwrap();
        assert!((m - c(0.0, 1.0)).norm() < 1e-15);
    }

    #[test]
    fn uniform_at_one() {
        let u = FiniteMeasure::atomize_uniform(-1.0, 0.0, 1.0, 20_000).unwrap();
        let m = stieltjes(&u, c(1.0, 0.0)).unwrap();
        assert!((m.re + LN_2).abs() < 1e-8 && m.im.abs() < 1e-15);
        let d1 = stieltjes_deriv(&u, c(1.0, 0.0), 1).unwrap();
        assert!((d1.re - 0.5).abs() < 1e-8);
    }

    #[test]
    fn symmetric_pair_at_i() {
        let m2 = FiniteMeasure::new(&[(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        let m = stieltjes(&m2, c(0.0, 1.0)).unwrap();
        assert!((m - c(0.0, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let d = FiniteMeasure::dirac(0.0, 1.0).unwrap();
        assert!((stieltjes_deriv(&d, c(0.0, 1.0), 1).unwrap() - c(-1.0, 0.0)).norm() < 1e-15);
        assert!((stieltjes_deriv(&d, c(2.0, 0.0), 2).unwrap() - c(-0.25, 0.0)).norm() < 1e-15);
        assert!(stieltjes_deriv(&d, c(2.0, 0.0), 7).is_err());
        assert!(stieltjes_deriv(&d, c(2.0, 0.0), 0).is_err());
    }

    #[test]
    fn pole_is_reported() {
        let d = FiniteMeasure::dirac(0.5, 1.0).unwrap();
        assert_eq!(stieltjes(&d, c(0.5, 0.0)), Err(Error::Pole(0.5)));
    }

    #[test]
    fn jet_matches_general_derivatives() {
        let m = FiniteMeasure::new(&[(0.2, 0.3), (-0.7, 0.5), (-1.1, 0.2)]).unwrap();
        let (a, b, cc) = real_jet(&m, 1.3).unwrap();
        assert!((stieltjes(&m, c(1.3, 0.0)).unwrap().re - a).abs() < 1e-14);
        assert!((stieltjes_deriv(&m, c(1.3, 0.0), 1).unwrap().re - b).abs() < 1e-14);
        assert!((stieltjes_deriv(&m, c(1.3, 0.0), 2).unwrap().re - cc).abs() < 1e-13);
    }

    #[test]
    fn semicircle_values() {
        assert!((semicircle_density(1.0, 0.0).unwrap() - 1.0 / PI).abs() < 1e-15);
        assert_eq!(semicircle_density(1.0, 2.0).unwrap(), 0.0);
        assert!((semicircle_density(4.0, 0.0).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(semicircle_density(0.0, 0.0).is_err());
    }

    #[test]
    fn semicircle_transform_at_2i() {
        let m = semicircle_stieltjes(1.0, c(0.0, 2.0));
        assert!((m - c(0.0, 2f64.sqrt() - 1.0)).norm() < 1e-14);
    }

    #[test]
    fn distance_to_support() {
        let m = FiniteMeasure::new(&[(1.0, 0.5), (-1.0, 0.5)]).unwrap();
        assert!((dist_to_support(&m, c(0.2, 0.0)) - 0.8).abs() < 1e-15);
        assert!((dist_to_support(&m, c(3.0, 4.0)) - (4.0f64 + 16.0).sqrt()).abs() < 1e-15);
    }
}
