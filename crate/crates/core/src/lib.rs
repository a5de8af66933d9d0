//! β-Dyson Brownian motion, free convolution with the rescaled semicircle law, and
//! desk-scale experiments on edge rigidity and edge universality.
//!
//! The library is organised bottom-up: [`measures`] and [`stieltjes`] provide the
//! measure-theoretic primitives, [`freeconv`] computes μ₀ ⊞ μ_sc^(t), [`dbm`]
//! integrates the particle system, [`characteristics`] checks the flow lemmas, and
//! [`harness`] runs the experiments.

// NaN-rejecting guards are written `!(x > 0.0)` on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod characteristics;
pub mod dbm;
pub mod error;
pub mod freeconv;
pub mod harness;
pub mod measures;
pub mod numerics;
pub mod stats;
pub mod stieltjes;

pub use error::{Error, Result};
pub use measures::{ExtendedReal, FiniteMeasure};
pub use num_complex::Complex64 as ComplexPoint;

/// Formats a number with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}
