//! Tridiagonal β-ensemble reference sampler.
//!
//! The symmetric tridiagonal matrix with diagonal N(0, 2) and off-diagonal χ_{β(n−k)},
//! divided by √(βn), has the Gaussian β-ensemble eigenvalue law with limiting support
//! [−2, 2]; its largest eigenvalue fluctuates on the n^{−2/3} scale with Tracy–Widom β
//! limit.

use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use super::noise::NoiseStream;

/// Diagonal and off-diagonal of one scaled tridiagonal sample.
pub fn tridiagonal_model(n: usize, beta: f64, noise: &NoiseStream) -> (Vec<f64>, Vec<f64>) {
    let mut rng = noise.rng(0);
    let scale = 1.0 / (beta * n as f64).sqrt();
    let mut diag = Vec::with_capacity(n);
    for _ in 0..n {
        let g: f64 = rng.sample(StandardNormal);
        diag.push(std::f64::consts::SQRT_2 * g * scale);
    }
    let mut off = Vec::with_capacity(n.saturating_sub(1));
    for k in 1..n {
        let dof = beta * (n - k) as f64;
        let chi2 = ChiSquared::new(dof).expect("positive degrees of freedom");
        off.push(chi2.sample(&mut rng).sqrt() * scale);
    }
    (diag, off)
}

/// All eigenvalues of one β-ensemble sample, descending.
pub fn beta_ensemble_sample(n: usize, beta: f64, noise: &NoiseStream) -> Vec<f64> {
    let (diag, off) = tridiagonal_model(n, beta, noise);
    let mut ev = tridiagonal_eigenvalues(&diag, &off);
    ev.sort_by(|a, b| b.total_cmp(a));
    ev
}

/// Largest eigenvalue of one β-ensemble sample, by Sturm bisection.
pub fn beta_ensemble_top(n: usize, beta: f64, noise: &NoiseStream) -> f64 {
    let (diag, off) = tridiagonal_model(n, beta, noise);
    largest_eigenvalue(&diag, &off)
}

/// Number of eigenvalues strictly below `x`.
fn count_below(diag: &[f64], off: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for k in 0..diag.len() {
        let b2 = if k == 0 { 0.0 } else { off[k - 1] * off[k - 1] };
        q = diag[k] - x - if k == 0 { 0.0 } else { b2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[k].abs() + x.abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a symmetric tridiagonal matrix.
pub fn largest_eigenvalue(diag: &[f64], off: &[f64]) -> f64 {
    let n = diag.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..n {
        let r = if k > 0 { off[k - 1].abs() } else { 0.0 } + if k + 1 < n { off[k].abs() } else { 0.0 };
        lo = lo.min(diag[k] - r);
        hi = hi.max(diag[k] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(diag, off, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL with Wilkinson shifts.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut d = diag.to_vec();
    // e[i] couples d[i] and d[i + 1]; e[n - 1] is padding
    let mut e = off.to_vec();
    e.push(0.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 200 {
                break;
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ql_matches_known_spectrum() {
        // tridiag(-1, 2, -1) of size 6: 2 - 2cos(kπ/7)
        let n = 6;
        let diag = vec![2.0; n];
        let off = vec![-1.0; n - 1];
        let mut ev = tridiagonal_eigenvalues(&diag, &off);
        ev.sort_by(f64::total_cmp);
        for (k, &x) in ev.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 7.0).cos();
            assert!((x - exact).abs() < 1e-13, "{x} vs {exact}");
        }
        assert!((largest_eigenvalue(&diag, &off) - ev[n - 1]).abs() < 1e-13);
    }

    #[test]
    fn top_eigenvalue_agrees_with_full_spectrum() {
        for id in 0..5 {
            let s = NoiseStream::new(42, id);
            let all = beta_ensemble_sample(200, 2.0, &s);
            let top = beta_ensemble_top(200, 2.0, &s);
            assert!((all[0] - top).abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_variance() {
        let beta = 2.0;
        let xs: Vec<f64> = (0..4000).map(|k| beta_ensemble_sample(1, beta, &NoiseStream::new(5, k))[0]).collect();
        let var = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        assert!((var - 2.0 / beta).abs() < 0.08, "{var}");
    }

    #[test]
    fn spectrum_fills_the_semicircle() {
        let ev = beta_ensemble_sample(400, 1.0, &NoiseStream::new(3, 0));
        assert!(ev[0] < 2.2 && ev[0] > 1.8);
        assert!(ev[399] > -2.2 && ev[399] < -1.8);
    }
}
