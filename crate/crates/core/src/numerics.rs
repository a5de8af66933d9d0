//! Scalar root finding and adaptive quadrature.

/// Finds a root of `f` in `[lo, hi]` given values of opposite sign at the ends.
///
/// Regula falsi with the Illinois modification, falling back to bisection whenever
/// the interval fails to halve. Stops when the bracket is below `xtol` or
/// `|f| ≤ ftol`. Returns the bracket midpoint-quality estimate.
#[allow(clippy::too_many_arguments)]
pub fn bracketed_root<F: FnMut(f64) -> f64>(
    mut f: F,
    mut lo: f64,
    mut hi: f64,
    mut flo: f64,
    mut fhi: f64,
    xtol: f64,
    ftol: f64,
    max_iter: usize,
) -> f64 {
    if flo == 0.0 {
        return lo;
    }
    if fhi == 0.0 {
        return hi;
    }
    debug_assert!(flo.signum() != fhi.signum(), "root not bracketed");
    let mut side = 0i8;
    let mut last_width = hi - lo;
    for it in 0..max_iter {
        let width = hi - lo;
        if width.abs() <= xtol {
            break;
        }
        let use_bisection = it % 3 == 2 && width > 0.5 * last_width;
        if it % 3 == 2 {
            last_width = width;
        }
        let mut x = if use_bisection { 0.5 * (lo + hi) } else { (lo * fhi - hi * flo) / (fhi - flo) };
        if !(x > lo.min(hi) && x < lo.max(hi)) {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        if fx.abs() <= ftol {
            return x;
        }
        if fx.signum() == fhi.signum() {
            hi = x;
            fhi = fx;
            if side == -1 {
                flo *= 0.5;
            }
            side = -1;
        } else {
            lo = x;
            flo = fx;
            if side == 1 {
                fhi *= 0.5;
            }
            side = 1;
        }
    }
    if flo.abs() < fhi.abs() {
        lo
    } else {
        hi
    }
}

#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7/15 panel: (Kronrod estimate, |Kronrod − Gauss|).
pub fn gk15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Accepted panel of an adaptive integration.
#[derive(Debug, Clone, Copy)]
pub struct Panel {
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[a, b]`.
///
/// Bisects the panel with the largest error estimate until the summed estimate is
/// below `tol` or `max_panels` is reached. Panels are returned sorted by position.
pub fn adaptive_panels<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
    max_panels: usize,
) -> (f64, Vec<Panel>) {
    if !(b > a) {
        return (0.0, Vec::new());
    }
    let (v, e) = gk15(&mut f, a, b);
    let mut panels: Vec<(Panel, f64)> = vec![(Panel { a, b, value: v }, e)];
    loop {
        let total_err: f64 = panels.iter().map(|p| p.1).sum();
        if total_err <= tol || panels.len() >= max_panels {
            break;
        }
        let (idx, _) = panels.iter().enumerate().max_by(|x, y| x.1 .1.total_cmp(&y.1 .1)).unwrap();
        let (p, _) = panels.swap_remove(idx);
        let m = 0.5 * (p.a + p.b);
        if !(m > p.a && m < p.b) {
            panels.push((p, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&mut f, p.a, m);
        let (v2, e2) = gk15(&mut f, m, p.b);
        panels.push((Panel { a: p.a, b: m, value: v1 }, e1));
        panels.push((Panel { a: m, b: p.b, value: v2 }, e2));
    }
    let mut out: Vec<Panel> = panels.into_iter().map(|p| p.0).collect();
    out.sort_by(|x, y| x.a.total_cmp(&y.a));
    let total = out.iter().map(|p| p.value).sum();
    (total, out)
}

/// Adaptive integral of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    adaptive_panels(f, a, b, tol, 4096).0
}
