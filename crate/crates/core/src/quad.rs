//! Gauss–Legendre and Gauss–Kronrod rules, composite and adaptive drivers.

use num_complex::Complex64;
use std::sync::OnceLock;

use crate::error::{numeric, Result};

const MAX_CACHED: usize = 128;

/// Nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> &'static (Vec<f64>, Vec<f64>) {
    static CACHE: [OnceLock<(Vec<f64>, Vec<f64>)>; MAX_CACHED + 1] =
        [const { OnceLock::new() }; MAX_CACHED + 1];
    assert!(n >= 1 && n <= MAX_CACHED, "unsupported rule size {n}");
    CACHE[n].get_or_init(|| compute_gl(n))
}

fn compute_gl(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p1 = z;
                p0 = 1.0;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n == 1 {
        x[0] = 0.0;
        w[0] = 2.0;
    }
    (x, w)
}

/// Map an n-point rule to [a, b].
pub fn gl_nodes(n: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (x, w) = gauss_legendre(n);
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    x.iter().zip(w.iter()).map(move |(&xi, &wi)| (c + h * xi, h * wi))
}

/// Composite rule on `panels` equal panels.
pub fn composite<F: FnMut(f64) -> Complex64>(mut f: F, a: f64, b: f64, panels: usize, n: usize) -> Complex64 {
    let h = (b - a) / panels as f64;
    let mut s = Complex64::new(0.0, 0.0);
    for p in 0..panels {
        let lo = a + h * p as f64;
        for (x, w) in gl_nodes(n, lo, lo + h) {
            s += f(x) * w;
        }
    }
    s
}

// G7-K15 abscissae and weights (standard QUADPACK values).
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
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// (Kronrod value, |Kronrod − Gauss|, Kronrod estimate of ∫|f|)
fn gk15<F: FnMut(f64) -> Complex64>(f: &mut F, a: f64, b: f64) -> (Complex64, f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut rk = fc * WGK[7];
    let mut rg = fc * WG[3];
    let mut ra = fc.norm() * WGK[7];
    for j in 0..7 {
        let dx = h * XGK[j];
        let (f1, f2) = (f(c - dx), f(c + dx));
        let s = f1 + f2;
        rk += s * WGK[j];
        ra += (f1.norm() + f2.norm()) * WGK[j];
        if j % 2 == 1 {
            rg += s * WG[j / 2];
        }
    }
    let rk = rk * h;
    let rg = rg * h;
    (rk, (rk - rg).norm(), ra * h.abs())
}

/// Adaptive bisection with G7-K15 error estimates. Errors below the roundoff
/// level of `∫|f|` count as converged, so integrals that cancel to ~0 are
/// accepted instead of refined forever.
pub fn adaptive<F: FnMut(f64) -> Complex64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<(Complex64, f64)> {
    if a == b {
        return Ok((Complex64::new(0.0, 0.0), 0.0));
    }
    let mut stack: Vec<(f64, f64, Complex64, f64, f64)> = Vec::new();
    let (v, e, m) = gk15(&mut f, a, b);
    stack.push((a, b, v, e, m));
    let mut total = v;
    let mut err = e;
    let mut mass = m;
    let mut count = 1;
    while err > abs_tol.max(rel_tol * total.norm()).max(64.0 * f64::EPSILON * mass) {
        if count >= max_intervals {
            return numeric(format!("adaptive quadrature did not converge on [{a}, {b}] (err {err:.3e})"));
        }
        // split the interval with the largest error
        let (idx, _) = stack
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, v0, e0, m0) = stack.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1, m1) = gk15(&mut f, lo, mid);
        let (v2, e2, m2) = gk15(&mut f, mid, hi);
        total += v1 + v2 - v0;
        err += e1 + e2 - e0;
        mass += m1 + m2 - m0;
        stack.push((lo, mid, v1, e1, m1));
        stack.push((mid, hi, v2, e2, m2));
        count += 1;
        if !total.re.is_finite() || !total.im.is_finite() {
            return numeric("non-finite integrand");
        }
    }
    // resum in interval order so the result does not depend on the split history
    stack.sort_by(|x, y| x.0.total_cmp(&y.0));
    let total = stack.iter().fold(Complex64::new(0.0, 0.0), |s, t| s + t.2);
    let err = stack.iter().map(|t| t.3).sum();
    Ok((total, err))
}

/// Real-valued convenience wrapper.
pub fn adaptive_real<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    adaptive(|x| Complex64::new(f(x), 0.0), a, b, abs_tol, rel_tol, 20_000).map(|r| r.0.re)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gl_integrates_polynomials_exactly() {
        for n in [1, 2, 5, 16, 64] {
            let (x, w) = gauss_legendre(n);
            let deg = 2 * n - 1;
            let s: f64 = x.iter().zip(w).map(|(x, w)| w * x.powi(deg as i32 - 1)).sum();
            let exact = if (deg - 1) % 2 == 0 { 2.0 / deg as f64 } else { 0.0 };
            assert!((s - exact).abs() < 1e-13, "n={n}");
        }
    }

    #[test]
    fn adaptive_gaussian() {
        let (v, _) = adaptive(|x| Complex64::new((-x * x).exp(), 0.0), -10.0, 10.0, 1e-14, 1e-14, 1000).unwrap();
        assert!((v.re - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn composite_oscillatory() {
        let v = composite(|x| Complex64::new(0.0, 50.0 * x).exp(), 0.0, 1.0, 20, 16);
        let exact = (Complex64::new(0.0, 50.0).exp() - 1.0) / Complex64::new(0.0, 50.0);
        assert!((v - exact).norm() < 1e-13);
    }
}
