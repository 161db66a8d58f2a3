//! Homogeneous phase polynomials `p` of degree 2k, their positivity
//! certificates and the normalized phase `Ψ = c_p e^{−p}`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{config, numeric, rejected, Result};
use crate::jet::Jet;
use crate::quad;

pub const C_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTerm {
    pub alpha: Vec<u32>,
    pub coef: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositivityCertificate {
    pub c: f64,
    #[serde(rename = "C")]
    pub c_upper: f64,
    pub rho: f64,
    pub c_prime: f64,
    #[serde(rename = "C_prime")]
    pub c_prime_upper: f64,
    pub sphere_samples: usize,
    pub c_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePolynomial {
    #[serde(rename = "N")]
    pub n: usize,
    pub k: usize,
    pub terms: Vec<PhaseTerm>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert: Option<PositivityCertificate>,
}

pub fn parse_phase(s: &str) -> Result<PhasePolynomial> {
    let p: PhasePolynomial = serde_json::from_str(s)?;
    p.check_shape()?;
    Ok(p)
}

impl PhasePolynomial {
    pub fn new(n: usize, k: usize, terms: Vec<(Vec<u32>, f64)>) -> Result<PhasePolynomial> {
        let p = PhasePolynomial {
            n,
            k,
            terms: terms.into_iter().map(|(alpha, coef)| PhaseTerm { alpha, coef }).collect(),
            cert: None,
        };
        p.check_shape()?;
        Ok(p)
    }

    /// `Σ x_j²`.
    pub fn default_for(n: usize) -> PhasePolynomial {
        let terms = (0..n)
            .map(|j| {
                let mut a = vec![0; n];
                a[j] = 2;
                (a, 1.0)
            })
            .collect();
        PhasePolynomial::new(n, 1, terms).expect("default phase is well formed")
    }

    pub fn check_shape(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 {
            return config("phase needs N ≥ 1 and k ≥ 1");
        }
        if self.terms.is_empty() {
            return config("phase has no terms");
        }
        for t in &self.terms {
            if t.alpha.len() != self.n {
                return config(format!("multi-index {:?} has wrong length for N = {}", t.alpha, self.n));
            }
            let deg: u32 = t.alpha.iter().sum();
            if deg as usize != 2 * self.k {
                return config(format!("term {:?} has degree {deg}, expected {}", t.alpha, 2 * self.k));
            }
            if !t.coef.is_finite() {
                return config("non-finite coefficient");
            }
        }
        Ok(())
    }

    pub fn degree(&self) -> usize {
        2 * self.k
    }

    pub fn c_p(&self) -> Result<f64> {
        match &self.cert {
            Some(c) => Ok(c.c_p),
            None => config("phase is not certified"),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.alpha.iter().zip(x).map(|(&a, &xi)| xi.powi(a as i32)).product::<f64>())
            .sum()
    }

    pub fn eval_c(&self, z: &[Complex64]) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.alpha.iter().zip(z).map(|(&a, &zi)| zi.powi(a as i32)).product::<Complex64>())
            .sum()
    }

    pub fn eval_jet(&self, z: &[Jet]) -> Jet {
        let layout = &z[0].layout;
        let mut out = Jet::zero(layout);
        for t in &self.terms {
            let mut m = Jet::constant(layout, Complex64::new(t.coef, 0.0));
            for (&a, zi) in t.alpha.iter().zip(z) {
                if a > 0 {
                    m = m.mul(&zi.powi(a));
                }
            }
            out = out.add(&m);
        }
        out
    }
}

/// Quasi-uniform unit-sphere sample: ±1 for N = 1, equispaced angles for N = 2.
pub fn sphere_samples(n_dim: usize, count: usize) -> Result<Vec<Vec<f64>>> {
    match n_dim {
        1 => Ok(vec![vec![1.0], vec![-1.0]]),
        2 => Ok((0..count)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()),
        _ => config("sphere sampling supports N ∈ {1, 2}"),
    }
}

fn extrema(p: &PhasePolynomial, count: usize) -> Result<(f64, f64)> {
    let s = sphere_samples(p.n, count)?;
    let v: Vec<f64> = s.iter().map(|x| p.eval(x)).collect();
    Ok((v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Positivity {
    pub c: f64,
    #[serde(rename = "C")]
    pub c_upper: f64,
    pub samples: usize,
}

/// Sampled `min/max p` on the unit sphere, refined until both move < 1%.
pub fn validate_positivity(p: &PhasePolynomial, n_sphere: usize) -> Result<Positivity> {
    p.check_shape()?;
    if n_sphere < 64 * p.n {
        return config(format!("n_sphere = {n_sphere} < 64·N"));
    }
    if p.terms.iter().all(|t| t.coef == 0.0) {
        return rejected("degenerate phase: all coefficients vanish");
    }
    let mut count = n_sphere;
    let (mut c, mut cu) = extrema(p, count)?;
    if p.n > 1 {
        for _ in 0..8 {
            let (c2, cu2) = extrema(p, 2 * count)?;
            count *= 2;
            let stable = (c2 - c).abs() <= 0.01 * c.abs().max(C_FLOOR) && (cu2 - cu).abs() <= 0.01 * cu.abs();
            c = c2;
            cu = cu2;
            if stable {
                break;
            }
        }
    }
    if c <= C_FLOOR {
        return rejected(format!("not positive-definite on sphere (min p = {c:.3e})"));
    }
    Ok(Positivity { c, c_upper: cu, samples: count })
}

/// Points of `Γ_ρ ∩ {|z| = 1}` (unnormalized; callers divide by |z|^{2k}).
fn cone_samples(n: usize, rho: f64, count: usize) -> Result<Vec<Vec<Complex64>>> {
    let mut out = Vec::new();
    match n {
        1 => {
            for &x in &[1.0, -1.0] {
                for i in 0..=count {
                    let s = -1.0 + 2.0 * i as f64 / count as f64;
                    out.push(vec![Complex64::new(x, x * rho * s)]);
                }
            }
        }
        2 => {
            let na = count.max(8);
            let nr = (count / 4).max(4);
            for ia in 0..na {
                let phi = 2.0 * PI * ia as f64 / na as f64;
                let (x, xp) = ([phi.cos(), phi.sin()], [-phi.sin(), phi.cos()]);
                for ir in 0..=nr {
                    let s = ir as f64 / nr as f64;
                    let nb = if ir == 0 { 1 } else { na };
                    for ib in 0..nb {
                        let psi = 2.0 * PI * ib as f64 / nb as f64;
                        let (s1, s2) = (rho * s * psi.cos(), rho * s * psi.sin());
                        out.push(
                            (0..2)
                                .map(|j| Complex64::new(x[j], s1 * x[j] + s2 * xp[j]))
                                .collect(),
                        );
                    }
                }
            }
        }
        _ => return config("cone sampling supports N ∈ {1, 2}"),
    }
    Ok(out)
}

/// `(min, max)` of `Re p(z)/|z|^{2k}` over sampled `Γ_ρ`.
pub fn cone_constants(p: &PhasePolynomial, rho: f64, count: usize) -> Result<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for z in cone_samples(p.n, rho, count)? {
        let nz2: f64 = z.iter().map(|c| c.norm_sqr()).sum();
        let v = p.eval_c(&z).re / nz2.powi(p.k as i32);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeFit {
    pub rho: f64,
    pub c_prime: f64,
    #[serde(rename = "C_prime")]
    pub c_prime_upper: f64,
}

pub fn default_rho_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Largest grid ρ whose sampled `min Re p` on `Γ_ρ` clears the floor.
pub fn fit_complex_cone(p: &PhasePolynomial, rho_grid: &[f64]) -> Result<ConeFit> {
    validate_positivity(p, 64 * p.n)?;
    let mut best: Option<ConeFit> = None;
    for &rho in rho_grid {
        if !(rho > 0.0) {
            continue;
        }
        let (lo, hi) = cone_constants(p, rho, 256)?;
        if lo > C_FLOOR && best.map_or(true, |b| rho > b.rho) {
            best = Some(ConeFit { rho, c_prime: lo, c_prime_upper: hi });
        }
    }
    match best {
        Some(b) => Ok(b),
        None => rejected("no admissible ρ: Re p is not positive on any sampled complex cone"),
    }
}

/// `1/∫ e^{−p}`, truncated where the integrand drops below 1e-16 of its peak.
pub fn normalization_constant(p: &PhasePolynomial, quad_tol: f64) -> Result<f64> {
    let pos = validate_positivity(p, 64 * p.n)?;
    let r_max = ((16.0 * 10f64.ln()) / pos.c).powf(1.0 / p.degree() as f64);
    let integral = match p.n {
        1 => {
            let f = |x: f64| (-p.eval(&[x])).exp();
            quad::adaptive_real(f, -r_max, 0.0, 0.0, quad_tol * 1e-2)?
                + quad::adaptive_real(f, 0.0, r_max, 0.0, quad_tol * 1e-2)?
        }
        2 => {
            // polar coordinates; the angular integrand is smooth and periodic
            let radial = |th: f64| -> Result<f64> {
                let u = [th.cos(), th.sin()];
                let a = p.eval(&u);
                let rm = ((16.0 * 10f64.ln()) / a).powf(1.0 / p.degree() as f64).min(r_max);
                quad::adaptive_real(|r| (-a * r.powi(p.degree() as i32)).exp() * r, 0.0, rm, 0.0, quad_tol * 1e-2)
            };
            let mut n = 16;
            let mut prev = f64::NAN;
            loop {
                let h = 2.0 * PI / n as f64;
                let mut s = 0.0;
                for i in 0..n {
                    s += radial(h * i as f64)?;
                }
                s *= h;
                if (s - prev).abs() <= quad_tol * 1e-2 * s.abs() {
                    break s;
                }
                if n > 1 << 14 {
                    return numeric("angular quadrature did not converge");
                }
                prev = s;
                n *= 2;
            }
        }
        _ => return config("normalization supports N ∈ {1, 2}"),
    };
    if !(integral > 0.0) || !integral.is_finite() {
        return numeric("normalization integral is not positive and finite");
    }
    Ok(1.0 / integral)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CertifyOptions {
    pub n_sphere: usize,
    pub rho_grid: Vec<f64>,
    pub quad_tol: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { n_sphere: 128, rho_grid: default_rho_grid(), quad_tol: 1e-12 }
    }
}

/// Runs positivity, cone fit and normalization; attaches the certificate.
pub fn certify(p: &PhasePolynomial, opts: &CertifyOptions) -> Result<PhasePolynomial> {
    let pos = validate_positivity(p, opts.n_sphere.max(64 * p.n))?;
    let cone = fit_complex_cone(p, &opts.rho_grid)?;
    let c_p = normalization_constant(p, opts.quad_tol)?;
    let mut out = p.clone();
    out.cert = Some(PositivityCertificate {
        c: pos.c,
        c_upper: pos.c_upper,
        rho: cone.rho,
        c_prime: cone.c_prime,
        c_prime_upper: cone.c_prime_upper,
        sphere_samples: pos.samples,
        c_p,
    });
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodPhaseOptions {
    /// only `w` with `|Im w| < l_strip` are checked
    pub l_strip: f64,
    pub tol: f64,
    pub eps: f64,
    pub k_box: (f64, f64),
    pub delta: f64,
}

impl Default for GoodPhaseOptions {
    fn default() -> Self {
        GoodPhaseOptions { l_strip: 1.0, tol: 1e-6, eps: 0.1, k_box: (-1.0, 1.0), delta: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HSample {
    pub w: Vec<Complex64>,
    pub t: f64,
    pub h: Complex64,
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodPhaseReport {
    pub lambda: f64,
    pub integrability_bound: f64,
    pub samples: Vec<HSample>,
    pub skipped: usize,
    pub max_deviation: f64,
    pub tol: f64,
    pub accepted: bool,
}

/// Integral over ℝ of a function whose modulus decays away from `center`.
fn whole_line<F: Fn(f64) -> Complex64>(f: F, center: f64, scale: f64, tol: f64) -> Result<Complex64> {
    let peak = f(center).norm().max(1e-300);
    let mut r = scale;
    while f(center + r).norm().max(f(center - r).norm()) > 1e-18 * peak {
        r *= 1.5;
        if r > 1e6 * scale {
            return numeric("integrand does not decay");
        }
    }
    let (a, _) = quad::adaptive(&f, center - r, center, 1e-300, tol, 50_000)?;
    let (b, _) = quad::adaptive(&f, center, center + r, 1e-300, tol, 50_000)?;
    Ok(a + b)
}

fn h_value(p: &PhasePolynomial, c_p: f64, lambda: f64, w: &[Complex64], t: f64) -> Result<Complex64> {
    let tl = t.powf(lambda);
    let scale = 1.0 / tl;
    match p.n {
        1 => {
            let f = |tau: f64| (-p.eval_c(&[(Complex64::new(tau, 0.0) - w[0]) * tl])).exp() * tl;
            Ok(whole_line(f, w[0].re, scale, 1e-13)? * c_p)
        }
        2 => {
            let inner = |t1: f64| -> Complex64 {
                let f = |t2: f64| {
                    let z = [(Complex64::new(t1, 0.0) - w[0]) * tl, (Complex64::new(t2, 0.0) - w[1]) * tl];
                    (-p.eval_c(&z)).exp() * tl * tl
                };
                whole_line(f, w[1].re, scale, 1e-12).unwrap_or(Complex64::new(f64::NAN, 0.0))
            };
            let v = whole_line(inner, w[0].re, scale, 1e-12)?;
            if !v.re.is_finite() {
                return numeric("inner quadrature failed");
            }
            Ok(v * c_p)
        }
        _ => config("good-phase check supports N ∈ {1, 2}"),
    }
}

/// `sup_{w ∈ K_δ} ∫ e^{−ε|ξ|²} ∫ |Ψ(|ξ|^λ(τ−w))| |ξ|^{λN} dτ dξ` over a sample of `K_δ`.
fn integrability(p: &PhasePolynomial, c_p: f64, lambda: f64, o: &GoodPhaseOptions) -> Result<f64> {
    let ws: Vec<Vec<Complex64>> = {
        let xs: Vec<f64> = (0..=4).map(|i| o.k_box.0 - o.delta + (o.k_box.1 - o.k_box.0 + 2.0 * o.delta) * i as f64 / 4.0).collect();
        let ys = [-o.delta, 0.0, o.delta];
        match p.n {
            1 => xs.iter().flat_map(|&x| ys.iter().map(move |&y| vec![Complex64::new(x, y)])).collect(),
            _ => ys.iter().map(|&y| vec![Complex64::new(0.0, y); p.n]).collect(),
        }
    };
    let mut worst: f64 = 0.0;
    for w in &ws {
        // inner integral after the real substitution s = |ξ|^λ (τ − Re w)
        let inner = |rho: f64| -> f64 {
            let rl = rho.powf(lambda);
            let b: Vec<f64> = w.iter().map(|z| -rl * z.im).collect();
            let g = |s: &[f64]| -> f64 {
                let z: Vec<Complex64> = s.iter().zip(&b).map(|(&si, &bi)| Complex64::new(si, bi)).collect();
                (-p.eval_c(&z).re).exp()
            };
            let v = match p.n {
                1 => whole_line(|s| Complex64::new(g(&[s]), 0.0), 0.0, 1.0, 1e-10).map(|c| c.re),
                _ => whole_line(
                    |s1| {
                        Complex64::new(
                            whole_line(|s2| Complex64::new(g(&[s1, s2]), 0.0), 0.0, 1.0, 1e-9).map(|c| c.re).unwrap_or(f64::NAN),
                            0.0,
                        )
                    },
                    0.0,
                    1.0,
                    1e-9,
                )
                .map(|c| c.re),
            };
            c_p * v.unwrap_or(f64::NAN)
        };
        let shell = |rho: f64| -> f64 {
            let measure = if p.n == 1 { 2.0 } else { 2.0 * PI * rho };
            (-o.eps * rho * rho).exp() * inner(rho) * measure
        };
        let mut r = 1.0;
        while shell(r) > 1e-16 || r < 1.0 / o.eps.sqrt() {
            r *= 1.25;
            if r > 1e4 {
                return numeric("integrability integrand does not decay");
            }
        }
        let v = quad::adaptive_real(shell, 0.0, r, 0.0, 1e-8)?;
        if !v.is_finite() {
            return numeric("integrability quadrature failed");
        }
        worst = worst.max(v);
    }
    Ok(worst)
}

pub fn check_good_phase(
    p: &PhasePolynomial,
    lambda: f64,
    w_grid: &[Vec<Complex64>],
    t_grid: &[f64],
    o: &GoodPhaseOptions,
) -> Result<GoodPhaseReport> {
    let c_p = p.c_p()?;
    let top = 1.0 / p.k as f64;
    if !(lambda > 0.0 && lambda < top) {
        return rejected(format!("λ = {lambda} is outside (0, 1/k) = (0, {top})"));
    }
    let integrability_bound = integrability(p, c_p, lambda, o)?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for w in w_grid {
        if w.len() != p.n {
            return config("w has the wrong dimension");
        }
        if w.iter().any(|z| z.im.abs() >= o.l_strip) {
            skipped += 1;
            continue;
        }
        for &t in t_grid {
            if !(t > 0.0) {
                return config("t must be positive");
            }
            let h = h_value(p, c_p, lambda, w, t)?;
            samples.push(HSample { w: w.clone(), t, h, deviation: (h - 1.0).norm() });
        }
    }
    let max_deviation = samples.iter().map(|s| s.deviation).fold(0.0, f64::max);
    Ok(GoodPhaseReport {
        lambda,
        integrability_bound,
        samples,
        skipped,
        max_deviation,
        tol: o.tol,
        accepted: max_deviation <= o.tol && integrability_bound.is_finite(),
    })
}

/// 5×5 grid `Re w ∈ [−1,1]`, `Im w ∈ [−½,½]` (N = 1) used by the CLI default.
pub fn default_w_grid(n: usize) -> Vec<Vec<Complex64>> {
    let mut out = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            let z = Complex64::new(-1.0 + 0.5 * i as f64, -0.5 + 0.25 * j as f64);
            out.push(vec![z; n]);
        }
    }
    out
}
