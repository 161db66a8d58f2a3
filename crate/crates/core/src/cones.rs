//! Cone covers of the covector space and the microlocal decomposition of a
//! functional near a base point into a cone-localized piece `F₁`, pieces
//! `f_j` holomorphic in wedges, and boundary-chain corrections `R_j`.
//!
//! Only N ∈ {1, 2}. Sectors are half-open angular intervals `[lo, hi)`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, rejected, Result};
use crate::fbi::{fbi, fbi_complex, QuadOptions};
use crate::functional::{bracket, in_bracket_cone, FunctionalExpr};
use crate::phase::PhasePolynomial;
use crate::quad;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Cone {
    /// Half-line of the given sign (N = 1).
    Sign { s: f64 },
    /// Angular sector `[lo, hi)` in radians (N = 2).
    Sector { lo: f64, hi: f64 },
}

fn wrap(a: f64) -> f64 {
    let t = a.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

impl Cone {
    pub fn opening(&self) -> f64 {
        match self {
            Cone::Sign { .. } => 0.0,
            Cone::Sector { lo, hi } => hi - lo,
        }
    }

    pub fn acute(&self) -> bool {
        self.opening() < PI
    }

    pub fn bisector(&self) -> Vec<f64> {
        match self {
            Cone::Sign { s } => vec![*s],
            Cone::Sector { lo, hi } => {
                let m = 0.5 * (lo + hi);
                vec![m.cos(), m.sin()]
            }
        }
    }

    pub fn contains(&self, v: &[f64]) -> bool {
        match self {
            Cone::Sign { s } => v[0] * s > 0.0,
            Cone::Sector { lo, hi } => {
                if v[0] == 0.0 && v[1] == 0.0 {
                    return false;
                }
                let t = (v[1].atan2(v[0]) - lo).rem_euclid(2.0 * PI);
                t < hi - lo
            }
        }
    }

    /// Random unit vector in the cone (interior for sectors).
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            Cone::Sign { s } => vec![*s],
            Cone::Sector { lo, hi } => {
                let t = rng.gen_range(*lo..*hi);
                vec![t.cos(), t.sin()]
            }
        }
    }

    fn check(&self) -> Result<()> {
        match self {
            Cone::Sign { s } if *s == 1.0 || *s == -1.0 => Ok(()),
            Cone::Sign { .. } => config("sign cone needs s = ±1"),
            Cone::Sector { lo, hi } if lo.is_finite() && hi.is_finite() && hi > lo && hi - lo <= 2.0 * PI => Ok(()),
            Cone::Sector { .. } => config("sector needs lo < hi ≤ lo + 2π"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualPlacement {
    /// Dual sectors centred on the bisector of their cone.
    #[default]
    Bisector,
    /// Dual sectors of the secondary cones tilted away from ξ₀ so that
    /// `ξ₀·y < 0` on each of them.
    Opposing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub xi0: Vec<f64>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub placement: DualPlacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    #[serde(rename = "N")]
    pub n: usize,
    pub cones: Vec<Cone>,
    pub duals: Vec<Cone>,
    pub c: f64,
    pub xi0: Vec<f64>,
    pub beta: f64,
    pub placement: DualPlacement,
    /// Per dual: every sampled y satisfies ξ₀·y < 0 (entry 0 is C₁'s own dual).
    pub opposing: Vec<bool>,
}

fn angle_dist(a: f64, b: f64) -> f64 {
    wrap(a - b).abs()
}

/// Equal cones with ξ₀ bisecting the first, and dual cones of half-angle β.
pub fn build_cover(cfg: &CoverConfig) -> Result<CoverSpec> {
    let nrm = cfg.xi0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if cfg.xi0.len() != cfg.n || !(nrm > 0.0) || !nrm.is_finite() {
        return config("xi0 must be a nonzero covector of dimension N");
    }
    if !(cfg.beta >= 0.0) || !cfg.beta.is_finite() {
        return config("beta must be nonnegative");
    }
    let xi0: Vec<f64> = cfg.xi0.iter().map(|x| x / nrm).collect();
    match cfg.n {
        1 => {
            if cfg.l != 2 {
                return config("N = 1 covers have exactly two cones");
            }
            let s = xi0[0].signum();
            let cones = vec![Cone::Sign { s }, Cone::Sign { s: -s }];
            Ok(CoverSpec {
                n: 1,
                duals: cones.clone(),
                cones,
                c: 1.0,
                xi0,
                beta: 0.0,
                placement: cfg.placement,
                opposing: vec![false, true],
            })
        }
        2 => {
            if cfg.l < 3 {
                return rejected("N = 2 covers need L ≥ 3 for acute cones");
            }
            if !(cfg.beta > 0.0) {
                return config("N = 2 covers need dual half-angle beta > 0");
            }
            let w = 2.0 * PI / cfg.l as f64;
            let beta = cfg.beta;
            let t0 = xi0[1].atan2(xi0[0]);
            let cones: Vec<Cone> = (0..cfg.l)
                .map(|j| {
                    let m = t0 + j as f64 * w;
                    Cone::Sector { lo: m - w / 2.0, hi: m + w / 2.0 }
                })
                .collect();
            let mut duals = Vec::with_capacity(cfg.l);
            let mut worst: f64 = 0.0;
            let mut opposing = Vec::with_capacity(cfg.l);
            for (j, cone) in cones.iter().enumerate() {
                let Cone::Sector { lo, hi } = *cone else { unreachable!() };
                let mid = 0.5 * (lo + hi);
                let psi = if j == 0 || cfg.placement == DualPlacement::Bisector {
                    mid
                } else {
                    opposing_centre(lo, hi, t0, beta)?
                };
                let spread = angle_dist(psi, lo).max(angle_dist(psi, hi)) + beta;
                worst = worst.max(spread);
                opposing.push(j > 0 && angle_dist(psi, t0) - beta > PI / 2.0);
                duals.push(Cone::Sector { lo: psi - beta, hi: psi + beta });
            }
            if worst >= PI / 2.0 {
                return rejected(format!("no positive dual constant: worst angle {worst:.4} ≥ π/2"));
            }
            Ok(CoverSpec { n: 2, cones, duals, c: worst.cos(), xi0, beta, placement: cfg.placement, opposing })
        }
        _ => config("cone covers support N ∈ {1, 2}"),
    }
}

/// Dual centre for `[lo, hi]` with every direction in the β-sector at angle
/// > π/2 from ξ₀ and < π/2 from the whole cone, maximising the worst margin.
fn opposing_centre(lo: f64, hi: f64, t0: f64, beta: f64) -> Result<f64> {
    let mut best: Option<(f64, f64)> = None;
    let steps = 20_000;
    for k in 0..steps {
        let psi = lo - PI / 2.0 + (hi - lo + PI) * k as f64 / steps as f64;
        let m1 = angle_dist(psi, t0) - beta - PI / 2.0;
        let m2 = PI / 2.0 - beta - angle_dist(psi, lo).max(angle_dist(psi, hi));
        let m = m1.min(m2);
        if m > 0.0 && best.map_or(true, |b| m > b.1) {
            best = Some((psi, m));
        }
    }
    match best {
        Some((psi, _)) => Ok(psi),
        None => rejected("no opposing dual placement for this cover and beta"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub tiling: bool,
    pub overlap_measure: f64,
    pub angular_sum: f64,
    pub xi0_interior: bool,
    pub acute: bool,
    pub dual_pairs_per_cone: usize,
    /// min over sampled pairs of `v·ξ/(|v||ξ|) − c`.
    pub dual_margin: f64,
    pub dual_ok: bool,
    pub opposite_ok: Vec<bool>,
}

/// Check tiling, acuteness, the dual-cone inequality on random pairs and the
/// opposite-cone condition. Overlapping or gapped covers are rejected.
pub fn validate_cover(cover: &CoverSpec, pairs: usize, seed: u64) -> Result<CoverReport> {
    if cover.cones.len() != cover.duals.len() || cover.cones.len() < 2 {
        return config("cover needs matching cones and duals, at least two");
    }
    for c in cover.cones.iter().chain(&cover.duals) {
        c.check()?;
    }
    if cover.xi0.len() != cover.n {
        return config("xi0 has the wrong dimension");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (overlap, sum, tiling) = match cover.n {
        1 => {
            let signs: Vec<f64> = cover
                .cones
                .iter()
                .map(|c| match c {
                    Cone::Sign { s } => Ok(*s),
                    _ => config("N = 1 cover must use sign cones"),
                })
                .collect::<Result<_>>()?;
            let ok = signs.len() == 2 && signs[0] == -signs[1];
            (if ok { 0.0 } else { f64::INFINITY }, 2.0, ok)
        }
        2 => {
            let mut iv: Vec<(f64, f64)> = cover
                .cones
                .iter()
                .map(|c| match c {
                    Cone::Sector { lo, hi } => Ok((lo.rem_euclid(2.0 * PI), hi - lo)),
                    _ => config("N = 2 cover must use sectors"),
                })
                .collect::<Result<_>>()?;
            iv.sort_by(|a, b| a.0.total_cmp(&b.0));
            let sum: f64 = iv.iter().map(|x| x.1).sum();
            let mut overlap = 0.0;
            let mut gap = 0.0;
            for k in 0..iv.len() {
                let (s, w) = iv[k];
                let next = if k + 1 < iv.len() { iv[k + 1].0 } else { iv[0].0 + 2.0 * PI };
                let d = next - (s + w);
                if d < 0.0 {
                    overlap += -d;
                } else {
                    gap += d;
                }
            }
            let ok = overlap < 1e-12 && gap < 1e-12 && (sum - 2.0 * PI).abs() < 1e-12;
            (overlap, sum, ok)
        }
        _ => return config("cone covers support N ∈ {1, 2}"),
    };
    if !tiling {
        return rejected(format!("cones do not tile: overlap {overlap:.3e}, angular sum {sum:.6}"));
    }
    let mut margin = f64::INFINITY;
    for (cone, dual) in cover.cones.iter().zip(&cover.duals) {
        for _ in 0..pairs {
            let v = dual.sample(&mut rng);
            let x = cone.sample(&mut rng);
            let dot: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
            margin = margin.min(dot - cover.c);
        }
    }
    let mut opposite_ok = Vec::with_capacity(cover.duals.len());
    for (j, dual) in cover.duals.iter().enumerate() {
        let mut ok = true;
        for _ in 0..pairs {
            let y = dual.sample(&mut rng);
            let dot: f64 = y.iter().zip(&cover.xi0).map(|(a, b)| a * b).sum();
            ok &= dot < 0.0;
        }
        opposite_ok.push(j > 0 && ok);
    }
    Ok(CoverReport {
        tiling,
        overlap_measure: overlap,
        angular_sum: sum,
        xi0_interior: cover.cones[0].contains(&cover.xi0),
        acute: cover.cones.iter().all(|c| c.n_acute()),
        dual_pairs_per_cone: pairs,
        dual_margin: margin,
        dual_ok: margin >= -1e-12,
        opposite_ok,
    })
}

impl Cone {
    fn n_acute(&self) -> bool {
        matches!(self, Cone::Sign { .. }) || self.acute()
    }
}

/// `Δ(w, ξ) = det ∂ζ/∂ξ` for `ζ = ξ + i|ξ|w`, by explicit matrix determinant.
pub fn jacobian(w: &[Complex64], xi: &[f64]) -> Complex64 {
    let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n = xi.len();
    let m = |a: usize, b: usize| -> Complex64 {
        let id = if a == b { 1.0 } else { 0.0 };
        Complex64::new(id, 0.0) + I * w[a] * (xi[b] / r)
    };
    match n {
        1 => m(0, 0),
        2 => m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0),
        _ => C0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecompOptions {
    /// τ-ball radius; default ¼ of the distance from x₀ to the carrier boundary.
    pub a: Option<f64>,
    /// Used when the default rule gives zero.
    pub a_fallback: f64,
    pub tau_gl: usize,
    pub tau_panels: usize,
    /// Angular GL nodes per sector.
    pub theta_gl: usize,
    /// Radial panel width and GL order.
    pub r_panel: f64,
    pub r_gl: usize,
    /// Radial truncation for the fixed-node tables.
    pub r_max: f64,
    /// Tail terms more than this many e-folds below the peak count as decayed.
    pub drop_log: f64,
    /// GL order of the t-contour in the boundary chain.
    pub t_gl: usize,
    pub quad: QuadOptions,
}

impl Default for DecompOptions {
    fn default() -> Self {
        DecompOptions {
            a: None,
            a_fallback: 1.0 / 16.0,
            tau_gl: 8,
            tau_panels: 2,
            theta_gl: 16,
            r_panel: 1.0,
            r_gl: 8,
            r_max: 512.0,
            drop_log: 30.0,
            t_gl: 64,
            quad: QuadOptions { deform: false, panel_factor: 4.0, ..QuadOptions::default() },
        }
    }
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub mu: FunctionalExpr,
    pub p: Arc<PhasePolynomial>,
    pub cover: CoverSpec,
    pub x0: Vec<f64>,
    pub a: f64,
    pub opts: DecompOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PieceValue {
    pub value: Complex64,
    /// All kernel evaluations were inside the bracket cone and converged.
    pub valid: bool,
    /// The integrand had not decayed by the radial cap.
    pub divergent: bool,
}

impl Decomposition {
    pub fn new(mu: FunctionalExpr, p: Arc<PhasePolynomial>, cover: CoverSpec, x0: Vec<f64>, opts: DecompOptions) -> Result<Self> {
        if mu.dim() != p.n || cover.n != p.n || x0.len() != p.n {
            return config("dimension mismatch in decomposition setup");
        }
        let a = match opts.a {
            Some(a) if a > 0.0 && a.is_finite() => a,
            Some(_) => return config("a must be positive"),
            None => {
                let d = mu.carrier().map(|k| k.distance_to_boundary(&x0)).unwrap_or(0.0);
                if d > 0.0 {
                    d / 4.0
                } else {
                    opts.a_fallback
                }
            }
        };
        Ok(Decomposition { mu, p, cover, x0, a, opts })
    }

    fn cp_norm(&self) -> f64 {
        (2.0 * PI).powi(-(self.p.n as i32))
    }

    fn lambda(&self) -> f64 {
        self.p.n as f64 / self.p.degree() as f64
    }

    /// Quadrature nodes on the τ-ball.
    pub fn tau_nodes(&self) -> Vec<(Vec<f64>, f64)> {
        let o = &self.opts;
        match self.p.n {
            1 => {
                let mut out = Vec::new();
                let h = 2.0 * self.a / o.tau_panels as f64;
                for k in 0..o.tau_panels {
                    let s = self.x0[0] - self.a + h * k as f64;
                    out.extend(quad::gl_nodes(o.tau_gl, s, s + h).map(|(x, w)| (vec![x], w)));
                }
                out
            }
            _ => {
                let m = 2 * o.tau_gl;
                let mut out = Vec::new();
                for (rho, wr) in quad::gl_nodes(o.tau_gl, 0.0, self.a) {
                    for k in 0..m {
                        let ph = 2.0 * PI * k as f64 / m as f64;
                        out.push((
                            vec![self.x0[0] + rho * ph.cos(), self.x0[1] + rho * ph.sin()],
                            wr * rho * 2.0 * PI / m as f64,
                        ));
                    }
                }
                out
            }
        }
    }

    fn radial_nodes(&self, r_max: f64) -> Vec<(f64, f64)> {
        let panels = (r_max / self.opts.r_panel).ceil().max(1.0) as usize;
        let h = r_max / panels as f64;
        (0..panels).flat_map(|k| quad::gl_nodes(self.opts.r_gl, h * k as f64, h * (k + 1) as f64)).collect()
    }

    /// Angular nodes of a cone: (unit direction, weight); N = 1 gives the sign.
    fn angular_nodes(&self, cone: &Cone) -> Vec<(Vec<f64>, f64)> {
        match cone {
            Cone::Sign { s } => vec![(vec![*s], 1.0)],
            Cone::Sector { lo, hi } => {
                quad::gl_nodes(self.opts.theta_gl, *lo, *hi).map(|(t, w)| (vec![t.cos(), t.sin()], w)).collect()
            }
        }
    }

    /// Full-sphere angular nodes (trapezoid; spectrally accurate for periodic
    /// integrands).
    fn sphere_nodes(&self) -> Vec<(Vec<f64>, f64)> {
        match self.p.n {
            1 => vec![(vec![1.0], 1.0), (vec![-1.0], 1.0)],
            _ => {
                let m = self.opts.theta_gl * self.cover.cones.len();
                (0..m)
                    .map(|k| {
                        let t = 2.0 * PI * k as f64 / m as f64;
                        (vec![t.cos(), t.sin()], 2.0 * PI / m as f64)
                    })
                    .collect()
            }
        }
    }

    fn fbi_at(&self, tau: &[f64], zeta: &[Complex64]) -> Result<(Complex64, bool)> {
        let t: Vec<Complex64> = tau.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let c = fbi_complex(&self.mu, &self.p, &t, zeta, &self.opts.quad)?;
        Ok((c.value.to_complex(), c.valid))
    }

    /// The f_j integrand at (τ, ξ) for the point z (without dξ dτ weights).
    pub fn f_integrand(&self, tau: &[f64], xi: &[f64], z: &[Complex64]) -> Result<(Complex64, bool)> {
        let r = xi.iter().map(|x| x * x).sum::<f64>().sqrt();
        let w: Vec<Complex64> = z.iter().zip(tau).map(|(z, t)| z - t).collect();
        let zeta: Vec<Complex64> = xi.iter().zip(&w).map(|(x, w)| x + I * r * w).collect();
        let w2: Complex64 = w.iter().map(|v| v * v).sum();
        let lin: Complex64 = xi.iter().zip(&w).map(|(x, w)| w * x).sum();
        let pre = (I * lin - r * w2).exp();
        let (f, ok) = self.fbi_at(tau, &zeta)?;
        let b = bracket(&zeta);
        Ok((pre * f * b.powf(self.lambda()) * jacobian(&w, xi), ok && in_bracket_cone(&zeta)))
    }

    fn radial_cap(&self, z: &[Complex64], dirs: &[(Vec<f64>, f64)], taus: &[(Vec<f64>, f64)]) -> Result<(f64, bool)> {
        let probe = |r: f64| -> Result<f64> {
            let mut m = f64::NEG_INFINITY;
            for (t, _) in taus.iter().step_by((taus.len() / 8).max(1)) {
                for (d, _) in dirs.iter().step_by((dirs.len() / 8).max(1)) {
                    let xi: Vec<f64> = d.iter().map(|x| x * r).collect();
                    let (v, _) = self.f_integrand(t, &xi, z)?;
                    m = m.max(v.norm().ln() + (self.p.n as f64 - 1.0) * r.ln());
                }
            }
            Ok(m)
        };
        let mut peak = f64::NEG_INFINITY;
        let mut r = 1.0;
        while r <= self.opts.r_max {
            let v = probe(r)?;
            peak = peak.max(v);
            if v < peak - self.opts.drop_log && r >= 4.0 {
                return Ok((r, false));
            }
            r *= 2.0;
        }
        Ok((self.opts.r_max, true))
    }

    fn f_over(&self, dirs: &[(Vec<f64>, f64)], z: &[Complex64]) -> Result<PieceValue> {
        let taus = self.tau_nodes();
        let (rmax, divergent) = self.radial_cap(z, dirs, &taus)?;
        let rn = self.radial_nodes(rmax);
        let jac = self.p.n as i32 - 1;
        let parts: Vec<(Complex64, bool)> = taus
            .par_iter()
            .map(|(t, wt)| {
                let mut s = C0;
                let mut ok = true;
                for (d, wd) in dirs {
                    for &(r, wr) in &rn {
                        let xi: Vec<f64> = d.iter().map(|x| x * r).collect();
                        let (v, good) = self.f_integrand(t, &xi, z)?;
                        ok &= good;
                        s += v * (wt * wd * wr * r.powi(jac));
                    }
                }
                Ok((s, ok))
            })
            .collect::<Result<_>>()?;
        let value = parts.iter().map(|p| p.0).sum::<Complex64>() * self.cp_norm();
        Ok(PieceValue { value, valid: parts.iter().all(|p| p.1), divergent })
    }

    /// `f_j(z)` (j is 0-based: j = 0 is the cone containing ξ₀).
    pub fn piece_f(&self, j: usize, z: &[Complex64]) -> Result<PieceValue> {
        let cone = self.cover.cones.get(j).ok_or_else(|| crate::error::Error::Config("cone index out of range".into()))?;
        self.f_over(&self.angular_nodes(cone), z)
    }

    /// The same integrand over all of ℝ^N with a full-sphere rule.
    pub fn piece_f_full(&self, z: &[Complex64]) -> Result<PieceValue> {
        self.f_over(&self.sphere_nodes(), z)
    }

    /// `Σ_j f_j(z)` against the full-space integral.
    pub fn cone_split_additivity(&self, z: &[Complex64]) -> Result<AdditivityReport> {
        let mut sum = C0;
        let mut ok = true;
        for j in 0..self.cover.cones.len() {
            let v = self.piece_f(j, z)?;
            ok &= v.valid && !v.divergent;
            sum += v.value;
        }
        let full = self.piece_f_full(z)?;
        ok &= full.valid && !full.divergent;
        let residual = (sum - full.value).norm();
        Ok(AdditivityReport {
            sum_of_cones: sum,
            full: full.value,
            residual,
            relative: residual / full.value.norm().max(f64::MIN_POSITIVE),
            valid: ok,
        })
    }

    /// Undeformed τ-ball inversion integrand
    /// `(2π)^{−N}∫_{ball}∫ e^{iξ(x−τ)}𝓕(τ,ξ)|ξ|^{N/2k} dξ dτ` at real x.
    pub fn local_inversion(&self, x: &[f64]) -> Result<PieceValue> {
        let taus = self.tau_nodes();
        let dirs = self.sphere_nodes();
        let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let (rmax, divergent) = self.radial_cap(&z, &dirs, &taus)?;
        let rn = self.radial_nodes(rmax);
        let jac = self.p.n as i32 - 1;
        let lam = self.lambda();
        let parts: Vec<(Complex64, bool)> = taus
            .par_iter()
            .map(|(t, wt)| {
                let mut s = C0;
                let mut ok = true;
                for (d, wd) in &dirs {
                    for &(r, wr) in &rn {
                        let xi: Vec<f64> = d.iter().map(|v| v * r).collect();
                        let c = fbi(&self.mu, &self.p, t, &xi, &self.opts.quad)?;
                        ok &= c.valid;
                        let ph: f64 = xi.iter().zip(x.iter().zip(t)).map(|(a, (x, t))| a * (x - t)).sum();
                        s += Complex64::new(0.0, ph).exp() * c.value.to_complex() * (r.powf(lam) * wt * wd * wr * r.powi(jac));
                    }
                }
                Ok((s, ok))
            })
            .collect::<Result<_>>()?;
        Ok(PieceValue {
            value: parts.iter().map(|p| p.0).sum::<Complex64>() * self.cp_norm(),
            valid: parts.iter().all(|p| p.1),
            divergent,
        })
    }

    /// Precompute the fixed-node table for `F₁` (independent of z, so the
    /// quadrature is itself an entire function of z).
    pub fn f1_table(&self) -> Result<F1Table> {
        let taus = self.tau_nodes();
        let dirs = self.angular_nodes(&self.cover.cones[0]);
        let rn = self.radial_nodes(self.opts.r_max);
        let jac = self.p.n as i32 - 1;
        let lam = self.lambda();
        let mut nodes = Vec::new();
        for (t, wt) in &taus {
            for (d, wd) in &dirs {
                for &(r, wr) in &rn {
                    nodes.push((t.clone(), d.iter().map(|v| v * r).collect::<Vec<f64>>(), wt * wd * wr * r.powi(jac) * r.powf(lam)));
                }
            }
        }
        let vals: Vec<(Complex64, bool)> = nodes
            .par_iter()
            .map(|(t, xi, w)| {
                let c = fbi(&self.mu, &self.p, t, xi, &self.opts.quad)?;
                Ok((c.value.to_complex() * *w, c.valid))
            })
            .collect::<Result<_>>()?;
        let r_tail = rn.last().map(|x| x.0).unwrap_or(0.0) - self.opts.r_panel;
        Ok(F1Table {
            tau: nodes.iter().map(|n| n.0.clone()).collect(),
            xi: nodes.iter().map(|n| n.1.clone()).collect(),
            weighted: vals.iter().map(|v| v.0).collect(),
            valid: vals.iter().all(|v| v.1),
            r_tail,
            norm: self.cp_norm(),
            drop_log: self.opts.drop_log,
        })
    }

    /// `R_j(z)`: the integral over the chain `[0,1] × (∂C₁ ∩ C_j)`.
    /// N = 1 has no boundary rays, so every R_j vanishes.
    pub fn piece_r(&self, j: usize, z: &[Complex64]) -> Result<PieceValue> {
        if self.p.n == 1 || j == 0 {
            return Ok(PieceValue { value: C0, valid: true, divergent: false });
        }
        let l = self.cover.cones.len();
        let Cone::Sector { lo, hi } = self.cover.cones[0] else { return config("N = 2 cover must use sectors") };
        let mut rays = Vec::new();
        if j == 1 {
            rays.push((hi, -1.0));
        }
        if j == l - 1 {
            rays.push((lo, 1.0));
        }
        let mut total = PieceValue { value: C0, valid: true, divergent: false };
        for (theta, sign) in rays {
            let v = self.ray_chain(&[(theta, sign)], z, self.opts.t_gl, self.opts.r_gl)?;
            total.value += v.value;
            total.valid &= v.valid;
            total.divergent |= v.divergent;
        }
        Ok(total)
    }

    /// `R₁` computed directly on the whole boundary chain of C₁ with an
    /// independent node set.
    pub fn piece_r1(&self, z: &[Complex64]) -> Result<PieceValue> {
        if self.p.n == 1 {
            return Ok(PieceValue { value: C0, valid: true, divergent: false });
        }
        let Cone::Sector { lo, hi } = self.cover.cones[0] else { return config("N = 2 cover must use sectors") };
        self.ray_chain(&[(lo, 1.0), (hi, -1.0)], z, self.opts.t_gl / 2 + 3, self.opts.r_gl + 4)
    }

    fn ray_chain(&self, rays: &[(f64, f64)], z: &[Complex64], t_gl: usize, r_gl: usize) -> Result<PieceValue> {
        let taus = self.tau_nodes();
        let lam = self.lambda();
        let integrand = |tau: &[f64], e: &[f64], t: f64, s: f64| -> Result<(Complex64, bool)> {
            let w: Vec<Complex64> = z.iter().zip(tau).map(|(z, t)| z - t).collect();
            let zeta: Vec<Complex64> = e.iter().zip(&w).map(|(e, w)| s * e + I * (t * s) * w).collect();
            let lin: Complex64 = zeta.iter().zip(&w).map(|(a, b)| a * b).sum();
            let (f, ok) = self.fbi_at(tau, &zeta)?;
            let form = I * s * (w[0] * e[1] - w[1] * e[0]);
            Ok(((I * lin).exp() * f * bracket(&zeta).powf(lam) * form, ok && in_bracket_cone(&zeta)))
        };
        // radial cap from the t = 1 end, where the decay is weakest
        let mut cap = self.opts.r_max;
        let mut divergent = true;
        let mut peak = f64::NEG_INFINITY;
        let mut r = 1.0;
        while r <= self.opts.r_max {
            let mut m = f64::NEG_INFINITY;
            for &(th, _) in rays {
                let e = [th.cos(), th.sin()];
                for tt in [0.0, 0.5, 1.0] {
                    for (tau, _) in taus.iter().step_by((taus.len() / 8).max(1)) {
                        m = m.max(integrand(tau, &e, tt, r)?.0.norm().ln());
                    }
                }
            }
            peak = peak.max(m);
            if m < peak - self.opts.drop_log && r >= 4.0 {
                cap = r;
                divergent = false;
                break;
            }
            r *= 2.0;
        }
        let panels = (cap / self.opts.r_panel).ceil().max(1.0) as usize;
        let h = cap / panels as f64;
        let rn: Vec<(f64, f64)> = (0..panels).flat_map(|k| quad::gl_nodes(r_gl, h * k as f64, h * (k + 1) as f64)).collect();
        let tn: Vec<(f64, f64)> = quad::gl_nodes(t_gl, 0.0, 1.0).collect();
        let parts: Vec<(Complex64, bool)> = taus
            .par_iter()
            .map(|(tau, wt)| {
                let mut acc = C0;
                let mut ok = true;
                for &(th, sign) in rays {
                    let e = [th.cos(), th.sin()];
                    for &(t, wtt) in &tn {
                        for &(s, ws) in &rn {
                            let (v, good) = integrand(tau, &e, t, s)?;
                            ok &= good;
                            acc += v * (sign * wt * wtt * ws);
                        }
                    }
                }
                Ok((acc, ok))
            })
            .collect::<Result<_>>()?;
        Ok(PieceValue {
            value: parts.iter().map(|p| p.0).sum::<Complex64>() * self.cp_norm(),
            valid: parts.iter().all(|p| p.1),
            divergent,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdditivityReport {
    pub sum_of_cones: Complex64,
    pub full: Complex64,
    pub residual: f64,
    pub relative: f64,
    pub valid: bool,
}

/// Fixed-node rendering of `F₁`: a finite sum of exponentials in z.
#[derive(Debug, Clone)]
pub struct F1Table {
    tau: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    weighted: Vec<Complex64>,
    valid: bool,
    r_tail: f64,
    norm: f64,
    drop_log: f64,
}

impl F1Table {
    pub fn eval(&self, z: &[Complex64]) -> PieceValue {
        let mut s = C0;
        let mut peak = f64::NEG_INFINITY;
        let mut tail = f64::NEG_INFINITY;
        for ((t, xi), w) in self.tau.iter().zip(&self.xi).zip(&self.weighted) {
            let ph: Complex64 = xi.iter().zip(z.iter().zip(t)).map(|(a, (z, t))| (z - t) * a).sum();
            let v = (I * ph).exp() * w;
            let lv = v.norm().ln();
            peak = peak.max(lv);
            if xi.iter().map(|x| x * x).sum::<f64>().sqrt() >= self.r_tail {
                tail = tail.max(lv);
            }
            s += v;
        }
        let divergent = !s.is_finite() || tail > peak - self.drop_log;
        PieceValue { value: s * self.norm, valid: self.valid && s.is_finite(), divergent }
    }
}

/// `½(∂_x + i∂_y)F` by central differences of step h: second order in h for
/// holomorphic F (the leading term is h²F‴/6).
pub fn cauchy_riemann_residual(f: &dyn Fn(Complex64) -> Complex64, z: Complex64, h: f64) -> f64 {
    let dx = (f(z + h) - f(z - h)) / (2.0 * h);
    let dy = (f(z + I * h) - f(z - I * h)) / (2.0 * h);
    (0.5 * (dx + I * dy)).norm()
}
