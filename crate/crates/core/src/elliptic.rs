//! Principal symbols, characteristic sets, the parametrix remainder probe
//! and the audit `WF(μ) ⊂ WF(Pμ) ∪ Char P` on sampled covectors.
//!
//! Convention: `D_j = −i∂_j` and the symbol of `D^α` is `ξ^α`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{wavefront, ClassifierConfig, ConditionKind, Covector, SheafCondition};
use crate::cones::Cone;
use crate::error::{config, numeric, rejected, Result};
use crate::fbi::{GridSpec, QuadOptions};
use crate::fit;
use crate::functional::{explicit_image_1d, CompactBox, FunctionalExpr};
use crate::operator::{Coef, DifferentialOperator};
use crate::phase::PhasePolynomial;
use crate::symbol::{parametrix_residual, parametrix_symbol, SymbolExpansion};

pub const J_MAX: usize = 6;

pub fn principal_symbol(op: &DifferentialOperator, x: &[Complex64], xi: &[f64]) -> Complex64 {
    op.terms
        .iter()
        .filter(|t| DifferentialOperator::order_of(t) == op.m)
        .map(|t| op.coef_at(t, x) * t.alpha.iter().zip(xi).map(|(&a, &v)| v.powi(a as i32)).product::<f64>())
        .sum()
}

/// Euclidean norm of the top-order coefficients at x.
pub fn principal_coefficient_norm(op: &DifferentialOperator, x: &[Complex64]) -> f64 {
    op.terms
        .iter()
        .filter(|t| DifferentialOperator::order_of(t) == op.m)
        .map(|t| op.coef_at(t, x).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `|p_m(x, θ)| / ‖a(x)‖` on a unit direction.
pub fn normalized_principal(op: &DifferentialOperator, x: &[f64], theta: &[f64]) -> f64 {
    let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let nrm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    let th: Vec<f64> = theta.iter().map(|v| v / nrm).collect();
    let c = principal_coefficient_norm(op, &z);
    if c == 0.0 {
        return 0.0;
    }
    principal_symbol(op, &z, &th).norm() / c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CharPoint {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub normalized: f64,
}

pub fn char_set_sample(op: &DifferentialOperator, x_grid: &[Vec<f64>], sphere: &[Vec<f64>], tol: f64) -> Result<Vec<CharPoint>> {
    if x_grid.is_empty() || sphere.is_empty() {
        return config("characteristic-set sampling needs nonempty grids");
    }
    let mut out = Vec::new();
    for x in x_grid {
        for th in sphere {
            let v = normalized_principal(op, x, th);
            if v < tol {
                out.push(CharPoint { x: x.clone(), theta: th.clone(), normalized: v });
            }
        }
    }
    Ok(out)
}

/// Equally spaced unit directions (both signs for N = 1).
pub fn sphere_grid(n: usize, count: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        _ => (0..count)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
    }
}

/// Box sample: `per_side` points per coordinate including the faces.
pub fn box_grid(b: &CompactBox, per_side: usize) -> Vec<Vec<f64>> {
    let per = per_side.max(2);
    let axis = |s: [f64; 2]| -> Vec<f64> { (0..per).map(|k| s[0] + (s[1] - s[0]) * k as f64 / (per - 1) as f64).collect() };
    match b.dim() {
        1 => axis(b.0[0]).into_iter().map(|x| vec![x]).collect(),
        _ => {
            let a = axis(b.0[0]);
            let c = axis(b.0[1]);
            a.iter().flat_map(|&x| c.iter().map(move |&y| vec![x, y])).collect()
        }
    }
}

/// `count` directions spread over the closed cone, endpoints included.
fn cone_directions(cone: &Cone, count: usize) -> Vec<Vec<f64>> {
    match cone {
        Cone::Sign { s } => vec![vec![*s]],
        Cone::Sector { lo, hi } => (0..count.max(2))
            .map(|k| {
                let t = lo + (hi - lo) * k as f64 / (count.max(2) - 1) as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParametrixOptions {
    pub radii: Vec<f64>,
    pub points_per_side: usize,
    pub directions: usize,
    /// Normalised principal-symbol threshold for ellipticity on box × cone.
    pub char_tol: f64,
}

impl Default for ParametrixOptions {
    fn default() -> Self {
        ParametrixOptions {
            radii: (0..=12).map(|k| 64.0 * 2f64.powf(k as f64 / 2.0)).collect(),
            points_per_side: 3,
            directions: 3,
            char_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRay {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub radii: Vec<f64>,
    pub residual: Vec<f64>,
    /// Log-log slope of the residual; `None` when it vanishes to roundoff.
    pub slope: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParametrixReport {
    #[serde(rename = "J")]
    pub j: usize,
    pub rays: Vec<ProbeRay>,
    pub max_residual: f64,
    pub max_slope: Option<f64>,
    #[serde(skip)]
    pub symbol: SymbolExpansion,
}

/// Floor under which a residual counts as exact.
const EXACT: f64 = 1e-14;

/// Build `a_J` and probe `|p ∘ a_J − 1|` along rays of the cone over the box.
pub fn parametrix(op: &Arc<DifferentialOperator>, j: usize, cone: &Cone, bx: &CompactBox, opts: &ParametrixOptions) -> Result<ParametrixReport> {
    if j > J_MAX {
        return config(format!("J = {j} exceeds J_max = {J_MAX}"));
    }
    if bx.dim() != op.n {
        return config("box dimension does not match the operator");
    }
    let pts = box_grid(bx, opts.points_per_side);
    let dirs = cone_directions(cone, opts.directions);
    let ch = char_set_sample(op, &pts, &cone_directions(cone, 257), opts.char_tol)?;
    if let Some(c) = ch.first() {
        return rejected(format!("operator is characteristic at x = {:?}, θ = {:?}", c.x, c.theta));
    }
    let a = parametrix_symbol(op, j);
    let rays: Vec<(Vec<f64>, Vec<f64>)> = pts.iter().flat_map(|x| dirs.iter().map(move |d| (x.clone(), d.clone()))).collect();
    let probes: Vec<ProbeRay> = rays
        .par_iter()
        .map(|(x, th)| {
            let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            let residual: Vec<f64> = opts.radii.iter().map(|&r| parametrix_residual(op, &a, &z, th, r)).collect::<Result<_>>()?;
            let pts: Vec<(f64, f64)> =
                opts.radii.iter().zip(&residual).filter(|(_, &v)| v > EXACT).map(|(r, v)| (r.ln(), v.ln())).collect();
            let slope = if pts.len() >= 2 { Some(fit::linear(&pts).0) } else { None };
            Ok(ProbeRay { x: x.clone(), theta: th.clone(), radii: opts.radii.clone(), residual, slope })
        })
        .collect::<Result<_>>()?;
    let max_residual = probes.iter().flat_map(|p| p.residual.iter().copied()).fold(0.0, f64::max);
    if !max_residual.is_finite() {
        return numeric("parametrix probe diverged");
    }
    let max_slope = probes.iter().filter_map(|p| p.slope).reduce(f64::max);
    Ok(ParametrixReport { j, rays: probes, max_residual, max_slope, symbol: a })
}

/// How `Pμ` was represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageForm {
    /// Classical derivative as a density plus boundary atoms.
    ExplicitBoundaryAtoms,
    /// `h ↦ μ(Pᵗh)`.
    Transpose,
}

/// `Pμ`: explicit boundary atoms for one-dimensional polynomial densities,
/// the transpose action otherwise.
pub fn image_of(op: &Arc<DifferentialOperator>, mu: &FunctionalExpr) -> Result<(FunctionalExpr, ImageForm)> {
    if op.n != mu.dim() {
        return config("operator and functional dimensions differ");
    }
    if let FunctionalExpr::Atom(f) = mu {
        let poly_coefs = op.terms.iter().all(|t| !matches!(t.coef, Coef::Exp { .. }));
        if op.n == 1 && poly_coefs {
            if let Ok(e) = explicit_image_1d(op, f) {
                return Ok((e, ImageForm::ExplicitBoundaryAtoms));
            }
        }
    }
    Ok((FunctionalExpr::image(op.clone(), mu.clone()), ImageForm::Transpose))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditOptions {
    /// Angular tolerance around Char P, degrees.
    pub angle_tol_deg: f64,
    pub char_tol: f64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions { angle_tol_deg: 10.0, char_tol: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionAudit {
    pub condition: SheafCondition,
    pub wf_mu: Vec<Covector>,
    pub wf_image: Vec<Covector>,
    /// In WF(μ) but neither in WF(Pμ) nor near Char P.
    pub flagged: Vec<Covector>,
    /// In WF(μ) and near Char P only.
    pub explained_by_char: Vec<Covector>,
    /// Inconclusive on either side; not decided.
    pub undecided: Vec<Covector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionReport {
    pub image_form: ImageForm,
    pub options: AuditOptions,
    pub audits: Vec<ConditionAudit>,
}

impl InclusionReport {
    pub fn consistent(&self) -> bool {
        self.audits.iter().all(|a| a.flagged.is_empty())
    }
}

/// Within `angle_tol` of a direction where the normalised principal symbol
/// drops below `char_tol`.
pub fn near_char(op: &DifferentialOperator, x: &[f64], theta: &[f64], opts: &AuditOptions) -> bool {
    match theta.len() {
        1 => normalized_principal(op, x, theta) < opts.char_tol,
        _ => {
            let t0 = theta[1].atan2(theta[0]);
            let w = opts.angle_tol_deg.to_radians();
            let steps = 400;
            (0..=steps).any(|k| {
                let t = t0 - w + 2.0 * w * k as f64 / steps as f64;
                normalized_principal(op, x, &[t.cos(), t.sin()]) < opts.char_tol
            })
        }
    }
}

/// Run the classifier on μ and Pμ over the same grid and report covectors
/// of WF(μ) outside WF(Pμ) ∪ Char P.
#[allow(clippy::too_many_arguments)]
pub fn elliptic_wf_audit(
    op: &Arc<DifferentialOperator>,
    mu: &FunctionalExpr,
    p: &Arc<PhasePolynomial>,
    spec: &GridSpec,
    conditions: &[SheafCondition],
    q: &QuadOptions,
    cfg: &ClassifierConfig,
    opts: &AuditOptions,
) -> Result<InclusionReport> {
    let (image, form) = image_of(op, mu)?;
    let (_, wf_mu) = wavefront(mu, p, spec, conditions, q, cfg)?;
    let (_, wf_img) = wavefront(&image, p, spec, conditions, q, cfg)?;
    let mut audits = Vec::new();
    for c in conditions {
        let kind: ConditionKind = c.kind;
        let (Some(a), Some(b)) = (wf_mu.summary(kind), wf_img.summary(kind)) else {
            return numeric("missing condition summary");
        };
        let mut audit = ConditionAudit {
            condition: c.clone(),
            wf_mu: a.wavefront.clone(),
            wf_image: b.wavefront.clone(),
            flagged: vec![],
            explained_by_char: vec![],
            undecided: a.inconclusive.clone(),
        };
        for cv in &a.wavefront {
            if b.wavefront.contains(cv) {
                continue;
            }
            if b.inconclusive.contains(cv) {
                audit.undecided.push(cv.clone());
            } else if near_char(op, &cv.x, &cv.theta, opts) {
                audit.explained_by_char.push(cv.clone());
            } else {
                audit.flagged.push(cv.clone());
            }
        }
        audits.push(audit);
    }
    Ok(InclusionReport { image_form: form, options: opts.clone(), audits })
}
