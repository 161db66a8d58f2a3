//! Directional decay classification of FBI sample rays and wave-front
//! estimates.
//!
//! Every quantified condition gets a finite surrogate on the upper window of
//! the ray. The rules are built so that the inclusions between the sheaves
//! are respected by construction:
//!
//! * exponential (`C_omega`) and Denjoy–Carleman (`E_M_*`) decay also require
//!   the polynomial test at `q_max`, so both imply `C_inf`;
//! * `E_M_roumieu` accepts rays that pass the exponential test, since
//!   `M(t)/t → 0` makes `e^{−cr}` dominate every `e^{−M(c'r)}`;
//! * ultradistribution growth tests accept tempered rays outright, since
//!   `M(t)/log t → ∞` makes every `e^{M(Lr)}` dominate polynomial growth.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, rejected, Result};
use crate::fbi::{fbi_grid, GridSpec, QuadOptions, Ray, SampleGrid};
use crate::fit;
use crate::functional::{CompactBox, FunctionalExpr};
use crate::phase::PhasePolynomial;
use crate::sequences::{quasianalytic_test, QaVerdict, RegularSequence, SequenceDescriptor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionKind {
    #[serde(rename = "C_omega", alias = "Cω")]
    COmega,
    #[serde(rename = "C_inf", alias = "C∞")]
    CInf,
    #[serde(rename = "E_M_roumieu")]
    EmRoumieu,
    #[serde(rename = "E_M_beurling")]
    EmBeurling,
    #[serde(rename = "Dprime")]
    Dprime,
    #[serde(rename = "Dprime_M_roumieu")]
    DprimeMRoumieu,
    #[serde(rename = "Dprime_M_beurling")]
    DprimeMBeurling,
}

impl ConditionKind {
    pub fn needs_sequence(self) -> bool {
        matches!(
            self,
            ConditionKind::EmRoumieu | ConditionKind::EmBeurling | ConditionKind::DprimeMRoumieu | ConditionKind::DprimeMBeurling
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            ConditionKind::COmega => "C_omega",
            ConditionKind::CInf => "C_inf",
            ConditionKind::EmRoumieu => "E_M_roumieu",
            ConditionKind::EmBeurling => "E_M_beurling",
            ConditionKind::Dprime => "Dprime",
            ConditionKind::DprimeMRoumieu => "Dprime_M_roumieu",
            ConditionKind::DprimeMBeurling => "Dprime_M_beurling",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheafCondition {
    pub kind: ConditionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceDescriptor>,
}

impl SheafCondition {
    pub fn plain(kind: ConditionKind) -> SheafCondition {
        SheafCondition { kind, sequence: None }
    }

    pub fn with_sequence(kind: ConditionKind, s: SequenceDescriptor) -> SheafCondition {
        SheafCondition { kind, sequence: Some(s) }
    }

    /// Check the sequence requirement and build it.
    pub fn resolve(&self) -> Result<ResolvedCondition> {
        match (&self.sequence, self.kind.needs_sequence()) {
            (None, false) => Ok(ResolvedCondition { cond: self.clone(), seq: None }),
            (Some(_), false) => config(format!("{} takes no sequence", self.kind.name())),
            (None, true) => config(format!("{} requires a sequence", self.kind.name())),
            (Some(d), true) => {
                let seq = d.build()?;
                if !seq.is_regular() {
                    return rejected(format!("sequence {} is not regular", seq.label));
                }
                if matches!(self.kind, ConditionKind::DprimeMRoumieu | ConditionKind::DprimeMBeurling) {
                    let qa = quasianalytic_test(&seq, 0.05)?;
                    if qa.verdict != QaVerdict::NonQuasianalytic {
                        return rejected(format!("ultradistributions need a non-quasianalytic sequence ({:?})", qa.verdict));
                    }
                }
                Ok(ResolvedCondition { cond: self.clone(), seq: Some(seq) })
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ResolvedCondition {
    pub cond: SheafCondition,
    pub seq: Option<RegularSequence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub c2_min: f64,
    pub q_max: f64,
    pub q_cap: f64,
    /// Constant grids are `{2^{−j}}_{j=0..grid_depth}`.
    pub grid_depth: u32,
    /// Fraction of the valid radii (from the top) used for fits.
    pub window_fraction: f64,
    /// Exponential fit accepted when rms ≤ resid_abs + resid_rel · (fitted drop).
    pub resid_abs: f64,
    pub resid_rel: f64,
    /// Slack (nats) in the envelope tests.
    pub slack: f64,
    pub min_samples: usize,
    pub min_ratio: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            c2_min: 1e-3,
            q_max: 8.0,
            q_cap: 12.0,
            grid_depth: 8,
            window_fraction: 0.5,
            resid_abs: 0.25,
            resid_rel: 0.1,
            slack: 0.5,
            min_samples: 8,
            min_ratio: 16.0,
        }
    }
}

impl ClassifierConfig {
    fn constant_grid(&self) -> Vec<f64> {
        (0..=self.grid_depth).map(|j| 2f64.powi(-(j as i32))).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holds {
    Yes,
    No,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub r_range: [f64; 2],
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covector {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityVerdict {
    pub covector: Covector,
    pub condition: SheafCondition,
    pub holds: Holds,
    pub fit: Fit,
    pub caps: BTreeMap<String, f64>,
}

/// Statistics of the fitting window shared by all rules.
struct Window {
    r: Vec<f64>,
    l: Vec<f64>,
    loglog: (f64, f64, f64),
    linear: (f64, f64, f64),
    identically_zero: bool,
}

fn window(ray: &Ray, cfg: &ClassifierConfig) -> Option<Window> {
    let mut pts: Vec<(f64, f64)> = ray
        .r
        .iter()
        .zip(&ray.log_abs)
        .zip(&ray.valid)
        .filter(|(_, v)| **v)
        .map(|((r, l), _)| (*r, *l))
        .collect();
    if pts.len() < cfg.min_samples || pts[pts.len() - 1].0 < cfg.min_ratio * pts[0].0 {
        return None;
    }
    if pts.iter().all(|p| p.1 == f64::NEG_INFINITY) {
        return Some(Window { r: vec![], l: vec![], loglog: (0.0, 0.0, 0.0), linear: (0.0, 0.0, 0.0), identically_zero: true });
    }
    if pts.iter().any(|p| !p.1.is_finite()) {
        return None;
    }
    let keep = ((pts.len() as f64) * cfg.window_fraction).ceil().max(4.0) as usize;
    let pts = pts.split_off(pts.len() - keep.min(pts.len()));
    let ll: Vec<(f64, f64)> = pts.iter().map(|p| (p.0.ln(), p.1)).collect();
    let (s1, i1) = fit::linear(&ll);
    let (s2, i2) = fit::linear(&pts);
    Some(Window {
        r: pts.iter().map(|p| p.0).collect(),
        l: pts.iter().map(|p| p.1).collect(),
        loglog: (s1, i1, fit::rms_residual(&ll, s1, i1)),
        linear: (s2, i2, fit::rms_residual(&pts, s2, i2)),
        identically_zero: false,
    })
}

impl Window {
    fn poly_decay(&self, cfg: &ClassifierConfig) -> bool {
        self.loglog.0 <= -cfg.q_max
    }

    fn tempered(&self, cfg: &ClassifierConfig) -> bool {
        self.loglog.0 <= cfg.q_cap
    }

    fn exponential(&self, cfg: &ClassifierConfig) -> bool {
        let c2 = -self.linear.0;
        let drop = c2 * (self.r[self.r.len() - 1] - self.r[0]);
        c2 >= cfg.c2_min && self.linear.2 <= cfg.resid_abs + cfg.resid_rel * drop && self.poly_decay(cfg)
    }

    /// `L(r) − L(r_a) ≤ sign·(M(c r) − M(c r_a)) + slack` on the window.
    fn envelope(&self, seq: &RegularSequence, c: f64, sign: f64, slack: f64) -> Result<bool> {
        let a = seq.associated_value(c * self.r[0])?;
        for (r, l) in self.r.iter().zip(&self.l) {
            let m = seq.associated_value(c * r)?;
            if l - self.l[0] > sign * (m - a) + slack {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn yes_no(b: bool) -> Holds {
    if b {
        Holds::Yes
    } else {
        Holds::No
    }
}

/// Classify one ray against one condition.
pub fn classify_direction(
    ray: &Ray,
    covector: Covector,
    cond: &ResolvedCondition,
    cfg: &ClassifierConfig,
) -> Result<RegularityVerdict> {
    let mut caps = BTreeMap::new();
    caps.insert("c2_min".to_string(), cfg.c2_min);
    caps.insert("q_max".to_string(), cfg.q_max);
    caps.insert("q_cap".to_string(), cfg.q_cap);
    caps.insert("constant_grid_min".to_string(), 2f64.powi(-(cfg.grid_depth as i32)));
    caps.insert("window_fraction".to_string(), cfg.window_fraction);
    let Some(w) = window(ray, cfg) else {
        return Ok(RegularityVerdict {
            covector,
            condition: cond.cond.clone(),
            holds: Holds::Inconclusive,
            fit: Fit { model: "none".into(), params: BTreeMap::new(), r_range: [f64::NAN, f64::NAN], residual: f64::NAN },
            caps,
        });
    };
    caps.insert("r_max".to_string(), *ray.r.last().unwrap_or(&f64::NAN));
    if w.identically_zero {
        return Ok(RegularityVerdict {
            covector,
            condition: cond.cond.clone(),
            holds: Holds::Yes,
            fit: Fit { model: "zero".into(), params: BTreeMap::new(), r_range: [ray.r[0], *ray.r.last().unwrap()], residual: 0.0 },
            caps,
        });
    }
    let r_range = [w.r[0], w.r[w.r.len() - 1]];
    let mut params = BTreeMap::new();
    let grid = cfg.constant_grid();
    let (holds, model, residual) = match cond.cond.kind {
        ConditionKind::COmega => {
            params.insert("c1".into(), w.linear.1.exp());
            params.insert("c2".into(), -w.linear.0);
            (yes_no(w.exponential(cfg)), "log|F| = log c1 - c2 r", w.linear.2)
        }
        ConditionKind::CInf | ConditionKind::Dprime => {
            params.insert("C".into(), w.loglog.1.exp());
            params.insert("q".into(), -w.loglog.0);
            let ok = if cond.cond.kind == ConditionKind::CInf { w.poly_decay(cfg) } else { w.tempered(cfg) };
            (yes_no(ok), "log|F| = log C - q log r", w.loglog.2)
        }
        ConditionKind::EmRoumieu | ConditionKind::EmBeurling => {
            let seq = cond.seq.as_ref().expect("resolved");
            let mut passing = Vec::new();
            for &c in &grid {
                if w.envelope(seq, c, -1.0, cfg.slack)? {
                    passing.push(c);
                }
            }
            let ok = if cond.cond.kind == ConditionKind::EmRoumieu {
                w.poly_decay(cfg) && (!passing.is_empty() || w.exponential(cfg))
            } else {
                w.poly_decay(cfg) && passing.len() == grid.len()
            };
            if let Some(c) = passing.first() {
                params.insert("c".into(), *c);
            }
            params.insert("q".into(), -w.loglog.0);
            (yes_no(ok), "log|F| <= log C - M(c r)", w.loglog.2)
        }
        ConditionKind::DprimeMRoumieu | ConditionKind::DprimeMBeurling => {
            let seq = cond.seq.as_ref().expect("resolved");
            let mut passing = Vec::new();
            for &c in &grid {
                if w.envelope(seq, c, 1.0, cfg.slack)? {
                    passing.push(c);
                }
            }
            let ok = w.tempered(cfg)
                || if cond.cond.kind == ConditionKind::DprimeMRoumieu {
                    passing.len() == grid.len()
                } else {
                    !passing.is_empty()
                };
            if let Some(c) = passing.last() {
                params.insert("L".into(), *c);
            }
            params.insert("q".into(), -w.loglog.0);
            (yes_no(ok), "log|F| <= log C + M(L r)", w.loglog.2)
        }
    };
    Ok(RegularityVerdict { covector, condition: cond.cond.clone(), holds, fit: Fit { model: model.into(), params, r_range, residual }, caps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: SheafCondition,
    /// Covectors where the condition fails: the estimated wave-front set.
    pub wavefront: Vec<Covector>,
    pub inconclusive: Vec<Covector>,
    /// All covectors pass: empty estimated wave-front set, hence regular on
    /// the sampled region.
    pub globally_regular: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WavefrontEstimate {
    pub base_points: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
    pub verdicts: Vec<RegularityVerdict>,
    pub summaries: Vec<ConditionSummary>,
}

impl WavefrontEstimate {
    pub fn verdict(&self, b: usize, d: usize, kind: ConditionKind) -> Option<&RegularityVerdict> {
        self.verdicts.iter().find(|v| {
            v.condition.kind == kind && v.covector.x == self.base_points[b] && v.covector.theta == self.directions[d]
        })
    }

    pub fn summary(&self, kind: ConditionKind) -> Option<&ConditionSummary> {
        self.summaries.iter().find(|s| s.condition.kind == kind)
    }
}

/// Classify every ray of a grid against every condition.
pub fn classify_grid(grid: &SampleGrid, conditions: &[SheafCondition], cfg: &ClassifierConfig) -> Result<WavefrontEstimate> {
    let resolved: Vec<ResolvedCondition> = conditions.iter().map(|c| c.resolve()).collect::<Result<_>>()?;
    let nd = grid.directions.len();
    let rays: Vec<(usize, usize)> = (0..grid.base_points.len()).flat_map(|b| (0..nd).map(move |d| (b, d))).collect();
    let per_ray: Vec<Vec<RegularityVerdict>> = rays
        .par_iter()
        .map(|&(b, d)| {
            let ray = grid.ray(b, d);
            resolved
                .iter()
                .map(|c| {
                    let cov = Covector { x: grid.base_points[b].clone(), theta: grid.directions[d].clone() };
                    classify_direction(&ray, cov, c, cfg)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let verdicts: Vec<RegularityVerdict> = per_ray.into_iter().flatten().collect();
    let summaries = conditions
        .iter()
        .map(|c| {
            let mine: Vec<&RegularityVerdict> = verdicts.iter().filter(|v| v.condition == *c).collect();
            let wavefront: Vec<Covector> = mine.iter().filter(|v| v.holds == Holds::No).map(|v| v.covector.clone()).collect();
            let inconclusive: Vec<Covector> =
                mine.iter().filter(|v| v.holds == Holds::Inconclusive).map(|v| v.covector.clone()).collect();
            ConditionSummary {
                condition: c.clone(),
                globally_regular: wavefront.is_empty() && inconclusive.is_empty(),
                wavefront,
                inconclusive,
            }
        })
        .collect();
    Ok(WavefrontEstimate { base_points: grid.base_points.clone(), directions: grid.directions.clone(), verdicts, summaries })
}

/// Sample the transform and classify.
pub fn wavefront(
    mu: &FunctionalExpr,
    p: &Arc<PhasePolynomial>,
    spec: &GridSpec,
    conditions: &[SheafCondition],
    q: &QuadOptions,
    cfg: &ClassifierConfig,
) -> Result<(SampleGrid, WavefrontEstimate)> {
    let grid = fbi_grid(mu, p, spec, q)?;
    let wf = classify_grid(&grid, conditions, cfg)?;
    Ok((grid, wf))
}

/// Implications that must hold between verdicts on the same ray:
/// stronger ⇒ weaker.
pub const LATTICE: [(ConditionKind, ConditionKind); 6] = [
    (ConditionKind::COmega, ConditionKind::EmRoumieu),
    (ConditionKind::EmRoumieu, ConditionKind::CInf),
    (ConditionKind::CInf, ConditionKind::Dprime),
    (ConditionKind::Dprime, ConditionKind::DprimeMRoumieu),
    (ConditionKind::EmBeurling, ConditionKind::EmRoumieu),
    (ConditionKind::DprimeMRoumieu, ConditionKind::DprimeMBeurling),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeViolation {
    pub covector: Covector,
    pub stronger: ConditionKind,
    pub weaker: ConditionKind,
}

/// List rays where a stronger condition holds but a weaker one does not.
pub fn lattice_violations(wf: &WavefrontEstimate) -> Vec<LatticeViolation> {
    let mut out = Vec::new();
    for b in 0..wf.base_points.len() {
        for d in 0..wf.directions.len() {
            for (s, w) in LATTICE {
                if let (Some(vs), Some(vw)) = (wf.verdict(b, d, s), wf.verdict(b, d, w)) {
                    if vs.holds == Holds::Yes && vw.holds == Holds::No {
                        out.push(LatticeViolation { covector: vs.covector.clone(), stronger: s, weaker: w });
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub compared: usize,
    pub disagreements: Vec<(Covector, ConditionKind, Holds, Holds)>,
}

impl InvarianceReport {
    pub fn agree(&self) -> bool {
        self.disagreements.is_empty()
    }
}

/// Compare the verdicts of two representatives at base points inside
/// `interior`.
pub fn representative_invariance_audit(
    mu1: &FunctionalExpr,
    mu2: &FunctionalExpr,
    p: &Arc<PhasePolynomial>,
    spec: &GridSpec,
    conditions: &[SheafCondition],
    interior: &CompactBox,
    q: &QuadOptions,
    cfg: &ClassifierConfig,
) -> Result<InvarianceReport> {
    let (_, a) = wavefront(mu1, p, spec, conditions, q, cfg)?;
    let (_, b) = wavefront(mu2, p, spec, conditions, q, cfg)?;
    let mut report = InvarianceReport { compared: 0, disagreements: vec![] };
    for (va, vb) in a.verdicts.iter().zip(&b.verdicts) {
        if !interior.contains(&va.covector.x) {
            continue;
        }
        report.compared += 1;
        if va.holds != vb.holds {
            report.disagreements.push((va.covector.clone(), va.condition.kind, va.holds, vb.holds));
        }
    }
    Ok(report)
}
