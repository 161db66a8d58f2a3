//! Concrete analytic functionals carried by real compacts, and the entire
//! test functions they are paired with.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config, numeric, Result};
use crate::jet::{Jet, Layout};
use crate::operator::{DifferentialOperator, Monomial, Number};
use crate::phase::PhasePolynomial;
use crate::quad;
use crate::scaled::Scaled;

/// Highest derivative order allowed on a point atom.
pub const ORDER_CAP: u32 = 2;
/// Opening height δ of the wedge whose boundary values we represent.
pub const WEDGE_DELTA: f64 = 1.0;

const C0: Complex64 = Complex64 { re: 0.0, im: 0.0 };
const C1: Complex64 = Complex64 { re: 1.0, im: 0.0 };
const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Product of closed intervals, JSON `[[lo, hi], ...]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CompactBox(pub Vec<[f64; 2]>);

impl CompactBox {
    pub fn new(sides: Vec<[f64; 2]>) -> CompactBox {
        CompactBox(sides)
    }

    pub fn interval(lo: f64, hi: f64) -> CompactBox {
        CompactBox(vec![[lo, hi]])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn check(&self) -> Result<()> {
        if self.0.is_empty() {
            return config("box has no sides");
        }
        for s in &self.0 {
            if !(s[0].is_finite() && s[1].is_finite()) || s[0] > s[1] {
                return config(format!("box side {s:?} is empty or unbounded"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.0.iter().zip(x).all(|(s, &v)| s[0] <= v && v <= s[1])
    }

    pub fn contains_box(&self, o: &CompactBox) -> bool {
        self.0.iter().zip(&o.0).all(|(s, t)| s[0] <= t[0] && t[1] <= s[1])
    }

    pub fn volume(&self) -> f64 {
        self.0.iter().map(|s| s[1] - s[0]).product()
    }

    pub fn diam(&self) -> f64 {
        self.0.iter().map(|s| (s[1] - s[0]).powi(2)).sum::<f64>().sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.0.iter().map(|s| 0.5 * (s[0] + s[1])).collect()
    }

    pub fn hull(&self, o: &CompactBox) -> CompactBox {
        CompactBox(self.0.iter().zip(&o.0).map(|(s, t)| [s[0].min(t[0]), s[1].max(t[1])]).collect())
    }

    pub fn inflate(&self, d: f64) -> CompactBox {
        CompactBox(self.0.iter().map(|s| [s[0] - d, s[1] + d]).collect())
    }

    /// Euclidean distance from x to the box boundary (x inside or outside).
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            self.0
                .iter()
                .zip(x)
                .map(|(s, &v)| (v - s[0]).min(s[1] - v))
                .fold(f64::INFINITY, f64::min)
        } else {
            self.0
                .iter()
                .zip(x)
                .map(|(s, &v)| (s[0] - v).max(v - s[1]).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt()
        }
    }
}

/// Density profile on the support box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Profile {
    Const { value: f64 },
    Poly { monomials: Vec<Monomial> },
    /// Values on a uniform grid spanning the support, row-major, interpolated
    /// by piecewise-cubic (Catmull–Rom) splines along each axis.
    Samples {
        values: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shape: Option<Vec<usize>>,
    },
}

fn cr_tangent(get: &dyn Fn(usize) -> f64, n: usize, i: usize) -> f64 {
    if i == 0 {
        get(1) - get(0)
    } else if i == n - 1 {
        get(n - 1) - get(n - 2)
    } else {
        0.5 * (get(i + 1) - get(i - 1))
    }
}

/// Catmull–Rom interpolation at continuous index `u ∈ [0, n−1]`.
fn catmull_rom(n: usize, get: &dyn Fn(usize) -> f64, u: f64) -> f64 {
    let u = u.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n - 2);
    let t = u - i as f64;
    let (y0, y1) = (get(i), get(i + 1));
    let (m0, m1) = (cr_tangent(get, n, i), cr_tangent(get, n, i + 1));
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
}

impl Profile {
    pub fn is_analytic(&self) -> bool {
        !matches!(self, Profile::Samples { .. })
    }

    fn check(&self, support: &CompactBox) -> Result<()> {
        let n = support.dim();
        match self {
            Profile::Const { value } if !value.is_finite() => config("non-finite density value"),
            Profile::Poly { monomials } if monomials.iter().any(|m| m.beta.len() != n) => {
                config("profile monomial has wrong dimension")
            }
            Profile::Samples { values, .. } => {
                let shape = self.sample_shape(n)?;
                if shape.iter().any(|&s| s < 2) || shape.iter().product::<usize>() != values.len() {
                    return config(format!("samples shape {shape:?} does not match {} values", values.len()));
                }
                if shape.len() != n || (n > 1 && shape.is_empty()) {
                    return config("samples shape has wrong dimension");
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return config("non-finite sample");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn sample_shape(&self, n: usize) -> Result<Vec<usize>> {
        match self {
            Profile::Samples { values, shape } => match shape {
                Some(s) => Ok(s.clone()),
                None if n == 1 => Ok(vec![values.len()]),
                None => config("samples on N ≥ 2 need an explicit shape"),
            },
            _ => Ok(vec![]),
        }
    }

    /// Value at a complex point (analytic profiles) or a real point (samples).
    pub fn eval(&self, support: &CompactBox, z: &[Complex64]) -> Complex64 {
        match self {
            Profile::Const { value } => Complex64::new(*value, 0.0),
            Profile::Poly { monomials } => monomials
                .iter()
                .map(|m| m.c.value() * m.beta.iter().zip(z).map(|(&b, zj)| zj.powi(b as i32)).product::<Complex64>())
                .sum(),
            Profile::Samples { values, .. } => {
                let shape = self.sample_shape(support.dim()).unwrap_or_default();
                let u: Vec<f64> = support
                    .0
                    .iter()
                    .zip(z)
                    .zip(&shape)
                    .map(|((s, zj), &n)| (zj.re - s[0]) / (s[1] - s[0]) * (n - 1) as f64)
                    .collect();
                let v = match shape.len() {
                    1 => catmull_rom(shape[0], &|i| values[i], u[0]),
                    _ => {
                        let (n0, n1) = (shape[0], shape[1]);
                        catmull_rom(n0, &|i| catmull_rom(n1, &|j| values[i * n1 + j], u[1]), u[0])
                    }
                };
                Complex64::new(v, 0.0)
            }
        }
    }

    pub fn eval_jet(&self, z: &[Jet]) -> Jet {
        let layout = &z[0].layout;
        match self {
            Profile::Const { value } => Jet::constant(layout, Complex64::new(*value, 0.0)),
            Profile::Poly { monomials } => {
                let mut out = Jet::zero(layout);
                for m in monomials {
                    let mut t = Jet::constant(layout, m.c.value());
                    for (&b, zj) in m.beta.iter().zip(z) {
                        if b > 0 {
                            t = t.mul(&zj.powi(b));
                        }
                    }
                    out = out.add(&t);
                }
                out
            }
            // piecewise cubic: only values are meaningful to integrate against
            Profile::Samples { .. } => Jet::zero(layout),
        }
    }

    /// Upper bound of |f| on the support (exact for samples, sampled otherwise).
    pub fn sup_abs(&self, support: &CompactBox) -> f64 {
        match self {
            Profile::Const { value } => value.abs(),
            Profile::Samples { values, .. } => values.iter().fold(0.0f64, |m, v| m.max(v.abs())) * 1.25,
            Profile::Poly { .. } => {
                let n = support.dim();
                let pts = 33usize;
                let total = pts.pow(n as u32);
                let mut best = 0.0f64;
                for idx in 0..total {
                    let mut k = idx;
                    let z: Vec<Complex64> = support
                        .0
                        .iter()
                        .map(|s| {
                            let i = k % pts;
                            k /= pts;
                            Complex64::new(s[0] + (s[1] - s[0]) * i as f64 / (pts - 1) as f64, 0.0)
                        })
                        .collect();
                    best = best.max(self.eval(support, &z).norm());
                }
                best
            }
        }
    }

    /// Interior breakpoints per axis (sample nodes) so quadrature panels
    /// never straddle a spline knot.
    pub fn breakpoints(&self, support: &CompactBox) -> Vec<Vec<f64>> {
        let shape = self.sample_shape(support.dim()).unwrap_or_default();
        support
            .0
            .iter()
            .enumerate()
            .map(|(j, s)| {
                let mut v = vec![s[0]];
                if let Some(&n) = shape.get(j) {
                    for i in 1..n - 1 {
                        v.push(s[0] + (s[1] - s[0]) * i as f64 / (n - 1) as f64);
                    }
                }
                v.push(s[1]);
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub x: Vec<f64>,
    pub alpha: Vec<u32>,
    pub c: Number,
}

/// Named holomorphic functions on the wedge. `reciprocal` is `1/z₁`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Holo {
    One,
    Reciprocal,
    Exp,
}

impl Holo {
    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        match self {
            Holo::One => C1,
            Holo::Reciprocal => z[0].inv(),
            Holo::Exp => z.iter().sum::<Complex64>().exp(),
        }
    }

    pub fn eval_jet(&self, z: &[Jet]) -> Jet {
        match self {
            Holo::One => Jet::constant(&z[0].layout, C1),
            Holo::Reciprocal => z[0].recip(),
            Holo::Exp => z.iter().skip(1).fold(z[0].clone(), |a, b| a.add(b)).exp(),
        }
    }

    pub fn is_entire(&self) -> bool {
        !matches!(self, Holo::Reciprocal)
    }

    /// Simple poles of the N = 1 restriction with their residues.
    pub fn poles(&self) -> Vec<(Complex64, Complex64)> {
        match self {
            Holo::Reciprocal => vec![(C0, C1)],
            _ => vec![],
        }
    }
}

/// The three concrete representations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum Functional {
    /// `h ↦ ∫_support f h`
    Density { support: CompactBox, profile: Profile },
    /// `h ↦ Σ c (∂^α h)(x)`
    #[serde(rename = "points")]
    PointCombo {
        atoms: Vec<Atom>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        carrier: Option<CompactBox>,
    },
    /// `h ↦ ∫_V g(x + iy) h(x + iy) dx` at a fixed height y.
    #[serde(rename = "wedge")]
    WedgeBoundary {
        g: Holo,
        #[serde(rename = "V")]
        v: CompactBox,
        y: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        carrier: Option<CompactBox>,
    },
}

pub fn parse_functional(s: &str) -> Result<Functional> {
    let f: Functional = serde_json::from_str(s)?;
    f.check()?;
    Ok(f)
}

impl Functional {
    pub fn delta(x: &[f64]) -> Functional {
        Functional::PointCombo {
            atoms: vec![Atom { x: x.to_vec(), alpha: vec![0; x.len()], c: 1.0.into() }],
            carrier: None,
        }
    }

    pub fn indicator(b: CompactBox) -> Functional {
        Functional::Density { support: b, profile: Profile::Const { value: 1.0 } }
    }

    pub fn dim(&self) -> usize {
        match self {
            Functional::Density { support, .. } => support.dim(),
            Functional::PointCombo { atoms, carrier } => {
                carrier.as_ref().map(|c| c.dim()).or_else(|| atoms.first().map(|a| a.x.len())).unwrap_or(0)
            }
            Functional::WedgeBoundary { v, .. } => v.dim(),
        }
    }

    pub fn carrier(&self) -> CompactBox {
        match self {
            Functional::Density { support, .. } => support.clone(),
            Functional::PointCombo { atoms, carrier } => carrier.clone().unwrap_or_else(|| {
                let n = atoms[0].x.len();
                CompactBox(
                    (0..n)
                        .map(|j| {
                            let lo = atoms.iter().map(|a| a.x[j]).fold(f64::INFINITY, f64::min);
                            let hi = atoms.iter().map(|a| a.x[j]).fold(f64::NEG_INFINITY, f64::max);
                            [lo, hi]
                        })
                        .collect(),
                )
            }),
            Functional::WedgeBoundary { v, carrier, .. } => carrier.clone().unwrap_or_else(|| v.clone()),
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            Functional::Density { support, profile } => {
                support.check()?;
                profile.check(support)
            }
            Functional::PointCombo { atoms, carrier } => {
                if atoms.is_empty() {
                    return config("point combination has no atoms");
                }
                let n = atoms[0].x.len();
                if n == 0 {
                    return config("atom has empty position");
                }
                for a in atoms {
                    if a.x.len() != n || a.alpha.len() != n {
                        return config("atoms disagree on dimension");
                    }
                    if a.x.iter().any(|v| !v.is_finite()) {
                        return config("non-finite atom position");
                    }
                    if a.alpha.iter().sum::<u32>() > ORDER_CAP {
                        return config(format!("derivative order above cap {ORDER_CAP}"));
                    }
                }
                if let Some(c) = carrier {
                    c.check()?;
                    if c.dim() != n || atoms.iter().any(|a| !c.contains(&a.x)) {
                        return config("atom outside declared carrier");
                    }
                }
                Ok(())
            }
            Functional::WedgeBoundary { v, y, carrier, .. } => {
                v.check()?;
                if y.len() != v.dim() {
                    return config("wedge height has wrong dimension");
                }
                let ny = y.iter().map(|t| t * t).sum::<f64>().sqrt();
                if !(ny > 0.0 && ny < WEDGE_DELTA) {
                    return config(format!("wedge height |y| = {ny} must lie in (0, {WEDGE_DELTA})"));
                }
                if let Some(c) = carrier {
                    c.check()?;
                    if !c.contains_box(v) {
                        return config("wedge base not inside carrier");
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            Functional::Density { profile, .. } => match profile {
                Profile::Poly { monomials } => monomials.iter().all(|m| m.c.value().im == 0.0),
                _ => true,
            },
            Functional::PointCombo { atoms, .. } => atoms.iter().all(|a| a.c.value().im == 0.0),
            Functional::WedgeBoundary { .. } => false,
        }
    }
}

/// Linear combinations and operator images of functionals.
#[derive(Debug, Clone, PartialEq)]
pub enum FunctionalExpr {
    Atom(Functional),
    Sum(Vec<(Complex64, FunctionalExpr)>),
    /// `Pμ`, acting by `h ↦ μ(Pᵗh)`.
    Image(Arc<DifferentialOperator>, Box<FunctionalExpr>),
}

impl From<Functional> for FunctionalExpr {
    fn from(f: Functional) -> Self {
        FunctionalExpr::Atom(f)
    }
}

impl FunctionalExpr {
    pub fn combo(items: Vec<(Complex64, FunctionalExpr)>) -> FunctionalExpr {
        FunctionalExpr::Sum(items)
    }

    pub fn difference(a: FunctionalExpr, b: FunctionalExpr) -> FunctionalExpr {
        FunctionalExpr::Sum(vec![(C1, a), (-C1, b)])
    }

    pub fn image(op: Arc<DifferentialOperator>, inner: FunctionalExpr) -> FunctionalExpr {
        FunctionalExpr::Image(op, Box::new(inner))
    }

    pub fn dim(&self) -> usize {
        match self {
            FunctionalExpr::Atom(f) => f.dim(),
            FunctionalExpr::Sum(v) => v.first().map(|(_, e)| e.dim()).unwrap_or(0),
            FunctionalExpr::Image(_, e) => e.dim(),
        }
    }

    pub fn carrier(&self) -> Option<CompactBox> {
        match self {
            FunctionalExpr::Atom(f) => Some(f.carrier()),
            FunctionalExpr::Sum(v) => v.iter().filter_map(|(_, e)| e.carrier()).reduce(|a, b| a.hull(&b)),
            FunctionalExpr::Image(_, e) => e.carrier(),
        }
    }

    pub fn is_real(&self) -> bool {
        match self {
            FunctionalExpr::Atom(f) => f.is_real(),
            FunctionalExpr::Sum(v) => v.iter().all(|(c, e)| c.im == 0.0 && e.is_real()),
            FunctionalExpr::Image(op, e) => {
                // real operators in ∂-form map real functionals to real ones
                e.is_real()
                    && op.terms.iter().all(|t| {
                        let c = op.coef_at(t, &vec![C0; op.n]) / op.d_factor(&t.alpha);
                        let dc = c * Complex64::new(0.0, 1.0).powi(t.alpha.iter().sum::<u32>() as i32);
                        dc.im.abs() < 1e-15 && t.coef.is_constant()
                    })
            }
        }
    }

    pub fn check(&self) -> Result<()> {
        match self {
            FunctionalExpr::Atom(f) => f.check(),
            FunctionalExpr::Sum(v) => {
                if v.is_empty() {
                    return config("empty linear combination");
                }
                let n = v[0].1.dim();
                for (_, e) in v {
                    e.check()?;
                    if e.dim() != n {
                        return config("combination mixes dimensions");
                    }
                }
                Ok(())
            }
            FunctionalExpr::Image(op, e) => {
                e.check()?;
                if op.n != e.dim() {
                    return config("operator dimension does not match functional");
                }
                Ok(())
            }
        }
    }
}

/// FBI kernel `w ↦ e^{i(τ−w)·ζ − b·p(τ−w)}` with possibly complex τ, ζ, b.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub tau: Vec<Complex64>,
    pub zeta: Vec<Complex64>,
    pub bracket: Complex64,
    pub phase: Arc<PhasePolynomial>,
}

/// Principal `√(Σ ζ_j²)`; equals |ζ| on real covectors.
pub fn bracket(zeta: &[Complex64]) -> Complex64 {
    zeta.iter().map(|z| z * z).sum::<Complex64>().sqrt()
}

/// Whether ζ lies in `Γ_{1/2} = {|Im ζ| < ½|Re ζ|}` where the principal
/// bracket is controlled.
pub fn in_bracket_cone(zeta: &[Complex64]) -> bool {
    let re = zeta.iter().map(|z| z.re * z.re).sum::<f64>().sqrt();
    let im = zeta.iter().map(|z| z.im * z.im).sum::<f64>().sqrt();
    im <= 0.5 * re
}

impl Kernel {
    pub fn real(phase: Arc<PhasePolynomial>, tau: &[f64], xi: &[f64]) -> Kernel {
        let zeta: Vec<Complex64> = xi.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Kernel {
            tau: tau.iter().map(|&t| Complex64::new(t, 0.0)).collect(),
            bracket: Complex64::new(xi.iter().map(|x| x * x).sum::<f64>().sqrt(), 0.0),
            zeta,
            phase,
        }
    }

    pub fn complex(phase: Arc<PhasePolynomial>, tau: Vec<Complex64>, zeta: Vec<Complex64>) -> Kernel {
        let b = bracket(&zeta);
        Kernel { tau, zeta, bracket: b, phase }
    }

    /// Exponent φ(w).
    pub fn exponent(&self, w: &[Complex64]) -> Complex64 {
        let u: Vec<Complex64> = self.tau.iter().zip(w).map(|(t, w)| t - w).collect();
        let lin: Complex64 = u.iter().zip(&self.zeta).map(|(a, b)| a * b).sum();
        I * lin - self.bracket * self.phase.eval_c(&u)
    }

    pub fn exponent_jet(&self, w: &[Jet]) -> Jet {
        let u: Vec<Jet> = self.tau.iter().zip(w).map(|(t, w)| w.scale(-C1).add_const(*t)).collect();
        let mut lin = Jet::zero(&w[0].layout);
        for (a, z) in u.iter().zip(&self.zeta) {
            lin = lin.add(&a.scale(*z));
        }
        lin.scale(I).sub(&self.phase.eval_jet(&u).scale(self.bracket))
    }

    /// Oscillation frequency scale used for panel sizing.
    pub fn frequency(&self) -> f64 {
        self.zeta.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(self.bracket.norm())
    }
}

/// Entire test functions.
#[derive(Debug, Clone, PartialEq)]
pub enum TestFunction {
    Poly { n: usize, monomials: Vec<(Vec<u32>, Complex64)> },
    /// `c · e^{a·w}`
    Exp { a: Vec<Complex64>, c: Complex64 },
    /// `sin(a·w)` or `cos(a·w)`
    Trig { cosine: bool, a: Vec<Complex64> },
    Kernel(Kernel),
    /// `Pᵗ inner`
    Transposed { op: Arc<DifferentialOperator>, inner: Box<TestFunction> },
    /// `H^ε(w) = (4πε)^{−N/2} ∫_W e^{−|x−w|²/4ε} h(x) dx`
    Heat { h: Box<TestFunction>, w_box: CompactBox, eps: f64 },
}

impl TestFunction {
    pub fn one(n: usize) -> TestFunction {
        TestFunction::Poly { n, monomials: vec![(vec![0; n], C1)] }
    }

    /// `w_j^k`.
    pub fn monomial(n: usize, j: usize, k: u32) -> TestFunction {
        let mut b = vec![0; n];
        b[j] = k;
        TestFunction::Poly { n, monomials: vec![(b, C1)] }
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Poly { n, .. } => *n,
            TestFunction::Exp { a, .. } | TestFunction::Trig { a, .. } => a.len(),
            TestFunction::Kernel(k) => k.tau.len(),
            TestFunction::Transposed { inner, .. } => inner.dim(),
            TestFunction::Heat { w_box, .. } => w_box.dim(),
        }
    }

    /// The FBI kernel underneath, if any.
    pub fn kernel(&self) -> Option<&Kernel> {
        match self {
            TestFunction::Kernel(k) => Some(k),
            TestFunction::Transposed { inner, .. } => inner.kernel(),
            _ => None,
        }
    }

    /// Total order of the transposed operators wrapped around the kernel.
    pub fn extra_order(&self) -> usize {
        match self {
            TestFunction::Transposed { op, inner } => op.m + inner.extra_order(),
            _ => 0,
        }
    }

    pub fn eval_scaled(&self, w: &[Complex64]) -> Result<Scaled> {
        Ok(match self {
            TestFunction::Kernel(k) => Scaled::exp(k.exponent(w)),
            TestFunction::Poly { monomials, .. } => Scaled::from_complex(
                monomials
                    .iter()
                    .map(|(b, c)| c * b.iter().zip(w).map(|(&e, z)| z.powi(e as i32)).product::<Complex64>())
                    .sum(),
            ),
            TestFunction::Exp { a, c } => {
                Scaled::exp(a.iter().zip(w).map(|(x, y)| x * y).sum::<Complex64>()).scale(*c)
            }
            TestFunction::Trig { cosine, a } => {
                let s: Complex64 = a.iter().zip(w).map(|(x, y)| x * y).sum();
                Scaled::from_complex(if *cosine { s.cos() } else { s.sin() })
            }
            _ => {
                let (j, s) = self.eval_jet(w, 0)?;
                Scaled::new(j.value(), s)
            }
        })
    }

    pub fn eval(&self, w: &[Complex64]) -> Result<Complex64> {
        Ok(self.eval_scaled(w)?.to_complex())
    }

    /// Taylor jet at w of the given order, together with a log-scale:
    /// the true jet is `jet · e^{scale}`.
    pub fn eval_jet(&self, w: &[Complex64], order: usize) -> Result<(Jet, f64)> {
        let n = w.len();
        let layout = Layout::get(n, order);
        let z: Vec<Jet> = (0..n).map(|k| Jet::var(&layout, k, w[k])).collect();
        Ok(match self {
            TestFunction::Poly { monomials, .. } => {
                let mut out = Jet::zero(&layout);
                for (b, c) in monomials {
                    let mut t = Jet::constant(&layout, *c);
                    for (&e, zj) in b.iter().zip(&z) {
                        if e > 0 {
                            t = t.mul(&zj.powi(e));
                        }
                    }
                    out = out.add(&t);
                }
                (out, 0.0)
            }
            TestFunction::Exp { a, c } => {
                let mut s = Jet::zero(&layout);
                for (aj, zj) in a.iter().zip(&z) {
                    s = s.add(&zj.scale(*aj));
                }
                let (e, sc) = s.exp_scaled();
                (e.scale(*c), sc)
            }
            TestFunction::Trig { cosine, a } => {
                let mut s = Jet::zero(&layout);
                for (aj, zj) in a.iter().zip(&z) {
                    s = s.add(&zj.scale(*aj));
                }
                (if *cosine { s.cos() } else { s.sin() }, 0.0)
            }
            TestFunction::Kernel(k) => k.exponent_jet(&z).exp_scaled(),
            TestFunction::Transposed { op, inner } => {
                let hi = order + op.m;
                let (hj, s) = inner.eval_jet(w, hi)?;
                let lz = Layout::get(n, hi);
                let zz: Vec<Jet> = (0..n).map(|k| Jet::var(&lz, k, w[k])).collect();
                (op.transpose_jet(&hj, &zz, order), s)
            }
            TestFunction::Heat { h, w_box, eps } => heat_jet(h, w_box, *eps, w, order)?,
        })
    }
}

fn heat_nodes_1d(side: [f64; 2], a: f64, b: f64, eps: f64) -> Vec<(f64, f64)> {
    let c = a.clamp(side[0], side[1]);
    let reach = (4.0 * eps * 45.0).sqrt();
    let lo = (c - reach).max(side[0]);
    let hi = (c + reach).min(side[1]);
    if hi <= lo {
        return vec![];
    }
    let omega = b.abs() / (2.0 * eps);
    let mut ell = (0.5 * eps.sqrt()).min((hi - lo) / 4.0);
    if omega > 0.0 {
        ell = ell.min(PI / (2.0 * omega));
    }
    let panels = ((hi - lo) / ell).ceil().max(1.0) as usize;
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * 16);
    for p in 0..panels {
        let s = lo + h * p as f64;
        out.extend(quad::gl_nodes(16, s, s + h));
    }
    out
}

fn heat_jet(h: &TestFunction, w_box: &CompactBox, eps: f64, w: &[Complex64], order: usize) -> Result<(Jet, f64)> {
    if !(eps > 0.0) {
        return config("heat approximation needs ε > 0");
    }
    let n = w.len();
    if w_box.dim() != n {
        return config("heat box dimension mismatch");
    }
    let axes: Vec<Vec<(f64, f64)>> =
        w_box.0.iter().zip(w).map(|(s, wj)| heat_nodes_1d(*s, wj.re, wj.im, eps)).collect();
    let layout = Layout::get(n, order);
    if axes.iter().any(|a| a.is_empty()) {
        return Ok((Jet::zero(&layout), 0.0));
    }
    let z: Vec<Jet> = (0..n).map(|k| Jet::var(&layout, k, w[k])).collect();
    let norm = (4.0 * PI * eps).powf(-(n as f64) / 2.0);
    let total: usize = axes.iter().map(|a| a.len()).product();
    let mut parts: Vec<(Jet, f64)> = Vec::with_capacity(total);
    for idx in 0..total {
        let mut k = idx;
        let mut x = Vec::with_capacity(n);
        let mut wt = norm;
        for a in &axes {
            let (xi, wi) = a[k % a.len()];
            k /= a.len();
            x.push(xi);
            wt *= wi;
        }
        let mut q = Jet::zero(&layout);
        for (xj, zj) in x.iter().zip(&z) {
            let d = zj.scale(-C1).add_const(Complex64::new(*xj, 0.0));
            q = q.add(&d.mul(&d));
        }
        let (g, sg) = q.scale(Complex64::new(-1.0 / (4.0 * eps), 0.0)).exp_scaled();
        let xc: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let hv = h.eval_scaled(&xc)?;
        if hv.is_zero() {
            continue;
        }
        parts.push((g.scale(hv.mant * wt), sg + hv.log));
    }
    let top = parts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let mut out = Jet::zero(&layout);
    if top == f64::NEG_INFINITY {
        return Ok((out, 0.0));
    }
    for (j, s) in &parts {
        out = out.add(&j.scale(Complex64::new((s - top).exp(), 0.0)));
    }
    if out.c.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return numeric("heat approximation overflowed");
    }
    Ok((out, top))
}

/// `H^ε(w)` by the literal double integral over (x, ξ) for N = 1:
/// `(2π)^{−1} ∫_W ∫ e^{−εξ²} e^{i(x−w)ξ} h(x) dξ dx`.
pub fn heat_value_double(h: &TestFunction, w_box: &CompactBox, eps: f64, w: Complex64) -> Result<Complex64> {
    if w_box.dim() != 1 {
        return config("literal double quadrature is implemented for N = 1");
    }
    let rmax = (36.0 / eps).sqrt();
    let side = w_box.0[0];
    let span = (side[1] - side[0]) + (w.re - side[0]).abs().max((w.re - side[1]).abs());
    let ell_xi = (PI / (4.0 * span.max(1e-3))).min(0.5 / eps.sqrt());
    let xi_panels = ((2.0 * rmax) / ell_xi).ceil() as usize;
    let ell_x = (PI / (4.0 * rmax)).min((side[1] - side[0]) / 4.0);
    let x_panels = ((side[1] - side[0]) / ell_x).ceil() as usize;
    let mut acc = C0;
    let hx = (side[1] - side[0]) / x_panels as f64;
    for p in 0..x_panels {
        let s = side[0] + hx * p as f64;
        for (x, wx) in quad::gl_nodes(16, s, s + hx) {
            let hv = h.eval(&[Complex64::new(x, 0.0)])?;
            let inner = quad::composite(
                |xi| (Complex64::new(-eps * xi * xi, 0.0) + I * (Complex64::new(x, 0.0) - w) * xi).exp(),
                -rmax,
                rmax,
                xi_panels,
                16,
            );
            acc += hv * inner * wx;
        }
    }
    Ok(acc / (2.0 * PI))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatReport {
    pub eps: f64,
    pub delta: f64,
    pub sup_error: f64,
    pub grid_points: usize,
}

/// `H^ε` of h on W, with the sup-error `sup_{K_δ} |h − H^ε|` sampled on a grid
/// of K (real points) shifted by imaginary offsets in {−δ, 0, δ}.
pub fn heat_approx(h: &TestFunction, w_box: &CompactBox, eps: f64, k_box: &CompactBox, delta: f64) -> Result<(TestFunction, HeatReport)> {
    if !w_box.contains_box(k_box) {
        return config("K must lie inside W");
    }
    let ht = TestFunction::Heat { h: Box::new(h.clone()), w_box: w_box.clone(), eps };
    let n = k_box.dim();
    let per: usize = if n == 1 { 21 } else { 9 };
    let shifts = [-delta, 0.0, delta];
    let total = per.pow(n as u32) * shifts.len().pow(n as u32);
    let mut sup = 0.0f64;
    for idx in 0..total {
        let mut k = idx;
        let mut w = Vec::with_capacity(n);
        for s in &k_box.0 {
            let i = k % per;
            k /= per;
            let j = k % 3;
            k /= 3;
            w.push(Complex64::new(s[0] + (s[1] - s[0]) * i as f64 / (per - 1) as f64, shifts[j]));
        }
        let d = (h.eval(&w)? - ht.eval(&w)?).norm();
        sup = sup.max(d);
    }
    Ok((ht, HeatReport { eps, delta, sup_error: sup, grid_points: total }))
}

/// Explicit `Pμ` for a one-dimensional density with polynomial profile and
/// polynomial coefficients: the classical derivative as a density plus the
/// integration-by-parts boundary atoms at the support endpoints.
pub fn explicit_image_1d(op: &DifferentialOperator, mu: &Functional) -> Result<FunctionalExpr> {
    let (support, profile) = match mu {
        Functional::Density { support, profile } if support.dim() == 1 => (support, profile),
        _ => return config("explicit image needs a one-dimensional density"),
    };
    if op.n != 1 || !profile.is_analytic() {
        return config("explicit image needs N = 1 and a closed-form profile");
    }
    if op.terms.iter().any(|t| matches!(t.coef, crate::operator::Coef::Exp { .. })) {
        return config("explicit image supports polynomial coefficients only");
    }
    let [a, b] = support.0[0];
    let m = op.m;
    let order = 2 * m + 1;
    // new density: Σ_j a_j D^j f, assembled as a polynomial
    let f_poly = profile_poly(profile);
    let mut dens: Vec<Complex64> = vec![C0; f_poly.len() + 64];
    let mut atoms: Vec<Atom> = Vec::new();
    let mut imag_atoms: Vec<(f64, u32, Complex64)> = Vec::new();
    for t in &op.terms {
        let j = t.alpha[0] as usize;
        let coef_poly = coef_poly(op, t);
        // D^j f = (−i)^j f^{(j)}
        let fj = poly_diff(&f_poly, j);
        let prod = poly_mul(&coef_poly, &fj);
        let s = Complex64::new(0.0, -1.0).powi(j as i32);
        for (k, c) in prod.iter().enumerate() {
            if k >= dens.len() {
                dens.resize(k + 1, C0);
            }
            dens[k] += c * s;
        }
        // boundary terms: i^j Σ_l (−1)^l [f^{(l)} ∂^{j−1−l}(a_j h)]_a^b
        let lay = Layout::get(1, order);
        for (x, sign) in [(b, 1.0), (a, -1.0)] {
            let xj = Jet::var(&lay, 0, Complex64::new(x, 0.0));
            let aj = op.coef_jet(t, &[xj.clone()]);
            for l in 0..j {
                let fl = poly_eval(&poly_diff(&f_poly, l), x);
                let mm = j - 1 - l;
                for q in 0..=mm {
                    let binom = binomial(mm, q);
                    let da = aj.derivative(&[(mm - q) as u8]);
                    let c = Complex64::new(0.0, 1.0).powi(j as i32)
                        * (if l % 2 == 0 { 1.0 } else { -1.0 })
                        * fl
                        * binom
                        * da
                        * sign;
                    if c.norm() > 0.0 {
                        imag_atoms.push((x, q as u32, c));
                    }
                }
            }
        }
    }
    // merge atoms with equal (x, order)
    imag_atoms.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
    for (x, q, c) in imag_atoms {
        match atoms.last_mut() {
            Some(at) if at.x[0] == x && at.alpha[0] == q => {
                let v = at.c.value() + c;
                at.c = Number::Complex([v.re, v.im]);
            }
            _ => atoms.push(Atom { x: vec![x], alpha: vec![q], c: Number::Complex([c.re, c.im]) }),
        }
    }
    atoms.retain(|at| at.c.value().norm() > 1e-15);
    for at in &mut atoms {
        let v = at.c.value();
        if v.im == 0.0 {
            at.c = Number::Real(v.re);
        }
    }
    while dens.last().is_some_and(|c| c.norm() == 0.0) {
        dens.pop();
    }
    let mut items: Vec<(Complex64, FunctionalExpr)> = Vec::new();
    if !dens.is_empty() {
        let monomials = dens
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(k, c)| Monomial {
                beta: vec![k as u32],
                c: if c.im == 0.0 { Number::Real(c.re) } else { Number::Complex([c.re, c.im]) },
            })
            .collect();
        items.push((C1, Functional::Density { support: support.clone(), profile: Profile::Poly { monomials } }.into()));
    }
    if !atoms.is_empty() {
        items.push((C1, Functional::PointCombo { atoms, carrier: Some(support.clone()) }.into()));
    }
    if items.is_empty() {
        items.push((C0, mu.clone().into()));
    }
    Ok(FunctionalExpr::Sum(items))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn profile_poly(p: &Profile) -> Vec<Complex64> {
    match p {
        Profile::Const { value } => vec![Complex64::new(*value, 0.0)],
        Profile::Poly { monomials } => {
            let deg = monomials.iter().map(|m| m.beta[0] as usize).max().unwrap_or(0);
            let mut v = vec![C0; deg + 1];
            for m in monomials {
                v[m.beta[0] as usize] += m.c.value();
            }
            v
        }
        Profile::Samples { .. } => vec![],
    }
}

fn coef_poly(op: &DifferentialOperator, t: &crate::operator::OpTerm) -> Vec<Complex64> {
    let f = op.d_factor(&t.alpha);
    match &t.coef {
        crate::operator::Coef::Const { value } => vec![value.value() * f],
        crate::operator::Coef::Poly { monomials } => {
            let deg = monomials.iter().map(|m| m.beta[0] as usize).max().unwrap_or(0);
            let mut v = vec![C0; deg + 1];
            for m in monomials {
                v[m.beta[0] as usize] += m.c.value() * f;
            }
            v
        }
        crate::operator::Coef::Exp { .. } => vec![],
    }
}

fn poly_diff(p: &[Complex64], k: usize) -> Vec<Complex64> {
    let mut v = p.to_vec();
    for _ in 0..k {
        if v.len() <= 1 {
            return vec![];
        }
        v = v.iter().enumerate().skip(1).map(|(i, c)| c * i as f64).collect();
    }
    v
}

fn poly_mul(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut v = vec![C0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            v[i + j] += x * y;
        }
    }
    v
}

fn poly_eval(p: &[Complex64], x: f64) -> Complex64 {
    p.iter().rev().fold(C0, |acc, c| acc * x + c)
}

const APPLY_TOL: f64 = 1e-12;

/// `μ(h)` for a single representation, test functions without kernel.
pub fn apply_functional(mu: &Functional, h: &TestFunction) -> Result<Complex64> {
    if h.kernel().is_some() {
        let cell = crate::fbi::pair_functional(mu, h, &crate::fbi::QuadOptions::default())?;
        if !cell.valid {
            return numeric("oscillatory pairing failed its refinement check");
        }
        return Ok(cell.value.to_complex());
    }
    let n = mu.dim();
    if h.dim() != n {
        return config("test function dimension does not match functional");
    }
    match mu {
        Functional::PointCombo { atoms, .. } => {
            let mut s = C0;
            for a in atoms {
                let ord = a.alpha.iter().sum::<u32>();
                if ord > ORDER_CAP {
                    return config("derivative order beyond cap");
                }
                let x: Vec<Complex64> = a.x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                let (j, sc) = h.eval_jet(&x, ord as usize)?;
                let al: Vec<u8> = a.alpha.iter().map(|&v| v as u8).collect();
                s += a.c.value() * j.derivative(&al) * sc.exp();
            }
            Ok(s)
        }
        Functional::Density { support, profile } => {
            let bps = profile.breakpoints(support);
            let f = |x: &[f64]| -> Result<Complex64> {
                let z: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                Ok(profile.eval(support, &z) * h.eval(&z)?)
            };
            integrate_box(&bps, &f)
        }
        Functional::WedgeBoundary { g, v, y, .. } => {
            let bps: Vec<Vec<f64>> = v.0.iter().map(|s| vec![s[0], s[1]]).collect();
            let f = |x: &[f64]| -> Result<Complex64> {
                let z: Vec<Complex64> = x.iter().zip(y).map(|(&a, &b)| Complex64::new(a, b)).collect();
                Ok(g.eval(&z) * h.eval(&z)?)
            };
            integrate_box(&bps, &f)
        }
    }
}

/// Iterated adaptive quadrature over a box with per-axis breakpoints.
fn integrate_box(bps: &[Vec<f64>], f: &dyn Fn(&[f64]) -> Result<Complex64>) -> Result<Complex64> {
    fn rec(bps: &[Vec<f64>], prefix: &mut Vec<f64>, f: &dyn Fn(&[f64]) -> Result<Complex64>) -> Result<Complex64> {
        let axis = prefix.len();
        let mut total = C0;
        let mut err: Option<crate::Error> = None;
        for w in bps[axis].windows(2) {
            let (v, _) = quad::adaptive(
                |x| {
                    if err.is_some() {
                        return C0;
                    }
                    prefix.push(x);
                    let r = if axis + 1 == bps.len() { f(prefix) } else { rec(bps, prefix, f) };
                    prefix.pop();
                    match r {
                        Ok(v) => v,
                        Err(e) => {
                            err = Some(e);
                            C0
                        }
                    }
                },
                w[0],
                w[1],
                1e-300,
                APPLY_TOL,
                4000,
            )?;
            total += v;
        }
        match err {
            Some(e) => Err(e),
            None => Ok(total),
        }
    }
    rec(bps, &mut Vec::new(), f)
}

/// `μ(h)` for linear combinations and operator images.
pub fn apply(mu: &FunctionalExpr, h: &TestFunction) -> Result<Complex64> {
    match mu {
        FunctionalExpr::Atom(f) => apply_functional(f, h),
        FunctionalExpr::Sum(v) => {
            let mut s = C0;
            for (c, e) in v {
                s += c * apply(e, h)?;
            }
            Ok(s)
        }
        FunctionalExpr::Image(op, e) => {
            apply(e, &TestFunction::Transposed { op: op.clone(), inner: Box::new(h.clone()) })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn delta_of_square_is_zero() {
        let d = Functional::delta(&[0.0]);
        let h = TestFunction::monomial(1, 0, 2);
        assert_eq!(apply_functional(&d, &h).unwrap(), C0);
    }

    #[test]
    fn unit_density_has_mass_two() {
        let mu = Functional::indicator(CompactBox::interval(-1.0, 1.0));
        let v = apply_functional(&mu, &TestFunction::one(1)).unwrap();
        assert!((v - c(2.0)).norm() < 1e-13);
    }

    #[test]
    fn wedge_reciprocal_closed_form() {
        let mu = parse_functional(r#"{"variant":"wedge","g":"reciprocal","V":[[-1,1]],"y":[0.1]}"#).unwrap();
        let v = apply_functional(&mu, &TestFunction::one(1)).unwrap();
        let expect = Complex64::new(0.0, 2.0 * (0.1f64).atan() - PI);
        assert!((v - expect).norm() < 1e-10, "{v}");
    }

    #[test]
    fn parses_reference_descriptors() {
        parse_functional(r#"{"variant":"density","support":[[-1,1]],"profile":{"kind":"const","value":1.0}}"#).unwrap();
        parse_functional(r#"{"variant":"points","atoms":[{"x":[0],"alpha":[0],"c":1.0}]}"#).unwrap();
        assert!(parse_functional(r#"{"variant":"points","atoms":[{"x":[0],"alpha":[3],"c":1.0}]}"#).is_err());
        assert!(parse_functional(r#"{"variant":"wedge","g":"reciprocal","V":[[-1,1]],"y":[0.0]}"#).is_err());
    }

    #[test]
    fn samples_reproduce_cubic_data_at_nodes() {
        let vals: Vec<f64> = (0..9).map(|i| (i as f64 / 8.0).powi(2)).collect();
        let p = Profile::Samples { values: vals.clone(), shape: None };
        let b = CompactBox::interval(0.0, 1.0);
        for (i, v) in vals.iter().enumerate() {
            let x = i as f64 / 8.0;
            assert!((p.eval(&b, &[c(x)]).re - v).abs() < 1e-14);
        }
        assert!((p.eval(&b, &[c(0.5 + 1.0 / 16.0)]).re - (0.5f64 + 1.0 / 16.0).powi(2)).abs() < 1e-3);
    }

    #[test]
    fn heat_of_one_near_center() {
        let w = CompactBox::interval(-2.0, 2.0);
        let ht = TestFunction::Heat { h: Box::new(TestFunction::one(1)), w_box: w.clone(), eps: 1e-2 };
        assert!((ht.eval(&[C0]).unwrap() - c(1.0)).norm() < 1e-3);
        assert!(ht.eval(&[c(10.0)]).unwrap().norm() <= 1e-3);
        let lit = heat_value_double(&TestFunction::one(1), &w, 5e-2, Complex64::new(0.3, 0.1)).unwrap();
        let ht2 = TestFunction::Heat { h: Box::new(TestFunction::one(1)), w_box: w, eps: 5e-2 };
        let closed = ht2.eval(&[Complex64::new(0.3, 0.1)]).unwrap();
        assert!((lit - closed).norm() < 1e-9, "{lit} vs {closed}");
    }

    #[test]
    fn ramp_second_derivative_atoms() {
        let op = crate::operator::DifferentialOperator::laplacian(1);
        let ramp = parse_functional(
            r#"{"variant":"density","support":[[0,1]],"profile":{"kind":"poly","monomials":[{"beta":[1],"c":1}]}}"#,
        )
        .unwrap();
        let e = explicit_image_1d(&op, &ramp).unwrap();
        let img = FunctionalExpr::image(Arc::new(op), ramp.into());
        for h in [
            TestFunction::Exp { a: vec![c(0.7)], c: C1 },
            TestFunction::Trig { cosine: true, a: vec![Complex64::new(1.3, 0.2)] },
        ] {
            let a = apply(&e, &h).unwrap();
            let b = apply(&img, &h).unwrap();
            assert!((a - b).norm() < 1e-10, "{a} vs {b}");
        }
    }
}
