//! Symbols `a(z, ξ)` organised by homogeneity degree, their composition
//! `p∘q = Σ_γ (i^{−|γ|}/γ!) ∂_ξ^γ p · ∂_z^γ q`, and the Neumann parametrix
//! of an elliptic differential operator.
//!
//! A symbol is a recipe. Evaluating it at `(z, ξ)` produces Taylor jets in
//! the 2N variables `(z, ξ)`; compositions differentiate those jets exactly,
//! so no finite differences are involved for the coefficient classes in
//! [`crate::operator::Coef`] (all entire and given in closed form).

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{numeric, Result};
use crate::jet::{Jet, Layout};
use crate::operator::DifferentialOperator;

type TermFn = dyn Fn(&[Jet], &[Jet]) -> Jet + Send + Sync;

/// A homogeneous term given in closed form: `f(z, ξ)` on jets.
#[derive(Clone)]
pub struct ClosedTerm {
    pub degree: i32,
    pub f: Arc<TermFn>,
}

impl fmt::Debug for ClosedTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ClosedTerm(degree {})", self.degree)
    }
}

#[derive(Debug, Clone)]
enum Node {
    Closed(Vec<ClosedTerm>),
    /// `p ∘ q` with `|γ| ≤ cap`.
    Compose { p: Arc<Node>, q: Arc<Node>, cap: usize },
    /// `p ∘ p_m^{−1} − 1` assembled term by term without the cancelling pair.
    Remainder(Arc<DifferentialOperator>),
    Lin(Vec<(Complex64, Arc<Node>)>),
    /// Drop degrees below the bound.
    Truncate { inner: Arc<Node>, min_degree: i32 },
}

/// Sum of homogeneous terms, at most one per degree after evaluation.
#[derive(Debug, Clone)]
pub struct SymbolExpansion {
    pub n: usize,
    /// Truncation order the expansion was built for.
    pub order: usize,
    node: Arc<Node>,
}

/// Homogeneous components of a symbol at one point, highest degree first.
pub type Components = BTreeMap<i32, Complex64>;

fn i_pow_neg(k: usize) -> Complex64 {
    // i^{−k}
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, -1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, 1.0),
    }
}

fn multi_indices(n: usize, max: usize) -> Vec<Vec<u8>> {
    let lay = Layout::get(n, max);
    lay.monos.clone()
}

fn factorial(a: &[u8]) -> f64 {
    a.iter().map(|&k| (1..=k as u32).product::<u32>() as f64).product()
}

fn is_zero(j: &Jet) -> bool {
    j.c.iter().all(|c| *c == Complex64::new(0.0, 0.0))
}

fn eval_node(node: &Node, n: usize, z: &[Complex64], xi: &[Complex64], order: usize) -> BTreeMap<i32, Jet> {
    let lay = Layout::get(2 * n, order);
    match node {
        Node::Closed(terms) => {
            let zj: Vec<Jet> = (0..n).map(|k| Jet::var(&lay, k, z[k])).collect();
            let xj: Vec<Jet> = (0..n).map(|k| Jet::var(&lay, n + k, xi[k])).collect();
            let mut out: BTreeMap<i32, Jet> = BTreeMap::new();
            for t in terms {
                let v = (t.f)(&zj, &xj);
                match out.get_mut(&t.degree) {
                    Some(acc) => *acc = acc.add(&v),
                    None => {
                        out.insert(t.degree, v);
                    }
                }
            }
            out
        }
        Node::Compose { p, q, cap } => {
            let pj = eval_node(p, n, z, xi, order + cap);
            if pj.is_empty() {
                return pj;
            }
            let qj = eval_node(q, n, z, xi, order + cap);
            compose_jets(&pj, &qj, n, *cap, order, false)
        }
        Node::Remainder(op) if op.principal_only() && op.constant_coefficients() => BTreeMap::new(),
        Node::Remainder(op) => {
            let m = op.m;
            let pj = eval_node(&operator_node(op), n, z, xi, order + m);
            let qj = eval_node(&principal_inverse_node(op), n, z, xi, order + m);
            compose_jets(&pj, &qj, n, m, order, true)
        }
        Node::Lin(parts) => {
            let mut out: BTreeMap<i32, Jet> = BTreeMap::new();
            for (c, inner) in parts {
                for (d, v) in eval_node(inner, n, z, xi, order) {
                    let v = v.scale(*c);
                    match out.get_mut(&d) {
                        Some(acc) => *acc = acc.add(&v),
                        None => {
                            out.insert(d, v);
                        }
                    }
                }
            }
            out
        }
        Node::Truncate { inner, min_degree } => {
            let mut v = eval_node(inner, n, z, xi, order);
            v.retain(|d, _| *d >= *min_degree);
            v
        }
    }
}

/// Combine jets of order `order + cap` into the composition at `order`.
/// `skip_leading` drops the γ = 0 product of the two leading terms.
fn compose_jets(
    p: &BTreeMap<i32, Jet>,
    q: &BTreeMap<i32, Jet>,
    n: usize,
    cap: usize,
    order: usize,
    skip_leading: bool,
) -> BTreeMap<i32, Jet> {
    let mut out: BTreeMap<i32, Jet> = BTreeMap::new();
    let top_p = p.keys().next_back().copied();
    let top_q = q.keys().next_back().copied();
    for gamma in multi_indices(n, cap) {
        let g: usize = gamma.iter().map(|&x| x as usize).sum();
        let mut a_xi = vec![0u8; 2 * n];
        let mut a_z = vec![0u8; 2 * n];
        for k in 0..n {
            a_xi[n + k] = gamma[k];
            a_z[k] = gamma[k];
        }
        let w = i_pow_neg(g) / factorial(&gamma);
        let dp: Vec<(i32, Jet)> =
            p.iter().map(|(d, j)| (*d, j.diff(&a_xi).with_order(order))).filter(|(_, j)| !is_zero(j)).collect();
        if dp.is_empty() {
            continue;
        }
        let dq: Vec<(i32, Jet)> =
            q.iter().map(|(d, j)| (*d, j.diff(&a_z).with_order(order))).filter(|(_, j)| !is_zero(j)).collect();
        for (dpd, pj) in &dp {
            for (dqd, qj) in &dq {
                if skip_leading && g == 0 && Some(*dpd) == top_p && Some(*dqd) == top_q {
                    continue;
                }
                let v = pj.mul(qj).scale(w);
                let d = dpd + dqd - g as i32;
                match out.get_mut(&d) {
                    Some(acc) => *acc = acc.add(&v),
                    None => {
                        out.insert(d, v);
                    }
                }
            }
        }
    }
    out
}

/// `Σ_{|α| = j} a_α(z) ξ^α` as a jet.
fn homogeneous_part(op: &DifferentialOperator, j: usize, z: &[Jet], xi: &[Jet]) -> Jet {
    let mut s = Jet::zero(&z[0].layout);
    for t in op.terms.iter().filter(|t| DifferentialOperator::order_of(t) == j) {
        let mut v = op.coef_jet(t, z);
        for (k, &a) in t.alpha.iter().enumerate() {
            if a > 0 {
                v = v.mul(&xi[k].powi(a));
            }
        }
        s = s.add(&v);
    }
    s
}

fn operator_node(op: &Arc<DifferentialOperator>) -> Node {
    let mut orders: Vec<usize> = op.terms.iter().map(DifferentialOperator::order_of).collect();
    orders.sort_unstable();
    orders.dedup();
    Node::Closed(
        orders
            .into_iter()
            .map(|j| {
                let op = op.clone();
                ClosedTerm { degree: j as i32, f: Arc::new(move |z: &[Jet], xi: &[Jet]| homogeneous_part(&op, j, z, xi)) }
            })
            .collect(),
    )
}

fn principal_inverse_node(op: &Arc<DifferentialOperator>) -> Node {
    let op = op.clone();
    let m = op.m;
    Node::Closed(vec![ClosedTerm {
        degree: -(m as i32),
        f: Arc::new(move |z: &[Jet], xi: &[Jet]| homogeneous_part(&op, m, z, xi).recip()),
    }])
}

impl SymbolExpansion {
    pub fn from_terms(n: usize, terms: Vec<ClosedTerm>) -> SymbolExpansion {
        SymbolExpansion { n, order: 0, node: Arc::new(Node::Closed(terms)) }
    }

    pub fn one(n: usize) -> SymbolExpansion {
        Self::from_terms(
            n,
            vec![ClosedTerm { degree: 0, f: Arc::new(|z: &[Jet], _: &[Jet]| Jet::constant(&z[0].layout, Complex64::new(1.0, 0.0))) }],
        )
    }

    pub fn zero(n: usize) -> SymbolExpansion {
        Self::from_terms(n, vec![])
    }

    /// Full symbol `p(z, ξ) = Σ a_α(z) ξ^α` split by order.
    pub fn of_operator(op: &Arc<DifferentialOperator>) -> SymbolExpansion {
        SymbolExpansion { n: op.n, order: 0, node: Arc::new(operator_node(op)) }
    }

    /// `p_m(z, ξ)^{−1}`, degree −m.
    pub fn principal_inverse(op: &Arc<DifferentialOperator>) -> SymbolExpansion {
        SymbolExpansion { n: op.n, order: 0, node: Arc::new(principal_inverse_node(op)) }
    }

    /// `r = p ∘ p_m^{−1} − 1`: all pairs except the one producing the 1.
    pub fn remainder(op: &Arc<DifferentialOperator>) -> SymbolExpansion {
        SymbolExpansion { n: op.n, order: op.m, node: Arc::new(Node::Remainder(op.clone())) }
    }

    pub fn linear(n: usize, parts: Vec<(Complex64, &SymbolExpansion)>) -> SymbolExpansion {
        let order = parts.iter().map(|p| p.1.order).max().unwrap_or(0);
        SymbolExpansion { n, order, node: Arc::new(Node::Lin(parts.into_iter().map(|(c, s)| (c, s.node.clone())).collect())) }
    }

    pub fn truncate(&self, min_degree: i32) -> SymbolExpansion {
        SymbolExpansion { n: self.n, order: self.order, node: Arc::new(Node::Truncate { inner: self.node.clone(), min_degree }) }
    }

    /// Homogeneous components at `(z, ξ)`.
    pub fn components(&self, z: &[Complex64], xi: &[f64]) -> Components {
        let x: Vec<Complex64> = xi.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        eval_node(&self.node, self.n, z, &x, 0).into_iter().map(|(d, j)| (d, j.value())).collect()
    }

    pub fn eval(&self, z: &[Complex64], xi: &[f64]) -> Complex64 {
        self.components(z, xi).values().sum()
    }

    /// Degrees present at a point, strictly decreasing.
    pub fn degrees(&self, z: &[Complex64], xi: &[f64]) -> Vec<i32> {
        self.components(z, xi).keys().rev().copied().collect()
    }
}

/// `p ∘ q` truncated to `|γ| ≤ cap`.
pub fn compose_symbols(p: &SymbolExpansion, q: &SymbolExpansion, cap: usize) -> SymbolExpansion {
    SymbolExpansion {
        n: p.n,
        order: cap,
        node: Arc::new(Node::Compose { p: p.node.clone(), q: q.node.clone(), cap }),
    }
}

/// Largest relative homogeneity error over the sampled scalings
/// `t ∈ {2, 10, 1000}` of each component at `(z, θ)`.
pub fn homogeneity_error(s: &SymbolExpansion, z: &[Complex64], theta: &[f64]) -> f64 {
    let base = s.components(z, theta);
    let mut worst: f64 = 0.0;
    for t in [2.0, 10.0, 1000.0] {
        let xi: Vec<f64> = theta.iter().map(|v| v * t).collect();
        let scaled = s.components(z, &xi);
        for (d, v) in &base {
            let expect = v * f64::powi(t, *d);
            let got = scaled.get(d).copied().unwrap_or_default();
            let den = expect.norm().max(f64::MIN_POSITIVE);
            if expect.norm() > 0.0 || got.norm() > 0.0 {
                worst = worst.max((got - expect).norm() / den);
            }
        }
    }
    worst
}

/// `a_J = p_m^{−1} ∘ Σ_{j ≤ J} (−1)^j r^{∘j}`, keeping degrees down to −m−J.
pub fn parametrix_symbol(op: &Arc<DifferentialOperator>, j: usize) -> SymbolExpansion {
    let n = op.n;
    let cap = j + 1;
    let r = SymbolExpansion::remainder(op);
    let mut powers = vec![SymbolExpansion::one(n)];
    for k in 1..=j {
        let prev = powers[k - 1].clone();
        powers.push(compose_symbols(&r, &prev, cap).truncate(-(j as i32)));
    }
    let series = SymbolExpansion::linear(
        n,
        powers
            .iter()
            .enumerate()
            .map(|(k, s)| (Complex64::new(if k % 2 == 0 { 1.0 } else { -1.0 }, 0.0), s))
            .collect(),
    );
    let mut a = compose_symbols(&SymbolExpansion::principal_inverse(op), &series, cap).truncate(-(op.m as i32) - j as i32);
    a.order = j;
    a
}

/// `|p ∘ a − 1|` at `(z, rθ)`, with the degree-0 part subtracted before
/// rescaling so the cancellation happens at unit size.
pub fn parametrix_residual(op: &Arc<DifferentialOperator>, a: &SymbolExpansion, z: &[Complex64], theta: &[f64], r: f64) -> Result<f64> {
    let pa = compose_symbols(&SymbolExpansion::of_operator(op), a, op.m);
    let comps = pa.components(z, theta);
    let mut s = Complex64::new(0.0, 0.0);
    for (d, v) in comps {
        let v = if d == 0 { v - 1.0 } else { v };
        s += v * r.powi(d);
    }
    if !s.is_finite() {
        return numeric("parametrix residual is not finite");
    }
    Ok(s.norm())
}
