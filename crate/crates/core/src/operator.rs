//! Linear differential operators `P = Σ a_α(x) D^α`, `D_j = −i∂_j`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::jet::Jet;

/// A real or complex number in JSON: `1.5` or `[re, im]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Real(f64),
    Complex([f64; 2]),
}

impl Number {
    pub fn value(&self) -> Complex64 {
        match *self {
            Number::Real(x) => Complex64::new(x, 0.0),
            Number::Complex([a, b]) => Complex64::new(a, b),
        }
    }
}

impl From<f64> for Number {
    fn from(x: f64) -> Self {
        Number::Real(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub beta: Vec<u32>,
    pub c: Number,
}

/// Coefficient functions; all entire so complex evaluation is meaningful.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Coef {
    Const { value: Number },
    Poly { monomials: Vec<Monomial> },
    /// `c · e^{a·x}`
    Exp { a: Vec<f64>, c: Number },
}

impl Coef {
    pub fn eval_jet(&self, z: &[Jet]) -> Jet {
        let layout = &z[0].layout;
        match self {
            Coef::Const { value } => Jet::constant(layout, value.value()),
            Coef::Poly { monomials } => {
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
            Coef::Exp { a, c } => {
                let mut s = Jet::zero(layout);
                for (&aj, zj) in a.iter().zip(z) {
                    s = s.add(&zj.scale(Complex64::new(aj, 0.0)));
                }
                s.exp().scale(c.value())
            }
        }
    }

    pub fn eval(&self, z: &[Complex64]) -> Complex64 {
        match self {
            Coef::Const { value } => value.value(),
            Coef::Poly { monomials } => monomials
                .iter()
                .map(|m| m.c.value() * m.beta.iter().zip(z).map(|(&b, zj)| zj.powi(b as i32)).product::<Complex64>())
                .sum(),
            Coef::Exp { a, c } => {
                let s: Complex64 = a.iter().zip(z).map(|(&aj, zj)| zj * aj).sum();
                c.value() * s.exp()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Coef::Const { .. } => true,
            Coef::Poly { monomials } => monomials.iter().all(|m| m.beta.iter().all(|&b| b == 0)),
            Coef::Exp { a, .. } => a.iter().all(|&x| x == 0.0),
        }
    }

    fn check(&self, n: usize) -> Result<()> {
        match self {
            Coef::Poly { monomials } if monomials.iter().any(|m| m.beta.len() != n) => {
                config("coefficient monomial has wrong dimension")
            }
            Coef::Exp { a, .. } if a.len() != n => config("exp coefficient has wrong dimension"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Basis {
    /// coefficients multiply `D^α`
    #[default]
    D,
    /// coefficients multiply `∂^α`
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpTerm {
    pub alpha: Vec<u32>,
    pub coef: Coef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferentialOperator {
    #[serde(rename = "N")]
    pub n: usize,
    pub m: usize,
    pub terms: Vec<OpTerm>,
    #[serde(default)]
    pub basis: Basis,
}

pub fn parse_operator(s: &str) -> Result<DifferentialOperator> {
    let op: DifferentialOperator = serde_json::from_str(s)?;
    op.check()?;
    Ok(op)
}

fn i_pow(k: u32) -> Complex64 {
    match k % 4 {
        0 => Complex64::new(1.0, 0.0),
        1 => Complex64::new(0.0, 1.0),
        2 => Complex64::new(-1.0, 0.0),
        _ => Complex64::new(0.0, -1.0),
    }
}

impl DifferentialOperator {
    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.terms.is_empty() {
            return config("operator needs N ≥ 1 and at least one term");
        }
        let mut top = 0;
        for t in &self.terms {
            if t.alpha.len() != self.n {
                return config("operator multi-index has wrong dimension");
            }
            t.coef.check(self.n)?;
            top = top.max(t.alpha.iter().sum::<u32>() as usize);
        }
        if top != self.m {
            return config(format!("declared order m = {} but highest |α| = {top}", self.m));
        }
        Ok(())
    }

    /// Factor turning this term's coefficient into a `D^α` coefficient.
    pub fn d_factor(&self, alpha: &[u32]) -> Complex64 {
        match self.basis {
            Basis::D => Complex64::new(1.0, 0.0),
            // ∂^α = i^{|α|} D^α
            Basis::Partial => i_pow(alpha.iter().sum()),
        }
    }

    /// Coefficient of `D^α` at z (as a jet).
    pub fn coef_jet(&self, t: &OpTerm, z: &[Jet]) -> Jet {
        t.coef.eval_jet(z).scale(self.d_factor(&t.alpha))
    }

    pub fn coef_at(&self, t: &OpTerm, z: &[Complex64]) -> Complex64 {
        t.coef.eval(z) * self.d_factor(&t.alpha)
    }

    pub fn order_of(t: &OpTerm) -> usize {
        t.alpha.iter().sum::<u32>() as usize
    }

    pub fn constant_coefficients(&self) -> bool {
        self.terms.iter().all(|t| t.coef.is_constant())
    }

    pub fn principal_only(&self) -> bool {
        self.terms.iter().all(|t| Self::order_of(t) == self.m)
    }

    /// Jet of `Pᵗh = Σ (−D)^α (a_α h) = Σ i^{|α|} ∂^α (a_α h)` from a jet of h
    /// whose order exceeds the requested one by at least m.
    pub fn transpose_jet(&self, h: &Jet, z: &[Jet], order: usize) -> Jet {
        let mut out = Jet::zero(&crate::jet::Layout::get(h.layout.nvars, order));
        for t in &self.terms {
            let ah = self.coef_jet(t, z).mul(h);
            let alpha: Vec<u8> = t.alpha.iter().map(|&a| a as u8).collect();
            let d = ah.diff(&alpha).with_order(order);
            out = out.add(&d.scale(i_pow(t.alpha.iter().sum())));
        }
        out
    }

    pub fn laplacian(n: usize) -> DifferentialOperator {
        DifferentialOperator {
            n,
            m: 2,
            terms: (0..n)
                .map(|j| {
                    let mut a = vec![0; n];
                    a[j] = 2;
                    OpTerm { alpha: a, coef: Coef::Const { value: 1.0.into() } }
                })
                .collect(),
            basis: Basis::Partial,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::Layout;

    #[test]
    fn parses_reference_descriptor() {
        let s = r#"{"N":1,"m":2,"terms":[{"alpha":[2],"coef":{"kind":"const","value":1}},{"alpha":[1],"coef":{"kind":"poly","monomials":[{"beta":[1],"c":1}]}}]}"#;
        let op = parse_operator(s).unwrap();
        assert_eq!(op.m, 2);
        assert_eq!(op.basis, Basis::D);
        assert!(parse_operator(r#"{"N":1,"m":3,"terms":[{"alpha":[2],"coef":{"kind":"const","value":1}}]}"#).is_err());
    }

    #[test]
    fn transpose_of_second_derivative() {
        // P = ∂², Pᵗ = ∂²; on h = e^{2w}: 4e^{2w}
        let op = DifferentialOperator::laplacian(1);
        let l = Layout::get(1, 3);
        let w = Jet::var(&l, 0, Complex64::new(0.1, 0.0));
        let h = w.scale(Complex64::new(2.0, 0.0)).exp();
        let t = op.transpose_jet(&h, &[w], 1);
        assert!((t.value() - 4.0 * (0.2f64).exp()).norm() < 1e-12);
    }
}
