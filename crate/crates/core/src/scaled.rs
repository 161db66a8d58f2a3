//! Complex numbers carried as `mant · e^{log}` so FBI values far below
//! `f64::MIN_POSITIVE` keep an exact logarithm.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scaled {
    pub mant: Complex64,
    pub log: f64,
}

impl Scaled {
    pub const ZERO: Scaled = Scaled { mant: Complex64 { re: 0.0, im: 0.0 }, log: 0.0 };

    pub fn new(mant: Complex64, log: f64) -> Scaled {
        Scaled { mant, log }.normalized()
    }

    pub fn from_complex(z: Complex64) -> Scaled {
        Scaled::new(z, 0.0)
    }

    /// `e^{φ}` for complex φ.
    pub fn exp(phi: Complex64) -> Scaled {
        Scaled { mant: Complex64::new(0.0, phi.im).exp(), log: phi.re }
    }

    pub fn is_zero(&self) -> bool {
        self.mant.re == 0.0 && self.mant.im == 0.0
    }

    fn normalized(self) -> Scaled {
        if self.is_zero() {
            return Scaled::ZERO;
        }
        let n = self.mant.norm();
        if !n.is_finite() {
            return self;
        }
        Scaled { mant: self.mant / n, log: self.log + n.ln() }
    }

    pub fn ln_abs(&self) -> f64 {
        if self.is_zero() {
            f64::NEG_INFINITY
        } else {
            self.mant.norm().ln() + self.log
        }
    }

    pub fn to_complex(&self) -> Complex64 {
        if self.is_zero() {
            return self.mant;
        }
        self.mant * self.log.exp()
    }

    pub fn is_finite(&self) -> bool {
        self.mant.re.is_finite() && self.mant.im.is_finite() && (self.is_zero() || self.log.is_finite())
    }

    pub fn mul(&self, o: &Scaled) -> Scaled {
        Scaled::new(self.mant * o.mant, self.log + o.log)
    }

    pub fn scale(&self, c: Complex64) -> Scaled {
        Scaled::new(self.mant * c, self.log)
    }

    pub fn add(&self, o: &Scaled) -> Scaled {
        Scaled::sum(&[*self, *o])
    }

    /// Order-stable sum: aligns to the largest exponent first.
    pub fn sum(items: &[Scaled]) -> Scaled {
        let top = items
            .iter()
            .filter(|s| !s.is_zero())
            .map(|s| s.log)
            .fold(f64::NEG_INFINITY, f64::max);
        if top == f64::NEG_INFINITY {
            return Scaled::ZERO;
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for s in items {
            if !s.is_zero() {
                acc += s.mant * (s.log - top).exp();
            }
        }
        Scaled::new(acc, top)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn survives_underflow() {
        let a = Scaled::exp(Complex64::new(-4000.0, 1.0));
        let b = a.scale(Complex64::new(2.0, 0.0));
        assert!((b.ln_abs() - (-4000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(b.to_complex(), Complex64::new(0.0, 0.0));
        let s = Scaled::sum(&[a, a]);
        assert!((s.ln_abs() - b.ln_abs()).abs() < 1e-12);
    }
}
