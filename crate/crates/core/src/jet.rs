//! Truncated multivariate Taylor expansions with complex coefficients.
//!
//! Test functions expose derivatives through these; point functionals
//! read `∂^α h(x)` off a jet instead of differencing.

use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

#[derive(Debug)]
pub struct Layout {
    pub nvars: usize,
    pub order: usize,
    pub monos: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    /// (i, j, k) with mono_i + mono_j = mono_k, total degree within order
    products: Vec<(usize, usize, usize)>,
    factorial: Vec<f64>,
}

impl Layout {
    pub fn get(nvars: usize, order: usize) -> Arc<Layout> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Layout>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut g = cache.lock().expect("layout cache poisoned");
        g.entry((nvars, order)).or_insert_with(|| Arc::new(Layout::build(nvars, order))).clone()
    }

    fn build(nvars: usize, order: usize) -> Layout {
        let mut monos = Vec::new();
        for deg in 0..=order {
            let mut cur = vec![0u8; nvars];
            enumerate(nvars, deg, 0, &mut cur, &mut monos);
        }
        let index: HashMap<Vec<u8>, usize> = monos.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let mut products = Vec::new();
        for (i, a) in monos.iter().enumerate() {
            for (j, b) in monos.iter().enumerate() {
                let s: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if let Some(&k) = index.get(&s) {
                    products.push((i, j, k));
                }
            }
        }
        let mut factorial = vec![1.0; order + 1];
        for k in 1..=order {
            factorial[k] = factorial[k - 1] * k as f64;
        }
        Layout { nvars, order, monos, index, products, factorial }
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.index.get(alpha).copied()
    }
}

fn enumerate(n: usize, deg: usize, pos: usize, cur: &mut Vec<u8>, out: &mut Vec<Vec<u8>>) {
    if pos == n - 1 {
        cur[pos] = deg as u8;
        out.push(cur.clone());
        return;
    }
    for d in (0..=deg).rev() {
        cur[pos] = d as u8;
        enumerate(n, deg - d, pos + 1, cur, out);
    }
    cur[pos] = 0;
}

#[derive(Debug, Clone)]
pub struct Jet {
    pub layout: Arc<Layout>,
    pub c: Vec<Complex64>,
}

impl Jet {
    pub fn zero(layout: &Arc<Layout>) -> Jet {
        Jet { layout: layout.clone(), c: vec![Complex64::new(0.0, 0.0); layout.len()] }
    }

    pub fn constant(layout: &Arc<Layout>, v: Complex64) -> Jet {
        let mut j = Jet::zero(layout);
        j.c[0] = v;
        j
    }

    /// The coordinate function `w_k` expanded at a point where it equals `v`.
    pub fn var(layout: &Arc<Layout>, k: usize, v: Complex64) -> Jet {
        let mut j = Jet::constant(layout, v);
        if layout.order >= 1 {
            let mut a = vec![0u8; layout.nvars];
            a[k] = 1;
            let idx = layout.index_of(&a).expect("first-order monomial");
            j.c[idx] = Complex64::new(1.0, 0.0);
        }
        j
    }

    pub fn value(&self) -> Complex64 {
        self.c[0]
    }

    /// `∂^α f` at the expansion point; zero beyond the stored order.
    pub fn derivative(&self, alpha: &[u8]) -> Complex64 {
        match self.layout.index_of(alpha) {
            Some(i) => {
                let f: f64 = alpha.iter().map(|&a| self.layout.factorial[a as usize]).product();
                self.c[i] * f
            }
            None => Complex64::new(0.0, 0.0),
        }
    }

    pub fn add(&self, o: &Jet) -> Jet {
        Jet { layout: self.layout.clone(), c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect() }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        Jet { layout: self.layout.clone(), c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect() }
    }

    pub fn scale(&self, s: Complex64) -> Jet {
        Jet { layout: self.layout.clone(), c: self.c.iter().map(|a| a * s).collect() }
    }

    pub fn add_const(&self, s: Complex64) -> Jet {
        let mut j = self.clone();
        j.c[0] += s;
        j
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        let mut out = Jet::zero(&self.layout);
        if self.layout.order == 0 {
            out.c[0] = self.c[0] * o.c[0];
            return out;
        }
        for &(i, j, k) in &self.layout.products {
            out.c[k] += self.c[i] * o.c[j];
        }
        out
    }

    pub fn powi(&self, n: u32) -> Jet {
        let mut r = Jet::constant(&self.layout, Complex64::new(1.0, 0.0));
        for _ in 0..n {
            r = r.mul(self);
        }
        r
    }

    /// Σ_{n ≤ order} u^n / n! for a jet `u` with zero constant term.
    fn exp_nilpotent(u: &Jet) -> Jet {
        let order = u.layout.order;
        let mut term = Jet::constant(&u.layout, Complex64::new(1.0, 0.0));
        let mut sum = term.clone();
        for n in 1..=order {
            term = term.mul(u).scale(Complex64::new(1.0 / n as f64, 0.0));
            sum = sum.add(&term);
        }
        sum
    }

    pub fn exp(&self) -> Jet {
        let a0 = self.c[0];
        let u = self.add_const(-a0);
        Jet::exp_nilpotent(&u).scale(a0.exp())
    }

    /// `exp(self)` split as `mant · e^{scale}` with `scale = Re f(w0)`, so
    /// huge or tiny moduli survive.
    pub fn exp_scaled(&self) -> (Jet, f64) {
        let a0 = self.c[0];
        let u = self.add_const(-a0);
        let phase = Complex64::new(0.0, a0.im).exp();
        (Jet::exp_nilpotent(&u).scale(phase), a0.re)
    }

    pub fn recip(&self) -> Jet {
        let a0 = self.c[0];
        let inv = 1.0 / a0;
        let u = self.add_const(-a0).scale(-inv);
        let mut term = Jet::constant(&self.layout, Complex64::new(1.0, 0.0));
        let mut sum = term.clone();
        for _ in 1..=self.layout.order {
            term = term.mul(&u);
            sum = sum.add(&term);
        }
        sum.scale(inv)
    }

    /// `∂^α` of the expansion; the result has order `order − |α|`.
    pub fn diff(&self, alpha: &[u8]) -> Jet {
        let k: usize = alpha.iter().map(|&a| a as usize).sum();
        let lo = self.layout.order.saturating_sub(k);
        let target = Layout::get(self.layout.nvars, lo);
        let mut out = Jet::zero(&target);
        if k > self.layout.order {
            return out;
        }
        for (i, m) in target.monos.iter().enumerate() {
            let src: Vec<u8> = m.iter().zip(alpha).map(|(a, b)| a + b).collect();
            if let Some(j) = self.layout.index_of(&src) {
                let mut f = 1.0;
                for (&s, &a) in src.iter().zip(alpha) {
                    for t in 0..a {
                        f *= (s - t) as f64;
                    }
                }
                out.c[i] = self.c[j] * f;
            }
        }
        out
    }

    /// Re-expand into a layout of another order (truncating or zero-padding).
    pub fn with_order(&self, order: usize) -> Jet {
        let target = Layout::get(self.layout.nvars, order);
        let mut out = Jet::zero(&target);
        for (i, m) in target.monos.iter().enumerate() {
            if let Some(j) = self.layout.index_of(m) {
                out.c[i] = self.c[j];
            }
        }
        out
    }

    pub fn sin(&self) -> Jet {
        let i = Complex64::new(0.0, 1.0);
        let e1 = self.scale(i).exp();
        let e2 = self.scale(-i).exp();
        e1.sub(&e2).scale(Complex64::new(0.0, -0.5))
    }

    pub fn cos(&self) -> Jet {
        let i = Complex64::new(0.0, 1.0);
        let e1 = self.scale(i).exp();
        let e2 = self.scale(-i).exp();
        e1.add(&e2).scale(Complex64::new(0.5, 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(x: f64) -> Complex64 {
        Complex64::new(x, 0.0)
    }

    #[test]
    fn exp_derivatives_match_closed_form() {
        let l = Layout::get(1, 5);
        let x = Jet::var(&l, 0, c(0.3));
        let e = x.scale(c(2.0)).exp();
        for k in 0..=5u8 {
            let d = e.derivative(&[k]);
            let want = 2f64.powi(k as i32) * (0.6f64).exp();
            assert!((d.re - want).abs() < 1e-12 * want);
        }
    }

    #[test]
    fn mixed_partials_two_vars() {
        let l = Layout::get(2, 4);
        let x = Jet::var(&l, 0, c(1.0));
        let y = Jet::var(&l, 1, c(2.0));
        // f = x^2 y^2  →  ∂x∂x∂y f = 4y = 8
        let f = x.mul(&x).mul(&y).mul(&y);
        assert!((f.derivative(&[2, 1]).re - 8.0).abs() < 1e-12);
        assert!((f.derivative(&[2, 2]).re - 4.0).abs() < 1e-12);
    }

    #[test]
    fn diff_shifts_coefficients() {
        let l = Layout::get(2, 4);
        let x = Jet::var(&l, 0, c(0.5));
        let y = Jet::var(&l, 1, c(-1.0));
        let f = x.powi(3).mul(&y.powi(2));
        let d = f.diff(&[1, 1]);
        assert_eq!(d.layout.order, 2);
        // ∂x∂y (x³y²) = 6x²y
        assert!((d.value().re - 6.0 * 0.25 * -1.0).abs() < 1e-12);
        assert!((d.derivative(&[1, 0]).re - 12.0 * 0.5 * -1.0).abs() < 1e-12);
    }

    #[test]
    fn recip_inverts() {
        let l = Layout::get(2, 3);
        let x = Jet::var(&l, 0, Complex64::new(1.0, 0.5));
        let y = Jet::var(&l, 1, c(-0.7));
        let f = x.add(&y.mul(&y)).add_const(c(2.0));
        let one = f.mul(&f.recip());
        assert!((one.c[0] - c(1.0)).norm() < 1e-14);
        assert!(one.c[1..].iter().all(|z| z.norm() < 1e-13));
    }
}
