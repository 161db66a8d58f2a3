//! Denjoy–Carleman defining sequences, their validation and the associated
//! function `M(t) = sup_k log(t^k / M_k)`.
//!
//! Entries are kept as `ln M_k` so that e.g. `(k!)^3` at k = 5000 is fine.

use serde::{Deserialize, Serialize};

use crate::error::{config, rejected, Error, Result};

/// Knobs of the finite checks; defaults are the documented ones.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    /// `(M_k/k!)^{1/k}` must reach this at `k_max`.
    pub m4_threshold: f64,
    /// Grid `{2^{j/8} : 0 ≤ j ≤ grid_steps}` for both A and H.
    pub grid_steps: u32,
    /// Largest admissible A; the smallest H is searched subject to it.
    pub a_cap: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { m4_threshold: 2.0, grid_steps: 160, a_cap: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub p1: bool,
    pub logconvex: bool,
    pub m2prime: bool,
    pub m4_surrogate: bool,
    pub fitted_a: f64,
    pub fitted_h: f64,
    pub m4_threshold: f64,
    /// `(M_k/k!)^{1/k}` at `k_max`.
    pub m4_value: f64,
    pub first_logconvex_violation: Option<usize>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.p1 && self.logconvex && self.m2prime && self.m4_surrogate
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegularSequence {
    pub label: String,
    /// `ln M_0 ..= ln M_{k_max}`
    pub log_entries: Vec<f64>,
    pub k_max: usize,
    pub fitted_a: f64,
    pub fitted_h: f64,
    pub report: ValidationReport,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SequenceDescriptor {
    Gevrey { s: f64, k_max: usize },
    Explicit { entries: Vec<f64> },
}

pub fn parse_sequence(s: &str) -> Result<SequenceDescriptor> {
    Ok(serde_json::from_str(s)?)
}

impl SequenceDescriptor {
    pub fn build(&self) -> Result<RegularSequence> {
        match self {
            SequenceDescriptor::Gevrey { s, k_max } => make_gevrey(*s, *k_max),
            SequenceDescriptor::Explicit { entries } => RegularSequence::from_entries(entries, "explicit"),
        }
    }
}

/// `ln k!` for k = 0..=n by exact accumulation.
pub fn log_factorials(n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..=n {
        acc += (k as f64).ln();
        out.push(acc);
    }
    out
}

/// Largest supported sequence length.
pub const K_MAX_CAP: usize = 1 << 20;

pub fn make_gevrey(s: f64, k_max: usize) -> Result<RegularSequence> {
    if !s.is_finite() || s < 1.0 {
        return rejected(format!("Gevrey exponent s = {s} < 1: M_k/k! is not log-convex"));
    }
    if k_max < 4 {
        return config("k_max must be at least 4");
    }
    if k_max > K_MAX_CAP {
        return config(format!("k_max = {k_max} exceeds the cap {K_MAX_CAP}"));
    }
    let lf = log_factorials(k_max);
    let logs: Vec<f64> = lf.iter().map(|l| s * l).collect();
    let mut seq = RegularSequence::from_logs(logs, &format!("gevrey(s={s})"), &FitConfig::default())?;
    if s == 1.0 {
        seq.flags.push("quasianalytic-analytic".into());
    }
    Ok(seq)
}

impl RegularSequence {
    pub fn from_entries(entries: &[f64], label: &str) -> Result<RegularSequence> {
        if entries.len() < 4 {
            return config(format!("sequence needs at least 4 entries, got {}", entries.len()));
        }
        if let Some(bad) = entries.iter().position(|&m| !(m > 0.0) || !m.is_finite()) {
            return config(format!("entry M_{bad} = {} is not a positive finite number", entries[bad]));
        }
        let logs = entries.iter().map(|m| m.ln()).collect();
        RegularSequence::from_logs(logs, label, &FitConfig::default())
    }

    pub fn from_logs(log_entries: Vec<f64>, label: &str, cfg: &FitConfig) -> Result<RegularSequence> {
        let report = validate_logs(&log_entries, cfg)?;
        let mut flags = Vec::new();
        if !report.p1 {
            flags.push("(P1) fails".into());
        }
        if !report.logconvex {
            flags.push("(logconvex) fails".into());
        }
        if !report.m2prime {
            flags.push("(M2') fails".into());
        }
        if !report.m4_surrogate {
            flags.push("(M4) fails".into());
        }
        Ok(RegularSequence {
            label: label.to_string(),
            k_max: log_entries.len() - 1,
            log_entries,
            fitted_a: report.fitted_a,
            fitted_h: report.fitted_h,
            report,
            flags,
        })
    }

    pub fn entries(&self) -> Vec<f64> {
        self.log_entries.iter().map(|l| l.exp()).collect()
    }

    pub fn is_regular(&self) -> bool {
        self.report.all_pass()
    }

    pub fn associated(&self, k_cap: usize) -> AssociatedFunction<'_> {
        AssociatedFunction { sequence: self, k_cap }
    }

    /// Convenience for `associated(512).value(t)`.
    pub fn associated_value(&self, t: f64) -> Result<f64> {
        self.associated(DEFAULT_K_CAP).value(t)
    }
}

pub const DEFAULT_K_CAP: usize = 512;

/// Raw-entry validation.
pub fn validate_regular(entries: &[f64]) -> Result<ValidationReport> {
    RegularSequence::from_entries(entries, "explicit").map(|s| s.report)
}

fn grid(cfg: &FitConfig) -> impl Iterator<Item = f64> + '_ {
    (0..=cfg.grid_steps).map(|j| 2f64.powf(j as f64 / 8.0))
}

fn validate_logs(l: &[f64], cfg: &FitConfig) -> Result<ValidationReport> {
    if l.len() < 4 {
        return config("sequence needs at least 4 entries");
    }
    let k_max = l.len() - 1;
    let lf = log_factorials(k_max);
    let tol = |x: f64| 1e-12 * (1.0 + x.abs());

    let p1 = l[0].abs() <= 1e-12 && l[1].abs() <= 1e-12;

    // (M_k/k!)^2 ≤ (M_{k-1}/(k-1)!) (M_{k+1}/(k+1)!)
    let n: Vec<f64> = (0..=k_max).map(|k| l[k] - lf[k]).collect();
    let first_logconvex_violation = (1..k_max).find(|&k| 2.0 * n[k] > n[k - 1] + n[k + 1] + tol(n[k]));
    let logconvex = first_logconvex_violation.is_none();

    // smallest H on the grid, then the smallest A ≤ a_cap with M_k ≤ A H^k M_{k-1}
    let mut fit = None;
    for h in grid(cfg) {
        let lh = h.ln();
        let need = (1..=k_max).map(|k| l[k] - l[k - 1] - k as f64 * lh).fold(f64::NEG_INFINITY, f64::max);
        if let Some(a) = grid(cfg).find(|a| a.ln() >= need - tol(need)) {
            if a <= cfg.a_cap {
                fit = Some((a, h));
                break;
            }
        }
    }
    let (m2prime, fitted_a, fitted_h) = match fit {
        Some((a, h)) => (true, a, h),
        None => (false, f64::NAN, f64::NAN),
    };

    let q = |k: usize| n[k] / k as f64;
    let start = (3 * k_max).div_ceil(4).max(1);
    let increasing = (start..k_max).all(|k| q(k + 1) > q(k));
    let m4_value = q(k_max).exp();
    let m4_surrogate = increasing && m4_value >= cfg.m4_threshold;

    Ok(ValidationReport {
        p1,
        logconvex,
        m2prime,
        m4_surrogate,
        fitted_a,
        fitted_h,
        m4_threshold: cfg.m4_threshold,
        m4_value,
        first_logconvex_violation,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct AssociatedFunction<'a> {
    pub sequence: &'a RegularSequence,
    pub k_cap: usize,
}

impl AssociatedFunction<'_> {
    /// Exact finite supremum with its maximizer.
    pub fn value_with_argmax(&self, t: f64) -> Result<(f64, usize)> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Config(format!("associated function needs t > 0, got {t}")));
        }
        let lt = t.ln();
        let top = self.k_cap.min(self.sequence.k_max);
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 0..=top {
            let v = k as f64 * lt - self.sequence.log_entries[k];
            if v > best.0 {
                best = (v, k);
            }
        }
        Ok(best)
    }

    pub fn value(&self, t: f64) -> Result<f64> {
        self.value_with_argmax(t).map(|v| v.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QaVerdict {
    Quasianalytic,
    NonQuasianalytic,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QaReport {
    pub verdict: QaVerdict,
    pub partial_sum: f64,
    /// Fitted decay exponent p of the terms `M_k^{-1/k} ≈ C k^{-p}` on the upper half.
    pub tail_exponent: f64,
    pub divergence_bound: f64,
    pub tail_tol: f64,
}

pub const QA_DIVERGENCE_BOUND: f64 = 3.0;

/// Tail test of Σ M_k^{-1/k}.
pub fn quasianalytic_test(seq: &RegularSequence, tail_tol: f64) -> Result<QaReport> {
    if seq.k_max < 20 {
        return config("quasianalyticity test needs k_max ≥ 20");
    }
    let terms: Vec<(f64, f64)> = (1..=seq.k_max)
        .map(|k| (k as f64, (-seq.log_entries[k] / k as f64).exp()))
        .collect();
    let partial_sum: f64 = terms.iter().map(|t| t.1).sum();
    let tail: Vec<(f64, f64)> = terms[seq.k_max / 2..].iter().map(|&(k, a)| (k.ln(), a.ln())).collect();
    let (slope, _) = crate::fit::linear(&tail);
    let p = -slope;
    let verdict = if p >= 1.0 + tail_tol {
        QaVerdict::NonQuasianalytic
    } else if p <= 1.0 && partial_sum >= QA_DIVERGENCE_BOUND {
        QaVerdict::Quasianalytic
    } else {
        QaVerdict::Inconclusive
    };
    Ok(QaReport { verdict, partial_sum, tail_exponent: p, divergence_bound: QA_DIVERGENCE_BOUND, tail_tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gevrey_two_small() {
        let s = make_gevrey(2.0, 4).unwrap();
        let e = s.entries();
        for (got, want) in e.iter().zip([1.0, 1.0, 4.0, 36.0, 576.0]) {
            assert!((got - want).abs() < 1e-9 * want);
        }
        assert!(s.is_regular());
    }

    #[test]
    fn gevrey_one_fails_m4() {
        let s = make_gevrey(1.0, 10).unwrap();
        assert!(!s.report.m4_surrogate);
        assert!(s.flags.iter().any(|f| f == "(M4) fails"));
        assert!(s.flags.iter().any(|f| f == "quasianalytic-analytic"));
    }

    #[test]
    fn rejects_small_s_and_bad_lists() {
        assert!(matches!(make_gevrey(0.9, 10), Err(Error::Rejected(_))));
        assert!(validate_regular(&[1.0, 1.0, 1.0]).is_err());
        assert!(validate_regular(&[1.0, 1.0, 0.0, 3.0]).is_err());
    }

    #[test]
    fn explicit_cases() {
        let r = validate_regular(&[1.0; 12]).unwrap();
        assert!(!r.m4_surrogate);
        let r = validate_regular(&[1.0, 1.0, 4.0, 36.0, 576.0]).unwrap();
        assert!(r.all_pass());
        let r = validate_regular(&[1.0, 2.0, 8.0, 48.0, 384.0]).unwrap();
        assert!(!r.p1);
    }

    #[test]
    fn associated_rejects_nonpositive() {
        let s = make_gevrey(2.0, 20).unwrap();
        assert!(s.associated_value(0.0).is_err());
        assert!(s.associated_value(-1.0).is_err());
        assert_eq!(s.associated_value(0.5).unwrap(), 0.0);
    }
}
