//! Ordinary least squares helpers used by the decay classifiers.

/// Fit `y = slope·x + intercept`; returns `(slope, intercept)`.
pub fn linear(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return (0.0, my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Root-mean-square residual of a fitted line.
pub fn rms_residual(pts: &[(f64, f64)], slope: f64, intercept: f64) -> f64 {
    if pts.is_empty() {
        return f64::NAN;
    }
    let ss: f64 = pts.iter().map(|p| (p.1 - slope * p.0 - intercept).powi(2)).sum();
    (ss / pts.len() as f64).sqrt()
}
