use serde::{Deserialize, Serialize};

use crate::error::{AfemError, Result};

/// Least-squares slope of `log y` against `log x` over the trailing fraction
/// `window` of the points (at least three points, or all if fewer).
pub fn rate_fit(x: &[f64], y: &[f64], window: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AfemError::Parameter(
            "rate fit needs equally long series".into(),
        ));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(AfemError::Parameter(format!(
            "window {window} outside (0, 1]"
        )));
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(AfemError::Parameter(
            "rate fit needs at least two positive points".into(),
        ));
    }
    let take = ((pts.len() as f64 * window).ceil() as usize)
        .max(3)
        .min(pts.len());
    let pts = &pts[pts.len() - take..];
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(AfemError::Parameter(
            "rate fit needs distinct abscissae".into(),
        ));
    }
    Ok(sxy / sxx)
}

/// Outcome of a full R-linear convergence check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RLinearReport {
    /// Geometric decay factor per index from a log-linear fit.
    pub q_fit: f64,
    /// Smallest `C` with `v_{m+n} <= C q_fit^n v_m` for all pairs.
    pub constant: f64,
    /// `sup_m sum_{k > m} v_k / v_m`, with the unobserved tail extrapolated geometrically.
    pub tail_constant: f64,
    pub n: usize,
}

impl RLinearReport {
    pub fn converges(&self) -> bool {
        self.q_fit < 1.0 && self.tail_constant.is_finite()
    }
}

/// Checks `v_{m+n} <= C q^n v_m` on a finite sequence of positive values.
pub fn check_full_rlinear(values: &[f64]) -> Result<RLinearReport> {
    if values.len() < 2 {
        return Err(AfemError::Parameter("need at least two values".into()));
    }
    if values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(AfemError::Parameter(
            "values must be positive and finite".into(),
        ));
    }
    let idx: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
    let logs: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let n = values.len() as f64;
    let mi = idx.iter().sum::<f64>() / n;
    let ml = logs.iter().sum::<f64>() / n;
    let sxx: f64 = idx.iter().map(|i| (i - mi).powi(2)).sum();
    let sxy: f64 = idx
        .iter()
        .zip(&logs)
        .map(|(i, l)| (i - mi) * (l - ml))
        .sum();
    let q = (sxy / sxx).exp();
    // C = max over m < m + n of v_{m+n} / (q^n v_m); the scaled sequence w_i = v_i q^{-i}
    // turns it into max_{j > i} w_j / w_i, one pass with a running minimum
    let mut constant = 1.0f64;
    let mut min_w = f64::INFINITY;
    for (i, l) in logs.iter().enumerate() {
        let lw = l - i as f64 * q.ln();
        if min_w.is_finite() {
            constant = constant.max((lw - min_w).exp());
        }
        min_w = min_w.min(lw);
    }
    let tail_constant = if q < 1.0 {
        let last = *values.last().unwrap();
        let extra = last * q / (1.0 - q);
        let mut suffix = extra;
        let mut worst = 0.0f64;
        for m in (0..values.len()).rev() {
            worst = worst.max(suffix / values[m]);
            suffix += values[m];
        }
        worst
    } else {
        f64::INFINITY
    };
    Ok(RLinearReport {
        q_fit: q,
        constant,
        tail_constant,
        n: values.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (1..20).map(|i| (i * i) as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-0.5)).collect();
        assert!((rate_fit(&x, &y, 0.5).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn geometric_sequence() {
        let v: Vec<f64> = (0..30).map(|i| 0.5f64.powi(i)).collect();
        let r = check_full_rlinear(&v).unwrap();
        assert!((r.q_fit - 0.5).abs() < 1e-12);
        assert!((r.constant - 1.0).abs() < 1e-9);
        assert!((r.tail_constant - 1.0).abs() < 1e-9);
        assert!(r.converges());
    }

    #[test]
    fn constant_sequence_does_not_converge() {
        let r = check_full_rlinear(&[1.0; 10]).unwrap();
        assert!(!r.converges());
    }
}
