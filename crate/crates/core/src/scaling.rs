//! Exit-time scaling fits and the Hill tail estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::model::{AffineLaw, AffineMapSample};
use crate::rng::RngStream;
use crate::stats::ols;

pub const DEFAULT_BURN_IN: usize = 1_000;
pub const DEFAULT_THIN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    /// `log τ` against `log R`.
    LogLog,
    /// `τ` against `log R`.
    SemiLog,
}

impl FitMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FitMode::LogLog => "loglog",
            FitMode::SemiLog => "semilog",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub mode: FitMode,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub residual_max: f64,
    pub points_used: usize,
}

fn fit(points: &[(f64, f64)], mode: FitMode) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "scaling fit needs at least 3 points, got {}",
            points.len()
        )));
    }
    if points.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::InvalidArgument(
            "radii must be strictly increasing".into(),
        ));
    }
    if let Some(&(r, t)) = points.iter().find(|&&(r, t)| !(r > 0.0 && t > 0.0)) {
        return Err(Error::NonPositive(format!("point (R = {r}, tau = {t})")));
    }
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = match mode {
        FitMode::LogLog => points.iter().map(|p| p.1.ln()).collect(),
        FitMode::SemiLog => points.iter().map(|p| p.1).collect(),
    };
    let line = ols(&x, &y).ok_or_else(|| Error::InvalidArgument("degenerate radii".into()))?;
    let residual_max = x
        .iter()
        .zip(&y)
        .map(|(a, b)| (b - line.intercept - line.slope * a).abs())
        .fold(0.0, f64::max);
    Ok(ScalingFit {
        mode,
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        residual_max,
        points_used: points.len(),
    })
}

/// Slope of `log E τ_R` on `log R` from `(R, mean_tau)` points.
pub fn fit_contractive(points: &[(f64, f64)]) -> Result<ScalingFit> {
    fit(points, FitMode::LogLog)
}

/// Slope of `E τ_R` on `log R` from `(R, mean_tau)` points.
pub fn fit_explosive(points: &[(f64, f64)]) -> Result<ScalingFit> {
    fit(points, FitMode::SemiLog)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillEstimate {
    pub alpha_hill: f64,
    pub k: usize,
    pub n_samples: usize,
}

/// Default number of order statistics, `⌊n^0.6⌋`.
pub fn default_k(n: usize) -> usize {
    (n as f64).powf(0.6).floor() as usize
}

/// `k / Σᵢ log(X₍ᵢ₎ / X₍ₖ₊₁₎)` over the descending order statistics.
pub fn hill_tail_index(samples: &[f64], k: usize) -> Result<HillEstimate> {
    let n = samples.len();
    if k < 10 || k >= n {
        return Err(Error::InvalidArgument(format!(
            "need 10 ≤ k < n, got k = {k}, n = {n}"
        )));
    }
    if samples.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument(
            "samples must be finite and nonnegative".into(),
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k];
    if !(threshold > 0.0) {
        return Err(Error::DegenerateTail);
    }
    let sum: f64 = sorted[..k].iter().map(|x| (x / threshold).ln()).sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateTail);
    }
    Ok(HillEstimate {
        alpha_hill: k as f64 / sum,
        k,
        n_samples: n,
    })
}

/// `|X_n|` along one long path after `burn_in` steps, keeping every
/// `thin`-th state.
pub fn long_run_norms<L: AffineLaw + ?Sized>(
    law: &L,
    x0: &Vector,
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if x0.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            found: x0.dim(),
        });
    }
    if thin == 0 {
        return Err(Error::InvalidArgument("thin must be at least 1".into()));
    }
    let d = law.dim();
    let mut x = x0.clone();
    let mut buf = vec![0.0; d];
    let mut sample = AffineMapSample::zeros(d);
    let mut out = Vec::with_capacity(n_samples);
    let total = burn_in + n_samples * thin;
    for step in 1..=total {
        law.sample_into(rng, &mut sample);
        sample.apply_into(x.as_slice(), &mut buf);
        x.0.copy_from_slice(&buf);
        if !x.is_finite() {
            return Err(Error::Overflow { step });
        }
        if step > burn_in && (step - burn_in).is_multiple_of(thin) {
            out.push(x.norm());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0].iter().map(|&r| (r, r * r)).collect();
        let f = fit_contractive(&pts).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_prefactor_in_intercept() {
        let pts: Vec<(f64, f64)> = [3.0, 7.0, 11.0, 50.0]
            .iter()
            .map(|&r| (r, 5.0 * r))
            .collect();
        let f = fit_contractive(&pts).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!((f.intercept - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn exact_semilog() {
        let pts: Vec<(f64, f64)> = [1e2, 1e3, 1e4]
            .iter()
            .map(|&r: &f64| (r, 3.0 * r.ln()))
            .collect();
        let f = fit_explosive(&pts).unwrap();
        assert!((f.slope - 3.0).abs() < 1e-12);
        assert_eq!(f.mode, FitMode::SemiLog);
    }

    #[test]
    fn staircase_slope_approaches_inverse_log_two() {
        let pts: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let r = 10f64.powf(1.0 + 0.25 * i as f64);
                (r, (r.log2().floor() + 1.0))
            })
            .collect();
        let f = fit_explosive(&pts).unwrap();
        assert!((f.slope - 1.0 / 2f64.ln()).abs() < 0.01, "{}", f.slope);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_contractive(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]),
            Err(Error::NonPositive(_))
        ));
        assert!(fit_contractive(&[(1.0, 1.0), (2.0, 2.0)]).is_err());
    }

    #[test]
    fn hill_constant_is_degenerate() {
        assert_eq!(hill_tail_index(&[3.0; 100], 10), Err(Error::DegenerateTail));
    }

    #[test]
    fn hill_on_pareto() {
        let mut rng = RngStream::new(12, 0);
        let xs: Vec<f64> = (0..100_000)
            .map(|_| rng.uniform_open().powf(-0.5))
            .collect();
        let h = hill_tail_index(&xs, 1000).unwrap();
        assert!((1.8..=2.2).contains(&h.alpha_hill), "{}", h.alpha_hill);
    }
}
