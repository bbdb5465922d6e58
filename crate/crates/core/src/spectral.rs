//! Growth rates of the products `Π_n = A_n ··· A_1`: the Lyapunov exponent,
//! the moment function `h(s) = lim (E‖Π_n‖ˢ)^{1/n}` and its root, the tail
//! index.
//!
//! Products are only ever held in renormalized form (a unit-norm matrix plus
//! an accumulated log-norm), so nothing overflows in the explosive regime.
//!
//! `E‖Π_n‖ˢ` is estimated with a resampled population of walkers: each step
//! every walker multiplies its unit-norm product by a fresh `A`, is weighted
//! by `‖A M‖ˢ`, and the population is resampled in proportion to the
//! weights. The product of per-step mean weights is an unbiased estimate of
//! `E‖Π_n‖ˢ`. Draws for walker slot `r` always come from stream `r`, so
//! estimates at different `s` share their random numbers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{invert, mat_mat_into, min_singular_value, operator_norm, Matrix};
use crate::model::{AffineLaw, AffineMapSample};
use crate::rng::{derive_seed, RngStream};
use crate::stats::{ess_from_log_weights, log_sum_exp, map_replicas, mean_se, ols, t95, Z95};

pub const DEFAULT_N_STEPS: usize = 64;
pub const DEFAULT_REPLICAS: usize = 10_000;
/// Estimates whose effective sample size falls below this are unreliable.
pub const ESS_FLOOR: f64 = 100.0;
/// Step counts compared by [`h_n_trend`].
pub const N_TREND_GRID: [usize; 3] = [32, 64, 128];

const RESAMPLE_TAG: u64 = 0x5245_5341_4d50;
const BATCHES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub gamma_hat: f64,
    pub std_err: f64,
    pub n_steps: usize,
    pub replicas: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HEstimate {
    pub s: f64,
    pub log_h_hat: f64,
    pub ci_halfwidth: f64,
    /// Per-step effective sample size of the population, averaged over steps.
    pub ess: f64,
    pub n_steps: usize,
    pub replicas: usize,
}

impl HEstimate {
    pub fn is_reliable(&self) -> bool {
        self.ess >= ESS_FLOOR
    }
}

/// Single-step Monte Carlo bounds `E σ_min(A)ˢ ≤ h(s) ≤ E‖A‖ˢ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HBounds {
    pub s: f64,
    pub lower: f64,
    pub lower_se: f64,
    pub upper: f64,
    pub upper_se: f64,
    /// Draws with a singular `A`, which contribute zero to `lower`.
    pub singular: usize,
}

impl HBounds {
    /// Whether the estimate's interval meets `[lower − 2se, upper + 2se]`.
    pub fn contains(&self, h: &HEstimate) -> bool {
        let lo = (h.log_h_hat - h.ci_halfwidth).exp();
        let hi = (h.log_h_hat + h.ci_halfwidth).exp();
        lo <= self.upper + 2.0 * self.upper_se && hi >= self.lower - 2.0 * self.lower_se
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityCheck {
    /// `(s, log ĥ(s), ci)` on an even grid over `[0, s_hi]`.
    pub grid: Vec<(f64, f64, f64)>,
    pub min_second_difference: f64,
    pub slack: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailIndexResult {
    pub alpha_hat: f64,
    pub bracket: (f64, f64),
    pub iterations: usize,
    pub diagnostics: ConvexityCheck,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TailIndexConfig {
    pub n_steps: usize,
    pub replicas: usize,
    pub s_max: f64,
    pub tol: f64,
}

impl Default for TailIndexConfig {
    fn default() -> Self {
        TailIndexConfig {
            n_steps: DEFAULT_N_STEPS,
            replicas: DEFAULT_REPLICAS,
            s_max: 64.0,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Decreasing,
    Flat,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub gamma: f64,
    pub alpha_hat: f64,
    /// `(n, log Ê‖Π_n‖^γ)`.
    pub points: Vec<(usize, f64)>,
    pub slope: f64,
    pub slope_se: f64,
    pub trend: Trend,
    /// Trend agrees with the side of `alpha_hat` that `gamma` lies on.
    pub consistent: bool,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HTrend {
    pub s: f64,
    pub estimates: Vec<HEstimate>,
    /// `2·ĥ(2n) − ĥ(n)` on the two largest step counts.
    pub extrapolated: f64,
}

fn check_counts(n_steps: usize, replicas: usize) -> Result<()> {
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be at least 1".into()));
    }
    if replicas == 0 {
        return Err(Error::InvalidArgument("replicas must be at least 1".into()));
    }
    Ok(())
}

// (1/n) log‖Π_n‖ (or of Π_n⁻¹) for one replica.
fn replica_log_growth<L: AffineLaw + ?Sized>(
    law: &L,
    n_steps: usize,
    seed: u64,
    replica: u64,
    inverse: bool,
) -> Result<f64> {
    let d = law.dim();
    let mut rng = RngStream::new(seed, replica);
    let mut sample = AffineMapSample::zeros(d);
    let mut m = Matrix::identity(d);
    let mut next = Matrix::zeros(d);
    let mut acc = 0.0;
    for step in 0..n_steps {
        law.sample_into(&mut rng, &mut sample);
        if inverse {
            let inv = invert(&sample.a)?;
            mat_mat_into(&m, &inv, &mut next);
        } else {
            mat_mat_into(&sample.a, &m, &mut next);
        }
        let c = operator_norm(&next);
        if c == 0.0 || !c.is_finite() {
            return Err(Error::Overflow { step: step + 1 });
        }
        acc += c.ln();
        next.scale_in_place(1.0 / c);
        std::mem::swap(&mut m, &mut next);
    }
    Ok(acc / n_steps as f64)
}

fn lyapunov_impl<L: AffineLaw + ?Sized>(
    law: &L,
    n_steps: usize,
    replicas: usize,
    seed: u64,
    inverse: bool,
) -> Result<LyapunovEstimate> {
    check_counts(n_steps, replicas)?;
    let per_replica = map_replicas(replicas, |r| {
        replica_log_growth(law, n_steps, seed, r, inverse)
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let (gamma_hat, std_err) = mean_se(&per_replica);
    Ok(LyapunovEstimate {
        gamma_hat,
        std_err,
        n_steps,
        replicas,
    })
}

/// `γ̂ = mean_r (1/n) log‖Π_n‖`.
pub fn estimate_lyapunov<L: AffineLaw + ?Sized>(
    law: &L,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    lyapunov_impl(law, n_steps, replicas, seed, false)
}

/// Same scheme applied to `Π_n⁻¹ = A₁⁻¹ ··· A_n⁻¹`.
pub fn estimate_inverse_lyapunov<L: AffineLaw + ?Sized>(
    law: &L,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    lyapunov_impl(law, n_steps, replicas, seed, true)
}

struct Walker {
    m: Matrix,
    next: Matrix,
    sample: AffineMapSample,
    log_c: f64,
}

struct PopulationRun {
    /// Per-step `log mean_r ‖A M_r‖ˢ`.
    step_log_means: Vec<f64>,
    mean_ess: f64,
}

fn run_population<L: AffineLaw + ?Sized>(
    law: &L,
    s: f64,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<PopulationRun> {
    use rayon::prelude::*;

    let d = law.dim();
    let mut walkers: Vec<Walker> = (0..replicas)
        .map(|_| Walker {
            m: Matrix::identity(d),
            next: Matrix::zeros(d),
            sample: AffineMapSample::zeros(d),
            log_c: 0.0,
        })
        .collect();
    let mut rngs: Vec<RngStream> = (0..replicas as u64)
        .map(|r| RngStream::new(seed, r))
        .collect();
    let mut resample_rng = RngStream::new(derive_seed(seed, RESAMPLE_TAG), 0);
    let mut step_log_means = Vec::with_capacity(n_steps);
    let mut ess_sum = 0.0;
    let log_r = (replicas as f64).ln();
    let mut log_w = vec![0.0; replicas];
    let mut idx = vec![0usize; replicas];

    for step in 0..n_steps {
        walkers
            .par_iter_mut()
            .zip(rngs.par_iter_mut())
            .for_each(|(w, rng)| {
                law.sample_into(rng, &mut w.sample);
                mat_mat_into(&w.sample.a, &w.m, &mut w.next);
                let c = operator_norm(&w.next);
                w.log_c = c.ln();
                if c > 0.0 && c.is_finite() {
                    w.next.scale_in_place(1.0 / c);
                }
            });
        for (lw, w) in log_w.iter_mut().zip(&walkers) {
            if !w.log_c.is_finite() {
                return Err(Error::Overflow { step: step + 1 });
            }
            *lw = if s == 0.0 { 0.0 } else { s * w.log_c };
        }
        step_log_means.push(log_sum_exp(&log_w) - log_r);
        let ess = ess_from_log_weights(&log_w);
        ess_sum += ess;

        if s == 0.0 {
            for w in walkers.iter_mut() {
                std::mem::swap(&mut w.m, &mut w.next);
            }
            continue;
        }
        systematic_resample(&log_w, resample_rng.uniform(), &mut idx);
        let chosen: Vec<Matrix> = idx.iter().map(|&i| walkers[i].next.clone()).collect();
        for (w, m) in walkers.iter_mut().zip(chosen) {
            w.m = m;
        }
    }
    Ok(PopulationRun {
        step_log_means,
        mean_ess: ess_sum / n_steps as f64,
    })
}

// Systematic resampling: one uniform offset, R evenly spaced pointers.
fn systematic_resample(log_w: &[f64], u: f64, idx: &mut [usize]) {
    let n = log_w.len();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    let step = total / n as f64;
    let mut pointer = u * step;
    let mut cum = w[0];
    let mut j = 0;
    for slot in idx.iter_mut() {
        while pointer >= cum && j + 1 < n {
            j += 1;
            cum += w[j];
        }
        *slot = j;
        pointer += step;
    }
}

fn batch_means_ci(xs: &[f64]) -> f64 {
    let nb = BATCHES.min(xs.len());
    if nb < 2 {
        return 0.0;
    }
    let size = xs.len() / nb;
    let means: Vec<f64> = (0..nb)
        .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let (_, se) = mean_se(&means);
    t95(nb - 1) * se
}

/// [`estimate_h`] without the effective-sample-size gate; check
/// [`HEstimate::is_reliable`] before trusting the value.
pub fn estimate_h_unchecked<L: AffineLaw + ?Sized>(
    law: &L,
    s: f64,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<HEstimate> {
    if !(s >= 0.0) || !s.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "s = {s} must be finite and >= 0"
        )));
    }
    check_counts(n_steps, replicas)?;
    let run = run_population(law, s, n_steps, replicas, seed)?;
    let log_h_hat = run.step_log_means.iter().sum::<f64>() / n_steps as f64;
    Ok(HEstimate {
        s,
        log_h_hat,
        ci_halfwidth: batch_means_ci(&run.step_log_means),
        ess: run.mean_ess,
        n_steps,
        replicas,
    })
}

/// `log ĥ(s) = (1/n) log Ê‖Π_n‖ˢ`. Fails with [`Error::DegenerateEss`] when
/// the weights are too concentrated for the estimate to be trusted.
pub fn estimate_h<L: AffineLaw + ?Sized>(
    law: &L,
    s: f64,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<HEstimate> {
    let h = estimate_h_unchecked(law, s, n_steps, replicas, seed)?;
    if !h.is_reliable() {
        return Err(Error::DegenerateEss { s, ess: h.ess });
    }
    Ok(h)
}

/// [`estimate_h`] at each step count in [`N_TREND_GRID`].
pub fn h_n_trend<L: AffineLaw + ?Sized>(
    law: &L,
    s: f64,
    replicas: usize,
    seed: u64,
) -> Result<HTrend> {
    let estimates = N_TREND_GRID
        .iter()
        .map(|&n| estimate_h(law, s, n, replicas, seed))
        .collect::<Result<Vec<_>>>()?;
    let k = estimates.len();
    let extrapolated = 2.0 * estimates[k - 1].log_h_hat - estimates[k - 2].log_h_hat;
    Ok(HTrend {
        s,
        estimates,
        extrapolated,
    })
}

pub fn h_bounds<L: AffineLaw + ?Sized>(
    law: &L,
    s: f64,
    replicas: usize,
    seed: u64,
) -> Result<HBounds> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!("s = {s} must be >= 0")));
    }
    check_counts(1, replicas)?;
    let draws = map_replicas(replicas, |r| {
        let mut rng = RngStream::new(seed, r);
        let a = law.sample(&mut rng).a;
        let smin = min_singular_value(&a);
        (smin.powf(s), operator_norm(&a).powf(s), smin == 0.0)
    });
    let lows: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let ups: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let (lower, lower_se) = mean_se(&lows);
    let (upper, upper_se) = mean_se(&ups);
    Ok(HBounds {
        s,
        lower,
        lower_se,
        upper,
        upper_se,
        singular: draws.iter().filter(|d| d.2).count(),
    })
}

/// Root `α` of `log h(α) = 0`, bracketed by doubling (or halving) from
/// `s = 1` and refined by bisection.
pub fn solve_tail_index<L: AffineLaw + ?Sized>(
    law: &L,
    cfg: &TailIndexConfig,
    seed: u64,
) -> Result<TailIndexResult> {
    let eval = |s: f64| estimate_h_unchecked(law, s, cfg.n_steps, cfg.replicas, seed);
    let mut iterations = 0;
    let first = eval(1.0)?;
    iterations += 1;
    if !first.is_reliable() {
        return Err(Error::NoRoot(format!(
            "estimate at s = 1 has ess {:.1}",
            first.ess
        )));
    }
    let (mut lo, mut hi) = if first.log_h_hat < 0.0 {
        let mut lo = 1.0;
        let mut s = 2.0;
        loop {
            if s > cfg.s_max {
                return Err(Error::NoRoot(format!(
                    "log ĥ < 0 up to s_max = {}",
                    cfg.s_max
                )));
            }
            let mut est = eval(s)?;
            iterations += 1;
            let mut backoffs = 0;
            while !est.is_reliable() {
                if backoffs == 4 {
                    return Err(Error::NoRoot(format!(
                        "effective sample size collapsed before a sign change (s ≈ {s:.3})"
                    )));
                }
                backoffs += 1;
                s = 0.5 * (lo + s);
                est = eval(s)?;
                iterations += 1;
            }
            if est.log_h_hat > 0.0 {
                break (lo, s);
            }
            lo = s;
            s *= 2.0;
        }
    } else {
        let mut hi = 1.0;
        let mut s = 0.5;
        loop {
            if s < cfg.tol {
                return Err(Error::NoRoot(
                    "log ĥ ≥ 0 for all small s; h is not decreasing at 0".into(),
                ));
            }
            let est = eval(s)?;
            iterations += 1;
            if est.log_h_hat < 0.0 {
                break (s, hi);
            }
            hi = s;
            s *= 0.5;
        }
    };
    while hi - lo > cfg.tol {
        let mid = 0.5 * (lo + hi);
        let est = eval(mid)?;
        iterations += 1;
        if !est.is_reliable() {
            return Err(Error::NoRoot(format!(
                "effective sample size collapsed at s = {mid:.4}"
            )));
        }
        if est.log_h_hat < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let diagnostics = convexity_check(law, hi, cfg, seed)?;
    Ok(TailIndexResult {
        alpha_hat: 0.5 * (lo + hi),
        bracket: (lo, hi),
        iterations,
        diagnostics,
    })
}

/// Second differences of `log ĥ` on a 9-point grid over `[0, s_hi]`,
/// allowed to dip below zero by twice the pooled standard error.
pub fn convexity_check<L: AffineLaw + ?Sized>(
    law: &L,
    s_hi: f64,
    cfg: &TailIndexConfig,
    seed: u64,
) -> Result<ConvexityCheck> {
    let grid = (0..9)
        .map(|i| {
            let s = s_hi * i as f64 / 8.0;
            estimate_h_unchecked(law, s, cfg.n_steps, cfg.replicas, seed)
                .map(|h| (s, h.log_h_hat, h.ci_halfwidth))
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled_se =
        (grid.iter().map(|g| (g.2 / Z95).powi(2)).sum::<f64>() / grid.len() as f64).sqrt();
    let slack = 2.0 * pooled_se;
    let min_second_difference = grid
        .windows(3)
        .map(|w| w[0].1 - 2.0 * w[1].1 + w[2].1)
        .fold(f64::INFINITY, f64::min);
    Ok(ConvexityCheck {
        grid,
        min_second_difference,
        slack,
        passed: min_second_difference >= -slack,
    })
}

/// Tracks `log E‖Π_n‖^γ` along `n_grid` and classifies its trend.
pub fn moment_dichotomy_probe<L: AffineLaw + ?Sized>(
    law: &L,
    gamma: f64,
    alpha_hat: f64,
    n_grid: &[usize],
    replicas: usize,
    seed: u64,
) -> Result<DichotomyReport> {
    if n_grid.len() < 2 || n_grid.windows(2).any(|w| w[0] >= w[1]) || n_grid[0] == 0 {
        return Err(Error::InvalidArgument(
            "n_grid must be increasing, positive, length ≥ 2".into(),
        ));
    }
    if !(gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma = {gamma} must be >= 0"
        )));
    }
    check_counts(1, replicas)?;
    let n_max = *n_grid.last().expect("nonempty");
    let run = run_population(law, gamma, n_max, replicas, seed)?;
    if run.mean_ess < ESS_FLOOR {
        return Err(Error::DegenerateEss {
            s: gamma,
            ess: run.mean_ess,
        });
    }
    let mut cum = 0.0;
    let mut cumulative = Vec::with_capacity(n_max);
    for l in &run.step_log_means {
        cum += l;
        cumulative.push(cum);
    }
    let points: Vec<(usize, f64)> = n_grid.iter().map(|&n| (n, cumulative[n - 1])).collect();
    let x: Vec<f64> = points.iter().map(|p| p.0 as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    let fit = ols(&x, &y).expect("distinct grid points");
    let trend = if fit.slope.abs() <= 2.0 * fit.slope_se || fit.slope == 0.0 {
        Trend::Flat
    } else if fit.slope < 0.0 {
        Trend::Decreasing
    } else {
        Trend::Increasing
    };
    let consistent = match trend {
        Trend::Decreasing => gamma < alpha_hat,
        Trend::Increasing => gamma > alpha_hat,
        Trend::Flat => gamma == 0.0,
    };
    Ok(DichotomyReport {
        gamma,
        alpha_hat,
        points,
        slope: fit.slope,
        slope_se: fit.slope_se,
        trend,
        consistent,
        ess: run.mean_ess,
    })
}
