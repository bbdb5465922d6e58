//! First exits of `X_{n+1} = A X_n + B` from the closed ball `{|x| ≤ R}`.
//!
//! Replicas that have not exited by the step cap are censored and enter
//! means at the cap, so a mean with censored replicas is a lower bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{mat_mat_into, mat_vec_into, operator_norm, Matrix, Vector};
use crate::model::{AffineLaw, AffineMapSample, Model, ModelSpec};
use crate::rng::RngStream;
use crate::stats::{map_replicas, mean_se, Z95};

/// Any component beyond this magnitude terminates the path as exited.
pub const OVERFLOW_THRESHOLD: f64 = 1e150;
/// Batches with a larger censored fraction are flagged unreliable.
pub const CENSORED_TOLERANCE: f64 = 1e-3;
const MAX_CAP: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub x: Vector,
    pub step: u64,
    pub overflowed: bool,
}

impl TrajectoryState {
    pub fn new(x0: Vector) -> Self {
        let overflowed = x0.max_abs() > OVERFLOW_THRESHOLD;
        TrajectoryState {
            x: x0,
            step: 0,
            overflowed,
        }
    }

    /// One step `x ← A x + B`, using `buf` as scratch.
    pub fn advance(&mut self, sample: &AffineMapSample, buf: &mut [f64]) {
        sample.apply_into(self.x.as_slice(), buf);
        self.x.0.copy_from_slice(buf);
        self.step += 1;
        if !(self.x.max_abs() <= OVERFLOW_THRESHOLD) {
            self.overflowed = true;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExitRecord {
    Exited { tau: u64, exit_point: Vector },
    Censored { cap: u64 },
}

impl ExitRecord {
    pub fn tau(&self) -> Option<u64> {
        match self {
            ExitRecord::Exited { tau, .. } => Some(*tau),
            ExitRecord::Censored { .. } => None,
        }
    }

    /// Exit time, or the cap for a censored path.
    pub fn tau_or_cap(&self) -> u64 {
        match self {
            ExitRecord::Exited { tau, .. } => *tau,
            ExitRecord::Censored { cap } => *cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitBatchStats {
    pub r: f64,
    pub replicas: usize,
    pub censored: usize,
    pub censored_frac: f64,
    pub mean_tau: f64,
    pub ci_halfwidth: f64,
    /// Mean of `log |X_τ|` over exited replicas.
    pub mean_log_exit_norm: f64,
    /// Smallest exit time among exited replicas.
    pub min_tau: Option<u64>,
    pub cap: u64,
}

impl ExitBatchStats {
    pub fn unreliable(&self) -> bool {
        self.censored_frac > CENSORED_TOLERANCE
    }
}

/// How the step cap is chosen for a radius `R`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum CapPolicy {
    Fixed {
        cap: u64,
    },
    /// `10·⌈R^{α̂+0.5}⌉`.
    Contractive {
        alpha_hat: f64,
    },
    /// `10⁴·⌈log R⌉`.
    Explosive,
}

impl CapPolicy {
    pub fn cap(&self, r: f64) -> u64 {
        let raw = match *self {
            CapPolicy::Fixed { cap } => return cap.max(1),
            CapPolicy::Contractive { alpha_hat } => 10.0 * r.powf(alpha_hat + 0.5).ceil(),
            CapPolicy::Explosive => 1e4 * r.ln().ceil().max(1.0),
        };
        if raw.is_finite() && raw < MAX_CAP as f64 {
            (raw as u64).max(1)
        } else {
            MAX_CAP
        }
    }
}

fn check_start<L: AffineLaw + ?Sized>(law: &L, x0: &Vector, r: f64) -> Result<()> {
    if x0.dim() != law.dim() {
        return Err(Error::DimensionMismatch {
            expected: law.dim(),
            found: x0.dim(),
        });
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "radius {r} must be positive and finite"
        )));
    }
    Ok(())
}

/// Runs one path from `x0` until `|X_n| > R` or `n = cap`.
pub fn simulate_exit<L: AffineLaw + ?Sized>(
    law: &L,
    x0: &Vector,
    r: f64,
    cap: u64,
    rng: &mut RngStream,
) -> ExitRecord {
    let mut state = TrajectoryState::new(x0.clone());
    if state.overflowed || state.x.norm() > r {
        return ExitRecord::Exited {
            tau: 0,
            exit_point: state.x,
        };
    }
    let mut sample = AffineMapSample::zeros(law.dim());
    let mut buf = vec![0.0; law.dim()];
    while state.step < cap {
        law.sample_into(rng, &mut sample);
        state.advance(&sample, &mut buf);
        if state.overflowed || state.x.norm() > r {
            return ExitRecord::Exited {
                tau: state.step,
                exit_point: state.x,
            };
        }
    }
    ExitRecord::Censored { cap }
}

fn batch_stats(r: f64, cap: u64, records: &[(Option<u64>, f64)]) -> ExitBatchStats {
    let replicas = records.len();
    let taus: Vec<f64> = records
        .iter()
        .map(|(t, _)| t.unwrap_or(cap) as f64)
        .collect();
    let censored = records.iter().filter(|(t, _)| t.is_none()).count();
    let logs: Vec<f64> = records
        .iter()
        .filter(|(t, _)| t.is_some())
        .map(|(_, l)| *l)
        .collect();
    let (mean_tau, se) = mean_se(&taus);
    let mean_log_exit_norm = if logs.is_empty() {
        f64::NAN
    } else {
        logs.iter().sum::<f64>() / logs.len() as f64
    };
    ExitBatchStats {
        r,
        replicas,
        censored,
        censored_frac: censored as f64 / replicas as f64,
        mean_tau,
        ci_halfwidth: Z95 * se,
        mean_log_exit_norm,
        min_tau: records.iter().filter_map(|(t, _)| *t).min(),
        cap,
    }
}

/// Mean exit time over independent replicas; replica `r` uses stream `r`.
pub fn estimate_mean_exit<L: AffineLaw + ?Sized>(
    law: &L,
    x0: &Vector,
    r: f64,
    replicas: usize,
    cap: u64,
    seed: u64,
) -> Result<ExitBatchStats> {
    check_start(law, x0, r)?;
    if replicas < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 replicas are required".into(),
        ));
    }
    if cap == 0 {
        return Err(Error::InvalidArgument("cap must be at least 1".into()));
    }
    let records = map_replicas(replicas, |i| {
        let mut rng = RngStream::new(seed, i);
        match simulate_exit(law, x0, r, cap, &mut rng) {
            ExitRecord::Exited { tau, exit_point } => (Some(tau), exit_point.norm().ln()),
            ExitRecord::Censored { .. } => (None, f64::NAN),
        }
    });
    Ok(batch_stats(r, cap, &records))
}

/// First-crossing times of one path for every radius of an increasing
/// grid, each with `log |X_τ|`. `None` marks a radius not crossed within
/// its cap. Crossing times are nondecreasing in the radius.
pub fn sweep_path<L: AffineLaw + ?Sized>(
    law: &L,
    x0: &Vector,
    r_grid: &[f64],
    caps: &[u64],
    rng: &mut RngStream,
) -> Vec<Option<(u64, f64)>> {
    let mut out = vec![None; r_grid.len()];
    let max_cap = caps.iter().copied().max().unwrap_or(0);
    let mut state = TrajectoryState::new(x0.clone());
    let mut sample = AffineMapSample::zeros(law.dim());
    let mut buf = vec![0.0; law.dim()];
    let mut next = 0;
    loop {
        let norm = state.x.norm();
        while next < r_grid.len() && (state.overflowed || norm > r_grid[next]) {
            if state.step <= caps[next] {
                out[next] = Some((state.step, norm.ln()));
            }
            next += 1;
        }
        if next == r_grid.len() || state.step >= max_cap {
            return out;
        }
        law.sample_into(rng, &mut sample);
        state.advance(&sample, &mut buf);
    }
}

/// One [`ExitBatchStats`] per radius, every radius read off the same path
/// within a replica.
pub fn exit_sweep<L: AffineLaw + ?Sized>(
    law: &L,
    x0: &Vector,
    r_grid: &[f64],
    replicas: usize,
    cap: &CapPolicy,
    seed: u64,
) -> Result<Vec<ExitBatchStats>> {
    if r_grid.is_empty() || r_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "R grid must be nonempty and strictly increasing".into(),
        ));
    }
    for &r in r_grid {
        check_start(law, x0, r)?;
    }
    if replicas < 2 {
        return Err(Error::InvalidArgument(
            "at least 2 replicas are required".into(),
        ));
    }
    let caps: Vec<u64> = r_grid.iter().map(|&r| cap.cap(r)).collect();
    let paths = map_replicas(replicas, |i| {
        let mut rng = RngStream::new(seed, i);
        sweep_path(law, x0, r_grid, &caps, &mut rng)
    });
    Ok(r_grid
        .iter()
        .enumerate()
        .map(|(j, &r)| {
            let records: Vec<(Option<u64>, f64)> = paths
                .iter()
                .map(|p| match p[j] {
                    Some((t, l)) => (Some(t), l),
                    None => (None, f64::NAN),
                })
                .collect();
            batch_stats(r, caps[j], &records)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub max_relative_deviation: f64,
    /// Steps compared before the end or an overflow.
    pub steps_checked: usize,
}

/// Compares `X_k(y) − X_k(z)` with `Π_k (y − z)` along shared draws,
/// relative to `|X_k(y)| + |X_k(z)|`.
pub fn coupled_difference_check<L: AffineLaw + ?Sized>(
    law: &L,
    y: &Vector,
    z: &Vector,
    n: usize,
    seed: u64,
) -> Result<CouplingReport> {
    let d = law.dim();
    for v in [y, z] {
        if v.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: v.dim(),
            });
        }
    }
    let diff0 = y.sub(z);
    let mut rng = RngStream::new(seed, 0);
    let mut sample = AffineMapSample::zeros(d);
    let (mut xy, mut xz) = (y.clone(), z.clone());
    let mut buf = vec![0.0; d];
    let mut m = Matrix::identity(d);
    let mut next = Matrix::zeros(d);
    let mut log_norm = 0.0;
    let mut pred = vec![0.0; d];
    let mut worst: f64 = 0.0;
    let mut steps_checked = 0;
    for _ in 0..n {
        law.sample_into(&mut rng, &mut sample);
        sample.apply_into(xy.as_slice(), &mut buf);
        xy.0.copy_from_slice(&buf);
        sample.apply_into(xz.as_slice(), &mut buf);
        xz.0.copy_from_slice(&buf);
        mat_mat_into(&sample.a, &m, &mut next);
        let c = operator_norm(&next);
        if xy.max_abs() > OVERFLOW_THRESHOLD || xz.max_abs() > OVERFLOW_THRESHOLD || !c.is_finite()
        {
            break;
        }
        if c == 0.0 {
            // Π_k = 0: the trajectories must have merged.
            let dev = xy.sub(&xz).norm();
            worst = worst.max(if dev == 0.0 { 0.0 } else { f64::INFINITY });
            steps_checked += 1;
            break;
        }
        next.scale_in_place(1.0 / c);
        std::mem::swap(&mut m, &mut next);
        log_norm += c.ln();
        mat_vec_into(&m, diff0.as_slice(), &mut pred);
        let scale = log_norm.exp();
        let pred_v = Vector(pred.iter().map(|p| p * scale).collect());
        let actual = xy.sub(&xz);
        // The difference is formed from states of size |X_k|, so rounding
        // is measured against that size rather than against |Π_k (y − z)|,
        // which can shrink far below it.
        let denom = xy.norm() + xz.norm();
        let err = actual.sub(&pred_v).norm();
        let rel = if err == 0.0 {
            0.0
        } else if denom == 0.0 || !denom.is_finite() {
            break;
        } else {
            err / denom
        };
        worst = worst.max(rel);
        steps_checked += 1;
    }
    Ok(CouplingReport {
        max_relative_deviation: worst,
        steps_checked,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub paths: usize,
    pub violations: usize,
    /// Paths hitting the cap before all three exits; excluded from the count.
    pub censored: usize,
}

/// Per path: the vector exit `τ_R`, the first `n` with squared return
/// `X_n² > R` and the vector exit `τ_{√p R}`; counts violations of
/// `τ_R ≤ τ̂_R ≤ τ_{√p R} + p`.
pub fn arch_sandwich_check(
    model: &Model,
    x0: &Vector,
    r: f64,
    replicas: usize,
    cap: u64,
    seed: u64,
) -> Result<SandwichReport> {
    let p = match model.spec() {
        ModelSpec::Arch { alphas, .. } => alphas.len() - 1,
        _ => {
            return Err(Error::InvalidArgument(
                "sandwich check needs an ARCH model".into(),
            ))
        }
    };
    check_start(model, x0, r)?;
    if x0.0.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument(
            "ARCH state must be componentwise nonnegative".into(),
        ));
    }
    let r_wide = (p as f64).sqrt() * r;
    let outcomes = map_replicas(replicas, |i| {
        let mut rng = RngStream::new(seed, i);
        let mut state = TrajectoryState::new(x0.clone());
        let mut sample = AffineMapSample::zeros(p);
        let mut buf = vec![0.0; p];
        let (mut tau, mut tau_hat, mut tau_wide) = (None, None, None);
        loop {
            let norm = state.x.norm();
            let n = state.step;
            if tau.is_none() && (state.overflowed || norm > r) {
                tau = Some(n);
            }
            if tau_hat.is_none() && n >= 1 && (state.overflowed || state.x[0] > r) {
                tau_hat = Some(n);
            }
            if tau_wide.is_none() && (state.overflowed || norm > r_wide) {
                tau_wide = Some(n);
            }
            if let (Some(a), Some(b), Some(c)) = (tau, tau_hat, tau_wide) {
                return Some(a <= b && b <= c + p as u64);
            }
            if n >= cap {
                return None;
            }
            model.sample_into(&mut rng, &mut sample);
            state.advance(&sample, &mut buf);
        }
    });
    Ok(SandwichReport {
        paths: replicas,
        violations: outcomes.iter().filter(|o| **o == Some(false)).count(),
        censored: outcomes.iter().filter(|o| o.is_none()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScalarLaw;

    fn doubling() -> Model {
        ModelSpec::deterministic_scalar(2.0, 0.0).build().unwrap()
    }

    #[test]
    fn doubling_exit_is_strict() {
        let mut rng = RngStream::new(0, 0);
        let rec = simulate_exit(&doubling(), &Vector(vec![1.0]), 8.0, 100, &mut rng);
        assert_eq!(rec.tau(), Some(4));
        match rec {
            ExitRecord::Exited { exit_point, .. } => assert_eq!(exit_point, Vector(vec![16.0])),
            _ => unreachable!(),
        }
    }

    #[test]
    fn contraction_is_censored() {
        let m = ModelSpec::deterministic_scalar(0.5, 0.0).build().unwrap();
        let mut rng = RngStream::new(0, 0);
        for cap in [1, 10, 1000] {
            assert_eq!(
                simulate_exit(&m, &Vector(vec![1.0]), 10.0, cap, &mut rng),
                ExitRecord::Censored { cap }
            );
        }
    }

    #[test]
    fn start_outside_exits_at_zero() {
        let mut rng = RngStream::new(0, 0);
        let rec = simulate_exit(&doubling(), &Vector(vec![-5.0]), 3.0, 10, &mut rng);
        assert_eq!(rec.tau(), Some(0));
    }

    #[test]
    fn overflow_counts_as_exit() {
        let m = ModelSpec::deterministic_scalar(1e100, 0.0).build().unwrap();
        let mut rng = RngStream::new(0, 0);
        let rec = simulate_exit(&m, &Vector(vec![1.0]), 1e149, 10, &mut rng);
        assert_eq!(rec.tau(), Some(2));
    }

    #[test]
    fn deterministic_mean_has_zero_width() {
        let s = estimate_mean_exit(&doubling(), &Vector(vec![1.0]), 100.0, 16, 1000, 1).unwrap();
        assert_eq!(s.mean_tau, 7.0);
        assert_eq!(s.ci_halfwidth, 0.0);
        assert_eq!(s.censored, 0);
    }

    #[test]
    fn sweep_on_doubling_grid() {
        let stats = exit_sweep(
            &doubling(),
            &Vector(vec![1.0]),
            &[8.0, 16.0],
            4,
            &CapPolicy::Fixed { cap: 100 },
            0,
        )
        .unwrap();
        assert_eq!(stats[0].mean_tau, 4.0);
        assert_eq!(stats[1].mean_tau, 5.0);
    }

    #[test]
    fn sweep_rejects_unsorted_grid() {
        assert!(exit_sweep(
            &doubling(),
            &Vector(vec![1.0]),
            &[8.0, 8.0],
            4,
            &CapPolicy::Explosive,
            0
        )
        .is_err());
    }

    #[test]
    fn caps_by_policy() {
        assert_eq!(CapPolicy::Fixed { cap: 7 }.cap(1e9), 7);
        assert_eq!(CapPolicy::Contractive { alpha_hat: 1.5 }.cap(10.0), 1000);
        assert_eq!(CapPolicy::Explosive.cap(100.0), 50_000);
    }

    #[test]
    fn coupling_same_start_is_zero() {
        let m = ModelSpec::lognormal(-0.5, 1.0).build().unwrap();
        let y = Vector(vec![0.3]);
        let rep = coupled_difference_check(&m, &y, &y, 20, 0).unwrap();
        assert_eq!(rep.max_relative_deviation, 0.0);
    }

    #[test]
    fn coupling_one_step_is_tight() {
        let m = ModelSpec::arch(&[1.0, 0.4, 0.3]).build().unwrap();
        let rep =
            coupled_difference_check(&m, &Vector(vec![1.0, 2.0]), &Vector(vec![0.5, 0.1]), 1, 3)
                .unwrap();
        assert!(rep.max_relative_deviation <= 1e-12);
    }

    #[test]
    fn sandwich_p1_is_identity() {
        let m = ModelSpec::arch(&[1.0, 0.9]).build().unwrap();
        let rep = arch_sandwich_check(&m, &Vector(vec![0.0]), 50.0, 500, 100_000, 2).unwrap();
        assert_eq!(rep.violations, 0);
        assert_eq!(rep.censored, 0);
    }

    #[test]
    fn sandwich_rejects_other_models() {
        let m = ModelSpec::scalar(
            ScalarLaw::Constant { value: 2.0 },
            ScalarLaw::Constant { value: 0.0 },
        )
        .build()
        .unwrap();
        assert!(arch_sandwich_check(&m, &Vector(vec![0.0]), 5.0, 10, 10, 0).is_err());
    }
}
