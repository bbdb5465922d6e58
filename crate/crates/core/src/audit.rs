//! Monte Carlo verdicts on the standing assumptions of a model.
//!
//! Every check returns an [`AuditEntry`] whose detail string records the
//! sample sizes and thresholds that produced the verdict. Verdicts that rest
//! on a statistical comparison use 99% normal-approximation confidence.

use serde::{Deserialize, Serialize};

use crate::linalg::{
    invert, mat_mat_into, mat_vec, min_singular_value, operator_norm, Matrix, Vector,
};
use crate::model::{AffineLaw, AffineMapSample};
use crate::rng::{derive_seed, RngStream};
use crate::spectral::{estimate_lyapunov, solve_tail_index, TailIndexConfig, ESS_FLOOR};
use crate::stats::{ess_from_log_weights, map_replicas, Z99};

/// Relative tolerance for `|Ax + B − x|` to count as a fixed point.
pub const FIXED_TOL: f64 = 1e-10;
/// Relative tolerance for `|x·Π y|` to count as zero.
pub const ZERO_TOL: f64 = 1e-12;
/// Floor applied to `log|Ax + B − x|`.
pub const LOG_CLIP: f64 = -700.0;
/// A tail-ratio denominator needs at least this many exceedances.
pub const MIN_DENOMINATOR: u64 = 30;
/// A tail-ratio numerator needs at least this many exceedances.
pub const MIN_NUMERATOR: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub name: String,
    pub verdict: Verdict,
    pub statistic: f64,
    pub detail: String,
}

fn entry(name: &str, verdict: Verdict, statistic: f64, detail: String) -> AuditEntry {
    AuditEntry {
        name: name.to_string(),
        verdict,
        statistic,
        detail,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Contractive,
    Explosive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub regime: Regime,
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.verdict == Verdict::Pass)
    }

    pub fn get(&self, name: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Sample sizes and grids used by [`audit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditBudget {
    /// Draws per probe for the single-step checks.
    pub replicas: usize,
    /// Draws per sampled `x` in the tail-ratio checks.
    pub tail_replicas: usize,
    pub lyapunov_steps: usize,
    pub lyapunov_replicas: usize,
    pub tail_index: TailIndexConfig,
    pub r_grid: Vec<f64>,
    pub z_grid: Vec<f64>,
    /// Draws for the expansion-probability check, which targets rare events.
    pub criterion_replicas: usize,
    pub support_steps: (usize, usize),
}

impl Default for AuditBudget {
    fn default() -> Self {
        AuditBudget {
            replicas: 100_000,
            tail_replicas: 1_000_000,
            lyapunov_steps: 100,
            lyapunov_replicas: 1_000,
            tail_index: TailIndexConfig::default(),
            r_grid: vec![10.0, 20.0, 40.0],
            z_grid: default_z_grid(),
            criterion_replicas: 1_000_000,
            support_steps: (10_000, 1_000_000),
        }
    }
}

/// `2^{k/4}` for `k = 4, …, 24`, i.e. 2 to 64.
pub fn default_z_grid() -> Vec<f64> {
    (4..=24).map(|k| 2f64.powf(k as f64 / 4.0)).collect()
}

fn random_unit(d: usize, rng: &mut RngStream) -> Vector {
    loop {
        let v = Vector((0..d).map(|_| rng.standard_normal()).collect());
        let n = v.norm();
        if n > 1e-8 {
            return v.scale(1.0 / n);
        }
    }
}

/// Starting points, random points and model-specific candidates, plus the
/// fixed point of the mean map `x ↦ E[A]x + E[B]` when it exists.
pub fn default_fixed_point_candidates<L: AffineLaw + ?Sized>(law: &L, seed: u64) -> Vec<Vector> {
    let d = law.dim();
    let mut rng = RngStream::new(derive_seed(seed, 1), 0);
    let mut out = vec![Vector::zeros(d)];
    for scale in [1.0, 10.0] {
        out.push(random_unit(d, &mut rng).scale(scale));
    }
    out.extend(law.fixed_point_candidates());
    if let Some(x) = mean_map_fixed_point(law, 10_000, seed) {
        out.push(x);
    }
    out
}

fn mean_map_fixed_point<L: AffineLaw + ?Sized>(law: &L, draws: usize, seed: u64) -> Option<Vector> {
    let d = law.dim();
    let mut rng = RngStream::new(derive_seed(seed, 2), 0);
    let mut ea = Matrix::zeros(d);
    let mut eb = Vector::zeros(d);
    let mut s = AffineMapSample::zeros(d);
    for _ in 0..draws {
        law.sample_into(&mut rng, &mut s);
        for (e, a) in ea.as_mut_slice().iter_mut().zip(s.a.as_slice()) {
            *e += a;
        }
        for i in 0..d {
            eb[i] += s.b[i];
        }
    }
    let ea = ea.scale(1.0 / draws as f64);
    let eb = eb.scale(1.0 / draws as f64);
    let inv = invert(&Matrix::identity(d).sub(&ea)).ok()?;
    let x = mat_vec(&inv, &eb).ok()?;
    x.is_finite().then_some(x)
}

/// Probability that a candidate is left in place by a random map.
pub fn check_fixed_point<L: AffineLaw + ?Sized>(
    law: &L,
    candidates: &[Vector],
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let d = law.dim();
    let mut worst = (0.0, 0usize);
    for (ci, x) in candidates.iter().enumerate() {
        if x.dim() != d {
            continue;
        }
        let tol = FIXED_TOL * (1.0 + x.norm());
        let fixed = map_replicas(replicas, |r| {
            let mut rng = RngStream::new(derive_seed(seed, ci as u64), r);
            let s = law.sample(&mut rng);
            s.apply(x).sub(x).norm() < tol
        })
        .into_iter()
        .filter(|f| *f)
        .count();
        let frac = fixed as f64 / replicas as f64;
        if frac >= worst.0 {
            worst = (frac, ci);
        }
    }
    let verdict = if worst.0 < 1.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let x = &candidates[worst.1];
    entry(
        "fixed_point",
        verdict,
        worst.0,
        format!(
            "max P(|Ax+B-x| < {FIXED_TOL:e}(1+|x|)) over {} candidates, {replicas} draws each; worst x = {:?}",
            candidates.len(),
            x.as_slice()
        ),
    )
}

// Number of draws with |Ax + B| > t·R for each threshold t.
fn exceedance_counts<L: AffineLaw + ?Sized>(
    law: &L,
    x: &Vector,
    r: f64,
    thresholds: &[f64],
    replicas: usize,
    seed: u64,
) -> Vec<u64> {
    const CHUNKS: usize = 64;
    let per = replicas.div_ceil(CHUNKS);
    let partial = map_replicas(CHUNKS, |c| {
        let mut rng = RngStream::new(seed, c);
        let mut s = AffineMapSample::zeros(law.dim());
        let mut buf = vec![0.0; law.dim()];
        let mut counts = vec![0u64; thresholds.len()];
        let n = per.min(replicas.saturating_sub(c as usize * per));
        for _ in 0..n {
            law.sample_into(&mut rng, &mut s);
            s.apply_into(x.as_slice(), &mut buf);
            let y = Vector(buf.clone()).norm() / r;
            for (k, t) in counts.iter_mut().zip(thresholds) {
                if y > *t {
                    *k += 1;
                }
            }
        }
        counts
    });
    let mut total = vec![0u64; thresholds.len()];
    for p in partial {
        for (t, c) in total.iter_mut().zip(p) {
            *t += c;
        }
    }
    total
}

/// Points of the closed ball `B_R`: the centre, the ends of every axis,
/// and random points on the sphere and inside the ball.
pub fn ball_points(d: usize, r: f64, rng: &mut RngStream) -> Vec<Vector> {
    let mut out = vec![Vector::zeros(d)];
    for i in 0..d.min(4) {
        out.push(Vector::basis(d, i).scale(r));
        out.push(Vector::basis(d, i).scale(-r));
    }
    out.push(Vector(vec![r / (d as f64).sqrt(); d]));
    for _ in 0..2 {
        out.push(random_unit(d, rng).scale(r));
    }
    for _ in 0..2 {
        let rad = r * rng.uniform().powf(1.0 / d as f64);
        out.push(random_unit(d, rng).scale(rad));
    }
    out
}

struct RatioCurve {
    x: Vector,
    r: f64,
    /// Lower 99% bound on the power-law exponent from the raw counts.
    exponent_bound: f64,
    /// `(log z, log p(z)/p(1), variance)` for resolvable `z`.
    points: Vec<(f64, f64, f64)>,
}

fn ratio_curves<L: AffineLaw + ?Sized>(
    law: &L,
    r_grid: &[f64],
    z_grid: &[f64],
    replicas: usize,
    seed: u64,
) -> (Vec<RatioCurve>, usize, usize) {
    let d = law.dim();
    let mut rng = RngStream::new(derive_seed(seed, 3), 0);
    let mut thresholds = vec![1.0];
    thresholds.extend_from_slice(z_grid);
    let mut curves = Vec::new();
    let (mut probed, mut resolvable) = (0, 0);
    for (ri, &r) in r_grid.iter().enumerate() {
        for (xi, x) in ball_points(d, r, &mut rng).into_iter().enumerate() {
            probed += 1;
            let stream_seed = derive_seed(seed, 1000 * ri as u64 + xi as u64 + 7);
            let counts = exceedance_counts(law, &x, r, &thresholds, replicas, stream_seed);
            let c1 = counts[0];
            if c1 < MIN_DENOMINATOR {
                continue;
            }
            resolvable += 1;
            let c1f = c1 as f64;
            let points = z_grid
                .iter()
                .zip(&counts[1..])
                .filter(|(_, &c)| c >= MIN_NUMERATOR)
                .map(|(&z, &c)| {
                    let cf = c as f64;
                    let var = (1.0 / cf - 1.0 / c1f).max(1.0 / (c1f * c1f));
                    (z.ln(), (cf / c1f).ln(), var)
                })
                .collect();
            let exponent_bound = z_grid
                .iter()
                .zip(&counts[1..])
                .map(|(&z, &c)| {
                    let cf = c as f64;
                    let upper = cf + Z99 * cf.sqrt() + Z99 * Z99;
                    -(upper / c1f).ln() / z.ln()
                })
                .fold(f64::NEG_INFINITY, f64::max);
            curves.push(RatioCurve {
                x,
                r,
                exponent_bound,
                points,
            });
        }
    }
    (curves, probed, resolvable)
}

// Weighted fit y ≈ −β u through the origin; returns (β, se).
fn origin_slope(points: &[(f64, f64, f64)]) -> (f64, f64) {
    let (mut suu, mut suy) = (0.0, 0.0);
    for &(u, y, v) in points {
        suu += u * u / v;
        suy += u * y / v;
    }
    (-suy / suu, 1.0 / suu.sqrt())
}

// Weighted fit y ≈ b u + κ u² through the origin; returns the curvature
// moments (Σw u²'², Σw u²' y') after partialling out u.
fn curvature_moments(points: &[(f64, f64, f64)]) -> (f64, f64) {
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, y, v) in points {
        let w = 1.0 / v;
        let q = u * u;
        s11 += w * u * u;
        s12 += w * u * q;
        s22 += w * q * q;
        s1y += w * u * y;
        s2y += w * q * y;
    }
    (s22 - s12 * s12 / s11, s2y - s12 * s1y / s11)
}

/// Decay of `p(z,R,x)/p(1,R,x)` in `z`, with `p(z,R,x) = P(|Ax+B| > zR)`.
///
/// Each resolvable `x` gets a power-law exponent (weighted log–log slope)
/// and a curvature term. Passes when the slowest exponent exceeds
/// `alpha_hat`, or when the pooled curvature shows decay faster than every
/// power and no individual `x` decays polynomially below `alpha_hat`.
pub fn check_tail_ratio<L: AffineLaw + ?Sized>(
    law: &L,
    alpha_hat: Option<f64>,
    r_grid: &[f64],
    z_grid: &[f64],
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let (curves, probed, resolvable) = ratio_curves(law, r_grid, z_grid, replicas, seed);
    let sizes = format!(
        "{probed} points x in B_R for R in {r_grid:?}, {replicas} draws each, {} z values in [{:.3}, {:.3}]",
        z_grid.len(),
        z_grid.first().copied().unwrap_or(f64::NAN),
        z_grid.last().copied().unwrap_or(f64::NAN)
    );
    if curves.is_empty() {
        let detail = format!("no x with at least {MIN_DENOMINATOR} exceedances of R; {sizes}");
        return entry("tail_ratio", Verdict::Inconclusive, f64::NAN, detail);
    }
    // Fitted exponent where the curve is resolved, else the count bound.
    let mut worst = (f64::INFINITY, f64::NAN, 0usize);
    let (mut pooled_info, mut pooled_score) = (0.0, 0.0);
    let mut slow_polynomial = None;
    let mut fitted = 0;
    for (i, c) in curves.iter().enumerate() {
        let (beta, se) = if c.points.is_empty() {
            (c.exponent_bound, f64::NAN)
        } else {
            fitted += 1;
            origin_slope(&c.points)
        };
        if beta < worst.0 {
            worst = (beta, se, i);
        }
        let (info, score) = if c.points.len() >= 2 {
            curvature_moments(&c.points)
        } else {
            (0.0, 0.0)
        };
        pooled_info += info;
        pooled_score += score;
        let own_t = if info > 0.0 { score / info.sqrt() } else { 0.0 };
        if let Some(a) = alpha_hat {
            if c.points.len() >= 3 && beta <= a && own_t >= -Z99 {
                slow_polynomial.get_or_insert((i, beta));
            }
        }
    }
    let pooled_t = if pooled_info > 0.0 {
        pooled_score / pooled_info.sqrt()
    } else {
        0.0
    };
    let super_poly = pooled_t < -Z99;
    let (beta, beta_se, wi) = worst;
    let alpha_txt = alpha_hat.map_or("unavailable".to_string(), |a| format!("{a:.4}"));
    let detail = format!(
        "worst exponent {beta:.4} (se {beta_se:.4}) at R = {}, x = {:?}; alpha_hat {alpha_txt}; pooled curvature t = {pooled_t:.2} (threshold {:.3}); {fitted} of {resolvable} resolvable x fitted, others bounded from counts; {sizes}",
        curves[wi].r,
        curves[wi].x.as_slice(),
        -Z99,
    );
    let verdict = match (alpha_hat, slow_polynomial) {
        (Some(_), Some(_)) => Verdict::Fail,
        (Some(a), None) if beta > a || super_poly => Verdict::Pass,
        (None, _) if super_poly => Verdict::Pass,
        _ => Verdict::Inconclusive,
    };
    entry("tail_ratio", verdict, beta, detail)
}

/// Logarithmic decay `p(z)/p(1) ≲ C (log z)^{−β}` for the explosive regime,
/// fitted on the upper half of each resolved curve; passes when the slowest
/// `β` exceeds 1.
pub fn check_log_tail_ratio<L: AffineLaw + ?Sized>(
    law: &L,
    r_grid: &[f64],
    z_grid: &[f64],
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let (curves, probed, resolvable) = ratio_curves(law, r_grid, z_grid, replicas, seed);
    let mut worst: Option<(f64, f64)> = None;
    let mut fitted = 0;
    for c in curves.iter() {
        // The bound carries a free constant, so only the decay over the
        // upper half of the resolved z range is fitted.
        let tail = &c.points[c.points.len() / 2..];
        if tail.len() < 3 {
            continue;
        }
        let pts: Vec<(f64, f64, f64)> = tail.iter().map(|&(u, y, v)| (u.ln(), y, v)).collect();
        let (sw, sx, sy) = pts.iter().fold((0.0, 0.0, 0.0), |a, &(x, y, v)| {
            (a.0 + 1.0 / v, a.1 + x / v, a.2 + y / v)
        });
        let (mx, my) = (sx / sw, sy / sw);
        let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, &(x, y, v)| {
            (a.0 + (x - mx) * (x - mx) / v, a.1 + (x - mx) * (y - my) / v)
        });
        if sxx <= 0.0 {
            continue;
        }
        fitted += 1;
        let beta = -sxy / sxx;
        let se = 1.0 / sxx.sqrt();
        if worst.is_none_or(|w| beta < w.0) {
            worst = Some((beta, se));
        }
    }
    let sizes = format!("{probed} points x, R in {r_grid:?}, {replicas} draws each; {fitted} of {resolvable} resolvable x fitted");
    match worst {
        None => entry(
            "log_tail_ratio",
            Verdict::Inconclusive,
            f64::NAN,
            format!("no x with >= 3 resolvable z values in the upper half of its range; {sizes}"),
        ),
        Some((beta, se)) => {
            let verdict = if beta > 1.0 {
                Verdict::Pass
            } else if beta + Z99 * se < 1.0 {
                Verdict::Fail
            } else {
                Verdict::Inconclusive
            };
            entry(
                "log_tail_ratio",
                verdict,
                beta,
                format!("worst beta {beta:.4} (se {se:.4}) against 1; {sizes}"),
            )
        }
    }
}

/// `P(|x·Π_{n₀} y| ≤ 1e-12 ‖Π_{n₀}‖)` over canonical and random pairs.
pub fn check_nondegeneracy<L: AffineLaw + ?Sized>(
    law: &L,
    n0_max: usize,
    random_pairs: usize,
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let d = law.dim();
    let mut rng = RngStream::new(derive_seed(seed, 4), 0);
    let mut pairs = Vec::new();
    for i in 0..d {
        for j in 0..d {
            pairs.push((Vector::basis(d, i), Vector::basis(d, j)));
        }
    }
    for _ in 0..random_pairs {
        pairs.push((random_unit(d, &mut rng), random_unit(d, &mut rng)));
    }
    let n0_max = n0_max.max(1);
    // zero[n0-1][pair] counts near-zero draws.
    let per_replica = map_replicas(replicas, |r| {
        let mut rng = RngStream::new(seed, r);
        let mut s = AffineMapSample::zeros(d);
        let mut m = Matrix::identity(d);
        let mut next = Matrix::zeros(d);
        let mut flags = vec![vec![false; pairs.len()]; n0_max];
        for row in flags.iter_mut() {
            law.sample_into(&mut rng, &mut s);
            mat_mat_into(&s.a, &m, &mut next);
            std::mem::swap(&mut m, &mut next);
            let norm = operator_norm(&m);
            for (flag, (x, y)) in row.iter_mut().zip(&pairs) {
                let v = mat_vec(&m, y).expect("dims").dot(x);
                *flag = !(v.abs() > ZERO_TOL * norm);
            }
            if norm > 0.0 && norm.is_finite() {
                m.scale_in_place(1.0 / norm);
            }
        }
        flags
    });
    let mut best: Option<(usize, f64)> = None;
    let mut worst_overall = (0.0, 1usize);
    for n0 in 1..=n0_max {
        let max_frac = (0..pairs.len())
            .map(|p| per_replica.iter().filter(|f| f[n0 - 1][p]).count() as f64 / replicas as f64)
            .fold(0.0, f64::max);
        if max_frac > worst_overall.0 {
            worst_overall = (max_frac, n0);
        }
        if max_frac < 1.0 && best.is_none() {
            best = Some((n0, max_frac));
        }
    }
    let sizes = format!(
        "{} direction pairs ({} canonical, {random_pairs} random), n0 in 1..={n0_max}, {replicas} draws, zero if |x.Py| <= {ZERO_TOL:e}|P|",
        pairs.len(),
        d * d
    );
    match best {
        Some((n0, frac)) => entry(
            "nondegeneracy",
            Verdict::Pass,
            frac,
            format!("n0 = {n0}: max zero frequency {frac:.4}; {sizes}"),
        ),
        None => entry(
            "nondegeneracy",
            Verdict::Fail,
            1.0,
            format!("every n0 has a pair with all draws zero; {sizes}"),
        ),
    }
}

/// Default drift grid: the origin, `±e_i` and the diagonal at radii
/// 1, 10, 100, plus the fixed-point candidates.
pub fn default_drift_grid<L: AffineLaw + ?Sized>(law: &L, seed: u64) -> Vec<Vector> {
    let d = law.dim();
    let mut out = vec![Vector::zeros(d)];
    for rad in [1.0, 10.0, 100.0] {
        for i in 0..d {
            out.push(Vector::basis(d, i).scale(rad));
            out.push(Vector::basis(d, i).scale(-rad));
        }
        out.push(Vector(vec![rad / (d as f64).sqrt(); d]));
    }
    out.extend(
        default_fixed_point_candidates(law, seed)
            .into_iter()
            .skip(1),
    );
    out
}

/// `E log|Ax + B − x|` over a grid of `x`.
pub fn check_drift_lower_bound<L: AffineLaw + ?Sized>(
    law: &L,
    x_grid: &[Vector],
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let mut min_mean = (f64::INFINITY, 0usize);
    let mut clipped = 0usize;
    for (xi, x) in x_grid.iter().enumerate() {
        let logs = map_replicas(replicas, |r| {
            let mut rng = RngStream::new(derive_seed(seed, xi as u64), r);
            let s = law.sample(&mut rng);
            let v = s.apply(x).sub(x).norm().ln();
            if v > LOG_CLIP {
                (v, false)
            } else {
                (LOG_CLIP, true)
            }
        });
        clipped += logs.iter().filter(|l| l.1).count();
        let mean = logs.iter().map(|l| l.0).sum::<f64>() / replicas as f64;
        if mean < min_mean.0 {
            min_mean = (mean, xi);
        }
    }
    let total = x_grid.len() * replicas;
    let clip_freq = clipped as f64 / total as f64;
    let verdict = if clip_freq >= 0.5 {
        Verdict::Fail
    } else if clip_freq >= 1e-4 || !min_mean.0.is_finite() {
        Verdict::Inconclusive
    } else {
        Verdict::Pass
    };
    entry(
        "drift_lower_bound",
        verdict,
        min_mean.0,
        format!(
            "min over {} grid points of E log|Ax+B-x| at x = {:?}; log clipped at {LOG_CLIP} with frequency {clip_freq:.2e} (pass below 1e-4, fail at 0.5); {replicas} draws per point",
            x_grid.len(),
            x_grid[min_mean.1].as_slice()
        ),
    )
}

/// Looks for draws with `‖Π_k⁻¹‖ < 1` for `k = 1..=d`, and reports the
/// largest `s` on `s_grid` for which single-step `E‖A‖ˢ` is still stable.
pub fn check_contraction_criterion<L: AffineLaw + ?Sized>(
    law: &L,
    s_grid: &[f64],
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let d = law.dim();
    let draws = map_replicas(replicas, |r| {
        let mut rng = RngStream::new(seed, r);
        let mut s = AffineMapSample::zeros(d);
        law.sample_into(&mut rng, &mut s);
        let first_norm = operator_norm(&s.a);
        let mut m = s.a.clone();
        let mut next = Matrix::zeros(d);
        let mut expands = None;
        for k in 1..=d {
            if k > 1 {
                law.sample_into(&mut rng, &mut s);
                mat_mat_into(&s.a, &m, &mut next);
                std::mem::swap(&mut m, &mut next);
            }
            if min_singular_value(&m) > 1.0 {
                expands = Some(k);
                break;
            }
        }
        (first_norm, expands)
    });
    let hits: Vec<usize> = draws.iter().filter_map(|d| d.1).collect();
    let count = hits.len();
    let log_norms: Vec<f64> = draws.iter().map(|d| d.0.ln()).collect();
    let stable_s = s_grid
        .iter()
        .copied()
        .filter(|&s| {
            let lw: Vec<f64> = log_norms.iter().map(|l| s * l).collect();
            ess_from_log_weights(&lw) >= ESS_FLOOR
        })
        .fold(f64::NAN, f64::max);
    let frac = count as f64 / replicas as f64;
    let verdict = if count > 0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    entry(
        "contraction_criterion",
        verdict,
        frac,
        format!(
            "P(|P_k^-1| < 1) for k <= {d}: {count} of {replicas} draws (shortest k = {}); largest s on grid with ESS >= {ESS_FLOOR} for E|A|^s: {stable_s}",
            hits.iter().min().map_or("none".into(), |k| k.to_string())
        ),
    )
}

/// Median over independent paths of the running maximum of `|X_n|`,
/// after a short and a long run. Never fails: a stalled maximum is only
/// inconclusive.
pub fn check_unbounded_support<L: AffineLaw + ?Sized>(
    law: &L,
    steps: (usize, usize),
    seed: u64,
) -> AuditEntry {
    const PATHS: usize = 8;
    let d = law.dim();
    let maxima = map_replicas(PATHS, |p| {
        let mut rng = RngStream::new(seed, p);
        let mut x = Vector::zeros(d);
        let mut buf = vec![0.0; d];
        let mut s = AffineMapSample::zeros(d);
        let (mut max_short, mut max_long) = (0.0_f64, 0.0_f64);
        for n in 1..=steps.1 {
            law.sample_into(&mut rng, &mut s);
            s.apply_into(x.as_slice(), &mut buf);
            x.0.copy_from_slice(&buf);
            let norm = x.norm();
            if !norm.is_finite() {
                break;
            }
            max_long = max_long.max(norm);
            if n <= steps.0 {
                max_short = max_short.max(norm);
            }
        }
        (max_short, max_long)
    });
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        0.5 * (v[PATHS / 2 - 1] + v[PATHS / 2])
    };
    let short = median(maxima.iter().map(|m| m.0).collect());
    let long = median(maxima.iter().map(|m| m.1).collect());
    let growth = if short > 0.0 { long / short - 1.0 } else { 0.0 };
    let verdict = if growth > 0.01 {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    };
    entry(
        "unbounded_support",
        verdict,
        growth,
        format!(
            "median over {PATHS} paths of max |X_n| grows from {short:.4e} ({} steps) to {long:.4e} ({} steps); pass above 1% growth",
            steps.0, steps.1
        ),
    )
}

/// Draws with a singular `A`.
pub fn check_invertibility<L: AffineLaw + ?Sized>(
    law: &L,
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    let singular = map_replicas(replicas, |r| {
        let mut rng = RngStream::new(seed, r);
        invert(&law.sample(&mut rng).a).is_err()
    })
    .into_iter()
    .filter(|s| *s)
    .count();
    let frac = singular as f64 / replicas as f64;
    entry(
        "invertibility",
        if singular == 0 {
            Verdict::Pass
        } else {
            Verdict::Fail
        },
        frac,
        format!("{singular} singular of {replicas} draws (pivot tolerance 1e-12)"),
    )
}

/// Rank of the orbit span `{Π_n v : n ≥ 1}` for each start vector `v` (canonical
/// axes and random directions); a common invariant proper subspace keeps
/// the orbit of any start inside it rank-deficient.
pub fn check_irreducibility<L: AffineLaw + ?Sized>(law: &L, paths: usize, seed: u64) -> AuditEntry {
    let d = law.dim();
    let mut dir_rng = RngStream::new(derive_seed(seed, 5), 0);
    let mut starts: Vec<Vector> = (0..d).map(|i| Vector::basis(d, i)).collect();
    for _ in 0..4 {
        starts.push(random_unit(d, &mut dir_rng));
    }
    let mut min_rank = (d, 0usize);
    for (si, v) in starts.iter().enumerate() {
        let mut basis: Vec<Vec<f64>> = Vec::new();
        'paths: for p in 0..paths {
            let mut rng = RngStream::new(seed, p as u64);
            let mut x = v.clone();
            let mut s = AffineMapSample::zeros(d);
            for _ in 0..2 * d {
                if basis.len() == d {
                    break 'paths;
                }
                law.sample_into(&mut rng, &mut s);
                x = mat_vec(&s.a, &x).expect("dims");
                let n = x.norm();
                if !(n > 0.0 && n.is_finite()) {
                    break;
                }
                x = x.scale(1.0 / n);
                add_to_span(&mut basis, x.0.clone());
            }
        }
        if basis.len() < min_rank.0 {
            min_rank = (basis.len(), si);
        }
    }
    let (rank, si) = min_rank;
    entry(
        "irreducibility",
        if rank == d { Verdict::Pass } else { Verdict::Inconclusive },
        rank as f64,
        format!(
            "min orbit-span rank {rank} of {d} over {} start vectors (worst {:?}), up to {paths} paths of length {}, tolerance 1e-8",
            starts.len(),
            starts[si].as_slice(),
            2 * d
        ),
    )
}

fn add_to_span(basis: &mut Vec<Vec<f64>>, mut v: Vec<f64>) {
    let n0 = Vector(v.clone()).norm();
    if n0 == 0.0 {
        return;
    }
    for b in basis.iter() {
        let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
        for (x, y) in v.iter_mut().zip(b) {
            *x -= c * y;
        }
    }
    let n = Vector(v.clone()).norm();
    if n > 1e-8 * n0 {
        basis.push(v.into_iter().map(|x| x / n).collect());
    }
}

/// Sign of the Lyapunov exponent against the regime.
pub fn check_lyapunov_sign<L: AffineLaw + ?Sized>(
    law: &L,
    regime: Regime,
    n_steps: usize,
    replicas: usize,
    seed: u64,
) -> AuditEntry {
    match estimate_lyapunov(law, n_steps, replicas, seed) {
        Err(e) => entry(
            "lyapunov_sign",
            Verdict::Inconclusive,
            f64::NAN,
            format!("estimate failed: {e}"),
        ),
        Ok(est) => {
            let (lo, hi) = (
                est.gamma_hat - Z99 * est.std_err,
                est.gamma_hat + Z99 * est.std_err,
            );
            let verdict = match regime {
                Regime::Contractive if hi < 0.0 => Verdict::Pass,
                Regime::Contractive if lo > 0.0 => Verdict::Fail,
                Regime::Explosive if lo > 0.0 => Verdict::Pass,
                Regime::Explosive if hi < 0.0 => Verdict::Fail,
                _ => Verdict::Inconclusive,
            };
            entry(
                "lyapunov_sign",
                verdict,
                est.gamma_hat,
                format!(
                    "gamma_hat {:.5} (se {:.5}), 99% interval [{lo:.5}, {hi:.5}]; {n_steps} steps, {replicas} replicas",
                    est.gamma_hat, est.std_err
                ),
            )
        }
    }
}

/// Runs the checks belonging to `regime` in a fixed order.
pub fn audit<L: AffineLaw + ?Sized>(
    law: &L,
    regime: Regime,
    budget: &AuditBudget,
    seed: u64,
) -> AuditReport {
    let seed_for = |tag: u64| derive_seed(seed, 0xA0D1_7000 + tag);
    let d = law.dim();
    let mut entries = vec![check_lyapunov_sign(
        law,
        regime,
        budget.lyapunov_steps,
        budget.lyapunov_replicas,
        seed_for(0),
    )];
    match regime {
        Regime::Contractive => {
            let s_grid = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
            entries.push(check_contraction_criterion(
                law,
                &s_grid,
                budget.criterion_replicas,
                seed_for(1),
            ));
            let candidates = default_fixed_point_candidates(law, seed_for(2));
            entries.push(check_fixed_point(
                law,
                &candidates,
                budget.replicas,
                seed_for(3),
            ));
            let alpha_hat = solve_tail_index(law, &budget.tail_index, seed_for(4))
                .ok()
                .map(|t| t.alpha_hat);
            entries.push(check_tail_ratio(
                law,
                alpha_hat,
                &budget.r_grid,
                &budget.z_grid,
                budget.tail_replicas,
                seed_for(5),
            ));
            entries.push(check_nondegeneracy(
                law,
                2 * d - 1,
                8,
                budget.replicas.min(10_000),
                seed_for(6),
            ));
            entries.push(check_unbounded_support(
                law,
                budget.support_steps,
                seed_for(7),
            ));
        }
        Regime::Explosive => {
            entries.push(check_invertibility(law, budget.replicas, seed_for(8)));
            entries.push(check_irreducibility(law, 100, seed_for(9)));
            let grid = default_drift_grid(law, seed_for(10));
            entries.push(check_drift_lower_bound(
                law,
                &grid,
                budget.replicas.min(10_000),
                seed_for(11),
            ));
            entries.push(check_log_tail_ratio(
                law,
                &budget.r_grid,
                &budget.z_grid,
                budget.tail_replicas,
                seed_for(12),
            ));
        }
    }
    AuditReport { regime, entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, ScalarLaw};

    fn det_scalar(a: f64, b: f64) -> crate::model::Model {
        ModelSpec::deterministic_scalar(a, b).build().unwrap()
    }

    #[test]
    fn identity_map_has_fixed_points_everywhere() {
        let m = ModelSpec::deterministic(Matrix::identity(2), Vector::zeros(2))
            .build()
            .unwrap();
        let c = default_fixed_point_candidates(&m, 0);
        assert_eq!(check_fixed_point(&m, &c, 100, 0).verdict, Verdict::Fail);
    }

    #[test]
    fn deterministic_fixed_point_is_found() {
        let m = det_scalar(0.5, 1.0);
        let c = default_fixed_point_candidates(&m, 0);
        assert!(c.contains(&Vector(vec![2.0])));
        assert_eq!(check_fixed_point(&m, &c, 100, 0).verdict, Verdict::Fail);
        let e = check_fixed_point(&m, &[Vector(vec![0.0]), Vector(vec![1.0])], 100, 0);
        assert_eq!(e.verdict, Verdict::Pass);
    }

    #[test]
    fn arch_has_no_fixed_point() {
        let m = ModelSpec::arch(&[1.0, 0.3, 0.2]).build().unwrap();
        let c = default_fixed_point_candidates(&m, 5);
        assert_eq!(check_fixed_point(&m, &c, 10_000, 5).verdict, Verdict::Pass);
    }

    #[test]
    fn drift_examples() {
        let grid: Vec<Vector> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&x| Vector(vec![x]))
            .collect();
        let e = check_drift_lower_bound(&det_scalar(2.0, 0.0), &grid, 100, 0);
        assert_eq!(e.verdict, Verdict::Pass);
        assert!(e.statistic.abs() < 1e-15);
        let id = ModelSpec::deterministic(Matrix::identity(2), Vector::zeros(2))
            .build()
            .unwrap();
        let grid = default_drift_grid(&id, 0);
        assert_eq!(
            check_drift_lower_bound(&id, &grid, 100, 0).verdict,
            Verdict::Fail
        );
    }

    #[test]
    fn contraction_criterion_examples() {
        let grid = [1.0, 2.0];
        let up = ModelSpec::deterministic(Matrix::scaled_identity(2, 2.0), Vector::zeros(2))
            .build()
            .unwrap();
        let e = check_contraction_criterion(&up, &grid, 100, 0);
        assert_eq!(e.verdict, Verdict::Pass);
        assert_eq!(e.statistic, 1.0);
        let down = ModelSpec::deterministic(Matrix::scaled_identity(2, 0.5), Vector::zeros(2))
            .build()
            .unwrap();
        assert_eq!(
            check_contraction_criterion(&down, &grid, 100, 0).verdict,
            Verdict::Fail
        );
    }

    #[test]
    fn diag_one_zero_is_degenerate() {
        let m = ModelSpec::deterministic(Matrix::diag(&[1.0, 0.0]), Vector::zeros(2))
            .build()
            .unwrap();
        assert_eq!(check_nondegeneracy(&m, 3, 4, 50, 0).verdict, Verdict::Fail);
    }

    #[test]
    fn arch2_nondegenerate_within_three_steps() {
        let m = ModelSpec::arch(&[1.0, 0.4, 0.3]).build().unwrap();
        assert_eq!(check_nondegeneracy(&m, 3, 4, 200, 0).verdict, Verdict::Pass);
    }

    #[test]
    fn pareto_noise_ratio_exponent() {
        let m = ModelSpec::scalar(
            ScalarLaw::Constant { value: 0.0 },
            ScalarLaw::Pareto {
                scale: 1.0,
                index: 0.5,
            },
        )
        .build()
        .unwrap();
        let e = check_tail_ratio(&m, Some(1.0), &[10.0], &default_z_grid(), 200_000, 0);
        assert_eq!(e.verdict, Verdict::Fail);
        assert!((e.statistic - 0.5).abs() < 0.05, "{}", e.statistic);
    }

    #[test]
    fn gaussian_ratio_decays_fast() {
        let m = ModelSpec::scalar(
            ScalarLaw::Gaussian { mean: 0.0, sd: 0.3 },
            ScalarLaw::Gaussian { mean: 0.0, sd: 3.0 },
        )
        .build()
        .unwrap();
        let e = check_tail_ratio(&m, Some(2.0), &[10.0], &default_z_grid(), 200_000, 1);
        assert_eq!(e.verdict, Verdict::Pass, "{}", e.detail);
    }

    #[test]
    fn irreducibility_of_invariant_subspace() {
        let m = ModelSpec::deterministic(Matrix::diag(&[2.0, 3.0]), Vector::zeros(2))
            .build()
            .unwrap();
        assert_eq!(
            check_irreducibility(&m, 5, 0).verdict,
            Verdict::Inconclusive
        );
        let sgd = ModelSpec::sgd(0.5, 1, Matrix::identity(2), 1.0)
            .build()
            .unwrap();
        assert_eq!(check_irreducibility(&sgd, 20, 0).verdict, Verdict::Pass);
        let rank_one = ModelSpec::deterministic(
            Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap(),
            Vector::zeros(2),
        )
        .build()
        .unwrap();
        assert_eq!(
            check_irreducibility(&rank_one, 5, 0).verdict,
            Verdict::Inconclusive
        );
    }
}
