//! Laws of the random pair `(A, B)` driving `X_{n+1} = A X_n + B`.
//!
//! [`ModelSpec`] is the serializable descriptor; [`Model`] is its validated
//! form, which also caches anything derived once at construction (the
//! Cholesky factor of an SGD data covariance). Simulation code is generic
//! over [`AffineLaw`] so user-defined laws plug in alongside the built-ins.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_psd, Matrix, Vector};
use crate::rng::RngStream;

/// Tolerance for symmetry / semidefiniteness of an SGD covariance.
pub const COVARIANCE_TOL: f64 = 1e-10;

/// One realized draw of the pair `(A, B)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMapSample {
    pub a: Matrix,
    pub b: Vector,
}

impl AffineMapSample {
    pub fn zeros(d: usize) -> Self {
        AffineMapSample {
            a: Matrix::zeros(d),
            b: Vector::zeros(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.b.dim()
    }

    /// `A x + B`, written into `out`.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        crate::linalg::mat_vec_into(&self.a, x, out);
        for (o, b) in out.iter_mut().zip(self.b.as_slice()) {
            *o += b;
        }
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        let mut out = vec![0.0; self.dim()];
        self.apply_into(x.as_slice(), &mut out);
        Vector(out)
    }
}

/// A sampleable law for `(A, B)`.
pub trait AffineLaw: Sync {
    /// State-space dimension `d`.
    fn dim(&self) -> usize;

    /// Overwrites `out` with one independent draw.
    fn sample_into(&self, rng: &mut RngStream, out: &mut AffineMapSample);

    fn sample(&self, rng: &mut RngStream) -> AffineMapSample {
        let mut out = AffineMapSample::zeros(self.dim());
        self.sample_into(rng, &mut out);
        out
    }

    /// Model-specific points worth probing for (near) fixed points.
    fn fixed_point_candidates(&self) -> Vec<Vector> {
        Vec::new()
    }
}

/// Descriptor of a real-valued distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum ScalarLaw {
    Constant {
        value: f64,
    },
    /// `a` with probability `p`, else `b`.
    TwoPoint {
        a: f64,
        b: f64,
        p: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// `exp(N(mu, sigma²))`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
    /// `P(X > t) = (scale / t)^index` for `t ≥ scale`.
    Pareto {
        scale: f64,
        index: f64,
    },
}

impl ScalarLaw {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidModel(m.to_string()));
        match *self {
            ScalarLaw::Constant { value } if !value.is_finite() => bad("constant must be finite"),
            ScalarLaw::TwoPoint { a, b, p } => {
                if !(a.is_finite() && b.is_finite()) || !(0.0..=1.0).contains(&p) {
                    bad("two-point law needs finite values and p in [0,1]")
                } else {
                    Ok(())
                }
            }
            ScalarLaw::Uniform { lo, hi } if !(lo <= hi && lo.is_finite() && hi.is_finite()) => {
                bad("uniform law needs finite lo <= hi")
            }
            ScalarLaw::Gaussian { mean, sd }
                if !(mean.is_finite() && sd >= 0.0 && sd.is_finite()) =>
            {
                bad("gaussian law needs finite mean and sd >= 0")
            }
            ScalarLaw::LogNormal { mu, sigma }
                if !(mu.is_finite() && sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad("lognormal law needs finite mu and sigma >= 0")
            }
            ScalarLaw::Pareto { scale, index } if !(scale > 0.0 && index > 0.0) => {
                bad("pareto law needs scale > 0 and index > 0")
            }
            _ => Ok(()),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            ScalarLaw::Constant { value } => value,
            ScalarLaw::TwoPoint { a, b, p } => {
                if rng.uniform() < p {
                    a
                } else {
                    b
                }
            }
            ScalarLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            ScalarLaw::Gaussian { mean, sd } => rng.gaussian(mean, sd),
            ScalarLaw::LogNormal { mu, sigma } => rng.gaussian(mu, sigma).exp(),
            ScalarLaw::Pareto { scale, index } => scale * rng.uniform_open().powf(-1.0 / index),
        }
    }

    fn mean(&self) -> Option<f64> {
        match *self {
            ScalarLaw::Constant { value } => Some(value),
            ScalarLaw::TwoPoint { a, b, p } => Some(p * a + (1.0 - p) * b),
            ScalarLaw::Uniform { lo, hi } => Some(0.5 * (lo + hi)),
            ScalarLaw::Gaussian { mean, .. } => Some(mean),
            ScalarLaw::LogNormal { mu, sigma } => Some((mu + 0.5 * sigma * sigma).exp()),
            ScalarLaw::Pareto { scale, index } => {
                (index > 1.0).then(|| scale * index / (index - 1.0))
            }
        }
    }
}

/// One atom of an explicit finite law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub p: f64,
    pub a: Matrix,
    pub b: Vector,
}

/// Mini-batch SGD on the quadratic loss `½ E (a·x − b)²` with
/// `a ~ N(0, sigma)` and `b ~ N(0, sigma_b²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdQuadratic {
    pub eta: f64,
    pub batch: usize,
    pub sigma: Matrix,
    pub sigma_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Explicit {
        support: Vec<Atom>,
    },
    Scalar {
        a: ScalarLaw,
        b: ScalarLaw,
    },
    SgdQuadratic(SgdQuadratic),
    /// Heavy-ball SGD on `(X, V)`; step size and data law come from `inner`.
    SgdMomentum {
        gamma: f64,
        inner: SgdQuadratic,
    },
    /// ARCH(p) on squared returns; `alphas = [α₀, α₁, …, α_p]`.
    Arch {
        alphas: Vec<f64>,
        #[serde(default)]
        noise_mean: f64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
    /// GARCH(1, q) on conditional variances.
    Garch {
        alpha0: f64,
        alpha1: f64,
        betas: Vec<f64>,
        #[serde(default)]
        noise_mean: f64,
        #[serde(default = "one")]
        noise_sd: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn scalar(a: ScalarLaw, b: ScalarLaw) -> Self {
        ModelSpec::Scalar { a, b }
    }

    /// `A = exp(N(mu, sigma²))`, `B ~ N(0, 1)`.
    pub fn lognormal(mu: f64, sigma: f64) -> Self {
        ModelSpec::Scalar {
            a: ScalarLaw::LogNormal { mu, sigma },
            b: ScalarLaw::Gaussian { mean: 0.0, sd: 1.0 },
        }
    }

    /// Deterministic scalar map `x ↦ a x + b`.
    pub fn deterministic_scalar(a: f64, b: f64) -> Self {
        ModelSpec::Scalar {
            a: ScalarLaw::Constant { value: a },
            b: ScalarLaw::Constant { value: b },
        }
    }

    /// Deterministic matrix map `x ↦ A x + B`.
    pub fn deterministic(a: Matrix, b: Vector) -> Self {
        ModelSpec::Explicit {
            support: vec![Atom { p: 1.0, a, b }],
        }
    }

    pub fn sgd(eta: f64, batch: usize, sigma: Matrix, sigma_b: f64) -> Self {
        ModelSpec::SgdQuadratic(SgdQuadratic {
            eta,
            batch,
            sigma,
            sigma_b,
        })
    }

    pub fn arch(alphas: &[f64]) -> Self {
        ModelSpec::Arch {
            alphas: alphas.to_vec(),
            noise_mean: 0.0,
            noise_sd: 1.0,
        }
    }

    pub fn garch(alpha0: f64, alpha1: f64, betas: &[f64]) -> Self {
        ModelSpec::Garch {
            alpha0,
            alpha1,
            betas: betas.to_vec(),
            noise_mean: 0.0,
            noise_sd: 1.0,
        }
    }

    /// State-space dimension.
    pub fn dimension(&self) -> usize {
        match self {
            ModelSpec::Explicit { support } => support.first().map_or(0, |s| s.b.dim()),
            ModelSpec::Scalar { .. } => 1,
            ModelSpec::SgdQuadratic(q) => q.sigma.dim(),
            ModelSpec::SgdMomentum { inner, .. } => 2 * inner.sigma.dim(),
            ModelSpec::Arch { alphas, .. } => alphas.len().saturating_sub(1),
            ModelSpec::Garch { betas, .. } => betas.len(),
        }
    }

    pub fn build(&self) -> Result<Model> {
        Model::new(self.clone())
    }
}

/// A validated [`ModelSpec`].
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    chol: Option<Matrix>,
    cumulative: Vec<f64>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        let mut chol = None;
        let mut cumulative = Vec::new();
        match &spec {
            ModelSpec::Explicit { support } => {
                if support.is_empty() {
                    return bad("explicit law needs at least one atom".into());
                }
                let d = support[0].b.dim();
                if d == 0 {
                    return bad("dimension must be at least 1".into());
                }
                let mut total = 0.0;
                for atom in support {
                    if !(atom.p > 0.0) {
                        return bad("atom probabilities must be positive".into());
                    }
                    if atom.a.dim() != d || atom.b.dim() != d {
                        return bad("atoms disagree on dimension".into());
                    }
                    if !atom.a.is_finite() || !atom.b.is_finite() {
                        return bad("atom entries must be finite".into());
                    }
                    total += atom.p;
                    cumulative.push(total);
                }
                if (total - 1.0).abs() > 1e-12 {
                    return bad(format!("atom probabilities sum to {total}, not 1"));
                }
            }
            ModelSpec::Scalar { a, b } => {
                a.validate()?;
                b.validate()?;
            }
            ModelSpec::SgdQuadratic(q) => chol = Some(validate_sgd(q)?),
            ModelSpec::SgdMomentum { gamma, inner } => {
                if !(0.0..1.0).contains(gamma) {
                    return bad(format!("momentum gamma = {gamma} outside [0, 1)"));
                }
                chol = Some(validate_sgd(inner)?);
            }
            ModelSpec::Arch {
                alphas,
                noise_mean,
                noise_sd,
            } => {
                if alphas.len() < 2 {
                    return bad("ARCH needs alphas = [α₀, α₁, …, α_p] with p ≥ 1".into());
                }
                if alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
                    return bad("ARCH coefficients must be finite and nonnegative".into());
                }
                let p = alphas.len() - 1;
                if !(alphas[0] * alphas[p] > 0.0) {
                    return bad("ARCH requires α₀·α_p > 0".into());
                }
                if alphas[1] == 0.0 {
                    return bad("ARCH requires α₁ ≠ 0".into());
                }
                validate_noise(*noise_mean, *noise_sd)?;
            }
            ModelSpec::Garch {
                alpha0,
                alpha1,
                betas,
                noise_mean,
                noise_sd,
            } => {
                if betas.is_empty() {
                    return bad("GARCH(1,q) needs q ≥ 1 betas".into());
                }
                if betas.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) {
                    return bad("GARCH betas must be finite and nonnegative".into());
                }
                let bq = betas[betas.len() - 1];
                if !(alpha0 * alpha1 * bq > 0.0) || *alpha0 < 0.0 || *alpha1 < 0.0 {
                    return bad("GARCH requires α₀·α₁·β_q > 0".into());
                }
                validate_noise(*noise_mean, *noise_sd)?;
            }
        }
        Ok(Model {
            spec,
            chol,
            cumulative,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    /// Draws the batch statistics `(S, c) = (Σ aᵢaᵢᵀ, Σ bᵢaᵢ)`.
    fn sgd_batch(&self, q: &SgdQuadratic, rng: &mut RngStream) -> (Matrix, Vec<f64>) {
        let chol = self.chol.as_ref().expect("validated sgd model");
        let d = q.sigma.dim();
        let mut s = Matrix::zeros(d);
        let mut c = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut a = vec![0.0; d];
        for _ in 0..q.batch {
            for zi in z.iter_mut() {
                *zi = rng.standard_normal();
            }
            crate::linalg::mat_vec_into(chol, &z, &mut a);
            let b = rng.gaussian(0.0, q.sigma_b);
            for i in 0..d {
                for j in 0..d {
                    s[(i, j)] += a[i] * a[j];
                }
                c[i] += b * a[i];
            }
        }
        (s, c)
    }
}

fn validate_sgd(q: &SgdQuadratic) -> Result<Matrix> {
    if !(q.eta >= 0.0) || !q.eta.is_finite() {
        return Err(Error::InvalidModel(format!(
            "learning rate {} must be >= 0",
            q.eta
        )));
    }
    if q.batch == 0 {
        return Err(Error::InvalidModel("batch size must be positive".into()));
    }
    if !(q.sigma_b >= 0.0) {
        return Err(Error::InvalidModel("sigma_b must be nonnegative".into()));
    }
    if q.sigma.dim() == 0 || !q.sigma.is_finite() {
        return Err(Error::InvalidModel(
            "covariance must be a finite d×d matrix, d ≥ 1".into(),
        ));
    }
    cholesky_psd(&q.sigma, COVARIANCE_TOL)
}

fn validate_noise(mean: f64, sd: f64) -> Result<()> {
    if !mean.is_finite() || !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::InvalidModel(
            "noise needs finite mean and sd > 0".into(),
        ));
    }
    Ok(())
}

fn write_companion_shift(a: &mut Matrix) {
    let d = a.dim();
    for i in 1..d {
        for j in 0..d {
            a[(i, j)] = if j + 1 == i { 1.0 } else { 0.0 };
        }
    }
}

impl AffineLaw for Model {
    fn dim(&self) -> usize {
        self.dimension()
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut AffineMapSample) {
        let d = self.dimension();
        if out.dim() != d || out.a.dim() != d {
            *out = AffineMapSample::zeros(d);
        }
        match &self.spec {
            ModelSpec::Explicit { support } => {
                let u = rng.uniform();
                let idx = self
                    .cumulative
                    .iter()
                    .position(|&c| u < c)
                    .unwrap_or(support.len() - 1);
                out.a.clone_from(&support[idx].a);
                out.b.clone_from(&support[idx].b);
            }
            ModelSpec::Scalar { a, b } => {
                out.a.as_mut_slice()[0] = a.sample(rng);
                out.b.0[0] = b.sample(rng);
            }
            ModelSpec::SgdQuadratic(q) => {
                let (s, c) = self.sgd_batch(q, rng);
                let f = q.eta / q.batch as f64;
                for i in 0..d {
                    for j in 0..d {
                        let id = if i == j { 1.0 } else { 0.0 };
                        out.a[(i, j)] = id - f * s[(i, j)];
                    }
                    out.b.0[i] = f * c[i];
                }
            }
            ModelSpec::SgdMomentum { gamma, inner } => {
                // X' = (I − η(1−γ)H) X − ηγ V + η(1−γ) c
                // V' = (1−γ)H X + γ V − (1−γ) c
                // with H = S/m, c = (Σ bᵢaᵢ)/m.
                let (s, c) = self.sgd_batch(inner, rng);
                let h = inner.sigma.dim();
                let m = inner.batch as f64;
                let top = inner.eta * (1.0 - gamma) / m;
                let bottom = (1.0 - gamma) / m;
                for i in 0..h {
                    for j in 0..h {
                        let id = if i == j { 1.0 } else { 0.0 };
                        out.a[(i, j)] = id - top * s[(i, j)];
                        out.a[(i, h + j)] = -inner.eta * gamma * id;
                        out.a[(h + i, j)] = bottom * s[(i, j)];
                        out.a[(h + i, h + j)] = gamma * id;
                    }
                    out.b.0[i] = top * c[i];
                    out.b.0[h + i] = -bottom * c[i];
                }
            }
            ModelSpec::Arch {
                alphas,
                noise_mean,
                noise_sd,
            } => {
                let w = rng.gaussian(*noise_mean, *noise_sd);
                let w2 = w * w;
                for j in 0..d {
                    out.a[(0, j)] = alphas[j + 1] * w2;
                }
                write_companion_shift(&mut out.a);
                out.b.0.iter_mut().for_each(|x| *x = 0.0);
                out.b.0[0] = alphas[0] * w2;
            }
            ModelSpec::Garch {
                alpha0,
                alpha1,
                betas,
                noise_mean,
                noise_sd,
            } => {
                let w = rng.gaussian(*noise_mean, *noise_sd);
                for (j, beta) in betas.iter().enumerate() {
                    out.a[(0, j)] = *beta;
                }
                out.a[(0, 0)] += alpha1 * w * w;
                write_companion_shift(&mut out.a);
                out.b.0.iter_mut().for_each(|x| *x = 0.0);
                out.b.0[0] = *alpha0;
            }
        }
    }

    fn fixed_point_candidates(&self) -> Vec<Vector> {
        let d = self.dimension();
        let mut out = Vec::new();
        match &self.spec {
            ModelSpec::Arch { alphas, .. } => {
                let kappa = alphas[0] / alphas[1..].iter().sum::<f64>();
                out.push(Vector(vec![-kappa; d]));
            }
            ModelSpec::Scalar { a, b } => {
                // Fixed point of the mean map, when it exists.
                if let (Some(ma), Some(mb)) = (a.mean(), b.mean()) {
                    if (1.0 - ma).abs() > 1e-12 {
                        out.push(Vector(vec![mb / (1.0 - ma)]));
                    }
                }
            }
            _ => {}
        }
        out
    }
}

/// Next squared return `σ_t² w²` of ARCH(p), where
/// `σ_t² = α₀ + Σ αᵢ · prev_squares[i−1]` and `prev_squares` lists
/// `X²_{t−1}, …, X²_{t−p}` newest first.
pub fn arch_squared_series_step(prev_squares: &[f64], w: f64, alphas: &[f64]) -> f64 {
    let sigma2 = alphas[1..]
        .iter()
        .zip(prev_squares)
        .fold(alphas[0], |acc, (a, x)| acc + a * x);
    sigma2 * w * w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::operator_norm;

    fn eye(d: usize) -> Matrix {
        Matrix::identity(d)
    }

    #[test]
    fn dimensions() {
        assert_eq!(ModelSpec::lognormal(0.0, 1.0).dimension(), 1);
        assert_eq!(ModelSpec::arch(&[1.0, 0.2, 0.1, 0.3]).dimension(), 3);
        assert_eq!(ModelSpec::garch(1.0, 0.1, &[0.2, 0.3]).dimension(), 2);
        let inner = SgdQuadratic {
            eta: 0.1,
            batch: 2,
            sigma: eye(4),
            sigma_b: 1.0,
        };
        assert_eq!(ModelSpec::SgdMomentum { gamma: 0.5, inner }.dimension(), 8);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let m = ModelSpec::sgd(0.0, 3, eye(3), 1.0).build().unwrap();
        let mut rng = RngStream::new(5, 0);
        for _ in 0..20 {
            let s = m.sample(&mut rng);
            assert_eq!(s.a, eye(3));
            assert!(s.b.0.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn momentum_without_momentum_matches_vanilla() {
        let inner = SgdQuadratic {
            eta: 0.3,
            batch: 2,
            sigma: Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
            sigma_b: 0.7,
        };
        let vanilla = ModelSpec::SgdQuadratic(inner.clone()).build().unwrap();
        let mom = ModelSpec::SgdMomentum { gamma: 0.0, inner }
            .build()
            .unwrap();
        let mut r1 = RngStream::new(11, 3);
        let mut r2 = RngStream::new(11, 3);
        for _ in 0..10 {
            let v = vanilla.sample(&mut r1);
            let c = mom.sample(&mut r2);
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(c.a[(i, j)], v.a[(i, j)]);
                    assert_eq!(c.a[(i, 2 + j)], 0.0);
                    assert_eq!(c.a[(2 + i, 2 + j)], 0.0);
                }
                assert_eq!(c.b[i], v.b[i]);
            }
        }
    }

    #[test]
    fn momentum_block_follows_heavy_ball_update() {
        // One step of the (X, V) update computed directly from the same batch.
        let inner = SgdQuadratic {
            eta: 0.2,
            batch: 1,
            sigma: eye(2),
            sigma_b: 1.0,
        };
        let gamma = 0.6;
        let mom = ModelSpec::SgdMomentum {
            gamma,
            inner: inner.clone(),
        }
        .build()
        .unwrap();
        let mut rng = RngStream::new(1, 1);
        let s = mom.sample(&mut rng);
        let mut rng = RngStream::new(1, 1);
        let a = [rng.standard_normal(), rng.standard_normal()];
        let b = rng.gaussian(0.0, 1.0);
        let (x, v) = ([0.4, -1.1], [0.3, 0.9]);
        let grad: Vec<f64> = (0..2)
            .map(|i| a[i] * (a[0] * x[0] + a[1] * x[1] - b))
            .collect();
        let v_new: Vec<f64> = (0..2)
            .map(|i| gamma * v[i] + (1.0 - gamma) * grad[i])
            .collect();
        let x_new: Vec<f64> = (0..2).map(|i| x[i] - inner.eta * v_new[i]).collect();
        let y = s.apply(&Vector(vec![x[0], x[1], v[0], v[1]]));
        for i in 0..2 {
            assert!((y[i] - x_new[i]).abs() < 1e-12);
            assert!((y[2 + i] - v_new[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn arch_companion_layout() {
        let m = ModelSpec::arch(&[1.0, 0.5, 0.25]).build().unwrap();
        let mut rng = RngStream::new(3, 0);
        let s = m.sample(&mut rng);
        let mut rng = RngStream::new(3, 0);
        let w = rng.gaussian(0.0, 1.0);
        let w2 = w * w;
        assert_eq!(s.a.rows(), vec![vec![0.5 * w2, 0.25 * w2], vec![1.0, 0.0]]);
        assert_eq!(s.b, Vector(vec![w2, 0.0]));
    }

    #[test]
    fn garch_companion_layout() {
        let m = ModelSpec::garch(0.3, 0.2, &[0.1, 0.05, 0.4])
            .build()
            .unwrap();
        let mut rng = RngStream::new(8, 2);
        let s = m.sample(&mut rng);
        let mut rng = RngStream::new(8, 2);
        let w = rng.gaussian(0.0, 1.0);
        assert_eq!(
            s.a.rows(),
            vec![
                vec![0.2 * w * w + 0.1, 0.05, 0.4],
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0]
            ]
        );
        assert_eq!(s.b, Vector(vec![0.3, 0.0, 0.0]));
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(ModelSpec::arch(&[1.0, 0.0, 0.3]).build().is_err());
        assert!(ModelSpec::arch(&[0.0, 0.5]).build().is_err());
        assert!(ModelSpec::arch(&[1.0, 0.5, 0.0]).build().is_err());
        assert!(ModelSpec::garch(1.0, 0.1, &[0.2, 0.0]).build().is_err());
        assert!(ModelSpec::garch(0.0, 0.1, &[0.2]).build().is_err());
        let indefinite = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(ModelSpec::sgd(0.1, 1, indefinite, 1.0).build().is_err());
        assert!(ModelSpec::sgd(0.1, 0, eye(2), 1.0).build().is_err());
        let inner = SgdQuadratic {
            eta: 0.1,
            batch: 1,
            sigma: eye(2),
            sigma_b: 1.0,
        };
        assert!(ModelSpec::SgdMomentum { gamma: 1.0, inner }
            .build()
            .is_err());
        let atoms = vec![
            Atom {
                p: 0.5,
                a: eye(1),
                b: Vector(vec![0.0]),
            },
            Atom {
                p: 0.4,
                a: eye(1),
                b: Vector(vec![1.0]),
            },
        ];
        assert!(ModelSpec::Explicit { support: atoms }.build().is_err());
    }

    #[test]
    fn explicit_frequencies_match_probabilities() {
        let probs = [0.2, 0.5, 0.3];
        let support = probs
            .iter()
            .enumerate()
            .map(|(i, &p)| Atom {
                p,
                a: Matrix::scaled_identity(1, i as f64),
                b: Vector(vec![0.0]),
            })
            .collect();
        let m = ModelSpec::Explicit { support }.build().unwrap();
        let mut rng = RngStream::new(77, 0);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[m.sample(&mut rng).a.as_slice()[0] as usize] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 4.0 * se);
        }
    }

    #[test]
    fn arch_and_garch_preserve_nonnegative_states() {
        for spec in [
            ModelSpec::arch(&[0.5, 0.6, 0.3, 0.2]),
            ModelSpec::garch(0.5, 0.4, &[0.3, 0.2]),
        ] {
            let m = spec.build().unwrap();
            let mut rng = RngStream::new(4, 4);
            let mut x = Vector::zeros(m.dimension());
            for _ in 0..5_000 {
                let s = m.sample(&mut rng);
                assert!(s.a.as_slice().iter().all(|&v| v >= 0.0));
                assert!(s.b.0.iter().all(|&v| v >= 0.0));
                x = s.apply(&x);
                assert!(x.0.iter().all(|&v| v >= 0.0));
                if x.max_abs() > 1e100 {
                    x = Vector::zeros(m.dimension());
                }
            }
        }
    }

    #[test]
    fn large_batch_concentrates_near_mean_map() {
        let mean_dev = |batch: usize| {
            let m = ModelSpec::sgd(0.1, batch, eye(2), 1.0).build().unwrap();
            let target = Matrix::scaled_identity(2, 0.9);
            let mut rng = RngStream::new(21, batch as u64);
            (0..400)
                .map(|_| operator_norm(&m.sample(&mut rng).a.sub(&target)))
                .sum::<f64>()
                / 400.0
        };
        let (d8, d64, d512) = (mean_dev(8), mean_dev(64), mean_dev(512));
        assert!(d8 > d64 && d64 > d512, "{d8} {d64} {d512}");
    }

    #[test]
    fn arch_scalar_step_examples() {
        assert_eq!(
            arch_squared_series_step(&[0.0, 0.0], 1.0, &[0.7, 0.2, 0.1]),
            0.7
        );
        assert_eq!(arch_squared_series_step(&[2.0], 2.0, &[1.0, 0.5]), 8.0);
    }

    #[test]
    fn arch_vector_step_is_scalar_step_plus_shift() {
        for p in 1..=4 {
            let alphas: Vec<f64> = (0..=p).map(|i| 0.3 + 0.1 * i as f64).collect();
            let m = ModelSpec::arch(&alphas).build().unwrap();
            let prev: Vec<f64> = (0..p).map(|i| 0.5 + i as f64).collect();
            let mut rng = RngStream::new(100, p as u64);
            let s = m.sample(&mut rng);
            let mut rng = RngStream::new(100, p as u64);
            let w = rng.gaussian(0.0, 1.0);
            let next = s.apply(&Vector(prev.clone()));
            let scalar = arch_squared_series_step(&prev, w, &alphas);
            assert!((next[0] - scalar).abs() <= 1e-12 * scalar.max(1.0));
            for i in 1..p {
                assert_eq!(next[i], prev[i - 1]);
            }
        }
    }

    #[test]
    fn arch_fixed_point_candidate() {
        let m = ModelSpec::arch(&[1.0, 0.5, 0.5]).build().unwrap();
        assert_eq!(m.fixed_point_candidates(), vec![Vector(vec![-1.0, -1.0])]);
        let m = ModelSpec::deterministic_scalar(0.5, 1.0).build().unwrap();
        assert_eq!(m.fixed_point_candidates(), vec![Vector(vec![2.0])]);
    }
}
