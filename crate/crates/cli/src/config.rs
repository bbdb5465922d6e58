//! The JSON run configuration shared by every command.

use std::path::{Path, PathBuf};

use kesten_core::audit::{AuditBudget, Regime};
use kesten_core::exit::CapPolicy;
use kesten_core::{Model, ModelSpec, Vector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_n_steps")]
    pub n_steps: usize,
    #[serde(default = "default_r_grid")]
    pub r_grid: Vec<f64>,
    #[serde(default = "default_cap")]
    pub cap: CapPolicy,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Starting point of exit runs; the origin when absent.
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    /// Declared regime; inferred from the sign of `γ̂` when absent.
    #[serde(default)]
    pub regime: Option<Regime>,
    #[serde(default)]
    pub lyapunov: LyapunovParams,
    #[serde(default)]
    pub alpha: AlphaParams,
    #[serde(default)]
    pub exit: ExitParams,
    #[serde(default)]
    pub audit: AuditBudget,
    #[serde(default)]
    pub sweep: SweepParams,
}

fn default_seed() -> u64 {
    1
}
fn default_replicas() -> usize {
    10_000
}
fn default_n_steps() -> usize {
    64
}
fn default_r_grid() -> Vec<f64> {
    vec![10.0, 20.0, 40.0, 80.0, 160.0]
}
fn default_cap() -> CapPolicy {
    CapPolicy::Fixed { cap: 1_000_000 }
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovParams {
    /// Also estimate the exponent of the inverse products.
    pub inverse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaParams {
    pub s_grid: Vec<f64>,
    pub bounds_replicas: usize,
    pub solve: bool,
    pub s_max: f64,
    pub tol: f64,
    /// Exponents for the moment probe; `α̂/2` and `3α̂/2` when empty.
    pub dichotomy_gammas: Vec<f64>,
    pub dichotomy_n_grid: Vec<usize>,
}

impl Default for AlphaParams {
    fn default() -> Self {
        AlphaParams {
            s_grid: vec![0.25, 0.5, 1.0, 1.5, 2.0],
            bounds_replicas: 100_000,
            solve: true,
            s_max: 64.0,
            tol: 1e-3,
            dichotomy_gammas: Vec::new(),
            dichotomy_n_grid: vec![8, 16, 32, 64],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExitParams {
    /// Run the Hill estimator in the contractive regime.
    pub hill: bool,
    pub hill_samples: usize,
    /// Order statistics used; `⌊n^0.6⌋` when absent.
    pub hill_k: Option<usize>,
    pub burn_in: usize,
    pub thin: usize,
    /// Replicas for the regime probe and the `1/γ̂` comparison.
    pub lyapunov_replicas: usize,
}

impl Default for ExitParams {
    fn default() -> Self {
        ExitParams {
            hill: true,
            hill_samples: 100_000,
            hill_k: None,
            burn_in: kesten_core::scaling::DEFAULT_BURN_IN,
            thin: kesten_core::scaling::DEFAULT_THIN,
            lyapunov_replicas: 1_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepParams {
    pub etas: Vec<f64>,
    /// Bisection steps spent on each sign change.
    pub refine: usize,
}

impl Default for SweepParams {
    fn default() -> Self {
        SweepParams {
            etas: vec![0.0, 0.1, 0.5, 1.0, 2.0, 3.0, 5.0, 10.0],
            refine: 6,
        }
    }
}

impl RunConfig {
    pub fn new(model: ModelSpec) -> Self {
        RunConfig {
            model,
            seed: default_seed(),
            replicas: default_replicas(),
            n_steps: default_n_steps(),
            r_grid: default_r_grid(),
            cap: default_cap(),
            out: default_out(),
            x0: None,
            regime: None,
            lyapunov: LyapunovParams::default(),
            alpha: AlphaParams::default(),
            exit: ExitParams::default(),
            audit: AuditBudget::default(),
            sweep: SweepParams::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |msg: String| Err(CliError::Config(msg));
        if self.replicas == 0 || self.n_steps == 0 {
            return bad("replicas and n_steps must be positive".into());
        }
        if self.r_grid.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return bad(format!(
                "r_grid {:?} must hold positive finite radii",
                self.r_grid
            ));
        }
        if self.r_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!(
                "r_grid {:?} must be strictly increasing",
                self.r_grid
            ));
        }
        let d = self.model.dimension();
        if let Some(x0) = &self.x0 {
            if x0.len() != d {
                return bad(format!(
                    "x0 has length {}, model dimension is {d}",
                    x0.len()
                ));
            }
        }
        if self.alpha.s_grid.iter().any(|s| !(*s >= 0.0)) {
            return bad("alpha.s_grid must be nonnegative".into());
        }
        if self.exit.thin == 0 {
            return bad("exit.thin must be at least 1".into());
        }
        self.model
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn build_model(&self) -> Result<Model, CliError> {
        self.model
            .build()
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn start(&self) -> Vector {
        match &self.x0 {
            Some(x) => Vector(x.clone()),
            None => Vector::zeros(self.model.dimension()),
        }
    }
}
