//! One function per subcommand. Each returns a [`ResultBundle`] and leaves
//! writing to the caller.

use kesten_core::audit::{audit, Regime};
use kesten_core::exit::{exit_sweep, ExitBatchStats};
use kesten_core::model::SgdQuadratic;
use kesten_core::rng::derive_seed;
use kesten_core::scaling::{
    default_k, fit_contractive, fit_explosive, hill_tail_index, long_run_norms, ScalingFit,
};
use kesten_core::spectral::{
    estimate_h_unchecked, estimate_inverse_lyapunov, estimate_lyapunov, h_bounds,
    moment_dichotomy_probe, solve_tail_index, LyapunovEstimate, TailIndexConfig, Trend,
};
use kesten_core::{Model, ModelSpec, RngStream};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, Chart, ResultBundle, Series, Table};

const LYAPUNOV_HEADER: [&str; 4] = ["n_steps", "replicas", "gamma_hat", "std_err"];

fn lyapunov_row(e: &LyapunovEstimate) -> Vec<String> {
    vec![
        e.n_steps.to_string(),
        e.replicas.to_string(),
        num(e.gamma_hat),
        num(e.std_err),
    ]
}

fn sub_seed(cfg: &RunConfig, tag: u64) -> u64 {
    derive_seed(cfg.seed, tag)
}

pub fn cmd_lyapunov(cfg: &RunConfig) -> Result<ResultBundle, CliError> {
    let model = cfg.build_model()?;
    let mut bundle = ResultBundle::new("lyapunov", Some(cfg.clone()), cfg.seed);
    let est = estimate_lyapunov(&model, cfg.n_steps, cfg.replicas, cfg.seed)?;
    let mut t = Table::new("lyapunov.csv", &LYAPUNOV_HEADER);
    t.push(lyapunov_row(&est));
    bundle.tables.push(t);
    if cfg.lyapunov.inverse {
        let inv = estimate_inverse_lyapunov(&model, cfg.n_steps, cfg.replicas, cfg.seed)?;
        let mut t = Table::new("inverse_lyapunov.csv", &LYAPUNOV_HEADER);
        t.push(lyapunov_row(&inv));
        bundle.tables.push(t);
    }
    Ok(bundle)
}

fn trend_str(t: Trend) -> &'static str {
    match t {
        Trend::Decreasing => "decreasing",
        Trend::Flat => "flat",
        Trend::Increasing => "increasing",
    }
}

pub fn cmd_alpha(cfg: &RunConfig) -> Result<ResultBundle, CliError> {
    let model = cfg.build_model()?;
    let p = &cfg.alpha;
    let mut bundle = ResultBundle::new("alpha", Some(cfg.clone()), cfg.seed);

    let mut hfun = Table::new(
        "hfun.csv",
        &["s", "log_h_hat", "ci", "ess", "lower", "upper"],
    );
    for &s in &p.s_grid {
        let h = estimate_h_unchecked(&model, s, cfg.n_steps, cfg.replicas, cfg.seed)?;
        let b = h_bounds(&model, s, p.bounds_replicas, sub_seed(cfg, 1))?;
        hfun.push(vec![
            num(s),
            num(h.log_h_hat),
            num(h.ci_halfwidth),
            num(h.ess),
            num(b.lower.ln()),
            num(b.upper.ln()),
        ]);
    }
    bundle.tables.push(hfun);

    if p.solve {
        let tcfg = TailIndexConfig {
            n_steps: cfg.n_steps,
            replicas: cfg.replicas,
            s_max: p.s_max,
            tol: p.tol,
        };
        let res = solve_tail_index(&model, &tcfg, cfg.seed)?;
        let mut alpha = Table::new(
            "alpha.csv",
            &[
                "alpha_hat",
                "bracket_lo",
                "bracket_hi",
                "iterations",
                "convexity_passed",
                "min_second_difference",
                "slack",
            ],
        );
        alpha.push(vec![
            num(res.alpha_hat),
            num(res.bracket.0),
            num(res.bracket.1),
            res.iterations.to_string(),
            res.diagnostics.passed.to_string(),
            num(res.diagnostics.min_second_difference),
            num(res.diagnostics.slack),
        ]);
        bundle.tables.push(alpha);

        let gammas = if p.dichotomy_gammas.is_empty() {
            vec![0.5 * res.alpha_hat, 1.5 * res.alpha_hat]
        } else {
            p.dichotomy_gammas.clone()
        };
        let mut dich = Table::new(
            "dichotomy.csv",
            &["gamma", "slope", "slope_se", "trend", "consistent", "ess"],
        );
        for (i, &g) in gammas.iter().enumerate() {
            let r = moment_dichotomy_probe(
                &model,
                g,
                res.alpha_hat,
                &p.dichotomy_n_grid,
                cfg.replicas,
                sub_seed(cfg, 10 + i as u64),
            )?;
            dich.push(vec![
                num(g),
                num(r.slope),
                num(r.slope_se),
                trend_str(r.trend).to_string(),
                r.consistent.to_string(),
                num(r.ess),
            ]);
        }
        bundle.tables.push(dich);
    }
    Ok(bundle)
}

/// The declared regime, or the sign of `γ̂` when none is declared.
pub fn resolve_regime(cfg: &RunConfig, model: &Model) -> Result<Regime, CliError> {
    if let Some(r) = cfg.regime {
        return Ok(r);
    }
    let est = estimate_lyapunov(
        model,
        cfg.n_steps,
        cfg.exit.lyapunov_replicas,
        sub_seed(cfg, 2),
    )?;
    Ok(if est.gamma_hat < 0.0 {
        Regime::Contractive
    } else {
        Regime::Explosive
    })
}

fn scaling_row(fit: &ScalingFit) -> Vec<String> {
    vec![
        fit.mode.as_str().to_string(),
        num(fit.slope),
        num(fit.r_squared),
    ]
}

pub fn exit_table(stats: &[ExitBatchStats]) -> Table {
    let mut t = Table::new("exit.csv", &["R", "mean_tau", "ci", "censored_frac"]);
    for s in stats {
        t.push(vec![
            num(s.r),
            num(s.mean_tau),
            num(s.ci_halfwidth),
            num(s.censored_frac),
        ]);
    }
    t
}

pub fn cmd_exit(cfg: &RunConfig) -> Result<ResultBundle, CliError> {
    let model = cfg.build_model()?;
    let regime = resolve_regime(cfg, &model)?;
    let mut bundle = ResultBundle::new("exit", Some(cfg.clone()), cfg.seed);
    let x0 = cfg.start();
    let stats = exit_sweep(
        &model,
        &x0,
        &cfg.r_grid,
        cfg.replicas.max(2),
        &cfg.cap,
        cfg.seed,
    )?;
    bundle.tables.push(exit_table(&stats));

    let mut scaling = Table::new("scaling.csv", &["mode", "slope", "r2"]);
    let points: Vec<(f64, f64)> = stats.iter().map(|s| (s.r, s.mean_tau)).collect();
    let enough = points.len() >= 3;
    match regime {
        Regime::Contractive => {
            if enough {
                scaling.push(scaling_row(&fit_contractive(&points)?));
            }
            if cfg.exit.hill {
                let mut rng = RngStream::new(sub_seed(cfg, 3), 0);
                let norms = long_run_norms(
                    &model,
                    &x0,
                    cfg.exit.hill_samples,
                    cfg.exit.burn_in,
                    cfg.exit.thin,
                    &mut rng,
                )?;
                let k = cfg.exit.hill_k.unwrap_or_else(|| default_k(norms.len()));
                let hill = hill_tail_index(&norms, k)?;
                scaling.push(vec!["hill".into(), num(hill.alpha_hill), String::new()]);
            }
        }
        Regime::Explosive => {
            if enough {
                scaling.push(scaling_row(&fit_explosive(&points)?));
            }
            let est = estimate_lyapunov(
                &model,
                cfg.n_steps,
                cfg.exit.lyapunov_replicas,
                sub_seed(cfg, 4),
            )?;
            scaling.push(vec![
                "inverse_lyapunov".into(),
                num(1.0 / est.gamma_hat),
                String::new(),
            ]);
        }
    }
    bundle.tables.push(scaling);

    let chart = Chart {
        title: match regime {
            Regime::Contractive => "mean exit time (log-log)".into(),
            Regime::Explosive => "mean exit time (semilog)".into(),
        },
        x_label: "R".into(),
        y_label: "mean tau".into(),
        x_log: true,
        y_log: regime == Regime::Contractive,
        series: vec![Series {
            label: "mean tau".into(),
            points,
        }],
        hline: None,
    };
    bundle.figures.push(("exit.svg".into(), chart.to_svg()));
    Ok(bundle)
}

pub fn cmd_audit(cfg: &RunConfig) -> Result<ResultBundle, CliError> {
    let model = cfg.build_model()?;
    let regime = resolve_regime(cfg, &model)?;
    let report = audit(&model, regime, &cfg.audit, cfg.seed);
    let mut t = Table::new("audit.csv", &["check", "verdict", "statistic", "detail"]);
    for e in &report.entries {
        t.push(vec![
            e.name.clone(),
            e.verdict.as_str().to_string(),
            num(e.statistic),
            e.detail.clone(),
        ]);
    }
    let mut bundle = ResultBundle::new("audit", Some(cfg.clone()), cfg.seed);
    bundle.tables.push(t);
    Ok(bundle)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub eta: f64,
    pub estimate: LyapunovEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// Sorted by `eta`.
    pub points: Vec<SweepPoint>,
    /// Refined `(eta_lo, eta_hi)` around each sign change.
    pub crossings: Vec<(f64, f64)>,
}

impl SweepResult {
    pub fn at(&self, eta: f64) -> Option<&LyapunovEstimate> {
        self.points
            .iter()
            .find(|p| p.eta == eta)
            .map(|p| &p.estimate)
    }
}

fn sgd_base(cfg: &RunConfig) -> Result<SgdQuadratic, CliError> {
    match &cfg.model {
        ModelSpec::SgdQuadratic(q) => Ok(q.clone()),
        _ => Err(CliError::Config(
            "sweep-lr needs an sgd_quadratic model".into(),
        )),
    }
}

/// `γ̂` over the configured step sizes. Every step size reuses the same
/// seed, so the estimates share their data draws and vary smoothly in `η`;
/// each sign change is then narrowed by bisection.
pub fn sweep_learning_rate(cfg: &RunConfig) -> Result<SweepResult, CliError> {
    let base = sgd_base(cfg)?;
    let eval = |eta: f64| -> Result<SweepPoint, CliError> {
        let model = ModelSpec::SgdQuadratic(SgdQuadratic {
            eta,
            ..base.clone()
        })
        .build()?;
        Ok(SweepPoint {
            eta,
            estimate: estimate_lyapunov(&model, cfg.n_steps, cfg.replicas, cfg.seed)?,
        })
    };
    let mut etas = cfg.sweep.etas.clone();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    if etas.iter().any(|e| !(*e >= 0.0) || !e.is_finite()) {
        return Err(CliError::Config(format!(
            "sweep.etas {etas:?} must be finite and >= 0"
        )));
    }
    let mut points = etas.into_iter().map(eval).collect::<Result<Vec<_>, _>>()?;
    let sign = |p: &SweepPoint| {
        let g = p.estimate.gamma_hat;
        if g < 0.0 {
            -1
        } else if g > 0.0 {
            1
        } else {
            0
        }
    };
    let flips: Vec<(SweepPoint, SweepPoint)> = points
        .windows(2)
        .filter(|w| sign(&w[0]) * sign(&w[1]) < 0)
        .map(|w| (w[0], w[1]))
        .collect();
    let mut crossings = Vec::with_capacity(flips.len());
    for (mut lo, mut hi) in flips {
        for _ in 0..cfg.sweep.refine {
            let mid = eval(0.5 * (lo.eta + hi.eta))?;
            points.push(mid);
            match sign(&mid) {
                0 => {
                    lo = mid;
                    hi = mid;
                    break;
                }
                s if s == sign(&lo) => lo = mid,
                _ => hi = mid,
            }
        }
        crossings.push((lo.eta, hi.eta));
    }
    points.sort_by(|a, b| a.eta.total_cmp(&b.eta));
    Ok(SweepResult { points, crossings })
}

pub fn cmd_sweep_lr(cfg: &RunConfig) -> Result<ResultBundle, CliError> {
    let res = sweep_learning_rate(cfg)?;
    let mut bundle = ResultBundle::new("sweep-lr", Some(cfg.clone()), cfg.seed);
    let mut t = Table::new("sweep.csv", &["eta", "gamma_hat", "std_err"]);
    for p in &res.points {
        t.push(vec![
            num(p.eta),
            num(p.estimate.gamma_hat),
            num(p.estimate.std_err),
        ]);
    }
    bundle.tables.push(t);
    let mut c = Table::new("crossing.csv", &["eta_lo", "eta_hi"]);
    for &(lo, hi) in &res.crossings {
        c.push(vec![num(lo), num(hi)]);
    }
    bundle.tables.push(c);
    let chart = Chart {
        title: "Lyapunov exponent against step size".into(),
        x_label: "eta".into(),
        y_label: "gamma_hat".into(),
        x_log: false,
        y_log: false,
        series: vec![Series {
            label: "gamma_hat".into(),
            points: res
                .points
                .iter()
                .map(|p| (p.eta, p.estimate.gamma_hat))
                .collect(),
        }],
        hline: Some(0.0),
    };
    bundle.figures.push(("sweep.svg".into(), chart.to_svg()));
    Ok(bundle)
}
