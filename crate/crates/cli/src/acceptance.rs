//! The fourteen acceptance criteria, each a self-contained run with a
//! pinned seed and pinned tolerances. `kesten reproduce` and the
//! acceptance test target both call into this module.

use kesten_core::audit::{
    audit, check_nondegeneracy, check_tail_ratio, default_z_grid, AuditBudget, Regime, Verdict,
};
use kesten_core::exit::{
    arch_sandwich_check, coupled_difference_check, estimate_mean_exit, exit_sweep, simulate_exit,
    CapPolicy,
};
use kesten_core::model::SgdQuadratic;
use kesten_core::rng::derive_seed;
use kesten_core::scaling::{fit_contractive, fit_explosive, hill_tail_index, long_run_norms};
use kesten_core::spectral::{
    estimate_h, estimate_inverse_lyapunov, estimate_lyapunov, h_bounds, moment_dichotomy_probe,
    solve_tail_index, TailIndexConfig, Trend,
};
use kesten_core::stats::Z95;
use kesten_core::{AffineLaw, AffineMapSample, Matrix, ModelSpec, RngStream, ScalarLaw, Vector};

use crate::commands::sweep_learning_rate;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::output::{num, Table};

pub const DEFAULT_SEED: u64 = 20_240_601;
pub const CRITERIA: [u8; 14] = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14];

/// `E log|1 − η a²|` for `a ~ N(0, 1)` at `η = 0.1` and `η = 10`, from
/// one-dimensional quadrature.
pub const SGD_QUADRATURE: [(f64, f64); 2] = [(0.1, -0.124672), (10.0, 1.130578)];

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub id: u8,
    pub title: &'static str,
    pub passed: bool,
    pub detail: String,
    /// Named quantities behind the verdict, in a fixed order.
    pub values: Vec<(String, f64)>,
}

impl Outcome {
    pub fn line(&self) -> String {
        format!(
            "criterion {:>2} [{}] {}: {}",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.detail
        )
    }
}

pub fn title(id: u8) -> &'static str {
    match id {
        1 => "contractive exit scaling",
        2 => "univariate R^alpha refinement",
        3 => "explosive exit scaling",
        4 => "deterministic doubling staircase",
        5 => "two-point biased walk",
        6 => "moment function and tail index",
        7 => "moment dichotomy",
        8 => "coupling identity",
        9 => "ARCH sandwich",
        10 => "Hill cross-check",
        11 => "inverse-product exponent",
        12 => "learning-rate sign flip",
        13 => "thread-count determinism",
        14 => "assumption audit",
        _ => "unknown",
    }
}

struct Check {
    passed: bool,
    parts: Vec<String>,
    values: Vec<(String, f64)>,
}

impl Check {
    fn new() -> Self {
        Check {
            passed: true,
            parts: Vec::new(),
            values: Vec::new(),
        }
    }

    fn require(&mut self, ok: bool, what: String) {
        self.passed &= ok;
        self.parts
            .push(if ok { what } else { format!("{what} FAILED") });
    }

    fn value(&mut self, name: &str, v: f64) {
        self.values.push((name.to_string(), v));
    }
}

type Run = Result<Check, CliError>;

fn lognormal_contractive() -> kesten_core::Model {
    ModelSpec::lognormal(-0.5, 1.0)
        .build()
        .expect("valid model")
}

fn c1(seed: u64) -> Run {
    let model = lognormal_contractive();
    let grid = [10.0, 20.0, 40.0, 80.0, 160.0];
    let stats = exit_sweep(
        &model,
        &Vector::zeros(1),
        &grid,
        10_000,
        &CapPolicy::Fixed { cap: 1_000_000 },
        seed,
    )?;
    let fit = fit_contractive(&stats.iter().map(|s| (s.r, s.mean_tau)).collect::<Vec<_>>())?;
    let worst = stats.iter().map(|s| s.censored_frac).fold(0.0, f64::max);
    let mut c = Check::new();
    c.value("slope", fit.slope);
    c.value("r_squared", fit.r_squared);
    c.value("max_censored_frac", worst);
    for s in &stats {
        c.value(&format!("mean_tau_R{}", s.r), s.mean_tau);
    }
    c.require(
        (0.85..=1.15).contains(&fit.slope),
        format!("slope {:.4} in [0.85, 1.15]", fit.slope),
    );
    c.require(
        worst <= 1e-3,
        format!("max censored fraction {worst} <= 1e-3"),
    );
    Ok(c)
}

fn c2(seed: u64) -> Run {
    let model = ModelSpec::lognormal(-1.0, 1.0).build()?;
    let grid = [20.0, 40.0, 80.0];
    let stats = exit_sweep(
        &model,
        &Vector::zeros(1),
        &grid,
        1_000,
        &CapPolicy::Fixed { cap: 10_000_000 },
        seed,
    )?;
    let ratios: Vec<f64> = stats.iter().map(|s| s.mean_tau / (s.r * s.r)).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| {
        (lo.min(r), hi.max(r))
    });
    let censored = stats.iter().map(|s| s.censored).sum::<usize>();
    let mut c = Check::new();
    for (s, r) in stats.iter().zip(&ratios) {
        c.value(&format!("tau_over_R2_R{}", s.r), *r);
    }
    c.value("max_over_min", hi / lo);
    c.require(
        hi / lo <= 2.0,
        format!(
            "tau/R^2 = [{}] varies by factor {:.3} <= 2",
            ratios
                .iter()
                .map(|r| format!("{r:.3}"))
                .collect::<Vec<_>>()
                .join(", "),
            hi / lo
        ),
    );
    c.require(censored == 0, format!("{censored} censored paths"));
    Ok(c)
}

fn c3(seed: u64) -> Run {
    let model = ModelSpec::lognormal(0.2, 0.1).build()?;
    let grid = [1e2, 1e3, 1e4, 1e5];
    let stats = exit_sweep(
        &model,
        &Vector::zeros(1),
        &grid,
        10_000,
        &CapPolicy::Explosive,
        seed,
    )?;
    let fit = fit_explosive(&stats.iter().map(|s| (s.r, s.mean_tau)).collect::<Vec<_>>())?;
    let last = stats.last().expect("nonempty grid");
    let min_ratio = last.min_tau.map_or(f64::NAN, |t| t as f64 / last.r.ln());
    let mut c = Check::new();
    c.value("slope", fit.slope);
    c.value("min_tau_over_log_R_1e5", min_ratio);
    c.require(
        (4.25..=6.5).contains(&fit.slope),
        format!("slope {:.4} in [4.25, 6.5]", fit.slope),
    );
    c.require(
        min_ratio >= 4.0,
        format!("min tau/log R at R = 1e5 is {min_ratio:.4} >= 4.0"),
    );
    Ok(c)
}

fn c4(_seed: u64) -> Run {
    let model = ModelSpec::deterministic_scalar(2.0, 0.0).build()?;
    let mut c = Check::new();
    for r in [8.0f64, 10.0, 100.0, 1e6] {
        let tau = simulate_exit(
            &model,
            &Vector(vec![1.0]),
            r,
            1_000,
            &mut RngStream::new(0, 0),
        )
        .tau();
        let expected = r.log2().floor() as u64 + 1;
        c.value(&format!("tau_R{r}"), tau.map_or(f64::NAN, |t| t as f64));
        c.require(
            tau == Some(expected),
            format!("R = {r}: tau {tau:?} = {expected}"),
        );
    }
    Ok(c)
}

fn c5(seed: u64) -> Run {
    let model = ModelSpec::scalar(
        ScalarLaw::TwoPoint {
            a: 2.0,
            b: 0.5,
            p: 0.6,
        },
        ScalarLaw::Constant { value: 0.0 },
    )
    .build()?;
    let s = estimate_mean_exit(&model, &Vector(vec![1.0]), 3.0, 100_000, 1_000_000, seed)?;
    let se = s.ci_halfwidth / Z95;
    let mut c = Check::new();
    c.value("mean_tau", s.mean_tau);
    c.value("std_err", se);
    c.require(
        (s.mean_tau - 10.0).abs() <= 3.0 * se,
        format!(
            "mean tau {:.4} within 3 se ({:.4}) of 10",
            s.mean_tau,
            3.0 * se
        ),
    );
    Ok(c)
}

fn c6(seed: u64) -> Run {
    let model = lognormal_contractive();
    let mut c = Check::new();
    let mut misfit = Vec::new();
    let mut outside = Vec::new();
    for (i, s) in [0.25, 0.5, 1.0, 1.5, 2.0].into_iter().enumerate() {
        let exact = -0.5 * s + 0.5 * s * s;
        let h = estimate_h(&model, s, 64, 10_000, seed)?;
        let b = h_bounds(&model, s, 100_000, derive_seed(seed, 100 + i as u64))?;
        c.value(&format!("log_h_s{s}"), h.log_h_hat);
        if (h.log_h_hat - exact).abs() > (2.0 * h.ci_halfwidth).max(0.03) {
            misfit.push(s);
        }
        if !b.contains(&h) {
            outside.push(s);
        }
    }
    c.require(
        misfit.is_empty(),
        format!("log h matches closed form (misfits at {misfit:?})"),
    );
    c.require(
        outside.is_empty(),
        format!("within bounds (outside at {outside:?})"),
    );
    let t = solve_tail_index(&model, &TailIndexConfig::default(), seed)?;
    c.value("alpha_hat", t.alpha_hat);
    c.require(
        (0.97..=1.03).contains(&t.alpha_hat),
        format!("alpha_hat {:.4} in [0.97, 1.03]", t.alpha_hat),
    );
    c.require(
        t.diagnostics.passed,
        format!(
            "convexity (min second difference {:.2e}, slack {:.2e})",
            t.diagnostics.min_second_difference, t.diagnostics.slack
        ),
    );
    Ok(c)
}

fn c7(seed: u64) -> Run {
    let model = lognormal_contractive();
    let mut c = Check::new();
    for (i, (gamma, want)) in [(0.5, Trend::Decreasing), (1.5, Trend::Increasing)]
        .into_iter()
        .enumerate()
    {
        let closed = -0.5 * gamma + 0.5 * gamma * gamma;
        let r = moment_dichotomy_probe(
            &model,
            gamma,
            1.0,
            &[8, 16, 32, 64],
            10_000,
            derive_seed(seed, i as u64),
        )?;
        c.value(&format!("slope_gamma{gamma}"), r.slope);
        c.value(&format!("closed_form_gamma{gamma}"), closed);
        let sign_ok = r.slope.signum() == closed.signum();
        c.require(
            r.trend == want && sign_ok,
            format!(
                "gamma {gamma}: {:?} slope {:.4} vs log h {closed:.4}",
                r.trend, r.slope
            ),
        );
    }
    Ok(c)
}

fn c8(seed: u64) -> Run {
    let inner = |d: usize, eta: f64| SgdQuadratic {
        eta,
        batch: 2,
        sigma: Matrix::identity(d),
        sigma_b: 1.0,
    };
    let models = [
        ("scalar", ModelSpec::lognormal(-0.5, 1.0)),
        ("arch2", ModelSpec::arch(&[1.0, 0.4, 0.3])),
        ("garch12", ModelSpec::garch(1.0, 0.2, &[0.3, 0.2])),
        ("sgd3", ModelSpec::SgdQuadratic(inner(3, 0.5))),
        (
            "momentum2",
            ModelSpec::SgdMomentum {
                gamma: 0.5,
                inner: inner(2, 0.3),
            },
        ),
    ];
    let mut c = Check::new();
    for (k, (name, spec)) in models.iter().enumerate() {
        let model = spec.build()?;
        let d = model.dim();
        let mut rng = RngStream::new(derive_seed(seed, k as u64), 0);
        let mut worst: f64 = 0.0;
        for pair in 0..100u64 {
            let mut point = || Vector((0..d).map(|_| 10.0 * rng.uniform()).collect());
            let (y, z) = (point(), point());
            let r = coupled_difference_check(
                &model,
                &y,
                &z,
                30,
                derive_seed(seed, 1000 * (k as u64 + 1) + pair),
            )?;
            worst = worst.max(r.max_relative_deviation);
        }
        c.value(&format!("max_dev_{name}"), worst);
        c.require(worst <= 1e-9, format!("{name} {worst:.2e}"));
    }
    Ok(c)
}

fn c9(seed: u64) -> Run {
    let model = ModelSpec::arch(&[1.0, 0.3, 0.2, 0.1]).build()?;
    let r = arch_sandwich_check(&model, &Vector::zeros(3), 50.0, 10_000, 1_000_000, seed)?;
    let mut c = Check::new();
    c.value("violations", r.violations as f64);
    c.value("censored", r.censored as f64);
    c.require(
        r.violations == 0 && r.censored == 0,
        format!(
            "{} violations, {} censored over {} paths",
            r.violations, r.censored, r.paths
        ),
    );
    Ok(c)
}

fn c10(seed: u64) -> Run {
    let model = lognormal_contractive();
    let norms = long_run_norms(
        &model,
        &Vector::zeros(1),
        100_000,
        1_000,
        10,
        &mut RngStream::new(seed, 0),
    )?;
    let h = hill_tail_index(&norms, 1_000)?;
    let mut c = Check::new();
    c.value("alpha_hill", h.alpha_hill);
    c.require(
        (h.alpha_hill - 1.0).abs() <= 0.2,
        format!("alpha_hill {:.4} within 20% of 1.0", h.alpha_hill),
    );
    Ok(c)
}

fn c11(seed: u64) -> Run {
    let model = ModelSpec::sgd(5.0, 1, Matrix::identity(2), 1.0).build()?;
    let fwd = estimate_lyapunov(&model, 200, 2_000, seed)?;
    let inv = estimate_inverse_lyapunov(&model, 200, 2_000, derive_seed(seed, 1))?;
    let joint = (fwd.std_err.powi(2) + inv.std_err.powi(2)).sqrt();
    let gap = inv.gamma_hat + fwd.gamma_hat;
    let mut c = Check::new();
    c.value("gamma_hat", fwd.gamma_hat);
    c.value("inverse_gamma_hat", inv.gamma_hat);
    c.value("joint_se", joint);
    c.require(
        gap.abs() <= 3.0 * joint,
        format!(
            "inverse {:.4} vs -forward {:.4}: gap {gap:.4}, 3 joint se {:.4}",
            inv.gamma_hat,
            -fwd.gamma_hat,
            3.0 * joint
        ),
    );
    Ok(c)
}

fn c12(seed: u64) -> Run {
    let mut cfg = RunConfig::new(ModelSpec::sgd(1.0, 1, Matrix::identity(1), 1.0));
    cfg.seed = seed;
    cfg.n_steps = 100;
    cfg.replicas = 1_000;
    cfg.sweep.etas = vec![0.0, 0.1, 1.0, 2.0, 3.0, 5.0, 10.0];
    let res = sweep_learning_rate(&cfg)?;
    let mut c = Check::new();
    for (eta, oracle) in SGD_QUADRATURE {
        let e = res.at(eta).expect("grid point");
        let z0 = e.gamma_hat / e.std_err;
        c.value(&format!("gamma_eta{eta}"), e.gamma_hat);
        c.value(&format!("se_eta{eta}"), e.std_err);
        c.require(
            z0.abs() >= 3.0 && z0.signum() == oracle.signum(),
            format!(
                "eta {eta}: {:.4} ({z0:.1} se from 0, oracle {oracle})",
                e.gamma_hat
            ),
        );
    }
    c.require(
        res.crossings.len() == 1,
        format!("crossing brackets {:?}", res.crossings),
    );
    Ok(c)
}

/// Criteria 1, 4, 5, 8 and 12 run under pools of 1 and 8 threads; their
/// tables must agree byte for byte.
fn c13(seed: u64) -> Run {
    let subset = [1u8, 4, 5, 8, 12];
    let render = |threads: usize| -> Result<String, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?;
        let outcomes: Vec<Outcome> =
            pool.install(|| subset.iter().map(|&id| run_criterion(id, seed)).collect());
        Ok(values_table(&outcomes).to_csv())
    };
    let (one, eight) = (render(1)?, render(8)?);
    let mut c = Check::new();
    c.value("bytes", one.len() as f64);
    c.require(
        one == eight,
        format!(
            "criteria {subset:?} tables identical under 1 and 8 threads ({} bytes)",
            one.len()
        ),
    );
    Ok(c)
}

/// `A = c·v vᵀ` with `v = (1, Z)`, `Z ~ N(0, 1)`, `B ~ N(0, I)`.
pub struct RankOneGaussian {
    pub c: f64,
}

impl AffineLaw for RankOneGaussian {
    fn dim(&self) -> usize {
        2
    }

    fn sample_into(&self, rng: &mut RngStream, out: &mut AffineMapSample) {
        let z = rng.standard_normal();
        let a = out.a.as_mut_slice();
        a[0] = self.c;
        a[1] = self.c * z;
        a[2] = self.c * z;
        a[3] = self.c * z * z;
        out.b.0[0] = rng.standard_normal();
        out.b.0[1] = rng.standard_normal();
    }
}

fn c14(seed: u64) -> Run {
    let mut c = Check::new();
    let budget = AuditBudget::default();
    let arch = ModelSpec::arch(&[1.0, 0.05]).build()?;
    for (name, model, k) in [
        ("lognormal", lognormal_contractive(), 0u64),
        ("arch1", arch, 1),
    ] {
        let report = audit(&model, Regime::Contractive, &budget, derive_seed(seed, k));
        let failing: Vec<String> = report
            .entries
            .iter()
            .filter(|e| e.verdict != Verdict::Pass)
            .map(|e| format!("{}={}", e.name, e.verdict.as_str()))
            .collect();
        c.value(
            &format!("audit_pass_{name}"),
            if failing.is_empty() { 1.0 } else { 0.0 },
        );
        c.require(
            failing.is_empty(),
            format!("{name} audit all pass {failing:?}"),
        );
    }
    let remark = check_nondegeneracy(
        &RankOneGaussian { c: 0.5 },
        1,
        8,
        10_000,
        derive_seed(seed, 2),
    );
    c.value("rank_one_zero_frequency", remark.statistic);
    c.require(
        remark.verdict == Verdict::Pass,
        format!(
            "rank-one Gaussian nondegenerate at n0 = 1: {}",
            remark.verdict.as_str()
        ),
    );
    let diag = ModelSpec::deterministic(Matrix::diag(&[1.0, 0.0]), Vector::zeros(2)).build()?;
    let degenerate = check_nondegeneracy(&diag, 3, 8, 1_000, derive_seed(seed, 3));
    c.require(
        degenerate.verdict == Verdict::Fail,
        format!("diag(1,0) nondegeneracy {}", degenerate.verdict.as_str()),
    );
    let pareto = ModelSpec::scalar(
        ScalarLaw::Constant { value: 0.0 },
        ScalarLaw::Pareto {
            scale: 1.0,
            index: 0.5,
        },
    )
    .build()?;
    let tail = check_tail_ratio(
        &pareto,
        Some(1.0),
        &[10.0],
        &default_z_grid(),
        200_000,
        derive_seed(seed, 4),
    );
    c.value("pareto_exponent", tail.statistic);
    c.require(
        tail.verdict == Verdict::Fail,
        format!(
            "Pareto(0.5) noise tail ratio {} (exponent {:.3})",
            tail.verdict.as_str(),
            tail.statistic
        ),
    );
    Ok(c)
}

/// Runs criterion `id` with a seed derived from `master_seed`.
pub fn run_criterion(id: u8, master_seed: u64) -> Outcome {
    let seed = derive_seed(master_seed, id as u64);
    let run = match id {
        1 => c1(seed),
        2 => c2(seed),
        3 => c3(seed),
        4 => c4(seed),
        5 => c5(seed),
        6 => c6(seed),
        7 => c7(seed),
        8 => c8(seed),
        9 => c9(seed),
        10 => c10(seed),
        11 => c11(seed),
        12 => c12(seed),
        13 => c13(master_seed),
        14 => c14(seed),
        _ => Err(CliError::Config(format!("no criterion {id}"))),
    };
    match run {
        Ok(check) => Outcome {
            id,
            title: title(id),
            passed: check.passed,
            detail: check.parts.join("; "),
            values: check.values,
        },
        Err(e) => Outcome {
            id,
            title: title(id),
            passed: false,
            detail: format!("error: {e}"),
            values: Vec::new(),
        },
    }
}

pub fn run_all(master_seed: u64) -> Vec<Outcome> {
    CRITERIA
        .iter()
        .map(|&id| run_criterion(id, master_seed))
        .collect()
}

pub fn summary_table(outcomes: &[Outcome]) -> Table {
    let mut t = Table::new(
        "acceptance.csv",
        &["criterion", "title", "passed", "detail"],
    );
    for o in outcomes {
        t.push(vec![
            o.id.to_string(),
            o.title.to_string(),
            o.passed.to_string(),
            o.detail.clone(),
        ]);
    }
    t
}

pub fn values_table(outcomes: &[Outcome]) -> Table {
    let mut t = Table::new("criteria.csv", &["criterion", "quantity", "value"]);
    for o in outcomes {
        for (name, v) in &o.values {
            t.push(vec![o.id.to_string(), name.clone(), num(*v)]);
        }
    }
    t
}
