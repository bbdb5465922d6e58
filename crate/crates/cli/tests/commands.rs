use std::path::Path;
use std::process::Command;

use kesten_core::audit::Regime;
use kesten_core::exit::CapPolicy;
use kesten_core::{Matrix, ModelSpec, ScalarLaw, Vector};
use kesten_report::commands::{cmd_exit, cmd_lyapunov, cmd_sweep_lr};
use kesten_report::RunConfig;
use proptest::prelude::*;

fn kesten(args: &[&str], env: &[(&str, &str)]) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kesten"));
    cmd.args(args).env_remove("KESTEN_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, cfg: &RunConfig) -> String {
    let path = dir.join(name);
    std::fs::write(&path, cfg.to_json()).unwrap();
    path.to_string_lossy().into_owned()
}

fn value(csv: &str, row: usize, col: usize) -> f64 {
    csv.lines()
        .nth(row + 1)
        .unwrap()
        .split(',')
        .nth(col)
        .unwrap()
        .parse()
        .unwrap()
}

fn scalar_law() -> impl Strategy<Value = ScalarLaw> {
    prop_oneof![
        any::<f64>()
            .prop_filter("finite", |v| v.is_finite())
            .prop_map(|value| ScalarLaw::Constant { value }),
        (-10.0f64..10.0, 0.0f64..5.0).prop_map(|(mu, sigma)| ScalarLaw::LogNormal { mu, sigma }),
        (-10.0f64..10.0, 0.0f64..5.0).prop_map(|(mean, sd)| ScalarLaw::Gaussian { mean, sd }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trips(
        a in scalar_law(),
        b in scalar_law(),
        seed: u64,
        replicas in 1usize..100_000,
        grid in prop::collection::vec(0.1f64..10.0, 1..6),
        cap in 1u64..u64::MAX / 2,
        alpha_hat in 0.01f64..10.0,
        x0: f64,
        explosive: bool,
    ) {
        let mut cfg = RunConfig::new(ModelSpec::scalar(a, b));
        cfg.seed = seed;
        cfg.replicas = replicas;
        let mut r = 0.0;
        cfg.r_grid = grid.iter().map(|g| { r += g; r }).collect();
        cfg.cap = if explosive { CapPolicy::Contractive { alpha_hat } } else { CapPolicy::Fixed { cap } };
        cfg.x0 = x0.is_finite().then_some(vec![x0]);
        cfg.regime = Some(if explosive { Regime::Explosive } else { Regime::Contractive });
        cfg.sweep.etas = grid.clone();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn minimal_config_fills_defaults() {
    let cfg = RunConfig::from_json(r#"{"model": {"type": "arch", "alphas": [1.0, 0.3]}}"#).unwrap();
    assert_eq!(cfg.replicas, 10_000);
    assert_eq!(cfg.r_grid, vec![10.0, 20.0, 40.0, 80.0, 160.0]);
    assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
}

#[test]
fn doubling_matrix_exponent_is_log_two() {
    let cfg = RunConfig::new(ModelSpec::deterministic(
        Matrix::scaled_identity(2, 2.0),
        Vector::zeros(2),
    ));
    let bundle = cmd_lyapunov(&cfg).unwrap();
    let csv = bundle.table("lyapunov.csv").unwrap().to_csv();
    assert!((value(&csv, 0, 2) - 2f64.ln()).abs() < 1e-12, "{csv}");
}

#[test]
fn lognormal_exponent_within_three_se() {
    let cfg = RunConfig::new(ModelSpec::lognormal(-0.5, 1.0));
    let csv = cmd_lyapunov(&cfg)
        .unwrap()
        .table("lyapunov.csv")
        .unwrap()
        .to_csv();
    let (g, se) = (value(&csv, 0, 2), value(&csv, 0, 3));
    assert!((g + 0.5).abs() < 3.0 * se, "{csv}");
}

#[test]
fn doubling_staircase_table() {
    let mut cfg = RunConfig::new(ModelSpec::deterministic_scalar(2.0, 0.0));
    cfg.r_grid = vec![8.0, 10.0, 100.0, 1e6];
    cfg.x0 = Some(vec![1.0]);
    cfg.replicas = 4;
    let bundle = cmd_exit(&cfg).unwrap();
    let taus = bundle
        .table("exit.csv")
        .unwrap()
        .column("mean_tau")
        .unwrap()
        .join(" ");
    assert_eq!(taus, "4.0 4.0 7.0 20.0");
    assert!(bundle
        .figures
        .iter()
        .any(|(name, svg)| name == "exit.svg" && svg.starts_with("<svg")));
}

#[test]
fn learning_rate_sweep_flips_sign_once() {
    let mut cfg = RunConfig::new(ModelSpec::sgd(1.0, 1, Matrix::identity(1), 1.0));
    cfg.replicas = 500;
    cfg.n_steps = 100;
    let bundle = cmd_sweep_lr(&cfg).unwrap();
    let csv = bundle.table("sweep.csv").unwrap().to_csv();
    assert!(csv.lines().nth(1).unwrap().starts_with("0.0,0.0,"), "{csv}");
    let gammas: Vec<f64> = bundle
        .table("sweep.csv")
        .unwrap()
        .column("gamma_hat")
        .unwrap()
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    let flips = gammas.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    assert_eq!(flips, 1, "{csv}");
    let crossing = bundle.table("crossing.csv").unwrap();
    assert_eq!(crossing.rows.len(), 1);
    let lo: f64 = crossing.rows[0][0].parse().unwrap();
    let hi: f64 = crossing.rows[0][1].parse().unwrap();
    assert!(
        lo < hi && hi - lo < 0.2 && (2.0..3.0).contains(&lo),
        "{lo} {hi}"
    );
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::lognormal(-0.5, 1.0));
    cfg.replicas = 2_000;
    cfg.regime = Some(Regime::Contractive);
    cfg.exit.hill_samples = 20_000;
    let path = write_config(dir.path(), "c.json", &cfg);
    let outs = ["a", "b"].map(|o| dir.path().join(o));
    for (out, threads) in outs.iter().zip(["1", "4"]) {
        let o = kesten(
            &[
                "exit",
                "--config",
                &path,
                "--out",
                out.to_str().unwrap(),
                "--threads",
                threads,
            ],
            &[],
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["exit.csv", "scaling.csv", "exit.svg"] {
        let a = std::fs::read(outs[0].join(f)).unwrap();
        let b = std::fs::read(outs[1].join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(outs[0].join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "exit");
    let echoed: RunConfig = serde_json::from_value(manifest["config"].clone()).unwrap();
    assert_eq!(echoed.seed, cfg.seed);
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::lognormal(-0.5, 1.0));
    cfg.replicas = 50;
    let path = write_config(dir.path(), "c.json", &cfg);
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = kesten(
            &[
                "lyapunov",
                "--config",
                &path,
                "--out",
                out.to_str().unwrap(),
                "--seed",
                seed,
            ],
            &[],
        );
        assert!(o.status.success());
        std::fs::read_to_string(out.join("lyapunov.csv")).unwrap()
    };
    assert_ne!(run("1", "x"), run("2", "y"));
    assert_eq!(run("3", "z"), run("3", "w"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let code = |o: std::process::Output| o.status.code().unwrap();

    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{ not json").unwrap();
    assert_eq!(
        code(kesten(
            &["lyapunov", "--config", broken.to_str().unwrap()],
            &[]
        )),
        2
    );
    assert_eq!(code(kesten(&["lyapunov"], &[])), 2);
    assert_eq!(code(kesten(&["bogus", "--config", "x.json"], &[])), 2);

    let unknown = dir.path().join("unknown.json");
    std::fs::write(
        &unknown,
        r#"{"model": {"type": "arch", "alphas": [1.0, 0.3]}, "replica": 5}"#,
    )
    .unwrap();
    assert_eq!(
        code(kesten(
            &["lyapunov", "--config", unknown.to_str().unwrap()],
            &[]
        )),
        2
    );

    let mut arch = RunConfig::new(ModelSpec::arch(&[1.0, 0.3]));
    arch.replicas = 20;
    let arch_path = write_config(dir.path(), "arch.json", &arch);
    assert_eq!(
        code(kesten(
            &["sweep-lr", "--config", &arch_path, "--out", out],
            &[]
        )),
        2
    );
    assert_eq!(
        code(kesten(
            &["lyapunov", "--config", &arch_path, "--out", out],
            &[("KESTEN_THREADS", "many")]
        )),
        2
    );
    assert_eq!(
        code(kesten(
            &["lyapunov", "--config", &arch_path, "--out", out],
            &[("KESTEN_THREADS", "2")]
        )),
        0
    );

    // h(s) = 0.5^s never reaches 1, so the tail index has no root.
    let mut shrink = RunConfig::new(ModelSpec::deterministic_scalar(0.5, 1.0));
    shrink.replicas = 200;
    shrink.alpha.bounds_replicas = 200;
    let shrink_path = write_config(dir.path(), "shrink.json", &shrink);
    let o = kesten(&["alpha", "--config", &shrink_path, "--out", out], &[]);
    assert_eq!(code(o), 3);
}

#[test]
fn audit_writes_one_row_per_check() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::new(ModelSpec::sgd(10.0, 1, Matrix::identity(2), 1.0));
    cfg.regime = Some(Regime::Explosive);
    cfg.audit.replicas = 5_000;
    cfg.audit.tail_replicas = 20_000;
    let path = write_config(dir.path(), "a.json", &cfg);
    let out = dir.path().join("out");
    let o = kesten(
        &["audit", "--config", &path, "--out", out.to_str().unwrap()],
        &[],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("audit.csv")).unwrap();
    let mut rdr = csv::Reader::from_reader(csv.as_bytes());
    let checks: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(
        checks,
        [
            "lyapunov_sign",
            "invertibility",
            "irreducibility",
            "drift_lower_bound",
            "log_tail_ratio"
        ]
    );
}
