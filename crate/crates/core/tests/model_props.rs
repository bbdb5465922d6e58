use kesten_core::linalg::operator_norm;
use kesten_core::{AffineLaw, Matrix, ModelSpec, RngStream, Vector};
use proptest::prelude::*;

fn arch_spec() -> impl Strategy<Value = ModelSpec> {
    (0.01f64..5.0, prop::collection::vec(0.0f64..1.5, 1..=4)).prop_map(|(a0, rest)| {
        let mut alphas = vec![a0];
        alphas.extend(rest);
        ModelSpec::arch(&alphas)
    })
}

fn garch_spec() -> impl Strategy<Value = ModelSpec> {
    (
        0.01f64..5.0,
        0.0f64..1.5,
        prop::collection::vec(0.0f64..1.0, 1..=3),
    )
        .prop_map(|(a0, a1, betas)| ModelSpec::garch(a0, a1, &betas))
}

fn stays_nonnegative(spec: &ModelSpec, start: Vec<f64>, seed: u64) -> bool {
    let model = spec.build().unwrap();
    let d = model.dim();
    let mut x = Vector(
        start
            .into_iter()
            .take(d)
            .chain(std::iter::repeat(0.0))
            .take(d)
            .collect(),
    );
    let mut rng = RngStream::new(seed, 0);
    for _ in 0..200 {
        let s = model.sample(&mut rng);
        if s.a.as_slice().iter().any(|v| *v < 0.0) || s.b.0.iter().any(|v| *v < 0.0) {
            return false;
        }
        x = s.apply(&x);
        if x.0.iter().any(|v| *v < 0.0) {
            return false;
        }
        if !x.is_finite() {
            break;
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn arch_iterates_stay_nonnegative(spec in arch_spec(), start in prop::collection::vec(0.0f64..100.0, 4), seed: u64) {
        prop_assert!(stays_nonnegative(&spec, start, seed));
    }

    #[test]
    fn garch_iterates_stay_nonnegative(spec in garch_spec(), start in prop::collection::vec(0.0f64..100.0, 4), seed: u64) {
        prop_assert!(stays_nonnegative(&spec, start, seed));
    }

    #[test]
    fn spec_json_round_trips(spec in prop_oneof![arch_spec(), garch_spec()]) {
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, spec);
    }
}

#[test]
fn large_batches_concentrate_near_mean_map() {
    let eta = 0.3;
    let target = Matrix::scaled_identity(3, 1.0 - eta);
    let mean_dev = |m: usize| {
        let model = ModelSpec::sgd(eta, m, Matrix::identity(3), 1.0)
            .build()
            .unwrap();
        let mut rng = RngStream::new(77, m as u64);
        (0..2000)
            .map(|_| operator_norm(&model.sample(&mut rng).a.sub(&target)))
            .sum::<f64>()
            / 2000.0
    };
    let devs: Vec<f64> = [1, 8, 64, 512].iter().map(|&m| mean_dev(m)).collect();
    assert!(devs.windows(2).all(|w| w[1] < w[0]), "{devs:?}");
    assert!(devs[3] < 0.05, "{devs:?}");
}
