use approx::assert_abs_diff_eq;
use kesten_core::linalg::{invert, mat_mat, mat_vec, operator_norm};
use kesten_core::{Matrix, RngStream, Vector};
use proptest::prelude::*;

fn square(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-10.0f64..10.0, d * d)
        .prop_map(move |v| Matrix::from_row_major(d, v).unwrap())
}

fn pair() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..=5).prop_flat_map(|d| (square(d), square(d)))
}

fn matrix_and_vector() -> impl Strategy<Value = (Matrix, Vector)> {
    (1usize..=5).prop_flat_map(|d| {
        (
            square(d),
            prop::collection::vec(-10.0f64..10.0, d)
                .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
                .prop_map(Vector),
        )
    })
}

/// Diagonally dominant, so comfortably invertible.
fn well_conditioned() -> impl Strategy<Value = Matrix> {
    (1usize..=5).prop_flat_map(|d| {
        prop::collection::vec(-1.0f64..1.0, d * d).prop_map(move |mut v| {
            for i in 0..d {
                v[i * d + i] += if v[i * d + i] >= 0.0 {
                    d as f64 + 1.0
                } else {
                    -(d as f64) - 1.0
                };
            }
            Matrix::from_row_major(d, v).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn norm_is_submultiplicative((m, n) in pair()) {
        let mn = mat_mat(&m, &n).unwrap();
        prop_assert!(operator_norm(&mn) <= operator_norm(&m) * operator_norm(&n) * (1.0 + 1e-9));
    }

    #[test]
    fn norm_bounds_every_stretch((m, x) in matrix_and_vector()) {
        let mx = mat_vec(&m, &x).unwrap();
        prop_assert!(operator_norm(&m) >= mx.norm() / x.norm() - 1e-9);
    }

    #[test]
    fn double_inverse_is_identity(m in well_conditioned()) {
        let back = invert(&invert(&m).unwrap()).unwrap();
        for (a, b) in back.as_slice().iter().zip(m.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn norm_is_absolutely_homogeneous(m in (1usize..=4).prop_flat_map(square), c in -5.0f64..5.0) {
        let lhs = operator_norm(&m.scale(c));
        let rhs = c.abs() * operator_norm(&m);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs));
    }
}

#[test]
fn norm_of_rotation_and_diagonal() {
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    let rot = Matrix::from_rows(&[vec![c, -s], vec![s, c]]).unwrap();
    assert_abs_diff_eq!(operator_norm(&rot), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(
        operator_norm(&Matrix::diag(&[-3.0, 2.0, 0.5])),
        3.0,
        epsilon = 1e-12
    );
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn distinct_streams_are_uncorrelated() {
    let draws = |stream: u64| {
        let mut rng = RngStream::new(2024, stream);
        (0..100_000).map(|_| rng.uniform()).collect::<Vec<_>>()
    };
    let streams: Vec<Vec<f64>> = (0..4).map(draws).collect();
    for i in 0..streams.len() {
        for j in i + 1..streams.len() {
            let rho = correlation(&streams[i], &streams[j]);
            assert!(rho.abs() < 0.01, "streams {i},{j}: rho = {rho}");
        }
    }
}

#[test]
fn stream_position_is_addressable() {
    let mut rng = RngStream::new(9, 3);
    for _ in 0..17 {
        rng.uniform();
    }
    let counter = rng.counter();
    let expected = rng.uniform();
    assert_eq!(RngStream::at(9, 3, counter).uniform(), expected);
}
