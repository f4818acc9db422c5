use std::path::PathBuf;

use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rlr_core::objectives::load_mnist_subset;
use rlr_core::{LogisticRegression, Matrix, Mlp, Objective, QuadraticEnsemble};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-sample")
}

/// Central difference of the mini-batch loss along coordinate `k`.
fn finite_difference<O: Objective<f64>>(obj: &O, x: &[f64], batch: &[usize], k: usize, h: f64) -> f64 {
    let mut g = vec![0.0; obj.dim()];
    let mut xp = x.to_vec();
    xp[k] += h;
    let fp = obj.minibatch_grad(&xp, batch, &mut g).unwrap();
    xp[k] = x[k] - h;
    let fm = obj.minibatch_grad(&xp, batch, &mut g).unwrap();
    (fp - fm) / (2.0 * h)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn check_coordinates<O: Objective<f64>>(obj: &O, x: &[f64], batch: &[usize], coords: &[usize], tol: f64, h: f64) {
    let mut g = vec![0.0; obj.dim()];
    obj.minibatch_grad(x, batch, &mut g).unwrap();
    for &k in coords {
        let fd = finite_difference(obj, x, batch, k, h);
        let err = relative_error(g[k], fd);
        assert!(
            err <= tol,
            "coordinate {k}: analytic {} vs numeric {fd}, rel err {err}",
            g[k]
        );
    }
}

#[test]
fn quadratic_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Matrix::from_rows(&[vec![2.0, 0.3, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.1, 0.5]]).unwrap();
    let q = QuadraticEnsemble::random(a, 10, 1.0, &mut rng).unwrap();
    let x = vec![0.4, -1.2, 2.0];
    check_coordinates(&q, &x, &[0, 3, 7], &[0, 1, 2], 1e-8, 1e-5);
}

#[test]
fn logistic_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obj = LogisticRegression::<f64>::synthetic(50, 10, 4, 2.0, &mut rng).unwrap();
    let x: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let coords: Vec<usize> = (0..obj.dim()).collect();
    check_coordinates(&obj, &x, &[1, 2, 5, 8, 13], &coords, 1e-7, 1e-5);
}

#[test]
fn model1_gradient_on_twenty_random_coordinates() {
    let model: Mlp<f64> = load_mnist_subset(data_dir(), 200, 50, 0).unwrap();
    assert_eq!(model.dim(), 79_510);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = model.initial_point(&mut rng);
    let mut order: Vec<usize> = (0..model.sample_count()).collect();
    order.shuffle(&mut rng);
    let batch = &order[..32];
    let mut g = vec![0.0; model.dim()];
    model.minibatch_grad(&x, batch, &mut g).unwrap();
    // half the probes land on coordinates the batch actually touches
    let active: Vec<usize> = (0..model.dim()).filter(|&k| g[k] != 0.0).collect();
    let mut coords: Vec<usize> = active.choose_multiple(&mut rng, 10).copied().collect();
    coords.extend((0..10).map(|_| rng.random_range(0..model.dim())));
    check_coordinates(&model, &x, batch, &coords, 1e-5, 1e-6);
}

#[test]
fn model1_f32_matches_f64() {
    let m64: Mlp<f64> = load_mnist_subset(data_dir(), 100, 10, 3).unwrap();
    let m32: Mlp<f32> = load_mnist_subset(data_dir(), 100, 10, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x64 = m64.initial_point(&mut rng);
    let x32: Vec<f32> = x64.iter().map(|&v| v as f32).collect();
    let (mut g64, mut g32) = (vec![0.0; m64.dim()], vec![0.0f32; m32.dim()]);
    let l64 = m64.full_grad(&x64, &mut g64);
    let l32 = m32.full_grad(&x32, &mut g32);
    assert!((l64 - f64::from(l32)).abs() < 1e-4 * l64.abs());
    let diff: f64 = g64
        .iter()
        .zip(&g32)
        .map(|(a, &b)| (a - f64::from(b)).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = g64.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(diff < 1e-4 * norm);
}

#[test]
fn quadratic_hessian_vector_product_is_curvature() {
    let a = Matrix::from_rows(&[vec![3.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let q = QuadraticEnsemble::new(a.clone(), vec![vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
    let mut out = vec![0.0; 2];
    q.hessian_vector_product(&[5.0, 5.0], &[1.0, -2.0], &mut out);
    assert_eq!(out, a.matvec(&[1.0, -2.0]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_average_is_full_gradient(seed in 0u64..1000, batches in 1usize..6, c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_samples = batches * c;
        let obj = LogisticRegression::<f64>::synthetic(n_samples, 1, 3, 1.0, &mut rng).unwrap();
        let x: Vec<f64> = (0..obj.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut order: Vec<usize> = (0..n_samples).collect();
        order.shuffle(&mut rng);
        let mut avg = vec![0.0f64; obj.dim()];
        let mut g = vec![0.0; obj.dim()];
        for chunk in order.chunks_exact(c) {
            obj.minibatch_grad(&x, chunk, &mut g).unwrap();
            for (a, b) in avg.iter_mut().zip(&g) {
                *a += b / batches as f64;
            }
        }
        let mut full = vec![0.0; obj.dim()];
        obj.full_grad(&x, &mut full);
        for (a, b) in avg.iter().zip(&full) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn quadratic_minimizer_has_zero_gradient(seed in 0u64..1000, samples in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Matrix::from_diagonal(&[1.0, 0.25, 4.0]);
        let q = QuadraticEnsemble::random(a, samples, 3.0, &mut rng).unwrap();
        let mut g = vec![0.0f64; 3];
        q.full_grad(&q.minimizer(), &mut g);
        prop_assert!(g.iter().all(|v| v.abs() < 1e-12));
    }
}

#[test]
fn empty_and_out_of_range_batches_are_errors() {
    let q = QuadraticEnsemble::new(Matrix::identity(1), vec![vec![0.0], vec![1.0]]).unwrap();
    let mut g = vec![0.0];
    assert!(q.minibatch_grad(&[0.0], &[], &mut g).is_err());
    assert!(q.minibatch_grad(&[0.0], &[2], &mut g).is_err());
    assert!(q.minibatch_grad(&[0.0, 1.0], &[0], &mut g).is_err());
}
