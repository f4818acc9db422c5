use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rlr_core::sde::{em_step, sample_exact_ou, sde_mean_position, trajectory_deviation, weak_error_probe};
use rlr_core::thermo::{compare_to_gibbs, effective_temperature, same_temperature, GibbsTolerances};
use rlr_core::{
    GibbsDensity, Matrix, Objective, OuKernel, Quadratic, QuadraticEnsemble, Rational, SdeParams, SdeState,
    TemperatureKey,
};

/// Errors of the discrete mean against the continuous mean at unit horizon
/// for `A = diag(1, 1/2)`, `x0 = (1, -1)`, `μ = 0`, computed independently
/// with a dense matrix exponential of the 4x4 drift.
const WEAK_ERRORS: [(f64, f64); 4] = [
    (0.1, 0.03429502198864511),
    (0.05, 0.015688608342367166),
    (0.025, 0.007560382007738971),
    (0.0125, 0.003716343059746936),
];

fn diag_potential() -> Quadratic<f64> {
    Quadratic::new(Matrix::from_diagonal(&[1.0, 0.5]), vec![0.0, 0.0]).unwrap()
}

#[test]
fn weak_error_matches_reference_values() {
    let rates: Vec<f64> = WEAK_ERRORS.iter().map(|p| p.0).collect();
    let report = weak_error_probe(&diag_potential(), 0.0, &rates, 1.0, &[1.0, -1.0]).unwrap();
    for (&(l, e), &(rl, re)) in report.points.iter().zip(&WEAK_ERRORS) {
        assert_eq!(l, rl);
        assert!((e - re).abs() < 1e-9 * re, "l = {l}: {e} vs {re}");
    }
    assert!((0.8..=1.5).contains(&report.slope), "slope {}", report.slope);
}

#[test]
fn trajectory_deviation_is_first_order() {
    let p = Quadratic::new(
        Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        vec![0.5, 0.0],
    )
    .unwrap();
    let d1 = trajectory_deviation(&p, 0.02, 0.0, &[1.0, 1.0], 2.0).unwrap();
    let d2 = trajectory_deviation(&p, 0.01, 0.0, &[1.0, 1.0], 2.0).unwrap();
    let ratio = d1 / d2;
    assert!((1.7..2.3).contains(&ratio), "ratio {ratio}");
}

#[test]
fn continuous_mean_starts_at_initial_point_and_relaxes() {
    let p = diag_potential();
    assert_eq!(
        sde_mean_position(&p, 0.1, 0.5, &[1.0, -1.0], 0.0).unwrap(),
        vec![1.0, -1.0]
    );
    let late = sde_mean_position(&p, 0.1, 0.5, &[1.0, -1.0], 200.0).unwrap();
    assert!(late.iter().all(|v| v.abs() < 1e-8));
}

fn single_well(k: f64) -> QuadraticEnsemble<f64> {
    QuadraticEnsemble::new(Matrix::from_diagonal(&[k]), vec![vec![0.0]]).unwrap()
}

#[test]
fn noiseless_em_with_step_equal_to_rate_is_full_batch_sgd() {
    let a = Matrix::from_rows(&[vec![1.5, 0.2], vec![0.2, 0.7]]).unwrap();
    let q = QuadraticEnsemble::new(a, vec![vec![1.0, 0.0], vec![-1.0, 2.0], vec![0.0, 1.0]]).unwrap();
    let (l, mu) = (0.05, 0.8);
    let p = SdeParams::new(l, mu, 0.0, 1).unwrap().with_dt(l);
    let mut s = SdeState::at_rest(vec![3.0, -2.0]);
    let (mut x, mut v) = (vec![3.0f64, -2.0], vec![0.0f64, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut g = vec![0.0; 2];
    for _ in 0..200 {
        em_step(&mut s, &q, &p, &mut rng).unwrap();
        q.full_grad(&x, &mut g);
        for k in 0..2 {
            v[k] = mu * v[k] - g[k];
            x[k] += l * v[k];
        }
    }
    for k in 0..2 {
        assert!((s.x[k] - x[k]).abs() < 1e-12 && (s.v[k] - v[k]).abs() < 1e-12);
    }
}

#[test]
fn noiseless_em_converges_to_minimizer() {
    let q = single_well(2.0);
    let p = SdeParams::new(0.01, 0.5, 0.0, 1).unwrap();
    let mut s = SdeState::at_rest(vec![1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..20_000 {
        em_step(&mut s, &q, &p, &mut rng).unwrap();
    }
    assert!(s.x[0].abs() < 1e-10 && s.v[0].abs() < 1e-8);
}

#[test]
fn em_mean_converges_to_exact_mean_at_first_order() {
    let q = single_well(1.0);
    let p = Quadratic::from(&q);
    let (l, mu, t) = (0.01, 0.5, 0.2);
    let exact = sde_mean_position(&p, l, mu, &[1.0], t).unwrap()[0];
    let em_error = |dt: f64| {
        let params = SdeParams::new(l, mu, 0.0, 1).unwrap().with_dt(dt);
        let mut s = SdeState::at_rest(vec![1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..(t / dt).round() as usize {
            em_step(&mut s, &q, &params, &mut rng).unwrap();
        }
        (s.x[0] - exact).abs()
    };
    let (e1, e2) = (em_error(l / 20.0), em_error(l / 40.0));
    assert!((1.6..2.5).contains(&(e1 / e2)), "{e1} {e2}");
}

#[test]
fn em_transition_variance_matches_exact_kernel() {
    let q = single_well(1.0);
    let pot = Quadratic::from(&q);
    let (l, mu, t) = (0.01, 0.5, 0.05);
    let base = SdeParams::new(l, mu, 1.0, 1).unwrap();
    let paths = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let em = base.with_dt(l / 50.0);
    let kernel = OuKernel::new(&pot, &base.with_dt(t)).unwrap();
    let (mut em_v, mut ou_v) = (Vec::with_capacity(paths), Vec::with_capacity(paths));
    for _ in 0..paths {
        let mut s = SdeState::at_rest(vec![0.5]);
        for _ in 0..(t / em.dt).round() as usize {
            em_step(&mut s, &q, &em, &mut rng).unwrap();
        }
        em_v.push(s.v[0]);
        let mut s = SdeState::at_rest(vec![0.5]);
        kernel.step(&mut s, &mut rng).unwrap();
        ou_v.push(s.v[0]);
    }
    let var = |d: &[f64]| {
        let m = d.iter().sum::<f64>() / d.len() as f64;
        (
            m,
            d.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (d.len() - 1) as f64,
        )
    };
    let ((m_em, v_em), (m_ou, v_ou)) = (var(&em_v), var(&ou_v));
    assert!((v_em / v_ou - 1.0).abs() < 0.08, "{v_em} vs {v_ou}");
    assert!((m_em - m_ou).abs() < 5.0 * (v_ou / paths as f64).sqrt() + 0.05 * m_ou.abs());
}

#[test]
fn exact_sampler_reaches_gibbs_law_and_rejects_wrong_temperature() {
    let pot = Quadratic::new(
        Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        vec![0.3, -0.2],
    )
    .unwrap();
    // a long step between samples keeps successive draws nearly independent
    let p = SdeParams::new(0.01, 0.9, 1.0, 4).unwrap().with_dt(0.5);
    let kernel = OuKernel::new(&pot, &p).unwrap();
    let samples = sample_exact_ou(&kernel, 4, 10_000, 17).unwrap();
    let gibbs = GibbsDensity::from_params(pot, &p).unwrap();
    let tol = GibbsTolerances::default();
    let ok = compare_to_gibbs(&samples, &gibbs, &tol).unwrap();
    assert!(ok.pass, "{:?}", ok.marginals);
    let wrong = compare_to_gibbs(&samples, &gibbs.with_temperature(gibbs.temperature / 2.0), &tol).unwrap();
    assert!(!wrong.pass);
    let (cov_x, _) = kernel.stationary_covariance();
    assert!(rlr_core::linalg::relative_frobenius_error(&cov_x, &gibbs.position_covariance().unwrap()) < 1e-12);
}

#[test]
fn exact_sampler_is_reproducible_and_too_few_samples_is_an_error() {
    let pot = Quadratic::scalar(1.0);
    let p = SdeParams::new(0.01, 0.9, 1.0, 4).unwrap().with_dt(0.1);
    let kernel = OuKernel::new(&pot, &p).unwrap();
    let a = sample_exact_ou(&kernel, 3, 100, 5).unwrap();
    let b = sample_exact_ou(&kernel, 3, 100, 5).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.len(), 300);
    let gibbs = GibbsDensity::from_params(pot, &p).unwrap();
    assert!(compare_to_gibbs(&a, &gibbs, &GibbsTolerances::default()).is_err());
}

#[test]
fn correction_adds_half_rate_curvature_term() {
    let q = single_well(3.0);
    let (l, dt) = (0.1, 0.01);
    let p = SdeParams::new(l, 0.0, 0.0, 1)
        .unwrap()
        .with_dt(dt)
        .with_correction(true);
    let mut s = SdeState::at_rest(vec![1.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    em_step(&mut s, &q, &p, &mut rng).unwrap();
    // ∇f + (l/2) k ∇f with ∇f = k x
    let grad = 3.0 * (1.0 + 0.5 * l * 3.0);
    let expected_v = -dt * grad / l;
    assert!((s.v[0] - expected_v).abs() < 1e-6 * expected_v.abs());
}

#[test]
fn em_rejects_unstable_step() {
    let q = single_well(1.0);
    let p = SdeParams::new(0.01, 0.0, 1.0, 1).unwrap().with_dt(0.05);
    let mut s = SdeState::at_rest(vec![0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(em_step(&mut s, &q, &p, &mut rng).is_err());
}

#[test]
fn equal_temperature_pairs() {
    let key = |l: f64, c: usize| TemperatureKey::new(l, c, 0.0);
    assert!(same_temperature(&key(2e-4, 60), &key(1e-4, 30), 1e-12));
    assert!(!same_temperature(&key(1e-4, 60), &key(1e-4, 30), 1e-12));
    assert!(!same_temperature(&key(1e-4, 60), &key(2e-4, 60), 1e-12));
    let r = |n, d| Rational::new(n, d);
    let exact = |l, c| TemperatureKey::new(l, c, r(0, 1));
    assert!(same_temperature(
        &exact(r(2, 10_000), 60),
        &exact(r(1, 10_000), 30),
        r(0, 1)
    ));
    // momentum pair at fixed l: 60 (1 - 3/4) = 30 (1 - 1/2)
    assert!(same_temperature(
        &TemperatureKey::new(1e-3, 60, 0.75),
        &TemperatureKey::new(1e-3, 30, 0.5),
        1e-12
    ));
    let at_l = |c, mu| TemperatureKey::new(r(1, 1000), c, mu);
    assert!(same_temperature(&at_l(60, r(3, 4)), &at_l(30, r(1, 2)), r(0, 1)));
    assert!(!same_temperature(&at_l(60, r(3, 4)), &at_l(30, r(3, 4)), r(0, 1)));
}

/// `f ≡ 0`: only friction acts on the velocity.
struct Flat;

impl Objective<f64> for Flat {
    fn dim(&self) -> usize {
        2
    }
    fn sample_count(&self) -> usize {
        1
    }
    fn sample_loss(&self, _i: usize, _x: &[f64]) -> f64 {
        0.0
    }
    fn accumulate_sample_grad(&self, _i: usize, _x: &[f64], _scale: f64, _out: &mut [f64]) -> f64 {
        0.0
    }
}

#[test]
fn pure_friction_decays_geometrically() {
    // γ = (1 - μ)/l = 1, D = 0
    let dt = 0.1;
    let p = SdeParams::new(0.5, 0.5, 0.0, 1).unwrap().with_dt(dt);
    let mut s = SdeState {
        x: vec![0.0, 0.0],
        v: vec![1.0, -2.0],
        t: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in 1..=20 {
        let before = s.v.clone();
        em_step(&mut s, &Flat, &p, &mut rng).unwrap();
        for (a, b) in s.v.iter().zip(&before) {
            assert!((a - (1.0 - dt) * b).abs() < 1e-15);
        }
        assert!((s.v[0] - (1.0 - dt).powi(k)).abs() < 1e-12);
    }
}

#[test]
fn exact_kernel_with_long_step_draws_from_stationary_law() {
    let pot = Quadratic::new(
        Matrix::from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap(),
        vec![1.0, -1.0],
    )
    .unwrap();
    let p = SdeParams::new(0.1, 0.5, 1.0, 4).unwrap().with_dt(1e4);
    let kernel = OuKernel::new(&pot, &p).unwrap();
    let (cov_x, _) = kernel.stationary_covariance();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = 40_000;
    let (mut sx, mut sxx, mut sv) = (0.0, 0.0, 0.0);
    for _ in 0..m {
        // every draw starts far from equilibrium
        let mut s = SdeState {
            x: vec![50.0, -30.0],
            v: vec![10.0, 5.0],
            t: 0.0,
        };
        kernel.step(&mut s, &mut rng).unwrap();
        sx += s.x[0];
        sxx += (s.x[0] - 1.0) * (s.x[0] - 1.0);
        sv += s.v[1] * s.v[1];
    }
    let m = m as f64;
    let var_x = cov_x[(0, 0)];
    assert!((sx / m - 1.0).abs() < 4.0 * (var_x / m).sqrt());
    assert!((sxx / m / var_x - 1.0).abs() < 0.04);
    assert!((sv / m / p.temperature() - 1.0).abs() < 0.04);
}

#[test]
fn momentum_raises_temperature() {
    let t0 = effective_temperature(0.01f64, 1.0, 10, 0.0).unwrap().temperature;
    let t9 = effective_temperature(0.01f64, 1.0, 10, 0.9).unwrap().temperature;
    assert!((t9 / t0 - 10.0).abs() < 1e-12);
}

fn rational() -> impl Strategy<Value = Rational> {
    (1i64..50, 1i64..50).prop_map(|(n, d)| Rational::new(n, d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn temperature_is_homogeneous(l in rational(), d in rational(), c in 1usize..20, s in 1usize..8, mu_num in 0i64..10) {
        let mu = Rational::new(mu_num, 10);
        let base = effective_temperature(l, d, c, mu).unwrap().temperature;
        let scaled = effective_temperature(l * Rational::from_integer(s as i64), d, c * s, mu).unwrap().temperature;
        prop_assert_eq!(base, scaled);
        let hot = effective_temperature(l, d * Rational::from_integer(s as i64), c, mu).unwrap().temperature;
        prop_assert_eq!(hot, base * Rational::from_integer(s as i64));
    }

    #[test]
    fn exact_equal_temperature_is_an_equivalence(
        l in rational(), c in 1usize..12, s in 1usize..6, u in 1usize..6, mu_num in 0i64..10
    ) {
        let zero = Rational::new(0, 1);
        let mu = Rational::new(mu_num, 10);
        let a = TemperatureKey::new(l, c, mu);
        let b = TemperatureKey::new(l * Rational::from_integer(s as i64), c * s, mu);
        let cc = TemperatureKey::new(l * Rational::from_integer((s * u) as i64), c * s * u, mu);
        prop_assert!(same_temperature(&a, &a, zero));
        prop_assert_eq!(same_temperature(&a, &b, zero), same_temperature(&b, &a, zero));
        prop_assert!(same_temperature(&a, &b, zero) && same_temperature(&b, &cc, zero));
        prop_assert!(same_temperature(&a, &cc, zero));
        let off = TemperatureKey::new(l * Rational::new(3, 2), c, mu);
        prop_assert!(!same_temperature(&a, &off, zero));
    }

    #[test]
    fn f64_temperature_matches_rational(ln in 1i64..1000, c in 1usize..512, mu_num in 0i64..100) {
        let exact = effective_temperature(Rational::new(ln, 100_000), Rational::from_integer(1), c, Rational::new(mu_num, 100))
            .unwrap()
            .temperature;
        let float = effective_temperature(ln as f64 / 1e5, 1.0, c, mu_num as f64 / 100.0).unwrap().temperature;
        let reference = *exact.numer() as f64 / *exact.denom() as f64;
        prop_assert!((float - reference).abs() <= 1e-14 * reference);
    }
}
