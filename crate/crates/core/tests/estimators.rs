use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trunc_sa::engine::{derive_stream, NoiseStream};
use trunc_sa::estimators::{
    ar_recursion, huber, linear_step, rls_step, rml_step, robust_step, sherman_morrison_update, simulate_ar,
    ArModel, EstimatorState, Innovation, LinearProcedureSpec,
};
use trunc_sa::truncation::TruncationSchedule;

fn gaussian_ar(coeffs: &[f64]) -> ArModel {
    ArModel::new(DVector::from_row_slice(coeffs), Innovation::Gaussian { sigma: 1.0 }).unwrap()
}

#[test]
fn stationary_ar1_sample_variance() {
    let series = simulate_ar(&gaussian_ar(&[0.5]), 100_000, 42u64);
    let n = series.len() as f64;
    let mean = series.values.iter().sum::<f64>() / n;
    let var = series.values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    assert!((var - 4.0 / 3.0).abs() < 0.05, "{var}");
}

#[test]
fn stationary_covariance_of_ar2_matches_sample() {
    let model = gaussian_ar(&[0.5, -0.3]);
    let gamma = model.stationary_regressor_covariance().unwrap();
    let series = simulate_ar(&model, 200_000, 7u64);
    let mut sample = DMatrix::zeros(2, 2);
    for t in 3..=series.len() {
        let x = series.window(t);
        sample += &x * x.transpose();
    }
    sample /= (series.len() - 2) as f64;
    assert!((sample - &gamma).amax() < 0.05, "{gamma}");
}

#[test]
fn noiseless_and_white_noise_series() {
    let s = ar_recursion(&dvector![0.5], &[1.0], &[0.0; 20]);
    for t in 1..=20 {
        assert!((s.value(t) - 0.5f64.powi(t as i32)).abs() < 1e-15);
    }
    let white = ArModel::new(dvector![0.0], Innovation::Student { nu: 5.0, scale: 2.0 }).unwrap();
    let series = simulate_ar(&white, 50, derive_stream(1, 1));
    let mut rng = NoiseStream::new(derive_stream(1, 1));
    for t in 1..=50i64 {
        assert_eq!(series.value(t), 2.0 * rng.student(5.0));
    }
    let explosive = gaussian_ar(&[1.5]);
    assert!(!explosive.is_stationary());
    let blown = simulate_ar(&explosive, 1000, 0u64);
    assert!(blown.status.is_diverged());
    assert!(blown.len() < 1000);
}

#[test]
fn sherman_morrison_tracks_direct_inverse() {
    let model = gaussian_ar(&[0.4, 0.2, -0.1]);
    let series = simulate_ar(&model, 500, 3u64);
    let mut state = EstimatorState::standard(3);
    let mut info = DMatrix::identity(3, 3);
    for t in 1..=series.len() {
        let x = series.window(t);
        state = rls_step(&state, &x, series.value(t as i64)).unwrap();
        info += &x * x.transpose();
        let prod = &state.info_inv * &info;
        assert!((prod - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!(state.info_inv.clone().cholesky().is_some());
    }
}

#[test]
fn rls_matches_batch_ridge_formula() {
    let series = simulate_ar(&gaussian_ar(&[0.6, -0.2]), 300, 5u64);
    let theta0 = dvector![0.3, 0.1];
    let i0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
    let mut state = EstimatorState::new(theta0.clone(), i0.clone().try_inverse().unwrap()).unwrap();
    let mut info = i0.clone();
    let mut rhs = &i0 * &theta0;
    for t in 1..=series.len() {
        let x = series.window(t);
        let obs = series.value(t as i64);
        state = rls_step(&state, &x, obs).unwrap();
        info += &x * x.transpose();
        rhs += &x * obs;
    }
    let batch = info.try_inverse().unwrap() * rhs;
    assert!((state.theta - batch).amax() < 1e-10);
}

#[test]
fn student_fisher_information_matches_closed_form() {
    for (nu, s) in [(3.0, 1.0), (5.0, 2.0), (10.0, 0.5), (30.0, 1.3)] {
        let l = Innovation::Student { nu, scale: s }.fisher_information(1);
        let exact = (nu + 1.0) / ((nu + 3.0) * s * s);
        assert!((l - exact).abs() < 1e-8 * exact, "nu={nu}: {l} vs {exact}");
    }
    let g = Innovation::GaussianGrowing { sigma: 2.0, exponent: 0.5 };
    assert!((g.fisher_information(16) - 1.0 / 16.0).abs() < 1e-9);
}

#[test]
fn zero_score_only_updates_information() {
    let state = EstimatorState::standard(2);
    let x = dvector![1.0, -2.0];
    let next = rml_step(&state, &x, 3.0, |_| 0.0, 0.5).unwrap();
    assert_eq!(next.theta, state.theta);
    assert_eq!(next.info_inv, sherman_morrison_update(&state.info_inv, &x, 0.5));
    assert!(rml_step(&state, &x, 3.0, |u| u, 0.0).is_err());
}

#[test]
fn robust_step_reductions() {
    let series = simulate_ar(&gaussian_ar(&[0.5, 0.1]), 200, 9u64);
    let whole = TruncationSchedule::whole_space();
    let mut rls = EstimatorState::standard(2);
    let mut rob = EstimatorState::standard(2);
    for t in 1..=series.len() {
        let x = series.window(t);
        let obs = series.value(t as i64);
        rls = rls_step(&rls, &x, obs).unwrap();
        rob = robust_step(&rob, &x, obs, |u| u, &rls.info_inv, &whole, t as u64, None).unwrap();
        rob.info_inv = rls.info_inv.clone();
        assert!((&rob.theta - &rls.theta).amax() < 1e-12);
    }
    assert_eq!(huber(10.0, 1.0), 1.0);
    assert_eq!(huber(-10.0, 1.0), -1.0);
    assert_eq!(huber(0.3, 1.0), 0.3);
}

#[test]
fn shrinking_sphere_keeps_robust_estimates_inside() {
    let model = ArModel::new(dvector![0.5], Innovation::Student { nu: 3.0, scale: 1.0 }).unwrap();
    let series = simulate_ar(&model, 2000, 4u64);
    let schedule = TruncationSchedule::shrinking_sphere(dvector![0.0], 1.0, 0.3).unwrap();
    let mut aux = EstimatorState::standard(1);
    let mut state = EstimatorState::standard(1);
    for t in 1..=series.len() {
        let x = series.window(t);
        let obs = series.value(t as i64);
        aux = rls_step(&aux, &x, obs).unwrap();
        state = robust_step(&state, &x, obs, |u| huber(u, 1.345), &aux.info_inv, &schedule, t as u64, Some(&aux.theta))
            .unwrap();
        assert!(schedule.region_at(t as u64, Some(&aux.theta)).contains(&state.theta));
    }
}

#[test]
fn linear_procedure_reproduces_rls() {
    let series = simulate_ar(&gaussian_ar(&[0.3, 0.3]), 400, 12u64);
    let mut rls = EstimatorState::standard(2);
    let mut z = DVector::zeros(2);
    for t in 1..=series.len() {
        let x = series.window(t);
        let obs = series.value(t as i64);
        rls = rls_step(&rls, &x, obs).unwrap();
        let spec = LinearProcedureSpec {
            gamma: rls.info_inv.clone(),
            beta: &x * x.transpose(),
        };
        z = linear_step(&spec, &z, &(&x * obs)).unwrap();
        assert!((&z - &rls.theta).amax() < 1e-10);
    }
    let eq = LinearProcedureSpec {
        gamma: DMatrix::identity(2, 2) * 0.5,
        beta: DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]),
    };
    let zp = dvector![0.7, -1.2];
    assert_eq!(linear_step(&eq, &zp, &(&eq.beta * &zp)).unwrap(), zp);
    assert!(linear_step(&eq, &dvector![1.0], &dvector![1.0]).is_err());
}

/// RLS is linear in (θ, θ̂₀) when regressors and innovations are exogenous.
#[test]
fn rls_is_translation_equivariant_with_fixed_regressors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let m = 3;
    let theta = dvector![0.4, -0.2, 0.1];
    let shift = dvector![1.5, 0.5, -2.0];
    let xs: Vec<DVector<f64>> = (0..300).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0))).collect();
    let xis: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let start = dvector![0.1, 0.2, 0.3];
    let mut a = EstimatorState::standard(m);
    a.theta = start.clone();
    let mut b = EstimatorState::standard(m);
    b.theta = &start + &shift;
    let shifted = &theta + &shift;
    for (x, xi) in xs.iter().zip(&xis) {
        a = rls_step(&a, x, x.dot(&theta) + xi).unwrap();
        b = rls_step(&b, x, x.dot(&shifted) + xi).unwrap();
        assert!((&b.theta - &a.theta - &shift).amax() < 1e-10);
    }
}
