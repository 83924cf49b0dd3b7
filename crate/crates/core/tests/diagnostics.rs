use nalgebra::{dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trunc_sa::diagnostics::{
    adt_partial_sum, check_drift, decrement_k, decrement_k_with, lyapunov_track, rate_fit, rate_fit_series,
    uniform_grid, DriftCondition, DriftOptions, ErrorSeries, QuadraticLyapunov,
};
use trunc_sa::engine::{
    replicate, run, GainSequence, NoiseField, RegressionField, SaProblem, StepSizePolicy,
};
use trunc_sa::truncation::TruncationSchedule;

fn problem(step: StepSizePolicy, field: RegressionField, noise: NoiseField, start: DVector<f64>) -> SaProblem {
    SaProblem::new(start, step, field, noise, TruncationSchedule::whole_space()).unwrap()
}

#[test]
fn noiseless_harmonic_linear_path_has_non_increasing_distance() {
    let p = problem(
        StepSizePolicy::Harmonic,
        RegressionField::linear_scalar(0.3, dvector![1.0, -1.0]),
        NoiseField::zero(),
        dvector![4.0, 2.0],
    );
    let traj = run(&p, 200, 0u64);
    let v = lyapunov_track(&traj, &QuadraticLyapunov::identity(2), &dvector![1.0, -1.0]).unwrap();
    assert!(v.windows(2).all(|w| w[1] <= w[0]));
    assert!(v[199] < v[0]);
}

#[test]
fn decrement_without_noise_is_an_algebraic_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let m = 3;
        let a = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let c = &a * a.transpose() + DMatrix::identity(m, m);
        let g = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let gain = &g * g.transpose() + DMatrix::identity(m, m) * 0.1;
        let root = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let u = DVector::from_fn(m, |_, _| rng.random_range(-2.0..2.0));
        let t = rng.random_range(1..50u64);
        let p = problem(
            StepSizePolicy::Harmonic,
            RegressionField::linear(gain.clone(), root).unwrap(),
            NoiseField::zero(),
            DVector::zeros(m),
        );
        let k = decrement_k(&p, &QuadraticLyapunov::Constant(c.clone()), t, &u).unwrap();
        let gr = -(&gain * &u) / t as f64;
        let expected = 2.0 * u.dot(&(&c * &gr)) + gr.dot(&(&c * &gr));
        assert!((k - expected).abs() < 1e-12 * (1.0 + expected.abs()), "{k} vs {expected}");
    }
}

#[test]
fn decrement_examples() {
    let p = problem(
        StepSizePolicy::Harmonic,
        RegressionField::linear_scalar(1.0, dvector![0.0]),
        NoiseField::zero(),
        dvector![0.0],
    );
    let c = QuadraticLyapunov::Constant(DMatrix::identity(1, 1));
    for u in [-2.0, 0.5, 3.0] {
        let k = decrement_k(&p, &c, 1, &dvector![u]).unwrap();
        assert!((k + u * u).abs() < 1e-15);
    }
    let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let p2 = problem(
        StepSizePolicy::PowerDecay { exponent: 0.75 },
        RegressionField::linear_scalar(1.0, dvector![1.0, 1.0]),
        NoiseField::zero(),
        dvector![0.0, 0.0],
    );
    let cm = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    let k = decrement_k_with(&p2, &QuadraticLyapunov::Constant(cm.clone()), 4, &DVector::zeros(2), &sigma).unwrap();
    let g = 4f64.powf(-0.75);
    assert!((k - g * g * (&cm * &sigma).trace()).abs() < 1e-14);
}

#[test]
fn drift_probes() {
    let root = dvector![0.0];
    let grid = uniform_grid(1, -2.0, 2.0, 41);
    let opts = DriftOptions::default();
    let linear = RegressionField::linear_scalar(1.0, root.clone());
    for cond in [DriftCondition::D1, DriftCondition::H1, DriftCondition::H4, DriftCondition::B1, DriftCondition::Y1] {
        let r = check_drift(&linear, None, &root, cond, &grid, (1, 10), &opts).unwrap();
        assert!(r.passed(), "{cond}");
    }
    let cubic = RegressionField::polynomial(vec![0.0, 0.0, 1.0], 0.0).unwrap();
    let r = check_drift(&cubic, None, &root, DriftCondition::B1, &[dvector![0.5]], (1, 1), &opts).unwrap();
    assert_eq!(r.violations, 1);
    let r = check_drift(&cubic, None, &root, DriftCondition::D1, &grid, (1, 5), &opts).unwrap();
    assert!(r.passed());
    assert!(check_drift(&linear, None, &root, DriftCondition::D1, &[], (1, 5), &opts).is_err());
}

#[test]
fn w1_with_harmonic_gain() {
    // Δa_t = 1 and ΔᵀR = −‖Δ‖² ≤ −½‖Δ‖²
    let root = dvector![1.0, 0.0];
    let field = RegressionField::linear_scalar(1.0, root.clone());
    let opts = DriftOptions {
        t_min: 1,
        gain: Some(GainSequence::power(1.0, 1.0)),
    };
    let grid = uniform_grid(2, -1.0, 2.0, 7);
    let r = check_drift(&field, None, &root, DriftCondition::W1, &grid, (1, 20), &opts).unwrap();
    assert!(r.passed());
    let weak = RegressionField::linear_scalar(0.4, root.clone());
    let r = check_drift(&weak, None, &root, DriftCondition::W1, &grid, (1, 20), &opts).unwrap();
    assert!(!r.passed());
}

#[test]
fn rate_fit_recovers_exact_power_laws() {
    let times: Vec<u64> = (1..=1000).collect();
    for exponent in [-2.0 / 3.0, -1.0, 0.0] {
        let s = ErrorSeries::new(times.clone(), times.iter().map(|&t| (t as f64).powf(exponent)).collect()).unwrap();
        let r = rate_fit_series(&[s], &[0.5], 0.5).unwrap();
        assert!((r.slope.unwrap() - exponent).abs() < 1e-9);
    }
}

#[test]
fn rate_fit_excludes_exact_zeros_and_incomplete_runs() {
    let times: Vec<u64> = (1..=100).collect();
    let mut errs: Vec<f64> = times.iter().map(|&t| 1.0 / t as f64).collect();
    errs[79] = 0.0;
    let r = rate_fit_series(&[ErrorSeries::new(times, errs).unwrap()], &[], 0.5).unwrap();
    assert_eq!(r.zero_points_excluded, 1);
    assert!((r.slope.unwrap() + 1.0).abs() < 1e-9);

    let cubic = SaProblem::new(
        dvector![10.0],
        StepSizePolicy::Harmonic,
        RegressionField::polynomial(vec![1.0, 0.0, 1.0], 0.0).unwrap(),
        NoiseField::gaussian(1.0).unwrap(),
        TruncationSchedule::whole_space(),
    )
    .unwrap();
    let free = replicate(&cubic, 100, 3, 0);
    assert!(rate_fit(&free, &dvector![0.0], &[], 0.5).is_err());
}

#[test]
fn adt_partial_sums() {
    let quad = GainSequence::power(1.0, 2.0);
    let h10: f64 = (1..=10).map(|t| 1.0 / t as f64).sum();
    assert!((adt_partial_sum(&quad, 10) - 2.0 * h10).abs() < 1e-12);
    assert!(adt_partial_sum(&quad, 200) > 10.0);
    let lin = GainSequence::power(1.0, 1.0);
    for n in [1, 10, 1000] {
        assert_eq!(adt_partial_sum(&lin, n), 0.0);
    }
    let p15 = GainSequence::power(1.0, 1.5);
    let sums: Vec<f64> = [10u64, 100, 1000, 100_000].iter().map(|&n| adt_partial_sum(&p15, n)).collect();
    assert!(sums.windows(2).all(|w| w[1] >= w[0]));
    assert!(*sums.last().unwrap() > 10.0);
}
