use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use npr::gaussian::Regime;
use npr::graph::gen_erdos_renyi;
use npr::{fit_ols, order_test, row_normalize, wald_statistic, OrderTestOptions, PropagatedDesign};

fn normal_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| -> f64 { StandardNormal.sample(rng) })
}

#[test]
fn ols_matches_the_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n = 400;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = normal_matrix(n, 3, &mut rng);
    let y = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let design = PropagatedDesign::build(&w, &x, 2)
        .unwrap()
        .center()
        .forward_select(1e-8)
        .unwrap();
    let fit = fit_ols(&design, &y).unwrap();

    let z = design.selected_matrix();
    let yc = y.add_scalar(-y.mean());
    let beta = (z.transpose() * &z)
        .lu()
        .solve(&(z.transpose() * &yc))
        .unwrap();
    assert!((&fit.theta_hat - &beta).amax() < 1e-10);
    let rss = (&yc - &z * &beta).norm_squared();
    assert!((fit.sigma2_hat - rss / (n - z.ncols()) as f64).abs() < 1e-10);
}

#[test]
fn predictions_on_training_data_reproduce_fitted_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let n = 300;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = normal_matrix(n, 2, &mut rng);
    let y =
        &x.column(0) * 2.0 + DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let raw = PropagatedDesign::build(&w, &x, 3).unwrap();
    let design = raw.clone().center().forward_select(1e-8).unwrap();
    let fit = fit_ols(&design, &y).unwrap();
    let fitted = design.selected_matrix() * &fit.theta_hat;
    let pred = fit.predict(&raw).unwrap();
    assert!((pred - fitted.add_scalar(fit.response_mean)).amax() < 1e-12);
}

#[test]
fn order_zero_design_is_classical_regression() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let n = 200;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = normal_matrix(n, 2, &mut rng);
    let y = x.column(1).into_owned();
    let design = PropagatedDesign::build(&w, &x, 0)
        .unwrap()
        .center()
        .forward_select(1e-8)
        .unwrap();
    let fit = fit_ols(&design, &y).unwrap();
    assert!((fit.theta_hat[0]).abs() < 1e-12 && (fit.theta_hat[1] - 1.0).abs() < 1e-12);
}

#[test]
fn wald_statistics_are_nested_and_order_test_selects_the_signal_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n = 1000;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = normal_matrix(n, 3, &mut rng);
    let wx = w.apply(&x).unwrap();
    let noise = DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let y = &x * DVector::from_vec(vec![1.0, 0.5, -0.5])
        + &wx * DVector::from_vec(vec![1.0, 1.0, 0.0])
        + noise;
    let design = PropagatedDesign::build(&w, &x, 5)
        .unwrap()
        .center()
        .forward_select(1e-8)
        .unwrap();
    let fit = fit_ols(&design, &y).unwrap();
    let stats: Vec<_> = (0..=5).map(|j| wald_statistic(&fit, j).unwrap()).collect();
    for pair in stats.windows(2) {
        assert!(pair[0].statistic >= pair[1].statistic - 1e-9);
        assert!(pair[0].restriction_dim > pair[1].restriction_dim);
    }
    let report = order_test(&fit, 4, 0.05, OrderTestOptions::default()).unwrap();
    assert_eq!(report.selected_order, 2);
    assert!(report.records.iter().all(|r| r.regime == Regime::Chi2));
    assert!(order_test(&fit, 6, 0.05, OrderTestOptions::default()).is_err());
    assert!(order_test(&fit, 4, 1.0, OrderTestOptions::default()).is_err());
}

#[test]
fn large_restrictions_use_the_normal_regime() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let n = 1500;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = normal_matrix(n, 12, &mut rng);
    let y = x.column(0) + DVector::from_fn(n, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
    let design = PropagatedDesign::build(&w, &x, 4)
        .unwrap()
        .center()
        .forward_select(1e-8)
        .unwrap();
    let fit = fit_ols(&design, &y).unwrap();
    let report = order_test(&fit, 3, 0.05, OrderTestOptions::default()).unwrap();
    // 12 * (K - j + 1) columns: 60, 48, 36 exceed 30; 24 does not
    let regimes: Vec<_> = report.records.iter().map(|r| r.regime).collect();
    assert_eq!(
        regimes,
        vec![Regime::Normal, Regime::Normal, Regime::Normal, Regime::Chi2]
    );
    assert!(report
        .records
        .iter()
        .all(|r| (0.0..=1.0).contains(&r.p_value)));
}
