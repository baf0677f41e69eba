use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npr::logistic::{fit_logistic, logistic, predict_proba, LogisticObjective};
use npr::newton::{NewtonOptions, Objective};
use npr::PropagatedDesign;

fn draw(n: usize, theta: &DVector<f64>, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let p = theta.len() - 1;
    let x = DMatrix::from_fn(n, p, |_, _| rng.random_range(-1.5..1.5));
    let y = DVector::from_fn(n, |i, _| {
        let eta = theta[0] + (x.row(i) * theta.rows(1, p))[0];
        if rng.random::<f64>() < logistic(eta) {
            1.0
        } else {
            0.0
        }
    });
    (x, y)
}

fn with_ones(x: &DMatrix<f64>) -> DMatrix<f64> {
    x.clone().insert_column(0, 1.0)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

#[test]
fn score_and_information_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let p = rng.random_range(1..=4);
        let truth = DVector::from_fn(p + 1, |_, _| rng.random_range(-1.0..1.0));
        let (x, y) = draw(rng.random_range(20..60), &truth, &mut rng);
        let xi = with_ones(&x);
        let obj = LogisticObjective::new(&xi, &y).unwrap();
        let theta = DVector::from_fn(p + 1, |_, _| rng.random_range(-0.8..0.8));
        let e = obj.evaluate(&theta);
        let h = 1e-5;
        for j in 0..=p {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (obj.value(&up) - obj.value(&dn)) / (2.0 * h);
            assert!(rel_err(e.gradient[j], fd) < 1e-5);
            let fd_grad = (obj.evaluate(&up).gradient - obj.evaluate(&dn).gradient) / (2.0 * h);
            for i in 0..=p {
                assert!(rel_err(e.information[(i, j)], -fd_grad[i]) < 1e-5);
            }
        }
    }
}

#[test]
fn newton_agrees_with_plain_gradient_ascent() {
    let x = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 5) % 13) as f64 / 6.0 - 1.0);
    let y = DVector::from_fn(20, |i, _| if (i * 11) % 7 < 3 { 1.0 } else { 0.0 });
    let fit = fit_logistic(
        &PropagatedDesign::from_blocks(std::slice::from_ref(&x)),
        &y,
        &NewtonOptions::default(),
    )
    .unwrap();

    let xi = with_ones(&x);
    let obj = LogisticObjective::new(&xi, &y).unwrap();
    let mut theta = DVector::zeros(3);
    for _ in 0..200_000 {
        let g = obj.evaluate(&theta).gradient;
        if g.amax() < 1e-12 {
            break;
        }
        theta += g * 0.05;
    }
    assert!(
        (&fit.theta_hat - &theta).amax() < 1e-6,
        "{} vs {}",
        fit.theta_hat,
        theta
    );
    assert!(
        fit.score_max_norm(&PropagatedDesign::from_blocks(&[x]), &y)
            .unwrap()
            < 1e-8
    );
}

#[test]
fn newton_trace_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let opts = NewtonOptions::default();
    for _ in 0..500 {
        let p = rng.random_range(1..=5);
        let truth = DVector::from_fn(p + 1, |_, _| rng.random_range(-1.5..1.5));
        let (x, y) = draw(rng.random_range(60..200), &truth, &mut rng);
        let fit = fit_logistic(&PropagatedDesign::from_blocks(&[x]), &y, &opts).unwrap();
        assert!(fit.converged);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}

#[test]
fn estimates_are_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = DVector::from_vec(vec![-0.3, 0.8, -0.5]);
    let (x, y) = draw(20_000, &truth, &mut rng);
    let fit = fit_logistic(
        &PropagatedDesign::from_blocks(&[x]),
        &y,
        &NewtonOptions::default(),
    )
    .unwrap();
    for j in 0..3 {
        assert!((fit.theta_hat[j] - truth[j]).abs() < 4.0 * fit.std_errors[j]);
    }
    // standard errors agree with the information scaled back up by N
    let cov = (fit.information.clone() * fit.n as f64)
        .try_inverse()
        .unwrap();
    for j in 0..3 {
        assert!((cov[(j, j)].sqrt() - fit.std_errors[j]).abs() < 1e-10);
    }
}

#[test]
fn predictions_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (x, y) = draw(300, &DVector::from_vec(vec![0.2, 1.0]), &mut rng);
    let d = PropagatedDesign::from_blocks(&[x]);
    let fit = fit_logistic(&d, &y, &NewtonOptions::default()).unwrap();
    let p = predict_proba(&fit, &d).unwrap();
    assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    // the score equation with an intercept balances fitted and observed totals
    assert!((p.sum() - y.sum()).abs() < 1e-6);
}
