use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use npr::baselines::{
    fit_lim_2sls, gen_lim, lambda_series_lim, lambda_series_lim2, lim2_mean, lim_mean, npr_mean,
    second_order_weight, Lim2Params, LimData, LimParams,
};
use npr::graph::gen_erdos_renyi;
use npr::{fit_ols, row_normalize, DirectedGraph, PropagatedDesign, RowStochasticOperator};

fn small_operator(n: usize, rng: &mut ChaCha8Rng) -> RowStochasticOperator {
    let edges = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .filter(|&(i, j)| i != j)
        .filter(|_| rng.random::<f64>() < 0.2)
        .collect();
    row_normalize(&DirectedGraph::new(n, edges).unwrap())
}

fn vector(d: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn lim_mean_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let n = rng.random_range(3..=30);
        let w = small_operator(n, &mut rng);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let p = LimParams {
            rho: rng.random_range(-0.9..0.9),
            beta: vector(2, &mut rng),
            delta: vector(2, &mut rng),
            alpha: rng.random_range(-1.0..1.0),
        };
        let wd = w.to_dense();
        let rhs = DVector::from_element(n, p.alpha) + &x * &p.beta + &wd * &x * &p.delta;
        let a = DMatrix::identity(n, n) - &wd * p.rho;
        let dense = a.lu().solve(&rhs).unwrap();
        assert!((lim_mean(&w, &x, &p).unwrap() - dense).amax() < 1e-9);
    }
}

#[test]
fn lim2_mean_matches_dense_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..30 {
        let n = rng.random_range(3..=30);
        let w = small_operator(n, &mut rng);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let rho1 = rng.random_range(-0.5..0.5);
        let p = Lim2Params {
            rho1,
            rho2: rng.random_range(-0.4..0.4) * (1.0 - rho1.abs()),
            gamma1: vector(2, &mut rng),
            gamma2: vector(2, &mut rng),
            gamma3: vector(2, &mut rng),
            alpha: rng.random_range(-1.0..1.0),
        };
        let wd = w.to_dense();
        let w2 = &wd * &wd;
        let rhs = DVector::from_element(n, p.alpha)
            + &x * &p.gamma1
            + &wd * &x * &p.gamma2
            + &w2 * &x * &p.gamma3;
        let a = DMatrix::identity(n, n) - &wd * p.rho1 - &w2 * p.rho2;
        let dense = a.lu().solve(&rhs).unwrap();
        assert!((lim2_mean(&w, &x, &p).unwrap() - dense).amax() < 1e-9);
    }
}

#[test]
fn second_order_weights_follow_the_recursion() {
    for &(r1, r2) in &[(0.3, 0.2), (-0.4, 0.5), (0.6, -0.3), (0.0, 0.7)] {
        assert_eq!(second_order_weight(r1, r2, 0), 1.0);
        assert!((second_order_weight(r1, r2, 1) - r1).abs() < 1e-15);
        for k in 2..30 {
            let c = second_order_weight(r1, r2, k);
            let rec =
                r1 * second_order_weight(r1, r2, k - 1) + r2 * second_order_weight(r1, r2, k - 2);
            assert!((c - rec).abs() < 1e-12);
            // dominant root of z^2 = |r1| z + |r2| bounds the decay
            let root = (f64::abs(r1) + (r1 * r1 + 4.0 * f64::abs(r2)).sqrt()) / 2.0;
            assert!(c.abs() <= (k + 1) as f64 * root.powi(k as i32) + 1e-15);
        }
    }
}

#[test]
fn lim2_series_reproduces_the_dense_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    for _ in 0..20 {
        let n = rng.random_range(5..=30);
        let w = small_operator(n, &mut rng);
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let p = Lim2Params {
            rho1: 0.3,
            rho2: 0.25,
            gamma1: vector(3, &mut rng),
            gamma2: vector(3, &mut rng),
            gamma3: vector(3, &mut rng),
            alpha: 0.0,
        };
        let lambdas: Vec<_> = (0..=80).map(|k| lambda_series_lim2(&p, k)).collect();
        let series = npr_mean(&w, &x, &lambdas).unwrap();
        assert!((series - lim2_mean(&w, &x, &p).unwrap()).amax() < 1e-8);
    }
}

#[test]
fn first_order_series_is_the_special_case() {
    let p = LimParams {
        rho: 0.4,
        beta: DVector::from_vec(vec![1.0, -0.5]),
        delta: DVector::from_vec(vec![0.3, 0.2]),
        alpha: 0.0,
    };
    for k in 0..10 {
        assert!(
            (lambda_series_lim(&p, k) - lambda_series_lim2(&p.as_second_order(), k)).amax() < 1e-14
        );
    }
}

#[test]
fn noiseless_lim_regression_recovers_the_reduced_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let n = 600;
    let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
    let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let p = LimParams {
        rho: 0.3,
        beta: DVector::from_vec(vec![1.0, -0.5, 0.8]),
        delta: DVector::from_vec(vec![0.4, 0.2, -0.3]),
        alpha: 0.0,
    };
    let y = gen_lim(&w, &x, &p, 0.0, &mut rng).unwrap();
    let k_fit = 14;
    let design = PropagatedDesign::build(&w, &x, k_fit)
        .unwrap()
        .center()
        .forward_select(1e-12)
        .unwrap();
    let fit = fit_ols(&design, &y).unwrap();
    assert_eq!(fit.tags.iter().filter(|t| t.order <= 4).count(), 15);
    for (tag, est) in fit.tags.iter().zip(fit.theta_hat.iter()) {
        if tag.order <= 4 {
            let truth = lambda_series_lim(&p, tag.order)[tag.covariate];
            assert!((est - truth).abs() < 1e-6, "{tag}: {est} vs {truth}");
        }
    }
}

#[test]
fn two_stage_least_squares_recovers_the_spillover() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let p = LimParams {
        rho: 0.25,
        beta: DVector::from_vec(vec![1.0, -0.5, 0.5]),
        delta: DVector::from_vec(vec![0.5, 0.5, -0.5]),
        alpha: 0.5,
    };
    let mut rhos = Vec::new();
    for _ in 0..20 {
        let n = 2000;
        let w = row_normalize(&gen_erdos_renyi(n, &mut rng).unwrap());
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.5..1.5));
        let y = gen_lim(&w, &x, &p, 1.0, &mut rng).unwrap();
        rhos.push(
            fit_lim_2sls(&LimData::new(&w, &x, &y).unwrap(), None)
                .unwrap()
                .rho,
        );
    }
    let mean = rhos.iter().sum::<f64>() / rhos.len() as f64;
    assert!((mean - 0.25).abs() < 0.05, "mean rho {mean}");
}

#[test]
fn invalid_spillovers_are_rejected() {
    let w = row_normalize(&DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap());
    let x = DMatrix::from_element(2, 1, 1.0);
    let p = LimParams {
        rho: 1.0,
        beta: DVector::from_element(1, 1.0),
        delta: DVector::from_element(1, 0.0),
        alpha: 0.0,
    };
    assert!(lim_mean(&w, &x, &p).is_err());
}
