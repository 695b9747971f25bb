mod support;

use proptest::prelude::*;
use support::{max_abs_diff, naive_batchnorm, naive_conv, naive_dense, naive_ridge, random_tensor, rng};
use yieldnet::baselines::{linear_fit, linear_fit_with, FeatureMatrix, LassoOptions, Penalty};
use yieldnet::tensor::{batchnorm, conv2d, dense, Mode, Padding, ParamBlock, Tensor};
use yieldnet::train::{compute_metrics, error_percentage, pearson};
use rand::Rng;

fn affine(seed: u64, wshape: Vec<usize>, out: usize) -> ParamBlock {
    let mut r = rng(seed);
    ParamBlock::Affine {
        weights: random_tensor(&mut r, wshape),
        bias: random_tensor(&mut r, vec![out]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn conv_matches_nested_loops(
        n in 1usize..3, h in 1usize..7, w in 1usize..7, cin in 1usize..4, cout in 1usize..4,
        kh in 1usize..4, kw in 1usize..4, stride in 1usize..3, same in any::<bool>(), seed in any::<u64>(),
    ) {
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = random_tensor(&mut rng(seed), vec![n, h, w, cin]);
        let params = affine(seed ^ 1, vec![kh, kw, cin, cout], cout);
        let ParamBlock::Affine { weights, bias } = &params else { unreachable!() };
        match naive_conv(&x, weights, bias.data(), stride, padding) {
            Some(expected) => {
                let got = conv2d(&x, &params, stride, padding).unwrap();
                prop_assert_eq!(got.shape(), expected.shape());
                prop_assert!(max_abs_diff(got.data(), expected.data()) < 1e-9);
            }
            None => prop_assert!(conv2d(&x, &params, stride, padding).is_err()),
        }
    }

    #[test]
    fn batchnorm_matches_nested_loops(
        n in 2usize..5, h in 1usize..7, w in 1usize..7, c in 1usize..4, train in any::<bool>(), seed in any::<u64>(),
    ) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, vec![n, h, w, c]);
        let mut block = ParamBlock::Norm {
            gamma: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
            beta: (0..c).map(|_| r.random_range(-1.0..1.0)).collect(),
            running_mean: (0..c).map(|_| r.random_range(-1.0..1.0)).collect(),
            running_var: (0..c).map(|_| r.random_range(0.5..2.0)).collect(),
        };
        let mode = if train { Mode::Train } else { Mode::Infer };
        let expected = naive_batchnorm(&x, &block, 1e-5, mode);
        let got = batchnorm(&x, &mut block, 1e-5, 0.99, mode).unwrap();
        prop_assert!(max_abs_diff(got.data(), expected.data()) < 1e-9);
    }

    #[test]
    fn dense_matches_nested_loops(n in 1usize..6, f in 1usize..8, u in 1usize..6, seed in any::<u64>()) {
        let x = random_tensor(&mut rng(seed), vec![n, f]);
        let params = affine(seed ^ 2, vec![f, u], u);
        let ParamBlock::Affine { weights, bias } = &params else { unreachable!() };
        let expected = naive_dense(&x, weights, bias.data());
        prop_assert!(max_abs_diff(dense(&x, &params).unwrap().data(), expected.data()) < 1e-9);
    }

    #[test]
    fn batchnorm_train_output_is_standardized(n in 2usize..6, f in 1usize..5, seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = Tensor::new(vec![n, f], (0..n * f).map(|_| r.random_range(-3.0..3.0)).collect()).unwrap();
        // Variance must be bounded away from zero for eps = 0.
        for ch in 0..f {
            let col: Vec<f64> = (0..n).map(|i| x.data()[i * f + ch]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
            prop_assume!(v > 1e-3);
        }
        let mut block = ParamBlock::norm(f);
        let y = batchnorm(&x, &mut block, 0.0, 0.99, Mode::Train).unwrap();
        for ch in 0..f {
            let col: Vec<f64> = (0..n).map(|i| y.data()[i * f + ch]).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|a| (a - m).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((v - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn same_padding_puts_the_extra_pixel_after() {
    // 4 wide, 2-wide filter, stride 1: one pad column, on the right.
    let x = Tensor::new(vec![1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let params = ParamBlock::Affine {
        weights: Tensor::new(vec![1, 2, 1, 1], vec![1.0, 10.0]).unwrap(),
        bias: Tensor::zeros(vec![1]),
    };
    let y = conv2d(&x, &params, 1, Padding::Same).unwrap();
    assert_eq!(y.data(), &[21.0, 32.0, 43.0, 4.0]);
}

fn regression_problem(n: usize, f: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..f).map(|j| r.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64).collect()).collect();
    let y = rows
        .iter()
        .map(|row| 3.0 + row.iter().enumerate().map(|(j, v)| v * (j as f64 - 2.0)).sum::<f64>() + r.random_range(-0.5..0.5))
        .collect();
    (rows, y)
}

#[test]
fn ridge_matches_normal_equations() {
    for seed in 0..5 {
        let (rows, y) = regression_problem(20, 5, seed);
        let (w, b) = naive_ridge(&rows, &y, 0.05);
        let m = linear_fit(&FeatureMatrix::from_rows(&rows).unwrap(), &y, Penalty::L2, 0.05).unwrap();
        assert!(max_abs_diff(&m.weights, &w) < 1e-8, "{:?} vs {w:?}", m.weights);
        assert!((m.intercept - b).abs() < 1e-8);
    }
}

#[test]
fn ridge_dual_matches_normal_equations() {
    // More features than rows takes the n × n route.
    let (rows, y) = regression_problem(6, 9, 7);
    let (w, b) = naive_ridge(&rows, &y, 0.3);
    let m = linear_fit(&FeatureMatrix::from_rows(&rows).unwrap(), &y, Penalty::L2, 0.3).unwrap();
    assert!(max_abs_diff(&m.weights, &w) < 1e-8);
    assert!((m.intercept - b).abs() < 1e-8);
}

#[test]
fn unpenalized_lasso_is_least_squares() {
    let (rows, y) = regression_problem(20, 5, 3);
    let x = FeatureMatrix::from_rows(&rows).unwrap();
    let ridge = linear_fit(&x, &y, Penalty::L2, 0.0).unwrap();
    let opts = LassoOptions {
        tolerance: 1e-12,
        max_sweeps: 100_000,
    };
    let lasso = linear_fit_with(&x, &y, Penalty::L1, 0.0, opts).unwrap();
    assert!(max_abs_diff(&lasso.weights, &ridge.weights) < 1e-6);
    assert!((lasso.intercept - ridge.intercept).abs() < 1e-6);
}

#[test]
fn metrics_hand_values() {
    let m = compute_metrics(&[1.0, 2.0, 3.0, 4.0], &[2.0, 2.0, 2.0, 6.0]).unwrap();
    assert!((m.rmse - 1.5f64.sqrt()).abs() < 1e-12);
    assert!((m.mae - 1.0).abs() < 1e-12);
    assert!((m.r.unwrap() - 6.0 / 60f64.sqrt()).abs() < 1e-12);
    assert_eq!(m.n, 4);

    let perfect = compute_metrics(&[146.0, 150.5], &[146.0, 150.5]).unwrap();
    assert_eq!(perfect.rmse, 0.0);
    assert_eq!(perfect.mae, 0.0);
    assert!((perfect.r.unwrap() - 1.0).abs() < 1e-12);

    assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
    assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_none());
    assert!((error_percentage(150.0, 135.0) - 10.0).abs() < 1e-12);
}
