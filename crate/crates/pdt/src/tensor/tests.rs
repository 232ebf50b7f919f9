use super::*;
use crate::gradcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn randn(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn grad_of_sum(params: &[(String, Tensor)], build: impl FnMut() -> Tensor) -> f64 {
    let reports = gradcheck::check_params(params, 1e-3, build).unwrap();
    gradcheck::max_rel_err(&reports)
}

fn sum_all(t: &Tensor) -> Tensor {
    let axes: Vec<usize> = (0..t.shape().len()).collect();
    reduce(t, ReduceKind::Sum, &axes, false).unwrap()
}

#[test]
fn conv2d_identity_kernel() {
    let x = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
    let y = conv2d(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y.shape(), [1, 1, 3, 3]);
    assert_eq!(y.to_vec(), vec![1.0; 9]);
}

#[test]
fn conv2d_identity_is_exact_on_random_input() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let x = Tensor::from_vec(vec![2, 1, 4, 4], randn(&mut rng, 32)).unwrap();
    let w = Tensor::from_vec(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
    let y = conv2d(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
}

#[test]
fn conv2d_full_window_sum() {
    let x = Tensor::from_vec(
        vec![1, 1, 3, 3],
        vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
    )
    .unwrap();
    let w = Tensor::from_vec(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
    let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
    let y = conv2d(&x, &w, &b, 1, 0).unwrap();
    assert_eq!(y.shape(), [1, 1, 1, 1]);
    assert_eq!(y.item(), 45.0);
}

#[test]
fn conv2d_rejects_bad_shapes() {
    let x = Tensor::zeros(vec![1, 2, 3, 3]);
    let w = Tensor::zeros(vec![1, 3, 1, 1]); // Cin mismatch
    let b = Tensor::zeros(vec![1]);
    let err = conv2d(&x, &w, &b, 1, 0).unwrap_err();
    assert!(matches!(err, crate::Error::Dimension(_)), "{err}");
    assert!(err.to_string().contains("Cin"), "{err}");

    // floor semantics: 4x4 input, 3x3 kernel, stride 2 -> 1x1 output
    let x = Tensor::zeros(vec![1, 1, 4, 4]);
    let w = Tensor::zeros(vec![1, 1, 3, 3]);
    let y = conv2d(&x, &w, &b, 2, 0).unwrap();
    assert_eq!(y.shape(), [1, 1, 1, 1]);

    // kernel larger than padded input
    let err = conv2d(&x, &Tensor::zeros(vec![1, 1, 5, 5]), &b, 1, 0).unwrap_err();
    assert!(matches!(err, crate::Error::Dimension(_)), "{err}");
}

#[test]
fn conv2d_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let x = Tensor::param(vec![2, 2, 5, 5], randn(&mut rng, 100)).unwrap();
        let w = Tensor::param(vec![3, 2, 3, 3], randn(&mut rng, 54)).unwrap();
        let b = Tensor::param(vec![3], randn(&mut rng, 3)).unwrap();
        let params = [
            ("x".to_string(), x.clone()),
            ("w".to_string(), w.clone()),
            ("b".to_string(), b.clone()),
        ];
        let err = grad_of_sum(&params, || sum_all(&conv2d(&x, &w, &b, 2, 1).unwrap()));
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn avg_pool_constant_and_mean() {
    let x = Tensor::full(vec![1, 1, 5, 5], 3.25);
    let y = avg_pool2d(&x, 3, 1, 0).unwrap();
    assert!(y.to_vec().iter().all(|&v| (v - 3.25).abs() < 1e-15));

    let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = avg_pool2d(&x, 2, 2, 0).unwrap();
    assert_eq!(y.item(), 2.5);
}

#[test]
fn avg_pool_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(100 + seed);
        let x = Tensor::param(vec![1, 2, 4, 4], randn(&mut rng, 32)).unwrap();
        let params = [("x".to_string(), x.clone())];
        let err = grad_of_sum(&params, || sum_all(&avg_pool2d(&x, 3, 1, 1).unwrap()));
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn relu_examples() {
    let x = Tensor::from_vec(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(relu(&x).to_vec(), vec![0.0, 0.0, 2.0]);

    let x = Tensor::param(vec![4], vec![-1.0, -2.0, -0.5, -3.0]).unwrap();
    let y = relu(&x);
    assert!(y.to_vec().iter().all(|&v| v == 0.0));
    backward(&sum_all(&y)).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0; 4]);
}

#[test]
fn relu_gradcheck_away_from_kink() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(200 + seed);
        let data: Vec<f64> = (0..16)
            .map(|_| {
                let v: f64 = rng.gen_range(0.02..1.0);
                if rng.gen_bool(0.5) {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let x = Tensor::param(vec![16], data).unwrap();
        let params = [("x".to_string(), x.clone())];
        // square the output so the gradient is non-constant
        let err = grad_of_sum(&params, || {
            let y = relu(&x);
            sum_all(&mul(&y, &y).unwrap())
        });
        assert!(err < 1e-4, "seed {seed}: rel err {err}");
    }
}

#[test]
fn sigmoid_examples() {
    assert_eq!(sigmoid(&Tensor::scalar(0.0)).item(), 0.5);
    assert_eq!(sigmoid(&Tensor::scalar(40.0)).item(), 1.0);
    assert_eq!(sigmoid(&Tensor::scalar(750.0)).item(), 1.0);
    assert!(sigmoid(&Tensor::scalar(-750.0)).item() >= 0.0);
}

#[test]
fn sigmoid_and_exp_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(300 + seed);
        let x = Tensor::param(vec![8], randn(&mut rng, 8)).unwrap();
        let params = [("x".to_string(), x.clone())];
        let err = grad_of_sum(&params, || sum_all(&sigmoid(&x)));
        assert!(err < 1e-4);
        let err = grad_of_sum(&params, || sum_all(&exp(&x)));
        assert!(err < 1e-4);
    }
}

#[test]
fn concat_single_part_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let x = Tensor::from_vec(vec![1, 2, 2, 2], randn(&mut rng, 8)).unwrap();
    let y = concat_channels(&[x.clone()]).unwrap();
    assert_eq!(y.to_vec(), x.to_vec());
    assert_eq!(y.shape(), x.shape());
}

#[test]
fn concat_ordering_and_roundtrip() {
    let a = Tensor::from_vec(vec![1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let b = Tensor::from_vec(vec![1, 3, 1, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
    let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(y.shape(), [1, 5, 1, 2]);
    // channels 0-1 from the first part, bit-exact slicing back
    let yd = y.to_vec();
    assert_eq!(&yd[..4], a.to_vec().as_slice());
    assert_eq!(&yd[4..], b.to_vec().as_slice());

    let c = Tensor::from_vec(vec![2, 1, 1, 2], vec![0.0; 4]).unwrap();
    let err = concat_channels(&[a, c]).unwrap_err();
    assert!(matches!(err, crate::Error::Dimension(_)));
}

#[test]
fn concat_gradcheck() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let a = Tensor::param(vec![1, 2, 2, 2], randn(&mut rng, 8)).unwrap();
    let b = Tensor::param(vec![1, 1, 2, 2], randn(&mut rng, 4)).unwrap();
    let params = [("a".to_string(), a.clone()), ("b".to_string(), b.clone())];
    let err = grad_of_sum(&params, || {
        let y = concat_channels(&[a.clone(), b.clone()]).unwrap();
        sum_all(&mul(&y, &y).unwrap())
    });
    assert!(err < 1e-4);
}

#[test]
fn reduce_examples() {
    let x = Tensor::from_vec(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(reduce(&x, ReduceKind::Mean, &[0], false).unwrap().item(), 2.5);

    let y = l2_normalize(&Tensor::from_vec(vec![1, 2], vec![3.0, 4.0]).unwrap()).unwrap();
    assert_eq!(y.to_vec(), vec![0.6, 0.8]);

    let err = l2_normalize(&Tensor::zeros(vec![1, 2])).unwrap_err();
    assert!(matches!(err, crate::Error::NumericDegenerate(_)));
}

#[test]
fn reduce_max_routes_gradient_to_first_argmax() {
    let x = Tensor::param(vec![4], vec![1.0, 7.0, 7.0, 2.0]).unwrap();
    let y = reduce(&x, ReduceKind::Max, &[0], false).unwrap();
    assert_eq!(y.item(), 7.0);
    backward(&y).unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 1.0, 0.0, 0.0]);
}

#[test]
fn reduce_axes_and_broadcast_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(400 + seed);
        let x = Tensor::param(vec![2, 3, 2, 2], randn(&mut rng, 24)).unwrap();
        let m = Tensor::param(vec![2, 3, 1, 1], randn(&mut rng, 6)).unwrap();
        let params = [("x".to_string(), x.clone()), ("m".to_string(), m.clone())];
        let err = grad_of_sum(&params, || {
            let gated = mul(&x, &m).unwrap();
            let pooled = reduce(&gated, ReduceKind::Mean, &[2, 3], false).unwrap();
            let mx = reduce(&gated, ReduceKind::Max, &[1], true).unwrap();
            let s1 = sum_all(&pooled);
            let s2 = sum_all(&mx);
            add(&s1, &s2).unwrap()
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn matmul_l2norm_gradcheck() {
    for seed in 0..3u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(500 + seed);
        let a = Tensor::param(vec![3, 4], randn(&mut rng, 12)).unwrap();
        let w = Tensor::param(vec![4, 2], randn(&mut rng, 8)).unwrap();
        let params = [("a".to_string(), a.clone()), ("w".to_string(), w.clone())];
        let err = grad_of_sum(&params, || {
            let y = matmul(&a, &w).unwrap();
            let n = l2_normalize(&y).unwrap();
            sum_all(&mul(&n, &n).unwrap())
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn backward_sum_gives_ones() {
    let x = Tensor::param(vec![2, 3], vec![0.5; 6]).unwrap();
    backward(&sum_all(&x)).unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);
}

#[test]
fn backward_quadratic() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let loss = sum_all(&mul(&x, &x).unwrap());
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn backward_accumulates_across_calls() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let loss = sum_all(&mul(&x, &x).unwrap());
    backward(&loss).unwrap();
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
}

#[test]
fn backward_rejects_non_scalar() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let y = mul(&x, &x).unwrap();
    assert!(matches!(backward(&y), Err(crate::Error::Validation(_))));
}

#[test]
fn forward_is_deterministic_and_finite() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let x = Tensor::from_vec(vec![1, 3, 6, 6], randn(&mut rng, 108)).unwrap();
    let w = Tensor::from_vec(vec![2, 3, 3, 3], randn(&mut rng, 54)).unwrap();
    let b = Tensor::from_vec(vec![2], randn(&mut rng, 2)).unwrap();
    let run = || {
        let y = conv2d(&x, &w, &b, 1, 1).unwrap();
        let y = relu(&y);
        let y = avg_pool2d(&y, 3, 1, 1).unwrap();
        sigmoid(&y).to_vec()
    };
    let a = run();
    let b2 = run();
    assert_eq!(a, b2);
    assert!(a.iter().all(|v| v.is_finite()));
}

#[test]
fn no_grad_suppresses_graph() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let y = no_grad(|| mul(&x, &x).unwrap());
    assert!(!y.requires_grad());
    assert!(matches!(backward(&sum_all(&y)), Ok(())));
    assert!(x.grad().is_none());
}

#[test]
fn frozen_leaf_gets_no_grad_buffer() {
    let x = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
    let frozen = Tensor::from_vec(vec![2], vec![3.0, 4.0]).unwrap();
    let loss = sum_all(&mul(&x, &frozen).unwrap());
    backward(&loss).unwrap();
    assert_eq!(x.grad().unwrap(), vec![3.0, 4.0]);
    assert!(!frozen.has_grad());
}
