use atr_core::autodiff::{AutodiffError, ConvSpec, Graph, Tensor};
use atr_core::selftest::{gradcheck, gradcheck_ops, FD_STEP, OP_TOLERANCE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn every_op_matches_finite_differences() {
    for check in gradcheck_ops(20, 2024) {
        assert!(check.passed, "{check}");
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros(&[4])).unwrap();
    let y = g.softmax(x, 0).unwrap();
    assert_eq!(g.value(y).data(), &[0.25; 4]);
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::scalar(0.0)).unwrap();
    let y = g.tanh(x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0]);
}

#[test]
fn impulse_kernel_reproduces_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = Tensor::from_fn(&[2, 1, 7, 6], |_| rng.gen_range(-1.0..1.0));
    let mut w = Tensor::zeros(&[1, 1, 5, 5]);
    w.data_mut()[12] = 1.0;
    let mut g = Graph::<f64>::new();
    let xv = g.input(x.clone()).unwrap();
    let wv = g.input(w).unwrap();
    let y = g.conv2d(xv, wv, None, ConvSpec::new(1, 2)).unwrap();
    for (a, b) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn backward_examples() {
    let mut g = Graph::<f64>::new();
    let p = g.leaf(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
    let s = g.sum_all(p).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[1.0; 6]);

    let mut g = Graph::<f64>::new();
    let p = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
    let sq = g.mul(p, p).unwrap();
    let l = g.sum_all(sq).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[2.0, 4.0]);
    g.backward(l).unwrap();
    assert_eq!(g.grad(p).unwrap(), &[4.0, 8.0]);
    g.zero_grad();
    assert!(g.grad(p).is_none());
}

#[test]
fn backward_requires_scalar() {
    let mut g = Graph::<f64>::new();
    let p = g.leaf(Tensor::zeros(&[3])).unwrap();
    let y = g.relu(p).unwrap();
    assert!(matches!(g.backward(y), Err(AutodiffError::NotScalar(_))));
}

#[test]
fn forward_rejects_non_finite_values() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::new(vec![2], vec![0.0, 1.0]).unwrap()).unwrap();
    assert!(matches!(g.log(x), Err(AutodiffError::NonFinite { .. })));
    let z = g.input(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(g.div(x, z), Err(AutodiffError::NonFinite { .. })));
}

#[test]
fn shape_mismatches_are_reported() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros(&[2, 3])).unwrap();
    let b = g.input(Tensor::zeros(&[4])).unwrap();
    assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch { .. })));
    assert!(matches!(g.matmul(a, a), Err(AutodiffError::ShapeMismatch { .. })));
}

#[test]
fn instance_norm_standardizes_each_group() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = Tensor::from_fn(&[3, 4, 6, 5], |_| 5.0 + 3.0 * rng.gen_range(-1.0..1.0));
    let eps = 1e-5;
    let mut g = Graph::<f64>::new();
    let xv = g.input(x.clone()).unwrap();
    let y = g.instance_norm(xv, eps).unwrap();
    for (grp_y, grp_x) in g.value(y).data().chunks(30).zip(x.data().chunks(30)) {
        let n = grp_y.len() as f64;
        let mean: f64 = grp_y.iter().sum::<f64>() / n;
        let var: f64 = grp_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let xm: f64 = grp_x.iter().sum::<f64>() / n;
        let xv: f64 = grp_x.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-10);
        assert!((var - xv / (xv + eps)).abs() < 1e-8);
    }
}

#[test]
fn graphs_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::from_fn(&[2, 3, 8, 8], |_| rng.gen_range(-1.0..1.0))).unwrap();
        let w = g.leaf(Tensor::from_fn(&[4, 3, 3, 3], |_| rng.gen_range(-1.0..1.0))).unwrap();
        let y = g.conv2d(x, w, None, ConvSpec::new(1, 1)).unwrap();
        let y = g.instance_norm(y, 1e-5).unwrap();
        let y = g.softmax(y, 1).unwrap();
        let l = g.mean_all(y).unwrap();
        let l = g.exp(l).unwrap();
        g.backward(l).unwrap();
        (g.scalar(l).to_bits(), g.grad(w).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn gradcheck_holds_in_f64_for_a_deep_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = Tensor::from_fn(&[2, 3, 4], |_| rng.gen_range(-1.0..1.0));
    let w = Tensor::from_fn(&[4, 5], |_| rng.gen_range(-1.0..1.0));
    let f = |g: &mut Graph<f64>, v: &[atr_core::autodiff::Var]| {
        let a = g.reshape(v[0], &[6, 4])?;
        let b = g.matmul(a, v[1])?;
        let c = g.sigmoid(b)?;
        let d = g.softmax(c, 1)?;
        let e = g.mean(d, 0)?;
        g.log(e)
    };
    let r = gradcheck(f, &[x, w], 20, FD_STEP, 1).unwrap();
    assert!(r.max_rel_err < OP_TOLERANCE, "{r:?}");
}
