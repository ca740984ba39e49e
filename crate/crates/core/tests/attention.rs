use atr_core::autodiff::{Graph, Tensor};
use atr_core::network::{Model, ModelConfig};
use atr_core::selftest::{attention_suite, joint_relabel_check};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn simplex_equivariance_and_extremes_over_1000_latents() {
    for check in attention_suite(1000, 31) {
        assert!(check.passed, "{check}");
    }
}

#[test]
fn joint_relabeling_leaves_location_unchanged() {
    let check = joint_relabel_check(100, 32);
    assert!(check.passed, "{check}");
}

fn attend_once(model: &Model<f64>, h: Tensor<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let p = model.params.bind_frozen(&mut g).unwrap();
    let x = g.input(h).unwrap();
    let (out, vars) = model.attend(&mut g, &p, x).unwrap().expect("attention enabled");
    (g.value(x).data().to_vec(), g.value(out).data().to_vec(), g.value(vars.alpha).data().to_vec())
}

#[test]
fn identical_latents_get_uniform_weights() {
    let model = Model::<f64>::new(ModelConfig::default()).unwrap();
    let row: Vec<f64> = (0..32).map(|j| (j as f64 * 0.37).sin()).collect();
    let h = Tensor::new(vec![1, 4, 32], row.repeat(4)).unwrap();
    let (_, _, alpha) = attend_once(&model, h);
    assert!(alpha.iter().all(|&a| a == alpha[0]));
    assert!((alpha[0] - 0.25).abs() < 1e-15);
}

#[test]
fn recalibration_never_grows_a_latent() {
    let model = Model::<f64>::new(ModelConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let h = Tensor::from_fn(&[1, 4, 32], |_| rng.gen_range(-3.0..3.0));
        let (h, out, alpha) = attend_once(&model, h);
        for r in 0..4 {
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let before = norm(&h[r * 32..(r + 1) * 32]);
            let after = norm(&out[r * 32..(r + 1) * 32]);
            assert!((after - alpha[r] * before).abs() <= 1e-12 * before.max(1.0));
            assert!(after <= before);
        }
    }
}
