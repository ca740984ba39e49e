use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Derivatives smaller than this are compared absolutely.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub probes: usize,
    /// Directions redrawn because the stencil crossed a relu or L1 kink.
    pub redrawn: usize,
    pub max_rel_err: f64,
}

/// Compares backward gradients with central differences.
///
/// Each probe draws a random output projection `r` and a random input
/// unit direction `v`, then checks `d/dt <r, f(x + t v)>` at `t = 0` against
/// `<grad, v>`. The error is `|a - b| / max(|a|, |b|, REL_FLOOR)`. A direction
/// whose stencil `x - h v, x, x + h v` straddles a kink has no central
/// difference to compare against and is redrawn.
pub fn gradcheck<F>(f: F, inputs: &[Tensor<f64>], probes: usize, h: f64, seed: u64) -> Result<GradCheck, AutodiffError>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out_shape = {
        let mut g = Graph::new();
        let vars = inputs.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        g.shape(out).to_vec()
    };
    type Eval = (f64, Vec<Vec<f64>>, Vec<bool>);
    let eval = |xs: &[Tensor<f64>], r: &Tensor<f64>, want_grad: bool| -> Result<Eval, AutodiffError> {
        let mut g = Graph::new();
        let vars = xs
            .iter()
            .map(|t| if want_grad { g.leaf(t.clone()) } else { g.input(t.clone()) })
            .collect::<Result<Vec<_>, _>>()?;
        let out = f(&mut g, &vars)?;
        let rv = g.input(r.clone())?;
        let prod = g.mul(out, rv)?;
        let loss = g.sum_all(prod)?;
        let value = g.scalar(loss);
        let pattern = g.kink_pattern();
        if !want_grad {
            return Ok((value, Vec::new(), pattern));
        }
        g.backward(loss)?;
        let grads = vars
            .iter()
            .zip(xs)
            .map(|(v, t)| g.grad(*v).map_or_else(|| vec![0.0; t.numel()], <[f64]>::to_vec))
            .collect();
        Ok((value, grads, pattern))
    };

    let mut max_rel_err: f64 = 0.0;
    let mut accepted = 0;
    let mut redrawn = 0;
    while accepted < probes {
        let r = Tensor::from_fn(&out_shape, |_| rng.gen_range(-1.0..1.0));
        let mut dirs: Vec<Vec<f64>> =
            inputs.iter().map(|t| (0..t.numel()).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let norm = dirs.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dirs.iter_mut().flatten().for_each(|v| *v /= norm);
        let (_, grads, here) = eval(inputs, &r, true)?;
        let analytic: f64 = grads.iter().zip(&dirs).flat_map(|(g, d)| g.iter().zip(d).map(|(a, b)| a * b)).sum();
        let shifted = |sign: f64| -> Vec<Tensor<f64>> {
            inputs
                .iter()
                .zip(&dirs)
                .map(|(t, d)| {
                    let data = t.data().iter().zip(d).map(|(x, v)| x + sign * h * v).collect();
                    Tensor::new(t.shape().to_vec(), data).expect("same shape")
                })
                .collect()
        };
        let (plus, _, p_plus) = eval(&shifted(1.0), &r, false)?;
        let (minus, _, p_minus) = eval(&shifted(-1.0), &r, false)?;
        if p_plus != here || p_minus != here {
            redrawn += 1;
            if redrawn > 10 * probes.max(1) {
                return Err(AutodiffError::Invalid { op: "gradcheck", msg: "every direction crosses a kink".into() });
            }
            continue;
        }
        accepted += 1;
        let numeric = (plus - minus) / (2.0 * h);
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        max_rel_err = max_rel_err.max((analytic - numeric).abs() / denom);
    }
    Ok(GradCheck { probes, redrawn, max_rel_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::new(vec![3], vec![0.3, -0.2, 0.9]).unwrap();
        let ok = gradcheck(|g, v| g.tanh(v[0]), std::slice::from_ref(&x), 5, FD_STEP, 1).unwrap();
        assert!(ok.max_rel_err < 1e-8);
        // tanh(x) re-entered as a constant: its derivative is dropped
        let bad = gradcheck(
            |g, v| {
                let t = g.tanh(v[0])?;
                let data = g.value(t).data().to_vec();
                let c = g.input(Tensor::new(vec![3], data)?)?;
                g.add(c, v[0])
            },
            &[x],
            5,
            FD_STEP,
            1,
        )
        .unwrap();
        assert!(bad.max_rel_err > 1e-3);
    }

    #[test]
    fn stencils_across_a_kink_are_redrawn() {
        let x = Tensor::new(vec![2], vec![2e-6, 0.5]).unwrap();
        let r = gradcheck(|g, v| g.relu(v[0]), std::slice::from_ref(&x), 10, FD_STEP, 3).unwrap();
        assert!(r.redrawn > 0);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
        let pinned = Tensor::new(vec![1], vec![0.0]).unwrap();
        assert!(gradcheck(|g, v| g.relu(v[0]), &[pinned], 3, FD_STEP, 3).is_err());
    }
}
