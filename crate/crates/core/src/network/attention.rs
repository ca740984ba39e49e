//! Set-equivariant router attention.
//!
//! ```text
//! s_r     = mean_j h_rj
//! u_r     = W2 relu(W1 in_r + b1) + b2,   in_r = [s_r] or [s_r, mean_k s_k]
//! alpha   = softmax(u)
//! h~_r    = alpha_r * h_r
//! ```
//!
//! Scores are computed pointwise per router with shared weights and the
//! softmax normalizer is order-independent, so permuting routers permutes
//! `alpha` exactly.

use super::Linear;
use crate::autodiff::{AutodiffError, Graph, Var};
use crate::scalar::Scalar;

/// Graph handles of the attention intermediates, each `[B, R]`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub s: Var,
    pub u: Var,
    pub alpha: Var,
}

pub(super) fn attend<S: Scalar>(
    g: &mut Graph<S>,
    p: &[Var],
    h: Var,
    fc1: &Linear,
    fc2: &Linear,
    global_context: bool,
) -> Result<(Var, AttentionVars), AutodiffError> {
    let shape = g.shape(h).to_vec();
    if shape.len() != 3 {
        return Err(AutodiffError::ShapeMismatch { op: "attend", lhs: shape, rhs: vec![0, 0, 0] });
    }
    let (b, r) = (shape[0], shape[1]);
    let s = g.mean(h, 2)?;
    let s3 = g.reshape(s, &[b, r, 1])?;
    let input = if global_context {
        let sbar = g.mean(s, 1)?;
        let sbar = g.reshape(sbar, &[b, 1, 1])?;
        let sbar = g.broadcast_to(sbar, &[b, r, 1])?;
        let both = g.concat(&[s3, sbar], 2)?;
        g.reshape(both, &[b * r, 2])?
    } else {
        g.reshape(s3, &[b * r, 1])?
    };
    let hidden = fc1.apply(g, p, input)?;
    let hidden = g.relu(hidden)?;
    let u = fc2.apply(g, p, hidden)?;
    let u = g.reshape(u, &[b, r])?;
    let alpha = g.softmax(u, 1)?;
    let a3 = g.reshape(alpha, &[b, r, 1])?;
    let out = g.mul(h, a3)?;
    Ok((out, AttentionVars { s, u, alpha }))
}
