//! Differentiable triangulation and the combined objective
//! `L = |Tri(aoa) - p|^2 + lambda * |maps - T_aoa|_1`.

use crate::autodiff::{AutodiffError, Graph, Tensor, Var};
use crate::geometry::{triangulate_regularized, ApPose, BearingSet, GeometryError, Point2, TIKHONOV_EPS};
use crate::network::ModelOutput;
use crate::scalar::Scalar;

/// Per-batch loss handles, each a scalar.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub total: Var,
    pub loc: Var,
    pub aoa: Var,
    /// Predicted positions `[B, 2]`.
    pub position: Var,
}

/// Graph form of `triangulate_regularized` over a batch.
///
/// `aoa` and `weights` are `[B, R]`; returns `[B, 2]`.
pub fn triangulate_graph<S: Scalar>(
    g: &mut Graph<S>,
    aoa: Var,
    weights: Option<Var>,
    aps: &[ApPose<S>],
) -> Result<Var, AutodiffError> {
    let shape = g.shape(aoa).to_vec();
    if shape.len() != 2 || shape[1] != aps.len() {
        return Err(AutodiffError::ShapeMismatch { op: "triangulate", lhs: shape, rhs: vec![0, aps.len()] });
    }
    let b = shape[0];
    let r = aps.len();
    let bore = g.input(Tensor::new(vec![r], aps.iter().map(|a| a.boresight).collect())?)?;
    let px = g.input(Tensor::new(vec![r], aps.iter().map(|a| a.position.x).collect())?)?;
    let py = g.input(Tensor::new(vec![r], aps.iter().map(|a| a.position.y).collect())?)?;

    let phi = g.add(aoa, bore)?;
    let sn = g.sin(phi)?;
    let cs = g.cos(phi)?;
    // normal (nx, ny) = (-sin, cos)
    let nx = g.scale(sn, -S::one())?;
    let ws = |g: &mut Graph<S>, v: Var| match weights {
        Some(w) => g.mul(w, v),
        None => Ok(v),
    };
    let t = g.mul(nx, px)?;
    let u = g.mul(cs, py)?;
    let proj = g.add(t, u)?;

    let sq = g.mul(nx, nx)?;
    let sq = ws(g, sq)?;
    let a11 = g.sum(sq, 1)?;
    let a11 = g.offset(a11, S::lit(TIKHONOV_EPS))?;
    let cross = g.mul(nx, cs)?;
    let cross = ws(g, cross)?;
    let a12 = g.sum(cross, 1)?;
    let sq = g.mul(cs, cs)?;
    let sq = ws(g, sq)?;
    let a22 = g.sum(sq, 1)?;
    let a22 = g.offset(a22, S::lit(TIKHONOV_EPS))?;
    let t = g.mul(nx, proj)?;
    let t = ws(g, t)?;
    let b1 = g.sum(t, 1)?;
    let t = g.mul(cs, proj)?;
    let t = ws(g, t)?;
    let b2 = g.sum(t, 1)?;

    let t = g.mul(a11, a22)?;
    let u = g.mul(a12, a12)?;
    let det = g.sub(t, u)?;
    let t = g.mul(a22, b1)?;
    let u = g.mul(a12, b2)?;
    let xn = g.sub(t, u)?;
    let x = g.div(xn, det)?;
    let t = g.mul(a11, b2)?;
    let u = g.mul(a12, b1)?;
    let yn = g.sub(t, u)?;
    let y = g.div(yn, det)?;
    let x = g.reshape(x, &[b, 1])?;
    let y = g.reshape(y, &[b, 1])?;
    g.concat(&[x, y], 1)
}

/// Mean squared localization error over the batch; `truth` is `[B, 2]`.
pub fn loss_loc_graph<S: Scalar>(g: &mut Graph<S>, position: Var, truth: Var) -> Result<Var, AutodiffError> {
    let d = g.sub(position, truth)?;
    let d2 = g.mul(d, d)?;
    let per = g.sum(d2, 1)?;
    g.mean_all(per)
}

/// `lambda * mean |maps - target|`.
pub fn loss_aoa_graph<S: Scalar>(g: &mut Graph<S>, maps: Var, target: Var, lambda: S) -> Result<Var, AutodiffError> {
    let l = g.l1_loss(maps, target)?;
    g.scale(l, lambda)
}

/// Builds `L_loc`, `L_aoa` and their sum for one batch.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_graph<S: Scalar>(
    g: &mut Graph<S>,
    aoa: Var,
    maps: Var,
    weights: Option<Var>,
    aps: &[ApPose<S>],
    truth: Var,
    target: Var,
    lambda: S,
) -> Result<LossVars, AutodiffError> {
    let position = triangulate_graph(g, aoa, weights, aps)?;
    let loc = loss_loc_graph(g, position, truth)?;
    let aoa_l = loss_aoa_graph(g, maps, target, lambda)?;
    let total = g.add(loc, aoa_l)?;
    Ok(LossVars { total, loc, aoa: aoa_l, position })
}

/// Triangulates one model output, weighting routers by attention when asked.
pub fn predict_position<S: Scalar>(
    out: &ModelOutput<S>,
    aps: &[ApPose<S>],
    alpha_confidence: bool,
) -> Result<Point2<S>, GeometryError> {
    let bearings = match (&out.attention, alpha_confidence) {
        (Some(a), true) => BearingSet::with_confidences(out.aoa_values.clone(), a.alpha.clone())?,
        _ => BearingSet::new(out.aoa_values.clone()),
    };
    triangulate_regularized(&bearings, aps, S::lit(TIKHONOV_EPS))
}

/// `|Tri(aoa) - truth|^2` for a single output.
pub fn loss_loc<S: Scalar>(
    out: &ModelOutput<S>,
    aps: &[ApPose<S>],
    truth: &Point2<S>,
    alpha_confidence: bool,
) -> Result<S, GeometryError> {
    let p = predict_position(out, aps, alpha_confidence)?;
    let (dx, dy) = (p.x - truth.x, p.y - truth.y);
    Ok(dx * dx + dy * dy)
}

/// `lambda * mean |maps - target|` for a single output.
pub fn loss_aoa<S: Scalar>(out: &ModelOutput<S>, target: &[S], lambda: S) -> Result<S, AutodiffError> {
    if out.aoa_maps.len() != target.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "loss_aoa",
            lhs: vec![out.aoa_maps.len()],
            rhs: vec![target.len()],
        });
    }
    let sum: S = out.aoa_maps.iter().zip(target).map(|(a, b)| (*a - *b).abs()).sum();
    Ok(lambda * sum / S::count(target.len().max(1)))
}
