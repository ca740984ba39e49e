//! Planar geometry: AP poses, frame conversion, bearing-line triangulation and
//! Gaussian location targets.
//!
//! Angles are measured counter-clockwise from the world +x axis. An AP's local
//! angle of arrival is measured from its boresight (the array normal), so a
//! world bearing is `boresight + local_aoa`.

use thiserror::Error;

use crate::scalar::{wrap_angle, Scalar};

/// Condition number above which the bearing normal matrix is degenerate.
pub const MAX_CONDITION: f64 = 1e8;

/// Tikhonov term added to the normal matrix by the regularized solver.
pub const TIKHONOV_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate bearing geometry (condition number {condition:.3e})")]
    DegenerateGeometry { condition: f64 },
    #[error("point ({x:.4}, {y:.4}) lies outside the arena")]
    OutOfArena { x: f64, y: f64 },
    #[error("invalid AP pose: {0}")]
    InvalidPose(String),
    #[error("expected {expected} bearings, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error("triangulation needs at least two APs, got {0}")]
    TooFewAps(usize),
    #[error("invalid bearing set: {0}")]
    InvalidBearings(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<S> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> Point2<S> {
    pub fn new(x: S, y: S) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Self) -> S {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Axis-aligned rectangular arena in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arena<S> {
    pub min: Point2<S>,
    pub max: Point2<S>,
}

impl<S: Scalar> Arena<S> {
    pub fn new(min: Point2<S>, max: Point2<S>) -> Self {
        Self { min, max }
    }

    /// Square arena `[0, side] x [0, side]`.
    pub fn square(side: S) -> Self {
        Self::new(Point2::new(S::zero(), S::zero()), Point2::new(side, side))
    }

    pub fn width(&self) -> S {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> S {
        self.max.y - self.min.y
    }

    pub fn contains(&self, p: &Point2<S>) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn check(&self, p: &Point2<S>) -> Result<(), GeometryError> {
        if self.contains(p) {
            Ok(())
        } else {
            Err(GeometryError::OutOfArena { x: p.x.as_f64(), y: p.y.as_f64() })
        }
    }

    pub fn center(&self) -> Point2<S> {
        let half = S::lit(0.5);
        Point2::new((self.min.x + self.max.x) * half, (self.min.y + self.max.y) * half)
    }
}

/// Pose and array geometry of one access point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApPose<S> {
    /// Array reference element, meters.
    pub position: Point2<S>,
    /// Direction of the array normal in the world frame, radians in `(-pi, pi]`.
    pub boresight: S,
    /// Antenna pitch, meters.
    pub array_spacing: S,
    pub n_antennas: usize,
}

impl<S: Scalar> ApPose<S> {
    pub fn new(
        position: Point2<S>,
        boresight: S,
        array_spacing: S,
        n_antennas: usize,
    ) -> Result<Self, GeometryError> {
        if n_antennas < 2 {
            return Err(GeometryError::InvalidPose(format!(
                "n_antennas must be >= 2, got {n_antennas}"
            )));
        }
        if !(array_spacing > S::zero()) || !array_spacing.is_finite() {
            return Err(GeometryError::InvalidPose(format!(
                "array_spacing must be positive, got {array_spacing}"
            )));
        }
        if !position.x.is_finite() || !position.y.is_finite() || !boresight.is_finite() {
            return Err(GeometryError::InvalidPose("non-finite position or boresight".into()));
        }
        Ok(Self { position, boresight: wrap_angle(boresight), array_spacing, n_antennas })
    }

    /// Local angle of arrival of a point, radians in `(-pi, pi]`.
    pub fn local_aoa(&self, p: &Point2<S>) -> S {
        let world = (p.y - self.position.y).atan2(p.x - self.position.x);
        wrap_angle(world - self.boresight)
    }
}

/// Converts a local AoA into a world-frame bearing in `(-pi, pi]`.
pub fn world_bearing<S: Scalar>(ap: &ApPose<S>, local_aoa: S) -> S {
    wrap_angle(ap.boresight + local_aoa)
}

/// Four APs at the corners of `arena`, each facing the arena center.
pub fn corner_layout<S: Scalar>(
    arena: &Arena<S>,
    array_spacing: S,
    n_antennas: usize,
) -> Result<Vec<ApPose<S>>, GeometryError> {
    let c = arena.center();
    [
        Point2::new(arena.min.x, arena.min.y),
        Point2::new(arena.max.x, arena.min.y),
        Point2::new(arena.max.x, arena.max.y),
        Point2::new(arena.min.x, arena.max.y),
    ]
    .into_iter()
    .map(|p| ApPose::new(p, (c.y - p.y).atan2(c.x - p.x), array_spacing, n_antennas))
    .collect()
}

/// Per-AP local bearings with optional triangulation confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingSet<S> {
    pub aoas: Vec<S>,
    pub confidences: Vec<S>,
}

impl<S: Scalar> BearingSet<S> {
    /// Bearings with uniform unit confidence.
    pub fn new(aoas: Vec<S>) -> Self {
        let confidences = vec![S::one(); aoas.len()];
        Self { aoas, confidences }
    }

    pub fn with_confidences(aoas: Vec<S>, confidences: Vec<S>) -> Result<Self, GeometryError> {
        if aoas.len() != confidences.len() {
            return Err(GeometryError::CountMismatch { expected: aoas.len(), got: confidences.len() });
        }
        if confidences.iter().any(|c| !(*c >= S::zero()) || !c.is_finite()) {
            return Err(GeometryError::InvalidBearings("confidences must be finite and >= 0".into()));
        }
        Ok(Self { aoas, confidences })
    }

    /// Exact bearings from each AP towards `p`.
    pub fn from_point(p: &Point2<S>, aps: &[ApPose<S>]) -> Self {
        Self::new(aps.iter().map(|ap| ap.local_aoa(p)).collect())
    }

    pub fn len(&self) -> usize {
        self.aoas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aoas.is_empty()
    }
}

/// Weighted normal equations `A x = b` of the perpendicular-distance objective.
#[derive(Debug, Clone, Copy)]
struct NormalEquations<S> {
    a11: S,
    a12: S,
    a22: S,
    b1: S,
    b2: S,
}

impl<S: Scalar> NormalEquations<S> {
    fn build(bearings: &BearingSet<S>, aps: &[ApPose<S>]) -> Self {
        let mut eq = Self { a11: S::zero(), a12: S::zero(), a22: S::zero(), b1: S::zero(), b2: S::zero() };
        for ((aoa, w), ap) in bearings.aoas.iter().zip(&bearings.confidences).zip(aps) {
            let phi = ap.boresight + *aoa;
            // unit normal of the bearing line
            let (nx, ny) = (-phi.sin(), phi.cos());
            let proj = nx * ap.position.x + ny * ap.position.y;
            eq.a11 = eq.a11 + *w * nx * nx;
            eq.a12 = eq.a12 + *w * nx * ny;
            eq.a22 = eq.a22 + *w * ny * ny;
            eq.b1 = eq.b1 + *w * nx * proj;
            eq.b2 = eq.b2 + *w * ny * proj;
        }
        eq
    }

    fn condition(&self) -> S {
        let half = S::lit(0.5);
        let tr = self.a11 + self.a22;
        let disc = ((self.a11 - self.a22) * (self.a11 - self.a22) * S::lit(0.25) + self.a12 * self.a12).sqrt();
        let hi = tr * half + disc;
        let lo = tr * half - disc;
        if lo <= S::zero() {
            S::infinity()
        } else {
            hi / lo
        }
    }

    fn solve(&self, eps: S) -> Point2<S> {
        let a11 = self.a11 + eps;
        let a22 = self.a22 + eps;
        let det = a11 * a22 - self.a12 * self.a12;
        Point2::new((a22 * self.b1 - self.a12 * self.b2) / det, (a11 * self.b2 - self.a12 * self.b1) / det)
    }
}

fn check_inputs<S: Scalar>(bearings: &BearingSet<S>, aps: &[ApPose<S>]) -> Result<(), GeometryError> {
    if aps.len() < 2 {
        return Err(GeometryError::TooFewAps(aps.len()));
    }
    if bearings.aoas.len() != aps.len() || bearings.confidences.len() != aps.len() {
        return Err(GeometryError::CountMismatch { expected: aps.len(), got: bearings.aoas.len() });
    }
    Ok(())
}

/// Point minimizing the confidence-weighted sum of squared perpendicular
/// distances to every AP's bearing line.
///
/// Fails with [`GeometryError::DegenerateGeometry`] when the 2x2 normal matrix
/// has condition number above [`MAX_CONDITION`].
pub fn triangulate<S: Scalar>(bearings: &BearingSet<S>, aps: &[ApPose<S>]) -> Result<Point2<S>, GeometryError> {
    check_inputs(bearings, aps)?;
    let eq = NormalEquations::build(bearings, aps);
    let condition = eq.condition();
    if !(condition <= S::lit(MAX_CONDITION)) {
        return Err(GeometryError::DegenerateGeometry { condition: condition.as_f64() });
    }
    Ok(eq.solve(S::zero()))
}

/// Tikhonov-regularized triangulation (`A + eps I`); never reports degeneracy.
pub fn triangulate_regularized<S: Scalar>(
    bearings: &BearingSet<S>,
    aps: &[ApPose<S>],
    eps: S,
) -> Result<Point2<S>, GeometryError> {
    check_inputs(bearings, aps)?;
    Ok(NormalEquations::build(bearings, aps).solve(eps))
}

/// Condition number of the triangulation normal matrix; infinite when singular.
pub fn triangulation_condition<S: Scalar>(bearings: &BearingSet<S>, aps: &[ApPose<S>]) -> Result<S, GeometryError> {
    check_inputs(bearings, aps)?;
    Ok(NormalEquations::build(bearings, aps).condition())
}

/// Value of the triangulation objective at `p`.
pub fn triangulation_residual<S: Scalar>(p: &Point2<S>, bearings: &BearingSet<S>, aps: &[ApPose<S>]) -> S {
    bearings
        .aoas
        .iter()
        .zip(&bearings.confidences)
        .zip(aps)
        .map(|((aoa, w), ap)| {
            let phi = ap.boresight + *aoa;
            let d = -phi.sin() * (p.x - ap.position.x) + phi.cos() * (p.y - ap.position.y);
            *w * d * d
        })
        .sum()
}

/// Regular world-XY raster. Cell `(ix, iy)` covers
/// `[origin + i * cell_size, origin + (i + 1) * cell_size)` on each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec<S> {
    pub origin: Point2<S>,
    pub cell_size: S,
    pub nx: usize,
    pub ny: usize,
}

impl<S: Scalar> GridSpec<S> {
    /// Smallest grid with the given cell size covering `arena`.
    pub fn covering(arena: &Arena<S>, cell_size: S) -> Self {
        let n = |len: S| (len / cell_size - S::lit(1e-9)).ceil().to_usize().unwrap_or(0).max(1);
        Self { origin: arena.min, cell_size, nx: n(arena.width()), ny: n(arena.height()) }
    }

    pub fn center(&self, ix: usize, iy: usize) -> Point2<S> {
        let half = S::lit(0.5);
        Point2::new(
            self.origin.x + (S::count(ix) + half) * self.cell_size,
            self.origin.y + (S::count(iy) + half) * self.cell_size,
        )
    }

    pub fn extent(&self) -> Arena<S> {
        Arena::new(
            self.origin,
            Point2::new(
                self.origin.x + S::count(self.nx) * self.cell_size,
                self.origin.y + S::count(self.ny) * self.cell_size,
            ),
        )
    }

    /// Cell containing `p`, if any. Points on the far edge belong to the last cell.
    pub fn cell_of(&self, p: &Point2<S>) -> Option<(usize, usize)> {
        if !self.extent().contains(p) {
            return None;
        }
        let ix = ((p.x - self.origin.x) / self.cell_size).floor().to_usize()?.min(self.nx - 1);
        let iy = ((p.y - self.origin.y) / self.cell_size).floor().to_usize()?.min(self.ny - 1);
        Some((ix, iy))
    }
}

/// Gaussian likelihood image of the true position.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget<S> {
    pub grid: GridSpec<S>,
    /// Row-major `[ny][nx]`.
    pub values: Vec<S>,
    pub sigma: S,
}

impl<S: Scalar> GaussianTarget<S> {
    pub fn at(&self, ix: usize, iy: usize) -> S {
        self.values[iy * self.grid.nx + ix]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        (best % self.grid.nx, best / self.grid.nx)
    }
}

/// Renders `exp(-|c - p|^2 / (2 sigma^2))` at every cell center `c`.
pub fn render_gaussian_target<S: Scalar>(
    true_pos: &Point2<S>,
    grid: &GridSpec<S>,
    sigma: S,
) -> Result<GaussianTarget<S>, GeometryError> {
    if !(sigma > S::zero()) {
        return Err(GeometryError::InvalidBearings(format!("sigma must be positive, got {sigma}")));
    }
    grid.extent().check(true_pos)?;
    let denom = S::lit(2.0) * sigma * sigma;
    let mut values = Vec::with_capacity(grid.nx * grid.ny);
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let c = grid.center(ix, iy);
            let d2 = (c.x - true_pos.x).powi(2) + (c.y - true_pos.y).powi(2);
            values.push((-d2 / denom).exp());
        }
    }
    Ok(GaussianTarget { grid: *grid, values, sigma })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn facing_up(x: f64) -> ApPose<f64> {
        ApPose::new(Point2::new(x, 0.0), FRAC_PI_2, 0.03, 4).unwrap()
    }

    #[test]
    fn symmetric_intersection() {
        let aps = [facing_up(0.0), facing_up(10.0)];
        // world 45 deg and 135 deg
        let b = BearingSet::new(vec![-FRAC_PI_4, FRAC_PI_4]);
        let p = triangulate(&b, &aps).unwrap();
        assert!((p.x - 5.0).abs() < 1e-12 && (p.y - 5.0).abs() < 1e-12, "{p:?}");
    }

    #[test]
    fn parallel_bearings_are_degenerate() {
        let aps = [facing_up(0.0), facing_up(10.0)];
        let b = BearingSet::new(vec![0.1, 0.1]);
        assert!(matches!(triangulate(&b, &aps), Err(GeometryError::DegenerateGeometry { .. })));
        // the regularized path still answers
        assert!(triangulate_regularized(&b, &aps, TIKHONOV_EPS).unwrap().x.is_finite());
    }

    #[test]
    fn rejects_bad_inputs() {
        let aps = [facing_up(0.0)];
        assert_eq!(triangulate(&BearingSet::new(vec![0.0]), &aps), Err(GeometryError::TooFewAps(1)));
        let aps = [facing_up(0.0), facing_up(1.0)];
        assert!(matches!(
            triangulate(&BearingSet::new(vec![0.0]), &aps),
            Err(GeometryError::CountMismatch { .. })
        ));
        assert!(ApPose::new(Point2::new(0.0, 0.0), 0.0, 0.03, 1).is_err());
        assert!(ApPose::new(Point2::new(0.0, 0.0), 0.0, 0.0, 4).is_err());
        assert!(BearingSet::with_confidences(vec![0.0, 0.0], vec![1.0, -1.0]).is_err());
    }

    #[test]
    fn world_bearing_examples() {
        let ap = |b: f64| ApPose::new(Point2::new(0.0, 0.0), b, 0.03, 4).unwrap();
        assert_eq!(world_bearing(&ap(0.0), 0.0), 0.0);
        assert!((world_bearing(&ap(FRAC_PI_2), FRAC_PI_4) - 3.0 * FRAC_PI_4).abs() < 1e-15);
        assert!((world_bearing(&ap(PI), FRAC_PI_4) + 3.0 * FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn corner_layout_faces_center() {
        let arena = Arena::square(8.0f64);
        let aps = corner_layout(&arena, 0.03, 4).unwrap();
        for ap in &aps {
            assert!(ap.local_aoa(&arena.center()).abs() < 1e-12);
        }
        assert!((aps[0].boresight - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn gaussian_target_definition() {
        let grid = GridSpec::covering(&Arena::square(4.0), 0.05);
        assert_eq!((grid.nx, grid.ny), (80, 80));
        let c = grid.center(30, 41);
        let t = render_gaussian_target(&c, &grid, 0.25).unwrap();
        assert_eq!(t.at(30, 41), 1.0);
        // five cells of 0.05 m = one sigma
        assert!((t.at(35, 41) - (-0.5f64).exp()).abs() < 1e-12);
        assert_eq!(t.argmax(), (30, 41));
        assert!(t.values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(matches!(
            render_gaussian_target(&Point2::new(5.0, 1.0), &grid, 0.25),
            Err(GeometryError::OutOfArena { .. })
        ));
    }

    #[test]
    fn gaussian_mass_matches_quadrature() {
        // Independent oracle: midpoint-rule integral of the 2-D Gaussian over a
        // fine sub-grid, divided by the cell area.
        let sigma = 0.25;
        let cell = 0.05;
        let grid = GridSpec::covering(&Arena::square(4.0), cell);
        let p = Point2::new(2.013, 1.987);
        let t = render_gaussian_target(&p, &grid, sigma).unwrap();
        let sum: f64 = t.values.iter().sum();
        let fine = 0.005;
        let n = (4.0 / fine) as usize;
        let mut integral = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = (i as f64 + 0.5) * fine - p.x;
                let y = (j as f64 + 0.5) * fine - p.y;
                integral += (-(x * x + y * y) / (2.0 * sigma * sigma)).exp() * fine * fine;
            }
        }
        let expected = integral / (cell * cell);
        let closed = 2.0 * PI * sigma * sigma / (cell * cell);
        assert!((expected - closed).abs() / closed < 1e-6);
        assert!((sum - expected).abs() / expected < 0.01, "sum {sum} vs {expected}");
    }

    #[test]
    fn generic_over_f32() {
        let aps = [
            ApPose::new(Point2::new(0.0f32, 0.0), std::f32::consts::FRAC_PI_2, 0.03, 4).unwrap(),
            ApPose::new(Point2::new(10.0f32, 0.0), std::f32::consts::FRAC_PI_2, 0.03, 4).unwrap(),
        ];
        let b = BearingSet::new(vec![-std::f32::consts::FRAC_PI_4, std::f32::consts::FRAC_PI_4]);
        let p = triangulate(&b, &aps).unwrap();
        assert!((p.x - 5.0).abs() < 1e-4 && (p.y - 5.0).abs() < 1e-4);
    }
}
