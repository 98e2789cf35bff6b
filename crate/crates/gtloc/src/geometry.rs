//! SE(2) poses, rigid-transform estimation, RANSAC, and success criteria.
//!
//! The global frame is measured in pixels of the reference texture plane.
//! Angles are radians, always normalized to `(-pi, pi]`.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{num, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    /// All query points coincide; the rotation is unobservable.
    #[error("degenerate input: query points coincide")]
    DegenerateInput,
    /// No RANSAC hypothesis reached the required inlier count.
    #[error("no consensus: best hypothesis has {best} inliers, need {required}")]
    NoConsensus { best: usize, required: usize },
}

/// Normalizes an angle to `(-pi, pi]`.
#[inline]
pub fn wrap_angle<S: Scalar>(a: S) -> S {
    let pi = S::from_f64(std::f64::consts::PI).unwrap();
    let two_pi = pi + pi;
    let mut r = a % two_pi;
    if r > pi {
        r = r - two_pi;
    } else if r <= -pi {
        r = r + two_pi;
    }
    r
}

/// A planar rigid transform: rotation by `theta`, then translation by `(x, y)`.
///
/// Used both for image poses (the pose of an image's upper-left corner in the
/// global frame) and for pose estimates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2D<S = f64> {
    pub x: S,
    pub y: S,
    /// Radians in `(-pi, pi]`.
    pub theta: S,
}

impl<S: Scalar> Pose2D<S> {
    pub fn new(x: S, y: S, theta: S) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self {
            x: S::zero(),
            y: S::zero(),
            theta: S::zero(),
        }
    }

    /// Maps a point through this transform: `R(theta) * p + t`.
    #[inline]
    pub fn apply(&self, p: (S, S)) -> (S, S) {
        let (sin, cos) = self.theta.sin_cos();
        (
            cos * p.0 - sin * p.1 + self.x,
            sin * p.0 + cos * p.1 + self.y,
        )
    }

    /// The transform applying `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        let (tx, ty) = self.apply((other.x, other.y));
        Self {
            x: tx,
            y: ty,
            theta: wrap_angle(self.theta + other.theta),
        }
    }

    pub fn inverse(&self) -> Self {
        let (sin, cos) = self.theta.sin_cos();
        Self {
            x: -(cos * self.x + sin * self.y),
            y: -(-sin * self.x + cos * self.y),
            theta: wrap_angle(-self.theta),
        }
    }
}

/// The transform applying `b` first, then `a`.
pub fn compose<S: Scalar>(a: &Pose2D<S>, b: &Pose2D<S>) -> Pose2D<S> {
    a.compose(b)
}

/// An axis-aligned bounding box in the global frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent<S = f64> {
    pub min_x: S,
    pub min_y: S,
    pub max_x: S,
    pub max_y: S,
}

impl<S: Scalar> Extent<S> {
    pub fn of_point(p: (S, S)) -> Self {
        Self {
            min_x: p.0,
            min_y: p.1,
            max_x: p.0,
            max_y: p.1,
        }
    }

    pub fn include(&mut self, p: (S, S)) {
        self.min_x = self.min_x.min(p.0);
        self.min_y = self.min_y.min(p.1);
        self.max_x = self.max_x.max(p.0);
        self.max_y = self.max_y.max(p.1);
    }

    pub fn union(mut self, other: &Self) -> Self {
        self.include((other.min_x, other.min_y));
        self.include((other.max_x, other.max_y));
        self
    }

    pub fn width(&self) -> S {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> S {
        self.max_y - self.min_y
    }
}

/// A matched feature pair: a point in the query image frame and its proposed
/// counterpart in the global frame, each with a keypoint orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence<S = f64> {
    pub query_pt: (S, S),
    pub ref_pt: (S, S),
    pub query_angle: S,
    pub ref_angle: S,
}

impl<S: Scalar> Correspondence<S> {
    pub fn new(query_pt: (S, S), query_angle: S, ref_pt: (S, S), ref_angle: S) -> Self {
        Self {
            query_pt,
            ref_pt,
            query_angle: wrap_angle(query_angle),
            ref_angle: wrap_angle(ref_angle),
        }
    }

    /// Canonical ordering used to make registries independent of input order.
    pub(crate) fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        let key = |c: &Self| [c.query_pt.0, c.query_pt.1, c.ref_pt.0, c.ref_pt.1, c.query_angle, c.ref_angle];
        let a = key(self);
        let b = key(other);
        for i in 0..6 {
            let ord = a[i].partial_cmp(&b[i]).unwrap_or(std::cmp::Ordering::Equal);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    }
}

/// The query-image origin pose implied by treating `c` as a true correspondence.
///
/// A single match fixes the full SE(2) transform because keypoints carry
/// orientations: the rotation is the orientation difference, and the
/// translation places the rotated query point onto the reference point.
pub fn implied_origin<S: Scalar>(c: &Correspondence<S>) -> Pose2D<S> {
    let theta = wrap_angle(c.ref_angle - c.query_angle);
    let (sin, cos) = theta.sin_cos();
    let rx = cos * c.query_pt.0 - sin * c.query_pt.1;
    let ry = sin * c.query_pt.0 + cos * c.query_pt.1;
    Pose2D {
        x: c.ref_pt.0 - rx,
        y: c.ref_pt.1 - ry,
        theta,
    }
}

/// Least-squares rigid fit (rotation + translation, no scale) mapping query
/// points onto reference points.
///
/// Closed form: subtract centroids, then `theta = atan2(sum cross, sum dot)`.
pub fn estimate_rigid<S: Scalar>(
    correspondences: &[Correspondence<S>],
) -> Result<Pose2D<S>, GeometryError> {
    if correspondences.len() < 2 {
        return Err(GeometryError::DegenerateInput);
    }
    let first = correspondences[0].query_pt;
    if correspondences.iter().all(|c| c.query_pt == first) {
        return Err(GeometryError::DegenerateInput);
    }

    let n = S::from_usize(correspondences.len()).unwrap();
    let mut qc = (S::zero(), S::zero());
    let mut rc = (S::zero(), S::zero());
    for c in correspondences {
        qc.0 += c.query_pt.0;
        qc.1 += c.query_pt.1;
        rc.0 += c.ref_pt.0;
        rc.1 += c.ref_pt.1;
    }
    qc = (qc.0 / n, qc.1 / n);
    rc = (rc.0 / n, rc.1 / n);

    let mut dot = S::zero();
    let mut cross = S::zero();
    for c in correspondences {
        let qx = c.query_pt.0 - qc.0;
        let qy = c.query_pt.1 - qc.1;
        let rx = c.ref_pt.0 - rc.0;
        let ry = c.ref_pt.1 - rc.1;
        dot += qx * rx + qy * ry;
        cross += qx * ry - qy * rx;
    }

    let theta = cross.atan2(dot);
    let (sin, cos) = theta.sin_cos();
    Ok(Pose2D {
        x: rc.0 - (cos * qc.0 - sin * qc.1),
        y: rc.1 - (sin * qc.0 + cos * qc.1),
        theta: wrap_angle(theta),
    })
}

/// RANSAC parameters.
///
/// The minimal sample size is one correspondence (position plus orientation
/// fully determine SE(2)), so with at most `max_iterations` correspondences
/// every match is tried as a hypothesis and the result does not depend on the
/// seed at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig<S = f64> {
    /// Reprojection distance for a correspondence to count as an inlier.
    pub inlier_px: S,
    /// Angular residual bound for an inlier.
    pub inlier_rad: S,
    /// Hypothesis budget; the effective count is `min(len, max_iterations)`.
    pub max_iterations: usize,
    /// Minimum inlier count for a pose to be accepted.
    pub min_inliers: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for RansacConfig<S> {
    fn default() -> Self {
        Self {
            inlier_px: num(5.0),
            inlier_rad: num(0.05),
            max_iterations: 1000,
            min_inliers: 3,
            seed: 0,
        }
    }
}

fn count_inliers<S: Scalar>(
    correspondences: &[Correspondence<S>],
    pose: &Pose2D<S>,
    cfg: &RansacConfig<S>,
    out: &mut Vec<usize>,
) {
    out.clear();
    for (i, c) in correspondences.iter().enumerate() {
        let (px, py) = pose.apply(c.query_pt);
        let dx = px - c.ref_pt.0;
        let dy = py - c.ref_pt.1;
        let dist = (dx * dx + dy * dy).sqrt();
        let ang = wrap_angle(wrap_angle(c.ref_angle - c.query_angle) - pose.theta).abs();
        if dist <= cfg.inlier_px && ang <= cfg.inlier_rad {
            out.push(i);
        }
    }
}

/// Robust pose estimation over single-correspondence hypotheses.
///
/// Returns the refined pose and the (ascending) inlier indices of the best
/// hypothesis. Deterministic given `cfg.seed`.
pub fn ransac_pose<S: Scalar>(
    correspondences: &[Correspondence<S>],
    cfg: &RansacConfig<S>,
) -> Result<(Pose2D<S>, Vec<usize>), GeometryError> {
    let n = correspondences.len();
    if n == 0 {
        return Err(GeometryError::NoConsensus {
            best: 0,
            required: cfg.min_inliers,
        });
    }

    let hypotheses: Vec<usize> = if n <= cfg.max_iterations {
        (0..n).collect()
    } else {
        // Partial Fisher-Yates over the index range, seeded for determinism.
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..cfg.max_iterations {
            let j = i + (rng.next_u64() % (n - i) as u64) as usize;
            idx.swap(i, j);
        }
        idx.truncate(cfg.max_iterations);
        idx
    };

    let mut best_pose = None;
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut scratch = Vec::new();
    for &h in &hypotheses {
        let pose = implied_origin(&correspondences[h]);
        count_inliers(correspondences, &pose, cfg, &mut scratch);
        if scratch.len() > best_inliers.len() {
            std::mem::swap(&mut best_inliers, &mut scratch);
            best_pose = Some(pose);
        }
    }

    if best_inliers.len() < cfg.min_inliers.max(1) {
        return Err(GeometryError::NoConsensus {
            best: best_inliers.len(),
            required: cfg.min_inliers,
        });
    }
    let hypothesis = best_pose.expect("at least one hypothesis evaluated");

    let pose = if best_inliers.len() >= 2 {
        let subset: Vec<Correspondence<S>> =
            best_inliers.iter().map(|&i| correspondences[i]).collect();
        // A single-point or coincident inlier set keeps the hypothesis pose.
        estimate_rigid(&subset).unwrap_or(hypothesis)
    } else {
        hypothesis
    };

    Ok((pose, best_inliers))
}

/// Thresholds deciding whether an estimate counts as a correct localization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuccessCriteria<S = f64> {
    /// Maximum position error in pixels (exclusive).
    pub dist_threshold: S,
    /// Maximum absolute angle error in radians (exclusive).
    pub angle_threshold: S,
    /// Pixels per millimeter of the texture plane.
    pub px_per_mm: S,
}

impl<S: Scalar> Default for SuccessCriteria<S> {
    fn default() -> Self {
        Self {
            dist_threshold: num(30.0),
            angle_threshold: num(1.5_f64.to_radians()),
            px_per_mm: num(6.25),
        }
    }
}

impl<S: Scalar> SuccessCriteria<S> {
    pub fn mm_to_px(&self, mm: S) -> S {
        mm * self.px_per_mm
    }
}

/// True iff `estimate` is strictly inside both thresholds of `truth`.
pub fn is_success<S: Scalar>(
    estimate: &Pose2D<S>,
    truth: &Pose2D<S>,
    crit: &SuccessCriteria<S>,
) -> bool {
    let dx = estimate.x - truth.x;
    let dy = estimate.y - truth.y;
    let dist = (dx * dx + dy * dy).sqrt();
    let ang = wrap_angle(estimate.theta - truth.theta).abs();
    dist < crit.dist_threshold && ang < crit.angle_threshold
}
