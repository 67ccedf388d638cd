//! Point-to-point ICP with radius-gated nearest-neighbour correspondences
//! and a closed-form SVD alignment per iteration.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::IcpError;
use crate::geometry::{Point, PointCloud, Pose};
use crate::spatial::NeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IcpParams {
    pub max_iterations: usize,
    /// Correspondences farther than this (metres) are ignored.
    pub correspondence_radius: f64,
    /// Convergence is declared once both the translation (m) and rotation
    /// (rad) of an iteration's update fall below this value.
    pub convergence_eps: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            correspondence_radius: 0.5,
            convergence_eps: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IcpResult {
    /// Transform taking source points into the target frame.
    pub pose: Pose,
    /// Mean over all source points of `min(d², r²)` where `d` is the distance
    /// to the nearest target point and `r` the correspondence radius. With
    /// full overlap this is the mean squared correspondence distance.
    pub fitness: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Fitness evaluated at the start of every iteration plus the final pose.
    pub fitness_history: Vec<f64>,
    pub inliers: usize,
}

impl IcpParams {
    fn validate(&self) -> Result<(), IcpError> {
        if self.max_iterations == 0 {
            return Err(IcpError::InvalidParams("max_iterations must be positive".into()));
        }
        if !(self.correspondence_radius > 0.0 && self.correspondence_radius.is_finite()) {
            return Err(IcpError::InvalidParams("correspondence_radius must be positive".into()));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(IcpError::InvalidParams("convergence_eps must be positive".into()));
        }
        Ok(())
    }
}

struct Matches {
    pairs: Vec<(Point, Point)>,
    cost: f64,
}

fn correspond(index: &NeighborIndex<'_>, target: &[Point], moved: &[Point], radius: f64) -> Matches {
    let r2 = radius * radius;
    let mut pairs = Vec::with_capacity(moved.len());
    let mut cost = 0.0;
    for p in moved {
        match index.nearest(p) {
            Some((j, d2)) => {
                cost += d2;
                pairs.push((*p, target[j]));
            }
            None => cost += r2,
        }
    }
    Matches {
        pairs,
        cost: cost / moved.len() as f64,
    }
}

/// Least-squares rigid transform mapping `pairs[i].0` onto `pairs[i].1`.
pub fn best_fit_transform(pairs: &[(Point, Point)]) -> Pose {
    let n = pairs.len() as f64;
    let (mut mean_src, mut mean_dst) = (Vector3::zeros(), Vector3::zeros());
    for (s, d) in pairs {
        mean_src += s;
        mean_dst += d;
    }
    mean_src /= n;
    mean_dst /= n;
    let mut h = Matrix3::zeros();
    for (s, d) in pairs {
        h += (s - mean_src) * (d - mean_dst).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let v = v_t.transpose();
    let mut fix = Matrix3::identity();
    let reflected = (v * u.transpose()).determinant() < 0.0;
    if reflected {
        fix[(2, 2)] = -1.0;
    }
    let mut rotation = v * fix * u.transpose();
    let s = &svd.singular_values;
    if !reflected && s.min() > 1e-9 * s.max() {
        rotation = polar_rotation(&h.transpose()).unwrap_or(rotation);
    }
    let translation = mean_dst - rotation * mean_src;
    Pose::from_rotation_matrix(&rotation, translation)
}

/// Orthogonal polar factor by Newton iteration. The SVD vectors lose
/// precision when two singular values nearly coincide; the polar factor
/// does not.
fn polar_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let mut x = *m;
    for _ in 0..50 {
        let inv_t = x.try_inverse()?.transpose();
        let next = (x + inv_t) * 0.5;
        let step = (next - x).norm();
        x = next;
        if step < 1e-15 {
            break;
        }
    }
    (x.determinant() > 0.0).then_some(x)
}

pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    params.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(IcpError::EmptyCloud);
    }
    let radius = params.correspondence_radius;
    let index = NeighborIndex::with_cell(&target.points, radius, radius / 4.0);

    let mut pose = *init;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut moved: Vec<Point> = source.points.iter().map(|p| pose.transform_point(p)).collect();

    while iterations < params.max_iterations {
        let matches = correspond(&index, &target.points, &moved, radius);
        if matches.pairs.is_empty() {
            return Err(IcpError::NoOverlap { radius });
        }
        history.push(matches.cost);
        iterations += 1;

        let delta = best_fit_transform(&matches.pairs);
        pose = delta.compose(&pose);
        pose.rotation.renormalize();
        for (m, s) in moved.iter_mut().zip(&source.points) {
            *m = pose.transform_point(s);
        }
        if delta.translation.norm() < params.convergence_eps && delta.rotation.angle() < params.convergence_eps {
            converged = true;
            break;
        }
    }

    let last = correspond(&index, &target.points, &moved, radius);
    if last.pairs.is_empty() {
        return Err(IcpError::NoOverlap { radius });
    }
    history.push(last.cost);
    Ok(IcpResult {
        pose,
        fitness: last.cost,
        iterations,
        converged,
        fitness_history: history,
        inliers: last.pairs.len(),
    })
}
