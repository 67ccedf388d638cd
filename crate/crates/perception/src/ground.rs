//! RANSAC ground-plane removal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::ChangeError;
use crate::geometry::{Point, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub distance_threshold: f64,
    pub max_iterations: usize,
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            distance_threshold: 0.05,
            max_iterations: 200,
            min_inlier_fraction: 0.1,
            seed: 0,
        }
    }
}

/// Plane `normal · p = offset` with a unit normal whose largest component
/// along +z is non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: Point,
    pub offset: f64,
}

impl Plane {
    pub fn through(a: &Point, b: &Point, c: &Point) -> Option<Plane> {
        let n = (b - a).cross(&(c - a));
        let len = n.norm();
        if len < 1e-12 {
            return None;
        }
        let mut normal = n / len;
        if normal.z < 0.0 || (normal.z == 0.0 && (normal.y < 0.0 || (normal.y == 0.0 && normal.x < 0.0))) {
            normal = -normal;
        }
        Some(Plane {
            normal,
            offset: normal.dot(a),
        })
    }

    pub fn distance(&self, p: &Point) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundSplit {
    pub ground: PointCloud,
    pub nonground: PointCloud,
    pub plane: Plane,
}

pub fn ransac_ground_filter(cloud: &PointCloud, params: &RansacParams) -> Result<GroundSplit, ChangeError> {
    let n = cloud.points.len();
    if n < 3 {
        return Err(ChangeError::TooFewPoints(n));
    }
    if !(params.distance_threshold > 0.0) || params.max_iterations == 0 {
        return Err(ChangeError::InvalidParams("RANSAC threshold and iterations must be positive".into()));
    }
    let pts = &cloud.points;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, Plane)> = None;

    let consider = |plane: Plane, best: &mut Option<(usize, Plane)>| {
        let count = pts.iter().filter(|p| plane.distance(p) <= params.distance_threshold).count();
        if best.map_or(true, |(c, _)| count > c) {
            *best = Some((count, plane));
        }
    };

    if n == 3 {
        if let Some(plane) = Plane::through(&pts[0], &pts[1], &pts[2]) {
            consider(plane, &mut best);
        }
    } else {
        for _ in 0..params.max_iterations {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            let k = rng.gen_range(0..n);
            if i == j || j == k || i == k {
                continue;
            }
            if let Some(plane) = Plane::through(&pts[i], &pts[j], &pts[k]) {
                consider(plane, &mut best);
            }
        }
    }

    let (count, plane) = best.unwrap_or((0, Plane { normal: Point::z(), offset: 0.0 }));
    let fraction = count as f64 / n as f64;
    if count == 0 || fraction < params.min_inlier_fraction {
        return Err(ChangeError::NoGroundFound { inlier_fraction: fraction });
    }
    let (ground, nonground): (Vec<Point>, Vec<Point>) =
        pts.iter().partition(|p| plane.distance(p) <= params.distance_threshold);
    Ok(GroundSplit {
        ground: PointCloud::with_frame(ground, cloud.frame_id.clone()),
        nonground: PointCloud::with_frame(nonground, cloud.frame_id.clone()),
        plane,
    })
}
