//! Object-level change detection between two registered clouds.
//!
//! Stages run in a fixed order: ground removal, MLS smoothing, voxelisation,
//! occupancy differencing, morphological opening, back-projection to the
//! unsmoothed points, Euclidean clustering and descriptor matching. Every
//! stage except differencing can be switched off for ablations.

use serde::{Deserialize, Serialize};

use crate::cluster::{euclidean_cluster, match_objects, ChangeKind, Correspondence, MatchParams, ObjectCluster};
use crate::error::ChangeError;
use crate::geometry::{Point, PointCloud};
use crate::ground::{ransac_ground_filter, RansacParams};
use crate::mls::mls_smooth;
use crate::voxel::{diff_grids, morph_open, voxelize_with, VoxelGrid, VoxelParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeParams {
    pub resolution: f64,
    pub origin: Point,
    pub min_points_per_voxel: usize,
    /// `None` skips ground removal.
    pub ground: Option<RansacParams>,
    /// `None` skips smoothing.
    pub mls_radius: Option<f64>,
    /// Opening radius in voxels; 0 skips the stage.
    pub open_radius: usize,
    pub cluster_tolerance: f64,
    pub min_cluster_size: usize,
    pub matching: MatchParams,
}

impl Default for ChangeParams {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            origin: Point::zeros(),
            min_points_per_voxel: 1,
            ground: Some(RansacParams::default()),
            mls_radius: Some(0.05),
            open_radius: 1,
            cluster_tolerance: 0.15,
            min_cluster_size: 10,
            matching: MatchParams::default(),
        }
    }
}

impl ChangeParams {
    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            cluster_tolerance: 1.5 * resolution,
            ..Self::default()
        }
    }

    fn voxel_params(&self) -> VoxelParams {
        VoxelParams {
            resolution: self.resolution,
            origin: self.origin,
            min_points_per_voxel: self.min_points_per_voxel,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangeReport {
    pub added: Vec<ObjectCluster>,
    pub removed: Vec<ObjectCluster>,
    pub correspondences: Vec<Correspondence>,
    pub params: ChangeParams,
}

impl ChangeReport {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty()
    }
}

fn stage(name: &'static str) -> impl FnOnce(ChangeError) -> ChangeError {
    move |e| ChangeError::Stage {
        stage: name,
        source: Box::new(e),
    }
}

fn strip_ground(cloud: &PointCloud, params: &ChangeParams) -> Result<PointCloud, ChangeError> {
    let Some(ransac) = &params.ground else {
        return Ok(cloud.clone());
    };
    if cloud.len() < 3 {
        return Ok(cloud.clone());
    }
    match ransac_ground_filter(cloud, ransac) {
        Ok(split) => Ok(split.nonground),
        Err(ChangeError::NoGroundFound { .. }) => Ok(cloud.clone()),
        Err(e) => Err(stage("ground_filter")(e)),
    }
}

fn clusters(points: &PointCloud, kind: ChangeKind, params: &ChangeParams) -> Vec<ObjectCluster> {
    let prefix = match kind {
        ChangeKind::Added => "added",
        ChangeKind::Removed => "removed",
    };
    euclidean_cluster(points, params.cluster_tolerance, params.min_cluster_size)
        .into_iter()
        .enumerate()
        .map(|(i, c)| ObjectCluster::new(format!("{prefix}-{i}"), kind, c))
        .collect()
}

pub fn run_pipeline(before: &PointCloud, after: &PointCloud, params: &ChangeParams) -> Result<ChangeReport, ChangeError> {
    if !(params.resolution > 0.0) || !(params.cluster_tolerance > 0.0) {
        return Err(ChangeError::InvalidParams("resolution and cluster tolerance must be positive".into()));
    }
    let raw_a = strip_ground(before, params)?;
    let raw_b = strip_ground(after, params)?;

    let (smooth_a, smooth_b) = match params.mls_radius {
        Some(r) if r > 0.0 => (mls_smooth(&raw_a, r), mls_smooth(&raw_b, r)),
        Some(_) => return Err(stage("mls_smooth")(ChangeError::InvalidParams("radius must be positive".into()))),
        None => (raw_a.clone(), raw_b.clone()),
    };

    let vp = params.voxel_params();
    let grid_a = voxelize_with(&smooth_a, &vp).map_err(stage("voxelize"))?;
    let grid_b = voxelize_with(&smooth_b, &vp).map_err(stage("voxelize"))?;
    let diff = diff_grids(&grid_a, &grid_b).map_err(stage("diff"))?;

    let open = |g: VoxelGrid| if params.open_radius > 0 { morph_open(&g, params.open_radius) } else { g };
    let added_grid = open(diff.added);
    let removed_grid = open(diff.removed);

    let added = clusters(&added_grid.back_project(&raw_b), ChangeKind::Added, params);
    let removed = clusters(&removed_grid.back_project(&raw_a), ChangeKind::Removed, params);
    let correspondences = match_objects(&added, &removed, &params.matching);

    Ok(ChangeReport {
        added,
        removed,
        correspondences,
        params: params.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn floor(rng: &mut ChaCha8Rng) -> Vec<Point> {
        (0..4000)
            .map(|_| Vector3::new(rng.gen_range(0.0..6.0), rng.gen_range(0.0..4.0), 0.0))
            .collect()
    }

    fn solid_box(rng: &mut ChaCha8Rng, centre: Point, edge: f64, n: usize) -> Vec<Point> {
        let h = edge / 2.0;
        (0..n)
            .map(|_| centre + Vector3::new(rng.gen_range(-h..h), rng.gen_range(-h..h), rng.gen_range(-h..h)))
            .collect()
    }

    #[test]
    fn self_difference_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = floor(&mut rng);
        pts.extend(solid_box(&mut rng, Vector3::new(1.0, 1.0, 0.3), 0.6, 800));
        let c = PointCloud::new(pts);
        let report = run_pipeline(&c, &c, &ChangeParams::default()).unwrap();
        assert!(report.is_empty());
        assert!(report.correspondences.is_empty());
    }

    #[test]
    fn added_cube_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let before = PointCloud::new(floor(&mut rng));
        let mut after = before.clone();
        after.points.extend(solid_box(&mut rng, Vector3::new(3.0, 2.0, 0.25), 0.5, 500));
        let report = run_pipeline(&before, &after, &ChangeParams::default()).unwrap();
        assert_eq!(report.added.len(), 1, "{:?}", report.added.iter().map(|c| c.len()).collect::<Vec<_>>());
        assert!(report.removed.is_empty());
        let err = (report.added[0].centroid - Vector3::new(3.0, 2.0, 0.25)).norm();
        assert!(err <= 0.1, "centroid error {err}");
    }

    #[test]
    fn moved_object_is_matched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ground = floor(&mut rng);
        let obj = solid_box(&mut rng, Vector3::new(1.0, 1.0, 0.35), 0.7, 1500);
        let mut before = ground.clone();
        before.extend(obj.iter().copied());
        let mut after = ground;
        after.extend(obj.iter().map(|p| p + Vector3::new(2.0, 0.0, 0.0)));
        let report = run_pipeline(&PointCloud::new(before), &PointCloud::new(after), &ChangeParams::default()).unwrap();
        assert_eq!((report.added.len(), report.removed.len()), (1, 1));
        assert_eq!(report.correspondences.len(), 1);
        let c = &report.correspondences[0];
        assert_eq!(c.added.as_deref(), Some("added-0"));
        assert_eq!(c.removed.as_deref(), Some("removed-0"));
    }

    #[test]
    fn stage_errors_carry_the_stage_name() {
        let c = PointCloud::new(vec![Vector3::zeros(); 5]);
        let params = ChangeParams {
            mls_radius: Some(-1.0),
            ..ChangeParams::default()
        };
        let err = run_pipeline(&c, &c, &params).unwrap_err();
        assert!(err.to_string().contains("mls_smooth"), "{err}");
    }
}
