use std::collections::{BTreeMap, BTreeSet};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::ChangeError;
use crate::geometry::{Point, PointCloud};

pub type VoxelIndex = [i64; 3];

const FACE_NEIGHBOURS: [VoxelIndex; 6] = [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]];

/// Sparse occupancy grid. Voxel `i` is centred at `origin + i * resolution`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGrid {
    pub resolution: f64,
    pub origin: Point,
    pub occupied: BTreeSet<VoxelIndex>,
}

impl VoxelGrid {
    pub fn empty(resolution: f64, origin: Point) -> Self {
        assert!(resolution > 0.0, "resolution must be positive");
        Self {
            resolution,
            origin,
            occupied: BTreeSet::new(),
        }
    }

    pub fn index_of(&self, p: &Point) -> VoxelIndex {
        index_of(p, self.resolution, &self.origin)
    }

    pub fn centre(&self, idx: &VoxelIndex) -> Point {
        self.origin + Vector3::new(idx[0] as f64, idx[1] as f64, idx[2] as f64) * self.resolution
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.occupied.contains(&self.index_of(p))
    }

    pub fn len(&self) -> usize {
        self.occupied.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupied.is_empty()
    }

    fn same_layout(&self, other: &VoxelGrid) -> bool {
        self.resolution == other.resolution && self.origin == other.origin
    }

    fn with_cells(&self, occupied: BTreeSet<VoxelIndex>) -> VoxelGrid {
        VoxelGrid {
            resolution: self.resolution,
            origin: self.origin,
            occupied,
        }
    }

    /// Points of `cloud` that fall in an occupied voxel, in input order.
    pub fn back_project(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::with_frame(
            cloud.points.iter().filter(|p| self.contains_point(p)).copied().collect(),
            cloud.frame_id.clone(),
        )
    }
}

fn index_of(p: &Point, resolution: f64, origin: &Point) -> VoxelIndex {
    let q = (p - origin) / resolution;
    [(q.x + 0.5).floor() as i64, (q.y + 0.5).floor() as i64, (q.z + 0.5).floor() as i64]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelParams {
    pub resolution: f64,
    pub origin: Point,
    pub min_points_per_voxel: usize,
}

impl VoxelParams {
    pub fn new(resolution: f64) -> Self {
        Self {
            resolution,
            origin: Vector3::zeros(),
            min_points_per_voxel: 1,
        }
    }
}

pub fn voxelize(cloud: &PointCloud, resolution: f64) -> Result<VoxelGrid, ChangeError> {
    voxelize_with(cloud, &VoxelParams::new(resolution))
}

pub fn voxelize_with(cloud: &PointCloud, params: &VoxelParams) -> Result<VoxelGrid, ChangeError> {
    if !(params.resolution > 0.0 && params.resolution.is_finite()) {
        return Err(ChangeError::InvalidParams("resolution must be positive".into()));
    }
    let mut counts: BTreeMap<VoxelIndex, usize> = BTreeMap::new();
    for p in &cloud.points {
        *counts.entry(index_of(p, params.resolution, &params.origin)).or_default() += 1;
    }
    let min = params.min_points_per_voxel.max(1);
    Ok(VoxelGrid {
        resolution: params.resolution,
        origin: params.origin,
        occupied: counts.into_iter().filter(|(_, n)| *n >= min).map(|(k, _)| k).collect(),
    })
}

/// One point per occupied voxel: the centroid of the points inside it.
pub fn downsample(cloud: &PointCloud, resolution: f64) -> PointCloud {
    let origin = Vector3::zeros();
    let mut acc: BTreeMap<VoxelIndex, (Point, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let e = acc.entry(index_of(p, resolution, &origin)).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    PointCloud::with_frame(
        acc.into_values().map(|(s, n)| s / n as f64).collect(),
        cloud.frame_id.clone(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridDiff {
    /// Occupied in the second grid only.
    pub added: VoxelGrid,
    /// Occupied in the first grid only.
    pub removed: VoxelGrid,
}

pub fn diff_grids(a: &VoxelGrid, b: &VoxelGrid) -> Result<GridDiff, ChangeError> {
    if !a.same_layout(b) {
        return Err(ChangeError::GridMismatch);
    }
    Ok(GridDiff {
        added: a.with_cells(b.occupied.difference(&a.occupied).copied().collect()),
        removed: a.with_cells(a.occupied.difference(&b.occupied).copied().collect()),
    })
}

fn offset(v: &VoxelIndex, d: &VoxelIndex) -> VoxelIndex {
    [v[0] + d[0], v[1] + d[1], v[2] + d[2]]
}

pub fn erode(grid: &VoxelGrid) -> VoxelGrid {
    grid.with_cells(
        grid.occupied
            .iter()
            .filter(|v| FACE_NEIGHBOURS.iter().all(|d| grid.occupied.contains(&offset(v, d))))
            .copied()
            .collect(),
    )
}

pub fn dilate(grid: &VoxelGrid) -> VoxelGrid {
    let mut out = grid.occupied.clone();
    for v in &grid.occupied {
        for d in &FACE_NEIGHBOURS {
            out.insert(offset(v, d));
        }
    }
    grid.with_cells(out)
}

/// Morphological opening with a 6-connected structuring element:
/// `radius` erosions followed by `radius` dilations.
pub fn morph_open(grid: &VoxelGrid, radius: usize) -> VoxelGrid {
    let mut g = grid.clone();
    for _ in 0..radius {
        g = erode(&g);
    }
    for _ in 0..radius {
        g = dilate(&g);
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(cells: &[VoxelIndex]) -> VoxelGrid {
        let mut g = VoxelGrid::empty(0.1, Vector3::zeros());
        g.occupied.extend(cells.iter().copied());
        g
    }

    #[test]
    fn voxelize_examples() {
        assert!(voxelize(&PointCloud::default(), 0.1).unwrap().is_empty());

        let mut corners = Vec::new();
        for x in [0.0, 1.0] {
            for y in [0.0, 1.0] {
                for z in [0.0, 1.0] {
                    corners.push(Vector3::new(x, y, z));
                }
            }
        }
        let g = voxelize(&PointCloud::new(corners), 0.5).unwrap();
        assert_eq!(g.len(), 8);
        assert!(g.occupied.contains(&[2, 2, 2]));

        let two = PointCloud::new(vec![Vector3::new(0.01, 0.01, 0.01), Vector3::new(0.02, -0.01, 0.0)]);
        assert_eq!(voxelize(&two, 0.1).unwrap().len(), 1);
        assert!(voxelize(&two, 0.0).is_err());
    }

    #[test]
    fn min_points_threshold() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.01, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
        ]);
        let params = VoxelParams {
            min_points_per_voxel: 2,
            ..VoxelParams::new(0.1)
        };
        assert_eq!(voxelize_with(&cloud, &params).unwrap().occupied, [[0, 0, 0]].into_iter().collect());
    }

    #[test]
    fn centre_round_trips_index() {
        let g = VoxelGrid::empty(0.25, Vector3::new(1.0, -2.0, 0.5));
        for idx in [[0, 0, 0], [3, -4, 7], [-10, 2, -1]] {
            assert_eq!(g.index_of(&g.centre(&idx)), idx);
        }
    }

    #[test]
    fn diff_examples() {
        let a = grid(&[[0, 0, 0], [1, 0, 0]]);
        let d = diff_grids(&a, &a).unwrap();
        assert!(d.added.is_empty() && d.removed.is_empty());

        let b = grid(&[[0, 0, 0], [1, 0, 0], [5, 5, 5]]);
        let d = diff_grids(&a, &b).unwrap();
        assert_eq!(d.added.occupied, [[5, 5, 5]].into_iter().collect());
        assert!(d.removed.is_empty());

        let other = VoxelGrid::empty(0.2, Vector3::zeros());
        assert_eq!(diff_grids(&a, &other), Err(ChangeError::GridMismatch));
    }

    #[test]
    fn opening_examples() {
        assert!(morph_open(&grid(&[[4, 4, 4]]), 1).is_empty());
        assert!(morph_open(&grid(&[]), 1).is_empty());

        let mut block = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    block.push([x, y, z]);
                }
            }
        }
        let b = grid(&block);
        assert_eq!(erode(&b).occupied, [[1, 1, 1]].into_iter().collect());
        // Dilating the lone centre gives the 7-voxel cross, all inside the block.
        let opened = morph_open(&b, 1);
        assert_eq!(opened.len(), 7);
        assert!(opened.occupied.is_subset(&b.occupied));
        assert!(opened.occupied.contains(&[1, 1, 1]));
    }

    #[test]
    fn downsample_averages_per_voxel() {
        let cloud = PointCloud::new(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.02, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 1.0),
        ]);
        let d = downsample(&cloud, 0.1);
        assert_eq!(d.len(), 2);
        assert!((d.points[0] - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-12);
    }
}
