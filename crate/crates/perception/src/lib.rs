//! Point-cloud geometry for localisation and inter-mission change detection.

pub mod change;
pub mod cluster;
pub mod error;
pub mod geometry;
pub mod ground;
pub mod icp;
pub mod mls;
pub mod pcd;
pub mod spatial;
pub mod voxel;

pub use change::{run_pipeline, ChangeParams, ChangeReport};
pub use cluster::{
    euclidean_cluster, kmeans_group, match_objects, ChangeKind, ClusterDescriptor, Correspondence, MatchParams,
    ObjectCluster,
};
pub use error::{ChangeError, IcpError, PcdError};
pub use geometry::{Aabb, Point, PointCloud, Pose};
pub use ground::{ransac_ground_filter, GroundSplit, Plane, RansacParams};
pub use icp::{icp_register, IcpParams, IcpResult};
pub use mls::mls_smooth;
pub use voxel::{diff_grids, downsample, morph_open, voxelize, voxelize_with, GridDiff, VoxelGrid, VoxelParams};
