use nalgebra::SymmetricEigen;

use crate::geometry::{covariance, Point, PointCloud};
use crate::spatial::NeighborIndex;

/// Order-1 moving least squares: every point is projected onto the
/// least-squares plane of its neighbours within `radius`. Points with fewer
/// than three neighbours (itself included) are passed through.
pub fn mls_smooth(cloud: &PointCloud, radius: f64) -> PointCloud {
    assert!(radius > 0.0, "radius must be positive");
    let index = NeighborIndex::new(&cloud.points, radius);
    let mut neighbourhood: Vec<Point> = Vec::new();
    let points = cloud
        .points
        .iter()
        .map(|p| {
            neighbourhood.clear();
            neighbourhood.extend(index.within(p).into_iter().map(|i| cloud.points[i]));
            if neighbourhood.len() < 3 {
                return *p;
            }
            let Some((mean, cov)) = covariance(&neighbourhood) else {
                return *p;
            };
            let eig = SymmetricEigen::new(cov);
            let smallest = eig.eigenvalues.imin();
            let normal = eig.eigenvectors.column(smallest).into_owned();
            p - normal * normal.dot(&(p - mean))
        })
        .collect();
    PointCloud::with_frame(points, cloud.frame_id.clone())
}
