//! Euclidean clustering, rigid-motion-invariant cluster descriptors and
//! cross-mission object matching.

use std::cmp::Ordering;

use nalgebra::{SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{covariance, Aabb, Point, PointCloud};
use crate::spatial::NeighborIndex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChangeKind {
    Added,
    Removed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectCluster {
    pub id: String,
    pub change_kind: ChangeKind,
    pub points: PointCloud,
    pub centroid: Point,
    pub bbox: Aabb,
}

impl ObjectCluster {
    /// Panics on an empty cloud; clusters are never empty.
    pub fn new(id: impl Into<String>, change_kind: ChangeKind, points: PointCloud) -> Self {
        let centroid = points.centroid().expect("cluster must be non-empty");
        let bbox = Aabb::of(&points.points).expect("cluster must be non-empty");
        Self {
            id: id.into(),
            change_kind,
            points,
            centroid,
            bbox,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn descriptor(&self) -> ClusterDescriptor {
        ClusterDescriptor::of(&self.points.points)
    }
}

struct DisjointSets {
    parent: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn lexicographic(a: &Point, b: &Point) -> Ordering {
    a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
}

/// Connected components of the graph linking points closer than `tolerance`.
///
/// Components with fewer than `min_size` points are dropped. The result is
/// ordered by descending size, ties broken by lexicographic centroid order.
pub fn euclidean_cluster(cloud: &PointCloud, tolerance: f64, min_size: usize) -> Vec<PointCloud> {
    assert!(tolerance > 0.0, "tolerance must be positive");
    let n = cloud.points.len();
    let index = NeighborIndex::new(&cloud.points, tolerance);
    let mut sets = DisjointSets::new(n);
    for (i, p) in cloud.points.iter().enumerate() {
        for j in index.within(p) {
            if j > i {
                sets.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<Point>> = Default::default();
    for i in 0..n {
        let root = sets.find(i);
        groups.entry(root).or_default().push(cloud.points[i]);
    }
    let mut clusters: Vec<(Point, Vec<Point>)> = groups
        .into_values()
        .filter(|g| g.len() >= min_size.max(1))
        .map(|g| (crate::geometry::centroid(&g).unwrap(), g))
        .collect();
    clusters.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| lexicographic(&a.0, &b.0)));
    clusters
        .into_iter()
        .map(|(_, pts)| PointCloud::with_frame(pts, cloud.frame_id.clone()))
        .collect()
}

/// Shape signature unchanged by rigid motion of the cluster.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterDescriptor {
    /// Covariance eigenvalues in descending order (m²).
    pub eigenvalues: [f64; 3],
    pub point_count: usize,
    /// Volume of the bounding box aligned with the principal axes (m³).
    pub bbox_volume: f64,
}

impl ClusterDescriptor {
    pub fn of(points: &[Point]) -> Self {
        let Some((mean, cov)) = covariance(points) else {
            return Self {
                eigenvalues: [0.0; 3],
                point_count: 0,
                bbox_volume: 0.0,
            };
        };
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for p in points {
            let d = p - mean;
            for (k, &axis) in order.iter().enumerate() {
                let c = eig.eigenvectors.column(axis).dot(&d);
                lo[k] = lo[k].min(c);
                hi[k] = hi[k].max(c);
            }
        }
        let e = hi - lo;
        Self {
            eigenvalues,
            point_count: points.len(),
            bbox_volume: e.x * e.y * e.z,
        }
    }

    /// Feature vector used for distances and grouping: principal standard
    /// deviations (m), cube root of the box volume (m) and weighted log count.
    pub fn features(&self, count_weight: f64) -> [f64; 5] {
        [
            self.eigenvalues[0].sqrt(),
            self.eigenvalues[1].sqrt(),
            self.eigenvalues[2].sqrt(),
            self.bbox_volume.cbrt(),
            count_weight * (self.point_count.max(1) as f64).ln(),
        ]
    }

    pub fn distance(&self, other: &ClusterDescriptor, count_weight: f64) -> f64 {
        let (a, b) = (self.features(count_weight), other.features(count_weight));
        a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    /// Pairs farther apart than this in descriptor space stay unmatched.
    pub cutoff: f64,
    pub count_weight: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            cutoff: 0.25,
            count_weight: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub added: Option<String>,
    pub removed: Option<String>,
    pub distance: Option<f64>,
}

/// Greedy mutual-nearest-neighbour matching in descriptor space.
///
/// Repeatedly pairs the globally closest unmatched `(a, b)` pair while its
/// distance is within the cutoff; every leftover cluster gets a one-sided
/// correspondence. Matched pairs come first, in acceptance order.
pub fn match_objects(a: &[ObjectCluster], b: &[ObjectCluster], params: &MatchParams) -> Vec<Correspondence> {
    let da: Vec<_> = a.iter().map(ObjectCluster::descriptor).collect();
    let db: Vec<_> = b.iter().map(ObjectCluster::descriptor).collect();
    let mut candidates = Vec::new();
    for (i, x) in da.iter().enumerate() {
        for (j, y) in db.iter().enumerate() {
            let d = x.distance(y, params.count_weight);
            if d <= params.cutoff {
                candidates.push((d, i, j));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Vec::new();
    for (d, i, j) in candidates {
        if used_a[i] || used_b[j] {
            continue;
        }
        used_a[i] = true;
        used_b[j] = true;
        out.push(Correspondence {
            added: Some(a[i].id.clone()),
            removed: Some(b[j].id.clone()),
            distance: Some(d),
        });
    }
    out.extend(a.iter().zip(&used_a).filter(|(_, u)| !**u).map(|(c, _)| Correspondence {
        added: Some(c.id.clone()),
        removed: None,
        distance: None,
    }));
    out.extend(b.iter().zip(&used_b).filter(|(_, u)| !**u).map(|(c, _)| Correspondence {
        added: None,
        removed: Some(c.id.clone()),
        distance: None,
    }));
    out
}

/// Lloyd's k-means over descriptor features with seeded k-means++ seeding.
/// Returns one group label per descriptor.
pub fn kmeans_group(descriptors: &[ClusterDescriptor], k: usize, count_weight: f64, seed: u64) -> Vec<usize> {
    let feats: Vec<[f64; 5]> = descriptors.iter().map(|d| d.features(count_weight)).collect();
    if feats.is_empty() || k == 0 {
        return vec![0; feats.len()];
    }
    let k = k.min(feats.len());
    let dist2 = |a: &[f64; 5], b: &[f64; 5]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centres = vec![feats[rng.gen_range(0..feats.len())]];
    while centres.len() < k {
        let weights: Vec<f64> = feats
            .iter()
            .map(|f| centres.iter().map(|c| dist2(f, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut pick = rng.gen_range(0.0..total);
        let mut chosen = feats.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        centres.push(feats[chosen]);
    }

    let mut labels = vec![0usize; feats.len()];
    for _ in 0..100 {
        let mut changed = false;
        for (i, f) in feats.iter().enumerate() {
            let best = (0..centres.len())
                .min_by(|&a, &b| dist2(f, &centres[a]).total_cmp(&dist2(f, &centres[b])))
                .unwrap();
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }
        for (c, centre) in centres.iter_mut().enumerate() {
            let members: Vec<&[f64; 5]> = feats.iter().zip(&labels).filter(|(_, l)| **l == c).map(|(f, _)| f).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..5 {
                centre[d] = members.iter().map(|m| m[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}
