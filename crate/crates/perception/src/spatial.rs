use std::collections::HashMap;

use crate::geometry::Point;

/// Uniform hash grid over a borrowed point set for fixed-radius queries.
///
/// Results are deterministic: ties in distance are broken by the smaller
/// point index.
pub struct NeighborIndex<'a> {
    points: &'a [Point],
    radius: f64,
    cell: f64,
    reach: i64,
    cells: HashMap<[i64; 3], Vec<usize>>,
}

impl<'a> NeighborIndex<'a> {
    /// Cell size equal to the query radius: every query inspects 27 cells.
    pub fn new(points: &'a [Point], radius: f64) -> Self {
        Self::with_cell(points, radius, radius)
    }

    /// Cells smaller than the radius make `nearest` cheaper on dense clouds,
    /// since its search stops at the first shell that bounds the best hit.
    pub fn with_cell(points: &'a [Point], radius: f64, cell: f64) -> Self {
        assert!(radius > 0.0 && radius.is_finite(), "radius must be positive");
        assert!(cell > 0.0 && cell <= radius, "cell must be in (0, radius]");
        let mut cells: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            radius,
            cell,
            reach: (radius / cell).ceil() as i64,
            cells,
        }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    fn visit_shell(&self, k: [i64; 3], ring: i64, mut f: impl FnMut(usize)) {
        for dx in -ring..=ring {
            for dy in -ring..=ring {
                for dz in -ring..=ring {
                    if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                        continue;
                    }
                    if let Some(bucket) = self.cells.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        bucket.iter().for_each(|&i| f(i));
                    }
                }
            }
        }
    }

    /// Closest point within the index radius, as `(index, squared distance)`.
    pub fn nearest(&self, q: &Point) -> Option<(usize, f64)> {
        let r2 = self.radius * self.radius;
        let k = key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for ring in 0..=self.reach {
            self.visit_shell(k, ring, |i| {
                let d2 = (self.points[i] - q).norm_squared();
                if d2 > r2 {
                    return;
                }
                best = match best {
                    Some((bi, bd)) if bd < d2 || (bd == d2 && bi < i) => Some((bi, bd)),
                    _ => Some((i, d2)),
                };
            });
            // Every unvisited point is farther than `ring * cell` from q.
            if let Some((_, d2)) = best {
                let bound = ring as f64 * self.cell;
                if d2 < bound * bound {
                    break;
                }
            }
        }
        best
    }

    /// Indices of all points within the index radius of `q`, sorted ascending.
    pub fn within(&self, q: &Point) -> Vec<usize> {
        let r2 = self.radius * self.radius;
        let k = key(q, self.cell);
        let mut out = Vec::new();
        for ring in 0..=self.reach {
            self.visit_shell(k, ring, |i| {
                if (self.points[i] - q).norm_squared() <= r2 {
                    out.push(i);
                }
            });
        }
        out.sort_unstable();
        out
    }
}

fn key(p: &Point, cell: f64) -> [i64; 3] {
    [
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point> = (0..400)
            .map(|_| Vector3::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let radius = 0.4;
        for cell in [0.4, 0.15, 0.05] {
            let index = NeighborIndex::with_cell(&pts, radius, cell);
            for _ in 0..200 {
                let q = Vector3::new(rng.gen_range(-3.5..3.5), rng.gen_range(-3.5..3.5), rng.gen_range(-1.5..1.5));
                let brute: Vec<usize> = (0..pts.len())
                    .filter(|&i| (pts[i] - q).norm_squared() <= radius * radius)
                    .collect();
                assert_eq!(index.within(&q), brute);
                let best = brute.iter().copied().min_by(|&a, &b| {
                    (pts[a] - q)
                        .norm_squared()
                        .partial_cmp(&(pts[b] - q).norm_squared())
                        .unwrap()
                        .then(a.cmp(&b))
                });
                assert_eq!(index.nearest(&q).map(|(i, _)| i), best);
            }
        }
    }
}
