//! Uniform spatial hash for fixed-radius and k-nearest-neighbor queries.

use std::collections::HashMap;

use crate::Vec3;

type Key = (i64, i64, i64);

pub struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    buckets: HashMap<Key, Vec<usize>>,
    lo: Key,
    hi: Key,
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0 && cell.is_finite(), "cell size must be positive");
        let mut buckets: HashMap<Key, Vec<usize>> = HashMap::new();
        let mut lo = (i64::MAX, i64::MAX, i64::MAX);
        let mut hi = (i64::MIN, i64::MIN, i64::MIN);
        for (i, p) in points.iter().enumerate() {
            let k = key(p, cell);
            lo = (lo.0.min(k.0), lo.1.min(k.1), lo.2.min(k.2));
            hi = (hi.0.max(k.0), hi.1.max(k.1), hi.2.max(k.2));
            buckets.entry(k).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
            lo,
            hi,
        }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    /// Calls `f(j, |p - x_j|)` for every point with `|p - x_j| < radius`,
    /// in increasing index order.
    pub fn for_each_within<F: FnMut(usize, f64)>(&self, p: &Vec3, radius: f64, mut f: F) {
        let reach = (radius / self.cell).ceil() as i64;
        let (cx, cy, cz) = key(p, self.cell);
        let mut hits = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in bucket {
                            let d = (self.points[j] - p).norm();
                            if d < radius {
                                hits.push((j, d));
                            }
                        }
                    }
                }
            }
        }
        hits.sort_unstable_by_key(|&(j, _)| j);
        for (j, d) in hits {
            f(j, d);
        }
    }

    /// Exact distance from point `i` to its `k`-th nearest other point
    /// (`k >= 1`). Searches cell rings of increasing Chebyshev radius until
    /// the candidate set provably contains the `k` nearest neighbors.
    pub fn kth_neighbor_distance(&self, i: usize, k: usize) -> Option<f64> {
        if k == 0 || k >= self.points.len() {
            return None;
        }
        let p = self.points[i];
        let (cx, cy, cz) = key(&p, self.cell);
        let mut dists: Vec<f64> = Vec::new();
        let max_ring = self.max_ring(&(cx, cy, cz));
        for r in 0..=max_ring {
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        if let Some(bucket) = self.buckets.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in bucket {
                                if j != i {
                                    dists.push((self.points[j] - p).norm());
                                }
                            }
                        }
                    }
                }
            }
            if dists.len() >= k {
                dists.sort_unstable_by(f64::total_cmp);
                // Everything within r·cell of p lies in rings 0..=r.
                if dists[k - 1] <= r as f64 * self.cell {
                    return Some(dists[k - 1]);
                }
            }
        }
        dists.sort_unstable_by(f64::total_cmp);
        dists.get(k - 1).copied()
    }

    fn max_ring(&self, c: &Key) -> i64 {
        let span = |c: i64, lo: i64, hi: i64| (c - lo).abs().max((hi - c).abs());
        span(c.0, self.lo.0, self.hi.0)
            .max(span(c.1, self.lo.1, self.hi.1))
            .max(span(c.2, self.lo.2, self.hi.2))
            + 1
    }
}

fn key(p: &Vec3, cell: f64) -> Key {
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}
