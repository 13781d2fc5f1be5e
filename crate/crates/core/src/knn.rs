//! Exact neighbor queries over 3D point sets via a uniform hash grid.
//!
//! Clustering, registration, outlier removal, and normal estimation all
//! need nearest-neighbor or radius queries at desk scale; one grid with
//! exact results serves them all.

use crate::geometry::Point3;
use std::collections::HashMap;

/// Uniform grid over a point set. Queries are exact: ring expansion
/// continues until no closer point can exist outside the searched shell.
pub struct SpatialGrid<'a> {
    points: &'a [Point3],
    cell: f64,
    buckets: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> SpatialGrid<'a> {
    /// Builds a grid with the given cell size (must be positive).
    pub fn with_cell_size(points: &'a [Point3], cell: f64) -> Self {
        assert!(cell > 0.0, "grid cell size must be positive");
        let mut buckets: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self {
            points,
            cell,
            buckets,
        }
    }

    /// Builds a grid with a cell size guessed from point density, falling
    /// back to 1.0 for degenerate (single-point or coincident) inputs.
    pub fn new(points: &'a [Point3]) -> Self {
        let cell = Self::auto_cell_size(points);
        Self::with_cell_size(points, cell)
    }

    fn auto_cell_size(points: &[Point3]) -> f64 {
        if points.len() < 2 {
            return 1.0;
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for (d, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                min[d] = min[d].min(v);
                max[d] = max[d].max(v);
            }
        }
        let diag = ((max[0] - min[0]).powi(2)
            + (max[1] - min[1]).powi(2)
            + (max[2] - min[2]).powi(2))
        .sqrt();
        if diag == 0.0 {
            return 1.0;
        }
        (diag / (points.len() as f64).cbrt()).max(diag * 1e-6)
    }

    fn key(p: &Point3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of all points within `radius` of `q` (inclusive), self
    /// included when `q` is one of the indexed points.
    pub fn within_radius(&self, q: &Point3, radius: f64) -> Vec<usize> {
        let r2 = radius * radius;
        let reach = (radius / self.cell).ceil() as i64;
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut out = Vec::new();
        for dx in -reach..=reach {
            for dy in -reach..=reach {
                for dz in -reach..=reach {
                    if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                        for &i in bucket {
                            if self.points[i].distance_squared(q) <= r2 {
                                out.push(i);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Index and squared distance of the nearest indexed point to `q`,
    /// or None for an empty set.
    pub fn nearest(&self, q: &Point3) -> Option<(usize, f64)> {
        self.nearest_excluding(q, usize::MAX)
    }

    /// Nearest point with index != `exclude` (pass usize::MAX to exclude
    /// nothing). Shells of cells are searched outward; the search stops
    /// once the best candidate is provably closer than any unsearched cell.
    pub fn nearest_excluding(&self, q: &Point3, exclude: usize) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut best: Option<(usize, f64)> = None;
        let mut ring: i64 = 0;
        // A bucket at Chebyshev ring r contains no point closer than
        // (r - 1) * cell, so once best <= that bound the search is done.
        loop {
            let mut found_any_bucket = false;
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                            found_any_bucket = true;
                            for &i in bucket {
                                if i == exclude {
                                    continue;
                                }
                                let d2 = self.points[i].distance_squared(q);
                                if best.map_or(true, |(_, b)| d2 < b) {
                                    best = Some((i, d2));
                                }
                            }
                        }
                    }
                }
            }
            if let Some((_, best_d2)) = best {
                let safe = (ring - 1).max(0) as f64 * self.cell;
                if best_d2.sqrt() <= safe {
                    return best;
                }
            }
            ring += 1;
            let _ = found_any_bucket;
            // Past the grid extent plus the certification margin nothing
            // new can turn up; bound the walk by the occupied key range.
            if ring > self.max_ring_from(kx, ky, kz) + 1 {
                return best;
            }
        }
    }

    /// The `k` nearest indexed points to `q` (self excluded when
    /// `exclude_self` names an index), sorted by ascending distance.
    /// Returns fewer than `k` pairs only when the set is too small.
    pub fn k_nearest(&self, q: &Point3, k: usize, exclude: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        let (kx, ky, kz) = Self::key(q, self.cell);
        let mut heap: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        let mut ring: i64 = 0;
        let max_ring = self.max_ring_from(kx, ky, kz) + 1;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = self.buckets.get(&(kx + dx, ky + dy, kz + dz)) {
                            for &i in bucket {
                                if i == exclude {
                                    continue;
                                }
                                let d2 = self.points[i].distance_squared(q);
                                if heap.len() < k {
                                    heap.push((i, d2));
                                    heap.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                                } else if d2 < heap[k - 1].1 {
                                    heap[k - 1] = (i, d2);
                                    heap.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
                                }
                            }
                        }
                    }
                }
            }
            if heap.len() >= k {
                let worst = heap[k - 1].1.sqrt();
                let safe = (ring - 1).max(0) as f64 * self.cell;
                if worst <= safe {
                    return heap;
                }
            }
            ring += 1;
            if ring > max_ring {
                return heap;
            }
        }
    }

    /// Largest Chebyshev ring (from the query cell) that could contain an
    /// occupied bucket, derived from the occupied key bounds.
    fn max_ring_from(&self, kx: i64, ky: i64, kz: i64) -> i64 {
        let mut max_ring = 0i64;
        for key in self.buckets.keys() {
            let r = (key.0 - kx)
                .abs()
                .max((key.1 - ky).abs())
                .max((key.2 - kz).abs());
            max_ring = max_ring.max(r);
        }
        max_ring
    }
}
