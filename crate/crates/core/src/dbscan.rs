//! Density-based clustering of foreground points.
//!
//! Standard DBSCAN over 3D Euclidean distance. A point's eps-neighborhood
//! includes the point itself, so a core point needs min_points total
//! returns within eps. Border points go to whichever core point's cluster
//! reaches them first in scan order, which makes the labeling reproducible
//! for a fixed input order.

use crate::geometry::Point3;
use crate::knn::SpatialGrid;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DbscanParams {
    /// Neighborhood radius in meters.
    pub eps: f64,
    /// Minimum neighborhood size (self included) for a core point.
    pub min_points: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        Self {
            eps: 1.2,
            min_points: 5,
        }
    }
}

/// Per-point assignment: cluster index or noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLabel {
    Noise,
    Cluster(usize),
}

/// Clustering result. `labels` is parallel to the input; `clusters` lists
/// member indices per cluster, each in ascending input order.
#[derive(Debug, Clone)]
pub struct Clustering {
    pub labels: Vec<PointLabel>,
    pub clusters: Vec<Vec<usize>>,
}

impl Clustering {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == PointLabel::Noise).count()
    }
}

pub fn dbscan(points: &[Point3], params: &DbscanParams) -> Clustering {
    let n = points.len();
    let mut labels = vec![None::<PointLabel>; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    if n == 0 {
        return Clustering {
            labels: vec![],
            clusters,
        };
    }

    let grid = SpatialGrid::with_cell_size(points, params.eps.max(1e-9));

    for seed in 0..n {
        if labels[seed].is_some() {
            continue;
        }
        let neighborhood = grid.within_radius(&points[seed], params.eps);
        if neighborhood.len() < params.min_points {
            labels[seed] = Some(PointLabel::Noise);
            continue;
        }

        let cluster_id = clusters.len();
        labels[seed] = Some(PointLabel::Cluster(cluster_id));
        let mut members = vec![seed];
        // Seed expansion queue: every density-reachable point joins unless
        // another cluster already claimed it.
        let mut queue: Vec<usize> = neighborhood.into_iter().filter(|&i| i != seed).collect();
        let mut head = 0;
        while head < queue.len() {
            let idx = queue[head];
            head += 1;
            match labels[idx] {
                Some(PointLabel::Cluster(_)) => continue,
                Some(PointLabel::Noise) | None => {
                    let was_unvisited = labels[idx].is_none();
                    labels[idx] = Some(PointLabel::Cluster(cluster_id));
                    members.push(idx);
                    if was_unvisited {
                        let reach = grid.within_radius(&points[idx], params.eps);
                        if reach.len() >= params.min_points {
                            for j in reach {
                                if labels[j].is_none() || labels[j] == Some(PointLabel::Noise) {
                                    queue.push(j);
                                }
                            }
                        }
                    }
                }
            }
        }
        members.sort_unstable();
        members.dedup();
        clusters.push(members);
    }

    Clustering {
        labels: labels.into_iter().map(|l| l.unwrap()).collect(),
        clusters,
    }
}

/// Materializes each cluster's points, in input order.
pub fn cluster_points(points: &[Point3], clustering: &Clustering) -> Vec<Vec<Point3>> {
    clustering
        .clusters
        .iter()
        .map(|members| members.iter().map(|&i| points[i]).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    /// Dense axis-aligned blob of points spaced well under eps.
    fn blob(cx: f64, cy: f64, cz: f64, count: usize, spacing: f64) -> Vec<Point3> {
        (0..count)
            .map(|i| pt(cx + spacing * (i % 3) as f64, cy + spacing * ((i / 3) % 3) as f64, cz + spacing * (i / 9) as f64))
            .collect()
    }

    #[test]
    fn empty_input_yields_empty_result() {
        let c = dbscan(&[], &DbscanParams::default());
        assert!(c.labels.is_empty());
        assert!(c.clusters.is_empty());
    }

    #[test]
    fn isolated_point_is_noise_even_with_min_points_two() {
        let params = DbscanParams {
            eps: 1.0,
            min_points: 2,
        };
        let c = dbscan(&[pt(0.0, 0.0, 0.0)], &params);
        assert_eq!(c.labels, vec![PointLabel::Noise]);
        assert!(c.clusters.is_empty());
    }

    #[test]
    fn two_far_blobs_form_two_clusters() {
        let mut points = blob(0.0, 0.0, 0.0, 12, 0.3);
        points.extend(blob(10.0, 0.0, 0.0, 12, 0.3));
        let c = dbscan(&points, &DbscanParams::default());
        assert_eq!(c.clusters.len(), 2);
        assert_eq!(c.noise_count(), 0);
        // Blob membership must match construction.
        for i in 0..12 {
            assert_eq!(c.labels[i], PointLabel::Cluster(0));
            assert_eq!(c.labels[12 + i], PointLabel::Cluster(1));
        }
    }

    #[test]
    fn sparse_scatter_is_all_noise() {
        let points: Vec<Point3> = (0..10).map(|i| pt(i as f64 * 5.0, 0.0, 0.0)).collect();
        let c = dbscan(&points, &DbscanParams::default());
        assert_eq!(c.noise_count(), 10);
        assert!(c.clusters.is_empty());
    }

    #[test]
    fn chain_within_eps_is_one_cluster() {
        // 30 points spaced 1.0 m with eps 1.2: every point density-connects.
        let points: Vec<Point3> = (0..30).map(|i| pt(i as f64, 0.0, 0.0)).collect();
        let params = DbscanParams {
            eps: 1.2,
            min_points: 3,
        };
        let c = dbscan(&points, &params);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].len(), 30);
    }

    #[test]
    fn border_point_goes_to_first_cluster_in_scan_order() {
        // Two cores flank one border point that both can reach, but which
        // has too few neighbors to be core itself.
        let params = DbscanParams {
            eps: 1.0,
            min_points: 4,
        };
        let mut points = Vec::new();
        // Left core group at x <= 0 (indices 0..4). Only index 0 is within
        // eps of the border point, so the border stays below min_points.
        points.push(pt(0.0, 0.0, 0.0));
        points.push(pt(-0.2, 0.0, 0.0));
        points.push(pt(0.0, 0.2, 0.0));
        points.push(pt(-0.2, 0.2, 0.0));
        // Border point reachable from both sides (index 4): its neighborhood
        // is itself plus exactly one core from each group, 3 < min_points.
        points.push(pt(1.0, 0.0, 0.0));
        // Right core group at x >= 2 (indices 5..9).
        points.push(pt(2.0, 0.0, 0.0));
        points.push(pt(2.2, 0.0, 0.0));
        points.push(pt(2.0, 0.2, 0.0));
        points.push(pt(2.2, 0.2, 0.0));
        let c = dbscan(&points, &params);
        assert_eq!(c.clusters.len(), 2);
        // Index 0 seeds cluster 0 which claims the border point first.
        assert_eq!(c.labels[4], PointLabel::Cluster(0));
        assert!(c.clusters[0].contains(&4));
        assert!(!c.clusters[1].contains(&4));
    }

    #[test]
    fn noise_point_upgrades_to_border_when_reached_later() {
        // Scan order visits the lone border point before any core: it gets
        // marked noise, then a later cluster absorbs it.
        let params = DbscanParams {
            eps: 1.0,
            min_points: 4,
        };
        let mut points = vec![pt(1.0, 0.0, 0.0)];
        points.push(pt(0.0, 0.0, 0.0));
        points.push(pt(0.2, 0.0, 0.0));
        points.push(pt(0.0, 0.2, 0.0));
        points.push(pt(0.2, 0.2, 0.0));
        let c = dbscan(&points, &params);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.labels[0], PointLabel::Cluster(0));
        assert_eq!(c.noise_count(), 0);
    }

    #[test]
    fn labels_and_clusters_are_mutually_consistent() {
        let mut points = blob(0.0, 0.0, 0.0, 20, 0.4);
        points.extend(blob(8.0, 3.0, 0.0, 15, 0.4));
        points.push(pt(50.0, 50.0, 50.0));
        let c = dbscan(&points, &DbscanParams::default());
        for (i, label) in c.labels.iter().enumerate() {
            match label {
                PointLabel::Noise => {
                    assert!(c.clusters.iter().all(|m| !m.contains(&i)));
                }
                PointLabel::Cluster(id) => {
                    assert!(c.clusters[*id].contains(&i));
                }
            }
        }
        let total: usize = c.clusters.iter().map(|m| m.len()).sum();
        assert_eq!(total + c.noise_count(), points.len());
    }

    #[test]
    fn cluster_points_materializes_members() {
        let points = blob(1.0, 2.0, 3.0, 10, 0.3);
        let c = dbscan(&points, &DbscanParams { eps: 1.2, min_points: 4 });
        let groups = cluster_points(&points, &c);
        assert_eq!(groups.len(), c.clusters.len());
        for (members, group) in c.clusters.iter().zip(&groups) {
            assert_eq!(members.len(), group.len());
            for (&idx, p) in members.iter().zip(group) {
                assert_eq!(points[idx], *p);
            }
        }
    }

    /// Brute-force reference: core points from exhaustive neighborhoods,
    /// clusters as connected components of the core-core eps graph, border
    /// points attached to any reachable core component.
    fn reference_partition(points: &[Point3], params: &DbscanParams) -> (Vec<bool>, Vec<Option<usize>>) {
        let n = points.len();
        let mut core = vec![false; n];
        for i in 0..n {
            let count = (0..n)
                .filter(|&j| points[i].distance(&points[j]) <= params.eps)
                .count();
            core[i] = count >= params.min_points;
        }
        // Union-find over core points.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let r = find(parent, parent[i]);
                parent[i] = r;
            }
            parent[i]
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if core[i] && core[j] && points[i].distance(&points[j]) <= params.eps {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    parent[ri] = rj;
                }
            }
        }
        let mut component = vec![None::<usize>; n];
        for i in 0..n {
            if core[i] {
                component[i] = Some(find(&mut parent, i));
            }
        }
        (core, component)
    }

    #[test]
    fn matches_density_reachability_on_random_instances() {
        // The exact border-point assignment is order-dependent, so the
        // oracle checks the order-independent facts: core points cluster
        // exactly by core-graph component, border points join a component
        // that can reach them, everything else is noise.
        let mut state = 77u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 33) as f64 / (1u64 << 31) as f64
        };
        for trial in 0..30 {
            let n = 20 + (trial * 7) % 60;
            let points: Vec<Point3> = (0..n)
                .map(|_| pt(next() * 12.0, next() * 12.0, next() * 3.0))
                .collect();
            let params = DbscanParams {
                eps: 1.2,
                min_points: 4,
            };
            let got = dbscan(&points, &params);
            let (core, component) = reference_partition(&points, &params);

            for i in 0..n {
                for j in 0..n {
                    if core[i] && core[j] {
                        let same_component = component[i] == component[j];
                        let same_cluster = got.labels[i] == got.labels[j];
                        assert_eq!(
                            same_component, same_cluster,
                            "trial {trial}: core pair ({i}, {j}) split wrongly"
                        );
                    }
                }
            }
            for i in 0..n {
                match got.labels[i] {
                    PointLabel::Cluster(id) => {
                        // Must be density-reachable: some core point of the
                        // same cluster within eps.
                        let ok = (0..n).any(|j| {
                            core[j]
                                && got.labels[j] == PointLabel::Cluster(id)
                                && points[i].distance(&points[j]) <= params.eps
                        });
                        assert!(ok, "trial {trial}: point {i} not reachable from its cluster");
                    }
                    PointLabel::Noise => {
                        let reachable = (0..n)
                            .any(|j| core[j] && points[i].distance(&points[j]) <= params.eps);
                        assert!(!reachable, "trial {trial}: point {i} wrongly left as noise");
                    }
                }
            }
        }
    }
}
