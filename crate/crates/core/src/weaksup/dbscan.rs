//! Density-based clustering of lane-marker points in the BEV plane.

use std::collections::HashMap;

/// DBSCAN over 2D points. Returns a cluster index per point, `None` for
/// noise. A point is a core point when at least `min_pts` points (itself
/// included) lie within `eps`; clusters grow from core points, and border
/// points join the first cluster that reaches them.
pub fn dbscan_labels(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    assert!(eps > 0.0, "eps must be > 0");
    assert!(min_pts >= 1, "min_pts must be >= 1");
    let n = points.len();
    let mut labels: Vec<Option<usize>> = vec![None; n];
    if n == 0 {
        return labels;
    }

    // Uniform grid index with eps-sized bins: neighbor queries only touch
    // the 3x3 surrounding bins.
    let bin = |p: (f64, f64)| -> (i64, i64) {
        ((p.0 / eps).floor() as i64, (p.1 / eps).floor() as i64)
    };
    let mut index: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, &p) in points.iter().enumerate() {
        index.entry(bin(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let (bx, by) = bin(points[i]);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(cands) = index.get(&(bx + dx, by + dy)) {
                    for &j in cands {
                        let (px, py) = points[i];
                        let (qx, qy) = points[j];
                        let d2 = (px - qx) * (px - qx) + (py - qy) * (py - qy);
                        if d2 <= eps2 {
                            out.push(j);
                        }
                    }
                }
            }
        }
        out
    };

    let mut visited = vec![false; n];
    let mut next_cluster = 0;
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let seed_neighbors = neighbors(seed);
        if seed_neighbors.len() < min_pts {
            continue; // noise unless later claimed as a border point
        }
        let cluster = next_cluster;
        next_cluster += 1;
        labels[seed] = Some(cluster);
        let mut frontier = seed_neighbors;
        while let Some(j) = frontier.pop() {
            if labels[j].is_none() {
                labels[j] = Some(cluster);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                frontier.extend(nb);
            }
        }
    }
    labels
}

/// Cluster lane-marker points; noise points are discarded and each cluster
/// is returned as its point set.
pub fn cluster_boundaries(
    points: &[(f64, f64)],
    eps: f64,
    min_pts: usize,
) -> Vec<Vec<(f64, f64)>> {
    let labels = dbscan_labels(points, eps, min_pts);
    let n_clusters = labels.iter().flatten().max().map_or(0, |&m| m + 1);
    let mut clusters = vec![Vec::new(); n_clusters];
    for (i, label) in labels.iter().enumerate() {
        if let Some(c) = label {
            clusters[*c].push(points[i]);
        }
    }
    clusters
}
