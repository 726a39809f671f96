//! Density-based clustering used twice: on raw 2D points ahead of RANSAC,
//! and on wall segments with a precomputed, pre-normalised distance matrix.
//!
//! Seeds are visited in index order and neighbourhoods are expanded
//! breadth-first in the order the neighbour callback returns them, so the
//! labelling is a deterministic function of the input order.

use std::collections::{HashMap, VecDeque};

use crate::geom::Point2;

/// Cluster labels; `None` marks noise.
pub type Labels = Vec<Option<usize>>;

/// Generic DBSCAN over `n` items. `neighbors(i)` returns every `j` (including
/// `i` itself) within `eps` of item `i`. A point is a core point when it has
/// at least `min_pts` neighbours counting itself.
pub fn dbscan_with<F>(n: usize, min_pts: usize, mut neighbors: F) -> Labels
where
    F: FnMut(usize) -> Vec<usize>,
{
    let mut labels: Labels = vec![None; n];
    let mut visited = vec![false; n];
    let mut next = 0usize;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        visited[seed] = true;
        let nb = neighbors(seed);
        if nb.len() < min_pts {
            continue;
        }
        let id = next;
        next += 1;
        labels[seed] = Some(id);
        queue.clear();
        queue.extend(nb);
        while let Some(j) = queue.pop_front() {
            if labels[j].is_none() {
                labels[j] = Some(id);
            }
            if visited[j] {
                continue;
            }
            visited[j] = true;
            let nb = neighbors(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| labels[k].is_none() || !visited[k]));
            }
        }
    }
    labels
}

/// DBSCAN on a dense symmetric distance matrix; neighbours satisfy `d <= eps`.
pub fn dbscan_precomputed(matrix: &[Vec<f64>], eps: f64, min_pts: usize) -> Labels {
    let n = matrix.len();
    dbscan_with(n, min_pts, |i| {
        (0..n).filter(|&j| matrix[i][j] <= eps).collect()
    })
}

/// DBSCAN on 2D points with Euclidean distance, accelerated by a uniform
/// grid of cell size `eps`.
pub fn dbscan_points(points: &[Point2], eps: f64, min_pts: usize) -> Labels {
    let inv = 1.0 / eps;
    let key = |p: &Point2| ((p.x * inv).floor() as i64, (p.y * inv).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let eps2 = eps * eps;
    dbscan_with(points.len(), min_pts, |i| {
        let p = points[i];
        let (cx, cy) = key(&p);
        let mut out = Vec::new();
        for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(cell) = grid.get(&(cx + dx, cy + dy)) {
                    out.extend(cell.iter().copied().filter(|&j| {
                        let d = points[j] - p;
                        d.dot(d) <= eps2
                    }));
                }
            }
        }
        out.sort_unstable();
        out
    })
}

/// Number of clusters in a labelling.
pub fn cluster_count(labels: &Labels) -> usize {
    labels.iter().flatten().max().map_or(0, |m| m + 1)
}

/// Groups member indices by cluster label, in label order.
pub fn members(labels: &Labels) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); cluster_count(labels)];
    for (i, l) in labels.iter().enumerate() {
        if let Some(l) = l {
            out[*l].push(i);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_and_noise() {
        let pts: Vec<Point2> = (0..5)
            .map(|i| Point2::new(i as f64 * 0.5, 0.0))
            .chain([Point2::new(10.0, 10.0)])
            .collect();
        let l = dbscan_points(&pts, 0.6, 2);
        assert_eq!(cluster_count(&l), 1);
        assert_eq!(l[5], None);
        assert!(l[..5].iter().all(|x| *x == Some(0)));
    }

    #[test]
    fn min_pts_one_gives_components() {
        let m = vec![
            vec![0.0, 0.5, 3.0],
            vec![0.5, 0.0, 3.0],
            vec![3.0, 3.0, 0.0],
        ];
        let l = dbscan_precomputed(&m, 1.0, 1);
        assert_eq!(l, vec![Some(0), Some(0), Some(1)]);
    }

    #[test]
    fn border_points_join_first_cluster() {
        // Two dense runs; 0.6 touches both as a border point.
        let pts: Vec<Point2> = [0.0, 0.1, 0.2, 0.3, 0.6, 0.9, 1.0, 1.1, 1.2]
            .iter()
            .map(|&x| Point2::new(x, 0.0))
            .collect();
        let l = dbscan_points(&pts, 0.31, 4);
        assert_eq!(l[4], Some(0));
        assert_eq!(cluster_count(&l), 2);
    }
}
