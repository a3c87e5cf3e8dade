//! Weighted k-means with k-means++ seeding and seeded restarts.

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::sq_dist;
use crate::partition::Partition;
use crate::rng::seeded;
use rand::Rng;

const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    /// Canonical labels, one per point.
    pub partition: Partition,
    /// Weighted within-cluster sum of squares.
    pub inertia: f64,
}

fn nearest(x: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = sq_dist(x, center);
        // Strict comparison: ties go to the lowest center index, so identical
        // points always land in the same cluster.
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus_init(points: &[&[f64]], weights: &[f64], k: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed);
    let draw = |rng: &mut crate::rng::Rng64, w: &[f64]| -> Option<usize> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        for (k, &x) in w.iter().enumerate() {
            if u < x {
                return Some(k);
            }
            u -= x;
        }
        w.iter().rposition(|&x| x > 0.0)
    };
    let first = draw(&mut rng, weights).unwrap_or(0);
    let mut centers = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let scores: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        // All points coincide with some center: fewer distinct points than k.
        let Some(next) = draw(&mut rng, &scores) else {
            break;
        };
        let c = points[next].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }
    centers
}

fn lloyd(points: &[&[f64]], weights: &[f64], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64) {
    let dim = points.first().map_or(0, |p| p.len());
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let assigned: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        if assigned == labels {
            break;
        }
        labels = assigned;
        let mut sums = vec![vec![0.0; dim]; centers.len()];
        let mut mass = vec![0.0; centers.len()];
        for ((p, &l), &w) in points.iter().zip(&labels).zip(weights) {
            mass[l] += w;
            crate::linalg::axpy(w, p, &mut sums[l]);
        }
        // Empty clusters are dropped.
        let keep: Vec<usize> = (0..centers.len()).filter(|&c| mass[c] > 0.0).collect();
        centers = keep
            .iter()
            .map(|&c| sums[c].iter().map(|s| s / mass[c]).collect())
            .collect();
    }
    let labels: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
    let inertia = points
        .iter()
        .zip(&labels)
        .zip(weights)
        .map(|((p, &l), w)| w * sq_dist(p, &centers[l]))
        .sum();
    (labels, inertia)
}

/// Clusters `points` (`n × dim`, row-major) into at most `k` clusters.
///
/// Runs `restarts` independent k-means++ initializations (in parallel when
/// enabled) and keeps the lowest weighted inertia; ties go to the earliest
/// restart. Empty clusters are dropped and labels canonicalized.
pub fn kmeans(points: &[f64], dim: usize, weights: &[f64], k: usize, restarts: usize, seed: u64) -> Result<KMeansFit> {
    if k == 0 || restarts == 0 {
        return Err(Error::invalid("k and restarts must be positive"));
    }
    if dim == 0 {
        let n = weights.len();
        return Ok(KMeansFit {
            partition: Partition::trivial(n.max(1)),
            inertia: 0.0,
        });
    }
    if !points.len().is_multiple_of(dim) || points.len() / dim != weights.len() {
        return Err(Error::invalid("points and weights disagree in count"));
    }
    if weights.is_empty() {
        return Err(Error::invalid("cannot cluster zero points"));
    }
    let rows: Vec<&[f64]> = points.chunks_exact(dim).collect();
    let runs = exec::map_range(restarts, |r| {
        let centers = plus_plus_init(&rows, weights, k, exec::split_seed(seed, r as u64));
        lloyd(&rows, weights, centers)
    });
    let (labels, inertia) = runs
        .into_iter()
        .reduce(|best, run| if run.1 < best.1 { run } else { best })
        .expect("restarts > 0");
    Ok(KMeansFit {
        partition: Partition::from_labels(&labels),
        inertia,
    })
}

/// Dissolves clusters whose weight is below `min_fraction` of the total,
/// moving their points to the nearest centroid of a surviving cluster. The
/// heaviest cluster always survives. Returns canonical labels.
pub fn absorb_small_clusters(points: &[f64], dim: usize, weights: &[f64], partition: &Partition, min_fraction: f64) -> Partition {
    let k = partition.n_cells();
    if k <= 1 || !(min_fraction > 0.0) || dim == 0 {
        return partition.clone();
    }
    let mut mass = vec![0.0; k];
    let mut sums = vec![vec![0.0; dim]; k];
    for (n, &w) in weights.iter().enumerate() {
        let c = partition.label(n);
        mass[c] += w;
        crate::linalg::axpy(w, &points[n * dim..(n + 1) * dim], &mut sums[c]);
    }
    let total: f64 = mass.iter().sum();
    let heaviest = (0..k).fold(0, |b, c| if mass[c] > mass[b] { c } else { b });
    let keep: Vec<usize> = (0..k).filter(|&c| c == heaviest || mass[c] >= min_fraction * total).collect();
    if keep.len() == k {
        return partition.clone();
    }
    let centers: Vec<Vec<f64>> = keep
        .iter()
        .map(|&c| sums[c].iter().map(|s| s / mass[c]).collect())
        .collect();
    let labels: Vec<usize> = (0..weights.len())
        .map(|n| {
            let c = partition.label(n);
            match keep.iter().position(|&x| x == c) {
                Some(pos) => pos,
                None => nearest(&points[n * dim..(n + 1) * dim], &centers).0,
            }
        })
        .collect();
    Partition::from_labels(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_distinct_values_give_two_clusters() {
        let pts = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let fit = kmeans(&pts, 2, &[1.0; 5], 4, 3, 0).unwrap();
        assert_eq!(fit.partition, Partition::from_labels(&[0, 1, 0, 1, 0]));
        assert_eq!(fit.inertia, 0.0);
    }

    #[test]
    fn identical_rows_form_one_cluster() {
        let pts = vec![0.25; 12];
        let fit = kmeans(&pts, 3, &[1.0; 4], 16, 10, 5).unwrap();
        assert_eq!(fit.partition.n_cells(), 1);
    }

    #[test]
    fn separated_blobs() {
        let mut rng = seeded(1);
        let mut pts = Vec::new();
        for k in 0..60 {
            let c = (k % 3) as f64 * 10.0;
            pts.push(c + rng.random::<f64>());
            pts.push(-c + rng.random::<f64>());
        }
        let fit = kmeans(&pts, 2, &[1.0; 60], 3, 10, 2).unwrap();
        let expect: Vec<usize> = (0..60).map(|k| k % 3).collect();
        assert_eq!(fit.partition, Partition::from_labels(&expect));
    }

    #[test]
    fn small_clusters_are_absorbed() {
        let pts = [0.0, 0.1, 5.0, 5.2, 9.0];
        let p = Partition::from_labels(&[0, 0, 1, 1, 2]);
        let out = absorb_small_clusters(&pts, 1, &[1.0; 5], &p, 0.3);
        assert_eq!(out, Partition::from_labels(&[0, 0, 1, 1, 1]));
        assert_eq!(absorb_small_clusters(&pts, 1, &[1.0; 5], &p, 0.0), p);
        // Everything below the bar: the heaviest cluster still survives.
        let all = absorb_small_clusters(&pts, 1, &[1.0; 5], &p, 0.9);
        assert_eq!(all.n_cells(), 1);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = seeded(4);
        let pts: Vec<f64> = (0..400).map(|_| rng.random::<f64>()).collect();
        let w = vec![1.0; 200];
        assert_eq!(kmeans(&pts, 2, &w, 7, 5, 9).unwrap(), kmeans(&pts, 2, &w, 7, 5, 9).unwrap());
    }
}
