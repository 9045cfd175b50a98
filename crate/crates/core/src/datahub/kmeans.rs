//! Lloyd's k-means with k-means++ seeding and empty-cluster repair.

use crate::diffmath::Matrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::DataError;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ initial centroids.
fn seed_centroids(x: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = x.rows();
    let first = rng.random_range(0..n);
    let mut centroids = vec![x.row(first).to_vec()];
    let mut dist2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centroids[0])).collect();
    #[allow(clippy::needless_range_loop)]
    while centroids.len() < k {
        let total: f64 = dist2.iter().sum();
        let next = if total <= 0.0 {
            // All points coincide with a centroid; fall back to uniform.
            rng.random_range(0..n)
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in dist2.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        };
        let c = x.row(next).to_vec();
        for i in 0..n {
            dist2[i] = dist2[i].min(sq_dist(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(x: &Matrix, centroids: &[Vec<f64>]) -> Vec<usize> {
    (0..x.rows())
        .map(|i| {
            let row = x.row(i);
            let mut best = 0;
            let mut best_d = sq_dist(row, &centroids[0]);
            for (c, cent) in centroids.iter().enumerate().skip(1) {
                let d = sq_dist(row, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Sum over points of the squared distance to the assigned centroid.
pub fn inertia(x: &Matrix, assignments: &[usize], centroids: &[Vec<f64>]) -> f64 {
    assignments
        .iter()
        .enumerate()
        .map(|(i, &c)| sq_dist(x.row(i), &centroids[c]))
        .sum()
}

/// Lloyd's algorithm. Stops when the maximum centroid shift drops below
/// `tol` or after `max_iter` sweeps. An emptied cluster is repaired by
/// stealing the point farthest from its current centroid.
pub fn kmeans(
    x: &Matrix,
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<usize>, Vec<Vec<f64>>), DataError> {
    let n = x.rows();
    if n < k {
        return Err(DataError::Precondition(format!(
            "k-means needs at least {k} rows, got {n}"
        )));
    }
    let d = x.cols();
    let mut centroids = seed_centroids(x, k, rng);
    let mut assignments = assign(x, &centroids);

    for _ in 0..max_iter {
        // Recompute centroids.
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Steal the point farthest from its assigned centroid.
                let (far, _) = (0..n)
                    .map(|i| (i, sq_dist(x.row(i), &centroids[assignments[i]])))
                    .fold((0, f64::NEG_INFINITY), |acc, cur| {
                        if cur.1 > acc.1 {
                            cur
                        } else {
                            acc
                        }
                    });
                let old = assignments[far];
                counts[old] -= 1;
                for (s, v) in sums[old].iter_mut().zip(x.row(far)) {
                    *s -= v;
                }
                assignments[far] = c;
                counts[c] = 1;
                sums[c] = x.row(far).to_vec();
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            for j in 0..d {
                let new = sums[c][j] / counts[c] as f64;
                shift = shift.max((new - centroids[c][j]).abs());
                centroids[c][j] = new;
            }
        }
        assignments = assign(x, &centroids);
        if shift < tol {
            break;
        }
    }
    Ok((assignments, centroids))
}
