//! Lloyd's K-means with k-means++ seeding on the rows of a matrix.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// Cluster index in `0..k` for every row.
    pub labels: Vec<usize>,
    pub centers: Matrix,
    /// Within-cluster sum of squared distances.
    pub wcss: f64,
    pub iterations: usize,
}

const MAX_LLOYD_ITER: usize = 100;

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeanspp(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(points.row(i), centers.row(c)));
        }
    }
    centers
}

/// Centres of a labelling; an empty cluster keeps the centre in `fallback`.
pub fn centers_of(points: &Matrix, labels: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut centers = Matrix::zeros(k, points.cols());
    let mut sizes = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        sizes[l] += 1;
        for (c, v) in centers.row_mut(l).iter_mut().zip(points.row(i)) {
            *c += v;
        }
    }
    for (l, &size) in sizes.iter().enumerate() {
        if size > 0 {
            centers.row_mut(l).iter_mut().for_each(|c| *c /= size as f64);
        }
    }
    (centers, sizes)
}

/// Lloyd iterations from the given centres. Empty clusters are re-seeded
/// with the point farthest from its centre, which only lowers the WCSS.
pub fn lloyd(points: &Matrix, mut centers: Matrix) -> KmeansResult {
    let (n, k) = (points.rows(), centers.rows());
    let mut labels = vec![usize::MAX; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut changed = false;
        let mut dist = vec![0.0; n];
        for i in 0..n {
            let (mut best, mut arg) = (f64::INFINITY, 0);
            for c in 0..k {
                let d = sq_dist(points.row(i), centers.row(c));
                if d < best {
                    best = d;
                    arg = c;
                }
            }
            dist[i] = best;
            if labels[i] != arg {
                labels[i] = arg;
                changed = true;
            }
        }
        let (new_centers, sizes) = centers_of(points, &labels, k);
        centers = new_centers;
        for empty in (0..k).filter(|&c| sizes[c] == 0) {
            let far = (0..n)
                .filter(|&i| {
                    let l = labels[i];
                    labels.iter().filter(|&&x| x == l).count() > 1
                })
                .max_by(|&a, &b| dist[a].total_cmp(&dist[b]));
            if let Some(i) = far {
                labels[i] = empty;
                dist[i] = 0.0;
                changed = true;
            }
        }
        if sizes.iter().any(|&s| s == 0) {
            centers = centers_of(points, &labels, k).0;
        }
        if !changed || iterations >= MAX_LLOYD_ITER {
            break;
        }
    }
    let wcss = (0..n).map(|i| sq_dist(points.row(i), centers.row(labels[i]))).sum();
    KmeansResult {
        labels,
        centers,
        wcss,
        iterations,
    }
}

/// Best of `restarts` k-means++ seeded Lloyd runs; `warm` adds one more
/// candidate started from an existing labelling.
pub fn kmeans(points: &Matrix, k: usize, restarts: usize, seed: u64, warm: Option<&[usize]>) -> KmeansResult {
    assert!(k >= 1 && k <= points.rows(), "need 1 <= k <= number of points");
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut best: Option<KmeansResult> = warm.map(|labels| lloyd(points, centers_of(points, labels, k).0));
    for _ in 0..restarts.max(1) {
        let fit = lloyd(points, kmeanspp(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| fit.wcss < b.wcss) {
            best = Some(fit);
        }
    }
    best.expect("at least one k-means run")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::adjusted_rand_index;

    #[test]
    fn separates_obvious_blobs() {
        let pts = Matrix::from_vec(6, 1, vec![0.0, 0.1, 0.2, 10.0, 10.1, 10.2]);
        let r = kmeans(&pts, 2, 5, 1, None);
        assert_eq!(adjusted_rand_index(&r.labels, &[0, 0, 0, 1, 1, 1]).unwrap(), 1.0);
        assert!((r.wcss - 0.04).abs() < 1e-12);
    }

    #[test]
    fn warm_start_never_worse_than_start() {
        let pts = Matrix::from_fn(20, 2, |r, c| ((r * 7 + c * 3) % 11) as f64);
        let labels: Vec<usize> = (0..20).map(|i| i % 3).collect();
        let (c0, _) = centers_of(&pts, &labels, 3);
        let start: f64 = (0..20).map(|i| sq_dist(pts.row(i), c0.row(labels[i]))).sum();
        let r = kmeans(&pts, 3, 0, 5, Some(&labels));
        assert!(r.wcss <= start + 1e-12);
    }

    #[test]
    fn no_empty_clusters_with_duplicates() {
        let pts = Matrix::from_vec(4, 1, vec![1.0, 1.0, 1.0, 5.0]);
        let r = kmeans(&pts, 3, 3, 2, None);
        for c in 0..3 {
            assert!(r.labels.contains(&c));
        }
    }
}
