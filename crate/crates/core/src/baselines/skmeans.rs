use alloc::vec;
use alloc::vec::Vec;
use rand::SeedableRng;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::math::{exp, ln, sq, sqrt};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkmeansConfig {
    /// k-means++ restarts per clustering step.
    pub n_starts: usize,
    pub max_iter: usize,
    /// Relative ℓ1 change of the weights that stops the alternation.
    pub tol: f64,
    pub seed: u64,
}

impl Default for SkmeansConfig {
    fn default() -> Self {
        Self {
            n_starts: 10,
            max_iter: 20,
            tol: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseKmeansFit {
    pub labels: Vec<usize>,
    pub weights: Vec<f64>,
    pub s: f64,
    /// `Σ_j w_j BCSS_j`
    pub objective: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl SparseKmeansFit {
    pub fn selected_genes(&self) -> Vec<bool> {
        self.weights.iter().map(|&w| w > 0.0).collect()
    }
}

/// Between-cluster sums of squares `TSS_j − WCSS_j` with pairwise-distance
/// scaling (twice the usual centred sums). `x` is genes × samples.
pub fn bcss(x: &Matrix, labels: &[usize], k: usize) -> Vec<f64> {
    let n = x.cols();
    let mut size = vec![0usize; k];
    for &l in labels {
        size[l] += 1;
    }
    (0..x.rows())
        .map(|j| {
            let row = x.row(j);
            let mean = row.iter().sum::<f64>() / n as f64;
            let tss: f64 = row.iter().map(|v| sq(v - mean)).sum();
            let mut sums = vec![0.0; k];
            for (v, &l) in row.iter().zip(labels) {
                sums[l] += v;
            }
            let wcss: f64 = row
                .iter()
                .zip(labels)
                .map(|(v, &l)| sq(v - sums[l] / size[l] as f64))
                .sum();
            2.0 * (tss - wcss)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightUpdate {
    pub weights: Vec<f64>,
    /// Soft-threshold level; zero when the ℓ1 bound is already met.
    pub delta: f64,
}

fn normalized_soft(b: &[f64], delta: f64) -> Vec<f64> {
    let w: Vec<f64> = b.iter().map(|&v| (v - delta).max(0.0)).collect();
    let norm = sqrt(w.iter().map(|v| v * v).sum());
    w.into_iter().map(|v| v / norm).collect()
}

/// `w = S(b⁺, Δ) / ‖S(b⁺, Δ)‖₂` with the smallest `Δ ≥ 0` giving `‖w‖₁ ≤ s`.
pub fn update_weights(b: &[f64], s: f64) -> Result<WeightUpdate> {
    if !(s >= 1.0) {
        return Err(Error::validation("sparsity bound must be at least 1"));
    }
    let b: Vec<f64> = b.iter().map(|&v| v.max(0.0)).collect();
    let max = b.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Degenerate("every between-cluster sum of squares is zero".into()));
    }
    let l1 = |w: &[f64]| w.iter().sum::<f64>();
    let w = normalized_soft(&b, 0.0);
    if l1(&w) <= s {
        return Ok(WeightUpdate { weights: w, delta: 0.0 });
    }
    let (mut lo, mut hi) = (0.0, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if l1(&normalized_soft(&b, mid)) > s {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(WeightUpdate {
        weights: normalized_soft(&b, hi),
        delta: hi,
    })
}

/// Samples × active-genes matrix scaled by `√w`.
fn scaled_points(x: &Matrix, w: &[f64]) -> Matrix {
    let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    let scale: Vec<f64> = active.iter().map(|&j| sqrt(w[j])).collect();
    Matrix::from_fn(x.cols(), active.len(), |i, a| x[(active[a], i)] * scale[a])
}

/// Sparse K-means on genes × samples data.
pub fn fit_skmeans(x: &Matrix, k: usize, s: f64, cfg: &SkmeansConfig) -> Result<SparseKmeansFit> {
    let (g, n) = (x.rows(), x.cols());
    if g == 0 || k == 0 || k > n {
        return Err(Error::validation("need genes and 1 <= K <= n"));
    }
    if !(s >= 1.0 && s <= sqrt(g as f64) * (1.0 + 1e-12)) {
        return Err(Error::validation(alloc::format!("sparsity bound {s} outside [1, sqrt(G)]")));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("input must be finite"));
    }
    let mut w = vec![1.0 / sqrt(g as f64); g];
    let mut labels: Option<Vec<usize>> = None;
    let mut trace = Vec::new();
    let (mut converged, mut iterations) = (false, 0);
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        let points = scaled_points(x, &w);
        let seed = crate::sub_seed(cfg.seed, it as u64);
        let next = kmeans(&points, k, cfg.n_starts, seed, labels.as_deref()).labels;
        let b = bcss(x, &next, k);
        let upd = update_weights(&b, s)?;
        trace.push(upd.weights.iter().zip(&b).map(|(w, b)| w * b).sum());
        let change: f64 = upd.weights.iter().zip(&w).map(|(a, b)| (a - b).abs()).sum::<f64>() / w.iter().sum::<f64>();
        w = upd.weights;
        labels = Some(next);
        if change < cfg.tol {
            converged = true;
            break;
        }
    }
    Ok(SparseKmeansFit {
        labels: labels.expect("at least one iteration"),
        weights: w,
        s,
        objective: *trace.last().expect("at least one iteration"),
        objective_trace: trace,
        iterations,
        converged,
    })
}

/// `len` log-spaced bounds from 1.2 to `√G`.
pub fn default_s_grid(n_genes: usize, len: usize) -> Vec<f64> {
    let hi = sqrt(n_genes as f64);
    let lo = 1.2f64.min(hi);
    if len <= 1 {
        return vec![hi];
    }
    (0..len)
        .map(|t| exp(ln(lo) + (ln(hi) - ln(lo)) * t as f64 / (len - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapResult {
    pub s_grid: Vec<f64>,
    pub gaps: Vec<f64>,
    /// Standard deviation of the permuted log objectives per bound.
    pub sd: Vec<f64>,
    pub chosen_index: usize,
    pub chosen_s: f64,
    /// Fit on the observed data at the chosen bound.
    pub fit: SparseKmeansFit,
}

/// Gap statistic over sparsity bounds: the smallest bound whose gap is within
/// one standard deviation of the largest gap. Each permuted data set shuffles
/// every gene independently across samples and is shared by all bounds.
pub fn gap_statistic_s(x: &Matrix, k: usize, s_grid: &[f64], n_perm: usize, cfg: &SkmeansConfig) -> Result<GapResult> {
    if n_perm < 2 {
        return Err(Error::validation("the gap statistic needs at least two permutations"));
    }
    if s_grid.is_empty() {
        return Err(Error::validation("empty sparsity grid"));
    }
    let mut rng = crate::Rng::seed_from_u64(crate::sub_seed(cfg.seed, u64::MAX));
    let perms: Vec<Matrix> = (0..n_perm)
        .map(|_| {
            let mut p = x.clone();
            for j in 0..p.rows() {
                p.row_mut(j).shuffle(&mut rng);
            }
            p
        })
        .collect();
    let mut fits = Vec::with_capacity(s_grid.len());
    let mut gaps = Vec::with_capacity(s_grid.len());
    let mut sds = Vec::with_capacity(s_grid.len());
    for &s in s_grid {
        let fit = fit_skmeans(x, k, s, cfg)?;
        let logs: Vec<f64> = perms
            .iter()
            .map(|p| fit_skmeans(p, k, s, cfg).map(|f| ln(f.objective)))
            .collect::<Result<_>>()?;
        let mean = logs.iter().sum::<f64>() / n_perm as f64;
        let var = logs.iter().map(|l| sq(l - mean)).sum::<f64>() / (n_perm - 1) as f64;
        gaps.push(ln(fit.objective) - mean);
        sds.push(sqrt(var));
        fits.push(fit);
    }
    let best = (0..gaps.len()).fold(0, |a, i| if gaps[i] > gaps[a] { i } else { a });
    let chosen = (0..gaps.len()).find(|&i| gaps[i] >= gaps[best] - sds[best]).unwrap_or(best);
    Ok(GapResult {
        s_grid: s_grid.to_vec(),
        gaps,
        sd: sds,
        chosen_index: chosen,
        chosen_s: s_grid[chosen],
        fit: fits.swap_remove(chosen),
    })
}
