use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::math::{exp, ln, soft_threshold, sq, sqrt};
use crate::matrix::Matrix;
use crate::mixture::{hard_labels, m_step_pi, FitConfig, Init};

pub const SIGMA2_FLOOR: f64 = 1e-6;

/// Per-gene centring and scaling to unit (population) variance. Constant
/// genes are only centred. Input and output are genes × samples.
pub fn standardize(x: &Matrix) -> Matrix {
    let n = x.cols() as f64;
    let mut out = x.clone();
    for j in 0..x.rows() {
        let row = out.row_mut(j);
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v -= mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        if var > 0.0 {
            let sd = sqrt(var);
            row.iter_mut().for_each(|v| *v /= sd);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixtureFit {
    pub k: usize,
    pub lambda: f64,
    pub pi: Vec<f64>,
    /// Genes × clusters means on the standardised scale.
    pub mu: Matrix,
    pub sigma2: Vec<f64>,
    /// Samples × clusters.
    pub responsibilities: Matrix,
    pub penalized_loglik: f64,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    /// Number of means shrunk exactly to zero.
    pub n_zero: usize,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
}

impl GaussianMixtureFit {
    pub fn labels(&self) -> Vec<usize> {
        hard_labels(&self.responsibilities)
    }

    /// Genes with a non-zero mean in some cluster.
    pub fn selected_genes(&self) -> Vec<bool> {
        (0..self.mu.rows()).map(|j| self.mu.row(j).iter().any(|&m| m != 0.0)).collect()
    }

    /// `(K − 1) + K·G + G − #zeros`
    pub fn effective_params(&self) -> usize {
        let (g, k) = (self.mu.rows(), self.k);
        (k - 1) + k * g + g - self.n_zero
    }
}

/// Standardised data prepared for repeated fits.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    /// Samples × genes, standardised per gene.
    x: Matrix,
    /// Samples × genes, unstandardised, for the K-means start.
    points: Matrix,
}

struct Params {
    pi: Vec<f64>,
    mu: Matrix,
    sigma2: Vec<f64>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

impl GaussianMixture {
    /// `x` is genes × samples (log-CPM).
    pub fn new(x: &Matrix) -> Result<Self> {
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("log-CPM input must be finite"));
        }
        if x.rows() == 0 || x.cols() < 2 {
            return Err(Error::validation("need at least one gene and two samples"));
        }
        Ok(Self {
            x: standardize(x).transpose(),
            points: x.transpose(),
        })
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_genes(&self) -> usize {
        self.x.cols()
    }

    /// Standardised data, samples × genes.
    pub fn standardized(&self) -> &Matrix {
        &self.x
    }

    fn e_step(&self, p: &Params) -> (Matrix, f64) {
        let (n, g, k) = (self.n_samples(), self.n_genes(), p.pi.len());
        let log_norm: f64 = -0.5 * p.sigma2.iter().map(|&s| LN_2PI + ln(s)).sum::<f64>();
        let inv: Vec<f64> = p.sigma2.iter().map(|&s| 0.5 / s).collect();
        let mut z = Matrix::zeros(n, k);
        let mut loglik = 0.0;
        let mut row = vec![0.0; k];
        for i in 0..n {
            let xi = self.x.row(i);
            for (c, v) in row.iter_mut().enumerate() {
                let mut q = 0.0;
                for j in 0..g {
                    let d = xi[j] - p.mu[(j, c)];
                    q += d * d * inv[j];
                }
                *v = if p.pi[c] > 0.0 { ln(p.pi[c]) + log_norm - q } else { f64::NEG_INFINITY };
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (c, v) in row.iter().enumerate() {
                let e = exp(v - max);
                z[(i, c)] = e;
                total += e;
            }
            z.row_mut(i).iter_mut().for_each(|v| *v /= total);
            loglik += max + ln(total);
        }
        (z, loglik)
    }

    /// Means by soft-thresholding with the current variances, then variances
    /// given the new means.
    fn m_step(&self, z: &Matrix, lambda: f64, sigma2: &[f64]) -> Params {
        let (n, g, k) = (self.n_samples(), self.n_genes(), z.cols());
        let nk = z.column_sums();
        let mut mu = Matrix::zeros(g, k);
        for c in 0..k {
            if nk[c] <= 0.0 {
                continue;
            }
            for j in 0..g {
                let m: f64 = (0..n).map(|i| z[(i, c)] * self.x[(i, j)]).sum::<f64>() / nk[c];
                mu[(j, c)] = soft_threshold(m, lambda * sigma2[j] / nk[c]);
            }
        }
        let sigma2 = (0..g)
            .map(|j| {
                let ss: f64 = (0..n)
                    .map(|i| (0..k).map(|c| z[(i, c)] * sq(self.x[(i, j)] - mu[(j, c)])).sum::<f64>())
                    .sum();
                (ss / n as f64).max(SIGMA2_FLOOR)
            })
            .collect();
        Params { pi: m_step_pi(z), mu, sigma2 }
    }

    fn run(&self, cfg: &FitConfig, mut p: Params) -> Option<GaussianMixtureFit> {
        let lambda = cfg.lambda;
        let penalty = |mu: &Matrix| lambda * mu.as_slice().iter().map(|m| m.abs()).sum::<f64>();
        let mut trace = Vec::new();
        let (mut converged, mut iterations) = (false, 0);
        let (mut z, mut loglik) = self.e_step(&p);
        loop {
            let pen = loglik - penalty(&p.mu);
            let prev = trace.last().copied();
            trace.push(pen);
            let n = z.rows() as f64;
            if z.column_sums().iter().any(|&s| s < 1e-6 * n) {
                return None;
            }
            if let Some(prev) = prev {
                if (pen - prev).abs() <= cfg.tol_em * f64::abs(prev) {
                    converged = true;
                    break;
                }
            }
            if iterations >= cfg.max_em_iter {
                break;
            }
            p = self.m_step(&z, lambda, &p.sigma2);
            iterations += 1;
            (z, loglik) = self.e_step(&p);
        }
        Some(GaussianMixtureFit {
            k: cfg.k,
            lambda,
            n_zero: p.mu.as_slice().iter().filter(|&&m| m == 0.0).count(),
            pi: p.pi,
            mu: p.mu,
            sigma2: p.sigma2,
            responsibilities: z,
            penalized_loglik: *trace.last().expect("trace has an entry"),
            loglik,
            loglik_trace: trace,
            converged,
            iterations,
            restarts_used: 1,
        })
    }

    fn from_labels(&self, labels: &[usize], k: usize, lambda: f64) -> Params {
        let z = Matrix::from_fn(labels.len(), k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
        self.m_step(&z, lambda, &vec![1.0; self.n_genes()])
    }

    /// Best-of-restarts fit; restarts start from K-means (or random)
    /// partitions with the same seeds as the NB mixture.
    pub fn fit(&self, cfg: &FitConfig) -> Result<GaussianMixtureFit> {
        cfg.validate(self.n_samples(), self.n_genes())?;
        if matches!(cfg.init, Init::WarmStart { .. }) {
            return Err(Error::validation("use fit_from to warm-start the Gaussian mixture"));
        }
        let mut best: Option<GaussianMixtureFit> = None;
        let mut used = 0;
        for r in 0..cfg.n_restarts {
            let seed = crate::sub_seed(cfg.seed, r as u64);
            let labels = match cfg.init {
                Init::KmeansLogCpm => kmeans(&self.points, cfg.k, cfg.kmeans_restarts, seed, None).labels,
                _ => crate::mixture::random_partition(self.n_samples(), cfg.k, seed),
            };
            let nk = (0..cfg.k).map(|c| labels.iter().filter(|&&l| l == c).count());
            if nk.into_iter().any(|c| c == 0) {
                continue;
            }
            if let Some(fit) = self.run(cfg, self.from_labels(&labels, cfg.k, cfg.lambda)) {
                used += 1;
                if best.as_ref().is_none_or(|b| fit.penalized_loglik > b.penalized_loglik) {
                    best = Some(fit);
                }
            }
        }
        let mut best = best.ok_or(Error::AllRestartsDegenerate(cfg.n_restarts))?;
        best.restarts_used = used;
        Ok(best)
    }

    /// Single EM run from a previous fit's parameters.
    pub fn fit_from(&self, cfg: &FitConfig, start: &GaussianMixtureFit) -> Result<GaussianMixtureFit> {
        if start.mu.rows() != self.n_genes() || start.mu.cols() != cfg.k {
            return Err(Error::validation("warm start has the wrong shape"));
        }
        let p = Params {
            pi: start.pi.clone(),
            mu: start.mu.clone(),
            sigma2: start.sigma2.clone(),
        };
        self.run(cfg, p).ok_or(Error::AllRestartsDegenerate(1))
    }
}

/// Penalised Gaussian mixture on genes × samples log-CPM.
pub fn fit_sgclust(x: &Matrix, cfg: &FitConfig) -> Result<GaussianMixtureFit> {
    GaussianMixture::new(x)?.fit(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn two_group_data(g: usize, informative: usize, shift: f64, seed: u64) -> Matrix {
        let mut rng = crate::Rng::seed_from_u64(seed);
        let n = 40;
        Matrix::from_fn(g, n, |j, i| {
            let e: f64 = rng.sample(StandardNormal);
            e + if j < informative && i >= n / 2 { shift } else { 0.0 }
        })
    }

    #[test]
    fn standardized_rows() {
        let x = two_group_data(5, 2, 3.0, 1);
        let s = standardize(&x);
        for j in 0..5 {
            let r = s.row(j);
            assert!(r.iter().sum::<f64>().abs() / 40.0 < 1e-10);
            assert!((r.iter().map(|v| v * v).sum::<f64>() / 40.0 - 1.0).abs() < 1e-10);
        }
    }

    /// Textbook two-component univariate EM with a shared variance.
    fn reference_em(x: &[f64]) -> [f64; 2] {
        let n = x.len() as f64;
        let (mut m, mut v, mut p) = ([-0.5, 0.5], 1.0, 0.5);
        for _ in 0..2000 {
            let r: Vec<f64> = x
                .iter()
                .map(|&xi| {
                    let a = p * (-(xi - m[0]).powi(2) / (2.0 * v)).exp();
                    let b = (1.0 - p) * (-(xi - m[1]).powi(2) / (2.0 * v)).exp();
                    a / (a + b)
                })
                .collect();
            let s0: f64 = r.iter().sum();
            m[0] = r.iter().zip(x).map(|(r, x)| r * x).sum::<f64>() / s0;
            m[1] = r.iter().zip(x).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / (n - s0);
            v = r.iter().zip(x).map(|(r, x)| r * (x - m[0]).powi(2) + (1.0 - r) * (x - m[1]).powi(2)).sum::<f64>() / n;
            p = s0 / n;
        }
        m
    }

    #[test]
    fn unpenalized_matches_reference_em() {
        let x = two_group_data(1, 1, 6.0, 2);
        let model = GaussianMixture::new(&x).unwrap();
        let fit = model.fit(&FitConfig::new(2, 0.0).with_seed(1)).unwrap();
        let want = reference_em(&model.standardized().column(0));
        let mut got = [fit.mu[(0, 0)], fit.mu[(0, 1)]];
        got.sort_by(f64::total_cmp);
        let mut want = want;
        want.sort_by(f64::total_cmp);
        for c in 0..2 {
            assert!((got[c] - want[c]).abs() < 0.05, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn huge_lambda_zeroes_all_means() {
        let x = two_group_data(6, 3, 3.0, 3);
        let fit = fit_sgclust(&x, &FitConfig::new(2, 1e9)).unwrap();
        assert_eq!(fit.n_zero, 12);
        assert!(fit.mu.as_slice().iter().all(|&m| m == 0.0));
        assert!(fit.sigma2.iter().all(|&s| s > 0.0));
    }

    #[test]
    fn mean_update_matches_grid() {
        let x = two_group_data(3, 2, 2.0, 4);
        let model = GaussianMixture::new(&x).unwrap();
        let mut rng = crate::Rng::seed_from_u64(5);
        let z = Matrix::from_fn(40, 2, |_, _| rng.random_range(0.0..1.0));
        let z = Matrix::from_fn(40, 2, |i, c| z[(i, c)] / (z[(i, 0)] + z[(i, 1)]));
        let sigma2 = [0.7, 1.3, 0.9];
        let lambda = 4.0;
        let p = model.m_step(&z, lambda, &sigma2);
        for j in 0..3 {
            for c in 0..2 {
                let q = |m: f64| {
                    (0..40).map(|i| -z[(i, c)] * (model.x[(i, j)] - m).powi(2) / (2.0 * sigma2[j])).sum::<f64>() - lambda * m.abs()
                };
                let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
                for t in 0..=100_000 {
                    let m = -3.0 + 6.0 * t as f64 / 100_000.0;
                    if q(m) > best {
                        best = q(m);
                        arg = m;
                    }
                }
                assert!((p.mu[(j, c)] - arg).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn em_is_monotone_and_recovers_groups() {
        let x = two_group_data(30, 5, 2.5, 6);
        let fit = fit_sgclust(&x, &FitConfig::new(2, 5.0).with_seed(2)).unwrap();
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-6 * w[0].abs());
        }
        let truth: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        assert!(crate::metrics::adjusted_rand_index(&fit.labels(), &truth).unwrap() > 0.85);
        let sel = fit.selected_genes();
        assert!(sel[..5].iter().all(|&s| s));
        for i in 0..40 {
            assert!((fit.responsibilities.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
