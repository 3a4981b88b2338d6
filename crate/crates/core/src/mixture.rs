//! Sparse negative-binomial mixture clustering.
//!
//! Samples are clustered with a `K`-component NB mixture whose cluster
//! log-means `β_jk` are pulled toward the gene's global log-mean `β*_j` by an
//! ℓ1 penalty `λ Σ |β_jk − β*_j|`. Fitting is EM: the E-step computes
//! responsibilities in log space, the M-step sets mixing proportions to the
//! responsibility column means and solves every `(j, k)` coordinate by
//! penalised IRLS. Coordinates are independent given the responsibilities.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};

use crate::counts::CountMatrix;
use crate::error::{Error, Result};
use crate::kmeans::kmeans;
use crate::math::{exp, ln};
use crate::matrix::Matrix;
use crate::nb::NbData;
use crate::normalize::NormalizationProfile;

/// How each restart is initialised.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Init {
    /// K-means on the samples' log-CPM profiles, then one M-step.
    #[default]
    KmeansLogCpm,
    /// Uniformly random hard partition with every cluster non-empty.
    RandomPartition,
    /// Start the EM at the given parameters (single run, no restarts).
    WarmStart { beta: Matrix, pi: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub k: usize,
    pub lambda: f64,
    /// Relative change of the penalised log-likelihood that stops the EM.
    pub tol_em: f64,
    pub max_em_iter: usize,
    pub tol_irls_inner: f64,
    pub max_irls_iter: usize,
    pub n_restarts: usize,
    pub seed: u64,
    pub init: Init,
    /// Lloyd restarts inside each K-means initialisation.
    pub kmeans_restarts: usize,
}

impl FitConfig {
    pub fn new(k: usize, lambda: f64) -> Self {
        Self {
            k,
            lambda,
            tol_em: 1e-6,
            max_em_iter: 200,
            tol_irls_inner: 1e-6,
            max_irls_iter: 50,
            n_restarts: 10,
            seed: 0,
            init: Init::KmeansLogCpm,
            kmeans_restarts: 20,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, n_samples: usize, n_genes: usize) -> Result<()> {
        if self.k == 0 || self.k > n_samples {
            return Err(Error::validation(alloc::format!(
                "K = {} must lie in 1..={n_samples}",
                self.k
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation("lambda must be a finite non-negative number"));
        }
        if !(self.tol_em > 0.0 && self.tol_irls_inner > 0.0) {
            return Err(Error::validation("tolerances must be positive"));
        }
        if self.n_restarts == 0 || self.max_em_iter == 0 || self.max_irls_iter == 0 {
            return Err(Error::validation("restart and iteration limits must be positive"));
        }
        if let Init::WarmStart { beta, pi } = &self.init {
            if beta.rows() != n_genes || beta.cols() != self.k || pi.len() != self.k {
                return Err(Error::validation("warm start has the wrong shape"));
            }
            let total: f64 = pi.iter().sum();
            if pi.iter().any(|&p| !(p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::validation("warm-start mixing proportions are not a simplex"));
            }
        }
        Ok(())
    }
}

/// Which penalty produced a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `λ Σ_jk |β_jk − β*_j|`
    Lasso,
    /// `Σ_j Σ_{k<k'} MCP(β_jk − β_jk'; λ, γ)`; genes whose cluster means all lie
    /// within `group_tol` of each other count as unselected.
    FusedMcp { gamma: f64, group_tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureFit {
    pub k: usize,
    pub lambda: f64,
    pub pi: Vec<f64>,
    /// Genes × clusters log-scale means.
    pub beta: Matrix,
    pub beta_star: Vec<f64>,
    /// Samples × clusters posterior probabilities.
    pub responsibilities: Matrix,
    pub penalized_loglik: f64,
    /// Observed-data mixture log-likelihood without the penalty.
    pub loglik: f64,
    /// Penalised log-likelihood after every E-step.
    pub loglik_trace: Vec<f64>,
    /// Number of `(j, k)` with `β_jk == β*_j` exactly.
    pub n_shrunk: usize,
    pub converged: bool,
    pub iterations: usize,
    pub restarts_used: usize,
    pub penalty: Penalty,
}

impl MixtureFit {
    pub fn n_genes(&self) -> usize {
        self.beta.rows()
    }

    pub fn n_selected(&self) -> usize {
        selected_genes(self).iter().filter(|&&s| s).count()
    }
}

/// Exact count of shrunk coordinates.
pub fn count_shrunk(beta: &Matrix, beta_star: &[f64]) -> usize {
    (0..beta.rows())
        .map(|j| beta.row(j).iter().filter(|&&b| b == beta_star[j]).count())
        .sum()
}

pub fn lasso_penalty(beta: &Matrix, beta_star: &[f64], lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let total: f64 = (0..beta.rows())
        .map(|j| beta.row(j).iter().map(|b| (b - beta_star[j]).abs()).sum::<f64>())
        .sum();
    lambda * total
}

#[derive(Debug, Clone, PartialEq)]
pub struct EStep {
    pub responsibilities: Matrix,
    /// Observed-data log-likelihood at the parameters used.
    pub loglik: f64,
}

/// Strategy for the β part of the M-step and its penalty.
pub(crate) trait BetaStep {
    fn update(&self, data: &NbData, z_columns: &[Vec<f64>], beta_star: &[f64], beta: &Matrix, cfg: &FitConfig) -> Matrix;
    fn penalty(&self, beta: &Matrix, beta_star: &[f64]) -> f64;
    fn kind(&self) -> Penalty;
}

pub(crate) struct LassoStep {
    pub lambda: f64,
}

impl BetaStep for LassoStep {
    fn update(&self, data: &NbData, z_columns: &[Vec<f64>], beta_star: &[f64], beta: &Matrix, cfg: &FitConfig) -> Matrix {
        let mut out = beta.clone();
        for j in 0..data.n_genes() {
            for (c, z) in z_columns.iter().enumerate() {
                let coord = data.coordinate(j, Some(z), beta_star[j], self.lambda);
                out[(j, c)] = coord.solve(beta[(j, c)], cfg.tol_irls_inner, cfg.max_irls_iter).beta;
            }
        }
        out
    }

    fn penalty(&self, beta: &Matrix, beta_star: &[f64]) -> f64 {
        lasso_penalty(beta, beta_star, self.lambda)
    }

    fn kind(&self) -> Penalty {
        Penalty::Lasso
    }
}

pub(crate) fn columns(z: &Matrix) -> Vec<Vec<f64>> {
    (0..z.cols()).map(|c| z.column(c)).collect()
}

pub(crate) fn e_step_data(data: &NbData, pi: &[f64], beta: &Matrix) -> Result<EStep> {
    let (g, n, k) = (data.n_genes(), data.n_samples(), pi.len());
    let mut acc = vec![0.0; n * k];
    let mut scratch = vec![0.0; n * k];
    for j in 0..g {
        let row = beta.row(j);
        for c in 0..k {
            // identical cluster means share one density evaluation
            if let Some(prev) = (0..c).find(|&p| row[p] == row[c]) {
                for i in 0..n {
                    acc[i * k + c] += scratch[i * k + prev];
                }
                continue;
            }
            for i in 0..n {
                scratch[i * k + c] = 0.0;
            }
            data.accumulate_log_density(j, row[c], &mut scratch[c..], k);
            for i in 0..n {
                acc[i * k + c] += scratch[i * k + c];
            }
        }
    }
    let log_pi: Vec<f64> = pi.iter().map(|&p| if p > 0.0 { ln(p) } else { f64::NEG_INFINITY }).collect();
    let mut z = Matrix::zeros(n, k);
    let mut loglik = 0.0;
    for i in 0..n {
        let row = &mut acc[i * k..(i + 1) * k];
        for (v, lp) in row.iter_mut().zip(&log_pi) {
            *v += lp;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numeric(alloc::format!("sample {i} has no finite component density")));
        }
        let mut total = 0.0;
        for (c, v) in row.iter().enumerate() {
            let e = exp(v - max);
            z[(i, c)] = e;
            total += e;
        }
        z.row_mut(i).iter_mut().for_each(|v| *v /= total);
        loglik += max + ln(total);
    }
    Ok(EStep {
        responsibilities: z,
        loglik,
    })
}

/// Column means of the responsibilities.
pub fn m_step_pi(responsibilities: &Matrix) -> Vec<f64> {
    let n = responsibilities.rows() as f64;
    responsibilities.column_sums().into_iter().map(|s| s / n).collect()
}

fn hard_responsibilities(labels: &[usize], k: usize) -> Matrix {
    Matrix::from_fn(labels.len(), k, |i, c| if labels[i] == c { 1.0 } else { 0.0 })
}

fn has_vanishing_cluster(z: &Matrix) -> bool {
    let n = z.rows() as f64;
    z.column_sums().iter().any(|&s| s < 1e-6 * n)
}

enum Start {
    Labels(Vec<usize>),
    Params { beta: Matrix, pi: Vec<f64> },
}

/// One EM run; `None` when a cluster vanishes.
fn run_em(data: &NbData, beta_star: &[f64], cfg: &FitConfig, step: &dyn BetaStep, start: Start) -> Result<Option<MixtureFit>> {
    let k = cfg.k;
    let (mut pi, mut beta) = match start {
        Start::Labels(labels) => {
            let z = hard_responsibilities(&labels, k);
            if has_vanishing_cluster(&z) {
                return Ok(None);
            }
            let broadcast = Matrix::from_fn(data.n_genes(), k, |j, _| beta_star[j]);
            (m_step_pi(&z), step.update(data, &columns(&z), beta_star, &broadcast, cfg))
        }
        Start::Params { beta, pi } => (pi, beta),
    };
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut est = e_step_data(data, &pi, &beta)?;
    loop {
        let pen = est.loglik - step.penalty(&beta, beta_star);
        if !pen.is_finite() {
            return Err(Error::Numeric("non-finite penalised log-likelihood".into()));
        }
        let prev = trace.last().copied();
        trace.push(pen);
        if has_vanishing_cluster(&est.responsibilities) {
            return Ok(None);
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
        pi = m_step_pi(&est.responsibilities);
        beta = step.update(data, &columns(&est.responsibilities), beta_star, &beta, cfg);
        iterations += 1;
        est = e_step_data(data, &pi, &beta)?;
    }
    let penalized_loglik = *trace.last().expect("trace has an entry");
    Ok(Some(MixtureFit {
        k,
        lambda: cfg.lambda,
        n_shrunk: count_shrunk(&beta, beta_star),
        pi,
        beta,
        beta_star: beta_star.to_vec(),
        responsibilities: est.responsibilities,
        penalized_loglik,
        loglik: est.loglik,
        loglik_trace: trace,
        converged,
        iterations,
        restarts_used: 1,
        penalty: step.kind(),
    }))
}

/// Random hard partition with every cluster represented.
pub(crate) fn random_partition(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    for (c, &i) in order.iter().take(k).enumerate() {
        labels[i] = c;
    }
    labels
}

/// A count matrix prepared for repeated mixture fits (paths, restarts).
#[derive(Debug, Clone)]
pub struct NbMixture {
    data: NbData,
    /// Samples × genes log-CPM for K-means initialisation.
    points: Matrix,
    beta_star: Vec<f64>,
}

impl NbMixture {
    pub fn new(m: &CountMatrix, prof: &NormalizationProfile, beta_star: &[f64]) -> Result<Self> {
        if beta_star.len() != m.n_genes() || beta_star.iter().any(|b| !b.is_finite()) {
            return Err(Error::validation("beta_star must be finite with one entry per gene"));
        }
        Ok(Self {
            data: NbData::new(m, prof)?,
            points: prof.log_cpm.transpose(),
            beta_star: beta_star.to_vec(),
        })
    }

    pub fn data(&self) -> &NbData {
        &self.data
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn n_samples(&self) -> usize {
        self.data.n_samples()
    }

    pub fn n_genes(&self) -> usize {
        self.data.n_genes()
    }

    pub fn e_step(&self, pi: &[f64], beta: &Matrix) -> Result<EStep> {
        if beta.rows() != self.n_genes() || beta.cols() != pi.len() {
            return Err(Error::validation("beta must be genes x K"));
        }
        e_step_data(&self.data, pi, beta)
    }

    pub fn m_step_beta(&self, responsibilities: &Matrix, beta_current: &Matrix, lambda: f64, cfg: &FitConfig) -> Result<Matrix> {
        if responsibilities.rows() != self.n_samples() || beta_current.rows() != self.n_genes() || beta_current.cols() != responsibilities.cols() {
            return Err(Error::validation("responsibilities / beta shapes disagree"));
        }
        if !(lambda >= 0.0) {
            return Err(Error::validation("lambda must be non-negative"));
        }
        Ok(LassoStep { lambda }.update(&self.data, &columns(responsibilities), &self.beta_star, beta_current, cfg))
    }

    pub fn fit(&self, cfg: &FitConfig) -> Result<MixtureFit> {
        self.fit_with(cfg, &LassoStep { lambda: cfg.lambda })
    }

    pub(crate) fn fit_with(&self, cfg: &FitConfig, step: &dyn BetaStep) -> Result<MixtureFit> {
        cfg.validate(self.n_samples(), self.n_genes())?;
        if let Init::WarmStart { beta, pi } = &cfg.init {
            let start = Start::Params {
                beta: beta.clone(),
                pi: pi.clone(),
            };
            return run_em(&self.data, &self.beta_star, cfg, step, start)?.ok_or(Error::AllRestartsDegenerate(1));
        }
        let mut best: Option<MixtureFit> = None;
        let mut used = 0;
        for r in 0..cfg.n_restarts {
            let seed = crate::sub_seed(cfg.seed, r as u64);
            let labels = match cfg.init {
                Init::KmeansLogCpm => kmeans(&self.points, cfg.k, cfg.kmeans_restarts, seed, None).labels,
                _ => random_partition(self.n_samples(), cfg.k, seed),
            };
            if let Some(fit) = run_em(&self.data, &self.beta_star, cfg, step, Start::Labels(labels))? {
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
}

/// Posterior responsibilities for the given parameters.
pub fn e_step(m: &CountMatrix, prof: &NormalizationProfile, pi: &[f64], beta: &Matrix) -> Result<EStep> {
    let data = NbData::new(m, prof)?;
    if beta.rows() != m.n_genes() || beta.cols() != pi.len() {
        return Err(Error::validation("beta must be genes x K"));
    }
    e_step_data(&data, pi, beta)
}

/// Penalised IRLS update of every cluster mean.
pub fn m_step_beta(
    m: &CountMatrix,
    prof: &NormalizationProfile,
    responsibilities: &Matrix,
    beta_star: &[f64],
    beta_current: &Matrix,
    lambda: f64,
    cfg: &FitConfig,
) -> Result<Matrix> {
    NbMixture::new(m, prof, beta_star)?.m_step_beta(responsibilities, beta_current, lambda, cfg)
}

/// Best-of-restarts penalised EM fit.
pub fn fit(m: &CountMatrix, prof: &NormalizationProfile, beta_star: &[f64], cfg: &FitConfig) -> Result<MixtureFit> {
    NbMixture::new(m, prof, beta_star)?.fit(cfg)
}

/// MAP cluster (0-based); ties go to the smaller index.
pub fn map_labels(fit: &MixtureFit) -> Vec<usize> {
    hard_labels(&fit.responsibilities)
}

pub fn hard_labels(z: &Matrix) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            let row = z.row(i);
            let mut arg = 0;
            for c in 1..row.len() {
                if row[c] > row[arg] {
                    arg = c;
                }
            }
            arg
        })
        .collect()
}

/// Genes with at least one informative cluster mean.
pub fn selected_genes(fit: &MixtureFit) -> Vec<bool> {
    match fit.penalty {
        Penalty::Lasso => (0..fit.n_genes())
            .map(|j| fit.beta.row(j).iter().any(|&b| b != fit.beta_star[j]))
            .collect(),
        Penalty::FusedMcp { group_tol, .. } => (0..fit.n_genes())
            .map(|j| {
                let row = fit.beta.row(j);
                row.iter().any(|a| row.iter().any(|b| (a - b).abs() > group_tol))
            })
            .collect(),
    }
}
