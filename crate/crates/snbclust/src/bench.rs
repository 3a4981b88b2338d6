//! Replicated simulation studies comparing snbClust with the Gaussian
//! baselines. Replicates run in parallel; results are ordered by replicate.

use std::time::Instant;

use rayon::prelude::*;
use snbclust_core::baselines::{default_s_grid, fit_skmeans, gap_statistic_s, GaussianMixture, SkmeansConfig};
use snbclust_core::metrics::{adjusted_rand_index, roc_auc};
use snbclust_core::mixture::{map_labels, NbMixture};
use snbclust_core::nb::fit_null_means;
use snbclust_core::normalize::SizeFactorMethod;
use snbclust_core::selection::{gene_scores_gaussian, gene_scores_nb, select_lambda_gaussian, select_lambda_nb};
use snbclust_core::simulate::{generate, EmpiricalMeanDist, Scheme, SimulatedDataset, SimulationConfig};
use snbclust_core::{sub_seed, FitConfig, NormalizationProfile, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    SnbClust,
    SgClust,
    SKmeans,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SnbClust, Method::SgClust, Method::SKmeans];

    pub fn parse(name: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(name))
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::SnbClust => "snbClust",
            Method::SgClust => "sgClust",
            Method::SKmeans => "sKmeans",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub methods: Vec<Method>,
    pub n_restarts: usize,
    /// Permuted data sets for the sparse K-means gap statistic.
    pub gap_permutations: usize,
    pub s_grid_len: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            n_restarts: 10,
            gap_permutations: 10,
            s_grid_len: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodResult {
    pub method: Method,
    pub ari: f64,
    /// Gene-selection AUC; absent when every gene is informative.
    pub auc: Option<f64>,
    pub n_selected: usize,
    /// Chosen λ (mixtures) or sparsity bound (sparse K-means).
    pub tuning: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub seed: u64,
    /// Empty when the replicate failed.
    pub methods: Vec<MethodResult>,
    pub error: Option<String>,
}

impl ReplicateResult {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == m)
    }
}

fn auc_of(ds: &SimulatedDataset, scores: &[f64]) -> Result<Option<f64>> {
    if ds.informative_mask.iter().all(|&b| b) {
        return Ok(None);
    }
    roc_auc(scores, &ds.informative_mask).map(Some)
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let v = f()?;
    Ok((v, t.elapsed().as_secs_f64()))
}

/// Fits the requested methods to one simulated data set.
pub fn evaluate_dataset(ds: &SimulatedDataset, opts: &BenchOptions, seed: u64) -> Result<Vec<MethodResult>> {
    let m = &ds.counts;
    let mut prof = NormalizationProfile::estimate(m, SizeFactorMethod::MedianOfRatios)?;
    if ds.config.lib_bounds == (1.0, 1.0) {
        // library sizes are equal by design
        prof = prof.with_size_factors(vec![1.0; m.n_samples()])?;
    }
    let mut cfg = FitConfig::new(ds.config.k, 0.0).with_seed(seed);
    cfg.n_restarts = opts.n_restarts;
    opts.methods
        .iter()
        .map(|&method| match method {
            Method::SnbClust => run_snbclust(ds, &prof, &cfg),
            Method::SgClust => run_sgclust(ds, &prof, &cfg),
            Method::SKmeans => run_skmeans(ds, &prof, opts, seed),
        })
        .collect()
}

fn selects(ds: &SimulatedDataset) -> bool {
    ds.config.scheme != Scheme::Sim1
}

fn run_snbclust(ds: &SimulatedDataset, prof: &NormalizationProfile, cfg: &FitConfig) -> Result<MethodResult> {
    let m = &ds.counts;
    let (fit, seconds) = timed(|| {
        let beta_star = fit_null_means(m, prof)?.beta_star;
        let model = NbMixture::new(m, prof, &beta_star)?;
        if selects(ds) {
            Ok(select_lambda_nb(&model, cfg)?.chosen_fit().clone())
        } else {
            model.fit(cfg)
        }
    })?;
    Ok(MethodResult {
        method: Method::SnbClust,
        ari: adjusted_rand_index(&map_labels(&fit), &ds.labels)?,
        auc: auc_of(ds, &gene_scores_nb(&fit))?,
        n_selected: fit.n_selected(),
        tuning: fit.lambda,
        seconds,
    })
}

fn run_sgclust(ds: &SimulatedDataset, prof: &NormalizationProfile, cfg: &FitConfig) -> Result<MethodResult> {
    let (fit, seconds) = timed(|| {
        let model = GaussianMixture::new(&prof.log_cpm)?;
        if selects(ds) {
            Ok(select_lambda_gaussian(&model, cfg)?.chosen_fit().clone())
        } else {
            model.fit(cfg)
        }
    })?;
    Ok(MethodResult {
        method: Method::SgClust,
        ari: adjusted_rand_index(&fit.labels(), &ds.labels)?,
        auc: auc_of(ds, &gene_scores_gaussian(&fit))?,
        n_selected: fit.selected_genes().iter().filter(|&&s| s).count(),
        tuning: fit.lambda,
        seconds,
    })
}

fn run_skmeans(ds: &SimulatedDataset, prof: &NormalizationProfile, opts: &BenchOptions, seed: u64) -> Result<MethodResult> {
    let (fit, seconds) = timed(|| {
        let cfg = SkmeansConfig {
            seed,
            ..SkmeansConfig::default()
        };
        let g = ds.counts.n_genes();
        if selects(ds) {
            let grid = default_s_grid(g, opts.s_grid_len);
            Ok(gap_statistic_s(&prof.log_cpm, ds.config.k, &grid, opts.gap_permutations, &cfg)?.fit)
        } else {
            fit_skmeans(&prof.log_cpm, ds.config.k, (g as f64).sqrt(), &cfg)
        }
    })?;
    Ok(MethodResult {
        method: Method::SKmeans,
        ari: adjusted_rand_index(&fit.labels, &ds.labels)?,
        auc: auc_of(ds, &fit.weights)?,
        n_selected: fit.weights.iter().filter(|&&w| w > 0.0).count(),
        tuning: fit.s,
        seconds,
    })
}

/// Generates and evaluates replicate `r` of a design.
/// A failure is recorded on the result rather than returned.
pub fn run_replicate(base: &SimulationConfig, dist: &EmpiricalMeanDist, opts: &BenchOptions, r: usize) -> ReplicateResult {
    let seed = sub_seed(base.seed, r as u64);
    let cfg = SimulationConfig { seed, ..base.clone() };
    let outcome = generate(&cfg, dist).and_then(|ds| evaluate_dataset(&ds, opts, sub_seed(seed, 1)));
    let (methods, error) = match outcome {
        Ok(m) => (m, None),
        Err(e) => (Vec::new(), Some(e.to_string())),
    };
    ReplicateResult {
        replicate: r,
        seed,
        methods,
        error,
    }
}

pub fn run_benchmark(base: &SimulationConfig, dist: &EmpiricalMeanDist, opts: &BenchOptions, replicates: usize) -> Vec<ReplicateResult> {
    (0..replicates)
        .into_par_iter()
        .map(|r| run_replicate(base, dist, opts, r))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    /// Replicates that completed.
    pub n: usize,
    pub mean_ari: f64,
    pub se_ari: f64,
    pub mean_auc: Option<f64>,
    pub se_auc: Option<f64>,
    pub mean_selected: f64,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

pub fn summarize(results: &[ReplicateResult], methods: &[Method]) -> Vec<MethodSummary> {
    methods
        .iter()
        .map(|&method| {
            let rs: Vec<&MethodResult> = results.iter().filter_map(|r| r.get(method)).collect();
            let aris: Vec<f64> = rs.iter().map(|r| r.ari).collect();
            let aucs: Vec<f64> = rs.iter().filter_map(|r| r.auc).collect();
            let (mean_ari, se_ari) = mean_se(&aris);
            let (mean_auc, se_auc) = if aucs.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_se(&aucs);
                (Some(m), Some(s))
            };
            MethodSummary {
                method,
                n: rs.len(),
                mean_ari,
                se_ari,
                mean_auc,
                se_auc,
                mean_selected: rs.iter().map(|r| r.n_selected as f64).sum::<f64>() / rs.len().max(1) as f64,
            }
        })
        .collect()
}
