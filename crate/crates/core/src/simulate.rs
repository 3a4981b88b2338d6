//! Synthetic RNA-seq count generators for three benchmark designs.
//!
//! All designs have three clusters and 150 informative genes in three
//! patterns of 50 genes, `δ = (−1,0,1)`, `(0,1,1)` and `(1,−1,0)`. Gene
//! baselines `μ_j` come from an empirical pool of mean counts, log2 effect
//! sizes `Δ_j` from a normal truncated below at `γ/2`, and counts are NB with
//! mean `a_i μ_j 2^{Δ_j δ_jk}`.
//!
//! * `Sim1`: 150 genes, all informative, equal library sizes.
//! * `Sim2`: 1000 genes, library-size factors `a_i ~ U(LB, UB)`.
//! * `Sim3`: like `Sim2`, with informative genes arranged in correlated
//!   modules whose log2 expression is multivariate normal per sample, with an
//!   inverse-Wishart correlation matrix per module and cluster.

use alloc::vec;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, ChiSquared, Distribution, Exp, Gamma, Poisson, StandardNormal};

use crate::counts::CountMatrix;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, spd_inverse};
use crate::math::{exp, exp2, floor, ln, log2, round, sqrt};
use crate::matrix::Matrix;

/// Sorted pool of positive baseline mean counts.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeanDist {
    pool: Vec<f64>,
    trimmed_fraction: f64,
}

impl EmpiricalMeanDist {
    /// Keeps the `floor((1 − trim)·m)` smallest of the `m` positive means.
    pub fn from_means(means: &[f64], trim: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&trim) {
            return Err(Error::validation("trim fraction must lie in [0, 1]"));
        }
        let mut pool: Vec<f64> = means.iter().copied().filter(|&m| m > 0.0 && m.is_finite()).collect();
        pool.sort_by(f64::total_cmp);
        let keep = floor((1.0 - trim) * pool.len() as f64 + 1e-9) as usize;
        pool.truncate(keep);
        if pool.is_empty() {
            return Err(Error::Empty("no mean counts remain after trimming".into()));
        }
        Ok(Self {
            pool,
            trimmed_fraction: trim,
        })
    }

    pub fn pool(&self) -> &[f64] {
        &self.pool
    }

    pub fn trimmed_fraction(&self) -> f64 {
        self.trimmed_fraction
    }

    /// Uniform draw from the pool.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.pool[rng.random_range(0..self.pool.len())]
    }
}

/// Pool built from the per-gene mean counts of a source matrix.
pub fn build_empirical_dist(source: &CountMatrix, trim: f64) -> Result<EmpiricalMeanDist> {
    let means: Vec<f64> = (0..source.n_genes()).map(|j| source.gene_mean(j)).collect();
    EmpiricalMeanDist::from_means(&means, trim)
}

pub const DEFAULT_TRIM: f64 = 0.30;

/// Log-normal stand-in for a real mean-count distribution: 10⁴ draws of
/// `exp(N(3, 1.2²))` kept when at least 5, top 30% removed.
pub fn default_surrogate_dist(seed: u64) -> EmpiricalMeanDist {
    let mut rng = crate::Rng::seed_from_u64(seed);
    let mut draws = Vec::with_capacity(10_000);
    while draws.len() < 10_000 {
        let z: f64 = rng.sample(StandardNormal);
        let v = exp(3.0 + 1.2 * z);
        if v >= 5.0 {
            draws.push(v);
        }
    }
    EmpiricalMeanDist::from_means(&draws, DEFAULT_TRIM).expect("surrogate pool is non-empty")
}

/// Normal(`mean`, `sd`) conditioned on `≥ lower`; `lower = −∞` disables the
/// truncation. Far-tail bounds use an exponential proposal.
pub fn sample_truncated_normal<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    let alpha = (lower - mean) / sd;
    if alpha == f64::NEG_INFINITY {
        let z: f64 = rng.sample(StandardNormal);
        return mean + sd * z;
    }
    if alpha < 0.5 {
        loop {
            let z: f64 = rng.sample(StandardNormal);
            if z >= alpha {
                return mean + sd * z;
            }
        }
    }
    let rate = 0.5 * (alpha + sqrt(alpha * alpha + 4.0));
    let proposal = Exp::new(rate).expect("positive rate");
    loop {
        let z = alpha + proposal.sample(rng);
        let u: f64 = rng.random();
        if u <= exp(-0.5 * (z - rate) * (z - rate)) {
            return mean + sd * z;
        }
    }
}

/// NB(μ, φ) draw as a gamma–Poisson mixture.
pub fn sample_nb<R: Rng + ?Sized>(mu: f64, phi: f64, rng: &mut R) -> u64 {
    if !(mu > 0.0) {
        return 0;
    }
    let rate = Gamma::new(phi, mu / phi).expect("valid gamma").sample(rng);
    if !(rate > 0.0) {
        return 0;
    }
    match Poisson::new(rate) {
        Ok(p) => p.sample(rng) as u64,
        Err(_) => round(rate) as u64,
    }
}

/// Inverse-Wishart(ψ, ν) draw rescaled to unit diagonal.
pub fn sample_inverse_wishart_correlation<R: Rng + ?Sized>(psi: &Matrix, df: f64, rng: &mut R) -> Result<Matrix> {
    let d = psi.rows();
    if !(df > (d as f64) - 1.0) {
        return Err(Error::validation("inverse-Wishart needs df > dimension - 1"));
    }
    let scale = spd_inverse(psi).ok_or_else(|| Error::validation("scale matrix is not positive definite"))?;
    let l = cholesky(&scale).expect("inverse of an SPD matrix is SPD");
    let mut a = Matrix::zeros(d, d);
    for i in 0..d {
        let chi: f64 = ChiSquared::new(df - i as f64).expect("positive df").sample(rng);
        a[(i, i)] = sqrt(chi);
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l.matmul(&a);
    let wishart = la.matmul(&la.transpose());
    let sigma = spd_inverse(&wishart).ok_or_else(|| Error::Numeric("singular Wishart draw".into()))?;
    Ok(Matrix::from_fn(d, d, |r, c| sigma[(r, c)] / sqrt(sigma[(r, r)] * sigma[(c, c)])))
}

/// Binomial thinning `y' ~ Bin(y, rate)`.
pub fn thin(m: &CountMatrix, rate: f64, seed: u64) -> Result<CountMatrix> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::validation("thinning rate must lie in [0, 1]"));
    }
    let mut rng = crate::Rng::seed_from_u64(seed);
    Ok(m.map_counts(|_, _, y| Binomial::new(y, rate).expect("valid binomial").sample(&mut rng)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Sim1,
    Sim2,
    Sim3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PhiSource {
    Constant(f64),
    /// Per-gene dispersions drawn uniformly from the pool.
    Empirical(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub n_genes: usize,
    pub n_per_cluster: usize,
    pub k: usize,
    pub gamma: f64,
    pub lib_bounds: (f64, f64),
    pub alpha: f64,
    pub n_modules: usize,
    pub module_size: usize,
    pub phi_source: PhiSource,
    pub seed: u64,
}

/// Genes per informative pattern.
pub const PATTERN_SIZE: usize = 50;
pub const PATTERNS: [[i8; 3]; 3] = [[-1, 0, 1], [0, 1, 1], [1, -1, 0]];
pub const N_INFORMATIVE: usize = PATTERN_SIZE * PATTERNS.len();
pub const DEFAULT_PHI: f64 = 2.0;
pub const WISHART_DF: f64 = 60.0;

impl SimulationConfig {
    pub fn sim1(gamma: f64, seed: u64) -> Self {
        Self {
            scheme: Scheme::Sim1,
            n_genes: N_INFORMATIVE,
            n_per_cluster: 15,
            k: 3,
            gamma,
            lib_bounds: (1.0, 1.0),
            alpha: 0.0,
            n_modules: 0,
            module_size: 0,
            phi_source: PhiSource::Constant(DEFAULT_PHI),
            seed,
        }
    }

    pub fn sim2(gamma: f64, lib_bounds: (f64, f64), seed: u64) -> Self {
        Self {
            scheme: Scheme::Sim2,
            n_genes: 1000,
            lib_bounds,
            ..Self::sim1(gamma, seed)
        }
    }

    pub fn sim3(alpha: f64, seed: u64) -> Self {
        Self {
            scheme: Scheme::Sim3,
            n_genes: 1000,
            gamma: 0.5,
            lib_bounds: (0.9, 1.1),
            alpha,
            n_modules: 15,
            module_size: 10,
            ..Self::sim1(0.5, seed)
        }
    }

    pub fn n_samples(&self) -> usize {
        self.k * self.n_per_cluster
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::validation(m));
        if self.k != PATTERNS[0].len() {
            return fail("the gene patterns are defined for three clusters");
        }
        if self.n_per_cluster == 0 {
            return fail("need at least one sample per cluster");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return fail("gamma must be positive");
        }
        let (lb, ub) = self.lib_bounds;
        if !(lb > 0.0 && ub >= lb && ub.is_finite()) {
            return fail("library bounds must satisfy 0 < LB <= UB");
        }
        match &self.phi_source {
            PhiSource::Constant(p) if !(*p > 0.0) => return fail("dispersion must be positive"),
            PhiSource::Empirical(v) if v.is_empty() || v.iter().any(|p| !(*p > 0.0)) => {
                return fail("dispersion pool must be non-empty and positive")
            }
            _ => {}
        }
        match self.scheme {
            Scheme::Sim1 => {
                if self.n_genes != N_INFORMATIVE || self.n_per_cluster != 15 || self.lib_bounds != (1.0, 1.0) {
                    return fail("sim1 fixes G = 150, 15 samples per cluster and unit library sizes");
                }
            }
            Scheme::Sim2 | Scheme::Sim3 => {
                if self.n_genes < N_INFORMATIVE {
                    return fail("need at least 150 genes");
                }
            }
        }
        if self.scheme == Scheme::Sim3 {
            if !(0.0..1.0).contains(&self.alpha) {
                return fail("alpha must lie in [0, 1)");
            }
            if self.module_size == 0 || self.n_modules % PATTERNS.len() != 0 {
                return fail("modules must split evenly over the three patterns");
            }
            if (self.n_modules / PATTERNS.len()) * self.module_size > PATTERN_SIZE {
                return fail("modules exceed the informative genes of a pattern");
            }
            if WISHART_DF <= (self.module_size as f64) - 1.0 {
                return fail("module too large for the inverse-Wishart degrees of freedom");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub counts: CountMatrix,
    /// 0-based cluster per sample.
    pub labels: Vec<usize>,
    pub informative_mask: Vec<bool>,
    /// Genes × clusters `log2 μ_j + Δ_j δ_jk`.
    pub true_beta: Matrix,
    pub library_factors: Vec<f64>,
    pub dispersions: Vec<f64>,
    pub config: SimulationConfig,
}

/// Pattern `δ_j·` of gene `j`.
pub fn pattern_of(j: usize) -> [i8; 3] {
    if j < N_INFORMATIVE {
        PATTERNS[j / PATTERN_SIZE]
    } else {
        [0, 0, 0]
    }
}

pub fn generate(cfg: &SimulationConfig, dist: &EmpiricalMeanDist) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let mut rng = crate::Rng::seed_from_u64(cfg.seed);
    let (g, k, n) = (cfg.n_genes, cfg.k, cfg.n_samples());
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.n_per_cluster).collect();
    let mu: Vec<f64> = (0..g).map(|_| dist.sample(&mut rng)).collect();
    let delta: Vec<f64> = (0..g)
        .map(|_| sample_truncated_normal(cfg.gamma, 1.0, cfg.gamma / 2.0, &mut rng))
        .collect();
    let phi: Vec<f64> = match &cfg.phi_source {
        PhiSource::Constant(p) => vec![*p; g],
        PhiSource::Empirical(pool) => (0..g).map(|_| pool[rng.random_range(0..pool.len())]).collect(),
    };
    let (lb, ub) = cfg.lib_bounds;
    let a: Vec<f64> = (0..n).map(|_| if ub > lb { rng.random_range(lb..ub) } else { lb }).collect();
    let true_beta = Matrix::from_fn(g, k, |j, c| log2(mu[j]) + delta[j] * f64::from(pattern_of(j)[c]));

    // log2 expression per (gene, sample); deterministic except in modules
    let mut log2_expr = Matrix::from_fn(g, n, |j, i| true_beta[(j, labels[i])]);
    if cfg.scheme == Scheme::Sim3 {
        let d = cfg.module_size;
        let psi = Matrix::from_fn(d, d, |r, c| if r == c { 1.0 } else { cfg.alpha });
        let per_pattern = cfg.n_modules / PATTERNS.len();
        for m in 0..cfg.n_modules {
            let start = (m / per_pattern) * PATTERN_SIZE + (m % per_pattern) * d;
            let chols: Vec<Matrix> = (0..k)
                .map(|_| {
                    let sigma = sample_inverse_wishart_correlation(&psi, WISHART_DF, &mut rng)?;
                    cholesky(&sigma).ok_or_else(|| Error::Numeric("module correlation not positive definite".into()))
                })
                .collect::<Result<_>>()?;
            for i in 0..n {
                let l = &chols[labels[i]];
                let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                for r in 0..d {
                    let noise: f64 = (0..=r).map(|c| l[(r, c)] * e[c]).sum();
                    log2_expr[(start + r, i)] += noise;
                }
            }
        }
    }
    let mut counts = Vec::with_capacity(g * n);
    for j in 0..g {
        for i in 0..n {
            counts.push(sample_nb(a[i] * exp2(log2_expr[(j, i)]), phi[j], &mut rng));
        }
    }
    Ok(SimulatedDataset {
        counts: CountMatrix::from_counts(g, n, counts)?,
        labels,
        informative_mask: (0..g).map(|j| j < N_INFORMATIVE).collect(),
        true_beta,
        library_factors: a,
        dispersions: phi,
        config: cfg.clone(),
    })
}

/// Natural-log cluster means implied by a dataset's generating parameters.
pub fn true_log_means(ds: &SimulatedDataset) -> Matrix {
    let ln2 = ln(2.0);
    Matrix::from_fn(ds.true_beta.rows(), ds.true_beta.cols(), |j, c| ds.true_beta[(j, c)] * ln2)
}
