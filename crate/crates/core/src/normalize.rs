//! Size factors, gene-wise dispersions and log-CPM.
//!
//! Size factors and dispersions are estimated once and then held fixed by
//! every model fit. Dispersions follow the `Var = μ + μ²/φ` convention, so a
//! large `φ` means close to Poisson.

use alloc::vec::Vec;

use crate::counts::CountMatrix;
use crate::error::{Error, Result};
use crate::math::{self, exp, ln};
use crate::matrix::Matrix;

pub const PHI_MIN: f64 = 0.01;
pub const PHI_MAX: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SizeFactorMethod {
    #[default]
    MedianOfRatios,
    LibraryTotal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SizeFactors {
    pub values: Vec<f64>,
    /// Method that actually produced `values`.
    pub method: SizeFactorMethod,
    /// Set when median-of-ratios had no all-positive gene and library totals
    /// were used instead.
    pub fell_back: bool,
}

fn rescale_to_unit_geomean(v: &mut [f64]) {
    let log_mean = v.iter().map(|&x| ln(x)).sum::<f64>() / v.len() as f64;
    let g = exp(log_mean);
    v.iter_mut().for_each(|x| *x /= g);
}

/// Per-sample size factors, rescaled to geometric mean 1.
pub fn estimate_size_factors(m: &CountMatrix, method: SizeFactorMethod) -> Result<SizeFactors> {
    let totals = m.column_sums();
    if let Some(i) = totals.iter().position(|&t| t == 0) {
        return Err(Error::validation(alloc::format!(
            "sample {:?} has no positive count",
            m.sample_ids()[i]
        )));
    }
    let library = |fell_back| {
        let mut values: Vec<f64> = totals.iter().map(|&t| t as f64).collect();
        rescale_to_unit_geomean(&mut values);
        SizeFactors {
            values,
            method: SizeFactorMethod::LibraryTotal,
            fell_back,
        }
    };
    if method == SizeFactorMethod::LibraryTotal {
        return Ok(library(false));
    }

    let n = m.n_samples();
    let mut ratios: Vec<Vec<f64>> = (0..n).map(|_| Vec::new()).collect();
    for j in 0..m.n_genes() {
        let row = m.row(j);
        if row.iter().any(|&y| y == 0) {
            continue;
        }
        let log_geo = row.iter().map(|&y| ln(y as f64)).sum::<f64>() / n as f64;
        for (r, &y) in ratios.iter_mut().zip(row) {
            r.push(exp(ln(y as f64) - log_geo));
        }
    }
    if ratios[0].is_empty() {
        return Ok(library(true));
    }
    let mut values: Vec<f64> = ratios.iter().map(|r| math::median(r)).collect();
    rescale_to_unit_geomean(&mut values);
    Ok(SizeFactors {
        values,
        method: SizeFactorMethod::MedianOfRatios,
        fell_back: false,
    })
}

/// Tuning of the moment-matching dispersion estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionOptions {
    /// Log-scale shrinkage weight toward the median raw estimate.
    pub shrinkage: f64,
    pub phi_min: f64,
    pub phi_max: f64,
    /// Floor on `v̂ - μ̂` in the moment estimator.
    pub epsilon: f64,
}

impl Default for DispersionOptions {
    fn default() -> Self {
        Self {
            shrinkage: 0.25,
            phi_min: PHI_MIN,
            phi_max: PHI_MAX,
            epsilon: 1e-8,
        }
    }
}

/// Raw moment estimate `μ̂² / max(v̂ − μ̂, ε)` on size-factor-adjusted counts.
fn raw_dispersion(row: &[u64], size_factors: &[f64], eps: f64) -> f64 {
    let adj: Vec<f64> = row.iter().zip(size_factors).map(|(&y, &s)| y as f64 / s).collect();
    let mu = math::mean(&adj);
    let var = math::sample_variance(&adj);
    mu * mu / (var - mu).max(eps)
}

/// Gene-wise dispersions: moment estimates shrunk on the log scale toward
/// their median, then clamped to `[phi_min, phi_max]`.
pub fn estimate_dispersions(m: &CountMatrix, size_factors: &[f64], opts: &DispersionOptions) -> Result<Vec<f64>> {
    if size_factors.len() != m.n_samples() {
        return Err(Error::validation("size factor length does not match sample count"));
    }
    if size_factors.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::validation("size factors must be positive"));
    }
    // an all-zero gene has no information; give it the floor before logs
    let log_raw: Vec<f64> = (0..m.n_genes())
        .map(|j| ln(raw_dispersion(m.row(j), size_factors, opts.epsilon).max(opts.phi_min)))
        .collect();
    let log_median = math::median(&log_raw);
    let w = opts.shrinkage;
    Ok(log_raw
        .iter()
        .map(|&l| exp((1.0 - w) * l + w * log_median).clamp(opts.phi_min, opts.phi_max))
        .collect())
}

/// `log10((y + 0.5) / (total + 1) · 10⁶)`.
pub fn log_cpm(m: &CountMatrix) -> Matrix {
    let totals = m.column_sums();
    Matrix::from_fn(m.n_genes(), m.n_samples(), |j, i| {
        math::log10((m.get(j, i) as f64 + 0.5) / (totals[i] as f64 + 1.0) * 1e6)
    })
}

/// Plug-in quantities shared by every fit on one count matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationProfile {
    pub size_factors: Vec<f64>,
    pub dispersions: Vec<f64>,
    /// Genes × samples log10-CPM, the input of the Gaussian baselines.
    pub log_cpm: Matrix,
}

impl NormalizationProfile {
    pub fn new(size_factors: Vec<f64>, dispersions: Vec<f64>, log_cpm: Matrix) -> Result<Self> {
        if size_factors.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::validation("size factors must be positive and finite"));
        }
        if dispersions.iter().any(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::validation("dispersions must be positive and finite"));
        }
        if log_cpm.rows() != dispersions.len() || log_cpm.cols() != size_factors.len() {
            return Err(Error::validation("profile dimensions disagree"));
        }
        Ok(Self {
            size_factors,
            dispersions,
            log_cpm,
        })
    }

    /// Estimate every component with default options.
    pub fn estimate(m: &CountMatrix, method: SizeFactorMethod) -> Result<Self> {
        let s = estimate_size_factors(m, method)?;
        let phi = estimate_dispersions(m, &s.values, &DispersionOptions::default())?;
        Self::new(s.values, phi, log_cpm(m))
    }

    /// Same profile with the dispersions replaced.
    pub fn with_dispersions(mut self, dispersions: Vec<f64>) -> Result<Self> {
        if dispersions.len() != self.dispersions.len() {
            return Err(Error::validation("dispersion length does not match gene count"));
        }
        self.dispersions = dispersions;
        Self::new(self.size_factors, self.dispersions, self.log_cpm)
    }

    pub fn with_size_factors(self, size_factors: Vec<f64>) -> Result<Self> {
        if size_factors.len() != self.size_factors.len() {
            return Err(Error::validation("size factor length does not match sample count"));
        }
        Self::new(size_factors, self.dispersions, self.log_cpm)
    }

    pub fn check_matches(&self, m: &CountMatrix) -> Result<()> {
        if self.size_factors.len() != m.n_samples() || self.dispersions.len() != m.n_genes() {
            return Err(Error::validation("normalization profile does not match count matrix"));
        }
        Ok(())
    }
}
