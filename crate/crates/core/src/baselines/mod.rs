//! Comparison methods on log-CPM input: a lasso-penalised Gaussian mixture
//! and sparse K-means.

mod sgclust;
mod skmeans;

pub use sgclust::{fit_sgclust, standardize, GaussianMixture, GaussianMixtureFit, SIGMA2_FLOOR};
pub use skmeans::{
    bcss, default_s_grid, fit_skmeans, gap_statistic_s, update_weights, GapResult, SkmeansConfig, SparseKmeansFit,
    WeightUpdate,
};
