//! Negative-binomial kernel, the one-coordinate penalised IRLS solver and the
//! no-cluster null fit that yields the global log-means `β*`.

use alloc::vec::Vec;

use crate::counts::CountMatrix;
use crate::error::{Error, Result};
use crate::math::{exp, lgamma, ln, ln_1p, soft_threshold};
use crate::normalize::{NormalizationProfile, PHI_MAX, PHI_MIN};

/// Lower clamp on a fitted mean inside IRLS and the likelihood.
pub const MU_MIN: f64 = 1e-8;
pub const MU_MAX: f64 = 1e12;
/// Total IRLS weight below which a coordinate is treated as empty.
pub const WEIGHT_EPS: f64 = 1e-10;

/// Mean and dispersion of one negative-binomial law, `Var = μ + μ²/φ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbParams {
    mu: f64,
    phi: f64,
}

impl NbParams {
    pub fn new(mu: f64, phi: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(Error::validation("negative-binomial mean must be positive"));
        }
        if !(PHI_MIN..=PHI_MAX).contains(&phi) {
            return Err(Error::validation("dispersion outside [phi_min, phi_max]"));
        }
        Ok(Self { mu, phi })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }
}

/// `ln P(Y = y)` under NB(μ, φ).
pub fn nb_log_pmf(y: u64, p: NbParams) -> f64 {
    let y = y as f64;
    let (mu, phi) = (p.mu, p.phi);
    let l1p = ln_1p(mu / phi);
    let mut lp = lgamma(y + phi) - lgamma(phi) - lgamma(y + 1.0) - phi * l1p;
    if y > 0.0 {
        lp += y * (ln(mu) - ln(phi) - l1p);
    }
    lp
}

/// Clamped mean and its log for linear predictor `eta`.
#[inline]
pub(crate) fn clamped_mean(eta: f64) -> (f64, f64) {
    let mu = exp(eta);
    if mu < MU_MIN {
        (MU_MIN, ln(MU_MIN))
    } else if mu > MU_MAX {
        (MU_MAX, ln(MU_MAX))
    } else {
        (mu, eta)
    }
}

/// Inputs to a single `(gene, cluster)` coordinate problem
///
/// maximise `Σ_i z_i ℓ(y_i; s_i e^β) − λ|β − target|`.
pub(crate) struct Coordinate<'a> {
    pub y: &'a [f64],
    pub log_s: &'a [f64],
    /// Sample weights; `None` means all ones.
    pub z: Option<&'a [f64]>,
    pub phi: f64,
    pub target: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct CoordinateFit {
    pub beta: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Objective value plus the IRLS sums `A = Σ z w`, `B = Σ z w (τ − log s)`.
pub(crate) struct Linearization {
    pub objective: f64,
    pub a: f64,
    pub b: f64,
}

impl Coordinate<'_> {
    pub fn linearize(&self, beta: f64) -> Linearization {
        let (mut obj, mut a, mut b) = (0.0, 0.0, 0.0);
        let phi = self.phi;
        let ln_phi = ln(phi);
        for i in 0..self.y.len() {
            let z = self.z.map_or(1.0, |z| z[i]);
            if z == 0.0 {
                continue;
            }
            let y = self.y[i];
            let (mu, log_mu) = clamped_mean(self.log_s[i] + beta);
            let l1p = ln_1p(mu / phi);
            // y ln μ − (y + φ) ln(φ + μ), up to terms free of β
            obj += z * (y * (log_mu - ln_phi - l1p) - phi * l1p);
            let w = mu / (1.0 + mu / phi);
            a += z * w;
            b += z * w * (beta + (y - mu) / mu);
        }
        obj -= self.lambda * (beta - self.target).abs();
        Linearization { objective: obj, a, b }
    }

    /// Derivative of the unpenalised objective, `Σ_i z_i (y_i − μ_i) / (1 + μ_i/φ)`.
    pub fn gradient(&self, beta: f64) -> f64 {
        (0..self.y.len())
            .map(|i| {
                let z = self.z.map_or(1.0, |z| z[i]);
                let (mu, _) = clamped_mean(self.log_s[i] + beta);
                z * (self.y[i] - mu) / (1.0 + mu / self.phi)
            })
            .sum()
    }

    /// Weighted-lasso proximal step centred on the target.
    #[inline]
    pub fn prox(&self, lin: &Linearization) -> f64 {
        let unpenalized = lin.b / lin.a;
        let shift = soft_threshold(unpenalized - self.target, self.lambda / lin.a);
        if shift == 0.0 {
            self.target
        } else {
            self.target + shift
        }
    }

    /// Penalised IRLS from `start`, with step halving whenever the exact
    /// objective would decrease.
    pub fn solve(&self, start: f64, tol: f64, max_iter: usize) -> CoordinateFit {
        let mut beta = start;
        let mut lin = self.linearize(beta);
        let mut prev: Option<(f64, f64)> = None;
        for it in 1..=max_iter {
            if let Some((prev_beta, prev_obj)) = prev {
                let mut halvings = 0;
                while lin.objective < prev_obj - 1e-12 * prev_obj.abs() && halvings < 40 {
                    beta = 0.5 * (beta + prev_beta);
                    lin = self.linearize(beta);
                    halvings += 1;
                }
            }
            if !(lin.a > WEIGHT_EPS) || !lin.b.is_finite() {
                return CoordinateFit {
                    beta: self.target,
                    iterations: it,
                    converged: true,
                };
            }
            let next = self.prox(&lin);
            if (next - beta).abs() < tol {
                return CoordinateFit {
                    beta: next,
                    iterations: it,
                    converged: true,
                };
            }
            prev = Some((beta, lin.objective));
            beta = next;
            lin = self.linearize(beta);
        }
        CoordinateFit {
            beta,
            iterations: max_iter,
            converged: false,
        }
    }
}

/// Global (no-cluster) log-means.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalMeans {
    pub beta_star: Vec<f64>,
    pub converged: Vec<bool>,
    pub iterations: Vec<usize>,
}

pub const NULL_TOL: f64 = 1e-8;
pub const NULL_MAX_ITER: usize = 100;

/// One-parameter NB IRLS per gene with offsets `log s_i`.
pub fn fit_null_means(m: &CountMatrix, prof: &NormalizationProfile) -> Result<GlobalMeans> {
    prof.check_matches(m)?;
    let log_s: Vec<f64> = prof.size_factors.iter().map(|&s| ln(s)).collect();
    let sum_s: f64 = prof.size_factors.iter().sum();
    let g = m.n_genes();
    let mut out = GlobalMeans {
        beta_star: Vec::with_capacity(g),
        converged: Vec::with_capacity(g),
        iterations: Vec::with_capacity(g),
    };
    for j in 0..g {
        let y = m.row_f64(j);
        let total: f64 = y.iter().sum();
        if total == 0.0 {
            out.beta_star.push(ln(MU_MIN));
            out.converged.push(true);
            out.iterations.push(0);
            continue;
        }
        let start = ln((total + 0.5) / sum_s);
        let coord = Coordinate {
            y: &y,
            log_s: &log_s,
            z: None,
            phi: prof.dispersions[j],
            target: start,
            lambda: 0.0,
        };
        let fit = coord.solve(start, NULL_TOL, NULL_MAX_ITER);
        if fit.beta.is_finite() {
            out.beta_star.push(fit.beta);
            out.converged.push(fit.converged);
        } else {
            out.beta_star.push(ln(total / sum_s));
            out.converged.push(false);
        }
        out.iterations.push(fit.iterations);
    }
    Ok(out)
}

/// Count matrix prepared for repeated likelihood evaluation: counts as
/// `f64`, log size factors, dispersions and the β-free `lgamma` terms.
#[derive(Debug, Clone)]
pub struct NbData {
    pub(crate) n_genes: usize,
    pub(crate) n_samples: usize,
    pub(crate) y: Vec<f64>,
    pub(crate) log_s: Vec<f64>,
    pub(crate) phi: Vec<f64>,
    lconst: Vec<f64>,
}

impl NbData {
    pub fn new(m: &CountMatrix, prof: &NormalizationProfile) -> Result<Self> {
        prof.check_matches(m)?;
        let (g, n) = (m.n_genes(), m.n_samples());
        let y: Vec<f64> = m.as_slice().iter().map(|&v| v as f64).collect();
        let mut lconst = Vec::with_capacity(g * n);
        for j in 0..g {
            let phi = prof.dispersions[j];
            let lg_phi = lgamma(phi);
            for i in 0..n {
                let v = y[j * n + i];
                lconst.push(lgamma(v + phi) - lg_phi - lgamma(v + 1.0));
            }
        }
        Ok(Self {
            n_genes: g,
            n_samples: n,
            y,
            log_s: prof.size_factors.iter().map(|&s| ln(s)).collect(),
            phi: prof.dispersions.clone(),
            lconst,
        })
    }

    pub fn n_genes(&self) -> usize {
        self.n_genes
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    #[inline]
    pub(crate) fn row(&self, j: usize) -> &[f64] {
        &self.y[j * self.n_samples..(j + 1) * self.n_samples]
    }

    /// Adds `ln f(y_ij; s_i e^β)` for every sample `i` into `out[i * stride]`.
    #[inline]
    pub(crate) fn accumulate_log_density(&self, j: usize, beta: f64, out: &mut [f64], stride: usize) {
        let n = self.n_samples;
        let phi = self.phi[j];
        let ln_phi = ln(phi);
        let y = self.row(j);
        let lc = &self.lconst[j * n..(j + 1) * n];
        for i in 0..n {
            let (mu, log_mu) = clamped_mean(self.log_s[i] + beta);
            let l1p = ln_1p(mu / phi);
            let mut v = lc[i] - phi * l1p;
            if y[i] > 0.0 {
                v += y[i] * (log_mu - ln_phi - l1p);
            }
            out[i * stride] += v;
        }
    }

    pub(crate) fn coordinate<'a>(&'a self, j: usize, z: Option<&'a [f64]>, target: f64, lambda: f64) -> Coordinate<'a> {
        Coordinate {
            y: self.row(j),
            log_s: &self.log_s,
            z,
            phi: self.phi[j],
            target,
            lambda,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normalize::log_cpm;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};

    fn p(mu: f64, phi: f64) -> NbParams {
        NbParams::new(mu, phi).unwrap()
    }

    #[test]
    fn zero_count_closed_form() {
        assert!((nb_log_pmf(0, p(1.0, 1.0)) - ln(0.5)).abs() < 1e-12);
    }

    #[test]
    fn pmf_normalizes() {
        let total: f64 = (0..=500).map(|y| exp(nb_log_pmf(y, p(5.0, 2.0)))).sum();
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    #[test]
    fn large_dispersion_approaches_poisson() {
        let mut pois_log = -5.0f64; // ln P(0) for Poisson(5)
        let (mut tv, mut worst) = (0.0, 0.0f64);
        for y in 0..=50u64 {
            if y > 0 {
                pois_log += ln(5.0) - ln(y as f64);
            }
            let d = (exp(nb_log_pmf(y, p(5.0, PHI_MAX))) - exp(pois_log)).abs();
            tv += 0.5 * d;
            worst = worst.max(d);
        }
        // scipy.stats reference: TV = 1.2206389148e-3, max |Δ| = 4.37e-4
        assert!((tv - 1.220_638_914_8e-3).abs() < 1e-10, "{tv}");
        assert!(worst < 1e-3);
    }

    #[test]
    fn params_validated() {
        assert!(NbParams::new(0.0, 1.0).is_err());
        assert!(NbParams::new(1.0, 5000.0).is_err());
    }

    #[test]
    fn log_pmf_concave_in_log_mean() {
        let mut rng = crate::Rng::seed_from_u64(7);
        for _ in 0..20 {
            let y = rng.random_range(1..200u64);
            let phi = rng.random_range(0.1..50.0);
            let t: f64 = rng.random_range(-2.0..6.0);
            let h = 1e-3;
            let f = |t: f64| nb_log_pmf(y, p(exp(t), phi));
            let d2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
            assert!(d2 <= 1e-6, "y={y} phi={phi} t={t} d2={d2}");
        }
    }

    fn profile(s: Vec<f64>, phi: Vec<f64>, m: &CountMatrix) -> NormalizationProfile {
        NormalizationProfile::new(s, phi, log_cpm(m)).unwrap()
    }

    #[test]
    fn constant_counts_mean_matching() {
        let m = CountMatrix::from_counts(1, 4, vec![4, 4, 4, 4]).unwrap();
        let gm = fit_null_means(&m, &profile(vec![1.0; 4], vec![3.0], &m)).unwrap();
        assert!((gm.beta_star[0] - ln(4.0)).abs() < 1e-6);
        assert!(gm.converged[0]);
    }

    #[test]
    fn offset_shifts_mean() {
        let m = CountMatrix::from_counts(1, 2, vec![8, 8]).unwrap();
        let gm = fit_null_means(&m, &profile(vec![2.0, 2.0], vec![3.0], &m)).unwrap();
        assert!((gm.beta_star[0] - ln(4.0)).abs() < 1e-6);
    }

    #[test]
    fn all_zero_gene_gets_floor() {
        let m = CountMatrix::from_counts(2, 2, vec![0, 0, 3, 5]).unwrap();
        let gm = fit_null_means(&m, &profile(vec![1.0, 1.0], vec![2.0, 2.0], &m)).unwrap();
        assert_eq!(gm.beta_star[0], ln(MU_MIN));
    }

    /// Brute-force maximiser of the null log-likelihood over a β grid.
    fn grid_argmax(y: &[u64], s: &[f64], phi: f64) -> f64 {
        let (mut best, mut arg) = (f64::NEG_INFINITY, 0.0);
        let steps = 200_000;
        for t in 0..=steps {
            let b = -5.0 + 20.0 * t as f64 / steps as f64;
            let ll: f64 = y
                .iter()
                .zip(s)
                .map(|(&y, &s)| nb_log_pmf(y, NbParams { mu: s * exp(b), phi }))
                .sum();
            if ll > best {
                best = ll;
                arg = b;
            }
        }
        arg
    }

    #[test]
    fn null_fit_matches_grid_search() {
        let mut rng = crate::Rng::seed_from_u64(11);
        let n = 8;
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.6..1.6)).collect();
        for _ in 0..10 {
            let y: Vec<u64> = (0..n).map(|_| rng.random_range(0..300u64)).collect();
            let phi = rng.random_range(0.5..20.0);
            let m = CountMatrix::from_counts(1, n, y.clone()).unwrap();
            let gm = fit_null_means(&m, &profile(s.clone(), vec![phi], &m)).unwrap();
            let want = grid_argmax(&y, &s, phi);
            assert!((gm.beta_star[0] - want).abs() < 2e-4, "{} vs {want}", gm.beta_star[0]);
        }
    }

    #[test]
    fn size_factor_equivariance() {
        let mut rng = crate::Rng::seed_from_u64(3);
        let (g, n) = (20, 6);
        let counts: Vec<u64> = (0..g * n).map(|_| rng.random_range(0..500u64)).collect();
        let m = CountMatrix::from_counts(g, n, counts).unwrap();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let phi: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..30.0)).collect();
        let c = 3.7;
        let a = fit_null_means(&m, &profile(s.clone(), phi.clone(), &m)).unwrap();
        let b = fit_null_means(&m, &profile(s.iter().map(|v| v * c).collect(), phi, &m)).unwrap();
        for j in 0..g {
            assert!((a.beta_star[j] - ln(c) - b.beta_star[j]).abs() < 1e-8);
            assert!(a.iterations[j] <= 50);
        }
    }

    #[test]
    fn prepared_density_matches_pmf() {
        let m = CountMatrix::from_counts(1, 3, vec![0, 7, 40]).unwrap();
        let prof = profile(vec![0.5, 1.0, 2.0], vec![1.7], &m);
        let data = NbData::new(&m, &prof).unwrap();
        let mut out = vec![0.0; 3];
        data.accumulate_log_density(0, 1.3, &mut out, 1);
        let want: Vec<f64> = (0..3)
            .map(|i| nb_log_pmf(m.get(0, i), p(prof.size_factors[i] * exp(1.3), 1.7)))
            .collect();
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn prox_matches_weighted_lasso_grid(
            z in proptest::collection::vec(0.05f64..1.0, 3..12),
            w in proptest::collection::vec(0.1f64..50.0, 12),
            tau in proptest::collection::vec(-3.0f64..6.0, 12),
            log_s in proptest::collection::vec(-0.5f64..0.5, 12),
            lambda in 0.0f64..40.0,
            target in -2.0f64..5.0,
        ) {
            let n = z.len();
            let a: f64 = (0..n).map(|i| z[i] * w[i]).sum();
            let b: f64 = (0..n).map(|i| z[i] * w[i] * (tau[i] - log_s[i])).sum();
            let coord = Coordinate { y: &[], log_s: &[], z: None, phi: 1.0, target, lambda };
            let got = coord.prox(&Linearization { objective: 0.0, a, b });
            let obj = |beta: f64| {
                let q: f64 = (0..n).map(|i| z[i] * w[i] * (tau[i] - log_s[i] - beta).powi(2)).sum();
                0.5 * q + lambda * (beta - target).abs()
            };
            let (mut best, mut arg) = (f64::INFINITY, 0.0);
            let steps = 200_000;
            for t in 0..=steps {
                let beta = -6.0 + 16.0 * t as f64 / steps as f64;
                let v = obj(beta);
                if v < best {
                    best = v;
                    arg = beta;
                }
            }
            proptest::prop_assert!((got - arg).abs() < 1e-4, "{} vs {}", got, arg);
        }
    }
}
