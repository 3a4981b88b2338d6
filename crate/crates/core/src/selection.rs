//! Tuning-parameter selection by BIC along warm-started λ paths.

use alloc::vec::Vec;

use crate::baselines::{GaussianMixture, GaussianMixtureFit};
use crate::error::{Error, Result};
use crate::math::{exp, ln};
use crate::mixture::{FitConfig, Init, MixtureFit, NbMixture};

/// `(K − 1) + K·G − q`
pub fn effective_params(k: usize, g: usize, q: usize) -> usize {
    (k - 1) + k * g - q.min(k * g)
}

pub fn bic_value(loglik: f64, n: usize, d_e: usize) -> f64 {
    -2.0 * loglik + ln(n as f64) * d_e as f64
}

/// BIC of an NB mixture fit using the unpenalised log-likelihood.
pub fn bic(fit: &MixtureFit, n: usize) -> f64 {
    bic_value(fit.loglik, n, effective_params(fit.k, fit.n_genes(), fit.n_shrunk))
}

/// BIC of a Gaussian mixture fit; per-gene variances add `G` parameters.
pub fn bic_gaussian(fit: &GaussianMixtureFit, n: usize) -> f64 {
    bic_value(fit.loglik, n, fit.effective_params())
}

/// Per-λ summary of a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEntry {
    pub lambda: f64,
    pub penalized_loglik: f64,
    pub loglik: f64,
    /// Number of shrunk coordinates.
    pub q: usize,
    pub n_selected: usize,
    pub bic: f64,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct PathResult<F> {
    pub lambdas: Vec<f64>,
    /// `None` where the fit failed.
    pub entries: Vec<Option<PathEntry>>,
    pub fits: Vec<Option<F>>,
    /// Index of the smallest BIC; ties go to the larger λ.
    pub chosen_index: usize,
}

impl<F> PathResult<F> {
    pub fn chosen_fit(&self) -> &F {
        self.fits[self.chosen_index].as_ref().expect("chosen fit exists")
    }

    pub fn chosen_entry(&self) -> &PathEntry {
        self.entries[self.chosen_index].as_ref().expect("chosen entry exists")
    }
}

/// Index of the smallest BIC among successful entries, ties to the later one.
pub fn select_index(bics: &[Option<f64>]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, b) in bics.iter().enumerate() {
        if let Some(b) = b {
            if best.is_none_or(|j| *b <= bics[j].expect("selected entries have a value")) {
                best = Some(i);
            }
        }
    }
    best
}

fn check_grid(lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::validation("empty lambda grid"));
    }
    if lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
        return Err(Error::validation("lambdas must be finite and non-negative"));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::validation("lambda grid must be strictly increasing"));
    }
    Ok(())
}

/// Fits every λ in order; `fit_at` receives the last successful fit for warm
/// starting. Failed λ are excluded from selection.
pub fn run_path<F>(
    lambdas: &[f64],
    mut fit_at: impl FnMut(f64, Option<&F>) -> Result<F>,
    summarize: impl Fn(&F) -> PathEntry,
) -> Result<PathResult<F>> {
    check_grid(lambdas)?;
    let mut fits: Vec<Option<F>> = Vec::with_capacity(lambdas.len());
    let mut last_ok: Option<usize> = None;
    let mut first_err = None;
    for &lambda in lambdas {
        let prev = last_ok.and_then(|i| fits[i].as_ref());
        match fit_at(lambda, prev) {
            Ok(f) => {
                last_ok = Some(fits.len());
                fits.push(Some(f));
            }
            Err(e) => {
                first_err.get_or_insert(e);
                fits.push(None);
            }
        }
    }
    let entries: Vec<Option<PathEntry>> = fits.iter().map(|f| f.as_ref().map(&summarize)).collect();
    let bics: Vec<Option<f64>> = entries.iter().map(|e| e.as_ref().map(|e| e.bic)).collect();
    let Some(chosen_index) = select_index(&bics) else {
        return Err(first_err.unwrap_or(Error::Numeric("no lambda could be fitted".into())));
    };
    Ok(PathResult {
        lambdas: lambdas.to_vec(),
        entries,
        fits,
        chosen_index,
    })
}

pub fn summarize_nb(fit: &MixtureFit, n: usize) -> PathEntry {
    PathEntry {
        lambda: fit.lambda,
        penalized_loglik: fit.penalized_loglik,
        loglik: fit.loglik,
        q: fit.n_shrunk,
        n_selected: fit.n_selected(),
        bic: bic(fit, n),
        converged: fit.converged,
    }
}

pub fn summarize_gaussian(fit: &GaussianMixtureFit, n: usize) -> PathEntry {
    PathEntry {
        lambda: fit.lambda,
        penalized_loglik: fit.penalized_loglik,
        loglik: fit.loglik,
        q: fit.n_zero,
        n_selected: fit.selected_genes().iter().filter(|&&s| s).count(),
        bic: bic_gaussian(fit, n),
        converged: fit.converged,
    }
}

fn warm(cfg: &FitConfig, lambda: f64, prev: Option<&MixtureFit>) -> FitConfig {
    let mut c = cfg.clone();
    c.lambda = lambda;
    if let Some(p) = prev {
        c.init = Init::WarmStart {
            beta: p.beta.clone(),
            pi: p.pi.clone(),
        };
    }
    c
}

/// NB mixture path; the first λ uses `cfg.init`, later ones warm-start from
/// the previous solution.
pub fn run_lambda_path(model: &NbMixture, lambdas: &[f64], cfg: &FitConfig) -> Result<PathResult<MixtureFit>> {
    let n = model.n_samples();
    run_path(lambdas, |l, prev| model.fit(&warm(cfg, l, prev)), |f| summarize_nb(f, n))
}

/// Gaussian mixture path with the same warm-start chain.
pub fn run_lambda_path_gaussian(
    model: &GaussianMixture,
    lambdas: &[f64],
    cfg: &FitConfig,
    first: Option<&GaussianMixtureFit>,
) -> Result<PathResult<GaussianMixtureFit>> {
    let n = model.n_samples();
    run_path(
        lambdas,
        |l, prev| {
            let mut c = cfg.clone();
            c.lambda = l;
            match prev.or(first) {
                Some(p) => model.fit_from(&c, p),
                None => model.fit(&c),
            }
        },
        |f| summarize_gaussian(f, n),
    )
}

/// `len` log-spaced values from `lambda_max / ratio` to `lambda_max`.
pub fn log_grid(lambda_max: f64, ratio: f64, len: usize) -> Result<Vec<f64>> {
    if !(lambda_max > 0.0 && lambda_max.is_finite()) || !(ratio > 1.0) || len == 0 {
        return Err(Error::validation("log grid needs lambda_max > 0, ratio > 1 and len >= 1"));
    }
    if len == 1 {
        return Ok(alloc::vec![lambda_max]);
    }
    let lo = ln(lambda_max / ratio);
    let hi = ln(lambda_max);
    let mut grid: Vec<f64> = (0..len).map(|t| exp(lo + (hi - lo) * t as f64 / (len - 1) as f64)).collect();
    grid[len - 1] = lambda_max;
    Ok(grid)
}

pub const DEFAULT_GRID_LEN: usize = 16;
pub const DEFAULT_GRID_RATIO: f64 = 1000.0;

/// Smallest λ (up to the search resolution) for which `fully_shrunk` holds,
/// given an upper bound `lambda_a` where it is known to hold.
fn search_lambda_max(lambda_a: f64, mut fully_shrunk: impl FnMut(f64) -> Result<bool>) -> Result<f64> {
    let mut hi = lambda_a;
    let mut lo = None;
    let mut l = lambda_a / 2.0;
    for _ in 0..12 {
        if fully_shrunk(l)? {
            hi = l;
            l /= 2.0;
        } else {
            lo = Some(l);
            break;
        }
    }
    let Some(mut lo) = lo else {
        return Ok(hi);
    };
    for _ in 0..3 {
        let mid = crate::math::sqrt(lo * hi);
        if fully_shrunk(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// λ where every cluster mean is shrunk, found from an unpenalised pilot fit.
#[derive(Debug, Clone)]
pub struct LambdaMax<F> {
    pub lambda_max: f64,
    /// Threshold at which one M-step from the pilot shrinks everything.
    pub lambda_analytic: f64,
    pub pilot: F,
}

pub fn lambda_max_nb(model: &NbMixture, cfg: &FitConfig) -> Result<LambdaMax<MixtureFit>> {
    let mut c = cfg.clone();
    c.lambda = 0.0;
    let pilot = model.fit(&c)?;
    let data = model.data();
    let z = &pilot.responsibilities;
    let mut lambda_a: f64 = 0.0;
    for j in 0..model.n_genes() {
        let b = model.beta_star()[j];
        for k in 0..cfg.k {
            let zk = z.column(k);
            let coord = data.coordinate(j, Some(&zk), b, 0.0);
            lambda_a = lambda_a.max(coord.gradient(b).abs());
        }
    }
    if !(lambda_a > 0.0) {
        return Err(Error::Degenerate("the pilot fit is already fully shrunk".into()));
    }
    lambda_a *= 1.0 + 1e-9;
    let kg = cfg.k * model.n_genes();
    let lambda_max = search_lambda_max(lambda_a, |l| match model.fit(&warm(&c, l, Some(&pilot))) {
        Ok(f) => Ok(f.n_shrunk == kg),
        Err(Error::AllRestartsDegenerate(_)) => Ok(false),
        Err(e) => Err(e),
    })?;
    Ok(LambdaMax {
        lambda_max,
        lambda_analytic: lambda_a,
        pilot,
    })
}

pub fn lambda_max_gaussian(model: &GaussianMixture, cfg: &FitConfig) -> Result<LambdaMax<GaussianMixtureFit>> {
    let mut c = cfg.clone();
    c.lambda = 0.0;
    let pilot = model.fit(&c)?;
    let x = model.standardized();
    let z = &pilot.responsibilities;
    let mut lambda_a: f64 = 0.0;
    for j in 0..model.n_genes() {
        for k in 0..cfg.k {
            let s: f64 = (0..model.n_samples()).map(|i| z[(i, k)] * x[(i, j)]).sum();
            lambda_a = lambda_a.max(s.abs() / pilot.sigma2[j]);
        }
    }
    if !(lambda_a > 0.0) {
        return Err(Error::Degenerate("the pilot fit is already fully shrunk".into()));
    }
    lambda_a *= 1.0 + 1e-9;
    let kg = cfg.k * model.n_genes();
    let lambda_max = search_lambda_max(lambda_a, |l| {
        let mut c = c.clone();
        c.lambda = l;
        match model.fit_from(&c, &pilot) {
            Ok(f) => Ok(f.n_zero == kg),
            Err(Error::AllRestartsDegenerate(_)) => Ok(false),
            Err(e) => Err(e),
        }
    })?;
    Ok(LambdaMax {
        lambda_max,
        lambda_analytic: lambda_a,
        pilot,
    })
}

/// Default BIC path for the NB mixture: pilot, λ_max search, 16-point grid.
pub fn select_lambda_nb(model: &NbMixture, cfg: &FitConfig) -> Result<PathResult<MixtureFit>> {
    let lm = lambda_max_nb(model, cfg)?;
    let grid = log_grid(lm.lambda_max, DEFAULT_GRID_RATIO, DEFAULT_GRID_LEN)?;
    let mut c = cfg.clone();
    c.init = Init::WarmStart {
        beta: lm.pilot.beta.clone(),
        pi: lm.pilot.pi.clone(),
    };
    run_lambda_path(model, &grid, &c)
}

pub fn select_lambda_gaussian(model: &GaussianMixture, cfg: &FitConfig) -> Result<PathResult<GaussianMixtureFit>> {
    let lm = lambda_max_gaussian(model, cfg)?;
    let grid = log_grid(lm.lambda_max, DEFAULT_GRID_RATIO, DEFAULT_GRID_LEN)?;
    run_lambda_path_gaussian(model, &grid, cfg, Some(&lm.pilot))
}

/// `max_k |β_jk − β*_j|`
pub fn gene_scores_nb(fit: &MixtureFit) -> Vec<f64> {
    (0..fit.n_genes())
        .map(|j| fit.beta.row(j).iter().map(|b| (b - fit.beta_star[j]).abs()).fold(0.0, f64::max))
        .collect()
}

/// `max_k |μ_jk|`
pub fn gene_scores_gaussian(fit: &GaussianMixtureFit) -> Vec<f64> {
    (0..fit.mu.rows())
        .map(|j| fit.mu.row(j).iter().map(|m| m.abs()).fold(0.0, f64::max))
        .collect()
}
