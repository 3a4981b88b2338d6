//! Fused-MCP variant: pairwise minimax-concave shrinkage between the cluster
//! means of each gene.
//!
//! Each penalised IRLS step solves, per gene, the quadratic surrogate
//! `½ Σ_k A_k (β_k − t_k)² + Σ_{k<k'} P_γ(β_k − β_k'; λ)` by ADMM with one
//! consensus variable `η_kk'` per pair and scaled duals. The augmented weight
//! is `ρ · max(mean_k A_k, 1)` so that `ρ` is free of the data scale.

use alloc::vec;
use alloc::vec::Vec;

use crate::counts::CountMatrix;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve};
use crate::math::sign;
use crate::matrix::Matrix;
use crate::mixture::{columns, BetaStep, FitConfig, MixtureFit, NbMixture, Penalty};
use crate::nb::{Coordinate, NbData, WEIGHT_EPS};
use crate::normalize::NormalizationProfile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedConfig {
    pub lambda: f64,
    pub gamma_mcp: f64,
    pub rho_admm: f64,
    pub tol_admm: f64,
    pub max_admm_iter: usize,
    pub group_tol: f64,
}

impl FusedConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            gamma_mcp: 3.0,
            rho_admm: 1.0,
            tol_admm: 1e-6,
            max_admm_iter: 500,
            group_tol: 1e-4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation("lambda must be a finite non-negative number"));
        }
        if !(self.gamma_mcp > 1.0) {
            return Err(Error::validation("MCP gamma must exceed 1"));
        }
        if !(self.rho_admm > 0.0) || !(self.gamma_mcp * self.rho_admm > 1.0) {
            return Err(Error::validation("ADMM needs rho > 0 and gamma * rho > 1"));
        }
        if !(self.tol_admm > 0.0) || self.max_admm_iter == 0 || !(self.group_tol >= 0.0) {
            return Err(Error::validation("invalid ADMM tolerance or iteration limit"));
        }
        Ok(())
    }
}

/// Minimax concave penalty.
pub fn mcp_penalty(x: f64, lambda: f64, gamma: f64) -> f64 {
    let ax = x.abs();
    if ax <= gamma * lambda {
        lambda * ax - x * x / (2.0 * gamma)
    } else {
        gamma * lambda * lambda / 2.0
    }
}

/// `argmin_x ½ρ(x − v)² + P_γ(x; λ)`, assuming `γρ > 1`.
pub fn mcp_prox(v: f64, lambda: f64, gamma: f64, rho: f64) -> f64 {
    let av = v.abs();
    if av <= lambda / rho {
        0.0
    } else if av <= gamma * lambda {
        (v - sign(v) * lambda / rho) / (1.0 - 1.0 / (gamma * rho))
    } else {
        v
    }
}

fn pairs(k: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(k * k.saturating_sub(1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            out.push((a, b));
        }
    }
    out
}

pub fn pairwise_penalty(beta: &[f64], lambda: f64, gamma: f64) -> f64 {
    pairs(beta.len())
        .into_iter()
        .map(|(a, b)| mcp_penalty(beta[a] - beta[b], lambda, gamma))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AdmmSolution {
    pub beta: Vec<f64>,
    pub eta: Vec<f64>,
    pub dual: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// ADMM for `½ Σ_k a_k (β_k − t_k)² + Σ_{k<k'} P_γ(β_k − β_k'; λ)`.
pub(crate) fn admm_quadratic(a: &[f64], t: &[f64], start: &[f64], cfg: &FusedConfig) -> AdmmSolution {
    let k = a.len();
    let pr = pairs(k);
    let mean_a = a.iter().sum::<f64>() / k as f64;
    let rho = cfg.rho_admm * mean_a.max(1.0);
    let mut sys = Matrix::zeros(k, k);
    for c in 0..k {
        sys[(c, c)] = a[c] + rho * (k - 1) as f64;
        for d in 0..k {
            if d != c {
                sys[(c, d)] = -rho;
            }
        }
    }
    let chol = cholesky(&sys);
    let mut beta = start.to_vec();
    let mut eta: Vec<f64> = pr.iter().map(|&(p, q)| start[p] - start[q]).collect();
    let mut dual = vec![0.0; pr.len()];
    let Some(chol) = chol else {
        return AdmmSolution { beta, eta, dual, converged: false, iterations: 0 };
    };
    let mut rhs = vec![0.0; k];
    for it in 1..=cfg.max_admm_iter {
        for c in 0..k {
            rhs[c] = a[c] * t[c];
        }
        for (idx, &(p, q)) in pr.iter().enumerate() {
            let d = rho * (eta[idx] - dual[idx]);
            rhs[p] += d;
            rhs[q] -= d;
        }
        beta = cholesky_solve(&chol, &rhs);
        let (mut primal, mut change) = (0.0f64, 0.0f64);
        for (idx, &(p, q)) in pr.iter().enumerate() {
            let diff = beta[p] - beta[q];
            let next = mcp_prox(diff + dual[idx], cfg.lambda, cfg.gamma_mcp, rho);
            change = change.max((next - eta[idx]).abs());
            eta[idx] = next;
            let r = diff - next;
            dual[idx] += r;
            primal = primal.max(r.abs());
        }
        if primal <= INNER_TOL_FACTOR * cfg.tol_admm && change <= INNER_TOL_FACTOR * cfg.tol_admm {
            snap_fused(&mut beta, &eta, a);
            return AdmmSolution { beta, eta, dual, converged: true, iterations: it };
        }
    }
    snap_fused(&mut beta, &eta, a);
    AdmmSolution { beta, eta, dual, converged: false, iterations: cfg.max_admm_iter }
}

/// ADMM runs until residuals fall this far below the requested tolerance so
/// that the returned means, not just the residuals, are accurate.
const INNER_TOL_FACTOR: f64 = 0.01;

/// Clusters joined by exactly-zero pairwise variables share one mean, the
/// `a`-weighted average of their ADMM means.
fn snap_fused(beta: &mut [f64], eta: &[f64], a: &[f64]) {
    let k = beta.len();
    if eta.iter().all(|&e| e != 0.0) {
        return;
    }
    let pr = pairs(k);
    let labels = union_groups(k, |p, q| eta[pr.iter().position(|&x| x == (p, q)).unwrap()] == 0.0);
    let n_groups = labels.iter().max().map_or(0, |m| m + 1);
    for gidx in 0..n_groups {
        let members: Vec<usize> = (0..k).filter(|&c| labels[c] == gidx).collect();
        let wsum: f64 = members.iter().map(|&c| a[c]).sum();
        let mean = if wsum > 0.0 {
            members.iter().map(|&c| a[c] * beta[c]).sum::<f64>() / wsum
        } else {
            members.iter().map(|&c| beta[c]).sum::<f64>() / members.len() as f64
        };
        for &c in &members {
            beta[c] = mean;
        }
    }
}

/// Per-gene IRLS result.
struct GeneFit {
    beta: Vec<f64>,
    eta: Vec<f64>,
    dual: Vec<f64>,
    converged: bool,
}

fn gene_objective(coords: &[Coordinate<'_>], beta: &[f64], cfg: &FusedConfig) -> f64 {
    let ll: f64 = coords.iter().zip(beta).map(|(c, &b)| c.linearize(b).objective).sum();
    ll - pairwise_penalty(beta, cfg.lambda, cfg.gamma_mcp)
}

fn solve_gene(coords: &[Coordinate<'_>], start: &[f64], cfg: &FusedConfig, tol: f64, max_iter: usize) -> GeneFit {
    let k = coords.len();
    let mut beta = start.to_vec();
    let mut obj = gene_objective(coords, &beta, cfg);
    let mut last = AdmmSolution { beta: beta.clone(), eta: vec![], dual: vec![], converged: true, iterations: 0 };
    let mut admm_ok = true;
    for _ in 0..max_iter {
        let lins: Vec<_> = coords.iter().zip(&beta).map(|(c, &b)| c.linearize(b)).collect();
        let a: Vec<f64> = lins.iter().map(|l| if l.a > WEIGHT_EPS { l.a } else { 0.0 }).collect();
        if a.iter().all(|&v| v == 0.0) {
            break;
        }
        let t: Vec<f64> = (0..k).map(|c| if a[c] > 0.0 { lins[c].b / lins[c].a } else { beta[c] }).collect();
        last = admm_quadratic(&a, &t, &beta, cfg);
        admm_ok = last.converged;
        let mut cand = last.beta.clone();
        let mut cand_obj = gene_objective(coords, &cand, cfg);
        let mut halvings = 0;
        while !(cand_obj >= obj - 1e-12 * obj.abs()) && halvings < 40 {
            for (c, b) in cand.iter_mut().zip(&beta) {
                *c = 0.5 * (*c + b);
            }
            cand_obj = gene_objective(coords, &cand, cfg);
            halvings += 1;
        }
        if !(cand_obj >= obj - 1e-12 * obj.abs()) {
            break;
        }
        let delta = cand.iter().zip(&beta).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        beta = cand;
        obj = cand_obj;
        if delta < tol {
            break;
        }
    }
    GeneFit { beta, eta: last.eta, dual: last.dual, converged: admm_ok }
}

/// Per-gene ADMM state after a fused M-step.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedState {
    /// Pairwise-difference variables per gene, pairs ordered `(0,1), (0,2), …`.
    pub eta: Vec<Vec<f64>>,
    pub dual: Vec<Vec<f64>>,
    pub beta: Matrix,
    /// ADMM convergence of the last inner solve per gene.
    pub converged: Vec<bool>,
}

fn fused_update(data: &NbData, z_columns: &[Vec<f64>], beta: &Matrix, fcfg: &FusedConfig, tol: f64, max_iter: usize) -> FusedState {
    let (g, k) = (data.n_genes(), z_columns.len());
    let mut state = FusedState {
        eta: Vec::with_capacity(g),
        dual: Vec::with_capacity(g),
        beta: beta.clone(),
        converged: Vec::with_capacity(g),
    };
    for j in 0..g {
        let coords: Vec<Coordinate<'_>> = z_columns.iter().map(|z| data.coordinate(j, Some(z), 0.0, 0.0)).collect();
        let fit = solve_gene(&coords, beta.row(j), fcfg, tol, max_iter);
        state.beta.row_mut(j).copy_from_slice(&fit.beta);
        state.eta.push(fit.eta);
        state.dual.push(fit.dual);
        state.converged.push(fit.converged);
        debug_assert_eq!(fit.beta.len(), k);
    }
    state
}

pub(crate) struct FusedStep {
    pub cfg: FusedConfig,
}

impl BetaStep for FusedStep {
    fn update(&self, data: &NbData, z_columns: &[Vec<f64>], _beta_star: &[f64], beta: &Matrix, cfg: &FitConfig) -> Matrix {
        fused_update(data, z_columns, beta, &self.cfg, cfg.tol_irls_inner, cfg.max_irls_iter).beta
    }

    fn penalty(&self, beta: &Matrix, _beta_star: &[f64]) -> f64 {
        (0..beta.rows())
            .map(|j| pairwise_penalty(beta.row(j), self.cfg.lambda, self.cfg.gamma_mcp))
            .sum()
    }

    fn kind(&self) -> Penalty {
        Penalty::FusedMcp {
            gamma: self.cfg.gamma_mcp,
            group_tol: self.cfg.group_tol,
        }
    }
}

/// Fused M-step for every gene given responsibilities.
pub fn m_step_beta_fused(
    m: &CountMatrix,
    prof: &NormalizationProfile,
    responsibilities: &Matrix,
    beta_current: &Matrix,
    cfg: &FusedConfig,
    em: &FitConfig,
) -> Result<FusedState> {
    cfg.validate()?;
    let data = NbData::new(m, prof)?;
    if responsibilities.rows() != m.n_samples() || beta_current.rows() != m.n_genes() || beta_current.cols() != responsibilities.cols() {
        return Err(Error::validation("responsibilities / beta shapes disagree"));
    }
    Ok(fused_update(&data, &columns(responsibilities), beta_current, cfg, em.tol_irls_inner, em.max_irls_iter))
}

impl NbMixture {
    /// EM fit with the fused-MCP penalty; `fused.lambda` overrides `em.lambda`.
    pub fn fit_fused(&self, em: &FitConfig, fused: &FusedConfig) -> Result<MixtureFit> {
        fused.validate()?;
        let mut em = em.clone();
        em.lambda = fused.lambda;
        self.fit_with(&em, &FusedStep { cfg: *fused })
    }
}

/// Fused-MCP mixture fit; the global means are estimated internally.
pub fn fit_fused(m: &CountMatrix, prof: &NormalizationProfile, em: &FitConfig, fused: &FusedConfig) -> Result<MixtureFit> {
    let beta_star = crate::nb::fit_null_means(m, prof)?.beta_star;
    NbMixture::new(m, prof, &beta_star)?.fit_fused(em, fused)
}

/// Group labels of one gene's cluster means: clusters are joined whenever
/// two means lie within `tol` (single linkage). Labels are numbered by first
/// appearance.
pub fn groups(beta_row: &[f64], tol: f64) -> Vec<usize> {
    union_groups(beta_row.len(), |a, b| (beta_row[a] - beta_row[b]).abs() <= tol)
}

fn union_groups(k: usize, joined: impl Fn(usize, usize) -> bool) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..k).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (a, b) in pairs(k) {
        if joined(a, b) {
            let (ra, rb) = (root(&mut parent, a), root(&mut parent, b));
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut label_of_root = vec![usize::MAX; k];
    let mut next = 0;
    (0..k)
        .map(|c| {
            let r = root(&mut parent, c);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            label_of_root[r]
        })
        .collect()
}
