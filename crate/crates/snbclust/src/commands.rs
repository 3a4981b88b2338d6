//! The five subcommands. Each reads its inputs, runs one analysis and writes
//! CSV artifacts into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use snbclust_core::baselines::{default_s_grid, fit_skmeans, gap_statistic_s, GaussianMixture, GaussianMixtureFit, SkmeansConfig, SparseKmeansFit};
use snbclust_core::counts::filter_genes;
use snbclust_core::fused::{groups, FusedConfig};
use snbclust_core::metrics::{adjusted_rand_index, fisher_enrichment, roc_auc};
use snbclust_core::mixture::{map_labels, selected_genes, NbMixture};
use snbclust_core::nb::fit_null_means;
use snbclust_core::normalize::SizeFactorMethod;
use snbclust_core::selection::{
    bic, bic_gaussian, gene_scores_gaussian, gene_scores_nb, lambda_max_gaussian, lambda_max_nb, log_grid, run_lambda_path, run_lambda_path_gaussian, run_path,
    summarize_nb, PathResult, DEFAULT_GRID_LEN, DEFAULT_GRID_RATIO,
};
use snbclust_core::simulate::{build_empirical_dist, default_surrogate_dist, generate, PhiSource, Scheme, SimulationConfig, DEFAULT_TRIM};
use snbclust_core::{CountMatrix, FitConfig, Init, MixtureFit, NormalizationProfile};

use crate::bench::{run_benchmark, summarize, BenchOptions};
use crate::error::{CliError, Result};
use crate::io;
use crate::manifest::{Command, MethodName, RunManifest};

/// Fraction of failed replicates above which `benchmark` reports failure.
pub const MAX_FAILED_FRACTION: f64 = 0.2;

pub fn run(man: &RunManifest) -> Result<()> {
    man.check_inputs()?;
    fs::create_dir_all(&man.out).map_err(|e| CliError::io(&man.out, e))?;
    let work = || match man.command {
        Command::Fit => cmd_fit(man),
        Command::Path => cmd_path(man),
        Command::Simulate => cmd_simulate(man),
        Command::Benchmark => cmd_benchmark(man),
        Command::Evaluate => cmd_evaluate(man),
    };
    match man.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| CliError::Config(e.to_string()))?
            .install(work),
        None => work(),
    }
}

fn out(man: &RunManifest, name: &str) -> PathBuf {
    man.out.join(name)
}

fn counts_path(man: &RunManifest) -> Result<&Path> {
    man.counts.as_deref().ok_or_else(|| CliError::Config("--counts is required".into()))
}

/// Counts after filtering plus the normalization profile, honouring the
/// override files.
fn load_data(man: &RunManifest) -> Result<(CountMatrix, NormalizationProfile)> {
    let mut m = io::read_counts(counts_path(man)?)?;
    if man.min_mean > 0.0 || man.min_variance_quantile > 0.0 {
        m = filter_genes(&m, man.min_mean, man.min_variance_quantile)?;
    }
    let method = if man.library_total {
        SizeFactorMethod::LibraryTotal
    } else {
        SizeFactorMethod::MedianOfRatios
    };
    let mut prof = NormalizationProfile::estimate(&m, method)?;
    if let Some(p) = &man.size_factors {
        prof = prof.with_size_factors(io::read_aligned(p, m.sample_ids())?)?;
    }
    if let Some(p) = &man.dispersions {
        prof = prof.with_dispersions(io::read_aligned(p, m.gene_ids())?)?;
    }
    Ok((m, prof))
}

fn fit_config(man: &RunManifest, lambda: f64) -> FitConfig {
    let mut cfg = FitConfig::new(man.k, lambda).with_seed(man.seed);
    cfg.n_restarts = man.restarts;
    cfg
}

fn kv(k: &str, v: impl ToString) -> (String, String) {
    (k.to_owned(), v.to_string())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn base_metadata(man: &RunManifest, m: &CountMatrix) -> Vec<(String, String)> {
    vec![
        kv("command", man.command.name()),
        kv("method", man.method.name()),
        kv("k", man.k),
        kv("seed", man.seed),
        kv("n_genes", m.n_genes()),
        kv("n_samples", m.n_samples()),
    ]
}

fn write_profile(man: &RunManifest, m: &CountMatrix, prof: &NormalizationProfile) -> Result<()> {
    io::write_named_values(&out(man, "size_factors.csv"), ["sample_id", "size_factor"], m.sample_ids(), &prof.size_factors)?;
    io::write_named_values(&out(man, "dispersions.csv"), ["gene_id", "dispersion"], m.gene_ids(), &prof.dispersions)
}

fn write_selection(man: &RunManifest, m: &CountMatrix, scores: &[f64], selected: &[bool]) -> Result<()> {
    io::write_named_values(&out(man, "scores.csv"), ["gene_id", "score"], m.gene_ids(), scores)?;
    let flags: Vec<f64> = selected.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
    io::write_named_values(&out(man, "selected.csv"), ["gene_id", "selected"], m.gene_ids(), &flags)
}

fn max_posterior(z: &snbclust_core::Matrix) -> Vec<f64> {
    (0..z.rows()).map(|i| z.row(i).iter().copied().fold(0.0, f64::max)).collect()
}

fn write_nb_fit(man: &RunManifest, m: &CountMatrix, fit: &MixtureFit, mut meta: Vec<(String, String)>) -> Result<()> {
    let labels = map_labels(fit);
    io::write_labels(&out(man, "labels.csv"), m.sample_ids(), &labels, Some(&max_posterior(&fit.responsibilities)))?;
    io::write_beta(&out(man, "params.csv"), m.gene_ids(), &fit.beta_star, &fit.beta)?;
    let selected = selected_genes(fit);
    write_selection(man, m, &gene_scores_nb(fit), &selected)?;
    if man.method == MethodName::SnbClustFused {
        let tol = FusedConfig::new(0.0).group_tol;
        let g: Vec<Vec<usize>> = (0..fit.n_genes()).map(|j| groups(fit.beta.row(j), tol)).collect();
        io::write_groups(&out(man, "groups.csv"), m.gene_ids(), &g)?;
    }
    meta.extend([
        kv("lambda", fit.lambda),
        kv("loglik", fit.loglik),
        kv("penalized_loglik", fit.penalized_loglik),
        kv("bic", bic(fit, m.n_samples())),
        kv("n_shrunk", fit.n_shrunk),
        kv("n_selected", selected.iter().filter(|&&s| s).count()),
        kv("pi", join(&fit.pi)),
        kv("iterations", fit.iterations),
        kv("converged", fit.converged),
        kv("restarts_used", fit.restarts_used),
    ]);
    io::write_metadata(&out(man, "metadata.txt"), &meta)
}

fn write_gaussian_fit(man: &RunManifest, m: &CountMatrix, fit: &GaussianMixtureFit, mut meta: Vec<(String, String)>) -> Result<()> {
    io::write_labels(&out(man, "labels.csv"), m.sample_ids(), &fit.labels(), Some(&max_posterior(&fit.responsibilities)))?;
    let names: Vec<String> = (1..=fit.k).map(|k| format!("mu_{k}")).collect();
    let mut cols = vec![("sigma2", fit.sigma2.clone())];
    for (k, n) in names.iter().enumerate() {
        cols.push((n.as_str(), fit.mu.column(k)));
    }
    io::write_gene_table(&out(man, "params.csv"), m.gene_ids(), &cols)?;
    let selected = fit.selected_genes();
    write_selection(man, m, &gene_scores_gaussian(fit), &selected)?;
    meta.extend([
        kv("lambda", fit.lambda),
        kv("loglik", fit.loglik),
        kv("penalized_loglik", fit.penalized_loglik),
        kv("bic", bic_gaussian(fit, m.n_samples())),
        kv("n_zero", fit.n_zero),
        kv("n_selected", selected.iter().filter(|&&s| s).count()),
        kv("pi", join(&fit.pi)),
        kv("iterations", fit.iterations),
        kv("converged", fit.converged),
        kv("restarts_used", fit.restarts_used),
    ]);
    io::write_metadata(&out(man, "metadata.txt"), &meta)
}

fn write_skmeans_fit(man: &RunManifest, m: &CountMatrix, fit: &SparseKmeansFit, mut meta: Vec<(String, String)>) -> Result<()> {
    io::write_labels(&out(man, "labels.csv"), m.sample_ids(), &fit.labels, None)?;
    io::write_gene_table(&out(man, "params.csv"), m.gene_ids(), &[("weight", fit.weights.clone())])?;
    let selected = fit.selected_genes();
    write_selection(man, m, &fit.weights, &selected)?;
    meta.extend([
        kv("s", fit.s),
        kv("objective", fit.objective),
        kv("n_selected", selected.iter().filter(|&&s| s).count()),
        kv("iterations", fit.iterations),
        kv("converged", fit.converged),
    ]);
    io::write_metadata(&out(man, "metadata.txt"), &meta)
}

fn skmeans_config(man: &RunManifest) -> SkmeansConfig {
    SkmeansConfig {
        seed: man.seed,
        ..SkmeansConfig::default()
    }
}

fn nb_model(m: &CountMatrix, prof: &NormalizationProfile) -> Result<NbMixture> {
    let beta_star = fit_null_means(m, prof)?.beta_star;
    Ok(NbMixture::new(m, prof, &beta_star)?)
}

pub fn cmd_fit(man: &RunManifest) -> Result<()> {
    let (m, prof) = load_data(man)?;
    let meta = base_metadata(man, &m);
    match man.method {
        MethodName::SnbClust => {
            let fit = nb_model(&m, &prof)?.fit(&fit_config(man, man.lambda))?;
            write_profile(man, &m, &prof)?;
            write_nb_fit(man, &m, &fit, meta)
        }
        MethodName::SnbClustFused => {
            let fit = nb_model(&m, &prof)?.fit_fused(&fit_config(man, man.lambda), &FusedConfig::new(man.lambda))?;
            write_profile(man, &m, &prof)?;
            write_nb_fit(man, &m, &fit, meta)
        }
        MethodName::SgClust => {
            let fit = GaussianMixture::new(&prof.log_cpm)?.fit(&fit_config(man, man.lambda))?;
            write_gaussian_fit(man, &m, &fit, meta)
        }
        MethodName::SKmeans => {
            let s = match man.s_grid.as_deref() {
                None => (m.n_genes() as f64).sqrt(),
                Some([s]) => *s,
                Some(_) => return Err(CliError::Config("fit with skmeans takes a single --s-grid value; use path to tune s".into())),
            };
            let fit = fit_skmeans(&prof.log_cpm, man.k, s, &skmeans_config(man))?;
            write_skmeans_fit(man, &m, &fit, meta)
        }
    }
}

fn write_path_result<F>(man: &RunManifest, path: &PathResult<F>) -> Result<()> {
    io::write_path(&out(man, "path.csv"), &path.entries, &path.lambdas, path.chosen_index)
}

fn path_metadata(man: &RunManifest, m: &CountMatrix, lambdas: &[f64]) -> Vec<(String, String)> {
    let mut meta = base_metadata(man, m);
    meta.push(kv("lambda_grid", join(lambdas)));
    meta
}

pub fn cmd_path(man: &RunManifest) -> Result<()> {
    let (m, prof) = load_data(man)?;
    let cfg = fit_config(man, 0.0);
    match man.method {
        MethodName::SnbClust | MethodName::SnbClustFused => {
            let model = nb_model(&m, &prof)?;
            let grid = match &man.lambda_grid {
                Some(g) => g.clone(),
                None => log_grid(lambda_max_nb(&model, &cfg)?.lambda_max, DEFAULT_GRID_RATIO, DEFAULT_GRID_LEN)?,
            };
            let path = if man.method == MethodName::SnbClust {
                run_lambda_path(&model, &grid, &cfg)?
            } else {
                let n = m.n_samples();
                run_path(
                    &grid,
                    |l, prev: Option<&MixtureFit>| {
                        let mut c = cfg.clone();
                        if let Some(p) = prev {
                            c.init = Init::WarmStart {
                                beta: p.beta.clone(),
                                pi: p.pi.clone(),
                            };
                        }
                        model.fit_fused(&c, &FusedConfig::new(l))
                    },
                    |f| summarize_nb(f, n),
                )?
            };
            write_path_result(man, &path)?;
            write_profile(man, &m, &prof)?;
            write_nb_fit(man, &m, path.chosen_fit(), path_metadata(man, &m, &grid))
        }
        MethodName::SgClust => {
            let model = GaussianMixture::new(&prof.log_cpm)?;
            let (grid, pilot) = match &man.lambda_grid {
                Some(g) => (g.clone(), None),
                None => {
                    let lm = lambda_max_gaussian(&model, &cfg)?;
                    (log_grid(lm.lambda_max, DEFAULT_GRID_RATIO, DEFAULT_GRID_LEN)?, Some(lm.pilot))
                }
            };
            let path = run_lambda_path_gaussian(&model, &grid, &cfg, pilot.as_ref())?;
            write_path_result(man, &path)?;
            write_gaussian_fit(man, &m, path.chosen_fit(), path_metadata(man, &m, &grid))
        }
        MethodName::SKmeans => {
            let grid = man.s_grid.clone().unwrap_or_else(|| default_s_grid(m.n_genes(), 10));
            let gap = gap_statistic_s(&prof.log_cpm, man.k, &grid, man.gap_permutations, &skmeans_config(man))?;
            let mut w = csv::Writer::from_path(out(man, "gap.csv")).map_err(|e| CliError::parse(out(man, "gap.csv"), e.to_string()))?;
            w.write_record(["s", "gap", "sd", "chosen"])?;
            for (i, s) in gap.s_grid.iter().enumerate() {
                let chosen = if i == gap.chosen_index { "1" } else { "0" };
                w.write_record([s.to_string(), gap.gaps[i].to_string(), gap.sd[i].to_string(), chosen.to_owned()])?;
            }
            w.flush().map_err(|e| CliError::io(out(man, "gap.csv"), e))?;
            let mut meta = base_metadata(man, &m);
            meta.push(kv("s_grid", join(&gap.s_grid)));
            write_skmeans_fit(man, &m, &gap.fit, meta)
        }
    }
}

fn simulation_config(man: &RunManifest, seed: u64) -> Result<SimulationConfig> {
    let mut cfg = match man.scheme {
        Scheme::Sim1 => SimulationConfig::sim1(man.gamma.unwrap_or(1.0), seed),
        Scheme::Sim2 => SimulationConfig::sim2(man.gamma.unwrap_or(1.0), man.lib_bounds.unwrap_or((0.9, 1.1)), seed),
        Scheme::Sim3 => {
            let mut c = SimulationConfig::sim3(man.alpha, seed);
            if let Some(g) = man.gamma {
                c.gamma = g;
            }
            c
        }
    };
    if let (Scheme::Sim3, Some(lb)) = (man.scheme, man.lib_bounds) {
        cfg.lib_bounds = lb;
    }
    if let Some(phi) = man.phi {
        cfg.phi_source = PhiSource::Constant(phi);
    }
    cfg.k = man.k;
    cfg.validate()?;
    Ok(cfg)
}

fn mean_distribution(man: &RunManifest) -> Result<snbclust_core::simulate::EmpiricalMeanDist> {
    match &man.counts {
        Some(p) => Ok(build_empirical_dist(&io::read_counts(p)?, DEFAULT_TRIM)?),
        None => Ok(default_surrogate_dist(man.seed)),
    }
}

fn simulation_metadata(cfg: &SimulationConfig) -> Vec<(String, String)> {
    vec![
        kv("scheme", format!("{:?}", cfg.scheme).to_lowercase()),
        kv("gamma", cfg.gamma),
        kv("alpha", cfg.alpha),
        kv("lib_bounds", format!("{},{}", cfg.lib_bounds.0, cfg.lib_bounds.1)),
        kv("n_genes", cfg.n_genes),
        kv("n_per_cluster", cfg.n_per_cluster),
        kv("k", cfg.k),
        kv("seed", cfg.seed),
    ]
}

pub fn cmd_simulate(man: &RunManifest) -> Result<()> {
    let cfg = simulation_config(man, man.seed)?;
    let ds = generate(&cfg, &mean_distribution(man)?)?;
    let m = &ds.counts;
    io::write_counts(&out(man, "counts.tsv"), m)?;
    io::write_labels(&out(man, "truth_labels.csv"), m.sample_ids(), &ds.labels, None)?;
    let informative: Vec<f64> = ds.informative_mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let names: Vec<String> = (1..=cfg.k).map(|k| format!("log2_mean_{k}")).collect();
    let mut cols = vec![("informative", informative), ("dispersion", ds.dispersions.clone())];
    for (k, n) in names.iter().enumerate() {
        cols.push((n.as_str(), ds.true_beta.column(k)));
    }
    io::write_gene_table(&out(man, "truth_genes.csv"), m.gene_ids(), &cols)?;
    io::write_named_values(&out(man, "library_factors.csv"), ["sample_id", "library_factor"], m.sample_ids(), &ds.library_factors)?;
    io::write_metadata(&out(man, "metadata.txt"), &simulation_metadata(&cfg))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_owned(), |x| x.to_string())
}

pub fn cmd_benchmark(man: &RunManifest) -> Result<()> {
    let base = simulation_config(man, man.seed)?;
    let dist = mean_distribution(man)?;
    let opts = BenchOptions {
        methods: man.bench_methods.clone(),
        n_restarts: man.restarts,
        gap_permutations: man.gap_permutations,
        ..BenchOptions::default()
    };
    let results = run_benchmark(&base, &dist, &opts, man.replicates);

    let path = out(man, "replicates.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::parse(&path, e.to_string()))?;
    w.write_record(["replicate", "seed", "method", "ari", "auc", "n_selected", "tuning", "status"])?;
    for r in &results {
        if let Some(e) = &r.error {
            w.write_record([r.replicate.to_string(), r.seed.to_string(), "NA".into(), "NA".into(), "NA".into(), "NA".into(), "NA".into(), format!("error: {e}")])?;
        }
        for mr in &r.methods {
            w.write_record([
                r.replicate.to_string(),
                r.seed.to_string(),
                mr.method.name().to_owned(),
                mr.ari.to_string(),
                fmt_opt(mr.auc),
                mr.n_selected.to_string(),
                mr.tuning.to_string(),
                "ok".to_owned(),
            ])?;
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = out(man, "summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::parse(&path, e.to_string()))?;
    w.write_record(["method", "scheme", "gamma", "alpha", "lib_lb", "lib_ub", "n", "ARI_mean", "ARI_se", "AUC_mean", "AUC_se", "selected_mean"])?;
    let scheme = format!("{:?}", base.scheme).to_lowercase();
    for s in summarize(&results, &opts.methods) {
        w.write_record([
            s.method.name().to_owned(),
            scheme.clone(),
            base.gamma.to_string(),
            base.alpha.to_string(),
            base.lib_bounds.0.to_string(),
            base.lib_bounds.1.to_string(),
            s.n.to_string(),
            s.mean_ari.to_string(),
            s.se_ari.to_string(),
            fmt_opt(s.mean_auc),
            fmt_opt(s.se_auc),
            s.mean_selected.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    let mut meta = simulation_metadata(&base);
    meta.push(kv("replicates", man.replicates));
    meta.push(kv("methods", opts.methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(",")));
    io::write_metadata(&out(man, "metadata.txt"), &meta)?;

    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed as f64 > MAX_FAILED_FRACTION * results.len() as f64 {
        return Err(CliError::Replicates { failed, total: results.len() });
    }
    Ok(())
}

/// Integer labels for the shared samples, in `order`.
fn aligned_labels(path: &Path, order: &[String]) -> Result<Vec<usize>> {
    let rows = io::read_labels(path)?;
    let map: std::collections::HashMap<&str, i64> = rows.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    order
        .iter()
        .map(|id| {
            let l = *map.get(id.as_str()).ok_or_else(|| CliError::parse(path, format!("no label for {id}")))?;
            usize::try_from(l).map_err(|_| CliError::parse(path, format!("negative label for {id}")))
        })
        .collect()
}

pub fn cmd_evaluate(man: &RunManifest) -> Result<()> {
    let mut metrics: Vec<(String, f64)> = Vec::new();
    if let (Some(lp), Some(tp)) = (&man.labels, &man.truth) {
        let order: Vec<String> = io::read_labels(lp)?.into_iter().map(|(id, _)| id).collect();
        let pred = aligned_labels(lp, &order)?;
        let truth = aligned_labels(tp, &order)?;
        metrics.push(("ari".into(), adjusted_rand_index(&pred, &truth)?));
    }
    if let (Some(sp), Some(tg)) = (&man.scores, &man.truth_genes) {
        let scores = io::read_named_values(sp)?;
        let ids: Vec<String> = scores.iter().map(|(id, _)| id.clone()).collect();
        let values: Vec<f64> = scores.iter().map(|(_, v)| *v).collect();
        let (_, truth) = io::read_gene_mask(tg, Some(&ids))?;
        metrics.push(("auc".into(), roc_auc(&values, &truth)?));
    }
    if let Some(gs) = &man.gene_sets {
        let sel = man
            .selected
            .as_deref()
            .ok_or_else(|| CliError::Config("--gene-sets needs --selected".into()))?;
        let (ids, selected) = io::read_gene_mask(sel, None)?;
        let index: std::collections::HashMap<&str, usize> = ids.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        let sets: Vec<(String, Vec<bool>)> = io::read_gene_sets(gs)?
            .into_iter()
            .map(|(name, genes)| {
                let mut mask = vec![false; ids.len()];
                for g in genes {
                    if let Some(&i) = index.get(g.as_str()) {
                        mask[i] = true;
                    }
                }
                (name, mask)
            })
            .collect();
        io::write_enrichment(&out(man, "enrichment.csv"), &fisher_enrichment(&selected, &sets)?)?;
    }
    if metrics.is_empty() && man.gene_sets.is_none() {
        return Err(CliError::Config("evaluate needs --labels with --truth, --scores with --truth-genes, or --gene-sets with --selected".into()));
    }
    let path = out(man, "evaluation.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::parse(&path, e.to_string()))?;
    w.write_record(["metric", "value"])?;
    for (k, v) in &metrics {
        w.write_record([k.as_str(), &v.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}
