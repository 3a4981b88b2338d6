//! Acceptance criteria 1 to 7. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero when any criterion fails.
//! `SNBCLUST_CRITERIA=1,2` runs a subset.

use std::time::{Duration, Instant};

use snbclust::bench::{run_benchmark, summarize, BenchOptions, Method, MethodSummary};
use snbclust_core::baselines::{fit_skmeans, GaussianMixture, SkmeansConfig};
use snbclust_core::fused::{m_step_beta_fused, mcp_penalty, mcp_prox, FusedConfig};
use snbclust_core::metrics::{adjusted_rand_index, fisher_enrichment, roc_auc};
use snbclust_core::mixture::{m_step_beta, NbMixture};
use snbclust_core::nb::{fit_null_means, nb_log_pmf, NbParams};
use snbclust_core::normalize::{log_cpm, SizeFactorMethod};
use snbclust_core::selection::select_lambda_nb;
use snbclust_core::simulate::{default_surrogate_dist, generate, SimulatedDataset, SimulationConfig};
use snbclust_core::{CountMatrix, FitConfig, Init, Matrix, NormalizationProfile, Rng};
use rand::{Rng as _, SeedableRng};

struct Outcome {
    pass: bool,
    detail: String,
}

fn selected(id: usize) -> bool {
    std::env::var("SNBCLUST_CRITERIA").map_or(true, |v| v.split(',').any(|c| c.trim() == id.to_string()))
}

fn check(failures: &mut Vec<String>, id: usize, name: &str, budget: Duration, f: impl FnOnce() -> Outcome) {
    if !selected(id) {
        return;
    }
    let t = Instant::now();
    let out = f();
    let elapsed = t.elapsed();
    let in_time = elapsed <= budget;
    let pass = out.pass && in_time;
    let timing = format!("{:.1}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
    let timing = if in_time { timing } else { format!("{timing}, over budget") };
    println!("criterion {id} {} {name}: {} ({timing})", if pass { "PASS" } else { "FAIL" }, out.detail);
    if !pass {
        failures.push(format!("{id} {name}"));
    }
}

fn mins(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

// criterion 1

fn grid_argmax(lo: f64, hi: f64, steps: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (mut best, mut arg) = (f64::NEG_INFINITY, lo);
    for t in 0..=steps {
        let x = lo + (hi - lo) * t as f64 / steps as f64;
        let v = f(x);
        if v > best {
            best = v;
            arg = x;
        }
    }
    arg
}

fn refine_argmax(centre: f64, half: f64, f: impl Fn(f64) -> f64) -> f64 {
    let coarse = grid_argmax(centre - half, centre + half, 2000, &f);
    grid_argmax(coarse - half / 500.0, coarse + half / 500.0, 4000, &f)
}

fn pmf_normalisation() -> f64 {
    let mut worst: f64 = 0.0;
    for (mu, phi) in [(0.5, 0.3), (3.0, 2.0), (25.0, 0.8), (120.0, 15.0), (40.0, 1000.0), (2.0, 0.05)] {
        let p = NbParams::new(mu, phi).unwrap();
        let total: f64 = (0..200_000u64).map(|y| nb_log_pmf(y, p).exp()).sum();
        worst = worst.max((total - 1.0).abs());
    }
    worst
}

fn lasso_coordinate_error(rng: &mut Rng) -> f64 {
    let (g, n) = (4, 10);
    let counts: Vec<u64> = (0..g * n).map(|_| rng.random_range(0..120u64)).collect();
    let m = CountMatrix::from_counts(g, n, counts).unwrap();
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.7..1.4)).collect();
    let phi: Vec<f64> = (0..g).map(|_| rng.random_range(0.5..20.0)).collect();
    let prof = NormalizationProfile::new(s.clone(), phi.clone(), log_cpm(&m)).unwrap();
    let beta_star = fit_null_means(&m, &prof).unwrap().beta_star;
    let raw = Matrix::from_fn(n, 2, |_, _| rng.random_range(0.05..1.0));
    let z = Matrix::from_fn(n, 2, |i, c| raw[(i, c)] / (raw[(i, 0)] + raw[(i, 1)]));
    let lambda = rng.random_range(0.0..15.0);
    let start = Matrix::from_fn(g, 2, |j, _| beta_star[j]);
    let cfg = FitConfig {
        tol_irls_inner: 1e-9,
        max_irls_iter: 200,
        ..FitConfig::new(2, lambda)
    };
    let beta = m_step_beta(&m, &prof, &z, &beta_star, &start, lambda, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..g {
        for c in 0..2 {
            let obj = |b: f64| {
                let ll: f64 = (0..n)
                    .map(|i| z[(i, c)] * nb_log_pmf(m.get(j, i), NbParams::new(s[i] * b.exp(), phi[j]).unwrap()))
                    .sum();
                ll - lambda * (b - beta_star[j]).abs()
            };
            let want = refine_argmax(beta_star[j], 4.0, obj);
            worst = worst.max((beta[(j, c)] - want).abs());
        }
    }
    worst
}

fn mcp_prox_error(rng: &mut Rng) -> f64 {
    let v = rng.random_range(-6.0..6.0);
    let lambda = rng.random_range(0.0..2.0);
    let rho: f64 = rng.random_range(0.2..3.0);
    let gamma = rng.random_range((1.0 / rho).max(1.0) * 1.05..6.0);
    let want = grid_argmax(-10.0, 10.0, 200_000, |x| -(0.5 * rho * (x - v).powi(2) + mcp_penalty(x, lambda, gamma)));
    (mcp_prox(v, lambda, gamma, rho) - want).abs()
}

fn fused_error(rng: &mut Rng, lambda: f64) -> f64 {
    let n = 16;
    let counts: Vec<u64> = (0..n).map(|i| if i < 8 { rng.random_range(8..20) } else { rng.random_range(12..30) }).collect();
    let m = CountMatrix::from_counts(1, n, counts).unwrap();
    let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.8..1.25)).collect();
    let prof = NormalizationProfile::new(s.clone(), vec![6.0], log_cpm(&m)).unwrap();
    let z = Matrix::from_fn(n, 2, |i, c| {
        let p = if i < 8 { 0.85 } else { 0.2 };
        if c == 0 { p } else { 1.0 - p }
    });
    let cfg = FusedConfig::new(lambda);
    let got = m_step_beta_fused(&m, &prof, &z, &Matrix::filled(1, 2, 2.5), &cfg, &FitConfig::new(2, 0.0)).unwrap();
    let obj = |b: [f64; 2]| {
        let mut ll = 0.0;
        for i in 0..n {
            for c in 0..2 {
                ll += z[(i, c)] * nb_log_pmf(m.get(0, i), NbParams::new(s[i] * b[c].exp(), 6.0).unwrap());
            }
        }
        ll - mcp_penalty(b[0] - b[1], cfg.lambda, cfg.gamma_mcp)
    };
    let (mut centre, mut half) = ([2.7, 2.7], 1.5);
    for _ in 0..4 {
        let step = half / 100.0;
        let (mut best, mut arg) = (f64::NEG_INFINITY, centre);
        for u in -100..=100 {
            for v in -100..=100 {
                let b = [centre[0] + f64::from(u) * step, centre[1] + f64::from(v) * step];
                let f = obj(b);
                if f > best {
                    best = f;
                    arg = b;
                }
            }
        }
        centre = arg;
        half = step * 5.0;
    }
    (0..2).map(|c| (got.beta[(0, c)] - centre[c]).abs()).fold(0.0, f64::max)
}

fn ari_by_pairs(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let (sa, sb) = (a[i] == a[j], b[i] == b[j]);
            both += f64::from(u8::from(sa && sb));
            only_a += f64::from(u8::from(sa));
            only_b += f64::from(u8::from(sb));
            pairs += 1.0;
        }
    }
    let expected = only_a * only_b / pairs;
    let max = 0.5 * (only_a + only_b);
    if max == expected {
        return 1.0;
    }
    (both - expected) / (max - expected)
}

fn auc_by_pairs(scores: &[f64], truth: &[bool]) -> f64 {
    let (mut wins, mut total) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if truth[i] && !truth[j] {
                total += 1.0;
                wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
            }
        }
    }
    wins / total
}

fn choose(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u128, |acc, i| acc * u128::from(n - i) / u128::from(i + 1))
}

fn fisher_by_tail(n_total: u64, set: u64, drawn: u64, a: u64) -> f64 {
    let tail: u128 = (a..=set.min(drawn)).map(|x| choose(set, x) * choose(n_total - set, drawn - x)).sum();
    tail as f64 / choose(n_total, drawn) as f64
}

fn metric_error(rng: &mut Rng) -> f64 {
    let n = rng.random_range(4..40);
    let a: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let b: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
    let mut worst = (adjusted_rand_index(&a, &b).unwrap() - ari_by_pairs(&a, &b)).abs();

    let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8))).collect();
    let mut truth: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    truth[0] = true;
    truth[1] = false;
    worst = worst.max((roc_auc(&scores, &truth).unwrap() - auc_by_pairs(&scores, &truth)).abs());

    let g = rng.random_range(10..40);
    let selected: Vec<bool> = (0..g).map(|_| rng.random_bool(0.3)).collect();
    let in_set: Vec<bool> = (0..g).map(|_| rng.random_bool(0.3)).collect();
    let res = fisher_enrichment(&selected, &[("s".to_owned(), in_set.clone())]).unwrap();
    let count = |f: &dyn Fn(usize) -> bool| (0..g).filter(|&j| f(j)).count() as u64;
    let set = count(&|j| in_set[j]);
    if set > 0 {
        let want = fisher_by_tail(g as u64, set, count(&|j| selected[j]), count(&|j| selected[j] && in_set[j]));
        worst = worst.max((res[0].p_value - want).abs());
    }
    worst
}

fn criterion_1() -> Outcome {
    let mut rng = Rng::seed_from_u64(2024);
    let pmf = pmf_normalisation();
    let lasso = (0..6).map(|_| lasso_coordinate_error(&mut rng)).fold(0.0, f64::max);
    let mcp = (0..100).map(|_| mcp_prox_error(&mut rng)).fold(0.0, f64::max);
    let fused = [0.5, 2.0, 40.0].iter().map(|&l| fused_error(&mut rng, l)).fold(0.0, f64::max);
    let metrics = (0..200).map(|_| metric_error(&mut rng)).fold(0.0, f64::max);
    Outcome {
        pass: pmf < 1e-10 && lasso < 1e-4 && mcp < 1e-3 && fused < 1e-3 && metrics < 1e-12,
        detail: format!(
            "max errors pmf {pmf:.1e}, lasso step {lasso:.1e}, mcp prox {mcp:.1e}, fused {fused:.1e}, metrics {metrics:.1e}"
        ),
    }
}

// criterion 2

fn simulated(cfg: SimulationConfig) -> (SimulatedDataset, NormalizationProfile) {
    let ds = generate(&cfg, &default_surrogate_dist(cfg.seed)).unwrap();
    let mut prof = NormalizationProfile::estimate(&ds.counts, SizeFactorMethod::MedianOfRatios).unwrap();
    if cfg.lib_bounds == (1.0, 1.0) {
        prof = prof.with_size_factors(vec![1.0; ds.counts.n_samples()]).unwrap();
    }
    (ds, prof)
}

fn nb_model(ds: &SimulatedDataset, prof: &NormalizationProfile) -> NbMixture {
    let beta_star = fit_null_means(&ds.counts, prof).unwrap().beta_star;
    NbMixture::new(&ds.counts, prof, &beta_star).unwrap()
}

fn monotone(trace: &[f64], slack: f64) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - slack * w[0].abs().max(1.0))
}

fn warm(beta: Matrix, pi: Vec<f64>, lambda: f64) -> FitConfig {
    let k = pi.len();
    FitConfig {
        init: Init::WarmStart { beta, pi },
        ..FitConfig::new(k, lambda)
    }
}

fn max_abs_diff(a: &Matrix, b: &Matrix, map: impl Fn(usize, usize) -> (usize, usize), shift: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for r in 0..a.rows() {
        for c in 0..a.cols() {
            let (rb, cb) = map(r, c);
            worst = worst.max((a[(r, c)] - b[(rb, cb)] - shift).abs());
        }
    }
    worst
}

fn criterion_2() -> Outcome {
    let mut bad = Vec::new();
    for seed in 0..20u64 {
        let cfg = if seed % 2 == 0 {
            SimulationConfig::sim1(0.6, seed)
        } else {
            SimulationConfig::sim2(0.8, (0.9, 1.1), seed)
        };
        let (ds, prof) = simulated(cfg);
        let lambda = [0.0, 2.0, 10.0][seed as usize % 3];
        let mut fc = FitConfig::new(3, lambda).with_seed(seed);
        fc.n_restarts = 1;
        if !monotone(&nb_model(&ds, &prof).fit(&fc).unwrap().loglik_trace, 1e-6) {
            bad.push(format!("snbClust seed {seed}"));
        }
        if !monotone(&GaussianMixture::new(&prof.log_cpm).unwrap().fit(&fc).unwrap().loglik_trace, 1e-6) {
            bad.push(format!("sgClust seed {seed}"));
        }
        let sk = fit_skmeans(&prof.log_cpm, 3, 4.0, &SkmeansConfig { seed, ..SkmeansConfig::default() }).unwrap();
        if !sk.objective_trace.windows(2).all(|w| w[1] >= w[0] - 1e-9) {
            bad.push(format!("sKmeans seed {seed}"));
        }
    }

    let (ds, prof) = simulated(SimulationConfig::sim1(0.8, 7));
    let model = nb_model(&ds, &prof);
    let start = model.fit(&FitConfig::new(3, 1.0).with_seed(7)).unwrap();
    let beta0 = Matrix::from_fn(start.beta.rows(), 3, |j, k| start.beta[(j, k)] + 0.05 * (k as f64 - 1.0));
    let pi0 = vec![0.3, 0.3, 0.4];
    let perm = [2usize, 0, 1];
    let a = model.fit(&warm(beta0.clone(), pi0.clone(), 1.0)).unwrap();
    let b = model
        .fit(&warm(
            Matrix::from_fn(beta0.rows(), 3, |j, k| beta0[(j, perm[k])]),
            perm.iter().map(|&k| pi0[k]).collect(),
            1.0,
        ))
        .unwrap();
    let perm_ll = (a.penalized_loglik - b.penalized_loglik).abs();
    let perm_beta = max_abs_diff(&b.beta, &a.beta, |j, k| (j, perm[k]), 0.0);
    if perm_ll > 1e-9 * a.penalized_loglik.abs().max(1.0) || perm_beta > 1e-6 {
        bad.push("label permutation".into());
    }

    let c: f64 = 2.5;
    let x = model.fit(&warm(start.beta.clone(), start.pi.clone(), 1.0)).unwrap();
    let scaled = nb_model(&ds, &prof.clone().with_size_factors(vec![c; ds.counts.n_samples()]).unwrap());
    let shifted = Matrix::from_fn(start.beta.rows(), 3, |j, k| start.beta[(j, k)] - c.ln());
    let y = scaled.fit(&warm(shifted, start.pi.clone(), 1.0)).unwrap();
    let beta_err = max_abs_diff(&y.beta, &x.beta, |j, k| (j, k), -c.ln());
    let z_err = max_abs_diff(&y.responsibilities, &x.responsibilities, |i, k| (i, k), 0.0);
    if beta_err > 1e-6 || z_err > 1e-6 {
        bad.push("size-factor equivariance".into());
    }
    Outcome {
        pass: bad.is_empty(),
        detail: if bad.is_empty() {
            format!("60 monotone runs; permutation |dl| {perm_ll:.1e}; scaling beta {beta_err:.1e}, z {z_err:.1e}")
        } else {
            format!("violations: {}", bad.join(", "))
        },
    }
}

// criteria 3 to 6

fn summary(s: &[MethodSummary], m: Method) -> &MethodSummary {
    s.iter().find(|x| x.method == m).unwrap()
}

fn bench(cfg: SimulationConfig, reps: usize) -> Vec<MethodSummary> {
    let opts = BenchOptions::default();
    let dist = default_surrogate_dist(cfg.seed);
    summarize(&run_benchmark(&cfg, &dist, &opts, reps), &opts.methods)
}

fn criterion_3() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for (i, gamma) in [0.4, 0.8, 1.2].into_iter().enumerate() {
        let s = bench(SimulationConfig::sim1(gamma, 3000 + i as u64), 25);
        let (snb, sg, sk) = (
            summary(&s, Method::SnbClust).mean_ari,
            summary(&s, Method::SgClust).mean_ari,
            summary(&s, Method::SKmeans).mean_ari,
        );
        pass &= snb >= sg && snb >= sk && snb >= prev;
        prev = snb;
        parts.push(format!("g={gamma}: {snb:.3}/{sg:.3}/{sk:.3}"));
    }
    Outcome {
        pass,
        detail: format!("ARI snb/sg/sK {}", parts.join("; ")),
    }
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let mut seed = 4000;
    for lib in [(0.9, 1.1), (0.7, 1.3)] {
        for gamma in [0.6, 1.2] {
            seed += 1;
            let s = bench(SimulationConfig::sim2(gamma, lib, seed), 25);
            let snb = summary(&s, Method::SnbClust);
            let (sg, sk) = (summary(&s, Method::SgClust), summary(&s, Method::SKmeans));
            let auc = |m: &MethodSummary| m.mean_auc.unwrap_or(f64::NAN);
            let ok = snb.mean_ari >= sg.mean_ari
                && snb.mean_ari >= sk.mean_ari
                && auc(snb) >= auc(sg)
                && auc(snb) >= auc(sk);
            pass &= ok;
            parts.push(format!(
                "lib {:?} g={gamma}: ARI {:.3}/{:.3}/{:.3} AUC {:.3}/{:.3}/{:.3}{}",
                lib,
                snb.mean_ari,
                sg.mean_ari,
                sk.mean_ari,
                auc(snb),
                auc(sg),
                auc(sk),
                if ok { "" } else { " x" }
            ));
        }
    }
    Outcome {
        pass,
        detail: format!("snb/sg/sK {}", parts.join("; ")),
    }
}

fn criterion_5() -> Outcome {
    let targets = [(0.25, 0.822, 0.892), (0.5, 0.811, 0.896), (0.75, 0.831, 0.895)];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (alpha, ari_ref, auc_ref)) in targets.into_iter().enumerate() {
        let s = bench(SimulationConfig::sim3(alpha, 5000 + i as u64), 50);
        let snb = summary(&s, Method::SnbClust);
        let (sg, sk) = (summary(&s, Method::SgClust), summary(&s, Method::SKmeans));
        let auc = |m: &MethodSummary| m.mean_auc.unwrap_or(f64::NAN);
        let near = (snb.mean_ari - ari_ref).abs() <= 0.15 && (auc(snb) - auc_ref).abs() <= 0.10;
        let ordered = snb.mean_ari > sg.mean_ari
            && snb.mean_ari > sk.mean_ari
            && auc(snb) > auc(sg)
            && auc(snb) > auc(sk);
        pass &= near && ordered;
        parts.push(format!(
            "a={alpha}: ARI {:.3}/{:.3}/{:.3} AUC {:.3}/{:.3}/{:.3}{}{}",
            snb.mean_ari,
            sg.mean_ari,
            sk.mean_ari,
            auc(snb),
            auc(sg),
            auc(sk),
            if near { "" } else { " off-target" },
            if ordered { "" } else { " unordered" }
        ));
    }
    Outcome {
        pass,
        detail: format!("snb/sg/sK {}", parts.join("; ")),
    }
}

fn criterion_6() -> Outcome {
    let cfg = SimulationConfig::sim2(1.2, (0.9, 1.1), 6000);
    let opts = BenchOptions {
        methods: vec![Method::SnbClust],
        ..BenchOptions::default()
    };
    let results = run_benchmark(&cfg, &default_surrogate_dist(cfg.seed), &opts, 25);
    let selected: Vec<usize> = results
        .iter()
        .filter_map(|r| r.get(Method::SnbClust))
        .map(|m| m.n_selected)
        .collect();
    let in_range = selected.iter().filter(|&&q| (50..=500).contains(&q)).count();
    let null = selected.iter().filter(|&&q| q == 0).count();
    let complete = selected.len() == results.len();
    Outcome {
        pass: complete && in_range * 10 >= 7 * results.len() && null == 0,
        detail: format!(
            "{in_range}/{} replicates select 50..500 genes, fully shrunk chosen {null} times, selected {:?}",
            results.len(),
            selected
        ),
    }
}

fn criterion_7() -> Outcome {
    let (ds, prof) = simulated(SimulationConfig::sim2(1.0, (0.9, 1.1), 7000));
    let model = nb_model(&ds, &prof);
    let t = Instant::now();
    let fit = model.fit(&FitConfig::new(3, 2.0).with_seed(1)).unwrap();
    let single = t.elapsed();
    let t = Instant::now();
    let path = select_lambda_nb(&model, &FitConfig::new(3, 0.0).with_seed(1)).unwrap();
    let full = t.elapsed();
    Outcome {
        pass: single < Duration::from_secs(30) && full < mins(5) && fit.restarts_used == 10 && path.lambdas.len() == 16,
        detail: format!(
            "single fit (G=1000, n=45, 10 restarts) {:.2}s, 16-lambda path {:.2}s",
            single.as_secs_f64(),
            full.as_secs_f64()
        ),
    }
}

fn main() {
    let mut failures = Vec::new();
    check(&mut failures, 1, "oracle suite", mins(1), criterion_1);
    check(&mut failures, 2, "EM invariants", mins(5), criterion_2);
    check(&mut failures, 3, "sim1 ordering and monotonicity", mins(15), criterion_3);
    check(&mut failures, 4, "sim2 ordering", mins(30), criterion_4);
    check(&mut failures, 5, "sim3 reference values and ordering", mins(45), criterion_5);
    check(&mut failures, 6, "BIC selection size", mins(10), criterion_6);
    check(&mut failures, 7, "performance envelope", mins(6), criterion_7);
    if !failures.is_empty() {
        println!("failed criteria: {}", failures.join("; "));
        std::process::exit(1);
    }
}
