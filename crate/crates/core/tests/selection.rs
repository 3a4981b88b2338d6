use snbclust_core::baselines::{default_s_grid, gap_statistic_s, GaussianMixture, SkmeansConfig};
use snbclust_core::metrics::roc_auc;
use snbclust_core::mixture::NbMixture;
use snbclust_core::nb::fit_null_means;
use snbclust_core::normalize::SizeFactorMethod;
use snbclust_core::selection::{gene_scores_gaussian, gene_scores_nb, lambda_max_nb, log_grid, run_lambda_path};
use snbclust_core::simulate::{default_surrogate_dist, generate, pattern_of, SimulatedDataset, SimulationConfig};
use snbclust_core::{sub_seed, FitConfig, Init, Matrix, NormalizationProfile, Rng};
use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

fn sim2(gamma: f64, seed: u64) -> (SimulatedDataset, NormalizationProfile) {
    let ds = generate(&SimulationConfig::sim2(gamma, (0.9, 1.1), seed), &default_surrogate_dist(seed)).unwrap();
    let prof = NormalizationProfile::estimate(&ds.counts, SizeFactorMethod::MedianOfRatios).unwrap();
    (ds, prof)
}

fn model(ds: &SimulatedDataset, prof: &NormalizationProfile) -> NbMixture {
    let beta_star = fit_null_means(&ds.counts, prof).unwrap().beta_star;
    NbMixture::new(&ds.counts, prof, &beta_star).unwrap()
}

fn cfg(seed: u64) -> FitConfig {
    let mut c = FitConfig::new(3, 0.0).with_seed(seed);
    c.n_restarts = 3;
    c
}

#[test]
fn fully_shrunk_fit_is_not_chosen_with_signal() {
    let reps = 10;
    let mut not_chosen = 0;
    for r in 0..reps {
        let (ds, prof) = sim2(1.2, 500 + r);
        let m = model(&ds, &prof);
        let lm = lambda_max_nb(&m, &cfg(r)).unwrap();
        let mut grid = log_grid(lm.lambda_max, 1000.0, 16).unwrap();
        grid.push(1e9);
        let start = FitConfig {
            init: Init::WarmStart {
                beta: lm.pilot.beta.clone(),
                pi: lm.pilot.pi.clone(),
            },
            ..cfg(r)
        };
        let path = run_lambda_path(&m, &grid, &start).unwrap();
        let top = path.entries[16].as_ref().unwrap();
        assert_eq!(top.q, 3 * ds.counts.n_genes());
        if path.chosen_index != 16 {
            not_chosen += 1;
        }
    }
    assert!(not_chosen * 10 >= reps * 9, "{not_chosen}/{reps}");
}

#[test]
fn shrinkage_grows_along_warm_path() {
    let reps = 8;
    let mut monotone = 0;
    for r in 0..reps {
        let (ds, prof) = sim2(0.9, 600 + r);
        let m = model(&ds, &prof);
        let lmax = lambda_max_nb(&m, &cfg(r)).unwrap().lambda_max;
        let grid = log_grid(lmax, 1000.0, 16).unwrap();
        let path = run_lambda_path(&m, &grid, &cfg(r)).unwrap();
        let shrunk: Vec<usize> = path.fits.iter().map(|f| f.as_ref().unwrap().n_shrunk).collect();
        if shrunk.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }
    assert!(monotone * 100 >= reps * 95, "{monotone}/{reps}");
}

#[test]
fn warm_path_is_at_least_as_good_as_cold_fits() {
    let mut pairs = 0;
    let mut better = 0;
    for r in 0..4 {
        let (ds, prof) = sim2(0.9, 700 + r);
        let m = model(&ds, &prof);
        let lmax = lambda_max_nb(&m, &cfg(r)).unwrap().lambda_max;
        let grid = log_grid(lmax, 1000.0, 8).unwrap();
        let path = run_lambda_path(&m, &grid, &cfg(r)).unwrap();
        for (t, &lambda) in grid.iter().enumerate() {
            let warm = path.fits[t].as_ref().unwrap().penalized_loglik;
            let cold = m.fit(&FitConfig { lambda, ..cfg(r) }).unwrap().penalized_loglik;
            pairs += 1;
            if warm >= cold - 1e-6 * cold.abs() {
                better += 1;
            }
        }
    }
    assert!(better * 10 >= pairs * 8, "{better}/{pairs}");
}

// TN(γ, 1, γ/2) tends to a half-normal as γ → 0, so effects stay near √(2/π).
#[test]
fn tiny_gamma_leaves_half_normal_effects() {
    let (ds, _) = sim2(1e-6, 800);
    let informative: Vec<f64> = (0..ds.counts.n_genes())
        .filter(|&j| ds.informative_mask[j])
        .map(|j| {
            let p = pattern_of(j);
            let (hi, lo) = (0..3).fold((f64::MIN, f64::MAX), |(h, l), c| {
                (h.max(ds.true_beta[(j, c)]), l.min(ds.true_beta[(j, c)]))
            });
            (hi - lo) / f64::from(p.iter().max().unwrap() - p.iter().min().unwrap())
        })
        .collect();
    let mean = informative.iter().sum::<f64>() / informative.len() as f64;
    let se = 0.6 / (informative.len() as f64).sqrt();
    assert!((mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 4.0 * se, "{mean}");
}

#[test]
fn scores_are_at_chance_against_an_unrelated_mask() {
    let reps = 6;
    let (mut nb, mut sg) = (0.0, 0.0);
    for r in 0..reps {
        let (ds, prof) = sim2(1e-6, 800 + r);
        let mut rng = Rng::seed_from_u64(r);
        let mask: Vec<bool> = (0..ds.counts.n_genes()).map(|_| rng.random_bool(0.3)).collect();
        let fit = model(&ds, &prof).fit(&cfg(r)).unwrap();
        nb += roc_auc(&gene_scores_nb(&fit), &mask).unwrap();
        let gfit = GaussianMixture::new(&prof.log_cpm).unwrap().fit(&cfg(r)).unwrap();
        sg += roc_auc(&gene_scores_gaussian(&gfit), &mask).unwrap();
    }
    let (nb, sg) = (nb / reps as f64, sg / reps as f64);
    assert!((nb - 0.5).abs() <= 0.05, "{nb}");
    assert!((sg - 0.5).abs() <= 0.05, "{sg}");
}

#[test]
fn gap_on_noise_picks_smallest_s() {
    let trials = 20;
    let (g, n) = (40, 30);
    let grid = default_s_grid(g, 6);
    let mut smallest = 0;
    for t in 0..trials {
        let mut rng = Rng::seed_from_u64(sub_seed(900, t));
        let x = Matrix::from_fn(g, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let cfg = SkmeansConfig {
            seed: t,
            ..SkmeansConfig::default()
        };
        let gap = gap_statistic_s(&x, 3, &grid, 25, &cfg).unwrap();
        if gap.chosen_index == 0 {
            smallest += 1;
        }
    }
    assert!(smallest * 10 >= trials * 8, "{smallest}/{trials}");
}

#[test]
fn gap_on_sim2_zeroes_some_genes() {
    let (ds, prof) = sim2(1.2, 950);
    let grid = default_s_grid(ds.counts.n_genes(), 10);
    let gap = gap_statistic_s(&prof.log_cpm, 3, &grid, 10, &SkmeansConfig::default()).unwrap();
    assert!(gap.fit.weights.iter().any(|&w| w == 0.0));
}
