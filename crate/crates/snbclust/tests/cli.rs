use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snbclust")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn metric(out: &Path, name: &str) -> f64 {
    rows(&out.join("evaluation.csv"))
        .into_iter()
        .find(|r| r[0] == name)
        .map(|r| r[1].parse().unwrap())
        .unwrap()
}

#[test]
fn fit_on_demo_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let counts = data("demo_counts.tsv");
    let o = run(&["fit", "--counts", counts.to_str().unwrap(), "--k", "3", "--lambda", "5", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["labels.csv", "params.csv", "metadata.txt", "size_factors.csv", "dispersions.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let labels = rows(&dir.path().join("labels.csv"));
    assert_eq!(labels[0], ["sample_id", "label", "max_posterior"]);
    assert_eq!(labels.len(), 46);

    let o = run(&[
        "evaluate",
        "--labels",
        dir.path().join("labels.csv").to_str().unwrap(),
        "--truth",
        data("demo_truth_labels.csv").to_str().unwrap(),
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(metric(dir.path(), "ari") > 0.9);
}

#[test]
fn every_method_fits_the_demo() {
    let counts = data("demo_counts.tsv");
    for method in ["snbclust", "snbclust-fused", "sgclust", "skmeans"] {
        let dir = tempfile::tempdir().unwrap();
        let o = run(&[
            "fit",
            "--counts",
            counts.to_str().unwrap(),
            "--method",
            method,
            "--lambda",
            "2",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{method}: {}", stderr(&o));
        assert!(dir.path().join("labels.csv").exists());
    }
}

#[test]
fn missing_input_exits_two_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.tsv");
    let o = run(&["fit", "--counts", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.tsv"), "{}", stderr(&o));
}

#[test]
fn too_many_clusters_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let counts = data("demo_counts.tsv");
    let o = run(&["fit", "--counts", counts.to_str().unwrap(), "--k", "100", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn malformed_counts_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.tsv");
    fs::write(&bad, "gene_id\ta\tb\ng1\t1\tx\n").unwrap();
    let o = run(&["fit", "--counts", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn default_path_has_sixteen_rows_and_one_choice() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", "--scheme", "sim2", "--gamma", "1.2", "--seed", "3", "--out", out]);
    assert!(o.status.success(), "{}", stderr(&o));
    let counts = dir.path().join("counts.tsv");
    let fit_dir = dir.path().join("path");
    let o = run(&[
        "path",
        "--counts",
        counts.to_str().unwrap(),
        "--restarts",
        "3",
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = rows(&fit_dir.join("path.csv"));
    assert_eq!(path.len(), 17);
    let chosen = path[0].iter().position(|h| h == "chosen").unwrap();
    assert_eq!(path[1..].iter().filter(|r| r[chosen] == "1").count(), 1);
    let lambdas: Vec<f64> = path[1..].iter().map(|r| r[0].parse().unwrap()).collect();
    assert!(lambdas.windows(2).all(|w| w[1] > w[0]));

    let o = run(&[
        "evaluate",
        "--scores",
        fit_dir.join("scores.csv").to_str().unwrap(),
        "--truth-genes",
        dir.path().join("truth_genes.csv").to_str().unwrap(),
        "--out",
        fit_dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let auc = metric(&fit_dir, "auc");
    assert!((0.0..=1.0).contains(&auc));
}

#[test]
fn identical_labels_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let truth = data("demo_truth_labels.csv");
    let o = run(&[
        "evaluate",
        "--labels",
        truth.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(metric(dir.path(), "ari"), 1.0);
}

#[test]
fn enrichment_fdr_follows_p_order() {
    let dir = tempfile::tempdir().unwrap();
    let sets = dir.path().join("sets.tsv");
    let selected = dir.path().join("selected.csv");
    let genes: Vec<String> = (1..=60).map(|j| format!("g{j}")).collect();
    let mut sel = String::from("gene_id,selected\n");
    for (j, g) in genes.iter().enumerate() {
        sel.push_str(&format!("{g},{}\n", u8::from(j < 20)));
    }
    fs::write(&selected, sel).unwrap();
    let set = |r: std::ops::Range<usize>| genes[r].join(",");
    fs::write(
        &sets,
        format!("hit\t{}\nmixed\t{}\nmiss\t{}\nsmall\t{}\n", set(0..15), set(10..30), set(40..60), set(18..22)),
    )
    .unwrap();
    let o = run(&[
        "evaluate",
        "--gene-sets",
        sets.to_str().unwrap(),
        "--selected",
        selected.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = rows(&dir.path().join("enrichment.csv"));
    let mut pf: Vec<(f64, f64)> = table[1..].iter().map(|r| (r[5].parse().unwrap(), r[6].parse().unwrap())).collect();
    assert_eq!(pf.len(), 4);
    pf.sort_by(|a, b| a.0.total_cmp(&b.0));
    for w in pf.windows(2) {
        assert!(w[1].1 >= w[0].1);
    }
    for (p, q) in pf {
        assert!(q >= p && q <= 1.0);
    }
}

#[test]
fn benchmark_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for (dir, threads) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "benchmark",
            "--scheme",
            "sim1",
            "--method",
            "all",
            "--gamma",
            "1.0",
            "--replicates",
            "5",
            "--restarts",
            "2",
            "--threads",
            threads,
            "--seed",
            "4",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let reps = rows(&a.path().join("replicates.csv"));
    assert_eq!(reps.len(), 1 + 5 * 3);
    let summary = rows(&a.path().join("summary.csv"));
    assert_eq!(summary.len(), 4);
    for f in ["replicates.csv", "summary.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn print_config_reflects_layered_sources() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.conf");
    fs::write(&cfg, "# base\nk = 4\nlambda = 2\n").unwrap();
    let o = run(&["fit", "--config", cfg.to_str().unwrap(), "--lambda", "7", "--print-config"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.lines().any(|l| l == "k=4"), "{text}");
    assert!(text.lines().any(|l| l == "lambda=7"), "{text}");
}
