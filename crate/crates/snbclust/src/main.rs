use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snbclust::commands;
use snbclust::manifest::{Command, RunManifest, Settings};

/// Sparse negative binomial mixture clustering of RNA-seq counts.
#[derive(Parser)]
#[command(name = "snbclust", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit one model at a fixed tuning parameter.
    Fit(Flags),
    /// Fit a tuning-parameter path and keep the BIC (or gap) choice.
    Path(Flags),
    /// Generate one simulated data set with its truth files.
    Simulate(Flags),
    /// Replicated simulation study comparing methods.
    Benchmark(Flags),
    /// ARI, AUC and gene-set enrichment from result files.
    Evaluate(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// key=value manifest; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Counts matrix (TSV, or CSV by extension); genes in rows.
    #[arg(long)]
    counts: Option<String>,
    /// snbclust, snbclust-fused, sgclust, skmeans; benchmark also takes a comma list or `all`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    /// Comma-separated λ values in increasing order.
    #[arg(long)]
    lambda_grid: Option<String>,
    /// Comma-separated sparse K-means bounds.
    #[arg(long)]
    s_grid: Option<String>,
    /// sim1, sim2 or sim3.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// LB,UB of the library-size factors.
    #[arg(long)]
    lib_bounds: Option<String>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    replicates: Option<String>,
    #[arg(long)]
    restarts: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// Output directory, created if needed.
    #[arg(long)]
    out: Option<String>,
    /// Gene sets, one per line: name<TAB>gene,gene,...
    #[arg(long)]
    gene_sets: Option<String>,
    /// True sample labels (sample_id,label).
    #[arg(long)]
    truth: Option<String>,
    /// True informative genes (gene_id,flag).
    #[arg(long)]
    truth_genes: Option<String>,
    /// Predicted sample labels (sample_id,label).
    #[arg(long)]
    labels: Option<String>,
    /// Gene scores (gene_id,score).
    #[arg(long)]
    scores: Option<String>,
    /// Selected genes (gene_id,flag).
    #[arg(long)]
    selected: Option<String>,
    /// Size-factor override (sample_id,size_factor).
    #[arg(long)]
    size_factors: Option<String>,
    /// Dispersion override (gene_id,dispersion).
    #[arg(long)]
    dispersions: Option<String>,
}

impl Flags {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("counts", &self.counts),
            ("method", &self.method),
            ("k", &self.k),
            ("lambda", &self.lambda),
            ("lambda_grid", &self.lambda_grid),
            ("s_grid", &self.s_grid),
            ("scheme", &self.scheme),
            ("gamma", &self.gamma),
            ("alpha", &self.alpha),
            ("lib_bounds", &self.lib_bounds),
            ("phi", &self.phi),
            ("replicates", &self.replicates),
            ("restarts", &self.restarts),
            ("seed", &self.seed),
            ("threads", &self.threads),
            ("out", &self.out),
            ("gene_sets", &self.gene_sets),
            ("truth", &self.truth),
            ("truth_genes", &self.truth_genes),
            ("labels", &self.labels),
            ("scores", &self.scores),
            ("selected", &self.selected),
            ("size_factors", &self.size_factors),
            ("dispersions", &self.dispersions),
        ]
    }
}

fn run(command: Command, flags: &Flags) -> snbclust::Result<()> {
    let mut settings = Settings::defaults();
    if let Some(path) = &flags.config {
        settings.merge_file(path)?;
    }
    for (key, value) in flags.pairs() {
        if let Some(v) = value {
            settings.set(key, v.clone());
        }
    }
    let manifest = RunManifest::from_settings(command, &settings)?;
    if flags.print_config {
        print!("command={}\n{settings}", command.name());
        return Ok(());
    }
    commands::run(&manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, flags) = match &cli.command {
        Cmd::Fit(f) => (Command::Fit, f),
        Cmd::Path(f) => (Command::Path, f),
        Cmd::Simulate(f) => (Command::Simulate, f),
        Cmd::Benchmark(f) => (Command::Benchmark, f),
        Cmd::Evaluate(f) => (Command::Evaluate, f),
    };
    match run(command, flags) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
