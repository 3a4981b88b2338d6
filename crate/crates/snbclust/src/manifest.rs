//! Run configuration.
//!
//! Every setting is a `key=value` pair. Values come from built-in defaults,
//! then an optional manifest file, then command-line flags, later sources
//! winning. The resolved pairs are parsed into a typed [`RunManifest`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use snbclust_core::simulate::Scheme;

use crate::bench::Method;
use crate::error::{CliError, Result};
use crate::io::read_key_values;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Fit,
    Path,
    Simulate,
    Benchmark,
    Evaluate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Path => "path",
            Command::Simulate => "simulate",
            Command::Benchmark => "benchmark",
            Command::Evaluate => "evaluate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodName {
    SnbClust,
    SnbClustFused,
    SgClust,
    SKmeans,
}

impl MethodName {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snbclust" => Some(MethodName::SnbClust),
            "snbclust-fused" => Some(MethodName::SnbClustFused),
            "sgclust" => Some(MethodName::SgClust),
            "skmeans" => Some(MethodName::SKmeans),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodName::SnbClust => "snbclust",
            MethodName::SnbClustFused => "snbclust-fused",
            MethodName::SgClust => "sgclust",
            MethodName::SKmeans => "skmeans",
        }
    }
}

/// Ordered key/value settings before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

const DEFAULTS: &[(&str, &str)] = &[
    ("k", "3"),
    ("lambda", "0"),
    ("method", "snbclust"),
    ("out", "."),
    ("replicates", "25"),
    ("restarts", "10"),
    ("scheme", "sim2"),
    ("seed", "0"),
    ("gap_permutations", "10"),
    ("size_factor_method", "median_of_ratios"),
    ("min_mean", "0"),
    ("min_variance_quantile", "0"),
];

impl Settings {
    pub fn defaults() -> Self {
        Self(DEFAULTS.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect())
    }

    /// Keys may be written with dashes or underscores.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.0.insert(key.trim().replace('-', "_"), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        for (k, v) in read_key_values(path)? {
            self.set(&k, v);
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

impl fmt::Display for Settings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.iter() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub command: Command,
    pub method: MethodName,
    /// Methods compared by `benchmark`.
    pub bench_methods: Vec<Method>,
    pub k: usize,
    pub lambda: f64,
    pub lambda_grid: Option<Vec<f64>>,
    pub s_grid: Option<Vec<f64>>,
    pub scheme: Scheme,
    pub gamma: Option<f64>,
    pub alpha: f64,
    pub lib_bounds: Option<(f64, f64)>,
    pub phi: Option<f64>,
    pub replicates: usize,
    pub restarts: usize,
    pub gap_permutations: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub min_mean: f64,
    pub min_variance_quantile: f64,
    pub library_total: bool,
    pub out: PathBuf,
    pub counts: Option<PathBuf>,
    pub gene_sets: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub truth_genes: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub selected: Option<PathBuf>,
    pub size_factors: Option<PathBuf>,
    pub dispersions: Option<PathBuf>,
}

fn bad(key: &str, value: &str, what: &str) -> CliError {
    CliError::Config(format!("{key}={value}: expected {what}"))
}

fn parse_num<T: std::str::FromStr>(s: &Settings, key: &str, what: &str) -> Result<Option<T>> {
    s.get(key).map(|v| v.parse::<T>().map_err(|_| bad(key, v, what))).transpose()
}

fn parse_list(s: &Settings, key: &str) -> Result<Option<Vec<f64>>> {
    s.get(key)
        .map(|v| {
            v.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|_| bad(key, v, "comma-separated numbers")))
                .collect()
        })
        .transpose()
}

fn path(s: &Settings, key: &str) -> Option<PathBuf> {
    s.get(key).map(PathBuf::from)
}

fn required<T>(v: Option<T>, key: &str) -> Result<T> {
    v.ok_or_else(|| CliError::Config(format!("missing setting {key}")))
}

impl RunManifest {
    pub fn from_settings(command: Command, s: &Settings) -> Result<Self> {
        let method_str = required(s.get("method"), "method")?;
        let scheme = match required(s.get("scheme"), "scheme")? {
            "sim1" => Scheme::Sim1,
            "sim2" => Scheme::Sim2,
            "sim3" => Scheme::Sim3,
            v => return Err(bad("scheme", v, "sim1, sim2 or sim3")),
        };
        let method = MethodName::parse(method_str);
        let bench_methods = if command != Command::Benchmark {
            Vec::new()
        } else if method_str.eq_ignore_ascii_case("all") {
            Method::ALL.to_vec()
        } else {
            method_str
                .split(',')
                .map(|m| Method::parse(m.trim()).ok_or_else(|| bad("method", method_str, "snbclust, sgclust, skmeans or all")))
                .collect::<Result<Vec<_>>>()?
        };
        let method = match (command, method) {
            (Command::Benchmark, m) => m.unwrap_or(MethodName::SnbClust),
            (_, Some(m)) => m,
            (_, None) => return Err(bad("method", method_str, "snbclust, snbclust-fused, sgclust or skmeans")),
        };
        let lib_bounds = match parse_list(s, "lib_bounds")? {
            None => None,
            Some(v) if v.len() == 2 => Some((v[0], v[1])),
            Some(_) => return Err(bad("lib_bounds", s.get("lib_bounds").unwrap_or(""), "two numbers LB,UB")),
        };
        let library_total = match required(s.get("size_factor_method"), "size_factor_method")? {
            "median_of_ratios" => false,
            "library_total" => true,
            v => return Err(bad("size_factor_method", v, "median_of_ratios or library_total")),
        };
        Ok(Self {
            command,
            method,
            bench_methods,
            k: required(parse_num(s, "k", "a positive integer")?, "k")?,
            lambda: required(parse_num(s, "lambda", "a number")?, "lambda")?,
            lambda_grid: parse_list(s, "lambda_grid")?,
            s_grid: parse_list(s, "s_grid")?,
            scheme,
            gamma: parse_num(s, "gamma", "a number")?,
            alpha: parse_num(s, "alpha", "a number")?.unwrap_or(0.25),
            lib_bounds,
            phi: parse_num(s, "phi", "a number")?,
            replicates: required(parse_num(s, "replicates", "a positive integer")?, "replicates")?,
            restarts: required(parse_num(s, "restarts", "a positive integer")?, "restarts")?,
            gap_permutations: required(parse_num(s, "gap_permutations", "an integer")?, "gap_permutations")?,
            seed: required(parse_num(s, "seed", "an unsigned 64-bit integer")?, "seed")?,
            threads: parse_num(s, "threads", "a positive integer")?,
            min_mean: required(parse_num(s, "min_mean", "a number")?, "min_mean")?,
            min_variance_quantile: required(parse_num(s, "min_variance_quantile", "a number")?, "min_variance_quantile")?,
            library_total,
            out: required(path(s, "out"), "out")?,
            counts: path(s, "counts"),
            gene_sets: path(s, "gene_sets"),
            truth: path(s, "truth"),
            truth_genes: path(s, "truth_genes"),
            labels: path(s, "labels"),
            scores: path(s, "scores"),
            selected: path(s, "selected"),
            size_factors: path(s, "size_factors"),
            dispersions: path(s, "dispersions"),
        })
    }

    /// Input files that must exist before any work starts.
    pub fn inputs(&self) -> Vec<&Path> {
        [
            &self.counts,
            &self.gene_sets,
            &self.truth,
            &self.truth_genes,
            &self.labels,
            &self.scores,
            &self.selected,
            &self.size_factors,
            &self.dispersions,
        ]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect()
    }

    pub fn check_inputs(&self) -> Result<()> {
        for p in self.inputs() {
            if !p.is_file() {
                return Err(CliError::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found")));
            }
        }
        if self.k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if self.replicates == 0 || self.restarts == 0 {
            return Err(CliError::Config("replicates and restarts must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_sources_win() {
        let mut s = Settings::defaults();
        s.set("k", "4");
        s.set("lambda-grid", "1,2,3");
        let m = RunManifest::from_settings(Command::Fit, &s).unwrap();
        assert_eq!(m.k, 4);
        assert_eq!(m.lambda_grid, Some(vec![1.0, 2.0, 3.0]));
        assert_eq!(m.scheme, Scheme::Sim2);
    }

    #[test]
    fn bad_values_name_the_key() {
        let mut s = Settings::defaults();
        s.set("k", "three");
        let e = RunManifest::from_settings(Command::Fit, &s).unwrap_err();
        assert!(e.to_string().contains("k=three"));
        assert_eq!(e.exit_code(), 3);
    }

    #[test]
    fn benchmark_accepts_method_lists() {
        let mut s = Settings::defaults();
        s.set("method", "sgclust,skmeans");
        let m = RunManifest::from_settings(Command::Benchmark, &s).unwrap();
        assert_eq!(m.bench_methods, vec![Method::SgClust, Method::SKmeans]);
        s.set("method", "all");
        assert_eq!(RunManifest::from_settings(Command::Benchmark, &s).unwrap().bench_methods.len(), 3);
    }

    #[test]
    fn display_round_trips_through_set() {
        let mut s = Settings::defaults();
        s.set("gamma", "0.6");
        let mut t = Settings::default();
        for line in s.to_string().lines() {
            let (k, v) = line.split_once('=').unwrap();
            t.set(k, v);
        }
        assert_eq!(s, t);
    }
}
