//! Clustering and feature-selection metrics: adjusted Rand index, ROC AUC,
//! one-sided Fisher exact enrichment with Benjamini–Hochberg adjustment.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, ln_choose};

fn choose2(x: u64) -> f64 {
    (x * x.saturating_sub(1) / 2) as f64
}

/// Hubert–Arabie adjusted Rand index between two labellings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation("label vectors differ in length"));
    }
    if a.is_empty() {
        return Err(Error::validation("empty label vectors"));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if max_index == expected {
        // both partitions trivial (all-in-one or all singletons)
        return Ok(if index == expected { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max_index - expected))
}

/// Area under the ROC curve as the Mann–Whitney statistic; ties count ½.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    if scores.len() != truth.len() {
        return Err(Error::validation("scores and truth differ in length"));
    }
    let n_pos = truth.iter().filter(|&&t| t).count();
    let n_neg = truth.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::validation("truth must contain both classes"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::validation("NaN score"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // average ranks over tie blocks
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let avg_rank = 0.5 * ((start + 1) + end) as f64;
        let pos_in_block = order[start..end].iter().filter(|&&i| truth[i]).count();
        rank_sum_pos += avg_rank * pos_in_block as f64;
        start = end;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Selected/unselected × in-set/not-in-set counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContingencyTable2x2 {
    /// selected ∩ in set
    pub a: u64,
    /// selected ∩ not in set
    pub b: u64,
    /// unselected ∩ in set
    pub c: u64,
    /// unselected ∩ not in set
    pub d: u64,
}

impl ContingencyTable2x2 {
    pub fn from_masks(selected: &[bool], in_set: &[bool]) -> Result<Self> {
        if selected.len() != in_set.len() {
            return Err(Error::validation("masks cover different gene universes"));
        }
        let mut t = Self { a: 0, b: 0, c: 0, d: 0 };
        for (&s, &g) in selected.iter().zip(in_set) {
            match (s, g) {
                (true, true) => t.a += 1,
                (true, false) => t.b += 1,
                (false, true) => t.c += 1,
                (false, false) => t.d += 1,
            }
        }
        Ok(t)
    }

    pub fn total(&self) -> u64 {
        self.a + self.b + self.c + self.d
    }

    /// One-sided over-representation p-value `P(X ≥ a)` under the
    /// hypergeometric null with the table margins fixed.
    pub fn fisher_greater(&self) -> f64 {
        let n_total = self.total();
        let set_size = self.a + self.c;
        let drawn = self.a + self.b;
        let hi = set_size.min(drawn);
        let denom = ln_choose(n_total, drawn);
        let mut p = 0.0;
        for x in self.a..=hi {
            p += exp(ln_choose(set_size, x) + ln_choose(n_total - set_size, drawn - x) - denom);
        }
        p.min(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Enrichment {
    pub name: String,
    pub table: ContingencyTable2x2,
    pub p_value: f64,
    /// Benjamini–Hochberg adjusted p-value across all sets tested together.
    pub fdr: f64,
    /// Set when the gene set was empty (p forced to 1).
    pub empty_set: bool,
}

/// Fisher over-representation test of the selected genes in every set.
pub fn fisher_enrichment(selected: &[bool], gene_sets: &[(String, Vec<bool>)]) -> Result<Vec<Enrichment>> {
    let mut out = Vec::with_capacity(gene_sets.len());
    for (name, mask) in gene_sets {
        let table = ContingencyTable2x2::from_masks(selected, mask)?;
        let empty_set = table.a + table.c == 0;
        let p_value = if empty_set { 1.0 } else { table.fisher_greater() };
        out.push(Enrichment {
            name: name.clone(),
            table,
            p_value,
            fdr: f64::NAN,
            empty_set,
        });
    }
    let p: Vec<f64> = out.iter().map(|e| e.p_value).collect();
    for (e, q) in out.iter_mut().zip(benjamini_hochberg(&p)) {
        e.fdr = q;
    }
    Ok(out)
}

/// Benjamini–Hochberg step-up adjusted p-values, in input order.
pub fn benjamini_hochberg(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &idx) in order.iter().enumerate().rev() {
        running = running.min(p[idx] * m as f64 / (rank + 1) as f64);
        q[idx] = running.min(1.0);
    }
    q
}
