//! Genes × samples count matrices.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// Non-negative integer counts, genes in rows and samples in columns.
#[derive(Debug, Clone, PartialEq)]
pub struct CountMatrix {
    gene_ids: Vec<String>,
    sample_ids: Vec<String>,
    counts: Vec<u64>,
}

fn check_distinct(ids: &[String], what: &str) -> Result<()> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::validation(format!("duplicate {what} id {id:?}")));
        }
    }
    Ok(())
}

impl CountMatrix {
    /// Builds a validated matrix from row-major (gene-major) counts.
    pub fn new(gene_ids: Vec<String>, sample_ids: Vec<String>, counts: Vec<u64>) -> Result<Self> {
        if gene_ids.is_empty() {
            return Err(Error::validation("count matrix needs at least one gene"));
        }
        if sample_ids.len() < 2 {
            return Err(Error::validation("count matrix needs at least two samples"));
        }
        if counts.len() != gene_ids.len() * sample_ids.len() {
            return Err(Error::validation(format!(
                "{} cells for {} genes x {} samples",
                counts.len(),
                gene_ids.len(),
                sample_ids.len()
            )));
        }
        check_distinct(&gene_ids, "gene")?;
        check_distinct(&sample_ids, "sample")?;
        Ok(Self {
            gene_ids,
            sample_ids,
            counts,
        })
    }

    /// Matrix with generated ids `g1..gG` and `s1..sn`.
    pub fn from_counts(n_genes: usize, n_samples: usize, counts: Vec<u64>) -> Result<Self> {
        let genes = (1..=n_genes).map(|j| format!("g{j}")).collect();
        let samples = (1..=n_samples).map(|i| format!("s{i}")).collect();
        Self::new(genes, samples, counts)
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn gene_ids(&self) -> &[String] {
        &self.gene_ids
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    #[inline]
    pub fn get(&self, gene: usize, sample: usize) -> u64 {
        self.counts[gene * self.n_samples() + sample]
    }

    #[inline]
    pub fn row(&self, gene: usize) -> &[u64] {
        let n = self.n_samples();
        &self.counts[gene * n..(gene + 1) * n]
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.counts
    }

    pub fn column_sums(&self) -> Vec<u64> {
        let mut sums = alloc::vec![0u64; self.n_samples()];
        for j in 0..self.n_genes() {
            for (s, &y) in sums.iter_mut().zip(self.row(j)) {
                *s += y;
            }
        }
        sums
    }

    pub fn row_f64(&self, gene: usize) -> Vec<f64> {
        self.row(gene).iter().map(|&y| y as f64).collect()
    }

    /// Keeps the listed genes, in the given order.
    pub fn select_genes(&self, genes: &[usize]) -> Result<Self> {
        if genes.is_empty() {
            return Err(Error::Empty("no genes selected".into()));
        }
        let mut counts = Vec::with_capacity(genes.len() * self.n_samples());
        for &j in genes {
            counts.extend_from_slice(self.row(j));
        }
        Self::new(
            genes.iter().map(|&j| self.gene_ids[j].clone()).collect(),
            self.sample_ids.clone(),
            counts,
        )
    }

    /// Copy with every count passed through `f(gene, sample, count)`.
    pub fn map_counts(&self, mut f: impl FnMut(usize, usize, u64) -> u64) -> Self {
        let n = self.n_samples();
        let counts = self
            .counts
            .iter()
            .enumerate()
            .map(|(idx, &y)| f(idx / n, idx % n, y))
            .collect();
        Self {
            gene_ids: self.gene_ids.clone(),
            sample_ids: self.sample_ids.clone(),
            counts,
        }
    }

    pub fn gene_mean(&self, gene: usize) -> f64 {
        math::mean(&self.row_f64(gene))
    }

    pub fn gene_variance(&self, gene: usize) -> f64 {
        math::sample_variance(&self.row_f64(gene))
    }
}

/// Keeps genes whose mean count is at least `min_mean` and whose sample
/// variance is at least the `min_variance_quantile` quantile of all gene
/// variances. Input order is preserved.
pub fn filter_genes(m: &CountMatrix, min_mean: f64, min_variance_quantile: f64) -> Result<CountMatrix> {
    if !(min_mean >= 0.0) {
        return Err(Error::validation("min_mean must be non-negative"));
    }
    if !(0.0..=1.0).contains(&min_variance_quantile) {
        return Err(Error::validation("variance quantile must lie in [0, 1]"));
    }
    let variances: Vec<f64> = (0..m.n_genes()).map(|j| m.gene_variance(j)).collect();
    let var_cut = math::quantile(&variances, min_variance_quantile);
    let keep: Vec<usize> = (0..m.n_genes())
        .filter(|&j| m.gene_mean(j) >= min_mean && variances[j] >= var_cut)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty("every gene was filtered out".into()));
    }
    m.select_genes(&keep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ids(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn rejects_duplicate_gene_ids() {
        let genes = vec!["A".into(), "A".into()];
        let err = CountMatrix::new(genes, ids("s", 2), vec![1, 2, 3, 4]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn needs_two_samples() {
        assert!(CountMatrix::new(ids("g", 1), ids("s", 1), vec![1]).is_err());
    }

    #[test]
    fn mean_threshold_is_inclusive_above() {
        // means 9.5 and 10
        let m = CountMatrix::new(ids("g", 2), ids("s", 2), vec![9, 10, 10, 10]).unwrap();
        let f = filter_genes(&m, 10.0, 0.0).unwrap();
        assert_eq!(f.gene_ids(), &["g1".to_string()]);
    }

    #[test]
    fn zero_thresholds_are_identity() {
        let m = CountMatrix::new(ids("g", 3), ids("s", 2), vec![0, 0, 1, 5, 7, 7]).unwrap();
        assert_eq!(filter_genes(&m, 0.0, 0.0).unwrap(), m);
    }

    #[test]
    fn known_means_filter() {
        // row means 2, 6, 12, 40
        let m = CountMatrix::new(
            ids("g", 4),
            ids("s", 2),
            vec![1, 3, 5, 7, 10, 14, 30, 50],
        )
        .unwrap();
        let f = filter_genes(&m, 5.0, 0.0).unwrap();
        assert_eq!(f.gene_ids(), &["g1".to_string(), "g2".into(), "g3".into()]);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let m = CountMatrix::new(ids("g", 2), ids("s", 2), vec![1, 1, 2, 2]).unwrap();
        assert!(matches!(filter_genes(&m, 100.0, 0.0), Err(Error::Empty(_))));
    }

    #[test]
    fn variance_cut_tightens_on_reapplication() {
        // variances 0, 2, 8, 18: the median cut moves up once the low half is gone
        let m = CountMatrix::new(ids("g", 4), ids("s", 2), vec![5, 5, 4, 6, 3, 7, 2, 8]).unwrap();
        let once = filter_genes(&m, 0.0, 0.5).unwrap();
        assert_eq!(once.gene_ids(), &["g2".to_string(), "g3".into()]);
        let twice = filter_genes(&once, 0.0, 0.5).unwrap();
        assert_eq!(twice.gene_ids(), &["g3".to_string()]);
    }

    proptest::proptest! {
        #[test]
        fn mean_filter_is_idempotent(
            counts in proptest::collection::vec(0u64..40, 24),
            min_mean in 0.0f64..30.0,
        ) {
            let m = CountMatrix::from_counts(6, 4, counts).unwrap();
            if let Ok(once) = filter_genes(&m, min_mean, 0.0) {
                proptest::prop_assert_eq!(filter_genes(&once, min_mean, 0.0).unwrap(), once);
            }
        }
    }
}
