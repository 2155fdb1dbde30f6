//! Numeric-to-categorical bucketing with right-open intervals.

use crate::error::{FgcnnError, Result};

/// Returns `"bucket_j"` where `j` counts the boundaries `<= value`.
pub fn bucketize_numeric(value: f64, boundaries: &[f64]) -> Result<String> {
    if value.is_nan() {
        return Err(FgcnnError::Encoding("NaN cannot be bucketized".into()));
    }
    if boundaries.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(FgcnnError::Config(
            "bucket boundaries must be strictly increasing".into(),
        ));
    }
    let j = boundaries.partition_point(|&b| b <= value);
    Ok(format!("bucket_{j}"))
}

/// Empirical-quantile boundaries giving `n_buckets` roughly equal
/// populations. Duplicate quantiles are merged, so heavily tied samples can
/// yield fewer buckets.
pub fn fit_quantile_boundaries(values: &[f64], n_buckets: usize) -> Result<Vec<f64>> {
    if n_buckets < 1 {
        return Err(FgcnnError::Config("need at least one bucket".into()));
    }
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return Err(FgcnnError::Empty("no finite values to fit bucket boundaries"));
    }
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut out: Vec<f64> = Vec::with_capacity(n_buckets.saturating_sub(1));
    for i in 1..n_buckets {
        let b = sorted[(i * n / n_buckets).min(n - 1)];
        if out.last().map_or(true, |&last| b > last) {
            out.push(b);
        }
    }
    Ok(out)
}
