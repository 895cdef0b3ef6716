//! Small order statistics shared by the measure and evaluation code.

/// Nearest-rank-lower percentile of already sorted values: the element at
/// index `floor(p / 100 * (n - 1))`. Returns `None` for an empty slice.
pub fn percentile_lower(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let p = p.clamp(0.0, 100.0);
    let idx = ((p / 100.0) * (sorted.len() - 1) as f64).floor() as usize;
    Some(sorted[idx.min(sorted.len() - 1)])
}

/// Sorts a copy with `total_cmp` and takes [`percentile_lower`].
pub fn percentile_lower_unsorted(values: &[f64], p: f64) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_lower(&v, p)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Median of sorted values; the average of the two middle elements for
/// even lengths.
pub fn median(sorted: &[f64]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2]),
        _ => Some(0.5 * (sorted[n / 2 - 1] + sorted[n / 2])),
    }
}
