use crate::nn::{ForwardScratch, Network};
use crate::stats::percentile_lower;
use crate::trainer::Dataset;

use super::MeasureError;

/// Per-example margins: true-class logit minus the largest other logit.
pub fn margins(net: &Network, data: &Dataset) -> Vec<f64> {
    let mut scratch = ForwardScratch::new(net);
    (0..data.len())
        .map(|i| {
            let logits = net.forward_row(data.row(i), &mut scratch);
            let y = data.labels[i];
            let other = logits
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != y)
                .map(|(_, &z)| z)
                .fold(f64::NEG_INFINITY, f64::max);
            logits[y] - other
        })
        .collect()
}

/// The nearest-rank-lower `p`-th percentile of the training margins. May be
/// zero or negative.
pub fn margin_percentile(net: &Network, data: &Dataset, p: f64) -> Result<f64, MeasureError> {
    if data.is_empty() {
        return Err(MeasureError::EmptyTrainSet);
    }
    if net.output_dim() < 2 {
        return Err(MeasureError::Context("margins need at least two classes".into()));
    }
    let mut m = margins(net, data);
    m.sort_by(f64::total_cmp);
    Ok(percentile_lower(&m, p).expect("nonempty"))
}
