//! Hoeffding-derived confidence weights for pairs of gap estimates.

/// `(max(0, 1 - 2 exp(-2 m eps^2)))^2`. The inner factor is clamped at zero
/// so that indistinguishable gaps get no confidence.
pub fn chi(eps: f64, m_test: usize) -> f64 {
    let inner = (1.0 - 2.0 * (-2.0 * m_test as f64 * eps * eps).exp()).max(0.0);
    inner * inner
}

/// Weight of a pair of runs with gaps `gap_a` and `gap_b`, both measured on
/// `m_test` test points. Zero unless `chi > 0.5`; at most 0.5.
pub fn kappa(gap_a: f64, gap_b: f64, m_test: usize) -> f64 {
    (chi((gap_b - gap_a).abs() / 2.0, m_test) - 0.5).max(0.0)
}

/// The gap difference above which [`kappa`] becomes positive.
pub fn kappa_threshold(m_test: usize) -> f64 {
    2.0 * ((2.0 / (1.0 - 0.5f64.sqrt())).ln() / (2.0 * m_test as f64)).sqrt()
}

/// `(sum w)^2 / sum w^2`; zero when every weight is zero. Weights are
/// rescaled by their maximum first so equal weights give exactly `n`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let max = weights.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let (s, s2) = weights.iter().fold((0.0, 0.0), |(s, s2), &w| {
        let w = w / max;
        (s + w, s2 + w * w)
    });
    s * s / s2
}
