//! Small numeric helpers shared by the reductions.

/// Pairwise (cascade) summation in a fixed split order.
///
/// The split points depend only on the slice length, so results are identical
/// from run to run regardless of how the inputs were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 32;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Mean with pairwise summation; `None` for an empty slice.
pub fn pairwise_mean(values: &[f64]) -> Option<f64> {
    let &first = values.first()?;
    // shifted by the first value so constant inputs come back exactly
    let shifted: Vec<f64> = values.iter().map(|v| v - first).collect();
    Some(first + pairwise_sum(&shifted) / values.len() as f64)
}

/// `ln(sum(exp(x)))` with max-shift. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 999.0 * 1000.0 / 2.0);
        assert_eq!(pairwise_mean(&[]), None);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
