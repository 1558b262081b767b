use num_traits::Float;

/// Pairwise (cascade) summation with a fixed split order.
///
/// The result depends only on the slice contents, never on scheduling.
pub(crate) fn pairwise_sum<F: Float>(values: &[F]) -> F {
    const BLOCK: usize = 32;
    if values.len() <= BLOCK {
        return values.iter().fold(F::zero(), |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_sum_on_small_input() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 55.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn long_input() {
        let v = vec![0.1f64; 1000];
        assert!((pairwise_sum(&v) - 100.0).abs() < 1e-12);
    }
}
