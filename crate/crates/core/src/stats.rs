//! Small order-statistics helpers shared by the series builders.

use crate::scalar::Scalar;

/// Median of a slice. Returns `None` on empty input.
///
/// Even-length inputs average the two middle elements. Values must be
/// comparable (no NaN); the callers validate inputs at parse time.
pub fn median<F: Scalar>(values: &[F]) -> Option<F> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).expect("median input must not contain NaN"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        Some(sorted[mid])
    } else {
        Some((sorted[mid - 1] + sorted[mid]) / F::c(2.0))
    }
}

/// Minimum of a slice under total order. `None` on empty input.
pub fn min<F: Scalar>(values: &[F]) -> Option<F> {
    values
        .iter()
        .copied()
        .min_by(|a, b| a.partial_cmp(b).expect("min input must not contain NaN"))
}
