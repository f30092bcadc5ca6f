//! Small numeric helpers shared across modules.

/// log(sum(exp(vals))) with max-subtraction. Returns -inf for an empty or
/// all(-inf) input; never overflows for finite inputs.
pub(crate) fn log_sum_exp(vals: &[f64]) -> f64 {
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
