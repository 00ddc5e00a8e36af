/// Benjamini–Hochberg step-up threshold: the largest `p₍ᵢ₎` with
/// `p₍ᵢ₎ ≤ i·q/M`, or `None` when nothing is rejected.
pub fn bh_threshold(pvals: &[f64], q: f64) -> Option<f64> {
    let m = pvals.len();
    let mut sorted = pvals.to_vec();
    sorted.sort_by(f64::total_cmp);
    (1..=m)
        .rev()
        .find(|&i| sorted[i - 1] <= i as f64 * q / m as f64)
        .map(|i| sorted[i - 1])
}

/// Rejection mask of the Benjamini–Hochberg procedure at level `q`.
pub fn fdr_bh(pvals: &[f64], q: f64) -> Vec<bool> {
    match bh_threshold(pvals, q) {
        Some(t) => pvals.iter().map(|&p| p <= t).collect(),
        None => vec![false; pvals.len()],
    }
}
