//! Local-maximum search on sampled curves.

/// Indices of local maxima whose value is at least `rel_threshold` times the
/// global maximum. A plateau reports its first sample.
pub fn find_peaks(values: &[f64], rel_threshold: f64) -> Vec<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Vec::new();
    }
    let floor = rel_threshold * max;
    let n = values.len();
    (0..n)
        .filter(|&k| {
            let v = values[k];
            let left = k == 0 || values[k - 1] < v;
            let right = k + 1 == n || values[k + 1] <= v;
            v >= floor && left && right
        })
        .collect()
}

/// Like [`find_peaks`], but keeps only the highest peak within any
/// `min_separation` samples, so counting noise on a peak's flank does not
/// register as a second peak. Returned in ascending index order.
pub fn find_separated_peaks(values: &[f64], rel_threshold: f64, min_separation: usize) -> Vec<usize> {
    let mut candidates = find_peaks(values, rel_threshold);
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for c in candidates {
        if kept.iter().all(|&k| k.abs_diff(c) >= min_separation) {
            kept.push(c);
        }
    }
    kept.sort_unstable();
    kept
}

/// Sub-sample position of the peak at `k` from a parabola through its
/// neighbours, in units of samples.
pub fn refine_peak(values: &[f64], k: usize) -> f64 {
    if k == 0 || k + 1 >= values.len() {
        return k as f64;
    }
    let (a, b, c) = (values[k - 1], values[k], values[k + 1]);
    let denom = a - 2.0 * b + c;
    if denom == 0.0 {
        return k as f64;
    }
    k as f64 + 0.5 * (a - c) / denom
}
