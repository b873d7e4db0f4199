use crate::error::{Error, Result};

/// Trailing mean over the last `min(i + 1, window)` values.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::contract("moving average window must be >= 1"));
    }
    let out = (0..series.len())
        .map(|i| {
            let start = (i + 1).saturating_sub(window);
            mean(&series[start..=i])
        })
        .collect();
    Ok(out)
}

/// First index `i >= window - 1` whose trailing `window`-mean reaches
/// `threshold`. A zero window is treated as 1.
pub fn episodes_to_threshold(series: &[f64], threshold: f64, window: usize) -> Option<usize> {
    let window = window.max(1);
    if series.len() < window {
        return None;
    }
    (window - 1..series.len()).find(|&i| mean(&series[i + 1 - window..=i]) >= threshold)
}

// Mean taken relative to the first value, so constant slices come back exact.
fn mean(values: &[f64]) -> f64 {
    let pivot = values[0];
    pivot + values.iter().map(|&x| x - pivot).sum::<f64>() / values.len() as f64
}

/// Median with the two middle values averaged; `None` for an empty slice.
/// Infinities are allowed and sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    // Equal middles are returned as-is so that two infinities stay infinite.
    Some(if v.len() % 2 == 1 || v[mid - 1] == v[mid] {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    })
}
