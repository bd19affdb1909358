//! Systolic peak detection: strict local maxima filtered by relative
//! prominence, then thinned by a minimum inter-peak distance where the
//! higher-amplitude candidate wins.

use crate::dsp::Window;

/// Minimum inter-peak spacing in seconds (admits heart rates up to ~170 bpm).
pub const MIN_PEAK_DISTANCE_S: f64 = 0.35;
/// Required prominence as a fraction of the window's amplitude range.
pub const MIN_RELATIVE_PROMINENCE: f64 = 0.25;

/// Returns indices of detected peaks in ascending order. May be empty.
pub fn detect_peaks(window: &Window) -> Vec<usize> {
    let x = &window.samples;
    if x.len() < 3 {
        return Vec::new();
    }

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let range = hi - lo;
    if !(range > 0.0) {
        return Vec::new();
    }
    let min_prominence = MIN_RELATIVE_PROMINENCE * range;

    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..x.len() - 1 {
        if x[i] > x[i - 1] && x[i] > x[i + 1] && prominence(x, i) >= min_prominence {
            candidates.push(i);
        }
    }

    // Thin by minimum distance, highest amplitude first (ties: earlier index).
    let min_dist = (MIN_PEAK_DISTANCE_S * window.fs).floor() as usize;
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        x[candidates[b]]
            .partial_cmp(&x[candidates[a]])
            .unwrap()
            .then(candidates[a].cmp(&candidates[b]))
    });
    let mut suppressed = vec![false; candidates.len()];
    let mut kept = Vec::new();
    for &ci in &order {
        if suppressed[ci] {
            continue;
        }
        kept.push(candidates[ci]);
        for (cj, s) in suppressed.iter_mut().enumerate() {
            if cj != ci && candidates[cj].abs_diff(candidates[ci]) < min_dist {
                *s = true;
            }
        }
    }
    kept.sort_unstable();
    kept
}

/// Topographic prominence of the peak at `i`: height above the higher of the
/// two lowest points separating it from taller terrain (or the window edge).
fn prominence(x: &[f64], i: usize) -> f64 {
    let h = x[i];
    let mut left_min = h;
    for j in (0..i).rev() {
        if x[j] > h {
            break;
        }
        left_min = left_min.min(x[j]);
    }
    let mut right_min = h;
    for &v in &x[i + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}
