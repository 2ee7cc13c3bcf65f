//! Click-to-preference inference.

use super::TrainingPair;

/// Position pairs `(clicked, skipped)` inferred from a click vector.
///
/// Every position up to and including the last click counts as examined; a
/// clicked position is preferred over every unclicked examined position.
pub fn infer_pair_positions(clicks: &[bool]) -> Vec<(usize, usize)> {
    let Some(last) = clicks.iter().rposition(|&c| c) else {
        return Vec::new();
    };
    let examined = &clicks[..=last];
    let mut out = Vec::new();
    for (m, &cm) in examined.iter().enumerate() {
        if !cm {
            continue;
        }
        for (n, &cn) in examined.iter().enumerate() {
            if !cn {
                out.push((m, n));
            }
        }
    }
    out
}

/// Training pairs `(x_m − x_n, y = 1)` for the displayed feature vectors.
/// `displayed` and `clicks` are aligned by position; extra clicks beyond the
/// displayed list are ignored.
pub fn infer_pairs(displayed: &[&[f64]], clicks: &[bool]) -> Vec<TrainingPair> {
    let shown = &clicks[..clicks.len().min(displayed.len())];
    infer_pair_positions(shown)
        .into_iter()
        .map(|(m, n)| TrainingPair {
            diff: displayed[m]
                .iter()
                .zip(displayed[n])
                .map(|(a, b)| a - b)
                .collect(),
            label: true,
        })
        .collect()
}
