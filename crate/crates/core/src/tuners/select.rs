//! Quantile selection over scores where lower is better.

/// Top (best) and bottom (worst) `⌊n/ρ⌋` indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuantileSplit {
    /// Best-scoring indices, ascending by `(score, index)`.
    pub top: Vec<usize>,
    /// Worst-scoring indices strictly worse than every member of `top`.
    pub bottom: Vec<usize>,
    /// Some bottom candidates tied with the top set and were dropped.
    pub degenerate: bool,
}

impl QuantileSplit {
    pub fn is_empty(&self) -> bool {
        self.bottom.is_empty()
    }
}

/// Stable sort by `(score, index)`; the first `⌊n/ρ⌋` form `top`, the last `⌊n/ρ⌋`
/// form the bottom candidates. A candidate whose score does not exceed the worst
/// top score is tied with the donors and is skipped.
pub fn quantile_split(scores: &[f64], rho: usize) -> QuantileSplit {
    let n = scores.len();
    let m = n.checked_div(rho).unwrap_or(0);
    if m == 0 {
        return QuantileSplit::default();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let top = order[..m].to_vec();
    let worst_top = scores[order[m - 1]];
    let bottom: Vec<usize> = order[n - m..]
        .iter()
        .copied()
        .filter(|&i| scores[i].total_cmp(&worst_top).is_gt())
        .collect();
    let degenerate = bottom.len() < m;
    QuantileSplit {
        top,
        bottom,
        degenerate,
    }
}
