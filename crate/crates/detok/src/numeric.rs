//! Small numeric helpers shared across the analysis modules.

/// Numerically stable softmax. Returns a vector summing to 1.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Log-softmax via the shifted log-sum-exp.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = scores
        .iter()
        .map(|&s| (s - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    scores.iter().map(|&s| s - lse).collect()
}

/// KL divergence D(P || Q) in nats between two softmax distributions given
/// their logits. Logit vectors that differ only by a constant shift describe
/// the same distribution, so residue below the float noise floor snaps to
/// exactly zero.
pub fn kl_from_logits(p_logits: &[f64], q_logits: &[f64]) -> f64 {
    debug_assert_eq!(p_logits.len(), q_logits.len());
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let kl: f64 = lp
        .iter()
        .zip(&lq)
        .map(|(&a, &b)| a.exp() * (a - b))
        .sum();
    if kl.abs() < 1e-12 {
        0.0
    } else {
        kl
    }
}

/// Population mean of a slice.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance (1/n) of a slice.
pub fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Indices that sort `values` descending; ties broken by lower index first.
pub fn argsort_desc(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Top-k indices by value descending, ties broken by lower index.
pub fn top_k_desc(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx = argsort_desc(values);
    idx.truncate(k);
    idx
}
