use ndarray::Array2;

/// Softmax cross-entropy, averaged over the batch.
///
/// Returns (loss, dlogits, probabilities). The gradient is already divided by
/// the batch size so it can be fed straight into the backward pass.
pub fn softmax_cross_entropy(
    logits: &Array2<f32>,
    labels: &[usize],
) -> (f32, Array2<f32>, Array2<f32>) {
    let (n, k) = logits.dim();
    debug_assert_eq!(labels.len(), n);
    let mut probs = logits.clone();
    let mut loss = 0.0f32;
    for (i, mut row) in probs.rows_mut().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0f32;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        debug_assert!(labels[i] < k);
        // Clamp away log-of-zero but keep NaN: `max` would swap a NaN
        // probability for the epsilon and hide a poisoned forward pass.
        loss -= row[labels[i]].clamp(1e-12, 1.0).ln();
    }
    loss /= n as f32;
    let mut dlogits = probs.clone();
    let inv_n = 1.0 / n as f32;
    for (i, mut row) in dlogits.rows_mut().into_iter().enumerate() {
        row[labels[i]] -= 1.0;
        row.mapv_inplace(|v| v * inv_n);
    }
    (loss, dlogits, probs)
}
