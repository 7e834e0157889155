/// Column-wise maximum of a `[rows, width]` matrix with the winning row per
/// column (lowest index on ties).
#[derive(Debug, Clone, PartialEq)]
pub struct MaxPool {
    pub values: Vec<f32>,
    pub argmax: Vec<usize>,
}

pub fn max_pool_over_points(features: &[f32], rows: usize, width: usize) -> MaxPool {
    assert!(rows >= 1, "max pooling needs at least one row");
    assert_eq!(features.len(), rows * width);
    let mut values = features[..width].to_vec();
    let mut argmax = vec![0; width];
    for (r, row) in features.chunks_exact(width).enumerate().skip(1) {
        for ((v, a), &x) in values.iter_mut().zip(argmax.iter_mut()).zip(row) {
            if x > *v {
                *v = x;
                *a = r;
            }
        }
    }
    MaxPool { values, argmax }
}

/// Routes each column's gradient to its argmax row.
pub fn max_pool_backward(grad: &[f32], argmax: &[usize], rows: usize) -> Vec<f32> {
    let width = argmax.len();
    assert_eq!(grad.len(), width);
    let mut out = vec![0.0; rows * width];
    for (c, (&g, &r)) in grad.iter().zip(argmax).enumerate() {
        out[r * width + c] = g;
    }
    out
}
