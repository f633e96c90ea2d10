use super::tensor::Tensor;

/// Probability floor applied before coding and in the loss.
pub const EPSILON: f64 = 1.0 / 65536.0;

pub fn relu(t: &mut Tensor) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes `grad` where the activation output was clipped.
pub fn relu_backward(output: &Tensor, grad: &mut Tensor) {
    for (g, &o) in grad.data.iter_mut().zip(&output.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `acc += branch` elementwise over matching tensors.
pub fn add_residual(acc: &mut Tensor, branch: &Tensor) {
    debug_assert_eq!(acc.region, branch.region);
    debug_assert_eq!(acc.channels, branch.channels);
    for (a, &b) in acc.data.iter_mut().zip(&branch.data) {
        *a += b;
    }
}

/// Two-way softmax of `(l0, l1)`, with `p1` clamped to `[ε, 1-ε]` and
/// `p0 = 1 - p1`.
#[inline]
pub fn softmax2_pair(l0: f32, l1: f32) -> (f64, f64) {
    let p1 = raw_p1(l0, l1).clamp(EPSILON, 1.0 - EPSILON);
    (1.0 - p1, p1)
}

#[inline]
fn raw_p1(l0: f32, l1: f32) -> f64 {
    1.0 / (1.0 + (l0 as f64 - l1 as f64).exp())
}

/// Occupancy probabilities `p1` for a 2-channel logit tensor.
pub fn softmax2(logits: &Tensor) -> Vec<f64> {
    debug_assert_eq!(logits.channels, 2);
    logits
        .data
        .chunks_exact(2)
        .map(|l| softmax2_pair(l[0], l[1]).1)
        .collect()
}

/// Mean of `-log2 p̂(v_i)` over voxels.
pub fn cross_entropy_bits(p1: &[f64], target: &[u8]) -> f64 {
    assert_eq!(p1.len(), target.len());
    let sum: f64 = p1
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(EPSILON, 1.0 - EPSILON);
            -(if t != 0 { p } else { 1.0 - p }).log2()
        })
        .sum();
    sum / p1.len() as f64
}

/// Loss in bits/voxel and its gradient with respect to the logits.
///
/// The gradient is that of the mean loss in nats, computed from the
/// unclamped softmax.
pub fn occupancy_loss(logits: &Tensor, target: &[u8]) -> (f64, Tensor) {
    assert_eq!(logits.channels, 2);
    assert_eq!(logits.data.len(), 2 * target.len());
    let n = target.len() as f64;
    let mut grad = Tensor::zeros(2, logits.region);
    let mut sum = 0.0f64;
    for (i, (l, &t)) in logits.data.chunks_exact(2).zip(target).enumerate() {
        let raw = raw_p1(l[0], l[1]);
        let p = raw.clamp(EPSILON, 1.0 - EPSILON);
        sum -= if t != 0 { p.ln() } else { (1.0 - p).ln() };
        let d1 = (raw - t as f64) / n;
        grad.data[2 * i] = -d1 as f32;
        grad.data[2 * i + 1] = d1 as f32;
    }
    (sum / n / std::f64::consts::LN_2, grad)
}
