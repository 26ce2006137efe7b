//! Elementwise activations, Gumbel noise and the conditional BCE loss.

use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut1};
use rand::Rng;

pub const LEAKY_SLOPE: f64 = 0.2;

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

pub fn leaky_relu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Standard Gumbel(0, 1) draw.
pub fn sample_gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    // open interval keeps both logs finite
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

pub fn gumbel_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || sample_gumbel(rng))
}

/// `softmax((logits + gumbel) / tau)` written into `out`.
pub fn gumbel_softmax(logits: ArrayView1<f64>, gumbel: ArrayView1<f64>, tau: f64, mut out: ArrayViewMut1<f64>) {
    let mut max = f64::NEG_INFINITY;
    for (o, (&l, &g)) in out.iter_mut().zip(logits.iter().zip(gumbel)) {
        *o = (l + g) / tau;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Backward of [`gumbel_softmax`] given its output `y`: `dl = y ⊙ (dy − ⟨y, dy⟩) / τ`.
pub fn gumbel_softmax_backward(y: ArrayView1<f64>, dy: ArrayView1<f64>, tau: f64, mut dl: ArrayViewMut1<f64>) {
    let dot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
    for ((d, &yi), &dyi) in dl.iter_mut().zip(y).zip(dy) {
        *d = yi * (dyi - dot) / tau;
    }
}

/// Numerically stable `BCE(sigmoid(logit), target)`.
pub fn bce_with_logits(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + (-logit.abs()).exp().ln_1p()
}

/// d/dlogit of [`bce_with_logits`].
pub fn bce_with_logits_grad(logit: f64, target: f64) -> f64 {
    1.0 / (1.0 + (-logit).exp()) - target
}

/// Mean BCE-with-logits over selected `(row, column)` entries of `logits`
/// against `targets`, and its gradient w.r.t. `logits` (zero elsewhere).
pub fn masked_bce(
    logits: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    entries: &[(usize, usize)],
) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    if entries.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / entries.len() as f64;
    let mut loss = 0.0;
    for &(r, c) in entries {
        let (l, t) = (logits[[r, c]], targets[[r, c]]);
        loss += bce_with_logits(l, t);
        grad[[r, c]] += bce_with_logits_grad(l, t) * scale;
    }
    (loss * scale, grad)
}
