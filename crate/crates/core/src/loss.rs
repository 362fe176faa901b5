//! N-pair loss over squared Euclidean distances.
//!
//! For a batch of `B` users with anchor `a_i` and positive `p_i`, every other
//! positive `p_j` acts as a negative for anchor `i`:
//!
//! ```text
//! L = 1/B Σ_i log(1 + Σ_{j≠i} exp(d²(a_i, p_i) − d²(a_i, p_j)))
//! ```
//!
//! Each inner term is evaluated as a log-sum-exp over `{0} ∪ {z_ij}` with the
//! maximum subtracted, so it stays finite for arbitrarily large distances.

use alloc::vec::Vec;

use crate::math::{exp, ln};
use crate::nn::squared_distance;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct NPairLoss {
    pub loss: f64,
    /// Gradient with respect to each anchor embedding.
    pub grad_anchors: Vec<Vec<f64>>,
    /// Gradient with respect to each positive embedding.
    pub grad_positives: Vec<Vec<f64>>,
}

pub fn npair_loss<A: AsRef<[f64]>, P: AsRef<[f64]>>(anchors: &[A], positives: &[P]) -> Result<NPairLoss> {
    let b = anchors.len();
    if positives.len() != b {
        return Err(Error::DimensionMismatch { expected: b, got: positives.len() });
    }
    if b < 2 {
        return Err(Error::BatchTooSmall(b));
    }
    let dim = anchors[0].as_ref().len();
    for v in anchors.iter().map(AsRef::as_ref).chain(positives.iter().map(AsRef::as_ref)) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
    }

    let scale = 1.0 / b as f64;
    let mut grad_anchors = alloc::vec![alloc::vec![0.0; dim]; b];
    let mut grad_positives = alloc::vec![alloc::vec![0.0; dim]; b];
    let mut total = 0.0;
    let mut z = alloc::vec![0.0; b];
    for i in 0..b {
        let a = anchors[i].as_ref();
        let p_i = positives[i].as_ref();
        let d_pos = squared_distance(a, p_i);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = if j == i { f64::NEG_INFINITY } else { d_pos - squared_distance(a, positives[j].as_ref()) };
        }
        // The implicit "1" inside the log is exp(0).
        let m = z.iter().copied().fold(0.0_f64, f64::max);
        let base = exp(-m);
        let sum: f64 = base + z.iter().map(|&zj| exp(zj - m)).sum::<f64>();
        total += m + ln(sum);

        // softmax weight of z_ij; z_ii = -inf contributes nothing
        for j in (0..b).filter(|&j| j != i) {
            let w = exp(z[j] - m) / sum * scale;
            if w == 0.0 {
                continue;
            }
            let p_j = positives[j].as_ref();
            // ∂z_ij/∂a_i = 2(p_j − p_i), ∂z_ij/∂p_i = −2(a_i − p_i), ∂z_ij/∂p_j = 2(a_i − p_j)
            for k in 0..dim {
                grad_anchors[i][k] += w * 2.0 * (p_j[k] - p_i[k]);
                grad_positives[i][k] -= w * 2.0 * (a[k] - p_i[k]);
                grad_positives[j][k] += w * 2.0 * (a[k] - p_j[k]);
            }
        }
    }
    Ok(NPairLoss { loss: total * scale, grad_anchors, grad_positives })
}
