//! Reference (full-matrix) masked attention forward pass.
//!
//! This is the oracle path: per-row softmax with max subtraction over the
//! visible entries only. Masked cells never enter the arithmetic, so their
//! probability is exactly zero and no `inf - inf` can arise. Row reductions
//! run sequentially left to right, which keeps results bit-identical across
//! runs.

use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::masks::MaskMatrix;
use crate::matrix::DenseMatrix;
use crate::rng::AttentionInputs;

/// Rows longer than this skip probability retention by default.
pub const PROBS_RETENTION_LIMIT: usize = 4096;

/// Result of a forward pass: per-head `A . V` outputs, optional per-head
/// probability matrices, and per-head logsumexp vectors.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    /// `L x d` output per head.
    pub outputs: Vec<DenseMatrix>,
    /// `L x L` row-stochastic matrix per head, when retained.
    pub probs: Option<Vec<DenseMatrix>>,
    /// Per-head, per-row `log sum exp` over visible logits.
    pub logsumexp: Vec<Vec<f64>>,
}

/// Pre-softmax score matrices, one `L x L` matrix per head:
/// `scores(i, j) = dot(Q_i, K_j) / sqrt(d)`.
pub fn scores(inputs: &AttentionInputs) -> Vec<DenseMatrix> {
    let len = inputs.seq_len();
    let d = inputs.head_dim;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    (0..inputs.num_heads)
        .map(|h| {
            let q = &inputs.queries[h];
            let k = &inputs.keys[h];
            let mut s = DenseMatrix::zeros(len, len);
            for i in 0..len {
                let qi = q.row(i);
                for j in 0..len {
                    let kj = k.row(j);
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += qi[c] * kj[c];
                    }
                    s.set(i, j, dot * inv_sqrt_d);
                }
            }
            s
        })
        .collect()
}

/// Row-softmax a logit matrix (masked cells hold `-inf`) and multiply by
/// `values`. Returns `(output, probs, logsumexp)`.
///
/// Shared by the reference and merged forward passes so that configurations
/// which produce identical logits produce bit-identical outputs.
pub(crate) fn attend(
    logits: &DenseMatrix,
    values: &DenseMatrix,
    retain_probs: bool,
) -> (DenseMatrix, Option<DenseMatrix>, Vec<f64>) {
    let len = logits.rows();
    let d = values.cols();
    let mut output = DenseMatrix::zeros(len, d);
    let mut probs = retain_probs.then(|| DenseMatrix::zeros(len, len));
    let mut lse = vec![f64::NEG_INFINITY; len];
    let mut row_probs = vec![0.0f64; len];

    for (i, lse_i) in lse.iter_mut().enumerate() {
        let row = logits.row(i);
        let mut max = f64::NEG_INFINITY;
        for &v in row {
            if v > max {
                max = v;
            }
        }
        if max == f64::NEG_INFINITY {
            // Fully masked row: cannot occur for our masks (diagonal is
            // always visible) but degrade to zero output rather than NaN.
            continue;
        }
        let mut total = 0.0;
        for (j, &v) in row.iter().enumerate() {
            let e = if v == f64::NEG_INFINITY {
                0.0
            } else {
                (v - max).exp()
            };
            row_probs[j] = e;
            total += e;
        }
        *lse_i = max + total.ln();
        let inv = 1.0 / total;
        for p in row_probs.iter_mut() {
            *p *= inv;
        }
        if let Some(p) = probs.as_mut() {
            p.row_mut(i).copy_from_slice(&row_probs);
        }
        let out_row = output.row_mut(i);
        for (j, &p) in row_probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let v_row = values.row(j);
            for c in 0..d {
                out_row[c] += p * v_row[c];
            }
        }
    }
    (output, probs, lse)
}

/// Apply `mask` to per-head scores and run the softmax-attention forward
/// pass. Probabilities are retained when `L <=` [`PROBS_RETENTION_LIMIT`].
pub fn masked_forward(inputs: &AttentionInputs, mask: &MaskMatrix) -> Result<AttentionOutput> {
    masked_forward_opts(inputs, mask, inputs.seq_len() <= PROBS_RETENTION_LIMIT)
}

/// [`masked_forward`] with explicit probability retention.
pub fn masked_forward_opts(
    inputs: &AttentionInputs,
    mask: &MaskMatrix,
    retain_probs: bool,
) -> Result<AttentionOutput> {
    if mask.layout() != inputs.layout {
        return Err(Error::ShapeMismatch {
            context: "mask layout vs inputs layout",
            expected: format!("{:?}", inputs.layout),
            got: format!("{:?}", mask.layout()),
        });
    }
    let len = inputs.seq_len();
    let score_mats = scores(inputs);
    let mut outputs = Vec::with_capacity(inputs.num_heads);
    let mut probs_all = retain_probs.then(Vec::new);
    let mut lse_all = Vec::with_capacity(inputs.num_heads);
    for (h, s) in score_mats.iter().enumerate() {
        let mut logits = DenseMatrix::zeros(len, len);
        for i in 0..len {
            for j in 0..len {
                let v = if mask.is_masked(i, j) {
                    f64::NEG_INFINITY
                } else {
                    s.get(i, j)
                };
                logits.set(i, j, v);
            }
        }
        let (out, probs, lse) = attend(&logits, &inputs.values[h], retain_probs);
        outputs.push(out);
        if let (Some(all), Some(p)) = (probs_all.as_mut(), probs) {
            all.push(p);
        }
        lse_all.push(lse);
    }
    Ok(AttentionOutput {
        outputs,
        probs: probs_all,
        logsumexp: lse_all,
    })
}

/// Per-row divergence between two attention distributions.
#[derive(Debug, Clone)]
pub struct DistributionGap {
    /// Symmetric KL per query row, over the shared support.
    pub per_row: Vec<f64>,
    /// Mean over visual query rows (0 when there are none).
    pub visual_mean: f64,
    /// Mean over text query rows (0 when there are none).
    pub text_mean: f64,
}

/// Symmetric KL divergence between two row-stochastic matrices, restricted
/// per row to the intersection of their supports and renormalized there.
///
/// Quantifies how far a relaxed mask's attention pattern drifts from the
/// causal baseline; rows are already discrete distributions, so plain
/// symmetric KL needs no density smoothing.
pub fn distribution_gap(
    probs_a: &DenseMatrix,
    probs_b: &DenseMatrix,
    layout: SequenceLayout,
) -> Result<DistributionGap> {
    let len = layout.len();
    for (name, p) in [("probs_a", probs_a), ("probs_b", probs_b)] {
        if p.rows() != len || p.cols() != len {
            return Err(Error::ShapeMismatch {
                context: "distribution_gap matrix",
                expected: format!("{len}x{len}"),
                got: format!("{}x{} ({name})", p.rows(), p.cols()),
            });
        }
    }
    let mut per_row = Vec::with_capacity(len);
    for i in 0..len {
        let a = probs_a.row(i);
        let b = probs_b.row(i);
        let mut sum_a = 0.0;
        let mut sum_b = 0.0;
        for j in 0..len {
            if a[j] > 0.0 && b[j] > 0.0 {
                sum_a += a[j];
                sum_b += b[j];
            }
        }
        if sum_a == 0.0 || sum_b == 0.0 {
            return Err(Error::EmptySupport { row: i + 1 });
        }
        let mut gap = 0.0;
        for j in 0..len {
            if a[j] > 0.0 && b[j] > 0.0 {
                let pa = a[j] / sum_a;
                let pb = b[j] / sum_b;
                gap += pa * (pa / pb).ln() + pb * (pb / pa).ln();
            }
        }
        per_row.push(gap);
    }
    let m = layout.num_visual();
    let mean = |slice: &[f64]| {
        if slice.is_empty() {
            0.0
        } else {
            slice.iter().sum::<f64>() / slice.len() as f64
        }
    };
    Ok(DistributionGap {
        visual_mean: mean(&per_row[..m]),
        text_mean: mean(&per_row[m..]),
        per_row,
    })
}
