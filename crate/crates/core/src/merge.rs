//! Light future-aware attention: pool each row's visible future scores and
//! merge the summary into leading past (attention sink) columns.
//!
//! Pooling runs over the *compacted* sequence of indicator-true scores, not
//! the elementwise product of scores with the indicator: inserting zeros at
//! masked positions would beat genuinely negative scores inside max windows.
//! `T` is the count of visible future positions in the row. Windows of size
//! `k` slide with stride 1 over the compacted sequence; each window
//! contributes its max, and the contributions are summed. A short row
//! (`0 < T < k`) contributes a single truncated-window max so late visual
//! rows are not silently inert.

use crate::attention::{attend, scores, AttentionOutput, PROBS_RETENTION_LIMIT};
use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::masks::{visible, MaskKind};
use crate::matrix::DenseMatrix;
use crate::rng::AttentionInputs;

/// How the pooled score is spread over the first `min(p, i)` columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribute {
    /// Each prefix column receives the full scaled pooled score.
    Replicate,
    /// The scaled pooled score is split evenly across the prefix columns.
    DivideByPrefix,
}

/// Kernel pooling and sink-merge parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    /// Sliding-window size `k >= 1`; `k = 1` degenerates to summation.
    pub kernel_size: usize,
    /// Number of leading past columns that receive the merged score.
    pub prefix_size: usize,
    /// Multiplier applied to the pooled score before merging.
    pub merge_scale: f64,
    pub distribute: Distribute,
}

impl Default for MergeConfig {
    fn default() -> Self {
        Self {
            kernel_size: 1,
            prefix_size: 1,
            merge_scale: 1.0,
            distribute: Distribute::Replicate,
        }
    }
}

/// Boolean `L x L` matrix marking visible future cells.
#[derive(Debug, Clone)]
pub struct FutureIndicator {
    len: usize,
    data: Vec<bool>,
}

impl FutureIndicator {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.len + c]
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[bool] {
        &self.data[r * self.len..(r + 1) * self.len]
    }
}

/// Per-row pooled future scores and how many future cells fed each one.
#[derive(Debug, Clone)]
pub struct MergeSummary {
    /// Pooled score per row; 0 for rows with no visible future (all text rows).
    pub pooled: Vec<f64>,
    /// Count of visible future positions per row.
    pub valid_future_counts: Vec<usize>,
}

/// Cell `(i, j)` is true iff `j > i` and the cell is visible under `kind`.
/// `Causal` yields the all-false matrix.
pub fn future_indicator(layout: SequenceLayout, kind: MaskKind) -> FutureIndicator {
    let len = layout.len();
    let mut data = vec![false; len * len];
    for i in 1..=len {
        for j in (i + 1)..=len {
            if visible(layout, kind, i, j) {
                data[(i - 1) * len + (j - 1)] = true;
            }
        }
    }
    FutureIndicator { len, data }
}

/// Pool one row: compact the indicator-true scores in column order, then sum
/// stride-1 sliding-window maxima of width `k` (see module docs for the
/// short-row rules).
pub fn pool_row(scores_row: &[f64], indicator_row: &[bool], k: usize) -> f64 {
    assert!(k >= 1, "kernel size must be >= 1");
    assert_eq!(scores_row.len(), indicator_row.len());
    let compacted: Vec<f64> = scores_row
        .iter()
        .zip(indicator_row)
        .filter_map(|(&s, &keep)| keep.then_some(s))
        .collect();
    pool_compacted(&compacted, k)
}

/// Pooling over an already-compacted future-score sequence.
pub(crate) fn pool_compacted(compacted: &[f64], k: usize) -> f64 {
    let t = compacted.len();
    if t == 0 {
        return 0.0;
    }
    let window_max = |w: &[f64]| w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if t < k {
        return window_max(compacted);
    }
    let mut sum = 0.0;
    for s in 0..=(t - k) {
        sum += window_max(&compacted[s..s + k]);
    }
    sum
}

/// Pool every row of a score matrix under `kind`'s future indicator.
pub fn merge_summary(
    score_mat: &DenseMatrix,
    layout: SequenceLayout,
    kind: MaskKind,
    kernel_size: usize,
) -> MergeSummary {
    let len = layout.len();
    let indicator = future_indicator(layout, kind);
    let mut pooled = Vec::with_capacity(len);
    let mut counts = Vec::with_capacity(len);
    for i in 0..len {
        let ind = indicator.row(i);
        pooled.push(pool_row(score_mat.row(i), ind, kernel_size));
        counts.push(ind.iter().filter(|&&b| b).count());
    }
    MergeSummary {
        pooled,
        valid_future_counts: counts,
    }
}

/// Adjusted logits: scores plus the merged pooled term on the first
/// `min(p, i)` columns, with everything above the diagonal remasked to
/// `-inf`. The result is strictly causal.
pub fn merge_scores(
    score_mat: &DenseMatrix,
    layout: SequenceLayout,
    kind: MaskKind,
    cfg: &MergeConfig,
) -> Result<DenseMatrix> {
    assert!(cfg.kernel_size >= 1, "kernel size must be >= 1");
    assert!(cfg.prefix_size >= 1, "prefix size must be >= 1");
    let len = layout.len();
    if cfg.prefix_size > len {
        return Err(Error::PrefixTooLarge {
            prefix: cfg.prefix_size,
            len,
        });
    }
    let summary = merge_summary(score_mat, layout, kind, cfg.kernel_size);
    let mut adjusted = DenseMatrix::zeros(len, len);
    for i in 0..len {
        let prefix_cols = cfg.prefix_size.min(i + 1);
        let add = cfg.merge_scale * summary.pooled[i];
        let add = match cfg.distribute {
            Distribute::Replicate => add,
            Distribute::DivideByPrefix => add / prefix_cols as f64,
        };
        for j in 0..len {
            let v = if j > i {
                f64::NEG_INFINITY
            } else if j < prefix_cols && add != 0.0 {
                score_mat.get(i, j) + add
            } else {
                score_mat.get(i, j)
            };
            adjusted.set(i, j, v);
        }
    }
    Ok(adjusted)
}

/// Forward pass on merged logits: strictly causal softmax attention whose
/// prefix columns carry the pooled future summary.
pub fn light_forward(
    inputs: &AttentionInputs,
    kind: MaskKind,
    cfg: &MergeConfig,
) -> Result<AttentionOutput> {
    light_forward_opts(inputs, kind, cfg, inputs.seq_len() <= PROBS_RETENTION_LIMIT)
}

/// [`light_forward`] with explicit probability retention.
pub fn light_forward_opts(
    inputs: &AttentionInputs,
    kind: MaskKind,
    cfg: &MergeConfig,
    retain_probs: bool,
) -> Result<AttentionOutput> {
    let score_mats = scores(inputs);
    let mut outputs = Vec::with_capacity(inputs.num_heads);
    let mut probs_all = retain_probs.then(Vec::new);
    let mut lse_all = Vec::with_capacity(inputs.num_heads);
    for (h, s) in score_mats.iter().enumerate() {
        let adjusted = merge_scores(s, inputs.layout, kind, cfg)?;
        let (out, probs, lse) = attend(&adjusted, &inputs.values[h], retain_probs);
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
