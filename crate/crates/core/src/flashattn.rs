//! Blocked, memory-bounded attention forward pass.
//!
//! Streams K/V blocks against each query block with the standard
//! online-softmax recurrence: a running row max `m`, running normalizer
//! `l`, and an output accumulator rescaled by `exp(m_old - m_new)` whenever
//! the max advances, with one division by `l` at the end and
//! `logsumexp = m + ln l` as a side output. Mask values are produced from
//! the visibility predicate on the fly, so no `L x L` buffer of any kind is
//! materialized: the working set per query block is a `B_r x B_c` score
//! tile plus `B_r` running statistics and a `B_r x d` accumulator.
//!
//! The 32-bit path quantizes Q/K/V to `f32` and computes scores in `f32`,
//! while the running statistics and accumulator stay in `f64` so the looser
//! tolerance only reflects input/score quantization.

use crate::attention::AttentionOutput;
use crate::error::{Error, Result};
use crate::masks::{visible, MaskKind};
use crate::matrix::DenseMatrix;
use crate::merge::{pool_compacted, MergeConfig};
use crate::rng::AttentionInputs;

/// Tile sizes for the blocked pass. Neither needs to divide `L`; ragged
/// final tiles are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub block_rows: usize,
    pub block_cols: usize,
}

impl BlockSpec {
    pub fn new(block_rows: usize, block_cols: usize) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::EmptyBlockSpec {
                rows: block_rows,
                cols: block_cols,
            });
        }
        Ok(Self {
            block_rows,
            block_cols,
        })
    }
}

/// Score computation precision for the blocked kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Scratch accounting for the memory-contract test hook: every scalar slot
/// allocated by the kernel beyond its `L x d` outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct FlashStats {
    pub scratch_floats: usize,
}

/// Per-head score provider; quantizes through `f32` when requested.
struct ScoreSource<'a> {
    q: &'a DenseMatrix,
    k: &'a DenseMatrix,
    q32: Vec<f32>,
    k32: Vec<f32>,
    head_dim: usize,
    inv_sqrt_d: f64,
    precision: Precision,
}

impl<'a> ScoreSource<'a> {
    fn new(q: &'a DenseMatrix, k: &'a DenseMatrix, head_dim: usize, precision: Precision) -> Self {
        let (q32, k32) = match precision {
            Precision::F64 => (Vec::new(), Vec::new()),
            Precision::F32 => (
                q.as_slice().iter().map(|&v| v as f32).collect(),
                k.as_slice().iter().map(|&v| v as f32).collect(),
            ),
        };
        Self {
            q,
            k,
            q32,
            k32,
            head_dim,
            inv_sqrt_d: 1.0 / (head_dim as f64).sqrt(),
            precision,
        }
    }

    #[inline]
    fn score(&self, row: usize, col: usize) -> f64 {
        let d = self.head_dim;
        match self.precision {
            Precision::F64 => {
                let qr = self.q.row(row);
                let kr = self.k.row(col);
                let mut dot = 0.0f64;
                for c in 0..d {
                    dot += qr[c] * kr[c];
                }
                dot * self.inv_sqrt_d
            }
            Precision::F32 => {
                let qr = &self.q32[row * d..(row + 1) * d];
                let kr = &self.k32[col * d..(col + 1) * d];
                let mut dot = 0.0f32;
                for c in 0..d {
                    dot += qr[c] * kr[c];
                }
                (dot * self.inv_sqrt_d as f32) as f64
            }
        }
    }

    fn scratch_floats(&self) -> usize {
        self.q32.len() + self.k32.len()
    }
}

/// Value rows, optionally quantized through `f32`.
struct ValueSource<'a> {
    v: &'a DenseMatrix,
    v32: Vec<f32>,
    head_dim: usize,
    precision: Precision,
}

impl<'a> ValueSource<'a> {
    fn new(v: &'a DenseMatrix, head_dim: usize, precision: Precision) -> Self {
        let v32 = match precision {
            Precision::F64 => Vec::new(),
            Precision::F32 => v.as_slice().iter().map(|&x| x as f32).collect(),
        };
        Self {
            v,
            v32,
            head_dim,
            precision,
        }
    }

    #[inline]
    fn value(&self, row: usize, col: usize) -> f64 {
        match self.precision {
            Precision::F64 => self.v.get(row, col),
            Precision::F32 => self.v32[row * self.head_dim + col] as f64,
        }
    }

    fn scratch_floats(&self) -> usize {
        self.v32.len()
    }
}

/// Extra logit added at `(row, col)` on top of the raw score; the merged
/// pass injects the pooled prefix term here.
type LogitBias<'p> = dyn Fn(usize, usize) -> f64 + 'p;

/// One head's blocked pass under an arbitrary 0-based visibility predicate.
#[allow(clippy::too_many_arguments)]
fn blocked_head(
    score_src: &ScoreSource,
    value_src: &ValueSource,
    len: usize,
    head_dim: usize,
    spec: BlockSpec,
    visible_at: &dyn Fn(usize, usize) -> bool,
    bias: &LogitBias,
    output: &mut DenseMatrix,
    lse: &mut [f64],
) -> usize {
    let br = spec.block_rows.min(len);
    let bc = spec.block_cols.min(len);
    let mut tile = vec![f64::NEG_INFINITY; br * bc];
    let mut run_max = vec![f64::NEG_INFINITY; br];
    let mut run_sum = vec![0.0f64; br];
    let mut acc = vec![0.0f64; br * head_dim];
    let scratch = tile.len() + run_max.len() + run_sum.len() + acc.len();

    let mut r0 = 0;
    while r0 < len {
        let nr = br.min(len - r0);
        run_max[..nr].fill(f64::NEG_INFINITY);
        run_sum[..nr].fill(0.0);
        acc[..nr * head_dim].fill(0.0);

        let mut c0 = 0;
        while c0 < len {
            let nc = bc.min(len - c0);
            for r in 0..nr {
                let row = r0 + r;
                let mut block_max = f64::NEG_INFINITY;
                for c in 0..nc {
                    let col = c0 + c;
                    let s = if visible_at(row, col) {
                        score_src.score(row, col) + bias(row, col)
                    } else {
                        f64::NEG_INFINITY
                    };
                    tile[r * nc + c] = s;
                    if s > block_max {
                        block_max = s;
                    }
                }
                if block_max == f64::NEG_INFINITY {
                    // no visible cell for this row in this tile: statistics
                    // stay untouched
                    continue;
                }
                let new_max = run_max[r].max(block_max);
                let rescale = (run_max[r] - new_max).exp();
                run_sum[r] *= rescale;
                let acc_row = &mut acc[r * head_dim..(r + 1) * head_dim];
                if rescale != 1.0 {
                    for a in acc_row.iter_mut() {
                        *a *= rescale;
                    }
                }
                for c in 0..nc {
                    let s = tile[r * nc + c];
                    if s == f64::NEG_INFINITY {
                        continue;
                    }
                    let e = (s - new_max).exp();
                    run_sum[r] += e;
                    let col = c0 + c;
                    for (cc, a) in acc_row.iter_mut().enumerate() {
                        *a += e * value_src.value(col, cc);
                    }
                }
                run_max[r] = new_max;
            }
            c0 += nc;
        }

        for r in 0..nr {
            let row = r0 + r;
            if run_sum[r] == 0.0 {
                // fully masked row: cannot occur for these masks, degrade
                // to zero output like the naive path
                continue;
            }
            let inv = 1.0 / run_sum[r];
            let out_row = output.row_mut(row);
            for cc in 0..head_dim {
                out_row[cc] = acc[r * head_dim + cc] * inv;
            }
            lse[row] = run_max[r] + run_sum[r].ln();
        }
        r0 += nr;
    }
    scratch
}

/// Blocked masked forward pass; equal to the naive reference per row within
/// 1e-10 (64-bit) / 1e-5 (32-bit).
pub fn flash_forward(
    inputs: &AttentionInputs,
    kind: MaskKind,
    spec: BlockSpec,
) -> Result<AttentionOutput> {
    flash_forward_with(inputs, kind, spec, Precision::F64).map(|(out, _)| out)
}

/// [`flash_forward`] with precision selection and scratch accounting.
pub fn flash_forward_with(
    inputs: &AttentionInputs,
    kind: MaskKind,
    spec: BlockSpec,
    precision: Precision,
) -> Result<(AttentionOutput, FlashStats)> {
    BlockSpec::new(spec.block_rows, spec.block_cols)?;
    let len = inputs.seq_len();
    let layout = inputs.layout;
    let mut outputs = Vec::with_capacity(inputs.num_heads);
    let mut lse_all = Vec::with_capacity(inputs.num_heads);
    let mut stats = FlashStats::default();
    for h in 0..inputs.num_heads {
        let score_src = ScoreSource::new(
            &inputs.queries[h],
            &inputs.keys[h],
            inputs.head_dim,
            precision,
        );
        let value_src = ValueSource::new(&inputs.values[h], inputs.head_dim, precision);
        let mut output = DenseMatrix::zeros(len, inputs.head_dim);
        let mut lse = vec![f64::NEG_INFINITY; len];
        let scratch = blocked_head(
            &score_src,
            &value_src,
            len,
            inputs.head_dim,
            spec,
            &|r, c| visible(layout, kind, r + 1, c + 1),
            &|_, _| 0.0,
            &mut output,
            &mut lse,
        );
        stats.scratch_floats = stats
            .scratch_floats
            .max(scratch + score_src.scratch_floats() + value_src.scratch_floats());
        outputs.push(output);
        lse_all.push(lse);
    }
    Ok((
        AttentionOutput {
            outputs,
            probs: None,
            logsumexp: lse_all,
        },
        stats,
    ))
}

/// Accumulate per-row pooled future scores without materializing `L x L`
/// storage: scores of indicator-true cells are computed on the fly, in
/// column order, into a reusable compaction buffer that feeds the same
/// windowed pooling as the reference path. The result is therefore
/// bit-identical for every block spec.
fn pooled_per_row(
    score_src: &ScoreSource,
    layout: crate::layout::SequenceLayout,
    kind: MaskKind,
    kernel_size: usize,
) -> Vec<f64> {
    let len = layout.len();
    let mut pooled = vec![0.0f64; len];
    let mut compacted: Vec<f64> = Vec::with_capacity(len);
    for (i, pooled_i) in pooled.iter_mut().enumerate() {
        compacted.clear();
        for j in (i + 1)..len {
            if visible(layout, kind, i + 1, j + 1) {
                compacted.push(score_src.score(i, j));
            }
        }
        *pooled_i = pool_compacted(&compacted, kernel_size);
    }
    pooled
}

/// Blocked merged forward pass: pass 1 pools each row's visible future
/// scores, pass 2 runs the blocked strictly-causal pass with the scaled
/// pooled term added to prefix-column logits on the fly. Matches
/// [`crate::merge::light_forward`] within the blocked-kernel tolerances.
pub fn flash_merged_forward(
    inputs: &AttentionInputs,
    kind: MaskKind,
    cfg: &MergeConfig,
    spec: BlockSpec,
) -> Result<AttentionOutput> {
    flash_merged_forward_with(inputs, kind, cfg, spec, Precision::F64).map(|(out, _)| out)
}

/// [`flash_merged_forward`] with precision selection and scratch accounting.
pub fn flash_merged_forward_with(
    inputs: &AttentionInputs,
    kind: MaskKind,
    cfg: &MergeConfig,
    spec: BlockSpec,
    precision: Precision,
) -> Result<(AttentionOutput, FlashStats)> {
    BlockSpec::new(spec.block_rows, spec.block_cols)?;
    assert!(cfg.kernel_size >= 1, "kernel size must be >= 1");
    assert!(cfg.prefix_size >= 1, "prefix size must be >= 1");
    let len = inputs.seq_len();
    let layout = inputs.layout;
    if cfg.prefix_size > len {
        return Err(Error::PrefixTooLarge {
            prefix: cfg.prefix_size,
            len,
        });
    }
    let mut outputs = Vec::with_capacity(inputs.num_heads);
    let mut lse_all = Vec::with_capacity(inputs.num_heads);
    let mut stats = FlashStats::default();
    for h in 0..inputs.num_heads {
        let score_src = ScoreSource::new(
            &inputs.queries[h],
            &inputs.keys[h],
            inputs.head_dim,
            precision,
        );
        let value_src = ValueSource::new(&inputs.values[h], inputs.head_dim, precision);

        let pooled = pooled_per_row(&score_src, layout, kind, cfg.kernel_size);
        let adds: Vec<f64> = pooled
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let add = cfg.merge_scale * p;
                match cfg.distribute {
                    crate::merge::Distribute::Replicate => add,
                    crate::merge::Distribute::DivideByPrefix => {
                        add / cfg.prefix_size.min(i + 1) as f64
                    }
                }
            })
            .collect();

        let mut output = DenseMatrix::zeros(len, inputs.head_dim);
        let mut lse = vec![f64::NEG_INFINITY; len];
        let prefix = cfg.prefix_size;
        let scratch = blocked_head(
            &score_src,
            &value_src,
            len,
            inputs.head_dim,
            spec,
            &|r, c| c <= r,
            &|r, c| {
                if c < prefix.min(r + 1) && adds[r] != 0.0 {
                    adds[r]
                } else {
                    0.0
                }
            },
            &mut output,
            &mut lse,
        );
        // pass-1 scratch: pooled + adds + the reusable compaction buffer
        stats.scratch_floats = stats.scratch_floats.max(
            scratch
                + score_src.scratch_floats()
                + value_src.scratch_floats()
                + pooled.len()
                + adds.len()
                + len,
        );
        outputs.push(output);
        lse_all.push(lse);
    }
    Ok((
        AttentionOutput {
            outputs,
            probs: None,
            logsumexp: lse_all,
        },
        stats,
    ))
}
