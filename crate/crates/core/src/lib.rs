//! Future-aware causal attention for vision-language token sequences.
//!
//! A flattened sequence of `m` visual tokens followed by `n` text tokens can
//! relax strict causal masking for its visual query rows: the full future,
//! only future visual tokens, or only future text tokens. This crate builds
//! those masks, runs reference and blocked (online-softmax) forward passes
//! under them, compresses visible future scores into leading "attention
//! sink" columns via sliding-window max pooling so decoding stays strictly
//! causal, and ships a toy prefill/decode simulator that counts exact
//! scored (query, key) pairs to compare the cost of each strategy.

pub mod attention;
pub mod error;
pub mod flashattn;
pub mod layout;
pub mod masks;
pub mod matrix;
pub mod merge;
pub mod rng;
pub mod simulator;

pub use attention::{
    distribution_gap, masked_forward, masked_forward_opts, scores, AttentionOutput, DistributionGap,
};
pub use error::{Error, Result};
pub use flashattn::{
    flash_forward, flash_forward_with, flash_merged_forward, flash_merged_forward_with, BlockSpec,
    FlashStats, Precision,
};
pub use layout::{make_layout, SequenceLayout};
pub use masks::{build_mask, valid_attention_count, visible, MaskKind, MaskMatrix};
pub use matrix::DenseMatrix;
pub use merge::{
    future_indicator, light_forward, light_forward_opts, merge_scores, merge_summary, pool_row,
    Distribute, FutureIndicator, MergeConfig, MergeSummary,
};
pub use rng::{synth_inputs, AttentionInputs, NormalStream, Seed};
pub use simulator::{
    decode_step, prefill, run_generation, DecodeTrace, GenerationResult, KvCache, PrefillOutput,
    StepEntry, ToyModel, ToyModelConfig, TraceConfig, TraceTotals,
};
