//! Run configuration: defaults, config-file values, and command-line flags,
//! resolved in that order (flags win field by field).
//!
//! The config file is a flat UTF-8 JSON object whose keys match the flag
//! names with underscores, e.g. `{"num_visual": 6, "mask": "v2t"}`.

use std::path::Path;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use future_attn::{Distribute, MaskKind, Precision};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskArg {
    Causal,
    F,
    V2v,
    V2t,
}

impl From<MaskArg> for MaskKind {
    fn from(arg: MaskArg) -> Self {
        match arg {
            MaskArg::Causal => MaskKind::Causal,
            MaskArg::F => MaskKind::FutureFull,
            MaskArg::V2v => MaskKind::FutureV2V,
            MaskArg::V2t => MaskKind::FutureV2T,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistributeArg {
    Replicate,
    DivideByPrefix,
}

impl From<DistributeArg> for Distribute {
    fn from(arg: DistributeArg) -> Self {
        match arg {
            DistributeArg::Replicate => Distribute::Replicate,
            DistributeArg::DivideByPrefix => Distribute::DivideByPrefix,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(arg: PrecisionArg) -> Self {
        match arg {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormatArg {
    Csv,
    Json,
}

/// Shared flags; every field is optional here so that only flags the user
/// actually set override the config file.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialConfig {
    /// Number of visual tokens m (default 6)
    #[arg(long)]
    pub num_visual: Option<usize>,
    /// Number of text tokens n (default 4)
    #[arg(long)]
    pub num_text: Option<usize>,
    /// Mask kind (default causal)
    #[arg(long, value_enum)]
    pub mask: Option<MaskArg>,
    /// Merge pooled future scores into the prefix (default false)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub merge: Option<bool>,
    /// Pooling window size k (default 1 = plain summation)
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Number of prefix columns receiving the merged score (default 1)
    #[arg(long)]
    pub prefix_size: Option<usize>,
    /// Multiplier on the pooled score (default 1.0)
    #[arg(long)]
    pub merge_scale: Option<f64>,
    /// How the merged score spreads over the prefix (default replicate)
    #[arg(long, value_enum)]
    pub distribute: Option<DistributeArg>,
    /// Per-head dimension d (default 8)
    #[arg(long)]
    pub head_dim: Option<usize>,
    /// Number of attention heads H (default 1)
    #[arg(long)]
    pub heads: Option<usize>,
    /// Number of toy-model layers (default 1)
    #[arg(long)]
    pub layers: Option<usize>,
    /// Toy-model vocabulary size (default 32)
    #[arg(long)]
    pub vocab: Option<usize>,
    /// Seed for all synthetic data (default 42)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Blocked-kernel rows per tile (default 32)
    #[arg(long)]
    pub block_rows: Option<usize>,
    /// Blocked-kernel columns per tile (default 32)
    #[arg(long)]
    pub block_cols: Option<usize>,
    /// Blocked-kernel score precision (default f64)
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    /// Decode steps for generate/bench (default 8)
    #[arg(long)]
    pub new_tokens: Option<usize>,
    /// Output path; "-" writes to stdout (default "-")
    #[arg(long)]
    pub out: Option<String>,
    /// Trace format for bench/generate (default json)
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    /// Include wall-clock fields in exported traces; reruns then stop being
    /// byte-identical (default false)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timings: Option<bool>,
}

/// Fully resolved configuration; serializes to the config-file schema.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub num_visual: usize,
    pub num_text: usize,
    pub mask: MaskArg,
    pub merge: bool,
    pub kernel_size: usize,
    pub prefix_size: usize,
    pub merge_scale: f64,
    pub distribute: DistributeArg,
    pub head_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub vocab: usize,
    pub seed: u64,
    pub block_rows: usize,
    pub block_cols: usize,
    pub precision: PrecisionArg,
    pub new_tokens: usize,
    pub out: String,
    pub format: FormatArg,
    pub timings: bool,
}

impl RunConfig {
    /// Defaults, then config-file values, then flags.
    pub fn resolve(file: &PartialConfig, flags: &PartialConfig) -> RunConfig {
        macro_rules! pick {
            ($field:ident, $default:expr) => {
                flags
                    .$field
                    .clone()
                    .or_else(|| file.$field.clone())
                    .unwrap_or($default)
            };
        }
        RunConfig {
            num_visual: pick!(num_visual, 6),
            num_text: pick!(num_text, 4),
            mask: pick!(mask, MaskArg::Causal),
            merge: pick!(merge, false),
            kernel_size: pick!(kernel_size, 1),
            prefix_size: pick!(prefix_size, 1),
            merge_scale: pick!(merge_scale, 1.0),
            distribute: pick!(distribute, DistributeArg::Replicate),
            head_dim: pick!(head_dim, 8),
            heads: pick!(heads, 1),
            layers: pick!(layers, 1),
            vocab: pick!(vocab, 32),
            seed: pick!(seed, 42),
            block_rows: pick!(block_rows, 32),
            block_cols: pick!(block_cols, 32),
            precision: pick!(precision, PrecisionArg::F64),
            new_tokens: pick!(new_tokens, 8),
            out: pick!(out, "-".to_string()),
            format: pick!(format, FormatArg::Json),
            timings: pick!(timings, false),
        }
    }

    pub fn mask_kind(&self) -> MaskKind {
        self.mask.into()
    }

    pub fn merge_config(&self) -> future_attn::MergeConfig {
        future_attn::MergeConfig {
            kernel_size: self.kernel_size,
            prefix_size: self.prefix_size,
            merge_scale: self.merge_scale,
            distribute: self.distribute.into(),
        }
    }
}

/// Load the config file (flat JSON object); absent path means empty.
pub fn load_file(path: Option<&str>) -> Result<PartialConfig> {
    match path {
        None => Ok(PartialConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(Path::new(p))
                .with_context(|| format!("reading config file {p}"))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config file {p}"))
        }
    }
}
