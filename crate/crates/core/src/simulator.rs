//! Toy autoregressive prefill/decode engine.
//!
//! The model is attention plus residual only (no MLP, no normalization):
//! the masking mechanism under study lives entirely in attention, and
//! keeping the rest out makes the scored-pair accounting exact. Weights,
//! synthetic visual embeddings, and prompt text ids all derive from one
//! seed, so generations are a pure function of (seed, layout, mask kind,
//! merge config, token budget).
//!
//! Scored-pair counts are the portable latency surrogate: every (query,
//! key) cell the engine evaluates is counted by enumerating the mask it
//! actually uses, never by closed form. Wall-clock durations are recorded
//! for reporting but are never part of any assertion, and serialization
//! drops them by default so exported traces stay byte-reproducible.
//!
//! Decode semantics: merged (and causal) runs append one token and score it
//! against the whole cache. Unmerged future-aware runs additionally refresh
//! every visual query row against the grown sequence each step, scoring
//! exactly the cells its mask makes visible; the refresh re-reads the cache
//! but never rewrites it.

use std::time::Instant;

use serde::Serialize;

use crate::attention::{masked_forward_opts, AttentionOutput};
use crate::error::{Error, Result};
use crate::layout::SequenceLayout;
use crate::masks::{build_mask, visible, MaskKind};
use crate::matrix::DenseMatrix;
use crate::merge::light_forward_opts;
use crate::merge::MergeConfig;
use crate::rng::{AttentionInputs, NormalStream, Seed};

// Sub-stream salts: weights, visual embeddings, and prompt text ids draw
// from independently seeded streams.
const VISUAL_SALT: u64 = 0x5649_5355_414c_0001;
const TEXT_SALT: u64 = 0x5445_5854_0000_0001;

/// Toy model shape and seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub vocab_size: usize,
    pub head_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub seed: Seed,
}

impl ToyModelConfig {
    /// Model width `D = num_heads * head_dim`.
    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_dim
    }
}

struct LayerWeights {
    wq: Vec<DenseMatrix>,
    wk: Vec<DenseMatrix>,
    wv: Vec<DenseMatrix>,
    wo: DenseMatrix,
}

/// Seeded attention-plus-residual decoder.
pub struct ToyModel {
    cfg: ToyModelConfig,
    embed: DenseMatrix,
    layers: Vec<LayerWeights>,
    unembed: DenseMatrix,
}

impl ToyModel {
    /// Generate all weights from the config seed. Projection and
    /// unembedding weights are scaled by `1/sqrt(D)` to keep logit
    /// magnitudes stable across depths.
    pub fn new(cfg: ToyModelConfig) -> Self {
        assert!(cfg.vocab_size >= 1, "vocab_size must be >= 1");
        assert!(cfg.head_dim >= 1, "head_dim must be >= 1");
        assert!(cfg.num_heads >= 1, "num_heads must be >= 1");
        assert!(cfg.num_layers >= 1, "num_layers must be >= 1");
        let d_model = cfg.model_dim();
        let scale = 1.0 / (d_model as f64).sqrt();
        let mut stream = NormalStream::new(cfg.seed);
        let scaled = |stream: &mut NormalStream, rows: usize, cols: usize| {
            let mut m = stream.fill_matrix(rows, cols);
            for r in 0..rows {
                for v in m.row_mut(r) {
                    *v *= scale;
                }
            }
            m
        };
        let embed = stream.fill_matrix(cfg.vocab_size, d_model);
        let layers = (0..cfg.num_layers)
            .map(|_| LayerWeights {
                wq: (0..cfg.num_heads)
                    .map(|_| scaled(&mut stream, d_model, cfg.head_dim))
                    .collect(),
                wk: (0..cfg.num_heads)
                    .map(|_| scaled(&mut stream, d_model, cfg.head_dim))
                    .collect(),
                wv: (0..cfg.num_heads)
                    .map(|_| scaled(&mut stream, d_model, cfg.head_dim))
                    .collect(),
                wo: scaled(&mut stream, d_model, d_model),
            })
            .collect();
        let unembed = scaled(&mut stream, d_model, cfg.vocab_size);
        Self {
            cfg,
            embed,
            layers,
            unembed,
        }
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.cfg
    }

    /// Initial hidden states for a prompt: seeded synthetic rows for visual
    /// positions, embedding-table rows for seeded text token ids.
    fn embed_prompt(&self, layout: SequenceLayout) -> (DenseMatrix, Vec<u32>) {
        let d_model = self.cfg.model_dim();
        let len = layout.len();
        let m = layout.num_visual();
        let mut hidden = DenseMatrix::zeros(len, d_model);
        let mut visual = NormalStream::new(Seed(self.cfg.seed.value() ^ VISUAL_SALT));
        for r in 0..m {
            for c in 0..d_model {
                hidden.set(r, c, visual.next_normal());
            }
        }
        let mut text = NormalStream::new(Seed(self.cfg.seed.value() ^ TEXT_SALT));
        let mut text_ids = Vec::with_capacity(layout.num_text());
        for r in m..len {
            let id = text.next_index(self.cfg.vocab_size) as u32;
            text_ids.push(id);
            hidden
                .row_mut(r)
                .copy_from_slice(self.embed.row(id as usize));
        }
        (hidden, text_ids)
    }

    /// Unembedding logits for one hidden row.
    fn unembed_logits(&self, hidden_row: &[f64]) -> Vec<f64> {
        let vocab = self.cfg.vocab_size;
        let d_model = self.cfg.model_dim();
        let mut logits = vec![0.0f64; vocab];
        for (c, &h) in hidden_row.iter().enumerate().take(d_model) {
            let row = self.unembed.row(c);
            for (logit, w) in logits.iter_mut().zip(row) {
                *logit += h * w;
            }
        }
        logits
    }

    /// Greedy (temperature-0) token choice; ties resolve to the lowest id.
    pub fn greedy_token(&self, hidden_row: &[f64]) -> u32 {
        let logits = self.unembed_logits(hidden_row);
        let mut best = 0usize;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best as u32
    }

    /// `rows x d_model` times `d_model x cols`.
    fn project(&self, hidden: &DenseMatrix, weight: &DenseMatrix) -> DenseMatrix {
        let rows = hidden.rows();
        let inner = hidden.cols();
        let cols = weight.cols();
        let mut out = DenseMatrix::zeros(rows, cols);
        for r in 0..rows {
            let h = hidden.row(r);
            let o = out.row_mut(r);
            for (i, &hv) in h.iter().enumerate().take(inner) {
                let w = weight.row(i);
                for c in 0..cols {
                    o[c] += hv * w[c];
                }
            }
        }
        out
    }
}

struct LayerCache {
    /// Per head, appended key/value rows (flat, stride `head_dim`).
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    /// Prefill-time visual query rows, kept so decode refreshes can re-read
    /// them; never rewritten.
    visual_queries: Vec<Vec<f64>>,
}

/// Per-layer, per-head key/value rows in sequence order.
pub struct KvCache {
    layers: Vec<LayerCache>,
    num_visual: usize,
    len: usize,
}

impl KvCache {
    /// Number of cached tokens.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One counted phase (prefill or a decode step).
#[derive(Debug, Clone, Serialize)]
pub struct StepEntry {
    /// Sequence length when the phase ran.
    pub length: usize,
    /// Exact (query, key) cells scored.
    pub pairs: u64,
    /// Wall clock; reporting only, dropped by [`DecodeTrace::without_timings`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
}

/// Configuration echo embedded in every trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceConfig {
    pub num_visual: usize,
    pub num_text: usize,
    pub mask: String,
    pub merged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prefix_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub merge_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribute: Option<String>,
    pub head_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub vocab_size: usize,
    pub seed: u64,
    pub new_tokens: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceTotals {
    pub prefill_pairs: u64,
    pub decode_pairs: u64,
    pub pairs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
}

/// Full per-run accounting: config echo, prefill entry, one entry per
/// decode step, totals.
#[derive(Debug, Clone, Serialize)]
pub struct DecodeTrace {
    pub config: TraceConfig,
    pub prefill: StepEntry,
    pub steps: Vec<StepEntry>,
    pub totals: TraceTotals,
}

impl DecodeTrace {
    /// Copy with every wall-clock field removed; exported traces use this
    /// by default so reruns are byte-identical.
    pub fn without_timings(&self) -> DecodeTrace {
        let strip = |e: &StepEntry| StepEntry {
            length: e.length,
            pairs: e.pairs,
            ms: None,
        };
        DecodeTrace {
            config: self.config.clone(),
            prefill: strip(&self.prefill),
            steps: self.steps.iter().map(strip).collect(),
            totals: TraceTotals {
                ms: None,
                ..self.totals
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serialization cannot fail")
    }

    /// CSV form: one row per phase, totals last.
    pub fn to_csv(&self) -> String {
        let with_ms = self.prefill.ms.is_some();
        let mut out = String::new();
        out.push_str(if with_ms {
            "phase,step,length,pairs,ms\n"
        } else {
            "phase,step,length,pairs\n"
        });
        let mut push_row = |phase: &str, step: usize, e: &StepEntry| {
            out.push_str(&format!("{phase},{step},{},{}", e.length, e.pairs));
            if let Some(ms) = e.ms {
                out.push_str(&format!(",{ms}"));
            }
            out.push('\n');
        };
        push_row("prefill", 0, &self.prefill);
        for (i, step) in self.steps.iter().enumerate() {
            push_row("decode", i + 1, step);
        }
        out.push_str(&format!("totals,,,{}", self.totals.pairs));
        if let Some(ms) = self.totals.ms {
            out.push_str(&format!(",{ms}"));
        }
        out.push('\n');
        out
    }
}

/// Prefill result: cache, final hidden states, and the counted entry.
pub struct PrefillOutput {
    pub cache: KvCache,
    pub hidden: DenseMatrix,
    pub entry: StepEntry,
}

fn attention_inputs(
    layout: SequenceLayout,
    head_dim: usize,
    queries: Vec<DenseMatrix>,
    keys: Vec<DenseMatrix>,
    values: Vec<DenseMatrix>,
) -> AttentionInputs {
    AttentionInputs {
        layout,
        head_dim,
        num_heads: queries.len(),
        queries,
        keys,
        values,
    }
}

/// Run the full-sequence pass for every layer, populating the KV cache.
///
/// Scored pairs per layer are counted by enumerating the visible cells of
/// the mask the layer actually applies (the strictly causal one when
/// merging), times heads.
pub fn prefill(
    model: &ToyModel,
    layout: SequenceLayout,
    kind: MaskKind,
    merge: Option<&MergeConfig>,
) -> Result<PrefillOutput> {
    let start = Instant::now();
    let cfg = model.config();
    let len = layout.len();
    let (mut hidden, _text_ids) = model.embed_prompt(layout);
    let mask = build_mask(layout, kind);
    let causal_mask = build_mask(layout, MaskKind::Causal);
    let pairs_per_layer = if merge.is_some() {
        causal_mask.count_visible() as u64 * cfg.num_heads as u64
    } else {
        mask.count_visible() as u64 * cfg.num_heads as u64
    };

    let mut layers = Vec::with_capacity(cfg.num_layers);
    let mut pairs = 0u64;
    for layer in &model.layers {
        let queries: Vec<DenseMatrix> =
            layer.wq.iter().map(|w| model.project(&hidden, w)).collect();
        let keys: Vec<DenseMatrix> = layer.wk.iter().map(|w| model.project(&hidden, w)).collect();
        let values: Vec<DenseMatrix> = layer.wv.iter().map(|w| model.project(&hidden, w)).collect();

        let cache_layer = LayerCache {
            keys: keys.iter().map(|k| k.as_slice().to_vec()).collect(),
            values: values.iter().map(|v| v.as_slice().to_vec()).collect(),
            visual_queries: queries
                .iter()
                .map(|q| q.as_slice()[..layout.num_visual() * cfg.head_dim].to_vec())
                .collect(),
        };

        let inputs = attention_inputs(layout, cfg.head_dim, queries, keys, values);
        let attn: AttentionOutput = match merge {
            Some(mc) => light_forward_opts(&inputs, kind, mc, false)?,
            None => masked_forward_opts(&inputs, &mask, false)?,
        };
        pairs += pairs_per_layer;

        // concat heads, project, residual
        for r in 0..len {
            let mut concat = vec![0.0f64; cfg.model_dim()];
            for h in 0..cfg.num_heads {
                let o = attn.outputs[h].row(r);
                concat[h * cfg.head_dim..(h + 1) * cfg.head_dim].copy_from_slice(o);
            }
            let hrow = hidden.row_mut(r);
            for (i, &cv) in concat.iter().enumerate() {
                let w = layer.wo.row(i);
                for c in 0..cfg.model_dim() {
                    hrow[c] += cv * w[c];
                }
            }
        }
        layers.push(cache_layer);
    }

    let cache = KvCache {
        layers,
        num_visual: layout.num_visual(),
        len,
    };
    Ok(PrefillOutput {
        cache,
        hidden,
        entry: StepEntry {
            length: len,
            pairs,
            ms: Some(start.elapsed().as_secs_f64() * 1e3),
        },
    })
}

/// Max-subtraction softmax attention of one query row over `len` cached
/// rows, restricted to `visible_cols`. Returns the attended value vector
/// and the number of scored cells.
fn attend_cached(
    query: &[f64],
    keys: &[f64],
    values: &[f64],
    head_dim: usize,
    len: usize,
    visible_cols: impl Fn(usize) -> bool,
) -> (Vec<f64>, u64) {
    let inv_sqrt_d = 1.0 / (head_dim as f64).sqrt();
    let mut logits = Vec::with_capacity(len);
    let mut cols = Vec::with_capacity(len);
    for j in 0..len {
        if !visible_cols(j) {
            continue;
        }
        let krow = &keys[j * head_dim..(j + 1) * head_dim];
        let mut dot = 0.0;
        for c in 0..head_dim {
            dot += query[c] * krow[c];
        }
        logits.push(dot * inv_sqrt_d);
        cols.push(j);
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    let mut out = vec![0.0f64; head_dim];
    for (&logit, &j) in logits.iter().zip(&cols) {
        let e = (logit - max).exp();
        total += e;
        let vrow = &values[j * head_dim..(j + 1) * head_dim];
        for c in 0..head_dim {
            out[c] += e * vrow[c];
        }
    }
    let inv = 1.0 / total;
    for v in out.iter_mut() {
        *v *= inv;
    }
    (out, logits.len() as u64)
}

/// Append one generated text token, score it against the cache, and pick
/// the next token greedily.
///
/// Under an unmerged future-aware mask every cached visual query row is
/// additionally refreshed against the grown sequence, scoring the cells its
/// mask definition exposes; merged (and causal) runs pay pure causal cost.
pub fn decode_step(
    model: &ToyModel,
    cache: &mut KvCache,
    kind: MaskKind,
    merged: bool,
    token: u32,
) -> Result<(u32, StepEntry)> {
    if cache.is_empty() {
        return Err(Error::EmptyCache);
    }
    let start = Instant::now();
    let cfg = model.config();
    let d = cfg.head_dim;
    let new_len = cache.len + 1;
    let grown = SequenceLayout::new(cache.num_visual, new_len - cache.num_visual)
        .expect("grown layout is nonempty");
    let mut pairs = 0u64;

    let mut hidden = model.embed.row(token as usize).to_vec();
    let hidden_mat_of = |row: &[f64]| {
        DenseMatrix::from_vec(1, row.len(), row.to_vec()).expect("row length matches")
    };

    for (layer_idx, layer) in model.layers.iter().enumerate() {
        let hmat = hidden_mat_of(&hidden);
        let cache_layer = &mut cache.layers[layer_idx];
        let mut concat = vec![0.0f64; cfg.model_dim()];
        for h in 0..cfg.num_heads {
            let q = model.project(&hmat, &layer.wq[h]);
            let k = model.project(&hmat, &layer.wk[h]);
            let v = model.project(&hmat, &layer.wv[h]);
            cache_layer.keys[h].extend_from_slice(k.row(0));
            cache_layer.values[h].extend_from_slice(v.row(0));

            // the new token is the last position: everything is past
            let (out, scored) = attend_cached(
                q.row(0),
                &cache_layer.keys[h],
                &cache_layer.values[h],
                d,
                new_len,
                |_| true,
            );
            pairs += scored;
            concat[h * d..(h + 1) * d].copy_from_slice(&out);

            if !merged && kind.is_future_aware() {
                // refresh: each visual query re-attends over its visible
                // set in the grown sequence; results are read-only work
                for i in 0..cache.num_visual {
                    let qrow = &cache_layer.visual_queries[h][i * d..(i + 1) * d];
                    let (_refreshed, scored) = attend_cached(
                        qrow,
                        &cache_layer.keys[h],
                        &cache_layer.values[h],
                        d,
                        new_len,
                        |j| visible(grown, kind, i + 1, j + 1),
                    );
                    pairs += scored;
                }
            }
        }
        for (i, &cv) in concat.iter().enumerate() {
            let w = layer.wo.row(i);
            for c in 0..cfg.model_dim() {
                hidden[c] += cv * w[c];
            }
        }
    }
    cache.len = new_len;
    let next = model.greedy_token(&hidden);
    Ok((
        next,
        StepEntry {
            length: new_len,
            pairs,
            ms: Some(start.elapsed().as_secs_f64() * 1e3),
        },
    ))
}

/// Generated tokens plus the full cost trace.
pub struct GenerationResult {
    pub tokens: Vec<u32>,
    pub trace: DecodeTrace,
}

/// Prefill, then greedily decode `num_new_tokens` text tokens.
pub fn run_generation(
    model: &ToyModel,
    layout: SequenceLayout,
    kind: MaskKind,
    merge: Option<&MergeConfig>,
    num_new_tokens: usize,
) -> Result<GenerationResult> {
    let cfg = model.config();
    let out = prefill(model, layout, kind, merge)?;
    let mut cache = out.cache;
    let mut next = model.greedy_token(out.hidden.row(layout.len() - 1));
    let mut tokens = Vec::with_capacity(num_new_tokens);
    let mut steps = Vec::with_capacity(num_new_tokens);
    for _ in 0..num_new_tokens {
        tokens.push(next);
        let (n, entry) = decode_step(model, &mut cache, kind, merge.is_some(), next)?;
        next = n;
        steps.push(entry);
    }
    let decode_pairs: u64 = steps.iter().map(|s| s.pairs).sum();
    let total_ms =
        out.entry.ms.unwrap_or(0.0) + steps.iter().map(|s| s.ms.unwrap_or(0.0)).sum::<f64>();
    let trace = DecodeTrace {
        config: TraceConfig {
            num_visual: layout.num_visual(),
            num_text: layout.num_text(),
            mask: kind.short_name().to_string(),
            merged: merge.is_some(),
            kernel_size: merge.map(|m| m.kernel_size),
            prefix_size: merge.map(|m| m.prefix_size),
            merge_scale: merge.map(|m| m.merge_scale),
            distribute: merge.map(|m| {
                match m.distribute {
                    crate::merge::Distribute::Replicate => "replicate",
                    crate::merge::Distribute::DivideByPrefix => "divide-by-prefix",
                }
                .to_string()
            }),
            head_dim: cfg.head_dim,
            num_heads: cfg.num_heads,
            num_layers: cfg.num_layers,
            vocab_size: cfg.vocab_size,
            seed: cfg.seed.value(),
            new_tokens: num_new_tokens,
        },
        totals: TraceTotals {
            prefill_pairs: out.entry.pairs,
            decode_pairs,
            pairs: out.entry.pairs + decode_pairs,
            ms: Some(total_ms),
        },
        prefill: out.entry,
        steps,
    };
    Ok(GenerationResult { tokens, trace })
}
