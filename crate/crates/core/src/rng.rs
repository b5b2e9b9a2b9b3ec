//! Seeded synthetic tensor generation.
//!
//! The generator contract is pinned so fixtures stay portable:
//!
//! * Stream source: `ChaCha8Rng` seeded with [`Seed::value`] through
//!   `SeedableRng::seed_from_u64` (SplitMix64 key expansion).
//! * Each normal pair consumes two `u64` draws `x, y` and applies
//!   Box-Muller with `u1 = ((x >> 11) + 1) * 2^-53` (in `(0, 1]`, so the
//!   log is finite) and `u2 = (y >> 11) * 2^-53` (in `[0, 1)`):
//!   `r = sqrt(-2 ln u1)`, emitting `r cos(2 pi u2)` then `r sin(2 pi u2)`.
//! * [`synth_inputs`] fills Q fully, then K, then V; within each tensor the
//!   order is head-major, then row-major (head 0 row 0 col 0, col 1, ...).
//!
//! Same seed and shapes therefore reproduce bit-identical tensors.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::Result;
use crate::layout::SequenceLayout;
use crate::matrix::DenseMatrix;

/// Seed for all synthetic data in the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    pub fn value(&self) -> u64 {
        self.0
    }
}

/// Deterministic standard-normal stream (see module docs for the exact
/// construction).
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: Seed) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed.value()),
            spare: None,
        }
    }

    /// Uniform draw in `[0, 1)` from the top 53 bits of a `u64`.
    fn next_unit(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Next standard-normal value.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 shifted into (0, 1] so ln(u1) stays finite.
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_unit();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `[0, bound)` by 64-bit modulo.
    ///
    /// The modulo bias is irrelevant at the bounds used here (vocab sizes
    /// well below 2^32); what matters is that the mapping is fixed.
    pub fn next_index(&mut self, bound: usize) -> usize {
        (self.rng.next_u64() % bound as u64) as usize
    }

    /// Fill a matrix row-major from the stream.
    pub fn fill_matrix(&mut self, rows: usize, cols: usize) -> DenseMatrix {
        let data: Vec<f64> = (0..rows * cols).map(|_| self.next_normal()).collect();
        DenseMatrix::from_vec(rows, cols, data).expect("length matches by construction")
    }
}

/// Per-head query/key/value matrices plus their layout.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub layout: SequenceLayout,
    pub head_dim: usize,
    pub num_heads: usize,
    /// One `L x d` matrix per head.
    pub queries: Vec<DenseMatrix>,
    pub keys: Vec<DenseMatrix>,
    pub values: Vec<DenseMatrix>,
}

impl AttentionInputs {
    pub fn seq_len(&self) -> usize {
        self.layout.len()
    }
}

/// Generate seeded Q/K/V tensors for `layout` (stands in for a vision
/// encoder plus text embeddings).
///
/// Fill order is documented at module level; identical arguments always
/// produce bit-identical tensors.
pub fn synth_inputs(
    layout: SequenceLayout,
    head_dim: usize,
    num_heads: usize,
    seed: Seed,
) -> Result<AttentionInputs> {
    assert!(head_dim >= 1, "head_dim must be >= 1");
    assert!(num_heads >= 1, "num_heads must be >= 1");
    let len = layout.len();
    let mut stream = NormalStream::new(seed);
    let fill = |stream: &mut NormalStream| -> Vec<DenseMatrix> {
        (0..num_heads)
            .map(|_| stream.fill_matrix(len, head_dim))
            .collect()
    };
    let queries = fill(&mut stream);
    let keys = fill(&mut stream);
    let values = fill(&mut stream);
    Ok(AttentionInputs {
        layout,
        head_dim,
        num_heads,
        queries,
        keys,
        values,
    })
}
