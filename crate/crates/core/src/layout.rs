//! Token sequence layout: `m` visual tokens followed by `n` text tokens.
//!
//! Positions are 1-based in all mask math, matching the convention used
//! throughout this crate's documentation: visual positions occupy `[1, m]`
//! and text positions occupy `[m+1, m+n]`. Storage elsewhere is 0-based;
//! conversion happens only at call boundaries.

use crate::error::{Error, Result};

/// The (visual, text) split of a flattened token sequence.
///
/// Visual tokens always precede text tokens; interleaved layouts are not
/// supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceLayout {
    num_visual: usize,
    num_text: usize,
}

impl SequenceLayout {
    /// Build a layout with `num_visual` visual tokens followed by
    /// `num_text` text tokens. Fails if both counts are zero.
    pub fn new(num_visual: usize, num_text: usize) -> Result<Self> {
        if num_visual + num_text == 0 {
            return Err(Error::EmptySequence);
        }
        Ok(Self {
            num_visual,
            num_text,
        })
    }

    pub fn num_visual(&self) -> usize {
        self.num_visual
    }

    pub fn num_text(&self) -> usize {
        self.num_text
    }

    /// Total sequence length `L = m + n`.
    pub fn len(&self) -> usize {
        self.num_visual + self.num_text
    }

    pub fn is_empty(&self) -> bool {
        false // construction guarantees L >= 1
    }

    /// Whether 1-based position `pos` is a visual token.
    #[inline]
    pub fn is_visual(&self, pos: usize) -> bool {
        pos >= 1 && pos <= self.num_visual
    }

    /// Whether 1-based position `pos` is a text token.
    #[inline]
    pub fn is_text(&self, pos: usize) -> bool {
        pos > self.num_visual && pos <= self.len()
    }

    /// Layout after appending `extra` text tokens (decode growth).
    pub fn with_extra_text(&self, extra: usize) -> Self {
        Self {
            num_visual: self.num_visual,
            num_text: self.num_text + extra,
        }
    }
}

/// Construct a [`SequenceLayout`]; alias for [`SequenceLayout::new`].
pub fn make_layout(num_visual: usize, num_text: usize) -> Result<SequenceLayout> {
    SequenceLayout::new(num_visual, num_text)
}
