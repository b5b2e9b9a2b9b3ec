//! Causal and future-aware mask construction.
//!
//! Four kinds share one pointwise predicate. With 1-based positions, row `i`
//! sees column `j` when `j <= i`, and additionally when `j > i` and:
//!
//! * `FutureFull`: `i` is visual (entire future row unmasked),
//! * `FutureV2V`:  `i` and `j` are both visual,
//! * `FutureV2T`:  `i` is visual and `j` is text.
//!
//! Text query rows are therefore plain causal in every kind. Masks exist in
//! two forms: a materialized additive `L x L` matrix for the reference
//! forward pass, and the [`visible`] predicate for the blocked kernel, which
//! must not allocate `L x L` storage.

use crate::layout::SequenceLayout;
use crate::matrix::DenseMatrix;

/// Mask family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskKind {
    Causal,
    FutureFull,
    FutureV2V,
    FutureV2T,
}

impl MaskKind {
    pub const ALL: [MaskKind; 4] = [
        MaskKind::Causal,
        MaskKind::FutureFull,
        MaskKind::FutureV2V,
        MaskKind::FutureV2T,
    ];

    /// Whether this kind unmasks any future cells.
    pub fn is_future_aware(&self) -> bool {
        !matches!(self, MaskKind::Causal)
    }

    /// Short CLI name: causal | f | v2v | v2t.
    pub fn short_name(&self) -> &'static str {
        match self {
            MaskKind::Causal => "causal",
            MaskKind::FutureFull => "f",
            MaskKind::FutureV2V => "v2v",
            MaskKind::FutureV2T => "v2t",
        }
    }
}

/// Additive `L x L` mask with entries in `{0, -inf}`.
#[derive(Debug, Clone)]
pub struct MaskMatrix {
    layout: SequenceLayout,
    kind: MaskKind,
    entries: DenseMatrix,
}

impl MaskMatrix {
    pub fn layout(&self) -> SequenceLayout {
        self.layout
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.layout.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Whether 0-based cell `(r, c)` is masked out.
    #[inline]
    pub fn is_masked(&self, r: usize, c: usize) -> bool {
        self.entries.get(r, c) == f64::NEG_INFINITY
    }

    /// Additive entry at 0-based `(r, c)`: `0.0` or `-inf`.
    #[inline]
    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.entries.get(r, c)
    }

    /// Count of visible (zero) cells.
    pub fn count_visible(&self) -> usize {
        let len = self.len();
        let mut count = 0;
        for r in 0..len {
            for c in 0..len {
                if !self.is_masked(r, c) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Fault-injection hook for negative-control tests: toggles the cell at
    /// 0-based `(r, c)` between visible and masked.
    #[doc(hidden)]
    pub fn flip_cell(&mut self, r: usize, c: usize) {
        let v = if self.is_masked(r, c) {
            0.0
        } else {
            f64::NEG_INFINITY
        };
        self.entries.set(r, c, v);
    }

    /// CSV dump: one row per query, entries `0` or `-inf`.
    pub fn to_csv(&self) -> String {
        let len = self.len();
        let mut out = String::new();
        for r in 0..len {
            for c in 0..len {
                if c > 0 {
                    out.push(',');
                }
                out.push_str(if self.is_masked(r, c) { "-inf" } else { "0" });
            }
            out.push('\n');
        }
        out
    }
}

/// Pointwise visibility predicate at 1-based positions `i` (query) and `j`
/// (key). Panics when an index falls outside `[1, L]`.
#[inline]
pub fn visible(layout: SequenceLayout, kind: MaskKind, i: usize, j: usize) -> bool {
    let len = layout.len();
    assert!(
        (1..=len).contains(&i) && (1..=len).contains(&j),
        "mask index out of range: ({i}, {j}) for L={len}"
    );
    if j <= i {
        return true;
    }
    match kind {
        MaskKind::Causal => false,
        MaskKind::FutureFull => layout.is_visual(i),
        MaskKind::FutureV2V => layout.is_visual(i) && layout.is_visual(j),
        MaskKind::FutureV2T => layout.is_visual(i) && layout.is_text(j),
    }
}

/// Materialize the additive mask matrix for `kind` over `layout`.
pub fn build_mask(layout: SequenceLayout, kind: MaskKind) -> MaskMatrix {
    let len = layout.len();
    let mut entries = DenseMatrix::zeros(len, len);
    for r in 0..len {
        for c in 0..len {
            if !visible(layout, kind, r + 1, c + 1) {
                entries.set(r, c, f64::NEG_INFINITY);
            }
        }
    }
    MaskMatrix {
        layout,
        kind,
        entries,
    }
}

/// Closed-form count of non-masked prefill attention cells.
///
/// With `merged = true` every kind collapses to the causal count
/// `L(L+1)/2`; otherwise each future-aware kind adds its unmasked future
/// region on top of that.
pub fn valid_attention_count(layout: SequenceLayout, kind: MaskKind, merged: bool) -> usize {
    let len = layout.len();
    let m = layout.num_visual();
    let n = layout.num_text();
    let causal = len * (len + 1) / 2;
    if merged {
        return causal;
    }
    match kind {
        MaskKind::Causal => causal,
        MaskKind::FutureFull => causal + m * len - m * (m + 1) / 2,
        MaskKind::FutureV2V => causal + m.saturating_sub(1) * m / 2,
        MaskKind::FutureV2T => causal + m * n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::make_layout;

    fn visible_cols(mask: &MaskMatrix, row_1based: usize) -> Vec<usize> {
        (1..=mask.len())
            .filter(|&j| !mask.is_masked(row_1based - 1, j - 1))
            .collect()
    }

    #[test]
    fn causal_rows_l4() {
        let mask = build_mask(make_layout(2, 2).unwrap(), MaskKind::Causal);
        assert_eq!(visible_cols(&mask, 1), vec![1]);
        assert_eq!(visible_cols(&mask, 2), vec![1, 2]);
        assert_eq!(visible_cols(&mask, 3), vec![1, 2, 3]);
        assert_eq!(visible_cols(&mask, 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn future_full_rows_l4() {
        let mask = build_mask(make_layout(2, 2).unwrap(), MaskKind::FutureFull);
        assert_eq!(visible_cols(&mask, 1), vec![1, 2, 3, 4]);
        assert_eq!(visible_cols(&mask, 2), vec![1, 2, 3, 4]);
        assert_eq!(visible_cols(&mask, 3), vec![1, 2, 3]);
        assert_eq!(visible_cols(&mask, 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn future_v2v_rows_l4() {
        let mask = build_mask(make_layout(2, 2).unwrap(), MaskKind::FutureV2V);
        assert_eq!(visible_cols(&mask, 1), vec![1, 2]);
        assert_eq!(visible_cols(&mask, 2), vec![1, 2]);
        assert_eq!(visible_cols(&mask, 3), vec![1, 2, 3]);
        assert_eq!(visible_cols(&mask, 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn future_v2t_rows_l4() {
        let mask = build_mask(make_layout(2, 2).unwrap(), MaskKind::FutureV2T);
        assert_eq!(visible_cols(&mask, 1), vec![1, 3, 4]);
        assert_eq!(visible_cols(&mask, 2), vec![1, 2, 3, 4]);
        assert_eq!(visible_cols(&mask, 3), vec![1, 2, 3]);
        assert_eq!(visible_cols(&mask, 4), vec![1, 2, 3, 4]);
    }

    #[test]
    fn predicate_spot_checks() {
        let layout = make_layout(2, 2).unwrap();
        // future visual blocked for v2t
        assert!(!visible(layout, MaskKind::FutureV2T, 1, 2));
        // diagonal always visible
        for kind in MaskKind::ALL {
            for i in 1..=4 {
                assert!(visible(layout, kind, i, i));
            }
        }
        // text query, future masked even under v2v
        assert!(!visible(layout, MaskKind::FutureV2V, 3, 4));
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn predicate_rejects_zero_index() {
        let layout = make_layout(2, 2).unwrap();
        visible(layout, MaskKind::Causal, 0, 1);
    }

    #[test]
    fn counts_l5_m2_n3() {
        let layout = make_layout(2, 3).unwrap();
        assert_eq!(valid_attention_count(layout, MaskKind::Causal, false), 15);
        assert_eq!(
            valid_attention_count(layout, MaskKind::FutureFull, false),
            22
        );
        assert_eq!(
            valid_attention_count(layout, MaskKind::FutureV2V, false),
            16
        );
        assert_eq!(
            valid_attention_count(layout, MaskKind::FutureV2T, false),
            21
        );
        for kind in MaskKind::ALL {
            assert_eq!(valid_attention_count(layout, kind, true), 15);
        }
    }

    #[test]
    fn counts_match_enumeration_small() {
        for len in 1..=16usize {
            for m in 0..=len {
                let layout = make_layout(m, len - m).unwrap();
                for kind in MaskKind::ALL {
                    let mask = build_mask(layout, kind);
                    assert_eq!(
                        mask.count_visible(),
                        valid_attention_count(layout, kind, false),
                        "L={len} m={m} kind={kind:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn count_ordering() {
        for len in 2..=12usize {
            for m in 1..len {
                let layout = make_layout(m, len - m).unwrap();
                let c = |k| valid_attention_count(layout, k, false);
                assert!(c(MaskKind::FutureFull) >= c(MaskKind::FutureV2V));
                assert!(c(MaskKind::FutureFull) >= c(MaskKind::FutureV2T));
                assert!(c(MaskKind::FutureV2T) >= c(MaskKind::Causal));
            }
        }
    }

    #[test]
    fn text_rows_identical_across_kinds() {
        let layout = make_layout(3, 4).unwrap();
        let masks: Vec<MaskMatrix> = MaskKind::ALL
            .iter()
            .map(|&k| build_mask(layout, k))
            .collect();
        for i in layout.num_visual()..layout.len() {
            for c in 0..layout.len() {
                let reference = masks[0].is_masked(i, c);
                for mask in &masks[1..] {
                    assert_eq!(mask.is_masked(i, c), reference);
                }
            }
        }
    }

    #[test]
    fn no_visual_tokens_collapses_to_causal() {
        let layout = make_layout(0, 5).unwrap();
        let causal = build_mask(layout, MaskKind::Causal);
        for kind in MaskKind::ALL {
            let mask = build_mask(layout, kind);
            for r in 0..5 {
                for c in 0..5 {
                    assert_eq!(mask.is_masked(r, c), causal.is_masked(r, c));
                }
            }
        }
    }

    #[test]
    fn csv_dump_shape() {
        let mask = build_mask(make_layout(1, 1).unwrap(), MaskKind::Causal);
        assert_eq!(mask.to_csv(), "0,-inf\n0,0\n");
    }
}
