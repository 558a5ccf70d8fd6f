//! Relative positions for sequences with a marked insertion span.
//!
//! A composed sequence has three regions: a left context, a span of slots
//! under construction (whose last slot is reserved for the end-of-insertion
//! marker), and a right context. Queries inside the span must see the right
//! context at offsets that do not depend on how many tokens the span will
//! eventually hold, so that scores computed token-by-token match scores
//! computed after the fact. The [`effective_offset`] function produces such
//! offsets by correcting raw position differences with [`phi`];
//! [`oracle_offset`] computes the same quantity by an unrelated route
//! (re-coordinating both positions) and exists so the two can be checked
//! against each other exhaustively.
//!
//! All offset arithmetic is translation invariant: only differences of
//! positions appear, so callers may use 0- or 1-based coordinates as long
//! as `i`, `j`, `a` and `b` share an origin.

use crate::error::{Error, Result};
use crate::numerics::{real, Scalar, Tensor};

/// Which region of the composed sequence a position falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    Left,
    Span,
    Right,
}

fn side(p: i64, a: i64, b: i64) -> Side {
    if p < a {
        Side::Left
    } else if p > b {
        Side::Right
    } else {
        Side::Span
    }
}

/// Reference offset computed from virtual coordinates.
///
/// Positions `a..=b` are the span slots (`b` is the marker slot). The rules,
/// derived region by region rather than through a correction term:
///
/// * both positions in the same context region, or a span query looking at
///   the left context or at an earlier span slot: the raw difference
///   `i - j` already means what it should;
/// * the two context regions looking across the span: both positions are
///   re-coordinated as if the span were a single unfilled slot, i.e. the
///   right region shifts left by `b - a`;
/// * a span query looking at the right context: every span slot pretends to
///   be the last position before the suffix, `b - 1`, so the offset is
///   `(b - 1) - j` no matter where in the span the query sits;
/// * everything else (contexts looking into the span, span slots looking
///   forward within the span) is illegal and yields `None`.
pub fn oracle_offset(i: i64, j: i64, a: i64, b: i64) -> Option<i64> {
    let collapse = |p: i64| if p > b { p - (b - a) } else { p };
    match (side(i, a, b), side(j, a, b)) {
        (Side::Left, Side::Left) | (Side::Right, Side::Right) => Some(i - j),
        (Side::Left, Side::Right) | (Side::Right, Side::Left) => {
            Some(collapse(i) - collapse(j))
        }
        (Side::Span, Side::Span) if j <= i => Some(i - j),
        (Side::Span, Side::Left) => Some(i - j),
        (Side::Span, Side::Right) => Some((b - 1) - j),
        _ => None,
    }
}

/// Correction subtracted (with the sign of `i - j`) from the raw position
/// difference to obtain the effective offset. `None` marks pairs that must
/// not attend to each other.
pub fn phi(i: i64, j: i64, a: i64, b: i64) -> Option<i64> {
    let si = side(i, a, b);
    let sj = side(j, a, b);
    if si == sj && si != Side::Span {
        return Some(0);
    }
    if si != Side::Span && sj != Side::Span {
        return Some(b - a);
    }
    if si == Side::Span && j <= i && sj != Side::Right {
        return Some(0);
    }
    if si == Side::Span && sj == Side::Right {
        return Some(b - i - 1);
    }
    None
}

/// Effective relative offset `i - j - sign(i - j) * phi(i, j, a, b)`, or
/// `None` where attention is disallowed.
pub fn effective_offset(i: i64, j: i64, a: i64, b: i64) -> Option<i64> {
    let d = i - j;
    phi(i, j, a, b).map(|f| d - d.signum() * f)
}

/// Geometry of one composed sequence: total length and the span boundaries.
///
/// Slots `a..b` hold inserted tokens and slot `b` holds the end-of-insertion
/// marker; `a == b` describes an empty span (marker only). Everything before
/// `a` is left context, everything after `b` is right context (including any
/// trailing style or classification slots).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpanLayout {
    pub len: usize,
    pub a: usize,
    pub b: usize,
}

impl SpanLayout {
    pub fn new(len: usize, a: usize, b: usize) -> Result<Self> {
        if a > b || b >= len {
            return Err(Error::Contract(format!(
                "span layout needs a <= b < len, got a={a} b={b} len={len}"
            )));
        }
        Ok(SpanLayout { len, a, b })
    }

    /// Number of token slots in the span, not counting the marker slot.
    pub fn span_len(&self) -> usize {
        self.b - self.a
    }

    pub fn in_span(&self, p: usize) -> bool {
        self.a <= p && p <= self.b
    }
}

/// Dense offset and legality tables for every query/key pair of a layout.
///
/// The content mask admits exactly the pairs with a defined offset; the
/// query mask additionally forbids the diagonal, because a slot predicting
/// its own token must not see that token's content state.
pub struct OffsetMatrix {
    len: usize,
    offsets: Vec<i64>,
    legal: Vec<bool>,
}

impl OffsetMatrix {
    /// Offsets with span collapse, as used by the insertion model.
    pub fn insertion(layout: SpanLayout) -> Self {
        Self::build(layout, effective_offset)
    }

    /// Raw position differences under the same legality pattern. Used by the
    /// left-to-right ablation, which keeps the masking but not the collapse,
    /// so its context states shift whenever the span length changes.
    pub fn raw(layout: SpanLayout) -> Self {
        Self::build(layout, |i, j, a, b| {
            effective_offset(i, j, a, b).map(|_| i - j)
        })
    }

    /// Every pair legal at raw position differences: the plain bidirectional
    /// encode used for style classification, which has no insertion span.
    pub fn full(len: usize) -> Self {
        let mut offsets = vec![0i64; len * len];
        for i in 0..len {
            for j in 0..len {
                offsets[i * len + j] = i as i64 - j as i64;
            }
        }
        OffsetMatrix { len, offsets, legal: vec![true; len * len] }
    }

    fn build(layout: SpanLayout, f: impl Fn(i64, i64, i64, i64) -> Option<i64>) -> Self {
        let n = layout.len;
        let (a, b) = (layout.a as i64, layout.b as i64);
        let mut offsets = vec![0i64; n * n];
        let mut legal = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                if let Some(o) = f(i as i64, j as i64, a, b) {
                    offsets[i * n + j] = o;
                    legal[i * n + j] = true;
                }
            }
        }
        OffsetMatrix { len: n, offsets, legal }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Effective offset for a legal pair; 0 for illegal pairs, which are
    /// excluded by the masks before any score is read.
    pub fn offset(&self, i: usize, j: usize) -> i64 {
        self.offsets[i * self.len + j]
    }

    pub fn legal(&self, i: usize, j: usize) -> bool {
        self.legal[i * self.len + j]
    }

    pub fn query_legal(&self, i: usize, j: usize) -> bool {
        self.legal(i, j) && i != j
    }

    /// Row-major content mask, reusable across heads and layers.
    pub fn content_mask(&self) -> Vec<bool> {
        self.legal.clone()
    }

    /// Row-major query-stream mask: content legality minus the diagonal.
    pub fn query_mask(&self) -> Vec<bool> {
        let mut m = self.legal.clone();
        for i in 0..self.len {
            m[i * self.len + i] = false;
        }
        m
    }
}

/// Sinusoidal embeddings for relative offsets in `-max_offset..=max_offset`.
///
/// Row `k` encodes offset `k - max_offset`; even columns carry sines and odd
/// columns the matching cosines, with geometrically spaced frequencies.
/// Offsets outside the covered range clamp to the nearest edge row.
pub struct SinusoidTable<F: Scalar> {
    max_offset: usize,
    table: Tensor<F>,
}

impl<F: Scalar> SinusoidTable<F> {
    pub fn new(d_model: usize, max_offset: usize) -> Result<Self> {
        if d_model == 0 || d_model % 2 != 0 {
            return Err(Error::Contract(format!(
                "sinusoid table needs an even width, got {d_model}"
            )));
        }
        let rows = 2 * max_offset + 1;
        let mut data = vec![F::zero(); rows * d_model];
        for r in 0..rows {
            let offset = r as f64 - max_offset as f64;
            for k in 0..d_model / 2 {
                let freq = 1.0 / 10000f64.powf(2.0 * k as f64 / d_model as f64);
                data[r * d_model + 2 * k] = real((offset * freq).sin());
                data[r * d_model + 2 * k + 1] = real((offset * freq).cos());
            }
        }
        Ok(SinusoidTable {
            max_offset,
            table: Tensor::new(vec![rows, d_model], data)?,
        })
    }

    /// Row index for an offset, clamping to the covered range.
    pub fn row_index(&self, offset: i64) -> usize {
        let m = self.max_offset as i64;
        (offset.clamp(-m, m) + m) as usize
    }

    pub fn rows(&self) -> usize {
        2 * self.max_offset + 1
    }

    pub fn table(&self) -> &Tensor<F> {
        &self.table
    }
}
