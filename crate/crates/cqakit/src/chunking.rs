//! Sliding-window chunking for length-limited consumers, plus the
//! partial-highlighting statistics over a batch of chunked examples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Split `len` token positions into windows of `window` tokens advancing by
/// `stride`. Consecutive chunks overlap by `window - stride`; the last chunk
/// is clipped to `len`.
pub fn chunk_tokens(len: usize, window: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if window == 0 {
        return Err(Error::Config("chunk window must be positive".into()));
    }
    if stride == 0 || stride > window {
        return Err(Error::Config(format!(
            "chunk stride must satisfy 0 < stride <= window, got stride {stride}, window {window}"
        )));
    }
    if len <= window {
        return Ok(vec![(0, len)]);
    }
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + window).min(len);
        chunks.push((start, end));
        if start + window >= len {
            break;
        }
        start += stride;
    }
    Ok(chunks)
}

/// Chunks and highlighted spans (token coordinates) for one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedExample {
    pub chunks: Vec<(usize, usize)>,
    pub spans: Vec<(usize, usize)>,
}

/// Batch fractions for the chunking report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightStats {
    /// Fraction of examples split into more than one chunk.
    pub examples_split: f64,
    /// Fraction of chunks intersecting some span without containing it.
    pub chunks_partial: f64,
}

/// A chunk is "partial" iff it intersects a span without containing it
/// entirely.
pub fn chunk_is_partial(chunk: (usize, usize), span: (usize, usize)) -> bool {
    let intersects = span.0 < chunk.1 && chunk.0 < span.1;
    let contains = chunk.0 <= span.0 && span.1 <= chunk.1;
    intersects && !contains
}

/// Compute split/partial fractions over a batch of chunked examples.
pub fn partial_highlight_stats(batch: &[ChunkedExample]) -> HighlightStats {
    if batch.is_empty() {
        return HighlightStats {
            examples_split: 0.0,
            chunks_partial: 0.0,
        };
    }
    let split = batch.iter().filter(|ex| ex.chunks.len() > 1).count();
    let total_chunks: usize = batch.iter().map(|ex| ex.chunks.len()).sum();
    let partial_chunks: usize = batch
        .iter()
        .flat_map(|ex| {
            ex.chunks
                .iter()
                .filter(|&&chunk| ex.spans.iter().any(|&span| chunk_is_partial(chunk, span)))
        })
        .count();
    HighlightStats {
        examples_split: split as f64 / batch.len() as f64,
        chunks_partial: if total_chunks == 0 {
            0.0
        } else {
            partial_chunks as f64 / total_chunks as f64
        },
    }
}

/// Convert a char-offset span to token coordinates: the half-open range of
/// token indices whose char ranges intersect the span. Returns `None` when
/// the span touches no token.
pub fn span_to_token_coords(
    tokens: &[crate::strategies::Token<'_>],
    span: (usize, usize),
) -> Option<(usize, usize)> {
    let mut first = None;
    let mut last = None;
    for (i, tok) in tokens.iter().enumerate() {
        if span.0 < tok.end && tok.start < span.1 {
            if first.is_none() {
                first = Some(i);
            }
            last = Some(i + 1);
        }
    }
    Some((first?, last?))
}
