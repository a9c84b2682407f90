//! Character-offset helpers.
//!
//! All offsets emitted or consumed by this crate are Unicode scalar
//! positions (char indices), never bytes, so that offsets stay meaningful
//! when files are read by tooling in other languages.

/// Number of Unicode scalar values in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte offset of char index `pos`, or `None` if `pos > char_len(text)`.
pub fn byte_of_char(text: &str, pos: usize) -> Option<usize> {
    if pos == 0 {
        return Some(0);
    }
    let mut seen = 0;
    for (byte, _) in text.char_indices() {
        if seen == pos {
            return Some(byte);
        }
        seen += 1;
    }
    seen += 1;
    if seen == pos + 1 {
        Some(text.len())
    } else {
        None
    }
}

/// Slice `text` by char positions `[start, end)`.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_of_char(text, start)?;
    let b1 = byte_of_char(text, end)?;
    text.get(b0..b1)
}

/// Char index of the first occurrence of `needle` in `haystack`.
pub fn find_char(haystack: &str, needle: &str) -> Option<usize> {
    let byte = haystack.find(needle)?;
    Some(haystack[..byte].chars().count())
}
