//! Deterministic whitespace/punctuation tokenizer for the offline backends.
//!
//! A token is any leading whitespace followed by either a run of
//! alphanumeric characters or a single other character. Trailing whitespace
//! at the end of the text forms its own token.

/// Byte ranges of tokens in `text`. Tokens tile the text with no gaps.
pub fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut iter = text.char_indices().peekable();
    while let Some(&(start, _)) = iter.peek() {
        while iter.next_if(|(_, c)| c.is_whitespace()).is_some() {}
        match iter.next() {
            None => {}
            Some((_, c)) if c.is_alphanumeric() => {
                while iter.next_if(|(_, c)| c.is_alphanumeric()).is_some() {}
            }
            Some(_) => {}
        }
        let end = iter.peek().map_or(text.len(), |&(i, _)| i);
        spans.push((start, end));
    }
    spans
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).len()
}
