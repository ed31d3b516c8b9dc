use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{KawhiError, Result};

/// Paragraph boundary marker.
pub const PARAGRAPH_DELIMITER: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    /// Byte span of the paragraph text (delimiters excluded).
    pub chars: Range<usize>,
    /// Tokens whose span starts inside the paragraph text.
    pub tokens: Range<usize>,
    /// `tokens` plus any delimiter-only tokens attached to this paragraph.
    pub owned: Range<usize>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParagraphSegmentation {
    pub paragraphs: Vec<Paragraph>,
    pub num_tokens: usize,
}

impl ParagraphSegmentation {
    pub fn len(&self) -> usize {
        self.paragraphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paragraphs.is_empty()
    }

    /// Owning paragraph of every token.
    pub fn token_owner(&self) -> Vec<usize> {
        let mut owner = vec![0; self.num_tokens];
        for (j, p) in self.paragraphs.iter().enumerate() {
            owner[p.owned.clone()].fill(j);
        }
        owner
    }
}

/// Non-empty text spans between paragraph delimiters.
fn content_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = 0;
    for (pos, _) in text.match_indices(PARAGRAPH_DELIMITER) {
        if pos > start {
            spans.push(start..pos);
        }
        start = pos + PARAGRAPH_DELIMITER.len();
    }
    if start < text.len() {
        spans.push(start..text.len());
    }
    spans
}

/// Split a response into paragraphs at every `"\n\n"`.
///
/// `token_offsets[t]` is the byte span of token `t` in `text`; offsets must
/// be ordered by start. A token belongs to the paragraph containing its
/// start byte. Tokens starting inside a delimiter run belong to the preceding
/// paragraph (or the first one, for leading delimiters). A paragraph that no
/// token starts in is folded into its predecessor.
pub fn segment_paragraphs(text: &str, token_offsets: &[(usize, usize)]) -> Result<ParagraphSegmentation> {
    if token_offsets.is_empty() {
        return Err(KawhiError::invalid("response has no tokens"));
    }
    for (t, w) in token_offsets.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            return Err(KawhiError::invalid(format!(
                "token offsets not ordered at token {}",
                t + 1
            )));
        }
    }
    if let Some(t) = token_offsets.iter().position(|&(s, e)| e < s || s > text.len()) {
        return Err(KawhiError::invalid(format!("token {t} span lies outside the text")));
    }
    let spans = content_spans(text);
    if spans.is_empty() {
        return Err(KawhiError::invalid("response has no non-delimiter content"));
    }

    // first token starting at or after each span, and the first token past its content
    let first_at = |byte: usize| token_offsets.partition_point(|&(s, _)| s < byte);
    let mut paragraphs: Vec<Paragraph> = Vec::with_capacity(spans.len());
    for span in spans {
        let tokens = first_at(span.start)..first_at(span.end);
        if tokens.is_empty() {
            continue;
        }
        paragraphs.push(Paragraph {
            text: text[span.clone()].to_string(),
            chars: span,
            owned: tokens.clone(),
            tokens,
        });
    }
    if paragraphs.is_empty() {
        return Err(KawhiError::invalid("no token starts inside paragraph content"));
    }
    // delimiter tokens: extend owners to cover the gaps
    let n = token_offsets.len();
    let count = paragraphs.len();
    for j in 0..count {
        let end = if j + 1 < count {
            paragraphs[j + 1].tokens.start
        } else {
            n
        };
        paragraphs[j].owned.end = end;
    }
    paragraphs[0].owned.start = 0;
    Ok(ParagraphSegmentation {
        paragraphs,
        num_tokens: n,
    })
}

/// Byte spans for whitespace-separated words, with each `"\n\n"` run split
/// out as its own token. Handy for plain-text inputs without a tokenizer.
pub fn whitespace_token_offsets(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if text[i..].starts_with(PARAGRAPH_DELIMITER) {
            out.push((i, i + 2));
            i += 2;
        } else if bytes[i].is_ascii_whitespace() {
            i += 1;
        } else {
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            out.push((start, i));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn per_char(text: &str) -> Vec<(usize, usize)> {
        (0..text.len()).map(|i| (i, i + 1)).collect()
    }

    #[test]
    fn clean_delimiters() {
        let s = segment_paragraphs("a\n\nb\n\nc", &per_char("a\n\nb\n\nc")).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.paragraphs[0].tokens, 0..1);
        // the two newline tokens after "a" stay with paragraph 0
        assert_eq!(s.paragraphs[0].owned, 0..3);
        assert_eq!(s.paragraphs[2].owned, 6..7);
        assert_eq!(s.token_owner(), vec![0, 0, 0, 1, 1, 1, 2]);
    }

    #[test]
    fn no_delimiter_is_one_paragraph() {
        let text = "a b c";
        let s = segment_paragraphs(text, &whitespace_token_offsets(text)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.paragraphs[0].owned, 0..3);
    }

    #[test]
    fn empty_segments_dropped() {
        let text = "a\n\n\n\nb";
        let s = segment_paragraphs(text, &per_char(text)).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.paragraphs[1].text, "b");
        let lead = "\n\nx\n\n";
        let s = segment_paragraphs(lead, &per_char(lead)).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.paragraphs[0].owned, 0..5);
    }

    #[test]
    fn delimiter_only_text_rejected() {
        assert!(segment_paragraphs("\n\n\n\n", &per_char("\n\n\n\n")).is_err());
        assert!(segment_paragraphs("abc", &[]).is_err());
        assert!(segment_paragraphs("abc", &[(1, 2), (0, 1)]).is_err());
    }

    #[test]
    fn straddling_token_folds_paragraph() {
        // one token covers "a\n\nb": paragraph "b" has no starting token
        let s = segment_paragraphs("a\n\nb c", &[(0, 4), (5, 6)]).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.paragraphs[1].text, "b c");
        assert_eq!(s.paragraphs[1].tokens, 1..2);
        let s = segment_paragraphs("a\n\nb", &[(0, 4)]).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn whitespace_tokens() {
        let text = "ab c\n\nd";
        assert_eq!(whitespace_token_offsets(text), vec![(0, 2), (3, 4), (4, 6), (6, 7)]);
    }
}
