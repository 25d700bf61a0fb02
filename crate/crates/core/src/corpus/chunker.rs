use std::io::Write;

use serde::{Deserialize, Serialize};

use super::tokens::TokenEstimator;
use super::CorpusError;

/// A contiguous, token-bounded slice of a source document.
///
/// Field order matches the chunk dump format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub seq_index: usize,
    pub token_count: usize,
    pub text: String,
}

impl Chunk {
    pub fn new(doc_id: &str, seq_index: usize, text: String, estimator: &TokenEstimator) -> Self {
        Self {
            chunk_id: format!("{doc_id}#{seq_index}"),
            doc_id: doc_id.to_owned(),
            seq_index,
            token_count: estimator.estimate(&text),
            text,
        }
    }
}

/// Byte offsets where a whitespace run ends and a word begins, plus the end
/// of the text. Every prefix ending at one of these holds whole words only.
fn whitespace_cut_points(text: &str) -> Vec<usize> {
    let mut cuts = Vec::new();
    let mut prev_ws = false;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if prev_ws && !ws {
            cuts.push(i);
        }
        prev_ws = ws;
    }
    cuts.push(text.len());
    cuts
}

/// Splits `text` into chunks of at most `limit` estimated tokens.
///
/// Greedy longest-fit: each chunk extends to the furthest whitespace boundary
/// that keeps it within budget. Trailing whitespace stays with the chunk it
/// follows, so concatenating the chunk texts reproduces `text` exactly.
pub fn split_into_chunks(
    doc_id: &str,
    text: &str,
    limit: usize,
    estimator: &TokenEstimator,
) -> Result<Vec<Chunk>, CorpusError> {
    if limit == 0 {
        return Err(CorpusError::InvalidLimit);
    }
    if text.is_empty() {
        return Err(CorpusError::EmptyText {
            doc_id: doc_id.to_owned(),
        });
    }

    let cuts = whitespace_cut_points(text);
    let fits = |start: usize, end: usize| estimator.estimate(&text[start..end]) <= limit;

    let mut chunks = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let end = if fits(start, text.len()) {
            text.len()
        } else {
            let lo = cuts.partition_point(|&c| c <= start);
            let candidates = &cuts[lo..];
            // Estimates are monotone over whole-word prefixes.
            let n_fit = candidates.partition_point(|&c| fits(start, c));
            if n_fit > 0 {
                candidates[n_fit - 1]
            } else if estimator.mode().can_subdivide_words() {
                let boundaries: Vec<usize> = text[start..]
                    .char_indices()
                    .skip(1)
                    .map(|(i, _)| start + i)
                    .chain(std::iter::once(text.len()))
                    .collect();
                let n = boundaries.partition_point(|&b| fits(start, b));
                if n == 0 {
                    return Err(unsplittable(doc_id, text, start));
                }
                boundaries[n - 1]
            } else {
                return Err(unsplittable(doc_id, text, start));
            }
        };
        let piece = text[start..end].to_owned();
        chunks.push(Chunk::new(doc_id, chunks.len(), piece, estimator));
        start = end;
    }
    Ok(chunks)
}

fn unsplittable(doc_id: &str, text: &str, start: usize) -> CorpusError {
    let rest = &text[start..];
    let lead = rest.len() - rest.trim_start().len();
    let run_len = rest[lead..].find(char::is_whitespace).unwrap_or(rest.len() - lead);
    CorpusError::TextUnsplittable {
        doc_id: doc_id.to_owned(),
        byte_offset: start + lead,
        run_bytes: run_len,
    }
}

/// Writes chunks as JSONL, one object per line.
pub fn write_chunk_dump<W: Write>(mut out: W, chunks: &[Chunk]) -> std::io::Result<()> {
    for chunk in chunks {
        serde_json::to_writer(&mut out, chunk)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokens::VocabularyTable;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn words(chunks: &[Chunk]) -> Vec<usize> {
        chunks.iter().map(|c| c.token_count).collect()
    }

    fn join(chunks: &[Chunk]) -> String {
        chunks.iter().map(|c| c.text.as_str()).collect()
    }

    #[test]
    fn five_words_limit_two() {
        let est = TokenEstimator::WhitespaceWords;
        let chunks = split_into_chunks("d", "a b c d e", 2, &est).unwrap();
        assert_eq!(words(&chunks), vec![2, 2, 1]);
        assert_eq!(chunks[0].text, "a b ");
        assert_eq!(chunks[2].text, "e");
        assert_eq!(join(&chunks), "a b c d e");
    }

    #[test]
    fn short_text_is_a_single_chunk() {
        let est = TokenEstimator::WhitespaceWords;
        let text = "  the whole text\n";
        let chunks = split_into_chunks("d", text, 10, &est).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].seq_index, 0);
        assert_eq!(chunks[0].chunk_id, "d#0");
    }

    #[test]
    fn synthetic_25k_token_document() {
        let est = TokenEstimator::WhitespaceWords;
        let text: String = (0..25_000)
            .map(|i| format!("w{}{}", i % 97, if i % 13 == 0 { "\n" } else { " " }))
            .collect();
        let chunks = split_into_chunks("doc", &text, 8000, &est).unwrap();
        assert_eq!(words(&chunks), vec![8000, 8000, 8000, 1000]);
        assert_eq!(join(&chunks).as_bytes(), text.as_bytes());
        let seq: Vec<usize> = chunks.iter().map(|c| c.seq_index).collect();
        assert_eq!(seq, vec![0, 1, 2, 3]);
    }

    #[test]
    fn rejects_bad_input() {
        let est = TokenEstimator::WhitespaceWords;
        assert!(matches!(
            split_into_chunks("d", "x", 0, &est),
            Err(CorpusError::InvalidLimit)
        ));
        assert!(matches!(
            split_into_chunks("d", "", 3, &est),
            Err(CorpusError::EmptyText { .. })
        ));
    }

    #[test]
    fn bytes_mode_subdivides_long_runs() {
        let est = TokenEstimator::BytesDiv4;
        let text = format!("ab {}", "x".repeat(30));
        let chunks = split_into_chunks("d", &text, 2, &est).unwrap();
        assert!(chunks.iter().all(|c| c.token_count <= 2));
        assert_eq!(join(&chunks), text);
        assert_eq!(chunks[0].text, "ab ");
    }

    #[test]
    fn bytes_mode_respects_char_boundaries() {
        let est = TokenEstimator::BytesDiv4;
        let text = "é".repeat(20);
        let chunks = split_into_chunks("d", &text, 1, &est).unwrap();
        assert!(chunks.iter().all(|c| c.token_count <= 1));
        assert_eq!(join(&chunks), text);
    }

    #[test]
    fn table_mode_raises_unsplittable() {
        let table = VocabularyTable::from_pieces(["ab".to_string()]);
        let est = TokenEstimator::Table(Arc::new(table));
        let err = split_into_chunks("d", "ab qqqqqq ab", 3, &est).unwrap_err();
        match err {
            CorpusError::TextUnsplittable {
                byte_offset, run_bytes, ..
            } => {
                assert_eq!(byte_offset, 3);
                assert_eq!(run_bytes, 6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dump_is_one_object_per_line() {
        let est = TokenEstimator::WhitespaceWords;
        let chunks = split_into_chunks("d", "a b c", 2, &est).unwrap();
        let mut buf = Vec::new();
        write_chunk_dump(&mut buf, &chunks).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        assert_eq!(
            first,
            r#"{"chunk_id":"d#0","doc_id":"d","seq_index":0,"token_count":2,"text":"a b "}"#
        );
        assert_eq!(text.lines().count(), 2);
    }

    fn doc_strategy() -> impl Strategy<Value = String> {
        proptest::collection::vec(
            prop_oneof![
                "[a-z]{1,7}",
                Just(" ".to_string()),
                Just("\n".to_string()),
                Just("  ".to_string()),
                "[éü中]{1,3}",
            ],
            1..80,
        )
        .prop_map(|parts| parts.concat())
    }

    proptest! {
        #[test]
        fn chunks_round_trip_and_respect_budget(text in doc_strategy(), limit in 1usize..12) {
            for est in [TokenEstimator::WhitespaceWords, TokenEstimator::BytesDiv4] {
                let chunks = split_into_chunks("p", &text, limit, &est).unwrap();
                prop_assert_eq!(join(&chunks), text.clone());
                for (i, c) in chunks.iter().enumerate() {
                    prop_assert_eq!(c.seq_index, i);
                    prop_assert!(c.token_count <= limit);
                    prop_assert_eq!(c.token_count, est.estimate(&c.text));
                }
                let again = split_into_chunks("p", &text, limit, &est).unwrap();
                prop_assert_eq!(again, chunks);
            }
        }

        #[test]
        fn split_points_are_whitespace_boundaries(text in doc_strategy(), limit in 1usize..6) {
            let est = TokenEstimator::WhitespaceWords;
            let chunks = split_into_chunks("p", &text, limit, &est).unwrap();
            for pair in chunks.windows(2) {
                let left = &pair[0].text;
                prop_assert!(left.ends_with(char::is_whitespace));
                prop_assert!(!pair[1].text.starts_with(char::is_whitespace));
            }
        }

        #[test]
        fn estimate_is_monotone_under_concatenation(a in doc_strategy(), b in doc_strategy()) {
            for est in [TokenEstimator::WhitespaceWords, TokenEstimator::BytesDiv4] {
                let joined = est.estimate(&format!("{a}{b}"));
                prop_assert!(joined >= est.estimate(&a).max(est.estimate(&b)));
            }
        }
    }
}
