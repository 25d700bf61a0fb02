use crate::corpus::{estimate_tokens, TokenEstimator};

/// Byte offsets just past each maximal run of non-whitespace.
fn word_ends(text: &str) -> Vec<usize> {
    let mut ends = Vec::new();
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                ends.push(i);
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    if in_word {
        ends.push(text.len());
    }
    ends
}

/// Longest prefix of `text` whose estimate fits in `budget`.
///
/// Text already within budget is returned unchanged. Otherwise the cut falls
/// at the end of a word; if not even the first word fits, at a character
/// boundary. The result always fits, so truncation is idempotent.
pub fn truncate_to_budget<'a>(text: &'a str, budget: usize, estimator: &TokenEstimator) -> &'a str {
    if estimate_tokens(text, estimator) <= budget {
        return text;
    }
    let fits = |end: usize| estimate_tokens(&text[..end], estimator) <= budget;
    let ends = word_ends(text);
    let k = ends.partition_point(|&e| fits(e));
    if k > 0 {
        return &text[..ends[k - 1]];
    }
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).skip(1).collect();
    let k = bounds.partition_point(|&e| fits(e));
    let mut end = if k > 0 { bounds[k - 1] } else { 0 };
    while end > 0 && !fits(end) {
        end = text[..end].char_indices().last().map_or(0, |(i, _)| i);
    }
    &text[..end]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::VocabularyTable;
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn within_budget_is_unchanged() {
        let t = "a b  c \n";
        assert_eq!(truncate_to_budget(t, 3, &TokenEstimator::WhitespaceWords), t);
    }

    #[test]
    fn ten_words_budget_four() {
        let t = "w1 w2 w3 w4 w5 w6 w7 w8 w9 w10";
        assert_eq!(
            truncate_to_budget(t, 4, &TokenEstimator::WhitespaceWords),
            "w1 w2 w3 w4"
        );
    }

    #[test]
    fn bytes_mode_cuts_inside_long_word() {
        let t = "abcdefghijkl";
        assert_eq!(truncate_to_budget(t, 2, &TokenEstimator::BytesDiv4), "abcdefgh");
        assert_eq!(truncate_to_budget("ab cdefghij", 2, &TokenEstimator::BytesDiv4), "ab");
    }

    #[test]
    fn multibyte_boundaries() {
        let t = "ééééé";
        let out = truncate_to_budget(t, 1, &TokenEstimator::BytesDiv4);
        assert_eq!(out, "éé");
    }

    #[test]
    fn table_mode() {
        let table = TokenEstimator::Table(Arc::new(VocabularyTable::from_pieces(["ab".to_owned()])));
        // "xyz" costs 3 tokens, first word alone exceeds budget 2
        assert_eq!(truncate_to_budget("xyz ab", 2, &table), "xy");
        assert_eq!(truncate_to_budget("ab ab ab", 2, &table), "ab ab");
    }

    proptest! {
        #[test]
        fn idempotent_and_within_budget(words in proptest::collection::vec("[a-zé]{1,12}", 0..30), budget in 1usize..20, bytes in any::<bool>()) {
            let est = if bytes { TokenEstimator::BytesDiv4 } else { TokenEstimator::WhitespaceWords };
            let text = words.join(" ");
            let once = truncate_to_budget(&text, budget, &est);
            prop_assert!(estimate_tokens(once, &est) <= budget);
            prop_assert!(text.starts_with(once));
            prop_assert_eq!(truncate_to_budget(once, budget, &est), once);
        }
    }
}
