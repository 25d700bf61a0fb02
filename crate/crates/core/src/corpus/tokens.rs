//! Token-count estimators.
//!
//! Every budget in the crate (chunk size, memory size) is measured with one
//! of these estimators so that orderings and truncation points are
//! reproducible without a model-specific vocabulary.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// Which counting rule an estimator applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// One token per maximal run of non-whitespace characters.
    #[default]
    WhitespaceWords,
    /// `ceil(bytes / 4)`, the usual rule of thumb for BPE vocabularies.
    BytesDiv4,
    /// Greedy longest-match against a vocabulary file, per word.
    ExternalTokenizerTable,
}

impl EstimatorMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorMode::WhitespaceWords => "whitespace-words",
            EstimatorMode::BytesDiv4 => "bytes-div-4",
            EstimatorMode::ExternalTokenizerTable => "external-tokenizer-table",
        }
    }

    /// Whether a single whitespace-free run can be cut at a character
    /// boundary when it does not fit a budget on its own.
    pub fn can_subdivide_words(&self) -> bool {
        matches!(self, EstimatorMode::BytesDiv4)
    }
}

impl fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EstimatorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "whitespace-words" | "words" => Ok(EstimatorMode::WhitespaceWords),
            "bytes-div-4" | "bytes" => Ok(EstimatorMode::BytesDiv4),
            "external-tokenizer-table" | "table" => Ok(EstimatorMode::ExternalTokenizerTable),
            other => Err(format!("unknown token estimator mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenEstimatorConfig {
    pub mode: EstimatorMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocabulary_path: Option<PathBuf>,
}

impl TokenEstimatorConfig {
    pub fn new(mode: EstimatorMode) -> Self {
        Self {
            mode,
            vocabulary_path: None,
        }
    }

    pub fn build(&self) -> Result<TokenEstimator, CorpusError> {
        match self.mode {
            EstimatorMode::WhitespaceWords => Ok(TokenEstimator::WhitespaceWords),
            EstimatorMode::BytesDiv4 => Ok(TokenEstimator::BytesDiv4),
            EstimatorMode::ExternalTokenizerTable => {
                let path = self
                    .vocabulary_path
                    .as_deref()
                    .ok_or_else(|| CorpusError::Config("table estimator requires a vocabulary path".into()))?;
                Ok(TokenEstimator::Table(Arc::new(VocabularyTable::load(path)?)))
            }
        }
    }
}

/// A vocabulary of token pieces, one per line in the source file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabularyTable {
    pieces: HashSet<String>,
    max_piece_chars: usize,
}

impl VocabularyTable {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_pieces(raw.lines().map(str::to_owned)))
    }

    pub fn from_pieces<I: IntoIterator<Item = String>>(pieces: I) -> Self {
        let pieces: HashSet<String> = pieces.into_iter().filter(|p| !p.is_empty()).collect();
        let max_piece_chars = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(1);
        Self {
            pieces,
            max_piece_chars,
        }
    }

    /// Greedy longest-match segmentation of one word; unmatched characters
    /// count as a token each.
    fn count_word(&self, word: &str) -> usize {
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let mut count = 0;
        let mut pos = 0;
        while pos < chars.len() {
            let longest = self.max_piece_chars.min(chars.len() - pos);
            let mut step = 1;
            for len in (1..=longest).rev() {
                let start = chars[pos].0;
                let end = chars.get(pos + len).map_or(word.len(), |c| c.0);
                if self.pieces.contains(&word[start..end]) {
                    step = len;
                    break;
                }
            }
            count += 1;
            pos += step;
        }
        count
    }
}

/// A built estimator. Cloning is cheap.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TokenEstimator {
    #[default]
    WhitespaceWords,
    BytesDiv4,
    Table(Arc<VocabularyTable>),
}

impl TokenEstimator {
    pub fn mode(&self) -> EstimatorMode {
        match self {
            TokenEstimator::WhitespaceWords => EstimatorMode::WhitespaceWords,
            TokenEstimator::BytesDiv4 => EstimatorMode::BytesDiv4,
            TokenEstimator::Table(_) => EstimatorMode::ExternalTokenizerTable,
        }
    }

    pub fn estimate(&self, text: &str) -> usize {
        match self {
            TokenEstimator::WhitespaceWords => text.split_whitespace().count(),
            TokenEstimator::BytesDiv4 => text.len().div_ceil(4),
            TokenEstimator::Table(table) => text.split_whitespace().map(|w| table.count_word(w)).sum(),
        }
    }
}

pub fn estimate_tokens(text: &str, estimator: &TokenEstimator) -> usize {
    estimator.estimate(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_zero_tokens() {
        for est in [TokenEstimator::WhitespaceWords, TokenEstimator::BytesDiv4] {
            assert_eq!(est.estimate(""), 0);
        }
    }

    #[test]
    fn whitespace_words_counts_words() {
        assert_eq!(TokenEstimator::WhitespaceWords.estimate("one two three"), 3);
        assert_eq!(TokenEstimator::WhitespaceWords.estimate("  one\n\ttwo  "), 2);
    }

    #[test]
    fn bytes_div_4_on_8000_ascii_bytes() {
        let text: String = (0..8000).map(|i| (b'a' + (i % 26) as u8) as char).collect();
        assert_eq!(text.len(), 8000);
        assert_eq!(TokenEstimator::BytesDiv4.estimate(&text), 2000);
        assert_eq!(TokenEstimator::BytesDiv4.estimate("abcde"), 2);
    }

    #[test]
    fn table_segments_greedily() {
        let table = VocabularyTable::from_pieces(["un", "believ", "able", "a"].iter().map(|s| s.to_string()));
        let est = TokenEstimator::Table(Arc::new(table));
        // un + believ + able
        assert_eq!(est.estimate("unbelievable"), 3);
        // z, z are unknown
        assert_eq!(est.estimate("zz a"), 3);
    }

    #[test]
    fn table_mode_requires_path() {
        let cfg = TokenEstimatorConfig::new(EstimatorMode::ExternalTokenizerTable);
        assert!(matches!(cfg.build(), Err(CorpusError::Config(_))));
    }

    #[test]
    fn mode_round_trips_through_str() {
        for mode in [
            EstimatorMode::WhitespaceWords,
            EstimatorMode::BytesDiv4,
            EstimatorMode::ExternalTokenizerTable,
        ] {
            assert_eq!(mode.as_str().parse::<EstimatorMode>().unwrap(), mode);
        }
    }
}
