//! Sentence-per-line corpora, character and word vocabularies, stream
//! batching, and dataset statistics.

mod stats;
mod streams;
mod vocab;

use std::fs;
use std::path::Path;

pub use stats::{CorpusStats, LENGTH_BUCKETS};
pub use streams::{StreamBatch, StreamStep};
pub use vocab::{
    CharVocab, EncodedWord, WordVocab, DEFAULT_MAX_WORD_LEN, EOW, PAD, SENT_END_CHAR,
    SENT_START_CHAR, UNK_CHAR, UNK_WORD,
};

use crate::error::{Error, Result};

/// Pseudo-word opening every sentence.
pub const SENT_START: &str = "<s>";
/// Pseudo-word closing every sentence.
pub const SENT_END: &str = "</s>";

pub type Sentence = Vec<String>;

pub fn is_marker(token: &str) -> bool {
    token == SENT_START || token == SENT_END
}

/// Splits one line on whitespace and wraps it in sentence markers.
/// Blank lines give `None`.
pub fn parse_line(line: &str, lowercase: bool) -> Option<Sentence> {
    let mut words: Vec<String> = line
        .split_whitespace()
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_owned() })
        .collect();
    if words.is_empty() {
        return None;
    }
    words.insert(0, SENT_START.to_owned());
    words.push(SENT_END.to_owned());
    Some(words)
}

pub fn parse_sentences(text: &str, lowercase: bool) -> Vec<Sentence> {
    text.lines().filter_map(|l| parse_line(l, lowercase)).collect()
}

/// Reads a UTF-8 file with one whitespace-tokenised sentence per line.
pub fn load_sentences(path: impl AsRef<Path>, lowercase: bool) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let line = std::str::from_utf8(raw).map_err(|_| Error::Encoding {
            path: path.to_owned(),
            line: i + 1,
        })?;
        out.extend(parse_line(line, lowercase));
    }
    Ok(out)
}

/// Number of non-marker tokens.
pub fn count_words(sentences: &[Sentence]) -> usize {
    sentences
        .iter()
        .flat_map(|s| s.iter())
        .filter(|w| !is_marker(w))
        .count()
}
