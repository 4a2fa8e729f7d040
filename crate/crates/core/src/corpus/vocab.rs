use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use super::{is_marker, Sentence, SENT_END, SENT_START};
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const EOW: usize = 1;
pub const UNK_CHAR: usize = 2;
pub const SENT_START_CHAR: usize = 3;
pub const SENT_END_CHAR: usize = 4;
const SPECIALS: [&str; 5] = ["<pad>", "<eow>", "<unk>", SENT_START, SENT_END];

pub const DEFAULT_MAX_WORD_LEN: usize = 20;

/// Character inventory. Specials occupy indices 0..5, corpus characters
/// follow in order of first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

/// A word as a fixed-width row of character ids.
///
/// `ids` always has `max_len` entries: the word's characters, then `EOW`
/// if it is shorter than `max_len`, then `PAD`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedWord {
    pub ids: Vec<usize>,
    pub true_length: usize,
}

impl EncodedWord {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// Decoder targets: the characters plus the terminating `EOW` when it fits.
    pub fn targets(&self) -> &[usize] {
        let n = if self.true_length < self.max_len() {
            self.true_length + 1
        } else {
            self.true_length
        };
        &self.ids[..n]
    }

    pub fn chars(&self) -> &[usize] {
        &self.ids[..self.true_length]
    }

    pub fn has_unknown(&self) -> bool {
        self.chars().contains(&UNK_CHAR)
    }
}

impl CharVocab {
    /// Vocabulary over an explicit character list (after the specials).
    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        let mut v = CharVocab {
            chars: Vec::new(),
            index: HashMap::new(),
        };
        for c in chars {
            if c.is_whitespace() {
                return Err(Error::Corpus(format!("whitespace {c:?} cannot be a vocabulary symbol")));
            }
            if v.index.contains_key(&c) {
                return Err(Error::Corpus(format!("duplicate character {c:?}")));
            }
            v.index.insert(c, SPECIALS.len() + v.chars.len());
            v.chars.push(c);
        }
        Ok(v)
    }

    pub fn build(sentences: &[Sentence]) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut order = Vec::new();
        for w in sentences.iter().flatten().filter(|w| !is_marker(w)) {
            for c in w.chars() {
                if seen.insert(c) {
                    order.push(c);
                }
            }
        }
        if order.is_empty() {
            return Err(Error::Empty("character vocabulary"));
        }
        Self::from_chars(order)
    }

    pub fn len(&self) -> usize {
        SPECIALS.len() + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, c: char) -> Option<usize> {
        self.index.get(&c).copied()
    }

    /// Display form of a symbol id.
    pub fn symbol(&self, id: usize) -> String {
        match id {
            i if i < SPECIALS.len() => SPECIALS[i].to_owned(),
            i => self.chars.get(i - SPECIALS.len()).map_or_else(|| "?".into(), |c| c.to_string()),
        }
    }

    pub fn encode(&self, word: &str, max_len: usize) -> Result<EncodedWord> {
        if word.is_empty() {
            return Err(Error::Corpus("cannot encode an empty word".into()));
        }
        if max_len == 0 {
            return Err(Error::Config("max word length must be positive".into()));
        }
        let mut ids = Vec::with_capacity(max_len);
        match word {
            SENT_START => ids.push(SENT_START_CHAR),
            SENT_END => ids.push(SENT_END_CHAR),
            _ => ids.extend(
                word.chars()
                    .take(max_len)
                    .map(|c| self.get(c).unwrap_or(UNK_CHAR)),
            ),
        }
        let true_length = ids.len();
        if true_length < max_len {
            ids.push(EOW);
        }
        ids.resize(max_len, PAD);
        Ok(EncodedWord { ids, true_length })
    }

    /// Turns character ids back into a token, stopping at `EOW` or `PAD`.
    pub fn decode(&self, ids: &[usize]) -> String {
        match ids.first() {
            Some(&SENT_START_CHAR) => return SENT_START.to_owned(),
            Some(&SENT_END_CHAR) => return SENT_END.to_owned(),
            _ => {}
        }
        let mut s = String::new();
        for &i in ids {
            match i {
                EOW | PAD => break,
                UNK_CHAR => s.push('\u{fffd}'),
                i if i < SPECIALS.len() => {}
                i => s.push(self.chars[i - SPECIALS.len()]),
            }
        }
        s
    }

    /// One symbol per line; the line number is the index.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for name in SPECIALS {
            s.push_str(name);
            s.push('\n');
        }
        for c in &self.chars {
            s.push(*c);
            s.push('\n');
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < SPECIALS.len() || lines[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Corpus("vocabulary file must start with the special symbols".into()));
        }
        let mut chars = Vec::new();
        for (n, l) in lines[SPECIALS.len()..].iter().enumerate() {
            let mut it = l.chars();
            match (it.next(), it.next()) {
                (Some(c), None) => chars.push(c),
                _ => {
                    return Err(Error::Corpus(format!(
                        "vocabulary line {} is not a single character: {l:?}",
                        n + SPECIALS.len() + 1
                    )))
                }
            }
        }
        Self::from_chars(chars)
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_file_string())
    }
}

/// Word vocabulary for the word-level baseline. Ids 0..3 are `<unk>`, `<s>`
/// and `</s>`; the rest are sorted by descending frequency, ties broken
/// lexicographically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WordVocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK_WORD: usize = 0;
const WORD_SPECIALS: [&str; 3] = ["<unk>", SENT_START, SENT_END];

impl WordVocab {
    pub fn from_words(words: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut v = WordVocab {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in WORD_SPECIALS.iter().map(|s| s.to_string()).chain(words) {
            if w.is_empty() || w.contains(char::is_whitespace) {
                return Err(Error::Corpus(format!("invalid vocabulary word {w:?}")));
            }
            if v.index.contains_key(&w) {
                return Err(Error::Corpus(format!("duplicate word {w:?}")));
            }
            v.index.insert(w.clone(), v.words.len());
            v.words.push(w);
        }
        Ok(v)
    }

    /// Builds from corpus counts, keeping at most `max_size` entries
    /// (specials included) when given.
    pub fn build(sentences: &[Sentence], max_size: Option<usize>) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in sentences.iter().flatten().filter(|w| !is_marker(w)) {
            *counts.entry(w.as_str()).or_default() += 1;
        }
        if counts.is_empty() {
            return Err(Error::Empty("word vocabulary"));
        }
        let mut sorted: Vec<(&str, usize)> = counts.into_iter().collect();
        sorted.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let keep = max_size.map_or(sorted.len(), |m| m.saturating_sub(WORD_SPECIALS.len()));
        Self::from_words(sorted.into_iter().take(keep).map(|(w, _)| w.to_owned()))
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK_WORD)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for w in &self.words {
            let _ = writeln!(s, "{w}");
        }
        s
    }

    pub fn from_file_string(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < WORD_SPECIALS.len() || lines[..WORD_SPECIALS.len()] != WORD_SPECIALS {
            return Err(Error::Corpus("word vocabulary must start with <unk>, <s>, </s>".into()));
        }
        Self::from_words(lines[WORD_SPECIALS.len()..].iter().map(|s| s.to_string()))
    }

    pub fn hash(&self) -> String {
        content_hash(&self.to_file_string())
    }
}

fn content_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..16].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
