use std::collections::HashMap;
use std::fmt;

use super::{is_marker, Sentence};
use crate::error::{Error, Result};

/// Word-length buckets of five characters; the last one is open-ended.
pub const LENGTH_BUCKETS: [&str; 8] = ["1-5", "6-10", "11-15", "16-20", "21-25", "26-30", "31-35", "36+"];

/// Token counts of a corpus, sentence markers excluded.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub total_tokens: usize,
    pub unique_tokens: usize,
    /// Types by descending frequency, ties in lexicographic order.
    pub ranked: Vec<(String, usize)>,
    /// Token counts per [`LENGTH_BUCKETS`] entry.
    pub length_histogram: [usize; 8],
    cumulative: Vec<usize>,
}

impl CorpusStats {
    pub fn compute(sentences: &[Sentence]) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut hist = [0usize; 8];
        let mut total = 0;
        for w in sentences.iter().flatten().filter(|w| !is_marker(w)) {
            *counts.entry(w.as_str()).or_default() += 1;
            let len = w.chars().count();
            hist[((len.max(1) - 1) / 5).min(7)] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::Empty("corpus statistics"));
        }
        let mut ranked: Vec<(String, usize)> =
            counts.into_iter().map(|(w, c)| (w.to_owned(), c)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let cumulative = ranked
            .iter()
            .scan(0, |acc, (_, c)| {
                *acc += c;
                Some(*acc)
            })
            .collect();
        Ok(CorpusStats {
            total_tokens: total,
            unique_tokens: ranked.len(),
            ranked,
            length_histogram: hist,
            cumulative,
        })
    }

    /// Fraction of tokens covered by the `k` most frequent types.
    pub fn coverage(&self, k: usize) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let covered = self.cumulative[k.min(self.unique_tokens) - 1];
        covered as f64 / self.total_tokens as f64
    }

    pub fn unique_ratio(&self) -> f64 {
        self.unique_tokens as f64 / self.total_tokens as f64
    }

    /// Fraction of tokens no longer than `len` characters.
    pub fn fraction_within_length(&self, sentences: &[Sentence], len: usize) -> f64 {
        let within = sentences
            .iter()
            .flatten()
            .filter(|w| !is_marker(w) && w.chars().count() <= len)
            .count();
        within as f64 / self.total_tokens as f64
    }
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "total_tokens\t{}", self.total_tokens)?;
        writeln!(
            f,
            "unique_tokens\t{}\t({:.2}%)",
            self.unique_tokens,
            100.0 * self.unique_ratio()
        )?;
        for k in [5_000, 10_000, 20_000] {
            writeln!(f, "coverage@{k}\t{:.2}%", 100.0 * self.coverage(k))?;
        }
        writeln!(f, "length\tcount")?;
        for (b, c) in LENGTH_BUCKETS.iter().zip(self.length_histogram) {
            writeln!(f, "{b}\t{c}")?;
        }
        Ok(())
    }
}
