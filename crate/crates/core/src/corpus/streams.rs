use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{is_marker, Sentence};
use crate::error::{Error, Result};

/// The corpus cut into `B` contiguous word streams for stateful batching.
///
/// Within a stream, the token at position `t` is the textual predecessor of
/// the token at `t + 1`, so carried recurrent state stays meaningful across
/// steps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamBatch {
    pub streams: Vec<Vec<String>>,
    /// Shuffled sentence order that the streams were cut from.
    pub order: Vec<usize>,
    /// Next input position, shared by all streams.
    pub cursor: usize,
}

/// One training step: per stream, the input word and the word to predict,
/// or `None` for a stream that has run out.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StreamStep<'a> {
    pub pairs: Vec<Option<(&'a str, &'a str)>>,
}

impl StreamStep<'_> {
    pub fn active(&self) -> usize {
        self.pairs.iter().filter(|p| p.is_some()).count()
    }

    /// Number of non-marker prediction targets.
    pub fn target_words(&self) -> usize {
        self.pairs
            .iter()
            .flatten()
            .filter(|(_, t)| !is_marker(t))
            .count()
    }
}

impl StreamBatch {
    /// Shuffles sentences with `seed` (and `epoch` as the stream selector),
    /// concatenates them and cuts the result into `batch_size` streams of
    /// near-equal token count without splitting any sentence.
    pub fn new(sentences: &[Sentence], batch_size: usize, seed: u64, epoch: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if sentences.len() < batch_size {
            return Err(Error::Corpus(format!(
                "{} sentences cannot fill {batch_size} streams; use a batch size of at most {}",
                sentences.len(),
                sentences.len().max(1)
            )));
        }
        let mut order: Vec<usize> = (0..sentences.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);

        let lens: Vec<usize> = order.iter().map(|&i| sentences[i].len()).collect();
        let total: usize = lens.iter().sum();
        let n = lens.len();
        let mut streams = Vec::with_capacity(batch_size);
        let mut start = 0;
        let mut cum = 0usize;
        for k in 0..batch_size {
            let remaining_streams = batch_size - k - 1;
            let mut end = start + 1;
            cum += lens[start];
            if remaining_streams == 0 {
                end = n;
            } else {
                // Take a sentence while its midpoint falls before this stream's share.
                let target = (k + 1) as f64 * total as f64 / batch_size as f64;
                while end < n - remaining_streams && (cum as f64 + lens[end] as f64 / 2.0) < target {
                    cum += lens[end];
                    end += 1;
                }
            }
            let stream: Vec<String> = order[start..end]
                .iter()
                .flat_map(|&i| sentences[i].iter().cloned())
                .collect();
            streams.push(stream);
            start = end;
        }
        Ok(StreamBatch {
            streams,
            order,
            cursor: 0,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.streams.len()
    }

    /// Steps needed to consume every stream.
    pub fn steps(&self) -> usize {
        self.streams
            .iter()
            .map(|s| s.len().saturating_sub(1))
            .max()
            .unwrap_or(0)
    }

    pub fn step_at(&self, t: usize) -> StreamStep<'_> {
        let pairs = self
            .streams
            .iter()
            .map(|s| {
                (t + 1 < s.len()).then(|| (s[t].as_str(), s[t + 1].as_str()))
            })
            .collect();
        StreamStep { pairs }
    }

    /// Returns the step at the cursor and advances it.
    pub fn next_step(&mut self) -> Option<StreamStep<'_>> {
        if self.cursor >= self.steps() {
            return None;
        }
        self.cursor += 1;
        Some(self.step_at(self.cursor - 1))
    }

    pub fn total_tokens(&self) -> usize {
        self.streams.iter().map(Vec::len).sum()
    }
}
