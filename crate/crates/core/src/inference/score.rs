use std::fmt;

use crate::corpus::{is_marker, Sentence, SENT_END, SENT_START};
use crate::error::{Error, Result};
use crate::model::{LanguageModel, LmState};
use crate::numkernel::{Graph, Real};

/// Sentences scored together in one batched pass. Rows are independent,
/// so the batch size never changes a result.
const BATCH: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Also score the sentence end marker as a word.
    pub include_end: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordScore {
    pub token: String,
    /// Summed over the word's characters (and end-of-word), not normalised.
    pub nll: f64,
}

/// Per-word negative log-likelihoods of one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub words: Vec<WordScore>,
    pub total: f64,
    /// `total / words.len()`
    pub score: f64,
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.score)?;
        for w in &self.words {
            write!(f, "\t{}:{:.6}", w.token, w.nll)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PerplexityReport {
    /// `exp(Σ word NLL / words)`
    pub perplexity: f64,
    /// `exp(Σ word NLL / units)`: per character for C2W2C, per word for the baseline.
    pub unit_perplexity: f64,
    pub nll_sum: f64,
    pub words: usize,
    pub units: usize,
}

/// Per-token NLLs for each sentence, conditioning every token on all
/// earlier ones from a fresh state. `sentences` carry their markers; the
/// opener is never predicted.
///
/// Returns, per sentence, `(token, nll, units)` for every predicted token.
pub fn token_nlls<T: Real, M: LanguageModel<T>>(
    model: &M,
    sentences: &[&[String]],
) -> Result<Vec<Vec<(String, f64, usize)>>> {
    let mut out = Vec::with_capacity(sentences.len());
    for chunk in sentences.chunks(BATCH) {
        out.extend(batch_nlls(model, chunk)?);
    }
    Ok(out)
}

fn batch_nlls<T: Real, M: LanguageModel<T>>(model: &M, batch: &[&[String]]) -> Result<Vec<Vec<(String, f64, usize)>>> {
    let mut g = Graph::with_params(model.params());
    let mut state = LmState::zeros(batch.len(), model.dims().d_l).to_graph(&mut g);
    let steps = batch.iter().map(|s| s.len().saturating_sub(1)).max().unwrap_or(0);
    let mut out: Vec<Vec<(String, f64, usize)>> = vec![Vec::new(); batch.len()];
    for t in 0..steps {
        let inputs: Vec<Option<&str>> = batch.iter().map(|s| (t + 1 < s.len()).then(|| s[t].as_str())).collect();
        let targets: Vec<Option<&str>> = batch
            .iter()
            .map(|s| s.get(t + 1).map(String::as_str).filter(|w| *w != SENT_START))
            .collect();
        let (next, ctx) = model.advance(&mut g, state, &inputs, None)?;
        state = next;
        let (nll, _) = model.target_nll(&mut g, ctx, &targets, None)?;
        let values = g.value(nll).data();
        for (i, target) in targets.iter().enumerate() {
            if let Some(word) = target {
                out[i].push((word.to_string(), values[i].as_f64(), model.units(word)?));
            }
        }
    }
    Ok(out)
}

fn wrap(tokens: &[String]) -> Sentence {
    let mut s = Vec::with_capacity(tokens.len() + 2);
    s.push(SENT_START.to_owned());
    s.extend(tokens.iter().filter(|w| !is_marker(w)).cloned());
    s.push(SENT_END.to_owned());
    s
}

/// Scores one sentence (markers in `tokens` are ignored and re-added).
/// Fails on words containing characters the model does not know.
pub fn score_sentence<T: Real, M: LanguageModel<T>>(model: &M, tokens: &[String], opts: ScoreOptions) -> Result<ScoreReport> {
    Ok(score_sentences(model, &[tokens.to_vec()], opts)?.remove(0))
}

/// Batched [`score_sentence`]. All unknown-character words across the
/// input are reported together.
pub fn score_sentences<T: Real, M: LanguageModel<T>>(
    model: &M,
    sentences: &[Vec<String>],
    opts: ScoreOptions,
) -> Result<Vec<ScoreReport>> {
    let wrapped: Vec<Sentence> = sentences.iter().map(|s| wrap(s)).collect();
    let mut unknown = Vec::new();
    for w in wrapped.iter().flatten().filter(|w| !is_marker(w)) {
        if model.check_scorable(w).is_err() && !unknown.contains(w) {
            unknown.push(w.clone());
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownCharacter(unknown));
    }
    let refs: Vec<&[String]> = wrapped.iter().map(Vec::as_slice).collect();
    let all = token_nlls(model, &refs)?;
    all.into_iter()
        .map(|toks| {
            let words: Vec<WordScore> = toks
                .into_iter()
                .filter(|(t, ..)| opts.include_end || !is_marker(t))
                .map(|(token, nll, _)| WordScore { token, nll })
                .collect();
            if words.is_empty() {
                return Err(Error::Empty("sentence"));
            }
            let total: f64 = words.iter().map(|w| w.nll).sum();
            Ok(ScoreReport {
                score: total / words.len() as f64,
                total,
                words,
            })
        })
        .collect()
}

/// Word perplexity over a test set, with markers excluded from both the
/// sum and the count. Unknown characters are scored as the unknown symbol.
pub fn corpus_perplexity<T: Real, M: LanguageModel<T>>(model: &M, sentences: &[Sentence]) -> Result<PerplexityReport> {
    let wrapped: Vec<Sentence> = sentences.iter().map(|s| wrap(s)).collect();
    let refs: Vec<&[String]> = wrapped.iter().map(Vec::as_slice).collect();
    let all = token_nlls(model, &refs)?;
    let (mut nll_sum, mut words, mut units) = (0.0, 0, 0);
    for (_, nll, u) in all.iter().flatten().filter(|(t, ..)| !is_marker(t)) {
        nll_sum += nll;
        words += 1;
        units += u;
    }
    if words == 0 {
        return Err(Error::Empty("test set"));
    }
    Ok(PerplexityReport {
        perplexity: (nll_sum / words as f64).exp(),
        unit_perplexity: (nll_sum / units as f64).exp(),
        nll_sum,
        words,
        units,
    })
}
