//! Sentence scoring, perplexity, and text generation.

mod beam;
mod score;

pub use beam::{
    sample_beam, sample_stochastic, word_beam, word_greedy, CharStepper, ModelStepper, SampleConfig, SentenceHyp,
    SymbolPolicy, Unrestricted, WordBeamConfig, WordHyp, WordPolicy,
};
pub use score::{
    corpus_perplexity, score_sentence, score_sentences, token_nlls, PerplexityReport, ScoreOptions, ScoreReport,
    WordScore,
};

use std::fmt::Write;

/// `rank<TAB>logp<TAB>sentence`, one line per hypothesis, rank from 1.
pub fn format_samples(hyps: &[SentenceHyp]) -> String {
    let mut out = String::new();
    for (i, h) in hyps.iter().enumerate() {
        let _ = writeln!(out, "{}\t{:.6}\t{}", i + 1, h.logp, h.words.join(" "));
    }
    out
}
