//! Character-level word decoding (greedy and beam) and the sentence-level
//! beam built on top of it.

use std::cmp::Ordering;

use crate::corpus::{EOW, PAD, SENT_END, SENT_END_CHAR, SENT_START, SENT_START_CHAR, UNK_CHAR};
use crate::error::{Error, Result};
use crate::model::{C2w2cModel, LanguageModel, LmState};
use crate::numkernel::kernels::log_softmax_rows;
use crate::numkernel::{Graph, Real, Tensor};

/// One decoder step for a batch of hypotheses.
pub trait CharStepper {
    type State: Clone;

    fn alphabet(&self) -> usize;
    fn start(&self) -> Result<Self::State>;
    /// Natural-log probabilities over the alphabet after feeding `prev`
    /// (`None` = start of word) to each state.
    fn step(&self, states: &[Self::State], prev: &[Option<usize>]) -> Result<(Vec<Self::State>, Vec<Vec<f64>>)>;
}

/// Which symbols may extend a prefix.
pub trait SymbolPolicy {
    fn allowed(&self, prefix: &[usize], sym: usize) -> bool;
}

/// Every symbol except `EOW` extends the word; `EOW` ends it.
pub struct Unrestricted;

impl SymbolPolicy for Unrestricted {
    fn allowed(&self, _: &[usize], _: usize) -> bool {
        true
    }
}

/// Real words only: no padding, unknown, or sentence-start symbols, no
/// empty word, and the sentence-end symbol only as a whole token.
pub struct WordPolicy;

impl SymbolPolicy for WordPolicy {
    fn allowed(&self, prefix: &[usize], sym: usize) -> bool {
        if matches!(sym, PAD | UNK_CHAR | SENT_START_CHAR) {
            return false;
        }
        match prefix {
            [] => sym != EOW,
            [SENT_END_CHAR] => sym == EOW,
            _ => sym != SENT_END_CHAR,
        }
    }
}

/// A finished word: its symbols (without `EOW`) and total log-probability.
#[derive(Clone, Debug, PartialEq)]
pub struct WordHyp {
    pub ids: Vec<usize>,
    pub logp: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WordBeamConfig {
    pub width: usize,
    pub max_len: usize,
    /// Rank by log-probability per symbol instead of the raw total.
    pub length_norm: bool,
}

fn rank_key(h: &WordHyp, norm: bool) -> f64 {
    if norm {
        h.logp / (h.ids.len() + 1) as f64
    } else {
        h.logp
    }
}

fn by_score(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Beam search over characters. Returns at most `width` finished words,
/// best first; a word ends at `EOW` or when it reaches `max_len` symbols.
/// Ties keep expansion order (hypothesis index, then symbol index).
pub fn word_beam<S: CharStepper, P: SymbolPolicy>(stepper: &S, policy: &P, cfg: WordBeamConfig) -> Result<Vec<WordHyp>> {
    if cfg.width == 0 || cfg.max_len == 0 {
        return Err(Error::Config("beam width and word length must be positive".into()));
    }
    let mut live: Vec<(WordHyp, S::State, Option<usize>)> = vec![(WordHyp { ids: vec![], logp: 0.0 }, stepper.start()?, None)];
    let mut done: Vec<WordHyp> = Vec::new();
    while !live.is_empty() {
        let states: Vec<S::State> = live.iter().map(|(_, s, _)| s.clone()).collect();
        let prev: Vec<Option<usize>> = live.iter().map(|(_, _, p)| *p).collect();
        let (next, logps) = stepper.step(&states, &prev)?;
        // (hyp, state index, finished)
        let mut cands: Vec<(WordHyp, usize, bool)> = Vec::new();
        for (i, (h, _, _)) in live.iter().enumerate() {
            for (sym, &lp) in logps[i].iter().enumerate() {
                if !policy.allowed(&h.ids, sym) {
                    continue;
                }
                let logp = h.logp + lp;
                if sym == EOW {
                    cands.push((WordHyp { ids: h.ids.clone(), logp }, i, true));
                } else {
                    let mut ids = h.ids.clone();
                    ids.push(sym);
                    let full = ids.len() >= cfg.max_len;
                    cands.push((WordHyp { ids, logp }, i, full));
                }
            }
        }
        cands.sort_by(|a, b| by_score(rank_key(&a.0, cfg.length_norm), rank_key(&b.0, cfg.length_norm)));
        let mut next_live = Vec::new();
        for (h, i, finished) in cands {
            if done.len() + next_live.len() >= cfg.width {
                break;
            }
            if finished {
                done.push(h);
            } else {
                let last = *h.ids.last().expect("extended hypothesis");
                next_live.push((h, next[i].clone(), Some(last)));
            }
        }
        live = next_live;
        // Extensions only lower the raw score, so a full set of finished
        // words beats anything still live.
        if !cfg.length_norm && done.len() >= cfg.width {
            break;
        }
    }
    done.sort_by(|a, b| by_score(rank_key(a, cfg.length_norm), rank_key(b, cfg.length_norm)));
    done.truncate(cfg.width);
    Ok(done)
}

/// Argmax decoding: the most likely allowed symbol at every position.
pub fn word_greedy<S: CharStepper, P: SymbolPolicy>(stepper: &S, policy: &P, max_len: usize) -> Result<WordHyp> {
    let mut state = stepper.start()?;
    let mut h = WordHyp { ids: vec![], logp: 0.0 };
    let mut prev = None;
    while h.ids.len() < max_len {
        let (mut next, logps) = stepper.step(&[state], &[prev])?;
        let best = logps[0]
            .iter()
            .enumerate()
            .filter(|&(sym, _)| policy.allowed(&h.ids, sym))
            .fold(None::<(usize, f64)>, |acc, (sym, &lp)| match acc {
                Some((_, b)) if b >= lp => acc,
                _ => Some((sym, lp)),
            })
            .ok_or_else(|| Error::Config("no symbol allowed".into()))?;
        h.logp += best.1;
        if best.0 == EOW {
            break;
        }
        h.ids.push(best.0);
        prev = Some(best.0);
        state = next.swap_remove(0);
    }
    Ok(h)
}

/// Decoder of a trained model for one fixed context vector.
pub struct ModelStepper<'m, T: Real> {
    model: &'m C2w2cModel<T>,
    ctx: Tensor<T>,
}

impl<'m, T: Real> ModelStepper<'m, T> {
    /// `ctx` is a single `[1 × d_L]` row.
    pub fn new(model: &'m C2w2cModel<T>, ctx: Tensor<T>) -> Self {
        ModelStepper { model, ctx }
    }
}

impl<T: Real> CharStepper for ModelStepper<'_, T> {
    type State = Tensor<T>;

    fn alphabet(&self) -> usize {
        self.model.vocab.len()
    }

    fn start(&self) -> Result<Tensor<T>> {
        let mut g = Graph::with_params(&self.model.params);
        let c = g.constant(self.ctx.clone());
        let h = self.model.w2c.init(&mut g, c)?;
        Ok(g.value(h).clone())
    }

    fn step(&self, states: &[Tensor<T>], prev: &[Option<usize>]) -> Result<(Vec<Tensor<T>>, Vec<Vec<f64>>)> {
        let n = states.len();
        let mut g = Graph::with_params(&self.model.params);
        let ctx_rows = Tensor::stack_rows(&vec![&self.ctx; n])?;
        let c = g.constant(ctx_rows);
        let cx = self.model.w2c.context_terms(&mut g, c)?;
        let h = g.constant(Tensor::stack_rows(&states.iter().collect::<Vec<_>>())?);
        let (h, logits) = self.model.w2c.step(&mut g, &cx, h, prev, None)?;
        let v = self.model.vocab.len();
        let lp = log_softmax_rows(g.value(logits).data(), v);
        let hv = g.value(h);
        let rows = (0..n).map(|i| Tensor::new(vec![1, hv.shape()[1]], hv.row(i).to_vec())).collect::<Result<_>>()?;
        Ok((rows, lp.chunks(v).map(|r| r.iter().map(|x| x.as_f64()).collect()).collect()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceHyp {
    /// Context words followed by the generated ones.
    pub words: Vec<String>,
    pub logp: f64,
    /// Ended with the sentence-end marker.
    pub terminated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleConfig {
    pub word_k: usize,
    pub sentence_k: usize,
    pub max_words: usize,
    pub length_norm: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            word_k: 20,
            sentence_k: 10,
            max_words: 50,
            length_norm: false,
        }
    }
}

/// Feeds `<s>` and the context words; returns the state and the last context row.
fn prime<T: Real>(model: &C2w2cModel<T>, context: &[String]) -> Result<(LmState<T>, Tensor<T>)> {
    let mut g = Graph::with_params(&model.params);
    let mut s = LmState::zeros(1, model.dims.d_l).to_graph(&mut g);
    let mut ctx = s.h2;
    let words = std::iter::once(SENT_START).chain(context.iter().map(String::as_str).filter(|w| *w != SENT_START));
    for w in words {
        (s, ctx) = model.advance(&mut g, s, &[Some(w)], None)?;
    }
    Ok((LmState::detach(&g, s), g.value(ctx).clone()))
}

fn feed<T: Real>(model: &C2w2cModel<T>, states: &[LmState<T>], words: &[&str]) -> Result<Vec<(LmState<T>, Tensor<T>)>> {
    let mut g = Graph::with_params(&model.params);
    let stack = |f: fn(&LmState<T>) -> &Tensor<T>| Tensor::stack_rows(&states.iter().map(f).collect::<Vec<_>>());
    let joined = LmState::from_tensors([stack(|s| &s.h1)?, stack(|s| &s.c1)?, stack(|s| &s.h2)?, stack(|s| &s.c2)?])?;
    let vars = joined.to_graph(&mut g);
    let inputs: Vec<Option<&str>> = words.iter().map(|w| Some(*w)).collect();
    let (next, ctx) = model.advance(&mut g, vars, &inputs, None)?;
    let next = LmState::detach(&g, next);
    let ctx = g.value(ctx).clone();
    (0..words.len())
        .map(|i| Ok((next.select_rows(&[i])?, ctx.select_rows(&[i])?)))
        .collect()
}

fn decode<T: Real>(model: &C2w2cModel<T>, ids: &[usize]) -> String {
    model.vocab.decode(ids)
}

/// Greedy generation: the argmax word at every position, until the
/// sentence-end marker or `max_words`.
pub fn sample_stochastic<T: Real>(model: &C2w2cModel<T>, context: &[String], max_words: usize) -> Result<SentenceHyp> {
    let mut out = SentenceHyp {
        words: context.to_vec(),
        logp: 0.0,
        terminated: false,
    };
    if max_words == 0 {
        return Ok(out);
    }
    let (mut state, mut ctx) = prime(model, context)?;
    for _ in 0..max_words {
        let stepper = ModelStepper::new(model, ctx.clone());
        let w = word_greedy(&stepper, &WordPolicy, model.dims.max_word_len)?;
        let word = decode(model, &w.ids);
        out.logp += w.logp;
        out.words.push(word.clone());
        if word == SENT_END {
            out.terminated = true;
            break;
        }
        (state, ctx) = feed(model, &[state], &[&word])?.remove(0);
    }
    Ok(out)
}

/// Two-level beam: an inner character beam proposes `word_k` words per
/// hypothesis and an outer beam keeps the `sentence_k` best sentences by
/// total log-probability. Finished sentences stay in the pool.
pub fn sample_beam<T: Real>(model: &C2w2cModel<T>, context: &[String], cfg: SampleConfig) -> Result<Vec<SentenceHyp>> {
    if cfg.word_k == 0 || cfg.sentence_k == 0 {
        return Err(Error::Config("beam widths must be positive".into()));
    }
    let start = SentenceHyp {
        words: context.to_vec(),
        logp: 0.0,
        terminated: false,
    };
    if cfg.max_words == 0 {
        return Ok(vec![start]);
    }
    let (s0, c0) = prime(model, context)?;
    let mut pool: Vec<(SentenceHyp, Option<(LmState<T>, Tensor<T>)>)> = vec![(start, Some((s0, c0)))];
    let word_cfg = WordBeamConfig {
        width: cfg.word_k,
        max_len: model.dims.max_word_len,
        length_norm: cfg.length_norm,
    };
    for _ in 0..cfg.max_words {
        if pool.iter().all(|(h, _)| h.terminated) {
            break;
        }
        let mut cands: Vec<(SentenceHyp, Option<usize>)> = Vec::new();
        for (i, (h, st)) in pool.iter().enumerate() {
            let Some((_, ctx)) = st.as_ref().filter(|_| !h.terminated) else {
                cands.push((h.clone(), None));
                continue;
            };
            let stepper = ModelStepper::new(model, ctx.clone());
            for w in word_beam(&stepper, &WordPolicy, word_cfg)? {
                let word = decode(model, &w.ids);
                let mut words = h.words.clone();
                let terminated = word == SENT_END;
                words.push(word);
                cands.push((SentenceHyp { words, logp: h.logp + w.logp, terminated }, Some(i)));
            }
        }
        cands.sort_by(|a, b| by_score(a.0.logp, b.0.logp));
        cands.truncate(cfg.sentence_k);

        let grow: Vec<usize> = (0..cands.len()).filter(|&j| cands[j].1.is_some() && !cands[j].0.terminated).collect();
        let parents: Vec<LmState<T>> = grow
            .iter()
            .map(|&j| pool[cands[j].1.unwrap()].1.as_ref().unwrap().0.clone())
            .collect();
        let words: Vec<&str> = grow.iter().map(|&j| cands[j].0.words.last().unwrap().as_str()).collect();
        let mut fed = if grow.is_empty() { Vec::new() } else { feed(model, &parents, &words)? }.into_iter();
        let mut next_pool = Vec::with_capacity(cands.len());
        for (j, (h, _)) in cands.iter().enumerate() {
            let st = if grow.contains(&j) { fed.next() } else { None };
            next_pool.push((h.clone(), st));
        }
        pool = next_pool;
    }
    Ok(pool.into_iter().map(|(h, _)| h).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Fixed log-probabilities per position, independent of the prefix.
    struct Table(Vec<Vec<f64>>);

    impl CharStepper for Table {
        type State = usize;
        fn alphabet(&self) -> usize {
            self.0[0].len()
        }
        fn start(&self) -> Result<usize> {
            Ok(0)
        }
        fn step(&self, states: &[usize], _: &[Option<usize>]) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
            Ok((states.iter().map(|s| s + 1).collect(), states.iter().map(|&s| self.0[s].clone()).collect()))
        }
    }

    fn table() -> Table {
        let p = |v: [f64; 5]| v.iter().map(|x: &f64| x.ln()).collect::<Vec<_>>();
        Table(vec![
            p([0.05, 0.05, 0.1, 0.2, 0.6]),
            p([0.1, 0.5, 0.1, 0.1, 0.2]),
            p([0.2, 0.3, 0.1, 0.3, 0.1]),
        ])
    }

    #[test]
    fn beam_results_are_sorted_and_bounded() {
        let cfg = WordBeamConfig { width: 4, max_len: 3, length_norm: false };
        let out = word_beam(&table(), &Unrestricted, cfg).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.windows(2).all(|w| w[0].logp >= w[1].logp));
        assert!(out.iter().all(|h| h.ids.len() <= 3 && h.logp <= 0.0));
    }

    #[test]
    fn width_one_matches_greedy() {
        let cfg = WordBeamConfig { width: 1, max_len: 3, length_norm: false };
        let beam = word_beam(&table(), &WordPolicy, cfg).unwrap();
        let greedy = word_greedy(&table(), &WordPolicy, 3).unwrap();
        assert_eq!(beam, vec![greedy]);
    }

    #[test]
    fn word_policy_blocks_specials() {
        let p = WordPolicy;
        assert!(!p.allowed(&[], EOW));
        assert!(!p.allowed(&[], PAD));
        assert!(!p.allowed(&[], UNK_CHAR));
        assert!(!p.allowed(&[], SENT_START_CHAR));
        assert!(p.allowed(&[], SENT_END_CHAR));
        assert!(p.allowed(&[SENT_END_CHAR], EOW));
        assert!(!p.allowed(&[SENT_END_CHAR], 7));
        assert!(!p.allowed(&[7], SENT_END_CHAR));
        assert!(p.allowed(&[7], EOW));
    }
}
