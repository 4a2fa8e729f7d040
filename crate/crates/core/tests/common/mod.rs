//! Oracles and fixtures shared by the integration tests.
//!
//! The scalar reference below recomputes the compositional model from the
//! raw parameter tensors with plain loops, so it shares no code with the
//! graph implementation beyond the tokenizer.

#![allow(dead_code)]

use c2w2c::corpus::{parse_sentences, CharVocab, Sentence, WordVocab, EOW, SENT_END, SENT_START};
use c2w2c::model::{C2w2cModel, LanguageModel, LmState, ModelDims, WordLstmModel};
use c2w2c::numkernel::{Graph, ParamSet, Real, Tensor};

/// Dims small enough for exhaustive checks, all hidden sizes ≤ 8.
pub fn toy_dims() -> ModelDims {
    ModelDims {
        d_c: 4,
        d_wi: 5,
        d_w: 6,
        d_l: 7,
        decoder_hidden: 8,
        bottleneck: 3,
        max_word_len: 6,
    }
}

/// Three letters plus the five specials: an 8-symbol alphabet.
pub fn abc_sentences() -> Vec<Sentence> {
    parse_sentences("ab cab\nbca a cc\nbaab\n", false)
}

pub fn toy_c2w2c(seed: u64) -> C2w2cModel<f64> {
    let s = abc_sentences();
    C2w2cModel::new(toy_dims(), CharVocab::build(&s).unwrap(), seed).unwrap()
}

pub fn toy_wordlstm(seed: u64) -> WordLstmModel<f64> {
    let s = abc_sentences();
    WordLstmModel::new(toy_dims(), WordVocab::build(&s, None).unwrap(), seed).unwrap()
}

/// Adds markers unless already present.
pub fn wrap(tokens: &[&str]) -> Sentence {
    let mut s = vec![SENT_START.to_owned()];
    s.extend(tokens.iter().map(|t| t.to_string()));
    s.push(SENT_END.to_owned());
    s
}

/// Summed NLL of every predicted token (the opener excluded) with all
/// sentences as parallel streams from a zero state. Returns the loss and
/// the gradient of every parameter tensor.
pub fn nll_and_grads<T: Real, M: LanguageModel<T>>(model: &M, sentences: &[Sentence], grads: bool) -> (f64, Vec<Tensor<T>>) {
    let mut g = Graph::with_params(model.params());
    let mut state = LmState::zeros(sentences.len(), model.dims().d_l).to_graph(&mut g);
    let steps = sentences.iter().map(|s| s.len() - 1).max().unwrap();
    let mut total = None;
    for t in 0..steps {
        let inputs: Vec<Option<&str>> = sentences.iter().map(|s| (t + 1 < s.len()).then(|| s[t].as_str())).collect();
        let targets: Vec<Option<&str>> = sentences.iter().map(|s| s.get(t + 1).map(String::as_str)).collect();
        let (next, ctx) = model.advance(&mut g, state, &inputs, None).unwrap();
        state = next;
        let (nll, _) = model.target_nll(&mut g, ctx, &targets, None).unwrap();
        let s = g.sum(nll);
        total = Some(match total {
            Some(acc) => g.add(acc, s).unwrap(),
            None => s,
        });
    }
    let total = total.unwrap();
    let value = g.value(total).item().as_f64();
    if !grads {
        return (value, Vec::new());
    }
    g.backward(total).unwrap();
    (value, g.take_param_grads().unwrap())
}

/// Worst relative error found by central differences on up to `per_tensor`
/// entries of each tensor (always including the largest analytic entry),
/// keyed by tensor name.
pub fn finite_difference_check<M: LanguageModel<f64> + Clone>(
    model: &M,
    sentences: &[Sentence],
    eps: f64,
    per_tensor: usize,
    seed: u64,
) -> Vec<(String, f64)> {
    let (_, analytic) = nll_and_grads(model, sentences, true);
    let mut probe = model.clone();
    let mut out = Vec::new();
    let mut lcg = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    for (k, grad) in analytic.iter().enumerate() {
        let n = grad.len();
        let mut idx: Vec<usize> = Vec::new();
        let argmax = (0..n)
            .max_by(|&a, &b| grad.data()[a].abs().total_cmp(&grad.data()[b].abs()))
            .unwrap();
        idx.push(argmax);
        if n <= per_tensor {
            idx.extend(0..n);
        } else {
            while idx.len() < per_tensor {
                lcg = lcg.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                idx.push((lcg >> 33) as usize % n);
            }
        }
        idx.sort_unstable();
        idx.dedup();
        let mut worst: f64 = 0.0;
        for &i in &idx {
            let orig = probe.params().get(c2w2c::numkernel::ParamId(k)).data()[i];
            let mut eval = |v: f64| {
                probe.params_mut().get_mut(c2w2c::numkernel::ParamId(k)).data_mut()[i] = v;
                nll_and_grads(&probe, sentences, false).0
            };
            let numeric = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps);
            eval(orig);
            let e = relative_error(grad.data()[i], numeric);
            if e > 1e-4 && std::env::var("FD_DEBUG").is_ok() {
                eprintln!("{} [{i}] analytic {:e} numeric {:e}", model.params().name(c2w2c::numkernel::ParamId(k)), grad.data()[i], numeric);
            }
            worst = worst.max(e);
        }
        out.push((model.params().name(c2w2c::numkernel::ParamId(k)).to_owned(), worst));
    }
    out
}

/// `|a − n| / max(|a|, |n|, 1e-5)`. Central differences at eps 1e-5 on a
/// loss of a few tens of nats carry around 1e-9 of absolute rounding noise,
/// so entries smaller than 1e-5 are measured against that floor.
pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

// ---- scalar reference of the compositional model ----

struct Mat<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
}

fn mat<'a>(p: &'a ParamSet<f64>, name: &str) -> Mat<'a> {
    let t = p.get(p.id(name).unwrap_or_else(|| panic!("no parameter {name}")));
    let (rows, cols) = match t.shape() {
        [r, c] => (*r, *c),
        [c] => (1, *c),
        s => panic!("{name}: shape {s:?}"),
    };
    Mat { data: t.data(), rows, cols }
}

/// `x · W` for a row vector `x`.
fn xw(x: &[f64], w: &Mat) -> Vec<f64> {
    assert_eq!(x.len(), w.rows);
    let mut y = vec![0.0; w.cols];
    for (i, xi) in x.iter().enumerate() {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += xi * w.data[i * w.cols + j];
        }
    }
    y
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub struct Reference<'m> {
    pub model: &'m C2w2cModel<f64>,
}

impl<'m> Reference<'m> {
    fn p(&self, name: &str) -> Mat<'m> {
        mat(&self.model.params, name)
    }

    fn lstm(&self, prefix: &str, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let pre = add(&add(&xw(x, &self.p(&format!("{prefix}.w_x"))), &xw(h, &self.p(&format!("{prefix}.w_h")))), self.p(&format!("{prefix}.b")).data);
        let mut h2 = vec![0.0; n];
        let mut c2 = vec![0.0; n];
        for k in 0..n {
            let i = sigmoid(pre[k]);
            let f = sigmoid(pre[n + k]);
            let g = pre[2 * n + k].tanh();
            let o = sigmoid(pre[3 * n + k]);
            c2[k] = f * c[k] + i * g;
            h2[k] = o * c2[k].tanh();
        }
        (h2, c2)
    }

    fn char_row(&self, table: &str, id: usize) -> Vec<f64> {
        let t = self.p(table);
        t.data[id * t.cols..(id + 1) * t.cols].to_vec()
    }

    pub fn embed(&self, word: &str) -> Vec<f64> {
        let enc = self.model.encode(word).unwrap();
        let ids = enc.chars();
        let d = self.model.dims.d_wi;
        let (mut hf, mut cf) = (vec![0.0; d], vec![0.0; d]);
        for &id in ids {
            (hf, cf) = self.lstm("c2w.fwd", &self.char_row("c2w.char_table", id), &hf, &cf);
        }
        let (mut hb, mut cb) = (vec![0.0; d], vec![0.0; d]);
        for &id in ids.iter().rev() {
            (hb, cb) = self.lstm("c2w.bwd", &self.char_row("c2w.char_table", id), &hb, &cb);
        }
        hf.extend(hb);
        add(&xw(&hf, &self.p("c2w.proj")), self.p("c2w.proj_b").data)
    }

    /// Character probabilities of `word` given the context `c`, multiplied.
    pub fn word_probability(&self, c: &[f64], word: &str) -> f64 {
        let targets = self.model.encode(word).unwrap().targets().to_vec();
        let hid = self.model.dims.decoder_hidden;
        let d_c = self.model.dims.d_c;
        let mut h: Vec<f64> = xw(c, &self.p("w2c.v")).iter().map(|v| v.tanh()).collect();
        let mut e = vec![0.0; d_c];
        let mut prob = 1.0;
        for &t in &targets {
            let gate = |w: &str, u: &str, cm: &str| -> Vec<f64> {
                add(&add(&xw(&e, &self.p(w)), &xw(&h, &self.p(u))), &xw(c, &self.p(cm)))
                    .into_iter()
                    .map(sigmoid)
                    .collect()
            };
            let z = gate("w2c.w_z", "w2c.u_z", "w2c.c_z");
            let r = gate("w2c.w_r", "w2c.u_r", "w2c.c_r");
            let rec = add(&xw(&h, &self.p("w2c.u_h")), &xw(c, &self.p("w2c.c_h")));
            let we = xw(&e, &self.p("w2c.w_h"));
            let mut hn = vec![0.0; hid];
            for k in 0..hid {
                let cand = (we[k] + r[k] * rec[k]).tanh();
                hn[k] = z[k] * h[k] + (1.0 - z[k]) * cand;
            }
            h = hn;
            let piece = |i: usize| -> Vec<f64> {
                let s = add(&xw(&h, &self.p(&format!("w2c.o{i}_h"))), &xw(&e, &self.p(&format!("w2c.o{i}_e"))));
                add(&add(&s, &xw(c, &self.p(&format!("w2c.o{i}_c")))), self.p("w2c.b").data)
            };
            let s: Vec<f64> = piece(1).iter().zip(piece(2)).map(|(a, b)| a.max(b)).collect();
            let logits = add(&xw(&s, &self.p("w2c.p_i")), self.p("w2c.p_i_b").data);
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            prob *= (logits[t] - m).exp() / z;
            e = self.char_row("w2c.char_table", t);
        }
        prob
    }

    /// `(word, P(word | history))` for every token after the opener.
    pub fn sentence(&self, sentence: &[String]) -> Vec<(String, f64)> {
        let d = self.model.dims.d_l;
        let (mut h1, mut c1, mut h2, mut c2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        let mut out = Vec::new();
        for pair in sentence.windows(2) {
            let w = self.embed(&pair[0]);
            (h1, c1) = self.lstm("lm.l1", &w, &h1, &c1);
            (h2, c2) = self.lstm("lm.l2", &h1, &h2, &c2);
            out.push((pair[1].clone(), self.word_probability(&h2, &pair[1])));
        }
        out
    }
}

/// Number of decoder targets of `word` (characters plus end-of-word).
pub fn target_count(vocab: &CharVocab, word: &str, max_len: usize) -> usize {
    let enc = vocab.encode(word, max_len).unwrap();
    debug_assert!(enc.targets().last() == Some(&EOW) || enc.true_length == max_len);
    enc.targets().len()
}
