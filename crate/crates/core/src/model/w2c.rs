//! Word-to-character decoder.
//!
//! A gated recurrence driven by the previous character's embedding and the
//! context vector, with a two-piece maxout readout:
//!
//! ```text
//! z  = σ(W_z e + U_z h + C_z c)
//! r  = σ(W_r e + U_r h + C_r c)
//! h' = tanh(W_h e + r ⊙ (U_h h + C_h c))
//! h  = z ⊙ h_prev + (1 − z) ⊙ h'
//! s  = max(O¹_h h + O¹_e e + O¹_c c + b,  O²_h h + O²_e e + O²_c c + b)
//! logits = P_I s + p
//! ```
//!
//! `e` is the decoder's own embedding of the previous character (zero at
//! the first step) and the initial state is `tanh(V c)`. Gates carry no
//! biases; the readout has the single shared bias `b`.

use crate::corpus::EncodedWord;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Init, ParamId, ParamLayout, Real, Var};
use crate::training::Dropout;

#[derive(Clone, Debug, PartialEq)]
pub struct W2cParams {
    pub w_z: ParamId,
    pub w_r: ParamId,
    pub w_h: ParamId,
    pub u_z: ParamId,
    pub u_r: ParamId,
    pub u_h: ParamId,
    pub c_z: ParamId,
    pub c_r: ParamId,
    pub c_h: ParamId,
    pub v: ParamId,
    pub char_table: ParamId,
    pub o_h: [ParamId; 2],
    pub o_e: [ParamId; 2],
    pub o_c: [ParamId; 2],
    pub b: ParamId,
    pub p_i: ParamId,
    pub p_i_b: ParamId,
    pub vocab_size: usize,
    pub hidden: usize,
    pub context: usize,
}

/// Context-only terms, computed once per decoded word.
#[derive(Clone, Copy, Debug)]
pub struct W2cContext {
    pub c_z: Var,
    pub c_r: Var,
    pub c_h: Var,
    pub o_c: [Var; 2],
}

impl W2cParams {
    /// `d_c` sizes both the character embedding and the readout features.
    pub fn declare(layout: &mut ParamLayout, vocab_size: usize, d_c: usize, hidden: usize, context: usize) -> Self {
        let g = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
        let mut m = |name: &str, rows: usize, cols: usize| {
            layout.add(format!("w2c.{name}"), &[rows, cols], g(rows, cols))
        };
        let w_z = m("w_z", d_c, hidden);
        let w_r = m("w_r", d_c, hidden);
        let w_h = m("w_h", d_c, hidden);
        let u_z = m("u_z", hidden, hidden);
        let u_r = m("u_r", hidden, hidden);
        let u_h = m("u_h", hidden, hidden);
        let c_z = m("c_z", context, hidden);
        let c_r = m("c_r", context, hidden);
        let c_h = m("c_h", context, hidden);
        let v = m("v", context, hidden);
        let char_table = m("char_table", vocab_size, d_c);
        let o_h = [m("o1_h", hidden, d_c), m("o2_h", hidden, d_c)];
        let o_e = [m("o1_e", d_c, d_c), m("o2_e", d_c, d_c)];
        let o_c = [m("o1_c", context, d_c), m("o2_c", context, d_c)];
        let p_i = m("p_i", d_c, vocab_size);
        let b = layout.add("w2c.b", &[d_c], Init::Zeros);
        let p_i_b = layout.add("w2c.p_i_b", &[vocab_size], Init::Zeros);
        W2cParams {
            w_z,
            w_r,
            w_h,
            u_z,
            u_r,
            u_h,
            c_z,
            c_r,
            c_h,
            v,
            char_table,
            o_h,
            o_e,
            o_c,
            b,
            p_i,
            p_i_b,
            vocab_size,
            hidden,
            context,
        }
    }

    pub fn context_terms<T: Real>(&self, g: &mut Graph<'_, T>, ctx: Var) -> Result<W2cContext> {
        let mut proj = |id| {
            let w = g.param(id);
            g.matmul(ctx, w)
        };
        Ok(W2cContext {
            c_z: proj(self.c_z)?,
            c_r: proj(self.c_r)?,
            c_h: proj(self.c_h)?,
            o_c: [proj(self.o_c[0])?, proj(self.o_c[1])?],
        })
    }

    /// `h₀ = tanh(V c)`
    pub fn init<T: Real>(&self, g: &mut Graph<'_, T>, ctx: Var) -> Result<Var> {
        let v = g.param(self.v);
        let vc = g.matmul(ctx, v)?;
        Ok(g.tanh(vc))
    }

    /// One decoder step for a batch. `prev[i] = None` is the start sentinel
    /// (zero character embedding). Returns `(h, logits)`.
    ///
    /// `drop`, when given, masks `h` on its way into the readout only.
    pub fn step<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        cx: &W2cContext,
        h_prev: Var,
        prev: &[Option<usize>],
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, Var)> {
        if let Some(bad) = prev.iter().flatten().find(|&&c| c >= self.vocab_size) {
            return Err(Error::Index(format!(
                "character id {bad} out of range for {} symbols",
                self.vocab_size
            )));
        }
        let table = g.param(self.char_table);
        let e = g.gather(table, prev)?;

        let z = self.gate(g, e, h_prev, cx.c_z, self.w_z, self.u_z)?;
        let r = self.gate(g, e, h_prev, cx.c_r, self.w_r, self.u_r)?;
        let w_h = g.param(self.w_h);
        let u_h = g.param(self.u_h);
        let we = g.matmul(e, w_h)?;
        let uh = g.matmul(h_prev, u_h)?;
        let recurrent = g.add(uh, cx.c_h)?;
        let gated = g.mul(r, recurrent)?;
        let pre = g.add(we, gated)?;
        let cand = g.tanh(pre);
        // z·h_prev + (1 − z)·h' = h' + z·(h_prev − h')
        let diff = g.sub(h_prev, cand)?;
        let kept = g.mul(z, diff)?;
        let h = g.add(cand, kept)?;

        let h_read = match drop {
            Some(d) => d.apply(g, h)?,
            None => h,
        };
        let s = self.readout(g, cx, h_read, e)?;
        let p_i = g.param(self.p_i);
        let p_i_b = g.param(self.p_i_b);
        let logits = g.matmul(s, p_i)?;
        let logits = g.add_bias(logits, p_i_b)?;
        Ok((h, logits))
    }

    fn gate<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        e: Var,
        h: Var,
        ctx_term: Var,
        w: crate::numkernel::ParamId,
        u: crate::numkernel::ParamId,
    ) -> Result<Var> {
        let w = g.param(w);
        let u = g.param(u);
        let we = g.matmul(e, w)?;
        let uh = g.matmul(h, u)?;
        let sum = g.add(we, uh)?;
        let sum = g.add(sum, ctx_term)?;
        Ok(g.sigmoid(sum))
    }

    /// The two affine maxout pieces `s'¹, s'²` before the maximum.
    pub fn maxout_pieces<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        cx: &W2cContext,
        h: Var,
        e: Var,
    ) -> Result<[Var; 2]> {
        let b = g.param(self.b);
        let mut piece = |i: usize| -> Result<Var> {
            let oh = g.param(self.o_h[i]);
            let oe = g.param(self.o_e[i]);
            let a = g.matmul(h, oh)?;
            let bterm = g.matmul(e, oe)?;
            let s = g.add(a, bterm)?;
            let s = g.add(s, cx.o_c[i])?;
            g.add_bias(s, b)
        };
        Ok([piece(0)?, piece(1)?])
    }

    fn readout<T: Real>(&self, g: &mut Graph<'_, T>, cx: &W2cContext, h: Var, e: Var) -> Result<Var> {
        let [s1, s2] = self.maxout_pieces(g, cx, h, e)?;
        g.max(s1, s2)
    }

    /// Teacher-forced negative log-likelihood of each row's target word,
    /// summed over its characters (and `EOW`); `None` rows contribute 0.
    ///
    /// Returns the per-row NLL `[B]` and the number of predicted characters.
    pub fn word_nll<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        ctx: Var,
        targets: &[Option<&EncodedWord>],
        mut drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        if targets.len() != g.shape(ctx)[0] {
            return Err(Error::Shape(format!(
                "word_nll: {} targets for a context of {} rows",
                targets.len(),
                g.shape(ctx)[0]
            )));
        }
        let seqs: Vec<&[usize]> = targets.iter().map(|t| t.map_or(&[][..], |w| w.targets())).collect();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let cx = self.context_terms(g, ctx)?;
        let mut h = self.init(g, ctx)?;
        let mut total: Option<Var> = None;
        let mut chars = 0;
        for t in 0..steps {
            let prev: Vec<Option<usize>> = seqs
                .iter()
                .map(|s| if t == 0 { None } else { s.get(t - 1).copied() })
                .collect();
            let tgt: Vec<Option<usize>> = seqs.iter().map(|s| s.get(t).copied()).collect();
            chars += tgt.iter().flatten().count();
            let (h_next, logits) = self.step(g, &cx, h, &prev, drop.as_deref_mut())?;
            h = h_next;
            let nll = g.softmax_cross_entropy(logits, &tgt)?;
            total = Some(match total {
                Some(acc) => g.add(acc, nll)?,
                None => nll,
            });
        }
        match total {
            Some(t) => Ok((t, chars)),
            None => {
                let zero = crate::numkernel::Tensor::zeros(&[targets.len()]);
                Ok((g.constant(zero), 0))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CharVocab;
    use crate::model::testutil::{materialize, zero_all};
    use crate::numkernel::{ParamSet, Tensor};

    const H: usize = 4;
    const C: usize = 5;

    fn setup(seed: u64) -> (CharVocab, W2cParams, ParamSet<f64>) {
        let vocab = CharVocab::from_chars("abc".chars()).unwrap();
        let mut layout = ParamLayout::new();
        let p = W2cParams::declare(&mut layout, vocab.len(), 3, H, C);
        (vocab, p, materialize(&layout, seed))
    }

    fn ctx(g: &mut Graph<'_, f64>, v: &[f64]) -> Var {
        g.constant(Tensor::from_f64(&[1, C], v).unwrap())
    }

    const CTX: [f64; C] = [0.4, -0.3, 0.9, 0.1, -0.7];

    #[test]
    fn init_of_zero_context_is_zero() {
        let (_, p, set) = setup(1);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &[0.0; C]);
        let h = p.init(&mut g, c).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_with_zero_v_is_zero() {
        let (_, p, mut set) = setup(1);
        set.get_mut(p.v).data_mut().iter_mut().for_each(|x| *x = 0.0);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let h = p.init(&mut g, c).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_inside_open_interval() {
        let (_, p, mut set) = setup(2);
        set.get_mut(p.v).data_mut().iter_mut().for_each(|x| *x *= 3.0);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let h = p.init(&mut g, c).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn saturated_update_gate_freezes_state() {
        let (_, p, mut set) = setup(3);
        for id in [p.w_z, p.u_z] {
            set.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        set.get_mut(p.c_z).data_mut().iter_mut().for_each(|x| *x = 20.0);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &[1.0; C]);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h_prev = g.constant(Tensor::from_f64(&[1, H], &[0.3, -0.8, 0.5, 0.0]).unwrap());
        let (h, _) = p.step(&mut g, &cx, h_prev, &[Some(5)], None).unwrap();
        for (a, b) in g.value(h).data().iter().zip(g.value(h_prev).data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn closed_gates_leave_only_the_input_path() {
        let (_, p, mut set) = setup(4);
        for id in [p.w_z, p.u_z, p.w_r, p.u_r] {
            set.get_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        set.get_mut(p.c_z).data_mut().iter_mut().for_each(|x| *x = -40.0);
        set.get_mut(p.c_r).data_mut().iter_mut().for_each(|x| *x = -40.0);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &[1.0; C]);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h_prev = g.constant(Tensor::from_f64(&[1, H], &[0.3, -0.8, 0.5, 0.2]).unwrap());
        let (h, _) = p.step(&mut g, &cx, h_prev, &[Some(6)], None).unwrap();

        let table = set.get(p.char_table);
        let e = table.row(6);
        let w_h = set.get(p.w_h);
        for j in 0..H {
            let pre: f64 = (0..3).map(|k| e[k] * w_h.data()[k * H + j]).sum();
            assert!((g.value(h).data()[j] - pre.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn gates_stay_in_open_unit_interval() {
        let (_, p, set) = setup(5);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h = p.init(&mut g, c).unwrap();
        let table = g.param(p.char_table);
        let e = g.gather(table, &[Some(6)]).unwrap();
        let z = p.gate(&mut g, e, h, cx.c_z, p.w_z, p.u_z).unwrap();
        let r = p.gate(&mut g, e, h, cx.c_r, p.w_r, p.u_r).unwrap();
        for v in g.value(z).data().iter().chain(g.value(r).data()) {
            assert!(*v > 0.0 && *v < 1.0);
        }
    }

    #[test]
    fn readout_is_elementwise_max_of_pieces() {
        let (_, p, set) = setup(6);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h = g.constant(Tensor::from_f64(&[1, H], &[0.9, -0.1, 0.4, -0.6]).unwrap());
        let table = g.param(p.char_table);
        let e = g.gather(table, &[Some(7)]).unwrap();
        let [s1, s2] = p.maxout_pieces(&mut g, &cx, h, e).unwrap();
        let s = p.readout(&mut g, &cx, h, e).unwrap();
        for ((a, b), m) in g.value(s1).data().iter().zip(g.value(s2).data()).zip(g.value(s).data()) {
            assert_eq!(*m, a.max(*b));
        }
    }

    #[test]
    fn softmax_of_logits_sums_to_one() {
        let (_, p, set) = setup(7);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h = p.init(&mut g, c).unwrap();
        let (_, logits) = p.step(&mut g, &cx, h, &[None], None).unwrap();
        let probs = g.softmax(logits).unwrap();
        assert!((g.value(probs).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_output_gives_length_times_log_vocab() {
        let (vocab, p, mut set) = setup(8);
        zero_all(&mut set);
        let w = vocab.encode("abca", 20).unwrap();
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let (nll, chars) = p.word_nll(&mut g, c, &[Some(&w)], None).unwrap();
        assert_eq!(chars, 5);
        let expect = 5.0 * (vocab.len() as f64).ln();
        assert!((g.value(nll).item() - expect).abs() < 1e-12);
    }

    #[test]
    fn nll_is_non_negative() {
        let (vocab, p, set) = setup(9);
        for word in ["a", "abc", "cccccccc", "bacab"] {
            let w = vocab.encode(word, 6).unwrap();
            let mut g = Graph::with_params(&set);
            let c = ctx(&mut g, &CTX);
            let (nll, _) = p.word_nll(&mut g, c, &[Some(&w)], None).unwrap();
            assert!(g.value(nll).item() >= 0.0);
        }
    }

    #[test]
    fn empty_rows_contribute_nothing() {
        let (vocab, p, set) = setup(10);
        let w = vocab.encode("ab", 6).unwrap();
        let mut g = Graph::with_params(&set);
        let c = g.constant(Tensor::from_rows(&[CTX.to_vec(), CTX.to_vec()]).unwrap());
        let (nll, chars) = p.word_nll(&mut g, c, &[Some(&w), None], None).unwrap();
        assert_eq!(chars, 3);
        assert_eq!(g.value(nll).data()[1], 0.0);
    }

    #[test]
    fn invalid_previous_char_is_index_error() {
        let (vocab, p, set) = setup(11);
        let mut g = Graph::with_params(&set);
        let c = ctx(&mut g, &CTX);
        let cx = p.context_terms(&mut g, c).unwrap();
        let h = p.init(&mut g, c).unwrap();
        let bad = [Some(vocab.len())];
        assert!(matches!(p.step(&mut g, &cx, h, &bad, None), Err(Error::Index(_))));
    }
}
