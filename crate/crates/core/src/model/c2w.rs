//! Character-to-word encoder: character lookup, bidirectional LSTM over
//! the characters, and an affine projection of the two final states.

use super::lstm::LstmParams;
use crate::corpus::EncodedWord;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Init, ParamId, ParamLayout, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct C2wParams {
    /// `[|V_C| × d_C]`
    pub char_table: ParamId,
    pub forward: LstmParams,
    pub backward: LstmParams,
    /// `[2·d_WI × d_W]`
    pub proj: ParamId,
    pub proj_b: ParamId,
    pub vocab_size: usize,
}

impl C2wParams {
    pub fn declare(layout: &mut ParamLayout, vocab_size: usize, d_c: usize, d_wi: usize, d_w: usize) -> Self {
        C2wParams {
            char_table: layout.add(
                "c2w.char_table",
                &[vocab_size, d_c],
                Init::Glorot { fan_in: vocab_size, fan_out: d_c },
            ),
            forward: LstmParams::declare(layout, "c2w.fwd", d_c, d_wi),
            backward: LstmParams::declare(layout, "c2w.bwd", d_c, d_wi),
            proj: layout.add(
                "c2w.proj",
                &[2 * d_wi, d_w],
                Init::Glorot { fan_in: 2 * d_wi, fan_out: d_w },
            ),
            proj_b: layout.add("c2w.proj_b", &[d_w], Init::Zeros),
            vocab_size,
        }
    }

    /// Embeds a batch of words, one row each: `[B × d_W]`.
    ///
    /// The forward LSTM reads positions `0..true_length`, the backward LSTM
    /// reads them in reverse; positions past `true_length` never enter
    /// either recurrence.
    pub fn embed<T: Real>(&self, g: &mut Graph<'_, T>, words: &[&EncodedWord]) -> Result<Var> {
        if words.is_empty() {
            return Err(Error::Empty("c2w_embed"));
        }
        if let Some(bad) = words.iter().flat_map(|w| w.chars()).find(|&&c| c >= self.vocab_size) {
            return Err(Error::Index(format!(
                "character id {bad} out of range for {} symbols",
                self.vocab_size
            )));
        }
        let n = words.len();
        let hidden = self.forward.hidden;
        let table = g.param(self.char_table);
        let zeros = Tensor::zeros(&[n, hidden]);
        let (mut hf, mut cf) = (g.constant(zeros.clone()), g.constant(zeros.clone()));
        let (mut hb, mut cb) = (g.constant(zeros.clone()), g.constant(zeros));
        let steps = words.iter().map(|w| w.true_length).max().unwrap_or(0);

        for t in 0..steps {
            let active: Vec<bool> = words.iter().map(|w| t < w.true_length).collect();
            let all = active.iter().all(|&a| a);

            let fwd_ids: Vec<Option<usize>> = words
                .iter()
                .map(|w| (t < w.true_length).then(|| w.ids[t]))
                .collect();
            let x = g.gather(table, &fwd_ids)?;
            let (h, c) = self.forward.step(g, x, hf, cf)?;
            (hf, cf) = if all {
                (h, c)
            } else {
                (g.where_rows(&active, h, hf)?, g.where_rows(&active, c, cf)?)
            };

            let bwd_ids: Vec<Option<usize>> = words
                .iter()
                .map(|w| (t < w.true_length).then(|| w.ids[w.true_length - 1 - t]))
                .collect();
            let x = g.gather(table, &bwd_ids)?;
            let (h, c) = self.backward.step(g, x, hb, cb)?;
            (hb, cb) = if all {
                (h, c)
            } else {
                (g.where_rows(&active, h, hb)?, g.where_rows(&active, c, cb)?)
            };
        }

        let both = g.concat_cols(hf, hb)?;
        let p = g.param(self.proj);
        let pb = g.param(self.proj_b);
        let projected = g.matmul(both, p)?;
        g.add_bias(projected, pb)
    }
}
