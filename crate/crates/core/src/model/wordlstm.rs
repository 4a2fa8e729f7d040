//! Word-level LSTM baseline: word lookup, the same two-layer LSTM, and an
//! output path `c → B c → P (B c)` through a low-dimensional bottleneck.

use super::lm::{LmParams, LmState, LmVars};
use super::{LanguageModel, ModelDims, ModelKind};
use crate::corpus::WordVocab;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, Init, ParamId, ParamLayout, ParamSet, Real, Var};
use crate::training::Dropout;

#[derive(Clone, Debug, PartialEq)]
pub struct WordLstmParams {
    /// `[|V_W| × d_W]`
    pub input: ParamId,
    pub lm: LmParams,
    /// `[d_L × bottleneck]`
    pub bottleneck: ParamId,
    /// `[bottleneck × |V_W|]`
    pub output: ParamId,
    pub vocab_size: usize,
}

impl WordLstmParams {
    pub fn declare(layout: &mut ParamLayout, vocab_size: usize, dims: &ModelDims) -> Self {
        let ModelDims { d_w, d_l, bottleneck, .. } = *dims;
        WordLstmParams {
            input: layout.add(
                "in.table",
                &[vocab_size, d_w],
                Init::Glorot { fan_in: vocab_size, fan_out: d_w },
            ),
            lm: LmParams::declare(layout, "lm", d_w, d_l),
            bottleneck: layout.add(
                "out.bottleneck",
                &[d_l, bottleneck],
                Init::Glorot { fan_in: d_l, fan_out: bottleneck },
            ),
            output: layout.add(
                "out.proj",
                &[bottleneck, vocab_size],
                Init::Glorot { fan_in: bottleneck, fan_out: vocab_size },
            ),
            vocab_size,
        }
    }

    /// `−ln softmax(P (B c))[target]` per row; `None` rows give 0.
    pub fn nll<T: Real>(&self, g: &mut Graph<'_, T>, ctx: Var, targets: &[Option<usize>]) -> Result<Var> {
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= self.vocab_size) {
            return Err(Error::Index(format!(
                "word id {bad} out of range for {} words",
                self.vocab_size
            )));
        }
        let b = g.param(self.bottleneck);
        let p = g.param(self.output);
        let squeezed = g.matmul(ctx, b)?;
        let logits = g.matmul(squeezed, p)?;
        g.softmax_cross_entropy(logits, targets)
    }
}

/// The baseline with its word vocabulary and parameters.
#[derive(Clone, Debug)]
pub struct WordLstmModel<T> {
    pub dims: ModelDims,
    pub words: WordVocab,
    pub params: ParamSet<T>,
    pub ids: WordLstmParams,
}

impl<T: Real> WordLstmModel<T> {
    pub fn layout(dims: &ModelDims, vocab_size: usize) -> (ParamLayout, WordLstmParams) {
        let mut layout = ParamLayout::new();
        let ids = WordLstmParams::declare(&mut layout, vocab_size, dims);
        (layout, ids)
    }

    pub fn new(dims: ModelDims, words: WordVocab, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (layout, ids) = Self::layout(&dims, words.len());
        let params = layout.materialize(&mut super::init_rng(seed))?;
        Ok(WordLstmModel { dims, words, params, ids })
    }

    pub fn from_params(dims: ModelDims, words: WordVocab, params: ParamSet<T>) -> Result<Self> {
        let (layout, ids) = Self::layout(&dims, words.len());
        layout.check(&params)?;
        Ok(WordLstmModel { dims, words, params, ids })
    }
}

impl<T: Real> LanguageModel<T> for WordLstmModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::WordLstm
    }

    fn dims(&self) -> &ModelDims {
        &self.dims
    }

    fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    fn zero_state(&self, batch: usize) -> LmState<T> {
        LmState::zeros(batch, self.dims.d_l)
    }

    fn advance<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        state: LmVars,
        inputs: &[Option<&str>],
        mut drop: Option<&mut Dropout<'_>>,
    ) -> Result<(LmVars, Var)> {
        let ids: Vec<Option<usize>> = inputs.iter().map(|w| w.map(|w| self.words.id(w))).collect();
        let table = g.param(self.ids.input);
        let mut x = g.gather(table, &ids)?;
        if let Some(d) = drop.as_deref_mut() {
            x = d.apply(g, x)?;
        }
        let active: Vec<bool> = inputs.iter().map(Option::is_some).collect();
        let (next, mut ctx) = self.ids.lm.advance(g, state, x, Some(&active))?;
        if let Some(d) = drop {
            ctx = d.apply(g, ctx)?;
        }
        Ok((next, ctx))
    }

    fn target_nll<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        ctx: Var,
        targets: &[Option<&str>],
        _drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        let ids: Vec<Option<usize>> = targets.iter().map(|w| w.map(|w| self.words.id(w))).collect();
        let units = ids.iter().flatten().count();
        Ok((self.ids.nll(g, ctx, &ids)?, units))
    }

    fn check_scorable(&self, _word: &str) -> Result<()> {
        Ok(())
    }

    fn units(&self, _word: &str) -> Result<usize> {
        Ok(1)
    }
}
