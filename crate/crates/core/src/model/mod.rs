//! The C2W2C sub-models, the word-level baseline, and parameter counting.

pub mod c2w;
mod count;
pub mod lm;
pub mod lstm;
pub mod w2c;
pub mod wordlstm;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use c2w::C2wParams;
pub use count::{count_c2w2c, count_wordlstm, ParamCount};
pub use lm::{LmParams, LmState, LmVars};
pub use lstm::LstmParams;
pub use w2c::{W2cContext, W2cParams};
pub use wordlstm::{WordLstmModel, WordLstmParams};

use crate::corpus::{CharVocab, EncodedWord, SENT_END};
use crate::error::{Error, Result};
use crate::numkernel::{Graph, ParamLayout, ParamSet, Real, Var};
use crate::training::Dropout;

/// Layer sizes. Defaults are the full-scale configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelDims {
    /// Character embedding size, also the decoder readout width.
    pub d_c: usize,
    /// Hidden size of each direction of the character encoder.
    pub d_wi: usize,
    /// Word embedding size.
    pub d_w: usize,
    /// Hidden size of both language-model layers.
    pub d_l: usize,
    pub decoder_hidden: usize,
    /// Baseline output bottleneck.
    pub bottleneck: usize,
    pub max_word_len: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            d_c: 50,
            d_wi: 150,
            d_w: 50,
            d_l: 500,
            decoder_hidden: 500,
            bottleneck: 150,
            max_word_len: 20,
        }
    }
}

impl ModelDims {
    /// Every size set to `n` (word length cap kept at 20).
    pub fn uniform(n: usize) -> Self {
        ModelDims {
            d_c: n,
            d_wi: n,
            d_w: n,
            d_l: n,
            decoder_hidden: n,
            bottleneck: n,
            max_word_len: 20,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("d_c", self.d_c),
            ("d_wi", self.d_wi),
            ("d_w", self.d_w),
            ("d_l", self.d_l),
            ("decoder_hidden", self.decoder_hidden),
            ("bottleneck", self.bottleneck),
            ("max_word_len", self.max_word_len),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    C2w2c,
    #[value(name = "wordlstm")]
    WordLstm,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::C2w2c => "c2w2c",
            ModelKind::WordLstm => "wordlstm",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c2w2c" => Ok(ModelKind::C2w2c),
            "wordlstm" => Ok(ModelKind::WordLstm),
            other => Err(Error::Config(format!("unknown model {other:?}"))),
        }
    }
}

pub(crate) fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 << 32);
    rng
}

/// Shared interface of the compositional model and the baseline, used by
/// training and evaluation.
pub trait LanguageModel<T: Real> {
    fn kind(&self) -> ModelKind;
    fn dims(&self) -> &ModelDims;
    fn params(&self) -> &ParamSet<T>;
    fn params_mut(&mut self) -> &mut ParamSet<T>;
    fn zero_state(&self, batch: usize) -> LmState<T>;

    /// Consumes one word per stream (`None` = stream idle, state kept) and
    /// returns the new state and the context for predicting the next word.
    fn advance<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        state: LmVars,
        inputs: &[Option<&str>],
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(LmVars, Var)>;

    /// Per-row negative log-likelihood `[B]` of the target words given the
    /// context, and the number of predicted units (characters for C2W2C,
    /// words for the baseline).
    fn target_nll<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        ctx: Var,
        targets: &[Option<&str>],
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)>;

    /// Fails if the word cannot be scored by this model.
    fn check_scorable(&self, word: &str) -> Result<()>;

    /// Units predicted for `word`, as counted by [`LanguageModel::target_nll`].
    fn units(&self, word: &str) -> Result<usize>;
}

/// Character-to-word-to-character model with its character vocabulary.
#[derive(Clone, Debug)]
pub struct C2w2cModel<T> {
    pub dims: ModelDims,
    pub vocab: CharVocab,
    pub params: ParamSet<T>,
    pub c2w: C2wParams,
    pub lm: LmParams,
    pub w2c: W2cParams,
}

impl<T: Real> C2w2cModel<T> {
    pub fn layout(dims: &ModelDims, vocab_size: usize) -> (ParamLayout, C2wParams, LmParams, W2cParams) {
        let mut layout = ParamLayout::new();
        let c2w = C2wParams::declare(&mut layout, vocab_size, dims.d_c, dims.d_wi, dims.d_w);
        let lm = LmParams::declare(&mut layout, "lm", dims.d_w, dims.d_l);
        let w2c = W2cParams::declare(&mut layout, vocab_size, dims.d_c, dims.decoder_hidden, dims.d_l);
        (layout, c2w, lm, w2c)
    }

    pub fn new(dims: ModelDims, vocab: CharVocab, seed: u64) -> Result<Self> {
        dims.validate()?;
        let (layout, c2w, lm, w2c) = Self::layout(&dims, vocab.len());
        let params = layout.materialize(&mut init_rng(seed))?;
        Ok(C2w2cModel { dims, vocab, params, c2w, lm, w2c })
    }

    pub fn from_params(dims: ModelDims, vocab: CharVocab, params: ParamSet<T>) -> Result<Self> {
        dims.validate()?;
        let (layout, c2w, lm, w2c) = Self::layout(&dims, vocab.len());
        layout.check(&params)?;
        Ok(C2w2cModel { dims, vocab, params, c2w, lm, w2c })
    }

    pub fn encode(&self, word: &str) -> Result<EncodedWord> {
        self.vocab.encode(word, self.dims.max_word_len)
    }

    /// Converts a trained model to another precision.
    pub fn cast<U: Real>(&self) -> C2w2cModel<U> {
        C2w2cModel {
            dims: self.dims,
            vocab: self.vocab.clone(),
            params: self.params.cast(),
            c2w: self.c2w.clone(),
            lm: self.lm.clone(),
            w2c: self.w2c.clone(),
        }
    }
}

impl<T: Real> LanguageModel<T> for C2w2cModel<T> {
    fn kind(&self) -> ModelKind {
        ModelKind::C2w2c
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
        let idle = self.encode(SENT_END)?;
        let encoded = inputs
            .iter()
            .map(|w| w.map_or_else(|| Ok(idle.clone()), |w| self.encode(w)))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&EncodedWord> = encoded.iter().collect();
        let mut w = self.c2w.embed(g, &refs)?;
        if let Some(d) = drop.as_deref_mut() {
            w = d.apply(g, w)?;
        }
        let active: Vec<bool> = inputs.iter().map(Option::is_some).collect();
        let (next, mut ctx) = self.lm.advance(g, state, w, Some(&active))?;
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
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        let encoded = targets
            .iter()
            .map(|w| w.map(|w| self.encode(w)).transpose())
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<Option<&EncodedWord>> = encoded.iter().map(Option::as_ref).collect();
        self.w2c.word_nll(g, ctx, &refs, drop)
    }

    fn check_scorable(&self, word: &str) -> Result<()> {
        if self.encode(word)?.has_unknown() {
            return Err(Error::UnknownCharacter(vec![word.to_owned()]));
        }
        Ok(())
    }

    fn units(&self, word: &str) -> Result<usize> {
        Ok(self.encode(word)?.targets().len())
    }
}

/// Either model, as stored in a checkpoint.
#[derive(Clone, Debug)]
pub enum AnyModel<T> {
    C2w2c(C2w2cModel<T>),
    WordLstm(WordLstmModel<T>),
}

macro_rules! delegate {
    ($self:ident, $m:ident => $e:expr) => {
        match $self {
            AnyModel::C2w2c($m) => $e,
            AnyModel::WordLstm($m) => $e,
        }
    };
}

impl<T: Real> LanguageModel<T> for AnyModel<T> {
    fn kind(&self) -> ModelKind {
        delegate!(self, m => m.kind())
    }
    fn dims(&self) -> &ModelDims {
        delegate!(self, m => m.dims())
    }
    fn params(&self) -> &ParamSet<T> {
        delegate!(self, m => m.params())
    }
    fn params_mut(&mut self) -> &mut ParamSet<T> {
        delegate!(self, m => m.params_mut())
    }
    fn zero_state(&self, batch: usize) -> LmState<T> {
        delegate!(self, m => m.zero_state(batch))
    }
    fn advance<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        state: LmVars,
        inputs: &[Option<&str>],
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(LmVars, Var)> {
        delegate!(self, m => m.advance(g, state, inputs, drop))
    }
    fn target_nll<'p>(
        &'p self,
        g: &mut Graph<'p, T>,
        ctx: Var,
        targets: &[Option<&str>],
        drop: Option<&mut Dropout<'_>>,
    ) -> Result<(Var, usize)> {
        delegate!(self, m => m.target_nll(g, ctx, targets, drop))
    }
    fn check_scorable(&self, word: &str) -> Result<()> {
        delegate!(self, m => m.check_scorable(word))
    }
    fn units(&self, word: &str) -> Result<usize> {
        delegate!(self, m => m.units(word))
    }
}

impl<T: Real> AnyModel<T> {
    pub fn as_c2w2c(&self) -> Option<&C2w2cModel<T>> {
        match self {
            AnyModel::C2w2c(m) => Some(m),
            AnyModel::WordLstm(_) => None,
        }
    }

    pub fn vocab_hash(&self) -> String {
        match self {
            AnyModel::C2w2c(m) => m.vocab.hash(),
            AnyModel::WordLstm(m) => m.words.hash(),
        }
    }
}
