//! Parameter counts per component, computed from layouts without
//! allocating any weights.

use std::fmt;

use super::{C2w2cModel, ModelDims, WordLstmModel};

/// Parameter count broken down by component. `input` is the word
/// representation (C2W or the lookup table), `output` the word predictor
/// (W2C or the bottleneck projection).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub input: usize,
    pub lm: usize,
    pub output: usize,
}

impl ParamCount {
    pub fn total(&self) -> usize {
        self.input + self.lm + self.output
    }
}

impl fmt::Display for ParamCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "input\t{}", self.input)?;
        writeln!(f, "lm\t{}", self.lm)?;
        writeln!(f, "output\t{}", self.output)?;
        write!(f, "total\t{}", self.total())
    }
}

pub fn count_c2w2c(dims: &ModelDims, char_vocab: usize) -> ParamCount {
    let (layout, ..) = C2w2cModel::<f32>::layout(dims, char_vocab);
    ParamCount {
        input: layout.numel_with_prefix("c2w."),
        lm: layout.numel_with_prefix("lm."),
        output: layout.numel_with_prefix("w2c."),
    }
}

pub fn count_wordlstm(dims: &ModelDims, word_vocab: usize) -> ParamCount {
    let (layout, _) = WordLstmModel::<f32>::layout(dims, word_vocab);
    ParamCount {
        input: layout.numel_with_prefix("in."),
        lm: layout.numel_with_prefix("lm."),
        output: layout.numel_with_prefix("out."),
    }
}
