//! Standard four-gate LSTM cell with fused gate weights.

use crate::error::Result;
use crate::numkernel::{Graph, Init, ParamId, ParamLayout, Real, Var};

/// Weights of one LSTM cell. Gate blocks are laid out `[i, f, g, o]` along
/// the columns of `w_x: [input × 4H]`, `w_h: [H × 4H]` and `b: [4H]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn declare(layout: &mut ParamLayout, prefix: &str, input: usize, hidden: usize) -> Self {
        let glorot_x = Init::Glorot { fan_in: input, fan_out: hidden };
        let glorot_h = Init::Glorot { fan_in: hidden, fan_out: hidden };
        LstmParams {
            w_x: layout.add(format!("{prefix}.w_x"), &[input, 4 * hidden], glorot_x),
            w_h: layout.add(format!("{prefix}.w_h"), &[hidden, 4 * hidden], glorot_h),
            b: layout.add(format!("{prefix}.b"), &[4 * hidden], Init::LstmBias { hidden }),
            input,
            hidden,
        }
    }

    /// `4·((input + H)·H + H)`
    pub fn numel(input: usize, hidden: usize) -> usize {
        4 * ((input + hidden) * hidden + hidden)
    }

    /// One step on a batch: `x: [B×input]`, `h, c: [B×H]` → `(h', c')`.
    pub fn step<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let wx = g.param(self.w_x);
        let wh = g.param(self.w_h);
        let b = g.param(self.b);
        let xw = g.matmul(x, wx)?;
        let hw = g.matmul(h, wh)?;
        let pre = g.add(xw, hw)?;
        let pre = g.add_bias(pre, b)?;
        let n = self.hidden;
        let i = g.slice_cols(pre, 0, n)?;
        let f = g.slice_cols(pre, n, n)?;
        let cand = g.slice_cols(pre, 2 * n, n)?;
        let o = g.slice_cols(pre, 3 * n, n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}
