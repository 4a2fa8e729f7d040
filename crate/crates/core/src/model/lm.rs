//! Two-layer word-level LSTM. The context handed to the decoder is the
//! second layer's hidden state after the latest word.

use super::lstm::LstmParams;
use crate::error::{Error, Result};
use crate::numkernel::{Graph, ParamLayout, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct LmParams {
    pub layer1: LstmParams,
    pub layer2: LstmParams,
}

/// Carried `(h, c)` for both layers, one row per stream. Holds plain
/// values, so a state taken out of a graph carries no gradient history.
#[derive(Clone, Debug, PartialEq)]
pub struct LmState<T> {
    pub h1: Tensor<T>,
    pub c1: Tensor<T>,
    pub h2: Tensor<T>,
    pub c2: Tensor<T>,
}

/// [`LmState`] placed in a graph.
#[derive(Clone, Copy, Debug)]
pub struct LmVars {
    pub h1: Var,
    pub c1: Var,
    pub h2: Var,
    pub c2: Var,
}

impl<T: Real> LmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        let z = Tensor::zeros(&[batch, hidden]);
        LmState {
            h1: z.clone(),
            c1: z.clone(),
            h2: z.clone(),
            c2: z,
        }
    }

    pub fn batch(&self) -> usize {
        self.h1.rows()
    }

    /// Enters the state as constants: gradients stop here.
    pub fn to_graph(&self, g: &mut Graph<'_, T>) -> LmVars {
        LmVars {
            h1: g.constant(self.h1.clone()),
            c1: g.constant(self.c1.clone()),
            h2: g.constant(self.h2.clone()),
            c2: g.constant(self.c2.clone()),
        }
    }

    /// Copies the current values out of a graph, dropping their history.
    pub fn detach(g: &Graph<'_, T>, v: LmVars) -> Self {
        LmState {
            h1: g.value(v.h1).clone(),
            c1: g.value(v.c1).clone(),
            h2: g.value(v.h2).clone(),
            c2: g.value(v.c2).clone(),
        }
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        Ok(LmState {
            h1: self.h1.select_rows(idx)?,
            c1: self.c1.select_rows(idx)?,
            h2: self.h2.select_rows(idx)?,
            c2: self.c2.select_rows(idx)?,
        })
    }

    pub fn tensors(&self) -> [&Tensor<T>; 4] {
        [&self.h1, &self.c1, &self.h2, &self.c2]
    }

    pub fn from_tensors(t: [Tensor<T>; 4]) -> Result<Self> {
        let [h1, c1, h2, c2] = t;
        if !(h1.shape() == c1.shape() && c1.shape() == h2.shape() && h2.shape() == c2.shape()) {
            return Err(Error::Shape("recurrent state tensors differ in shape".into()));
        }
        Ok(LmState { h1, c1, h2, c2 })
    }
}

impl LmParams {
    pub fn declare(layout: &mut ParamLayout, prefix: &str, d_w: usize, d_l: usize) -> Self {
        LmParams {
            layer1: LstmParams::declare(layout, &format!("{prefix}.l1"), d_w, d_l),
            layer2: LstmParams::declare(layout, &format!("{prefix}.l2"), d_l, d_l),
        }
    }

    pub fn hidden(&self) -> usize {
        self.layer2.hidden
    }

    /// Feeds one word embedding per stream through both layers.
    ///
    /// Streams whose `active` flag is false keep their previous state.
    /// Returns the new state and the context `[B × d_L]`.
    pub fn advance<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        state: LmVars,
        w: Var,
        active: Option<&[bool]>,
    ) -> Result<(LmVars, Var)> {
        let ws = g.shape(w);
        let ss = g.shape(state.h1);
        if ws.len() != 2 || ss.len() != 2 || ws[0] != ss[0] || ss[1] != self.hidden() {
            return Err(Error::Shape(format!(
                "lm_advance: input {ws:?} does not match state {ss:?}"
            )));
        }
        let (h1, c1) = self.layer1.step(g, w, state.h1, state.c1)?;
        let (h2, c2) = self.layer2.step(g, h1, state.h2, state.c2)?;
        let mut next = LmVars { h1, c1, h2, c2 };
        if let Some(mask) = active.filter(|m| !m.iter().all(|&a| a)) {
            next = LmVars {
                h1: g.where_rows(mask, next.h1, state.h1)?,
                c1: g.where_rows(mask, next.c1, state.c1)?,
                h2: g.where_rows(mask, next.h2, state.h2)?,
                c2: g.where_rows(mask, next.c2, state.c2)?,
            };
        }
        Ok((next, next.h2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::testutil::{materialize, zero_all};
    use crate::numkernel::ParamSet;

    fn setup() -> (LmParams, ParamSet<f64>) {
        let mut layout = ParamLayout::new();
        let p = LmParams::declare(&mut layout, "lm", 3, 4);
        (p, materialize(&layout, 4))
    }

    fn run(p: &LmParams, set: &ParamSet<f64>, inputs: &[&[f64]]) -> Tensor<f64> {
        let mut g = Graph::with_params(set);
        let mut s = LmState::zeros(1, 4).to_graph(&mut g);
        let mut ctx = s.h2;
        for x in inputs {
            let x = g.constant(Tensor::from_f64(&[1, 3], x).unwrap());
            (s, ctx) = p.advance(&mut g, s, x, None).unwrap();
        }
        g.value(ctx).clone()
    }

    #[test]
    fn all_zero_gives_zero_context() {
        let (p, mut set) = setup();
        zero_all(&mut set);
        assert!(run(&p, &set, &[&[0.0; 3]]).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn not_additive_over_steps() {
        let (p, set) = setup();
        let two = run(&p, &set, &[&[0.3, -0.2, 0.5], &[0.1, 0.4, -0.6]]);
        let one = run(&p, &set, &[&[0.4, 0.2, -0.1]]);
        assert_ne!(two, one);
    }

    #[test]
    fn inactive_rows_keep_state() {
        let (p, set) = setup();
        let mut g = Graph::with_params(&set);
        let mut start = LmState::<f64>::zeros(2, 4);
        start.h1.data_mut()[5] = 0.7;
        let s = start.to_graph(&mut g);
        let x = g.constant(Tensor::full(&[2, 3], 0.5));
        let (next, _) = p.advance(&mut g, s, x, Some(&[true, false])).unwrap();
        let after = LmState::detach(&g, next);
        assert_eq!(after.h1.row(1), start.h1.row(1));
        assert_ne!(after.h1.row(0), start.h1.row(0));
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (p, set) = setup();
        let mut g = Graph::with_params(&set);
        let s = LmState::<f64>::zeros(2, 4).to_graph(&mut g);
        let x = g.constant(Tensor::zeros(&[3, 3]));
        assert!(matches!(p.advance(&mut g, s, x, None), Err(Error::Shape(_))));
    }
}
