use crate::error::{Error, Result};
use crate::numkernel::{lit, ParamSet, Real, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// Applies one bias-corrected update `p −= lr · m̂ / (√v̂ + ε)`.
    pub fn update(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam: {} gradients and {} parameters for {} moments",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let (b1, b2): (T, T) = (lit(BETA1), lit(BETA2));
        let (one_b1, one_b2): (T, T) = (lit(1.0 - BETA1), lit(1.0 - BETA2));
        let (c1, c2, lr, eps): (T, T, T, T) = (lit(c1), lit(c2), lit(lr), lit(EPSILON));
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(Error::Shape(format!(
                    "adam: gradient {:?} for parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = b1 * m[k] + one_b1 * gk;
                v[k] = b2 * v[k] + one_b2 * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s: T = lit(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}

/// Joint L2 norm of a gradient list.
pub fn global_norm<T: Real>(grads: &[Tensor<T>]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt()
}
