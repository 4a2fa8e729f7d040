use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkernel::{lit, Graph, Real, Tensor, Var};

/// Inverted dropout drawing its masks from a borrowed generator.
pub struct Dropout<'r> {
    rate: f64,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Dropout<'r> {
    pub fn new(rate: f64, rng: &'r mut ChaCha8Rng) -> Result<Self> {
        check_rate(rate)?;
        Ok(Dropout { rate, rng })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    /// Masks `x` in training mode. A zero rate is the identity and draws
    /// nothing from the generator.
    pub fn apply<T: Real>(&mut self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let mask = mask::<T>(g.shape(x), self.rate, self.rng);
        let m = g.constant(mask);
        g.mul(x, m)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

fn mask<T: Real>(shape: &[usize], rate: f64, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let keep: T = lit(1.0 / (1.0 - rate));
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("mask shape")
}

/// Plain-tensor dropout: zeroes entries with probability `rate` and scales
/// survivors by `1/(1 − rate)`; identity outside training.
pub fn apply_dropout<T: Real>(x: &Tensor<T>, rate: f64, training: bool, rng: &mut ChaCha8Rng) -> Result<Tensor<T>> {
    check_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let m = mask::<T>(x.shape(), rate, rng);
    let mut out = x.clone();
    for (o, &k) in out.data_mut().iter_mut().zip(m.data()) {
        *o = *o * k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    #[test]
    fn zero_rate_is_identity() {
        let x = Tensor::<f64>::from_f64(&[2, 2], &[1.0, -2.0, 3.0, 4.5]).unwrap();
        assert_eq!(apply_dropout(&x, 0.0, true, &mut rng()).unwrap(), x);
    }

    #[test]
    fn inference_is_identity() {
        let x = Tensor::<f64>::from_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(apply_dropout(&x, 0.5, false, &mut rng()).unwrap(), x);
    }

    #[test]
    fn keep_fraction_and_scaling() {
        let x = Tensor::<f64>::full(&[100_000], 1.0);
        let y = apply_dropout(&x, 0.5, true, &mut rng()).unwrap();
        let kept = y.data().iter().filter(|&&v| v != 0.0).count();
        let frac = kept as f64 / 1e5;
        assert!((frac - 0.5).abs() < 0.01, "keep fraction {frac}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn rejects_bad_rate() {
        let x = Tensor::<f64>::zeros(&[1]);
        assert!(apply_dropout(&x, 1.0, true, &mut rng()).is_err());
        assert!(apply_dropout(&x, -0.1, true, &mut rng()).is_err());
    }

    #[test]
    fn graph_mask_gradient_matches_mask() {
        let mut r = rng();
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::full(&[1, 50], 1.0));
        let mut d = Dropout::new(0.5, &mut r).unwrap();
        let y = d.apply(&mut g, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), g.value(y).clone());
    }
}
