use serde::{Deserialize, Serialize};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
    pub t: u64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor<F>>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.dims()), Tensor::zeros(p.dims())))
            .unzip();
        AdamState { config, m, v, t: 0 }
    }

    /// One bias-corrected Adam update. Gradients are validated before any
    /// parameter is touched, so a rejected step leaves everything unchanged.
    pub fn step(&mut self, params: &mut [Tensor<F>], grads: &[Tensor<F>], names: &[String]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Usage(format!(
                "adam step: {} parameters, {} gradients, {} moment slots",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
            if p.dims() != g.dims() || p.dims() != self.m[i].dims() {
                return Err(Error::Training {
                    param: name,
                    message: format!("gradient extents {:?} vs parameter {:?}", g.dims(), p.dims()),
                });
            }
            if !g.is_finite() {
                return Err(Error::Training {
                    param: name,
                    message: "non-finite gradient".into(),
                });
            }
        }
        self.t += 1;
        let c = self.config;
        let t = self.t as i32;
        let b1 = F::of(c.beta1);
        let b2 = F::of(c.beta2);
        let one = F::one();
        let corr1 = F::of(1.0 - c.beta1.powi(t));
        let corr2 = F::of(1.0 - c.beta2.powi(t));
        let lr = F::of(c.lr);
        let eps = F::of(c.eps);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((w, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = b1 * *mi + (one - b1) * *gi;
                *vi = b2 * *vi + (one - b2) * *gi * *gi;
                let mhat = *mi / corr1;
                let vhat = *vi / corr2;
                *w = *w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i}")).collect()
    }

    #[test]
    fn fresh_state_has_zero_moments() {
        let p = Tensor::<f64>::full(&[3], 1.0);
        let s = AdamState::new(AdamConfig::default(), [&p]);
        assert_eq!(s.t, 0);
        assert!(s.m[0].data().iter().chain(s.v[0].data()).all(|x| *x == 0.0));
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = vec![Tensor::<f64>::new(vec![2], vec![0.3, -1.2]).unwrap()];
        let before = p.clone();
        let mut s = AdamState::new(AdamConfig::default(), p.iter());
        for _ in 0..100 {
            s.step(&mut p, &[Tensor::zeros(&[2])], &names(1)).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(s.t, 100);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = vec![Tensor::<f64>::zeros(&[1])];
        let mut s = AdamState::new(AdamConfig::default(), p.iter());
        s.step(&mut p, &[Tensor::full(&[1], 1.0)], &names(1)).unwrap();
        // m̂ = 1, v̂ = 1 → θ = −lr / (1 + eps)
        let expect = -1e-3 / (1.0 + 1e-8);
        assert!((p[0].data()[0] - expect).abs() < 1e-15);
        assert!((p[0].data()[0] - (-9.99999994e-4)).abs() < 1e-11);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut p = vec![Tensor::<f64>::zeros(&[1])];
        let mut s = AdamState::new(AdamConfig::default(), p.iter());
        let mut last = 0.0;
        for _ in 0..2 {
            s.step(&mut p, &[Tensor::full(&[1], 1.0)], &names(1)).unwrap();
            assert!(p[0].data()[0] < last);
            last = p[0].data()[0];
        }
    }

    #[test]
    fn nan_gradient_names_the_parameter_and_leaves_state_untouched() {
        let mut p = vec![Tensor::<f32>::zeros(&[1]), Tensor::zeros(&[2])];
        let mut s = AdamState::new(AdamConfig::default(), p.iter());
        let grads = [Tensor::full(&[1], 1.0), Tensor::new(vec![2], vec![0.0, f32::NAN]).unwrap()];
        match s.step(&mut p, &grads, &["w".into(), "dense.bias".into()]) {
            Err(Error::Training { param, .. }) => assert_eq!(param, "dense.bias"),
            other => panic!("expected training error, got {other:?}"),
        }
        assert_eq!(s.t, 0);
        assert_eq!(p[0].data()[0], 0.0);
    }
}
