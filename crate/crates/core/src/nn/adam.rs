use serde::{Deserialize, Serialize};

use super::{Grads, Params};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.99, eps: 1e-8 }
    }
}

/// Bias-corrected Adam moments, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<P: Params + ?Sized>(config: AdamConfig, params: &P) -> Self {
        let zeros: Vec<Vec<f64>> = params.param_slices().iter().map(|s| vec![0.0; s.len()]).collect();
        AdamState { config, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn step<P: Params + ?Sized>(&mut self, params: &mut P, grads: &Grads) -> Result<()> {
        let mut slices = params.param_slices_mut();
        let shapes_ok = slices.len() == grads.0.len()
            && slices.len() == self.m.len()
            && slices.iter().zip(&grads.0).zip(&self.m).all(|((p, g), m)| p.len() == g.len() && p.len() == m.len());
        if !shapes_ok {
            return Err(Error::Shape("optimizer state, parameters and gradients disagree".into()));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in slices.iter_mut().zip(&grads.0).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Vector(Vec<f64>);

    impl Params for Vector {
        fn param_slices(&self) -> Vec<&[f64]> {
            vec![&self.0]
        }
        fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
            vec![&mut self.0]
        }
    }

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut p = Vector(vec![1.0, -2.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &Grads(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(p.0, vec![1.0, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        let lr = AdamConfig::default().lr;
        for g in [0.5, -0.01, 3.0] {
            let mut p = Vector(vec![0.0]);
            let mut s = AdamState::new(AdamConfig::default(), &p);
            s.step(&mut p, &Grads(vec![vec![g]])).unwrap();
            let d = p.0[0];
            assert_eq!(d.signum(), -g.signum());
            assert!(d.abs() <= lr && d.abs() >= lr * (1.0 - 1e-6), "{d}");
        }
    }

    #[test]
    fn second_step_not_larger() {
        let mut p = Vector(vec![0.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        s.step(&mut p, &Grads(vec![vec![0.3]])).unwrap();
        let d1 = p.0[0];
        s.step(&mut p, &Grads(vec![vec![0.3]])).unwrap();
        let d2 = p.0[0] - d1;
        // recurrence: m̂ = v̂^{1/2} = g again, so the step repeats
        assert!(d2.abs() <= d1.abs() * 1.01);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = Vector(vec![0.0, 1.0]);
        let mut s = AdamState::new(AdamConfig::default(), &p);
        assert!(s.step(&mut p, &Grads(vec![vec![0.3]])).is_err());
        assert_eq!(s.t, 0);
    }
}
