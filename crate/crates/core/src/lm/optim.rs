use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;

/// AdamW moment estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<F>,
    pub v: Vec<F>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![F::zero(); len],
            v: vec![F::zero(); len],
        }
    }
}

/// Scales `grad` in place so its global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<F: Scalar>(grad: &mut [F], max_norm: f64) -> f64 {
    let norm = grad
        .iter()
        .map(|g| {
            let x = g.f64();
            x * x
        })
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::c(max_norm / (norm + 1e-6));
        grad.iter_mut().for_each(|g| *g = *g * s);
    }
    norm
}

impl AdamW {
    /// One update with decoupled weight decay restricted to `decay`.
    pub fn step<F: Scalar>(
        &self,
        params: &mut [F],
        grad: &[F],
        state: &mut AdamState<F>,
        decay: &[Range<usize>],
        lr: f64,
    ) {
        state.step += 1;
        let t = state.step as i32;
        let b1 = F::c(self.beta1);
        let b2 = F::c(self.beta2);
        let one = F::one();
        let bc1 = F::c(1.0 - self.beta1.powi(t));
        let bc2 = F::c(1.0 - self.beta2.powi(t));
        let lr_f = F::c(lr);
        let eps = F::c(self.eps);
        for i in 0..params.len() {
            let g = grad[i];
            state.m[i] = b1 * state.m[i] + (one - b1) * g;
            state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
            let mh = state.m[i] / bc1;
            let vh = state.v[i] / bc2;
            params[i] = params[i] - lr_f * mh / (vh.sqrt() + eps);
        }
        if self.weight_decay > 0.0 {
            let shrink = F::c(1.0 - lr * self.weight_decay);
            for r in decay {
                params[r.clone()].iter_mut().for_each(|p| *p = *p * shrink);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let opt = AdamW {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        };
        let mut p = vec![1.0f64, -2.0];
        let mut st = AdamState::new(2);
        opt.step(&mut p, &[0.5, -3.0], &mut st, &[], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
    }

    #[test]
    fn decay_only_touches_listed_ranges() {
        let opt = AdamW {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.5,
        };
        let mut p = vec![1.0f64, 1.0];
        let mut st = AdamState::new(2);
        opt.step(&mut p, &[0.0, 0.0], &mut st, std::slice::from_ref(&(0..1)), 0.1);
        assert!((p[0] - 0.95).abs() < 1e-12);
        assert_eq!(p[1], 1.0);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![3.0f64, 4.0];
        let n = clip_grad_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        let after = (g[0] * g[0] + g[1] * g[1]).sqrt();
        assert!((after - 1.0).abs() < 1e-6);
        let mut small = vec![0.3f64, 0.4];
        clip_grad_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.3, 0.4]);
    }
}
