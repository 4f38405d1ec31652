use serde::{Deserialize, Serialize};

use super::{Mlp, NnError};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::FormatError;

/// Adam with decoupled weight decay.
///
/// One step with gradient `g` at step count `t` (1-based):
/// `θ ← θ − lr·wd·θ`, then `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
/// `θ ← θ − lr·(m/(1−β₁ᵗ)) / (√(v/(1−β₂ᵗ)) + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64, n_params: usize) -> Self {
        assert!(learning_rate > 0.0, "learning rate must be positive");
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn for_net(net: &Mlp, learning_rate: f64, weight_decay: f64) -> Self {
        Self::new(learning_rate, weight_decay, net.param_count())
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, net: &mut Mlp, grad: &[f64]) -> Result<(), NnError> {
        let n = net.param_count();
        if grad.len() != n || self.m.len() != n {
            return Err(NnError::ShapeMismatch { expected: n, got: grad.len() });
        }
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient { index });
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        for (((p, &g), m), v) in net
            .params_mut()
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *p -= lr * self.weight_decay * *p;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn write(&self, w: &mut ByteWriter) {
        for v in [self.learning_rate, self.beta1, self.beta2, self.epsilon, self.weight_decay] {
            w.f64(v);
        }
        w.u64(self.t);
        w.f64s(&self.m);
        w.f64s(&self.v);
    }

    pub fn read(r: &mut ByteReader<'_>) -> Result<Self, FormatError> {
        let learning_rate = r.f64()?;
        let beta1 = r.f64()?;
        let beta2 = r.f64()?;
        let epsilon = r.f64()?;
        let weight_decay = r.f64()?;
        let t = r.u64()?;
        let m = r.f64s()?;
        let v = r.f64s()?;
        if m.len() != v.len() {
            return Err(FormatError::Invalid("optimizer moment buffers differ in length".into()));
        }
        Ok(Self { learning_rate, beta1, beta2, epsilon, weight_decay, m, v, t })
    }
}

/// Rescales `grad` so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;

    fn scalar_net(p: f64) -> Mlp {
        Mlp::from_params(&[1, 1], &[Activation::Identity], 0, vec![p, 0.0]).unwrap()
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut net = Mlp::with_hidden(3, &[4], 2, Activation::Tanh, Activation::Identity, 5).unwrap();
        let before = net.clone();
        let mut opt = AdamW::for_net(&net, 1e-3, 0.0);
        let zeros = vec![0.0; net.param_count()];
        for _ in 0..5 {
            opt.step(&mut net, &zeros).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn single_step_matches_closed_form() {
        let (p0, g, lr, wd) = (0.7, 0.25, 1e-3, 0.01);
        let mut net = scalar_net(p0);
        let mut opt = AdamW::for_net(&net, lr, wd);
        opt.step(&mut net, &[g, 0.0]).unwrap();
        // First step: m̂ = g, v̂ = g², so the Adam term is g/(|g| + ε).
        let want = p0 - lr * wd * p0 - lr * g / (g.abs() + 1e-8);
        assert!((net.params()[0] - want).abs() < 1e-15);

        // Second step by hand.
        let g2 = -0.1;
        opt.step(&mut net, &[g2, 0.0]).unwrap();
        let m = 0.9 * (0.1 * g) + 0.1 * g2;
        let v = 0.999 * (0.001 * g * g) + 0.001 * g2 * g2;
        let (mh, vh) = (m / (1.0 - 0.81), v / (1.0 - 0.999f64.powi(2)));
        let want2 = want - lr * wd * want - lr * mh / (vh.sqrt() + 1e-8);
        assert!((net.params()[0] - want2).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mk = || Mlp::with_hidden(2, &[3], 1, Activation::Tanh, Activation::Identity, 4).unwrap();
        let (mut a, mut b) = (mk(), mk());
        let g: Vec<f64> = (0..a.param_count()).map(|i| (i as f64).cos()).collect();
        let (mut oa, mut ob) = (AdamW::for_net(&a, 3e-4, 0.01), AdamW::for_net(&b, 3e-4, 0.01));
        oa.step(&mut a, &g).unwrap();
        ob.step(&mut b, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn errors() {
        let mut net = scalar_net(1.0);
        let mut opt = AdamW::for_net(&net, 1e-3, 0.0);
        assert!(matches!(opt.step(&mut net, &[1.0]), Err(NnError::ShapeMismatch { .. })));
        assert_eq!(opt.step(&mut net, &[f64::NAN, 0.0]), Err(NnError::NonFiniteGradient { index: 0 }));
        assert_eq!(opt.steps_taken(), 0);
    }

    #[test]
    fn clipping() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 0.5), 5.0);
        assert!((g[0] - 0.3).abs() < 1e-15 && (g[1] - 0.4).abs() < 1e-15);
        let mut small = vec![0.1, 0.1];
        clip_grad_norm(&mut small, 0.5);
        assert_eq!(small, vec![0.1, 0.1]);
    }
}
