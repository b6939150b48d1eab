//! Adam with bias correction.

use super::tensor::Tensor;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// First/second moment estimates for a fixed list of parameter tensors.
#[derive(Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl AdamState {
    /// Moments start at zero, matching the given parameter shapes.
    pub fn new(shapes: &[&Tensor]) -> Self {
        AdamState {
            m: shapes.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: shapes.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update over all parameters. `grads[i]` pairs with `params[i]`;
    /// a `None` gradient leaves that parameter (and its moments) untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Option<Tensor>], lr: f64) {
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        assert_eq!(params.len(), grads.len(), "gradient count mismatch");
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else { continue };
            assert_eq!(g.shape(), p.shape(), "gradient shape mismatch at {i}");
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let pd = p.data_mut();
            for ((pj, mj), (vj, gj)) in pd
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(g.data().iter()))
            {
                *mj = BETA1 * *mj + (1.0 - BETA1) * gj;
                *vj = BETA2 * *vj + (1.0 - BETA2) * gj * gj;
                let mhat = *mj / bc1;
                let vhat = *vj / bc2;
                *pj -= lr * mhat / (vhat.sqrt() + EPS);
            }
        }
    }

    /// Flat view of the moment buffers for checkpointing.
    pub fn buffers(&self) -> (&[Tensor], &[Tensor], u64) {
        (&self.m, &self.v, self.t)
    }

    /// Restore from checkpointed buffers.
    pub fn restore(m: Vec<Tensor>, v: Vec<Tensor>, t: u64) -> Self {
        assert_eq!(m.len(), v.len(), "moment buffer count mismatch");
        AdamState { m, v, t }
    }
}
