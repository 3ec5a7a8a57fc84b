use crate::model::ParamStore;
use crate::numerics::{NumericsError, Tensor};
use crate::scalar::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moments, one pair per parameter in store order.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
        Self { beta1: BETA1, beta2: BETA2, eps: ADAM_EPS, step: 0, m: zeros(), v: zeros() }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.v
    }

    /// One bias-corrected Adam update with decoupled weight decay.
    /// Parameters whose kind does not decay skip the decay term. A
    /// non-finite gradient aborts before anything is modified.
    pub fn step(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[Tensor<T>],
        lr: f64,
        weight_decay: f64,
    ) -> Result<(), NumericsError> {
        if grads.len() != params.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "adamw",
                detail: format!("{} gradients for {} parameters", grads.len(), params.len()),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adamw",
                    detail: format!("{}: {:?} vs {:?}", p.name, p.value.shape(), g.shape()),
                });
            }
            g.check_finite("adamw")?;
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let eps = T::lit(self.eps);
        let lr_t = T::lit(lr);
        let decay = T::lit(lr * weight_decay);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let decays = p.kind.decays() && weight_decay != 0.0;
            for (((w, &gi), mi), vi) in
                p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = b1 * *mi + one_b1 * gi;
                *vi = b2 * *vi + one_b2 * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                let old = *w;
                *w = old - lr_t * (m_hat / (v_hat.sqrt() + eps));
                if decays {
                    *w -= decay * old;
                }
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let sq: f64 = grads.iter().flat_map(|g| g.data()).map(|x| x.to_f64_lossy().powi(2)).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::lit(max_norm / norm);
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x *= s;
            }
        }
    }
    norm
}
