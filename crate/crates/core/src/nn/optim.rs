use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Result, StmError};
use crate::scalar::Real;

/// Momentum SGD with coupled weight decay:
/// `g += wd * w; v = momentum * v + g; w -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Real> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd { lr, momentum, weight_decay, velocity: Vec::new() }
    }

    /// Applies one update. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Tensor<T>)]) -> Result<()> {
        for (id, g) in grads {
            let p = store.get(*id);
            if p.value.shape() != g.shape() {
                return Err(StmError::contract(format!(
                    "gradient shape {:?} differs from parameter {} {:?}",
                    g.shape(),
                    p.name,
                    p.value.shape()
                )));
            }
            if !g.all_finite() {
                return Err(StmError::Numeric(format!("non-finite gradient for parameter {}", p.name)));
            }
        }
        if self.velocity.len() < store.len() {
            self.velocity.resize(store.len(), None);
        }
        let (lr, mu, wd) = (T::from_f64(self.lr), T::from_f64(self.momentum), T::from_f64(self.weight_decay));
        for (id, g) in grads {
            let p = store.get_mut(*id);
            if !p.trainable {
                continue;
            }
            let v = self.velocity[id.index()].get_or_insert_with(|| vec![T::zero(); g.len()]);
            for ((w, vi), &gi) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                let d = gi + wd * *w;
                *vi = mu * *vi + d;
                *w -= lr * *vi;
            }
        }
        Ok(())
    }
}
