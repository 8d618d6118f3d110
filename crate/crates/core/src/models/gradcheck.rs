//! Central finite-difference checks of model parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::Model;
use crate::error::Result;
use crate::nn::{Tape, Tensor};

/// Smallest gradient magnitude treated as relative-measurable. Biases in
/// front of a pool and batch norm have an exact zero gradient, and with a
/// loss of order 1 a step-1e-5 central difference resolves only about 1e-10.
pub const GRAD_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    /// Largest `|a - n| / max(|a|, |n|, GRAD_FLOOR)` over the sampled coordinates.
    pub max_rel: f64,
}

/// Compares analytic and numeric gradients of the training-mode loss on
/// `coords` random coordinates of every trainable tensor.
pub fn check_gradients(
    model: &mut Model<f64>,
    input: &Tensor<f64>,
    labels: &[u32],
    coords: usize,
    step: f64,
    seed: u64,
) -> Result<Vec<TensorCheck>> {
    let loss_at = |m: &Model<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let f = m.forward(&mut t, input.clone(), true)?;
        let l = m.loss(&mut t, &f, labels)?;
        Ok(t.value(l).data()[0])
    };
    let mut t = Tape::new();
    let f = model.forward(&mut t, input.clone(), true)?;
    let l = model.loss(&mut t, &f, labels)?;
    let grads = t.backward(l)?.param_grads();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(grads.len());
    for (id, g) in grads {
        let mut max_rel: f64 = 0.0;
        for _ in 0..coords {
            let i = rng.gen_range(0..g.len());
            let orig = model.store().get(id).value.data()[i];
            model.store_mut().get_mut(id).value.data_mut()[i] = orig + step;
            let lp = loss_at(model);
            model.store_mut().get_mut(id).value.data_mut()[i] = orig - step;
            let lm = loss_at(model);
            model.store_mut().get_mut(id).value.data_mut()[i] = orig;
            let num = (lp? - lm?) / (2.0 * step);
            let ana = g.data()[i];
            max_rel = max_rel.max((ana - num).abs() / ana.abs().max(num.abs()).max(GRAD_FLOOR));
        }
        out.push(TensorCheck { name: model.store().get(id).name.clone(), coords, max_rel });
    }
    Ok(out)
}
