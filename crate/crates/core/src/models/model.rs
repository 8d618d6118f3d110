use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerKind, ModelSpec, Shape};
use crate::error::{Result, StmError};
use crate::healpix::{n_pixels, Level};
use crate::nn::{he_uniform, BatchStats, ParamId, ParamStore, Sgd, Tape, Tensor, Var};
use crate::scalar::Real;
use crate::transformer::TransformerGrid;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const IGNORE_LABEL: u32 = 255;

#[derive(Debug, Clone, Copy)]
enum LayerParams {
    None,
    Affine { w: ParamId, b: ParamId },
    Norm { gamma: ParamId, beta: ParamId, mean: ParamId, var: ParamId },
}

/// A [`ModelSpec`] with parameters, runnable on a [`Tape`].
#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    store: ParamStore<T>,
    params: Vec<LayerParams>,
    grids: HashMap<Level, Arc<TransformerGrid>>,
}

pub struct Forward<T> {
    /// Logits: `[B, K]` for classifiers, `[B, N, K]` for per-pixel heads.
    pub output: Var,
    bn_stats: Vec<(usize, BatchStats<T>)>,
}

impl<T: Real> Model<T> {
    /// He-uniform weights from a seeded generator, zero biases, unit batch-norm scale.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut grids = HashMap::new();
        for (layer, out) in spec.layers.iter().zip(&shapes) {
            let cin = layer.inputs.first().map(|&j| match shapes[j] {
                Shape::Sphere { channels, .. } => channels,
                Shape::Flat(n) => n,
            });
            let mut affine = |wshape: &[usize], fan_in: usize, cout: usize| {
                let w = store.add(format!("{}.weight", layer.name), he_uniform(wshape, fan_in, &mut rng), true);
                let b = store.add(format!("{}.bias", layer.name), Tensor::zeros(&[cout]), true);
                LayerParams::Affine { w, b }
            };
            let p = match layer.kind {
                LayerKind::SphConv { cout } => {
                    let cin = cin.unwrap();
                    if let Shape::Sphere { level, .. } = *out {
                        grids.entry(level).or_insert_with(|| TransformerGrid::cached(level));
                    }
                    affine(&[3, 3, cin, cout], 9 * cin, cout)
                }
                LayerKind::Conv1x1 { cout } => affine(&[cin.unwrap(), cout], cin.unwrap(), cout),
                LayerKind::UnpoolConv { cout } => affine(&[4, cin.unwrap(), cout], cin.unwrap(), cout),
                LayerKind::Linear { out } => affine(&[cin.unwrap(), out], cin.unwrap(), out),
                LayerKind::BatchNorm => {
                    let c = cin.unwrap();
                    let n = &layer.name;
                    LayerParams::Norm {
                        gamma: store.add(format!("{n}.gamma"), Tensor::full(&[c], T::one()), true),
                        beta: store.add(format!("{n}.beta"), Tensor::zeros(&[c]), true),
                        mean: store.add(format!("{n}.running_mean"), Tensor::zeros(&[c]), false),
                        var: store.add(format!("{n}.running_var"), Tensor::full(&[c], T::one()), false),
                    }
                }
                _ => LayerParams::None,
            };
            params.push(p);
        }
        Ok(Model { spec, shapes, store, params, grids })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn n_classes(&self) -> usize {
        match self.shapes.last().unwrap() {
            Shape::Sphere { channels, .. } => *channels,
            Shape::Flat(n) => *n,
        }
    }

    /// Whether the head produces one prediction per pixel.
    pub fn per_pixel(&self) -> bool {
        matches!(self.shapes.last().unwrap(), Shape::Sphere { .. })
    }

    pub fn input_pixels(&self) -> usize {
        n_pixels(self.spec.entry_level)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            store: self.store.cast(),
            params: self.params.clone(),
            grids: self.grids.clone(),
        }
    }

    /// Records the network on `tape` for an input batch `[B, N, C]`.
    pub fn forward(&self, tape: &mut Tape<T>, input: Tensor<T>, train: bool) -> Result<Forward<T>> {
        let want = [self.input_pixels(), self.spec.in_channels()];
        if input.shape().len() != 3 || input.shape()[1..] != want {
            return Err(StmError::contract(format!(
                "model expects [B, {}, {}] input, got {:?}",
                want[0],
                want[1],
                input.shape()
            )));
        }
        let batch = input.shape()[0];
        let mut vars: Vec<Var> = Vec::with_capacity(self.spec.layers.len());
        let mut bn_stats = Vec::new();
        let mut input = Some(input);
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let x = layer.inputs.first().map(|&j| vars[j]);
            let v = match (layer.kind, self.params[i]) {
                (LayerKind::Input { .. }, _) => tape.constant(input.take().unwrap()),
                (LayerKind::SphConv { .. }, LayerParams::Affine { w, b }) => {
                    let Shape::Sphere { level, .. } = self.shapes[i] else { unreachable!() };
                    let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
                    tape.spherical_conv(x.unwrap(), w, Some(b), &self.grids[&level])?
                }
                (LayerKind::Conv1x1 { .. }, LayerParams::Affine { w, b }) => {
                    let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
                    tape.conv1x1(x.unwrap(), w, Some(b))?
                }
                (LayerKind::UnpoolConv { .. }, LayerParams::Affine { w, b }) => {
                    let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
                    tape.unpool_conv(x.unwrap(), w, Some(b))?
                }
                (LayerKind::Linear { .. }, LayerParams::Affine { w, b }) => {
                    let (w, b) = (tape.param(&self.store, w), tape.param(&self.store, b));
                    tape.linear(x.unwrap(), w, Some(b))?
                }
                (LayerKind::BatchNorm, LayerParams::Norm { gamma, beta, mean, var }) => {
                    let (g, bt) = (tape.param(&self.store, gamma), tape.param(&self.store, beta));
                    if train {
                        let (v, stats) = tape.batchnorm_train(x.unwrap(), g, bt, BN_EPS)?;
                        bn_stats.push((i, stats));
                        v
                    } else {
                        let (m, s) = (self.store.get(mean).value.data(), self.store.get(var).value.data());
                        tape.batchnorm_eval(x.unwrap(), g, bt, m, s, BN_EPS)?
                    }
                }
                (LayerKind::Pool, _) => tape.maxpool1x4(x.unwrap())?,
                (LayerKind::Relu, _) => tape.relu(x.unwrap()),
                (LayerKind::Flatten, _) => {
                    let Shape::Flat(n) = self.shapes[i] else { unreachable!() };
                    tape.reshape(x.unwrap(), &[batch, n])?
                }
                (LayerKind::GlobalAvg, _) => tape.global_avg(x.unwrap())?,
                (LayerKind::Concat, _) => {
                    let parts: Vec<Var> = layer.inputs.iter().map(|&j| vars[j]).collect();
                    tape.concat(&parts)?
                }
                (LayerKind::Sum, _) => {
                    let mut acc = vars[layer.inputs[0]];
                    for &j in &layer.inputs[1..] {
                        acc = tape.add(acc, vars[j])?;
                    }
                    acc
                }
                (LayerKind::Softmax, _) => x.unwrap(),
                (kind, _) => unreachable!("parameters missing for {kind:?}"),
            };
            vars.push(v);
        }
        Ok(Forward { output: *vars.last().unwrap(), bn_stats })
    }

    /// Folds training-mode batch statistics into the running averages.
    pub fn update_running_stats(&mut self, fwd: &Forward<T>) {
        let m = T::from_f64(BN_MOMENTUM);
        for (layer, stats) in &fwd.bn_stats {
            let LayerParams::Norm { mean, var, .. } = self.params[*layer] else { unreachable!() };
            let unbias = if stats.count > 1 {
                T::from_f64(stats.count as f64 / (stats.count - 1) as f64)
            } else {
                T::one()
            };
            for (r, &b) in self.store.get_mut(mean).value.data_mut().iter_mut().zip(&stats.mean) {
                *r = (T::one() - m) * *r + m * b;
            }
            for (r, &b) in self.store.get_mut(var).value.data_mut().iter_mut().zip(&stats.var) {
                *r = (T::one() - m) * *r + m * b * unbias;
            }
        }
    }

    /// Mean cross-entropy over the batch (over labelled pixels for
    /// per-pixel heads, skipping [`IGNORE_LABEL`]).
    pub fn loss(&self, tape: &mut Tape<T>, fwd: &Forward<T>, labels: &[u32]) -> Result<Var> {
        let out = tape.value(fwd.output).shape().to_vec();
        let k = *out.last().unwrap();
        let rows = out.iter().product::<usize>() / k;
        let logits = if out.len() == 2 { fwd.output } else { tape.reshape(fwd.output, &[rows, k])? };
        tape.softmax_xent(logits, labels, self.per_pixel().then_some(IGNORE_LABEL))
    }

    /// One optimizer step on a batch; returns the batch loss.
    pub fn train_step(&mut self, opt: &mut Sgd<T>, input: Tensor<T>, labels: &[u32]) -> Result<f64> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input, true)?;
        let loss = self.loss(&mut tape, &fwd, labels)?;
        let value = tape.value(loss).data()[0].as_f64();
        if !value.is_finite() {
            return Err(StmError::Numeric(format!("training loss became {value}")));
        }
        let grads = tape.backward(loss)?;
        opt.step(&mut self.store, &grads.param_grads())?;
        self.update_running_stats(&fwd);
        Ok(value)
    }

    /// Eval-mode loss and predictions on a labelled batch.
    pub fn eval_batch(&self, input: Tensor<T>, labels: &[u32]) -> Result<(f64, Vec<u32>)> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input, false)?;
        let loss = self.loss(&mut tape, &fwd, labels)?;
        let pred = argmax_rows(tape.value(fwd.output).data(), self.n_classes());
        Ok((tape.value(loss).data()[0].as_f64(), pred))
    }

    /// Eval-mode logits.
    pub fn predict_logits(&self, input: Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, input, false)?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Eval-mode class predictions, one per sample or per pixel.
    pub fn predict(&self, input: Tensor<T>) -> Result<Vec<u32>> {
        let logits = self.predict_logits(input)?;
        Ok(argmax_rows(logits.data(), self.n_classes()))
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<T: Real>(data: &[T], k: usize) -> Vec<u32> {
    data.chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u32
        })
        .collect()
}
