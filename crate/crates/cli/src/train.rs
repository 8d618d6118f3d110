//! Spherical MNIST training.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use stm_core::formats::{read_idx_images, read_idx_labels};
use stm_core::models::{Model, ModelConfig};
use stm_core::nn::{save_checkpoint, Sgd, Tensor};
use stm_core::projection::project_digit;
use stm_core::{Level, Result, StmError};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    pub level: Level,
    /// Overrides the default smnist description when set.
    pub model_config: Option<PathBuf>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn new(data_dir: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            data_dir: data_dir.into(),
            level: Level::new(4).unwrap(),
            model_config: None,
            epochs: 10,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 42,
            limit_train: None,
            limit_test: None,
            out_dir: out_dir.into(),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = [("epochs", self.epochs), ("batch-size", self.batch_size)];
        for (name, v) in positive {
            if v == 0 {
                return Err(StmError::Config(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("lr", self.lr), ("momentum", self.momentum), ("weight-decay", self.weight_decay)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(StmError::Config(format!("{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.lr == 0.0 {
            return Err(StmError::Config("lr must be positive".into()));
        }
        if self.limit_train == Some(0) || self.limit_test == Some(0) {
            return Err(StmError::Config("limits must be positive".into()));
        }
        Ok(())
    }

    fn provenance(&self, model: &ModelConfig) -> String {
        let w: Vec<String> = model.widths.iter().map(|w| w.to_string()).collect();
        format!(
            "# arch={} widths={} level={} epochs={} batch_size={} lr={} momentum={} weight_decay={} seed={} limit_train={} limit_test={}",
            model.arch,
            w.join(","),
            self.level,
            self.epochs,
            self.batch_size,
            self.lr,
            self.momentum,
            self.weight_decay,
            self.seed,
            self.limit_train.map_or("all".into(), |n| n.to_string()),
            self.limit_test.map_or("all".into(), |n| n.to_string()),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub metrics: Vec<EpochMetrics>,
    pub param_count: usize,
    pub csv_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub seconds: f64,
}

impl TrainReport {
    pub fn last(&self, split: &str) -> Option<&EpochMetrics> {
        self.metrics.iter().rev().find(|m| m.split == split)
    }
}

/// Projected digits, `[n, n_pix]` row-major, with labels.
pub struct DigitSet {
    pub signals: Vec<f32>,
    pub labels: Vec<u32>,
    pub n_pix: usize,
}

impl DigitSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn batch(&self, idx: &[usize]) -> Result<(Tensor<f32>, Vec<u32>)> {
        let mut x = Vec::with_capacity(idx.len() * self.n_pix);
        for &i in idx {
            x.extend_from_slice(&self.signals[i * self.n_pix..(i + 1) * self.n_pix]);
        }
        Ok((Tensor::new(vec![idx.len(), self.n_pix, 1], x)?, idx.iter().map(|&i| self.labels[i]).collect()))
    }
}

/// Reads an IDX image/label pair and projects the first `limit` digits.
pub fn load_digits(images: &Path, labels: &Path, level: Level, limit: Option<usize>) -> Result<DigitSet> {
    let imgs = read_idx_images(images)?;
    let labs = read_idx_labels(labels)?;
    if imgs.len() != labs.len() {
        return Err(StmError::Contract(format!(
            "{} has {} images but {} has {} labels",
            images.display(),
            imgs.len(),
            labels.display(),
            labs.len()
        )));
    }
    if imgs.rows != 28 || imgs.cols != 28 {
        return Err(StmError::Contract(format!("expected 28x28 digits, got {}x{}", imgs.rows, imgs.cols)));
    }
    let n = limit.map_or(imgs.len(), |l| l.min(imgs.len()));
    let per: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| project_digit(imgs.image(i), level).map(|s| s.into_data()))
        .collect::<Result<_>>()?;
    Ok(DigitSet { signals: per.concat(), labels: labs[..n].iter().map(|&l| l as u32).collect(), n_pix: level.n_pixels() })
}

/// Mean eval-mode loss and accuracy.
pub fn evaluate(model: &Model<f32>, data: &DigitSet, batch: usize) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(StmError::EmptyEvaluation);
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch) {
        let (x, y) = data.batch(chunk)?;
        let (l, pred) = model.eval_batch(x, &y)?;
        loss += l * chunk.len() as f64;
        correct += pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    }
    Ok((loss / data.len() as f64, correct as f64 / data.len() as f64))
}

pub fn model_config_for(cfg: &TrainConfig) -> Result<ModelConfig> {
    match &cfg.model_config {
        Some(p) => {
            let mc = ModelConfig::parse(&fs::read_to_string(p)?)?;
            if mc.in_channels != 1 || mc.num_classes != 10 {
                return Err(StmError::Config("digit models need in_channels=1 and num_classes=10".into()));
            }
            Ok(ModelConfig { entry_level: cfg.level, ..mc })
        }
        None => Ok(ModelConfig { entry_level: cfg.level, ..ModelConfig::smnist_default() }),
    }
}

/// Projects the digits, trains, and writes `metrics.csv`, `model.cfg` and
/// `model.ckpt` into the output directory.
pub fn train_smnist(cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let mc = model_config_for(cfg)?;
    let d = &cfg.data_dir;
    let train = load_digits(
        &d.join("train-images-idx3-ubyte"),
        &d.join("train-labels-idx1-ubyte"),
        cfg.level,
        cfg.limit_train,
    )?;
    let test =
        load_digits(&d.join("t10k-images-idx3-ubyte"), &d.join("t10k-labels-idx1-ubyte"), cfg.level, cfg.limit_test)?;
    info!("projected {} train / {} test digits at level {}", train.len(), test.len(), cfg.level);

    let mut model: Model<f32> = Model::new(mc.build()?, cfg.seed)?;
    let param_count = model.spec().count_params()?;
    info!("{} with {param_count} parameters", mc.arch);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    fs::create_dir_all(&cfg.out_dir)?;
    let mut csv = cfg.provenance(&mc);
    csv.push_str("\nepoch,split,loss,accuracy\n");
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(chunk)?;
            sum += model.train_step(&mut opt, x, &y)? * chunk.len() as f64;
        }
        let train_loss = sum / train.len() as f64;
        let (_, train_acc) = evaluate(&model, &train, cfg.batch_size.max(64))?;
        let (test_loss, test_acc) = evaluate(&model, &test, cfg.batch_size.max(64))?;
        info!("epoch {epoch}: train loss {train_loss:.4} acc {train_acc:.4}, test loss {test_loss:.4} acc {test_acc:.4}");
        for m in [
            EpochMetrics { epoch, split: "train", loss: train_loss, accuracy: train_acc },
            EpochMetrics { epoch, split: "test", loss: test_loss, accuracy: test_acc },
        ] {
            writeln!(csv, "{},{},{:.6},{:.6}", m.epoch, m.split, m.loss, m.accuracy).unwrap();
            metrics.push(m);
        }
    }

    let csv_path = cfg.out_dir.join("metrics.csv");
    fs::write(&csv_path, csv)?;
    fs::write(cfg.out_dir.join("model.cfg"), mc.to_string())?;
    let checkpoint_path = cfg.out_dir.join("model.ckpt");
    save_checkpoint(&checkpoint_path, model.store())?;
    Ok(TrainReport { metrics, param_count, csv_path, checkpoint_path, seconds: start.elapsed().as_secs_f64() })
}
