//! Classification and segmentation evaluation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use stm_core::formats::{load_sphs, Sphs};
use stm_core::models::{segmentation_report, Model, ModelConfig, SegReport};
use stm_core::nn::{load_checkpoint, Tensor};
use stm_core::{Result, StmError};

use crate::train::{evaluate, load_digits};

pub fn load_model(config: &Path, checkpoint: &Path) -> Result<(ModelConfig, Model<f32>)> {
    let mc = ModelConfig::parse(&fs::read_to_string(config)?)?;
    let mut model: Model<f32> = Model::new(mc.build()?, 0)?;
    load_checkpoint(checkpoint, model.store_mut())?;
    Ok((mc, model))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClsReport {
    pub samples: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Accuracy of a trained digit classifier on an IDX image/label pair.
pub fn eval_cls(config: &Path, checkpoint: &Path, images: &Path, labels: &Path, limit: Option<usize>) -> Result<ClsReport> {
    let (mc, model) = load_model(config, checkpoint)?;
    let data = load_digits(images, labels, mc.entry_level, limit)?;
    let (loss, accuracy) = evaluate(&model, &data, 64)?;
    Ok(ClsReport { samples: data.len(), loss, accuracy })
}

fn sphs_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "sphs") {
            let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

fn load_labels(path: &Path) -> Result<Vec<u32>> {
    match load_sphs(path)? {
        Sphs::Labels { labels, .. } => Ok(labels.into_iter().map(u32::from).collect()),
        Sphs::F32(_) => Err(StmError::Contract(format!("{} holds a signal, not labels", path.display()))),
    }
}

/// Where segmentation predictions come from.
pub enum SegSource<'a> {
    /// Label files named like the ground truth.
    Predictions(&'a Path),
    /// Signals run through a trained model.
    Model { signals: &'a Path, config: &'a Path, checkpoint: &'a Path },
}

#[derive(Debug, Clone)]
pub struct SegEval {
    pub files: usize,
    pub report: SegReport,
}

/// Pools every pixel of every pair into one report; 255 labels are skipped. Each label
/// file must have a same-named partner and vice versa.
pub fn eval_seg(labels_dir: &Path, source: SegSource<'_>, num_classes: Option<usize>) -> Result<SegEval> {
    let truth_files = sphs_files(labels_dir)?;
    let other_dir = match &source {
        SegSource::Predictions(d) => *d,
        SegSource::Model { signals, .. } => *signals,
    };
    let other_files = sphs_files(other_dir)?;
    for (a, b, da) in [(&truth_files, &other_files, other_dir), (&other_files, &truth_files, labels_dir)] {
        if let Some(missing) = a.keys().find(|k| !b.contains_key(*k)) {
            return Err(StmError::Contract(format!("{missing}.sphs has no partner in {}", da.display())));
        }
    }
    let model = match &source {
        SegSource::Model { config, checkpoint, .. } => Some(load_model(config, checkpoint)?),
        SegSource::Predictions(_) => None,
    };
    let k = match (&model, num_classes) {
        (Some((mc, _)), _) => mc.num_classes,
        (None, Some(k)) => k,
        (None, None) => return Err(StmError::Config("--classes is required with --predictions".into())),
    };
    let (mut pred, mut truth) = (Vec::new(), Vec::new());
    for (name, tpath) in &truth_files {
        let t = load_labels(tpath)?;
        let p = match &model {
            None => load_labels(&other_files[name])?,
            Some((mc, m)) => {
                let Sphs::F32(sig) = load_sphs(&other_files[name])? else {
                    return Err(StmError::Contract(format!("{name}.sphs in the signal directory holds labels")));
                };
                if sig.level() != mc.entry_level || sig.channels() != mc.in_channels {
                    return Err(StmError::Contract(format!(
                        "{name}.sphs is level {} with {} channels, the model takes level {} with {}",
                        sig.level(),
                        sig.channels(),
                        mc.entry_level,
                        mc.in_channels
                    )));
                }
                let shape = vec![1, sig.n_pix(), sig.channels()];
                m.predict(Tensor::new(shape, sig.into_data())?)?
            }
        };
        if p.len() != t.len() {
            return Err(StmError::Contract(format!("{name}: {} predictions for {} labels", p.len(), t.len())));
        }
        pred.extend(p);
        truth.extend(t);
    }
    Ok(SegEval { files: truth_files.len(), report: segmentation_report(&pred, &truth, k)? })
}

pub fn seg_csv(r: &SegReport) -> String {
    let mut s = String::from("class,iou\n");
    for (c, iou) in r.per_class.iter().enumerate() {
        match iou {
            Some(v) => writeln!(s, "{c},{v:.6}").unwrap(),
            None => writeln!(s, "{c},").unwrap(),
        }
    }
    writeln!(s, "miou,{:.6}\npixel_accuracy,{:.6}", r.miou, r.pixel_accuracy).unwrap();
    s
}

pub fn seg_table(r: &SegReport) -> String {
    let mut s = String::from("class  IoU\n");
    for (c, iou) in r.per_class.iter().enumerate() {
        match iou {
            Some(v) => writeln!(s, "{c:>5}  {v:.4}").unwrap(),
            None => writeln!(s, "{c:>5}  (absent)").unwrap(),
        }
    }
    write!(s, "mIoU {:.4}  pixel accuracy {:.4}  ({} pixels)", r.miou, r.pixel_accuracy, r.pixels).unwrap();
    s
}
