use crate::error::{Result, StmError};

use super::model::IGNORE_LABEL;

/// Fraction of equal entries.
pub fn accuracy(pred: &[u32], truth: &[u32]) -> Result<f64> {
    check_len(pred, truth)?;
    if truth.is_empty() {
        return Err(StmError::EmptyEvaluation);
    }
    let hit = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hit as f64 / truth.len() as f64)
}

fn check_len(pred: &[u32], truth: &[u32]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(StmError::contract(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    /// IoU per class; `None` for classes absent from the truth.
    pub per_class: Vec<Option<f64>>,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub pixels: usize,
}

/// Pixel accuracy and IoU over pixels whose truth is not [`IGNORE_LABEL`].
/// mIoU averages over the classes present in the truth.
pub fn segmentation_report(pred: &[u32], truth: &[u32], num_classes: usize) -> Result<SegReport> {
    check_len(pred, truth)?;
    let mut inter = vec![0usize; num_classes];
    let mut in_truth = vec![0usize; num_classes];
    let mut in_pred = vec![0usize; num_classes];
    let mut total = 0usize;
    let mut correct = 0usize;
    for (&p, &t) in pred.iter().zip(truth) {
        if t == IGNORE_LABEL {
            continue;
        }
        let (pi, ti) = (p as usize, t as usize);
        if ti >= num_classes {
            return Err(StmError::Domain(format!("label {t} outside {num_classes} classes")));
        }
        total += 1;
        in_truth[ti] += 1;
        if pi < num_classes {
            in_pred[pi] += 1;
        }
        if p == t {
            correct += 1;
            inter[ti] += 1;
        }
    }
    if total == 0 {
        return Err(StmError::EmptyEvaluation);
    }
    let per_class: Vec<Option<f64>> = (0..num_classes)
        .map(|c| {
            (in_truth[c] > 0).then(|| inter[c] as f64 / (in_truth[c] + in_pred[c] - inter[c]) as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(SegReport {
        miou: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        pixel_accuracy: correct as f64 / total as f64,
        pixels: total,
    })
}

pub fn pixel_accuracy(pred: &[u32], truth: &[u32], num_classes: usize) -> Result<f64> {
    Ok(segmentation_report(pred, truth, num_classes)?.pixel_accuracy)
}

pub fn miou(pred: &[u32], truth: &[u32], num_classes: usize) -> Result<f64> {
    Ok(segmentation_report(pred, truth, num_classes)?.miou)
}
