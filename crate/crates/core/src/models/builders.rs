use super::spec::{Builder, LayerKind as K, ModelSpec};
use crate::error::{Result, StmError};
use crate::healpix::Level;

pub const SMNIST_WIDTHS: [usize; 4] = [16, 24, 32, 48];
pub const VGG11_WIDTHS: [usize; 8] = [64, 128, 256, 256, 512, 512, 512, 512];
/// Conv stages of VGG-11, `true` where a pool follows.
const VGG11_POOL_AFTER: [bool; 8] = [true, true, false, true, false, true, false, true];
pub const VGG11_FC: usize = 1024;
pub const UNET_WIDTHS: [usize; 4] = [64, 128, 256, 512];

fn check_classes(num_classes: usize) -> Result<()> {
    if num_classes < 2 {
        return Err(StmError::Config(format!("need at least 2 classes, got {num_classes}")));
    }
    Ok(())
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.is_empty() || widths.contains(&0) {
        return Err(StmError::Config(format!("bad widths {widths:?}")));
    }
    Ok(())
}

/// `len(widths)` blocks of conv, pool, batch norm, relu, then one linear
/// layer over the flattened map.
pub fn build_smnist(entry_level: Level, in_channels: usize, widths: &[usize], num_classes: usize) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    check_widths(widths)?;
    if (entry_level.get() as usize) < widths.len() {
        return Err(StmError::Config(format!(
            "entry level {} cannot take {} pools",
            entry_level,
            widths.len()
        )));
    }
    let mut b = Builder::new("smnist", entry_level, in_channels);
    let mut x = 0;
    for &w in widths {
        x = b.then(x, K::SphConv { cout: w });
        x = b.then(x, K::Pool);
        x = b.then(x, K::BatchNorm);
        x = b.then(x, K::Relu);
    }
    x = b.then(x, K::Flatten);
    x = b.then(x, K::Linear { out: num_classes });
    b.then(x, K::Softmax);
    b.finish()
}

/// VGG-11 with batch norm on the transformer grid. With `anti_rotation`, a
/// stream of 1x1 convolutions runs beside the main stream: before every pool
/// its activation is added to the main activation, and both streams are
/// flattened and concatenated before the first fully connected layer.
pub fn build_vgg11_spherical(
    entry_level: Level,
    in_channels: usize,
    anti_rotation: bool,
    num_classes: usize,
) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    let pools = VGG11_POOL_AFTER.iter().filter(|&&p| p).count();
    if (entry_level.get() as usize) < pools {
        return Err(StmError::Config(format!("entry level {entry_level} cannot take {pools} pools")));
    }
    let arch = if anti_rotation { "vgg11_ar" } else { "vgg11" };
    let mut b = Builder::new(arch, entry_level, in_channels);
    let mut x = 0;
    let mut r = 0;
    for (&w, &pool) in VGG11_WIDTHS.iter().zip(&VGG11_POOL_AFTER) {
        x = b.then(x, K::SphConv { cout: w });
        x = b.then(x, K::BatchNorm);
        x = b.then(x, K::Relu);
        if pool {
            if anti_rotation {
                r = b.then(r, K::Conv1x1 { cout: w });
                r = b.then(r, K::BatchNorm);
                r = b.then(r, K::Relu);
                x = b.add(K::Sum, &[x, r]);
                r = b.then(r, K::Pool);
            }
            x = b.then(x, K::Pool);
        }
    }
    x = b.then(x, K::Flatten);
    if anti_rotation {
        let rf = b.then(r, K::Flatten);
        x = b.add(K::Concat, &[x, rf]);
    }
    x = b.then(x, K::Linear { out: VGG11_FC });
    x = b.then(x, K::Relu);
    x = b.then(x, K::Linear { out: VGG11_FC });
    x = b.then(x, K::Relu);
    x = b.then(x, K::Linear { out: num_classes });
    b.then(x, K::Softmax);
    b.finish()
}

/// Encoder of two conv-bn-relu per stage with pools between stages; decoder
/// of transposed 1x4 convolutions, skip concatenation at the matching level
/// and two conv-bn-relu; a final 3x3 spherical conv gives per-pixel logits.
pub fn build_unet_spherical(
    entry_level: Level,
    in_channels: usize,
    widths: &[usize],
    num_classes: usize,
) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    check_widths(widths)?;
    let depth = widths.len() - 1;
    if (entry_level.get() as usize) < depth {
        return Err(StmError::Config(format!("entry level {entry_level} cannot take {depth} pools")));
    }
    let mut b = Builder::new("unet", entry_level, in_channels);
    let double = |b: &mut Builder, mut x: usize, w: usize| {
        for _ in 0..2 {
            x = b.then(x, K::SphConv { cout: w });
            x = b.then(x, K::BatchNorm);
            x = b.then(x, K::Relu);
        }
        x
    };
    let mut x = 0;
    let mut skips = Vec::with_capacity(depth);
    for (i, &w) in widths.iter().enumerate() {
        x = double(&mut b, x, w);
        if i < depth {
            skips.push(x);
            x = b.then(x, K::Pool);
        }
    }
    for i in (0..depth).rev() {
        x = b.then(x, K::UnpoolConv { cout: widths[i] });
        x = b.add(K::Concat, &[skips[i], x]);
        x = double(&mut b, x, widths[i]);
    }
    x = b.then(x, K::SphConv { cout: num_classes });
    b.then(x, K::Softmax);
    b.finish()
}

/// Per-pixel 1x1 convolutions with relu, global average, linear head. Its
/// logits do not depend on the pixel order of the input.
pub fn build_pointwise_classifier(
    entry_level: Level,
    in_channels: usize,
    widths: &[usize],
    num_classes: usize,
) -> Result<ModelSpec> {
    check_classes(num_classes)?;
    check_widths(widths)?;
    let mut b = Builder::new("pointwise", entry_level, in_channels);
    let mut x = 0;
    for &w in widths {
        x = b.then(x, K::Conv1x1 { cout: w });
        x = b.then(x, K::Relu);
    }
    x = b.then(x, K::GlobalAvg);
    x = b.then(x, K::Linear { out: num_classes });
    b.then(x, K::Softmax);
    b.finish()
}
