//! Layer graphs for the classification and segmentation networks, their
//! runtime, and evaluation metrics.

pub mod builders;
pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod spec;

pub use builders::{
    build_pointwise_classifier, build_smnist, build_unet_spherical, build_vgg11_spherical, SMNIST_WIDTHS,
    UNET_WIDTHS, VGG11_WIDTHS,
};
pub use config::{Arch, ModelConfig};
pub use metrics::{accuracy, miou, pixel_accuracy, segmentation_report, SegReport};
pub use model::{argmax_rows, Forward, Model, IGNORE_LABEL};
pub use spec::{Layer, LayerKind, ModelSpec, Shape};
