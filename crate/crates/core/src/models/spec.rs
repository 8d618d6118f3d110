use std::fmt;

use crate::error::{Result, StmError};
use crate::healpix::Level;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input { channels: usize },
    /// 3x3 transformer-grid convolution.
    SphConv { cout: usize },
    Conv1x1 { cout: usize },
    /// 1x4 max pool, one level down.
    Pool,
    /// 1x4 transposed convolution, one level up.
    UnpoolConv { cout: usize },
    BatchNorm,
    Relu,
    /// Pixel-major flatten of a spherical map.
    Flatten,
    GlobalAvg,
    Linear { out: usize },
    /// Channel concatenation of all inputs.
    Concat,
    /// Elementwise sum of all inputs.
    Sum,
    /// Marks the classification head; the forward pass returns its input
    /// logits and the loss applies the softmax.
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<usize>,
}

/// Activation shape per sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sphere { level: Level, channels: usize },
    Flat(usize),
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Sphere { level, channels } => write!(f, "L{level}x{channels}"),
            Shape::Flat(n) => write!(f, "{n}"),
        }
    }
}

/// A layer graph in topological order; layer 0 is the input and the last
/// layer is the output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: String,
    pub entry_level: Level,
    pub layers: Vec<Layer>,
}

impl ModelSpec {
    pub fn in_channels(&self) -> usize {
        match self.layers[0].kind {
            LayerKind::Input { channels } => channels,
            _ => unreachable!("layer 0 is always the input"),
        }
    }

    /// Output shape of every layer, or the first incompatibility.
    pub fn infer_shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes: Vec<Shape> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| StmError::Config(format!("layer {} ({}): {msg}", i, layer.name));
            for &j in &layer.inputs {
                if j >= i {
                    return Err(err(format!("input {j} is not an earlier layer")));
                }
            }
            let ins: Vec<Shape> = layer.inputs.iter().map(|&j| shapes[j]).collect();
            let one = || -> Result<Shape> {
                match ins.as_slice() {
                    [s] => Ok(*s),
                    _ => Err(err(format!("expects one input, got {}", ins.len()))),
                }
            };
            let sphere = |s: Shape| -> Result<(Level, usize)> {
                match s {
                    Shape::Sphere { level, channels } => Ok((level, channels)),
                    Shape::Flat(_) => Err(err("expects a spherical input".into())),
                }
            };
            let out = match layer.kind {
                LayerKind::Input { channels } => {
                    if i != 0 || !layer.inputs.is_empty() || channels == 0 {
                        return Err(err("only layer 0 may be an input, with channels > 0".into()));
                    }
                    Shape::Sphere { level: self.entry_level, channels }
                }
                LayerKind::SphConv { cout } | LayerKind::Conv1x1 { cout } => {
                    let (level, _) = sphere(one()?)?;
                    if cout == 0 {
                        return Err(err("zero output channels".into()));
                    }
                    Shape::Sphere { level, channels: cout }
                }
                LayerKind::Pool => {
                    let (level, channels) = sphere(one()?)?;
                    let level = level.coarser().ok_or_else(|| err("cannot pool below level 0".into()))?;
                    Shape::Sphere { level, channels }
                }
                LayerKind::UnpoolConv { cout } => {
                    let (level, _) = sphere(one()?)?;
                    if cout == 0 || level >= self.entry_level {
                        return Err(err("unpool must stay at or below the entry level".into()));
                    }
                    Shape::Sphere { level: level.finer().expect("below the entry level"), channels: cout }
                }
                LayerKind::BatchNorm | LayerKind::Relu | LayerKind::Softmax => one()?,
                LayerKind::Flatten => {
                    let (level, channels) = sphere(one()?)?;
                    Shape::Flat(crate::healpix::n_pixels(level) * channels)
                }
                LayerKind::GlobalAvg => Shape::Flat(sphere(one()?)?.1),
                LayerKind::Linear { out } => match one()? {
                    Shape::Flat(_) if out > 0 => Shape::Flat(out),
                    _ => return Err(err("linear needs a flat input and out > 0".into())),
                },
                LayerKind::Concat => {
                    let first = *ins.first().ok_or_else(|| err("concat of nothing".into()))?;
                    match first {
                        Shape::Flat(_) => {
                            let mut n = 0;
                            for s in &ins {
                                match s {
                                    Shape::Flat(k) => n += k,
                                    _ => return Err(err("cannot concat flat with spherical".into())),
                                }
                            }
                            Shape::Flat(n)
                        }
                        Shape::Sphere { level, .. } => {
                            let mut c = 0;
                            for &s in &ins {
                                let (l, k) = sphere(s)?;
                                if l != level {
                                    return Err(err(format!("concat of levels {level} and {l}")));
                                }
                                c += k;
                            }
                            Shape::Sphere { level, channels: c }
                        }
                    }
                }
                LayerKind::Sum => {
                    let first = *ins.first().ok_or_else(|| err("sum of nothing".into()))?;
                    if ins.iter().any(|&s| s != first) {
                        return Err(err(format!("sum of mismatched shapes {ins:?}")));
                    }
                    first
                }
            };
            shapes.push(out);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Shape> {
        Ok(*self.infer_shapes()?.last().expect("non-empty"))
    }

    /// Trainable scalars per layer.
    pub fn layer_params(&self) -> Result<Vec<usize>> {
        let shapes = self.infer_shapes()?;
        let cin = |l: &Layer| match shapes[l.inputs[0]] {
            Shape::Sphere { channels, .. } => channels,
            Shape::Flat(n) => n,
        };
        Ok(self
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::SphConv { cout } => 9 * cin(l) * cout + cout,
                LayerKind::Conv1x1 { cout } => cin(l) * cout + cout,
                LayerKind::UnpoolConv { cout } => 4 * cin(l) * cout + cout,
                LayerKind::Linear { out } => cin(l) * out + out,
                LayerKind::BatchNorm => 2 * cin(l),
                _ => 0,
            })
            .collect())
    }

    pub fn count_params(&self) -> Result<usize> {
        Ok(self.layer_params()?.iter().sum())
    }

    /// Number of pools on the longest path, for level checks.
    pub fn pool_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind == LayerKind::Pool).count()
    }
}

/// Incremental construction with automatic layer names.
pub(crate) struct Builder {
    spec: ModelSpec,
    counters: std::collections::HashMap<&'static str, usize>,
}

impl Builder {
    pub(crate) fn new(arch: &str, entry_level: Level, in_channels: usize) -> Self {
        let input = Layer { name: "input".into(), kind: LayerKind::Input { channels: in_channels }, inputs: vec![] };
        Builder {
            spec: ModelSpec { arch: arch.into(), entry_level, layers: vec![input] },
            counters: Default::default(),
        }
    }

    pub(crate) fn add(&mut self, kind: LayerKind, inputs: &[usize]) -> usize {
        let stem = match kind {
            LayerKind::Input { .. } => "input",
            LayerKind::SphConv { .. } => "conv",
            LayerKind::Conv1x1 { .. } => "conv1x1_",
            LayerKind::Pool => "pool",
            LayerKind::UnpoolConv { .. } => "up",
            LayerKind::BatchNorm => "bn",
            LayerKind::Relu => "relu",
            LayerKind::Flatten => "flatten",
            LayerKind::GlobalAvg => "gap",
            LayerKind::Linear { .. } => "fc",
            LayerKind::Concat => "concat",
            LayerKind::Sum => "sum",
            LayerKind::Softmax => "softmax",
        };
        let k = self.counters.entry(stem).or_insert(0);
        *k += 1;
        let name = format!("{stem}{k}");
        self.spec.layers.push(Layer { name, kind, inputs: inputs.to_vec() });
        self.spec.layers.len() - 1
    }

    /// Appends `kind` fed by layer `from`.
    pub(crate) fn then(&mut self, from: usize, kind: LayerKind) -> usize {
        self.add(kind, &[from])
    }

    pub(crate) fn finish(self) -> Result<ModelSpec> {
        self.spec.infer_shapes()?;
        Ok(self.spec)
    }
}
