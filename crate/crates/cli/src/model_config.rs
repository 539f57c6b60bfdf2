//! Line-oriented model description files.
//!
//! A model file names the input shape, then one layer per line:
//!
//! ```text
//! # two hidden layers of 128 units each
//! input 784
//! fc 128
//! fc 128
//! classes 10
//! ```
//!
//! Directives:
//!
//! * `input <len>` or `input <c> <h> <w>`: flat or spatial input shape;
//!   must come first, exactly once.
//! * `fc <out>`: fully connected layer; flattens a spatial shape.
//! * `conv <out_c> <k> <stride> <pad>`: convolution over a spatial shape.
//! * `maxpool <k>`: non-overlapping max pooling with stride `k`.
//! * `residual <from>`: adds activation index `from` (0 is the input) to
//!   the preceding linear layer's pre-activation.
//! * `alpha <int>`: overrides the scaling exponent of the preceding layer.
//! * `classes <n>`: the output layer, a fully connected map to `n` scores;
//!   must be the last directive.
//!
//! `#` starts a comment; blank lines are skipped; unknown directives are
//! rejected. Layers without an explicit `alpha` get the fan-in default.

use crate::error::CliError;
use quotient_core::fxp::PrecisionConfig;
use quotient_core::nn::{default_alpha, ConvGeom, LayerKind, LayerSpec, Model};

/// Parsed model plan: the input length, the layer chain, and the number of
/// output classes.
#[derive(Debug, Clone)]
pub struct ModelPlan {
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
    pub classes: usize,
}

impl ModelPlan {
    /// Instantiates a zero-weight model under the given precision
    /// configuration; per-layer alphas ride the layer specs.
    pub fn build(&self, config: PrecisionConfig) -> Result<Model, CliError> {
        Ok(Model::new(self.input_len, self.layers.clone(), config)?)
    }
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Flat(usize),
    Spatial { c: usize, h: usize, w: usize },
}

impl Shape {
    fn flat_len(self) -> usize {
        match self {
            Shape::Flat(n) => n,
            Shape::Spatial { c, h, w } => c * h * w,
        }
    }
}

fn fail(line_no: usize, msg: impl std::fmt::Display) -> CliError {
    CliError::config(format!("model config line {line_no}: {msg}"))
}

fn parse_args(line_no: usize, directive: &str, args: &[&str], want: usize) -> Result<Vec<usize>, CliError> {
    if args.len() != want {
        return Err(fail(
            line_no,
            format!("{directive} takes {want} argument(s), got {}", args.len()),
        ));
    }
    args.iter()
        .map(|a| {
            a.parse::<usize>()
                .map_err(|_| fail(line_no, format!("{directive}: {a:?} is not a non-negative integer")))
        })
        .collect()
}

/// Parses a model description from text.
pub fn parse_model_config(text: &str) -> Result<ModelPlan, CliError> {
    let mut shape: Option<Shape> = None;
    let mut input_len = 0usize;
    let mut layers: Vec<LayerSpec> = Vec::new();
    let mut classes: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let directive = parts.next().expect("non-empty line");
        let args: Vec<&str> = parts.collect();

        if classes.is_some() {
            return Err(fail(line_no, "classes must be the last directive"));
        }
        if directive != "input" && shape.is_none() {
            return Err(fail(line_no, "the first directive must be input"));
        }

        match directive {
            "input" => {
                if shape.is_some() {
                    return Err(fail(line_no, "duplicate input directive"));
                }
                shape = Some(match args.len() {
                    1 => {
                        let v = parse_args(line_no, "input", &args, 1)?;
                        Shape::Flat(v[0])
                    }
                    3 => {
                        let v = parse_args(line_no, "input", &args, 3)?;
                        Shape::Spatial { c: v[0], h: v[1], w: v[2] }
                    }
                    n => {
                        return Err(fail(
                            line_no,
                            format!("input takes 1 (flat) or 3 (c h w) arguments, got {n}"),
                        ))
                    }
                });
                input_len = shape.expect("just set").flat_len();
                if input_len == 0 {
                    return Err(fail(line_no, "input shape must be non-empty"));
                }
            }
            "fc" => {
                let v = parse_args(line_no, "fc", &args, 1)?;
                let cur = shape.expect("input checked");
                let kind = LayerKind::FullyConnected { input: cur.flat_len(), output: v[0] };
                if v[0] == 0 {
                    return Err(fail(line_no, "fc output must be positive"));
                }
                let alpha = default_alpha(kind.fan_in());
                layers.push(LayerSpec { kind, alpha });
                shape = Some(Shape::Flat(v[0]));
            }
            "conv" => {
                let v = parse_args(line_no, "conv", &args, 4)?;
                let (c, h, w) = match shape.expect("input checked") {
                    Shape::Spatial { c, h, w } => (c, h, w),
                    Shape::Flat(_) => {
                        return Err(fail(line_no, "conv needs a spatial shape; use input <c> <h> <w>"))
                    }
                };
                let (out_c, k, stride, pad) = (v[0], v[1], v[2], v[3]);
                if out_c == 0 || k == 0 || stride == 0 {
                    return Err(fail(line_no, "conv channels, kernel, and stride must be positive"));
                }
                let geom = ConvGeom { in_h: h, in_w: w, in_c: c, k, stride, pad };
                if h + 2 * pad < k || w + 2 * pad < k {
                    return Err(fail(line_no, "conv kernel exceeds the padded input"));
                }
                let (oh, ow) = (geom.out_h(), geom.out_w());
                let kind = LayerKind::Conv { geom, out_c };
                let alpha = default_alpha(kind.fan_in());
                layers.push(LayerSpec { kind, alpha });
                shape = Some(Shape::Spatial { c: out_c, h: oh, w: ow });
            }
            "maxpool" => {
                let v = parse_args(line_no, "maxpool", &args, 1)?;
                let k = v[0];
                let (c, h, w) = match shape.expect("input checked") {
                    Shape::Spatial { c, h, w } => (c, h, w),
                    Shape::Flat(_) => {
                        return Err(fail(line_no, "maxpool needs a spatial shape"))
                    }
                };
                if k == 0 || k > h || k > w {
                    return Err(fail(line_no, "maxpool window must fit the input"));
                }
                layers.push(LayerSpec {
                    kind: LayerKind::MaxPool { in_h: h, in_w: w, c, k, stride: k },
                    alpha: 0,
                });
                let oh = (h - k) / k + 1;
                let ow = (w - k) / k + 1;
                shape = Some(Shape::Spatial { c, h: oh, w: ow });
            }
            "residual" => {
                let v = parse_args(line_no, "residual", &args, 1)?;
                let alpha = layers
                    .last()
                    .map(|l| l.alpha)
                    .ok_or_else(|| fail(line_no, "residual must follow a linear layer"))?;
                layers.push(LayerSpec { kind: LayerKind::ResidualAdd { from: v[0] }, alpha });
            }
            "alpha" => {
                let v = parse_args(line_no, "alpha", &args, 1)?;
                if v[0] > 31 {
                    return Err(fail(line_no, "alpha exceeds the 32-bit shift range"));
                }
                match layers.last_mut() {
                    Some(layer) => layer.alpha = v[0] as u8,
                    None => return Err(fail(line_no, "alpha must follow a layer")),
                }
            }
            "classes" => {
                let v = parse_args(line_no, "classes", &args, 1)?;
                if v[0] == 0 {
                    return Err(fail(line_no, "classes must be positive"));
                }
                let cur = shape.expect("input checked");
                let kind = LayerKind::FullyConnected { input: cur.flat_len(), output: v[0] };
                let alpha = default_alpha(kind.fan_in());
                layers.push(LayerSpec { kind, alpha });
                shape = Some(Shape::Flat(v[0]));
                classes = Some(v[0]);
            }
            other => {
                return Err(fail(line_no, format!("unknown directive {other:?}")));
            }
        }
    }

    if shape.is_none() {
        return Err(CliError::config("model config has no input directive"));
    }
    let classes = classes.ok_or_else(|| {
        CliError::config("model config has no classes directive for the output layer")
    })?;
    Ok(ModelPlan { input_len, layers, classes })
}

/// Reads and parses a model description file.
pub fn load_model_config(path: &str) -> Result<ModelPlan, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_model_config(&text)
}
