//! Line-oriented model description format.
//!
//! One directive per line, `#` starts a comment. Example:
//!
//! ```text
//! input 32 32 3
//! mlconv 3 96 rank=2 scheme=1
//! bn
//! lrelu 0.2
//! maxpool
//! conv 1 10
//! lrelu 0.2
//! gap
//! softmax
//! classes 10
//! ```
//!
//! Parsing and printing are inverse up to canonical formatting, and a parsed
//! config is always structurally validated (channel chaining, pad/pool
//! divisibility, head ordering) before use.

use std::fmt::Write as _;

use super::DataError;
use crate::layers::{
    BatchNormState, ComputeScheme, ConvKernelBank, LRConvBank, Layer, MLconvBank, Network,
};
use crate::scalar::Scalar;
use crate::tensor::{KruskalFactors, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Conv { d: usize, n: usize },
    MLconv { d: usize, n: usize, rank: usize, scheme: ComputeScheme },
    LRConv { d: usize, n: usize, k: usize },
    BatchNorm,
    LRelu { alpha: f64 },
    MaxPool,
    Dropout { p: f64 },
    GlobalAvgPool,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// (height, width, channels).
    pub input: [usize; 3],
    pub classes: usize,
    pub layers: Vec<LayerSpec>,
}

/// A layer spec annotated with its placement in the network.
#[derive(Debug, Clone)]
pub struct PlacedLayer {
    pub index: usize,
    pub spec: LayerSpec,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial size at this layer's input.
    pub height: usize,
    pub width: usize,
}

pub fn parse_model_config(text: &str) -> Result<ModelConfig, DataError> {
    let mut input: Option<[usize; 3]> = None;
    let mut classes: Option<usize> = None;
    let mut layers = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |reason: String| DataError::ConfigParse {
            line: lineno + 1,
            reason,
        };
        let mut parts = line.split_whitespace();
        let head = parts.next().unwrap();
        let rest: Vec<&str> = parts.collect();
        match head {
            "input" => {
                let v = parse_usizes(&rest, 3).map_err(err)?;
                input = Some([v[0], v[1], v[2]]);
            }
            "classes" => {
                let v = parse_usizes(&rest, 1).map_err(err)?;
                classes = Some(v[0]);
            }
            "conv" => {
                let v = parse_usizes(&rest, 2).map_err(err)?;
                layers.push(LayerSpec::Conv { d: v[0], n: v[1] });
            }
            "mlconv" => {
                if rest.len() < 3 {
                    return Err(err("mlconv needs: d n rank=R [scheme=S]".into()));
                }
                let d = rest[0].parse().map_err(|_| err("bad kernel size".into()))?;
                let n = rest[1].parse().map_err(|_| err("bad filter count".into()))?;
                let mut rank = None;
                let mut scheme = ComputeScheme::Separable;
                for opt in &rest[2..] {
                    match opt.split_once('=') {
                        Some(("rank", v)) => {
                            rank = Some(v.parse().map_err(|_| err("bad rank".into()))?)
                        }
                        Some(("scheme", v)) => {
                            let code: u8 = v.parse().map_err(|_| err("bad scheme".into()))?;
                            scheme = ComputeScheme::from_code(code)
                                .ok_or_else(|| err(format!("scheme must be 1 or 2, got {code}")))?;
                        }
                        _ => return Err(err(format!("unknown mlconv option `{opt}`"))),
                    }
                }
                let rank = rank.ok_or_else(|| err("mlconv requires rank=R".into()))?;
                if rank == 0 {
                    return Err(err("rank must be at least 1".into()));
                }
                layers.push(LayerSpec::MLconv { d, n, rank, scheme });
            }
            "lrconv" => {
                if rest.len() != 3 {
                    return Err(err("lrconv needs: d n k=K".into()));
                }
                let d = rest[0].parse().map_err(|_| err("bad kernel size".into()))?;
                let n = rest[1].parse().map_err(|_| err("bad filter count".into()))?;
                let k = match rest[2].split_once('=') {
                    Some(("k", v)) => v.parse().map_err(|_| err("bad k".into()))?,
                    _ => return Err(err("lrconv needs k=K".into())),
                };
                if k == 0 {
                    return Err(err("k must be at least 1".into()));
                }
                layers.push(LayerSpec::LRConv { d, n, k });
            }
            "bn" => layers.push(LayerSpec::BatchNorm),
            "lrelu" => {
                let alpha = parse_f64s(&rest, 1).map_err(err)?[0];
                layers.push(LayerSpec::LRelu { alpha });
            }
            "maxpool" => layers.push(LayerSpec::MaxPool),
            "dropout" => {
                let p = parse_f64s(&rest, 1).map_err(err)?[0];
                if !(0.0..1.0).contains(&p) {
                    return Err(err(format!("dropout rate must lie in [0,1), got {p}")));
                }
                layers.push(LayerSpec::Dropout { p });
            }
            "gap" => layers.push(LayerSpec::GlobalAvgPool),
            "softmax" => layers.push(LayerSpec::Softmax),
            other => return Err(err(format!("unknown directive `{other}`"))),
        }
    }

    let input = input.ok_or(DataError::ConfigParse {
        line: 0,
        reason: "missing `input H W C` directive".into(),
    })?;
    let classes = classes.ok_or(DataError::ConfigParse {
        line: 0,
        reason: "missing `classes K` directive".into(),
    })?;
    let cfg = ModelConfig {
        input,
        classes,
        layers,
    };
    cfg.walk()?; // structural validation
    Ok(cfg)
}

fn parse_usizes(parts: &[&str], want: usize) -> Result<Vec<usize>, String> {
    if parts.len() != want {
        return Err(format!("expected {want} integer argument(s)"));
    }
    parts
        .iter()
        .map(|p| p.parse::<usize>().map_err(|_| format!("bad integer `{p}`")))
        .collect()
}

fn parse_f64s(parts: &[&str], want: usize) -> Result<Vec<f64>, String> {
    if parts.len() != want {
        return Err(format!("expected {want} numeric argument(s)"));
    }
    parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| format!("bad number `{p}`")))
        .collect()
}

impl ModelConfig {
    /// Canonical text form; `parse(print(cfg)) == cfg`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "input {} {} {}", self.input[0], self.input[1], self.input[2]).unwrap();
        for spec in &self.layers {
            match spec {
                LayerSpec::Conv { d, n } => writeln!(out, "conv {d} {n}").unwrap(),
                LayerSpec::MLconv { d, n, rank, scheme } => {
                    writeln!(out, "mlconv {d} {n} rank={rank} scheme={}", scheme.code()).unwrap()
                }
                LayerSpec::LRConv { d, n, k } => writeln!(out, "lrconv {d} {n} k={k}").unwrap(),
                LayerSpec::BatchNorm => writeln!(out, "bn").unwrap(),
                LayerSpec::LRelu { alpha } => writeln!(out, "lrelu {alpha}").unwrap(),
                LayerSpec::MaxPool => writeln!(out, "maxpool").unwrap(),
                LayerSpec::Dropout { p } => writeln!(out, "dropout {p}").unwrap(),
                LayerSpec::GlobalAvgPool => writeln!(out, "gap").unwrap(),
                LayerSpec::Softmax => writeln!(out, "softmax").unwrap(),
            }
        }
        writeln!(out, "classes {}", self.classes).unwrap();
        out
    }

    /// Content hash of the canonical text, used to tie checkpoints to their
    /// architecture.
    pub fn content_hash(&self) -> u64 {
        fnv1a64(self.to_text().as_bytes())
    }

    /// Validate the layer chain and annotate each layer with its placement.
    pub fn walk(&self) -> Result<Vec<PlacedLayer>, DataError> {
        let bad = |layer: usize, reason: String| DataError::ConfigInvalid { layer, reason };
        let (mut h, mut w, mut c) = (self.input[0], self.input[1], self.input[2]);
        if h == 0 || w == 0 || c == 0 {
            return Err(bad(0, "input dimensions must be positive".into()));
        }
        if self.classes == 0 {
            return Err(bad(0, "class count must be positive".into()));
        }
        let mut placed = Vec::with_capacity(self.layers.len());
        let mut seen_gap = false;
        let mut seen_softmax = false;
        for (i, spec) in self.layers.iter().enumerate() {
            if seen_softmax {
                return Err(bad(i, "no layers allowed after softmax".into()));
            }
            if seen_gap && !matches!(spec, LayerSpec::Softmax) {
                return Err(bad(i, "only softmax may follow global average pooling".into()));
            }
            let mut out_c = c;
            match spec {
                LayerSpec::Conv { d, n } => {
                    if *d % 2 == 0 || *d == 0 {
                        return Err(bad(i, format!("conv kernel size must be odd, got {d}")));
                    }
                    if *n == 0 {
                        return Err(bad(i, "filter count must be positive".into()));
                    }
                    out_c = *n;
                }
                LayerSpec::MLconv { d, n, rank, .. } => {
                    if *d == 0 || *n == 0 {
                        return Err(bad(i, "kernel size and filter count must be positive".into()));
                    }
                    if *rank == 0 {
                        return Err(bad(i, "rank must be at least 1".into()));
                    }
                    out_c = *n;
                }
                LayerSpec::LRConv { d, n, k } => {
                    if *d == 0 || *n == 0 || *k == 0 {
                        return Err(bad(i, "lrconv sizes must be positive".into()));
                    }
                    out_c = *n;
                }
                LayerSpec::MaxPool => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(bad(
                            i,
                            format!("maxpool needs even spatial dims, got {h}x{w}"),
                        ));
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    if c != self.classes {
                        return Err(bad(
                            i,
                            format!(
                                "global average pooling sees {c} channels but {} classes are declared",
                                self.classes
                            ),
                        ));
                    }
                    seen_gap = true;
                }
                LayerSpec::Softmax => {
                    if !seen_gap {
                        return Err(bad(i, "softmax requires global average pooling first".into()));
                    }
                    seen_softmax = true;
                }
                LayerSpec::BatchNorm | LayerSpec::LRelu { .. } | LayerSpec::Dropout { .. } => {}
            }
            placed.push(PlacedLayer {
                index: i,
                spec: spec.clone(),
                in_channels: c,
                out_channels: out_c,
                height: h,
                width: w,
            });
            if matches!(spec, LayerSpec::MaxPool) {
                h /= 2;
                w /= 2;
            }
            c = out_c;
        }
        if !seen_softmax {
            return Err(bad(self.layers.len(), "model must end with softmax".into()));
        }
        Ok(placed)
    }

    /// Instantiate a network with zero parameters, shaped by this config.
    /// The softmax entry is the loss head and adds no compute layer.
    pub fn build_network<T: Scalar>(&self) -> Result<Network<T>, DataError> {
        self.walk()?;
        let mut layers = Vec::new();
        let mut c = self.input[2];
        for spec in &self.layers {
            match spec {
                LayerSpec::Conv { d, n } => {
                    let bank = ConvKernelBank::new(
                        Tensor::zeros(&[*d, *d, c, *n]),
                        Tensor::zeros(&[*n]),
                    )
                    .map_err(|e| DataError::Checkpoint(e.to_string()))?;
                    layers.push(Layer::Conv(bank));
                    c = *n;
                }
                LayerSpec::MLconv { d, n, rank, scheme } => {
                    let filters = (0..*n)
                        .map(|_| {
                            KruskalFactors::new([
                                Tensor::zeros(&[*d, *rank]),
                                Tensor::zeros(&[*d, *rank]),
                                Tensor::zeros(&[c, *rank]),
                            ])
                            .expect("factor shapes")
                        })
                        .collect();
                    let bank = MLconvBank::new(filters, Tensor::zeros(&[*n]), *scheme)
                        .map_err(|e| DataError::Checkpoint(e.to_string()))?;
                    layers.push(Layer::MLconv(bank));
                    c = *n;
                }
                LayerSpec::LRConv { d, n, k } => {
                    let bank = LRConvBank::new(
                        Tensor::zeros(&[*d, 1, c, *k]),
                        Tensor::zeros(&[1, *d, *k, *n]),
                        Tensor::zeros(&[*n]),
                    )
                    .map_err(|e| DataError::Checkpoint(e.to_string()))?;
                    layers.push(Layer::LRConv(bank));
                    c = *n;
                }
                LayerSpec::BatchNorm => {
                    let bn = BatchNormState::new(c, 1e-5, 0.1)
                        .map_err(|e| DataError::Checkpoint(e.to_string()))?;
                    layers.push(Layer::BatchNorm(bn));
                }
                LayerSpec::LRelu { alpha } => layers.push(Layer::LRelu {
                    alpha: T::from_f64(*alpha),
                }),
                LayerSpec::MaxPool => layers.push(Layer::MaxPool),
                LayerSpec::Dropout { p } => layers.push(Layer::Dropout { p: *p }),
                LayerSpec::GlobalAvgPool => layers.push(Layer::GlobalAvgPool),
                LayerSpec::Softmax => {}
            }
        }
        Ok(Network::new(layers, self.input, self.classes))
    }

    /// Build and seed a ready-to-train network.
    pub fn build_seeded_network<T: Scalar>(&self, seed: u64) -> Result<Network<T>, DataError> {
        let mut net = self.build_network()?;
        net.init_params(seed);
        Ok(net)
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x1000_0000_01b3);
    }
    hash
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE_STYLE: &str = "\
# nine feature layers, two pools
input 32 32 3
conv 3 96
bn
lrelu 0.2
conv 3 96
bn
lrelu 0.2
conv 3 96
bn
lrelu 0.2
maxpool
conv 3 192
bn
lrelu 0.2
conv 3 192
bn
lrelu 0.2
conv 3 192
bn
lrelu 0.2
maxpool
conv 3 192
bn
lrelu 0.2
conv 1 192
bn
lrelu 0.2
conv 1 10
lrelu 0.2
gap
softmax
classes 10
";

    #[test]
    fn table_style_config_parses_with_expected_structure() {
        let cfg = parse_model_config(TABLE_STYLE).unwrap();
        let convs = cfg
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Conv { .. }))
            .count();
        let pools = cfg
            .layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::MaxPool))
            .count();
        assert_eq!(convs, 9);
        assert_eq!(pools, 2);
        assert!(matches!(cfg.layers[cfg.layers.len() - 2], LayerSpec::GlobalAvgPool));
        assert!(matches!(cfg.layers[cfg.layers.len() - 1], LayerSpec::Softmax));
    }

    #[test]
    fn parse_print_parse_is_a_fixpoint() {
        let cfg = parse_model_config(TABLE_STYLE).unwrap();
        let printed = cfg.to_text();
        let cfg2 = parse_model_config(&printed).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(printed, cfg2.to_text());
    }

    #[test]
    fn zero_rank_is_rejected() {
        let text = "input 8 8 3\nmlconv 3 4 rank=0\ngap\nsoftmax\nclasses 4\n";
        assert!(matches!(
            parse_model_config(text),
            Err(DataError::ConfigParse { .. })
        ));
    }

    #[test]
    fn odd_spatial_pooling_is_rejected_with_layer_index() {
        let text = "input 7 7 3\nconv 3 4\nmaxpool\nconv 1 2\ngap\nsoftmax\nclasses 2\n";
        match parse_model_config(text) {
            Err(DataError::ConfigInvalid { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("expected invalid-config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_directives_carry_line_numbers() {
        let text = "input 8 8 3\nwiggle 3\n";
        match parse_model_config(text) {
            Err(DataError::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn class_channel_mismatch_is_rejected() {
        let text = "input 8 8 3\nconv 1 4\ngap\nsoftmax\nclasses 10\n";
        assert!(matches!(
            parse_model_config(text),
            Err(DataError::ConfigInvalid { .. })
        ));
    }

    #[test]
    fn walk_tracks_resolution_and_channels() {
        let cfg = parse_model_config(TABLE_STYLE).unwrap();
        let placed = cfg.walk().unwrap();
        let last_conv = placed
            .iter()
            .filter(|p| matches!(p.spec, LayerSpec::Conv { .. }))
            .last()
            .unwrap();
        assert_eq!(last_conv.height, 8);
        assert_eq!(last_conv.in_channels, 192);
        assert_eq!(last_conv.out_channels, 10);
    }

    #[test]
    fn built_network_runs_and_matches_declared_shapes() {
        let cfg = parse_model_config(
            "input 8 8 3\nmlconv 3 4 rank=2 scheme=1\nbn\nlrelu 0.2\nmaxpool\nconv 1 2\ngap\nsoftmax\nclasses 2\n",
        )
        .unwrap();
        let net = cfg.build_seeded_network::<f32>(1).unwrap();
        let x = Tensor::zeros(&[2, 8, 8, 3]);
        let logits = net.forward_eval(&x);
        assert_eq!(logits.shape(), &[2, 2]);
    }
}
