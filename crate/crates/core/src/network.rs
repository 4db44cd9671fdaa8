//! Encoder/decoder assembly.
//!
//! The encoder runs `num_aaa_stages` density-reducing stages and caches the
//! positions and features of every level. The decoder runs
//! `num_fdc_stages` recovery stages; each interpolates onto the next finer
//! cached level, applies a pointwise MLP, and contrasts the result with the
//! cached features of that level through [`DisparityAttention`]. Heads read
//! the final decoder level.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AdjacencyAttention, SetAbstraction, StageConfig, StageOutput};
use crate::disparity::DisparityAttention;
use crate::error::{Error, Result};
use crate::geometry::{apply_interpolation, interpolation_weights, Point};
use crate::layers::{Bound, Linear, Mlp2, ParamSet};
use crate::scene::PointCloud;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Classification,
    Segmentation,
    WeakCenter,
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Classification => "classification",
            Self::Segmentation => "segmentation",
            Self::WeakCenter => "weak-center",
        })
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classification" => Ok(Self::Classification),
            "segmentation" => Ok(Self::Segmentation),
            "weak-center" => Ok(Self::WeakCenter),
            other => Err(Error::Config(format!("unknown head `{other}`"))),
        }
    }
}

/// Which encoder/decoder blocks the model is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backbone {
    /// Adjacency attention encoder, disparity attention decoder.
    Mma,
    /// Set-abstraction MLP encoder, interpolate-and-MLP decoder.
    Mlp,
}

impl fmt::Display for Backbone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mma => "mma",
            Self::Mlp => "mlp",
        })
    }
}

impl FromStr for Backbone {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mma" => Ok(Self::Mma),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::Config(format!("unknown backbone `{other}`"))),
        }
    }
}

/// Weight initialization of every affine map. Biases always use
/// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// Weights `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    Uniform,
    /// Hidden weights `uniform(-sqrt(6/fan_in), sqrt(6/fan_in))`, which keeps
    /// activation variance roughly constant through ReLU layers; the head's
    /// output weights start at zero so early predictions stay small.
    HeUniform,
}

impl fmt::Display for InitScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Uniform => "uniform",
            Self::HeUniform => "he-uniform",
        })
    }
}

impl FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "he-uniform" => Ok(Self::HeUniform),
            other => Err(Error::Config(format!("unknown init scheme `{other}`"))),
        }
    }
}

/// Output layer of the head, zeroed by [`InitScheme::HeUniform`].
pub const HEAD_OUTPUT_WEIGHT: &str = "head.1.weight";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub num_aaa_stages: usize,
    pub num_fdc_stages: usize,
    /// Output width of each encoder stage; the decoder mirrors them.
    pub widths: Vec<usize>,
    /// Neighbourhood size of each encoder stage.
    pub neighbors: Vec<usize>,
    pub reduction_ratio: f64,
    pub in_channels: usize,
    /// Query/key width of the disparity attention.
    pub attention_dim: usize,
    pub interpolation_k: usize,
    pub head: HeadKind,
    pub head_hidden: usize,
    pub num_classes: usize,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::Mma,
            num_aaa_stages: 4,
            num_fdc_stages: 3,
            widths: vec![32, 64, 128, 256],
            neighbors: vec![16; 4],
            reduction_ratio: 0.5,
            in_channels: 1,
            attention_dim: 16,
            interpolation_k: 3,
            head: HeadKind::Classification,
            head_hidden: 64,
            num_classes: 3,
            init: InitScheme::Uniform,
            seed: 0,
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(key: &str, raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{s}`")))
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{raw}`")))
}

impl ModelConfig {
    pub const KEYS: [&'static str; 14] = [
        "aaa_stages",
        "attention_dim",
        "backbone",
        "fdc_stages",
        "head",
        "head_hidden",
        "in_channels",
        "init",
        "interpolation_k",
        "neighbors",
        "num_classes",
        "reduction_ratio",
        "seed",
        "widths",
    ];

    /// A config with `aaa` encoder and `fdc` decoder stages, taking widths and
    /// neighbourhood sizes from the front of the given ladders.
    pub fn with_stage_counts(&self, aaa: usize, fdc: usize, width_ladder: &[usize], k: usize) -> Self {
        Self {
            num_aaa_stages: aaa,
            num_fdc_stages: fdc,
            widths: width_ladder.iter().copied().take(aaa).collect(),
            neighbors: vec![k; aaa],
            ..self.clone()
        }
    }

    /// Reports the first violated invariant.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(3..=5).contains(&self.num_aaa_stages) {
            return fail(format!("aaa_stages = {} not in {{3,4,5}}", self.num_aaa_stages));
        }
        if !(2..=4).contains(&self.num_fdc_stages) {
            return fail(format!("fdc_stages = {} not in {{2,3,4}}", self.num_fdc_stages));
        }
        if self.num_fdc_stages + 1 > self.num_aaa_stages {
            return fail(format!(
                "fdc_stages = {} must be <= aaa_stages - 1 = {}",
                self.num_fdc_stages,
                self.num_aaa_stages - 1
            ));
        }
        if self.widths.len() != self.num_aaa_stages {
            return fail(format!(
                "{} widths for {} encoder stages",
                self.widths.len(),
                self.num_aaa_stages
            ));
        }
        if self.neighbors.len() != self.num_aaa_stages {
            return fail(format!(
                "{} neighbourhood sizes for {} encoder stages",
                self.neighbors.len(),
                self.num_aaa_stages
            ));
        }
        if self.widths.iter().chain(&self.neighbors).any(|&v| v == 0) {
            return fail("widths and neighbourhood sizes must be >= 1".into());
        }
        if !(self.reduction_ratio > 0.0 && self.reduction_ratio <= 1.0) {
            return fail(format!("reduction_ratio = {} not in (0, 1]", self.reduction_ratio));
        }
        for (name, v) in [
            ("in_channels", self.in_channels),
            ("attention_dim", self.attention_dim),
            ("interpolation_k", self.interpolation_k),
            ("head_hidden", self.head_hidden),
            ("num_classes", self.num_classes),
        ] {
            if v == 0 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        Ok(())
    }

    /// Smallest point count for which every reduction keeps at least one
    /// point at the nominal ratio.
    pub fn required_points(&self) -> usize {
        let r = (1.0 / self.reduction_ratio).powi(self.num_aaa_stages as i32);
        (r - 1e-9).ceil().max(1.0) as usize
    }

    /// Width of encoder level `l` (level 0 is the input).
    pub fn level_width(&self, level: usize) -> usize {
        if level == 0 {
            self.in_channels
        } else {
            self.widths[level - 1]
        }
    }

    /// Index of the level the decoder ends on.
    pub fn output_level(&self) -> usize {
        self.num_aaa_stages - self.num_fdc_stages
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("aaa_stages".into(), self.num_aaa_stages.to_string());
        m.insert("attention_dim".into(), self.attention_dim.to_string());
        m.insert("backbone".into(), self.backbone.to_string());
        m.insert("fdc_stages".into(), self.num_fdc_stages.to_string());
        m.insert("head".into(), self.head.to_string());
        m.insert("head_hidden".into(), self.head_hidden.to_string());
        m.insert("in_channels".into(), self.in_channels.to_string());
        m.insert("init".into(), self.init.to_string());
        m.insert("interpolation_k".into(), self.interpolation_k.to_string());
        m.insert("neighbors".into(), join(&self.neighbors));
        m.insert("num_classes".into(), self.num_classes.to_string());
        m.insert("reduction_ratio".into(), self.reduction_ratio.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("widths".into(), join(&self.widths));
        m
    }

    /// Reads known keys from `kv`, leaving defaults for absent ones.
    /// Unknown keys are ignored so that model and training settings may
    /// share one file.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in kv {
            match k.as_str() {
                "aaa_stages" => cfg.num_aaa_stages = parse_value(k, v)?,
                "attention_dim" => cfg.attention_dim = parse_value(k, v)?,
                "backbone" => cfg.backbone = v.trim().parse()?,
                "fdc_stages" => cfg.num_fdc_stages = parse_value(k, v)?,
                "head" => cfg.head = v.trim().parse()?,
                "head_hidden" => cfg.head_hidden = parse_value(k, v)?,
                "in_channels" => cfg.in_channels = parse_value(k, v)?,
                "init" => cfg.init = v.trim().parse()?,
                "interpolation_k" => cfg.interpolation_k = parse_value(k, v)?,
                "neighbors" => cfg.neighbors = parse_list(k, v)?,
                "num_classes" => cfg.num_classes = parse_value(k, v)?,
                "reduction_ratio" => cfg.reduction_ratio = parse_value(k, v)?,
                "seed" => cfg.seed = parse_value(k, v)?,
                "widths" => cfg.widths = parse_list(k, v)?,
                _ => {}
            }
        }
        if kv.contains_key("aaa_stages") && !kv.contains_key("neighbors") {
            let k = cfg.neighbors.first().copied().unwrap_or(16);
            cfg.neighbors = vec![k; cfg.num_aaa_stages];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses sorted-or-not `key=value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>> {
    let mut m = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
        if m.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", i + 1, k.trim())));
        }
    }
    Ok(m)
}

/// Canonical `key=value` lines in sorted key order.
pub fn format_kv(kv: &BTreeMap<String, String>) -> String {
    kv.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[derive(Debug, Clone)]
enum EncoderStage {
    Attention(AdjacencyAttention),
    Mlp(SetAbstraction),
}

impl EncoderStage {
    fn run(&self, tape: &mut Tape, bound: &Bound, x: Var, pos: &[Point]) -> Result<StageOutput> {
        match self {
            Self::Attention(s) => s.stage(tape, bound, x, pos),
            Self::Mlp(s) => s.stage(tape, bound, x, pos),
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderStage {
    mlp: Linear,
    /// Width alignment of the cached features and the disparity block.
    skip: Option<(Linear, DisparityAttention)>,
}

/// One cached encoder level.
#[derive(Debug, Clone)]
pub struct CacheLevel {
    pub positions: Vec<Point>,
    /// Indices of these points in the input cloud.
    pub source_indices: Vec<usize>,
    pub features: Var,
}

/// Encoder levels `1..=num_aaa_stages`, finest first.
#[derive(Debug, Clone, Default)]
pub struct StageCache {
    pub levels: Vec<CacheLevel>,
}

/// Head results as tape handles.
#[derive(Debug, Clone, Copy)]
pub enum HeadVars {
    /// `(1, K)` logits.
    Classification { logits: Var },
    /// `(N', K)` logits at the output density.
    Segmentation { logits: Var },
    /// `(N', 1)` objectness logits, `(N', 3)` offsets, `(3,)` center.
    WeakCenter { objectness: Var, offsets: Var, center: Var },
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub cache: StageCache,
    /// Final decoder features.
    pub features: Var,
    pub output_positions: Vec<Point>,
    pub output_indices: Vec<usize>,
    pub head: HeadVars,
}

/// Plain-value head output.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadOutput {
    Classification {
        logits: Vec<f64>,
    },
    Segmentation {
        /// `(N', K)`
        logits: Tensor,
        positions: Vec<Point>,
        point_indices: Vec<usize>,
    },
    WeakCenter {
        objectness: Vec<f64>,
        offsets: Vec<Point>,
        center: Point,
        point_indices: Vec<usize>,
    },
}

impl HeadOutput {
    /// Arg-max class for classification outputs; ties go to the lower class.
    pub fn predicted_class(&self) -> Option<usize> {
        match self {
            Self::Classification { logits } => Some(argmax(logits)),
            _ => None,
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    encoder: Vec<EncoderStage>,
    decoder: Vec<DecoderStage>,
    head: Mlp2,
}

impl Model {
    /// Builds a model with parameters drawn from `config.seed`.
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        let mut encoder = Vec::with_capacity(config.num_aaa_stages);
        for s in 0..config.num_aaa_stages {
            let stage_cfg = StageConfig {
                in_channels: config.level_width(s),
                out_channels: config.widths[s],
                k: config.neighbors[s],
                reduction_ratio: config.reduction_ratio,
            };
            let name = format!("enc{s}");
            encoder.push(match config.backbone {
                Backbone::Mma => EncoderStage::Attention(AdjacencyAttention::new(&mut params, &name, stage_cfg, &mut rng)?),
                Backbone::Mlp => EncoderStage::Mlp(SetAbstraction::new(&mut params, &name, stage_cfg, &mut rng)?),
            });
        }
        let mut decoder = Vec::with_capacity(config.num_fdc_stages);
        let mut width = config.level_width(config.num_aaa_stages);
        for d in 0..config.num_fdc_stages {
            let target_level = config.num_aaa_stages - d - 1;
            let out = config.level_width(target_level);
            let mlp = Linear::new(&mut params, &format!("dec{d}.mlp"), width, out, true, &mut rng);
            let skip = match config.backbone {
                Backbone::Mma => {
                    let align = Linear::new(&mut params, &format!("dec{d}.align"), out, out, true, &mut rng);
                    let fdc = DisparityAttention::new(&mut params, &format!("dec{d}.fdc"), out, config.attention_dim, &mut rng);
                    Some((align, fdc))
                }
                Backbone::Mlp => None,
            };
            decoder.push(DecoderStage { mlp, skip });
            width = out;
        }
        let head_out = match config.head {
            HeadKind::Classification | HeadKind::Segmentation => config.num_classes,
            HeadKind::WeakCenter => 4,
        };
        let head = Mlp2::new(&mut params, "head", [width, config.head_hidden, head_out], &mut rng);
        if config.init == InitScheme::HeUniform {
            let gain = 6f64.sqrt();
            let weights: Vec<(usize, bool)> = params
                .iter()
                .enumerate()
                .filter(|(_, (n, _))| n.ends_with(".weight"))
                .map(|(i, (n, _))| (i, n == HEAD_OUTPUT_WEIGHT))
                .collect();
            for (i, zero) in weights {
                let scale = if zero { 0.0 } else { gain };
                params.tensors_mut()[i].data_mut().iter_mut().for_each(|v| *v *= scale);
            }
        }
        Ok(Self {
            config: config.clone(),
            params,
            encoder,
            decoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn check_cloud(&self, cloud: &PointCloud) -> Result<()> {
        let required = self.config.required_points();
        if cloud.len() < required {
            return Err(Error::TooFewPoints {
                n: cloud.len(),
                required,
            });
        }
        if cloud.channels() != self.config.in_channels {
            return Err(Error::ChannelMismatch {
                expected: self.config.in_channels,
                got: cloud.channels(),
            });
        }
        Ok(())
    }

    /// Records the full forward pass on `tape` using parameters bound by
    /// [`ParamSet::bind`].
    pub fn forward_tape(&self, tape: &mut Tape, bound: &Bound, cloud: &PointCloud) -> Result<ForwardTrace> {
        self.check_cloud(cloud)?;
        let mut x = tape.constant(cloud.features.clone());
        let mut pos = cloud.positions.clone();
        let mut src: Vec<usize> = (0..cloud.len()).collect();
        let mut cache = StageCache::default();
        for stage in &self.encoder {
            let out = stage.run(tape, bound, x, &pos)?;
            src = out.sampled.iter().map(|&i| src[i]).collect();
            pos = out.positions;
            x = out.features;
            cache.levels.push(CacheLevel {
                positions: pos.clone(),
                source_indices: src.clone(),
                features: x,
            });
        }

        let a = self.config.num_aaa_stages;
        for (d, stage) in self.decoder.iter().enumerate() {
            let target = &cache.levels[a - d - 2];
            let k = self.config.interpolation_k.min(pos.len());
            let interp = interpolation_weights(&pos, &target.positions, k)?;
            let up = apply_interpolation(tape, &interp, x)?;
            let h = stage.mlp.forward(tape, bound, up)?;
            let y1 = tape.relu(h)?;
            x = match &stage.skip {
                Some((align, fdc)) => {
                    let cached = tape.shape(target.features)[0];
                    if cached != tape.shape(y1)[0] {
                        return Err(Error::LevelMismatch {
                            decoder: tape.shape(y1)[0],
                            cached,
                        });
                    }
                    let y2 = align.forward(tape, bound, target.features)?;
                    fdc.forward(tape, bound, y1, y2)?
                }
                None => y1,
            };
            pos = target.positions.clone();
            src = target.source_indices.clone();
        }

        let head = match self.config.head {
            HeadKind::Classification => {
                let pooled = tape.max_axis(x, 0)?;
                let width = tape.shape(pooled)[0];
                let pooled = tape.reshape(pooled, [1, width])?;
                HeadVars::Classification {
                    logits: self.head.forward(tape, bound, pooled)?,
                }
            }
            HeadKind::Segmentation => HeadVars::Segmentation {
                logits: self.head.forward(tape, bound, x)?,
            },
            HeadKind::WeakCenter => {
                let raw = self.head.forward(tape, bound, x)?;
                let objectness = tape.slice_lastdim(raw, 0, 1)?;
                let offsets = tape.slice_lastdim(raw, 1, 4)?;
                let weights = tape.softmax(objectness, 0)?;
                let p = tape.constant(Tensor::from_rows(&pos)?);
                let votes = tape.add(p, offsets)?;
                let weighted = tape.mul(weights, votes)?;
                let center = tape.sum_axis(weighted, 0)?;
                HeadVars::WeakCenter {
                    objectness,
                    offsets,
                    center,
                }
            }
        };
        Ok(ForwardTrace {
            cache,
            features: x,
            output_positions: pos,
            output_indices: src,
            head,
        })
    }

    /// Inference forward pass.
    pub fn forward(&self, cloud: &PointCloud) -> Result<HeadOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let trace = self.forward_tape(&mut tape, &bound, cloud)?;
        Ok(head_output(&tape, &trace))
    }

    /// Segmentation logits interpolated back to every input point.
    pub fn segment_full(&self, cloud: &PointCloud) -> Result<Tensor> {
        if self.config.head != HeadKind::Segmentation {
            return Err(Error::Config("segment_full needs a segmentation head".into()));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let trace = self.forward_tape(&mut tape, &bound, cloud)?;
        let HeadVars::Segmentation { logits } = trace.head else {
            unreachable!()
        };
        let k = self.config.interpolation_k.min(trace.output_positions.len());
        let interp = interpolation_weights(&trace.output_positions, &cloud.positions, k)?;
        let full = apply_interpolation(&mut tape, &interp, logits)?;
        Ok(tape.value(full).clone())
    }
}

/// Converts the head handles of a trace into plain values.
pub fn head_output(tape: &Tape, trace: &ForwardTrace) -> HeadOutput {
    match trace.head {
        HeadVars::Classification { logits } => HeadOutput::Classification {
            logits: tape.value(logits).data().to_vec(),
        },
        HeadVars::Segmentation { logits } => HeadOutput::Segmentation {
            logits: tape.value(logits).clone(),
            positions: trace.output_positions.clone(),
            point_indices: trace.output_indices.clone(),
        },
        HeadVars::WeakCenter {
            objectness,
            offsets,
            center,
        } => {
            let c = tape.value(center).data();
            HeadOutput::WeakCenter {
                objectness: tape.value(objectness).data().to_vec(),
                offsets: tape
                    .value(offsets)
                    .data()
                    .chunks(3)
                    .map(|r| [r[0], r[1], r[2]])
                    .collect(),
                center: [c[0], c[1], c[2]],
                point_indices: trace.output_indices.clone(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_four_plus_three() {
        let c = ModelConfig::default();
        assert_eq!((c.num_aaa_stages, c.num_fdc_stages), (4, 3));
        c.validate().unwrap();
        assert_eq!(c.required_points(), 16);
        assert_eq!(c.output_level(), 1);
    }

    #[test]
    fn equal_stage_counts_rejected() {
        let c = ModelConfig::default().with_stage_counts(3, 3, &[8, 8, 8], 4);
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("fdc_stages"), "{err}");
        assert!(Model::build(&c).is_err());
    }

    #[test]
    fn kv_roundtrip() {
        let c = ModelConfig {
            reduction_ratio: 0.3,
            head: HeadKind::WeakCenter,
            backbone: Backbone::Mlp,
            init: InitScheme::HeUniform,
            ..ModelConfig::default()
        };
        let text = format_kv(&c.to_kv());
        let back = ModelConfig::from_kv(&parse_kv(&text).unwrap()).unwrap();
        assert_eq!(back, c);
        let keys: Vec<_> = c.to_kv().into_keys().collect();
        assert_eq!(keys, ModelConfig::KEYS);
    }

    #[test]
    fn kv_parse_errors() {
        assert!(parse_kv("a=1\na=2").is_err());
        assert!(parse_kv("novalue").is_err());
        assert!(ModelConfig::from_kv(&parse_kv("head=boxes").unwrap()).is_err());
    }
}
