//! Toy trajectory predictor conditioned on circle representations.
//!
//! The network flattens the (zero-padded) observed trajectory into a
//! trajectory encoding, adds a linear read-out of the fused circle sequence,
//! and decodes `[h ‖ noise]` through `layers` tanh layers into per-step offsets
//! that are summed into positions. All trainable values live in one flat
//! vector described by a block layout, so gradients, parameter files and
//! parameter-count reports share the same bookkeeping.

use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::{
    self, backbone_length, encode_rows, gate_value, masked, pad_trajectory, physical_circle,
    social_circle_nearest, CircleError, CircleRep, CircleSpec, FeatureSeq, FusionMode,
    PhysicalCircleRep, SocialCircleRep,
};
use crate::geometry::Vec2;
use crate::rng::{derive_seed, seed_for_key, stream};
use crate::trajdata::{Case, TrajectorySample};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Circle(#[from] CircleError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in the {group} gradient")]
    NonFinite { group: ParamGroup },
    #[error("training data is empty")]
    EmptyData,
    #[error("sample {0} has no ground-truth future")]
    NoFuture(String),
    #[error("params file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, PredictorError>;

/// Input scale on observed positions; keeps the first tanh layer out of
/// saturation for typical pedestrian displacements.
pub const INPUT_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Trajectory only; no interaction inputs.
    None,
    /// Social circle only.
    Social,
    /// Social circle with the physical circle fused on.
    SocialPlus,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::None, Variant::Social, Variant::SocialPlus];

    pub fn uses_social(self) -> bool {
        self != Variant::None
    }

    pub fn uses_physical(self) -> bool {
        self == Variant::SocialPlus
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::None => "none",
            Variant::Social => "social",
            Variant::SocialPlus => "social_plus",
        })
    }
}

impl FromStr for Variant {
    type Err = PredictorError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Variant::None),
            "social" => Ok(Variant::Social),
            "social_plus" | "social+" => Ok(Variant::SocialPlus),
            _ => Err(PredictorError::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub d_sc: usize,
    pub k_gen: usize,
    pub noise_dim: usize,
    pub layers: usize,
    pub variant: Variant,
    pub fusion: FusionMode,
    /// Enables the velocity, distance and direction social components.
    pub meta_mask: [bool; 3],
    /// Zero-pad trajectory inputs so more partitions than observed steps fit.
    pub padded: bool,
    pub t_h: usize,
    pub t_f: usize,
    pub circle: CircleSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 32,
            d_sc: 16,
            k_gen: 20,
            noise_dim: 4,
            layers: 2,
            variant: Variant::SocialPlus,
            fusion: FusionMode::Adaptive,
            meta_mask: [true; 3],
            padded: false,
            t_h: 8,
            t_f: 12,
            circle: CircleSpec::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if self.d == 0 {
            return bad("d must be > 0");
        }
        if self.d_sc == 0 {
            return bad("d_sc must be > 0");
        }
        if self.k_gen == 0 {
            return bad("k_gen must be >= 1");
        }
        if self.t_h < 2 {
            return bad("t_h must be >= 2");
        }
        if self.t_f == 0 {
            return bad("t_f must be >= 1");
        }
        self.circle.validate()?;
        self.backbone_len()?;
        Ok(())
    }

    /// Rows consumed by the backbone (trajectory steps after padding).
    pub fn backbone_len(&self) -> Result<usize> {
        if self.variant.uses_social() {
            Ok(backbone_length(self.circle.n_theta, self.t_h, self.padded)?)
        } else if self.padded {
            Ok(self.t_h.max(self.circle.n_theta))
        } else {
            Ok(self.t_h)
        }
    }

    pub fn fusion_mode(&self) -> Option<FusionMode> {
        self.variant.uses_physical().then_some(self.fusion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    TrajectoryEncoder,
    CircleEncoder,
    Fusion,
    Decoder,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::TrajectoryEncoder,
        ParamGroup::CircleEncoder,
        ParamGroup::Fusion,
        ParamGroup::Decoder,
    ];
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::TrajectoryEncoder => "trajectory_encoder",
            ParamGroup::CircleEncoder => "circle_encoder",
            ParamGroup::Fusion => "fusion",
            ParamGroup::Decoder => "decoder",
        })
    }
}

/// One named matrix or vector inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub group: ParamGroup,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default)]
struct Slots {
    traj_w: Range<usize>,
    traj_b: Range<usize>,
    soc_w: Range<usize>,
    soc_b: Range<usize>,
    phy_w: Range<usize>,
    phy_b: Range<usize>,
    ctx_w: Range<usize>,
    gate_u: Range<usize>,
    gate_c: Range<usize>,
    /// Hidden decoder layers as (weight, bias, input width).
    dec: Vec<(Range<usize>, Range<usize>, usize)>,
    out_w: Range<usize>,
    out_b: Range<usize>,
    out_in: usize,
}

fn layout(cfg: &ModelConfig) -> Result<(Vec<Block>, Slots)> {
    cfg.validate()?;
    let l = cfg.backbone_len()?;
    let mut blocks: Vec<Block> = Vec::new();
    let mut push = |name: &str, group, rows: usize, cols: usize| -> Range<usize> {
        let offset = blocks.last().map_or(0, |b| b.offset + b.len());
        blocks.push(Block {
            name: name.to_string(),
            group,
            rows,
            cols,
            offset,
        });
        offset..offset + rows * cols
    };
    let mut s = Slots {
        traj_w: push("traj.w", ParamGroup::TrajectoryEncoder, cfg.d, 2 * l),
        traj_b: push("traj.b", ParamGroup::TrajectoryEncoder, cfg.d, 1),
        ..Slots::default()
    };
    if cfg.variant.uses_social() {
        s.soc_w = push("social.w", ParamGroup::CircleEncoder, cfg.d_sc, 3);
        s.soc_b = push("social.b", ParamGroup::CircleEncoder, cfg.d_sc, 1);
    }
    if cfg.variant.uses_physical() {
        s.phy_w = push("physical.w", ParamGroup::CircleEncoder, cfg.d_sc, 3);
        s.phy_b = push("physical.b", ParamGroup::CircleEncoder, cfg.d_sc, 1);
    }
    if cfg.variant.uses_social() {
        s.ctx_w = push("context.w", ParamGroup::CircleEncoder, cfg.d, l * cfg.d_sc);
    }
    if cfg.fusion_mode() == Some(FusionMode::Adaptive) {
        s.gate_u = push("gate.u", ParamGroup::Fusion, 1, 2 * cfg.d_sc);
        s.gate_c = push("gate.c", ParamGroup::Fusion, 1, 1);
    }
    let mut width = cfg.d + cfg.noise_dim;
    for i in 0..cfg.layers {
        let w = push(&format!("decoder.{i}.w"), ParamGroup::Decoder, cfg.d, width);
        let b = push(&format!("decoder.{i}.b"), ParamGroup::Decoder, cfg.d, 1);
        s.dec.push((w, b, width));
        width = cfg.d;
    }
    s.out_w = push("out.w", ParamGroup::Decoder, 2 * cfg.t_f, width);
    s.out_b = push("out.b", ParamGroup::Decoder, 2 * cfg.t_f, 1);
    s.out_in = width;
    Ok((blocks, s))
}

/// Trainable values per group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub trajectory_encoder: usize,
    pub circle_encoder: usize,
    pub fusion: usize,
    pub decoder: usize,
    pub total: usize,
}

impl ParamCount {
    pub fn group(&self, g: ParamGroup) -> usize {
        match g {
            ParamGroup::TrajectoryEncoder => self.trajectory_encoder,
            ParamGroup::CircleEncoder => self.circle_encoder,
            ParamGroup::Fusion => self.fusion,
            ParamGroup::Decoder => self.decoder,
        }
    }
}

/// Flat parameter storage plus its block layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub values: Vec<f64>,
    pub blocks: Vec<Block>,
}

impl PredictorParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, name: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn group_of(&self, index: usize) -> Option<ParamGroup> {
        self.blocks
            .iter()
            .find(|b| b.range().contains(&index))
            .map(|b| b.group)
    }

    pub fn param_count(&self) -> ParamCount {
        let of = |g| {
            self.blocks
                .iter()
                .filter(|b| b.group == g)
                .map(Block::len)
                .sum()
        };
        ParamCount {
            trajectory_encoder: of(ParamGroup::TrajectoryEncoder),
            circle_encoder: of(ParamGroup::CircleEncoder),
            fusion: of(ParamGroup::Fusion),
            decoder: of(ParamGroup::Decoder),
            total: self.values.len(),
        }
    }
}

pub fn param_count(params: &PredictorParams) -> ParamCount {
    params.param_count()
}

/// Raw (pre-encoding) circle representations of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReps {
    pub social: Option<SocialCircleRep>,
    pub physical: Option<PhysicalCircleRep>,
}

impl RawReps {
    pub fn none() -> Self {
        RawReps {
            social: None,
            physical: None,
        }
    }
}

/// Encoded circle features, the S and P variables of the causal view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoded {
    pub f_s: Option<FeatureSeq>,
    pub f_p: Option<FeatureSeq>,
}

/// Everything the backbone needs besides the trajectory and the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub encoded: Encoded,
    /// Fusion gates per partition (empty unless social_plus).
    pub gates: Vec<f64>,
    /// Aligned circle features flattened row-major (empty for variant none).
    pub flat: Vec<f64>,
}

/// `k` predicted trajectories in the sample's normalized frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub trajectories: Vec<Vec<Vec2>>,
}

impl PredictionSet {
    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn t_f(&self) -> usize {
        self.trajectories.first().map_or(0, Vec::len)
    }

    /// Shifts every position by `offset` (e.g. back to raw scene units).
    pub fn translated(&self, offset: Vec2) -> PredictionSet {
        PredictionSet {
            trajectories: self
                .trajectories
                .iter()
                .map(|t| t.iter().map(|&p| p + offset).collect())
                .collect(),
        }
    }
}

/// Mean per-step Euclidean distance between two equal-length trajectories.
pub fn mean_displacement(a: &[Vec2], b: &[Vec2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).sum::<f64>() / a.len() as f64
}

fn best_index(set: &PredictionSet, truth: &[Vec2]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, t) in set.trajectories.iter().enumerate() {
        let e = mean_displacement(t, truth);
        if e < best.1 {
            best = (i, e);
        }
    }
    best
}

/// Min over the set of the mean per-step displacement to `truth`.
pub fn loss_variety(set: &PredictionSet, truth: &[Vec2]) -> Result<f64> {
    if set.k() == 0 || set.trajectories.iter().any(|t| t.len() != truth.len()) {
        return Err(PredictorError::Shape(format!(
            "{} predictions of length {} vs truth of length {}",
            set.k(),
            set.t_f(),
            truth.len()
        )));
    }
    Ok(best_index(set, truth).1)
}

/// Draws `k` standard-normal noise vectors from one seeded stream.
pub fn noise_draws(seed: u64, k: usize, noise_dim: usize) -> Vec<Vec<f64>> {
    let mut rng = stream(seed);
    (0..k)
        .map(|_| (0..noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

/// `out = W·x + b` with `W` row-major `out.len() × x.len()`.
fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(n).zip(b)) {
        *o = bias + dot(row, x);
    }
}

/// Dot product with four independent partial sums so it vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `g += W^T·dy`, `dW += dy ⊗ x`, `db += dy`.
fn affine_back(
    w: &[f64],
    x: &[f64],
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    let n = x.len();
    for (o, &g) in dy.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        db[o] += g;
        for (d, v) in dw[o * n..(o + 1) * n].iter_mut().zip(x) {
            *d += g * v;
        }
    }
    if let Some(dx) = dx {
        for (o, &g) in dy.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, a) in dx.iter_mut().zip(&w[o * n..(o + 1) * n]) {
                *d += g * a;
            }
        }
    }
}

/// Batch items whose gradients share one accumulation buffer.
const GRAD_CHUNK: usize = 4;

/// Hidden state of one sample plus its share of the first decoder layer.
struct Hoisted {
    h: Vec<f64>,
    first: Vec<f64>,
}

/// Trainable predictor: configuration plus parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: PredictorParams,
    slots: Slots,
}

// Slots are derived from the config, so they take no part in equality.
impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl Model {
    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Model> {
        let (blocks, slots) = layout(&config)?;
        let total = blocks.last().map_or(0, |b| b.offset + b.len());
        if values.len() != total {
            return Err(PredictorError::Shape(format!(
                "{} values for a model with {total} parameters",
                values.len()
            )));
        }
        Ok(Model {
            config,
            params: PredictorParams { values, blocks },
            slots,
        })
    }

    pub fn zeros(config: ModelConfig) -> Result<Model> {
        let (blocks, _) = layout(&config)?;
        let total = blocks.last().map_or(0, |b| b.offset + b.len());
        Model::from_values(config, vec![0.0; total])
    }

    /// Seeded initialization: scaled Gaussian weights, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        let mut model = Model::zeros(config)?;
        let mut rng = stream(derive_seed(seed, &[0x1417]));
        for block in model.params.blocks.clone() {
            if block.cols == 1 && block.name.ends_with(".b") || block.name == "gate.c" {
                continue;
            }
            let gain = match block.name.as_str() {
                "social.w" | "physical.w" => 0.5,
                "traj.w" => 1.0,
                "out.w" => 0.3,
                "gate.u" => 0.0,
                _ => 1.0,
            };
            let std = gain / (block.cols as f64).sqrt();
            for v in &mut model.params.values[block.range()] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = std * z;
            }
        }
        Ok(model)
    }

    pub fn values(&self) -> &[f64] {
        &self.params.values
    }

    pub fn param_count(&self) -> ParamCount {
        self.params.param_count()
    }

    fn p(&self, r: &Range<usize>) -> &[f64] {
        &self.params.values[r.clone()]
    }

    /// Raw circle representations required by this model's variant.
    pub fn raw_reps(&self, case: &Case) -> RawReps {
        let spec = &self.config.circle;
        RawReps {
            social: self
                .config
                .variant
                .uses_social()
                .then(|| social_circle_nearest(&case.sample, spec)),
            physical: self
                .config
                .variant
                .uses_physical()
                .then(|| physical_circle(&case.sample, &case.env, spec)),
        }
    }

    fn check_rep<R: CircleRep>(&self, rep: &R, what: &str) -> Result<()> {
        if rep.n_theta() != self.config.circle.n_theta {
            return Err(PredictorError::Shape(format!(
                "{what} rep has {} partitions, model expects {}",
                rep.n_theta(),
                self.config.circle.n_theta
            )));
        }
        Ok(())
    }

    /// Encodes raw reps into the S and P feature sequences.
    pub fn encode_reps(&self, reps: &RawReps) -> Result<Encoded> {
        let v = self.config.variant;
        let f_s = if v.uses_social() {
            let rep = reps
                .social
                .as_ref()
                .ok_or_else(|| PredictorError::Shape("social rep required".into()))?;
            self.check_rep(rep, "social")?;
            Some(encode_rows(
                &rep.rows,
                |j| rep.present(j),
                self.config.meta_mask,
                self.p(&self.slots.soc_w),
                self.p(&self.slots.soc_b),
            ))
        } else {
            None
        };
        let f_p = if v.uses_physical() {
            let rep = reps
                .physical
                .as_ref()
                .ok_or_else(|| PredictorError::Shape("physical rep required".into()))?;
            self.check_rep(rep, "physical")?;
            Some(encode_rows(
                &rep.rows,
                |j| rep.present(j),
                [true; 3],
                self.p(&self.slots.phy_w),
                self.p(&self.slots.phy_b),
            ))
        } else {
            None
        };
        Ok(Encoded { f_s, f_p })
    }

    /// Shape every encoded sequence must have.
    pub fn encoded_shape(&self) -> (usize, usize) {
        (self.config.circle.n_theta, self.config.d_sc)
    }

    fn check_seq(&self, seq: &FeatureSeq, what: &str) -> Result<()> {
        if seq.shape() != self.encoded_shape() {
            return Err(PredictorError::Shape(format!(
                "{what} features are {:?}, model expects {:?}",
                seq.shape(),
                self.encoded_shape()
            )));
        }
        Ok(())
    }

    /// Fuses and aligns encoded features for the backbone.
    pub fn context(&self, encoded: &Encoded) -> Result<Context> {
        let cfg = &self.config;
        if !cfg.variant.uses_social() {
            return Ok(Context {
                encoded: encoded.clone(),
                gates: Vec::new(),
                flat: Vec::new(),
            });
        }
        let f_s = encoded
            .f_s
            .as_ref()
            .ok_or_else(|| PredictorError::Shape("social features required".into()))?;
        self.check_seq(f_s, "social")?;
        let (fused, gates) = if cfg.variant.uses_physical() {
            let f_p = encoded
                .f_p
                .as_ref()
                .ok_or_else(|| PredictorError::Shape("physical features required".into()))?;
            self.check_seq(f_p, "physical")?;
            let params = match cfg.fusion {
                FusionMode::Hard => circle::FusionParams::hard(),
                FusionMode::Adaptive => circle::FusionParams::adaptive(
                    self.p(&self.slots.gate_u).to_vec(),
                    self.p(&self.slots.gate_c)[0],
                ),
            };
            circle::fuse_with_gates(f_s, f_p, &params)?
        } else {
            (f_s.clone(), Vec::new())
        };
        let aligned = circle::align_to_backbone(&fused, cfg.t_h, cfg.padded)?;
        Ok(Context {
            encoded: encoded.clone(),
            gates,
            flat: aligned.data,
        })
    }

    fn traj_input(&self, sample: &TrajectorySample) -> Result<Vec<f64>> {
        if sample.observed.len() != self.config.t_h {
            return Err(PredictorError::Shape(format!(
                "sample has {} observed steps, model expects {}",
                sample.observed.len(),
                self.config.t_h
            )));
        }
        let l = self.config.backbone_len()?;
        Ok(pad_trajectory(&sample.observed, l)
            .iter()
            .flat_map(|p| [INPUT_SCALE * p.x, INPUT_SCALE * p.y])
            .collect())
    }

    fn hidden(&self, x: &[f64], ctx: &Context) -> Vec<f64> {
        let s = &self.slots;
        let mut pre = vec![0.0; self.config.d];
        affine(self.p(&s.traj_w), self.p(&s.traj_b), x, &mut pre);
        if !ctx.flat.is_empty() {
            let w = self.p(&s.ctx_w);
            let n = ctx.flat.len();
            for (o, v) in pre.iter_mut().enumerate() {
                *v += dot(&w[o * n..(o + 1) * n], &ctx.flat);
            }
        }
        pre.iter().map(|v| v.tanh()).collect()
    }

    /// Precomputes the part of the first decoder layer that depends only on
    /// `h`, which is shared by every noise draw of a sample.
    fn hoist(&self, h: Vec<f64>) -> Hoisted {
        let s = &self.slots;
        let (w, b, width) = match s.dec.first() {
            Some((w, b, width)) => (w, b, *width),
            None => (&s.out_w, &s.out_b, s.out_in),
        };
        let (w, d) = (self.p(w), self.config.d);
        let first = self
            .p(b)
            .iter()
            .enumerate()
            .map(|(o, bias)| bias + dot(&w[o * width..o * width + d], &h))
            .collect();
        Hoisted { h, first }
    }

    /// Decoder pass; returns positions and the activations of every layer
    /// (input first, last hidden last).
    fn decode(&self, hs: &Hoisted, noise: &[f64]) -> (Vec<Vec2>, Vec<Vec<f64>>) {
        let s = &self.slots;
        let d = self.config.d;
        let mut acts = Vec::with_capacity(s.dec.len() + 1);
        let (w, width) = match s.dec.first() {
            Some((w, _, width)) => (self.p(w), *width),
            None => (self.p(&s.out_w), s.out_in),
        };
        let first: Vec<f64> = hs
            .first
            .iter()
            .enumerate()
            .map(|(o, base)| base + dot(&w[o * width + d..(o + 1) * width], noise))
            .collect();
        let mut z: Vec<f64> = hs.h.iter().chain(noise).copied().collect();
        let out = if s.dec.is_empty() {
            first
        } else {
            let next = first.into_iter().map(f64::tanh).collect();
            acts.push(std::mem::replace(&mut z, next));
            for (w, b, _) in &s.dec[1..] {
                let mut next = vec![0.0; d];
                affine(self.p(w), self.p(b), &z, &mut next);
                next.iter_mut().for_each(|v| *v = v.tanh());
                acts.push(std::mem::replace(&mut z, next));
            }
            let mut out = vec![0.0; 2 * self.config.t_f];
            affine(self.p(&s.out_w), self.p(&s.out_b), &z, &mut out);
            out
        };
        acts.push(z);
        let mut pos = Vec2::ZERO;
        let traj = out
            .chunks_exact(2)
            .map(|o| {
                pos += Vec2::new(o[0], o[1]);
                pos
            })
            .collect();
        (traj, acts)
    }

    fn check_noise(&self, noise: &[f64]) -> Result<()> {
        if noise.len() != self.config.noise_dim {
            return Err(PredictorError::Shape(format!(
                "noise has {} entries, model expects {}",
                noise.len(),
                self.config.noise_dim
            )));
        }
        Ok(())
    }

    /// One trajectory from a prepared context.
    pub fn forward_with(
        &self,
        sample: &TrajectorySample,
        ctx: &Context,
        noise: &[f64],
    ) -> Result<Vec<Vec2>> {
        self.check_noise(noise)?;
        let x = self.traj_input(sample)?;
        Ok(self.decode(&self.hoist(self.hidden(&x, ctx)), noise).0)
    }

    /// One trajectory; `reps` is ignored by variant none and required
    /// otherwise.
    pub fn forward(
        &self,
        sample: &TrajectorySample,
        reps: Option<&RawReps>,
        noise: &[f64],
    ) -> Result<Vec<Vec2>> {
        let ctx = self.context_for(reps)?;
        self.forward_with(sample, &ctx, noise)
    }

    fn context_for(&self, reps: Option<&RawReps>) -> Result<Context> {
        match (self.config.variant, reps) {
            (Variant::None, _) => self.context(&Encoded {
                f_s: None,
                f_p: None,
            }),
            (_, Some(r)) => self.context(&self.encode_reps(r)?),
            (v, None) => Err(PredictorError::Shape(format!(
                "variant {v} needs circle representations"
            ))),
        }
    }

    /// `k` trajectories from a prepared context with noise from `seed`.
    pub fn predict_with(
        &self,
        sample: &TrajectorySample,
        ctx: &Context,
        k: usize,
        seed: u64,
    ) -> Result<PredictionSet> {
        let x = self.traj_input(sample)?;
        let hs = self.hoist(self.hidden(&x, ctx));
        let trajectories = noise_draws(seed, k, self.config.noise_dim)
            .iter()
            .map(|n| self.decode(&hs, n).0)
            .collect();
        Ok(PredictionSet { trajectories })
    }

    pub fn predict_k(
        &self,
        sample: &TrajectorySample,
        reps: Option<&RawReps>,
        k: usize,
        seed: u64,
    ) -> Result<PredictionSet> {
        if k == 0 {
            return Err(PredictorError::Config("k must be >= 1".into()));
        }
        let ctx = self.context_for(reps)?;
        self.predict_with(sample, &ctx, k, seed)
    }

    /// Convenience: computes reps from the case, then predicts.
    pub fn predict_case(&self, case: &Case, k: usize, seed: u64) -> Result<PredictionSet> {
        self.predict_k(&case.sample, Some(&self.raw_reps(case)), k, seed)
    }

    pub fn prepare(&self, case: &Case) -> Prepared {
        Prepared {
            sample: case.sample.clone(),
            reps: self.raw_reps(case),
        }
    }

    /// Variety loss of one item and its gradient, accumulated into `grad`.
    fn item_gradient(&self, item: &Prepared, noise: &[Vec<f64>], grad: &mut [f64]) -> Result<f64> {
        let cfg = &self.config;
        let s = &self.slots;
        let truth = &item.sample.future;
        if truth.len() != cfg.t_f {
            return Err(PredictorError::NoFuture(item.sample.id.clone()));
        }
        let x = self.traj_input(&item.sample)?;
        let ctx = self.context_for(Some(&item.reps))?;
        let hs = self.hoist(self.hidden(&x, &ctx));
        let h = &hs.h;

        let mut best: Option<(f64, Vec<Vec2>, Vec<Vec<f64>>)> = None;
        for n in noise {
            self.check_noise(n)?;
            let (traj, acts) = self.decode(&hs, n);
            let e = mean_displacement(&traj, truth);
            if best.as_ref().is_none_or(|b| e < b.0) {
                best = Some((e, traj, acts));
            }
        }
        let (loss, traj, acts) =
            best.ok_or_else(|| PredictorError::Config("k must be >= 1".into()))?;

        // d loss / d position, then reverse cumulative sum for the offsets.
        let t_f = cfg.t_f as f64;
        let mut d_out = vec![0.0; 2 * cfg.t_f];
        let mut acc = Vec2::ZERO;
        for t in (0..cfg.t_f).rev() {
            let diff = traj[t] - truth[t];
            let norm = diff.norm();
            if norm > 0.0 {
                acc += diff / (norm * t_f);
            }
            d_out[2 * t] = acc.x;
            d_out[2 * t + 1] = acc.y;
        }

        let (head, tail) = grad.split_at_mut(s.out_b.start);
        let mut dz = vec![0.0; s.out_in];
        affine_back(
            self.p(&s.out_w),
            &acts[s.dec.len()],
            &d_out,
            &mut head[s.out_w.clone()],
            &mut tail[..s.out_b.len()],
            Some(&mut dz),
        );
        for (i, (w, b, width)) in s.dec.iter().enumerate().rev() {
            let out = &acts[i + 1];
            let dpre: Vec<f64> = dz.iter().zip(out).map(|(g, a)| g * (1.0 - a * a)).collect();
            let mut dx = vec![0.0; *width];
            let (gw, gb) = split_two(grad, w, b);
            affine_back(self.p(w), &acts[i], &dpre, gw, gb, Some(&mut dx));
            dz = dx;
        }

        let dpre_h: Vec<f64> = dz[..cfg.d]
            .iter()
            .zip(h)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        {
            let (gw, gb) = split_two(grad, &s.traj_w, &s.traj_b);
            affine_back(self.p(&s.traj_w), &x, &dpre_h, gw, gb, None);
        }
        if !cfg.variant.uses_social() {
            return Ok(loss);
        }

        let n = ctx.flat.len();
        let w_ctx = self.p(&s.ctx_w);
        let mut dflat = vec![0.0; n];
        for (o, &g) in dpre_h.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let row = o * n..(o + 1) * n;
            for ((dw, df), (&c, &w)) in grad[s.ctx_w.start..][row.clone()]
                .iter_mut()
                .zip(dflat.iter_mut())
                .zip(ctx.flat.iter().zip(&w_ctx[row]))
            {
                *dw += g * c;
                *df += g * w;
            }
        }

        // Only the first n_theta aligned rows are live; the rest is padding.
        let d_sc = cfg.d_sc;
        let n_theta = cfg.circle.n_theta;
        let d_fused = &dflat[..n_theta * d_sc];
        let f_s = ctx.encoded.f_s.as_ref().expect("social features");
        let mut df_s = d_fused.to_vec();
        let mut df_p = Vec::new();
        if cfg.variant.uses_physical() {
            let f_p = ctx.encoded.f_p.as_ref().expect("physical features");
            df_p = vec![0.0; n_theta * d_sc];
            match cfg.fusion {
                FusionMode::Hard => df_p.copy_from_slice(d_fused),
                FusionMode::Adaptive => {
                    let u = self.p(&s.gate_u);
                    let c = self.p(&s.gate_c)[0];
                    for j in 0..n_theta {
                        let (fs, fp) = (f_s.row(j), f_p.row(j));
                        let dfj = &d_fused[j * d_sc..(j + 1) * d_sc];
                        let g = gate_value(fs, fp, u, c);
                        let dz: f64 =
                            g * (1.0 - g) * dfj.iter().zip(fp).map(|(a, b)| a * b).sum::<f64>();
                        for i in 0..d_sc {
                            df_s[j * d_sc + i] += dz * u[i];
                            df_p[j * d_sc + i] = g * dfj[i] + dz * u[d_sc + i];
                            grad[s.gate_u.start + i] += dz * fs[i];
                            grad[s.gate_u.start + d_sc + i] += dz * fp[i];
                        }
                        grad[s.gate_c.start] += dz;
                    }
                }
            }
        }

        let social = item.reps.social.as_ref().expect("social rep");
        self.encoder_back(social, cfg.meta_mask, f_s, &df_s, &s.soc_w, &s.soc_b, grad);
        if cfg.variant.uses_physical() {
            let physical = item.reps.physical.as_ref().expect("physical rep");
            let f_p = ctx.encoded.f_p.as_ref().expect("physical features");
            self.encoder_back(physical, [true; 3], f_p, &df_p, &s.phy_w, &s.phy_b, grad);
        }
        Ok(loss)
    }

    #[allow(clippy::too_many_arguments)]
    fn encoder_back<R: CircleRep>(
        &self,
        rep: &R,
        mask: [bool; 3],
        out: &FeatureSeq,
        d_out: &[f64],
        w: &Range<usize>,
        b: &Range<usize>,
        grad: &mut [f64],
    ) {
        let d_sc = self.config.d_sc;
        let (gw, gb) = split_two(grad, w, b);
        for (j, row) in rep.rows().iter().enumerate() {
            if !rep.present(j) {
                continue;
            }
            let x = masked(row, mask);
            let dpre: Vec<f64> = d_out[j * d_sc..(j + 1) * d_sc]
                .iter()
                .zip(out.row(j))
                .map(|(g, a)| g * (1.0 - a * a))
                .collect();
            affine_back(&[], &x, &dpre, gw, gb, None);
        }
    }

    /// Mean variety loss over `batch` and its gradient. Per-item terms are
    /// computed in parallel and summed in batch order.
    pub fn gradient(&self, batch: &[BatchItem<'_>]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(PredictorError::EmptyData);
        }
        let total = self.params.len();
        // Fixed chunks keep the summation order independent of the thread count.
        let parts: Vec<Result<(f64, Vec<f64>)>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; total];
                let mut loss = 0.0;
                for item in chunk {
                    loss += self.item_gradient(item.prepared, &item.noise, &mut g)?;
                }
                Ok((loss, g))
            })
            .collect();
        let mut parts = parts.into_iter();
        let (mut loss, mut grad) = parts.next().expect("batch is not empty")?;
        for part in parts {
            let (l, g) = part?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / batch.len() as f64;
        grad.iter_mut().for_each(|v| *v *= scale);
        for block in &self.params.blocks {
            if grad[block.range()].iter().any(|v| !v.is_finite()) {
                return Err(PredictorError::NonFinite { group: block.group });
            }
        }
        Ok((loss * scale, grad))
    }

    /// Mean variety loss over prepared items with per-sample noise.
    pub fn mean_loss(&self, items: &[Prepared], k: usize, seed: u64) -> Result<f64> {
        if items.is_empty() {
            return Err(PredictorError::EmptyData);
        }
        let losses: Vec<Result<f64>> = items
            .par_iter()
            .map(|it| {
                let set = self.predict_k(
                    &it.sample,
                    Some(&it.reps),
                    k,
                    seed_for_key(seed, &it.sample.id),
                )?;
                loss_variety(&set, &it.sample.future)
            })
            .collect();
        let mut sum = 0.0;
        for l in losses {
            sum += l?;
        }
        Ok(sum / items.len() as f64)
    }
}

fn split_two<'a>(
    grad: &'a mut [f64],
    a: &Range<usize>,
    b: &Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// A case with its raw reps precomputed, ready for training or evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub sample: TrajectorySample,
    pub reps: RawReps,
}

/// One training item with its `k` noise vectors.
#[derive(Debug, Clone)]
pub struct BatchItem<'a> {
    pub prepared: &'a Prepared,
    pub noise: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Noise draws per sample in the variety loss.
    pub k_train: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            epochs: 200,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
            k_train: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub curve: Vec<EpochLoss>,
}

pub fn curve_csv(curve: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for e in curve {
        let val = e.val.map_or(String::new(), |v| v.to_string());
        out.push_str(&format!("{},{},{val}\n", e.epoch, e.train));
    }
    out
}

/// Plain mini-batch gradient descent with a fixed learning rate. The epoch's
/// training loss is the sample-weighted mean of the pre-update batch losses.
pub fn train(
    init: &Model,
    data: &[Prepared],
    val: &[Prepared],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(PredictorError::EmptyData);
    }
    if opts.batch_size == 0 || opts.k_train == 0 {
        return Err(PredictorError::Config("batch_size and k_train must be >= 1".into()));
    }
    let mut model = init.clone();
    let mut curve = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let val_seed = derive_seed(opts.seed, &[0x7a1]);
    for epoch in 0..opts.epochs {
        let e = epoch as u64;
        order.shuffle(&mut stream(derive_seed(opts.seed, &[e, 0x5f])));
        let mut sum = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<BatchItem<'_>> = chunk
                .iter()
                .map(|&i| BatchItem {
                    prepared: &data[i],
                    noise: noise_draws(
                        derive_seed(opts.seed, &[e, i as u64]),
                        opts.k_train,
                        model.config.noise_dim,
                    ),
                })
                .collect();
            let (loss, grad) = model.gradient(&batch)?;
            sum += loss * chunk.len() as f64;
            if opts.lr != 0.0 {
                for (p, g) in model.params.values.iter_mut().zip(&grad) {
                    *p -= opts.lr * g;
                }
            }
        }
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(model.mean_loss(val, opts.k_train, val_seed)?)
        };
        log::debug!("epoch {epoch}: train {:.5}", sum / data.len() as f64);
        curve.push(EpochLoss {
            epoch,
            train: sum / data.len() as f64,
            val: val_loss,
        });
    }
    Ok(TrainOutcome { model, curve })
}

const MAGIC: &[u8; 8] = b"SCPARAM1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub blocks: Vec<Block>,
    pub count: ParamCount,
}

/// Writes magic, header length (u32 LE), JSON header, then little-endian f64
/// values.
pub fn save_params<W: Write>(model: &Model, seed: u64, mut out: W) -> Result<()> {
    let header = ParamsHeader {
        config: model.config,
        seed,
        blocks: model.params.blocks.clone(),
        count: model.param_count(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| PredictorError::Format(e.to_string()))?;
    let len = u32::try_from(json.len()).map_err(|_| PredictorError::Format("header too large".into()))?;
    out.write_all(MAGIC)?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&json)?;
    for v in model.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_params<R: Read>(mut input: R) -> Result<(Model, ParamsHeader)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(PredictorError::Format("bad magic".into()));
    }
    let mut len = [0u8; 4];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: ParamsHeader =
        serde_json::from_slice(&json).map_err(|e| PredictorError::Format(e.to_string()))?;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(PredictorError::Format("truncated values".into()));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let model = Model::from_values(header.config, values)?;
    if model.params.blocks != header.blocks {
        return Err(PredictorError::Format("block layout does not match config".into()));
    }
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajdata::Neighbor;

    fn small(variant: Variant, fusion: FusionMode) -> ModelConfig {
        ModelConfig {
            d: 6,
            d_sc: 3,
            k_gen: 3,
            noise_dim: 2,
            layers: 2,
            variant,
            fusion,
            t_h: 4,
            t_f: 3,
            circle: CircleSpec {
                n_theta: 4,
                ..CircleSpec::default()
            },
            ..ModelConfig::default()
        }
    }

    fn sample() -> TrajectorySample {
        TrajectorySample {
            id: "s".into(),
            target_id: 1,
            observed: (0..4).map(|t| Vec2::new(t as f64 - 3.0, 0.1 * t as f64)).collect(),
            future: (1..=3).map(|t| Vec2::new(t as f64, 0.0)).collect(),
            neighbors: vec![Neighbor {
                agent_id: 2,
                observed: (0..4).map(|t| Vec2::new(2.0, 3.0 - t as f64)).collect(),
            }],
            origin_offset: Vec2::ZERO,
        }
    }

    #[test]
    fn zero_model_predicts_origin() {
        for v in Variant::ALL {
            let m = Model::zeros(small(v, FusionMode::Adaptive)).unwrap();
            let case = Case::open(sample());
            let set = m.predict_case(&case, 2, 1).unwrap();
            assert!(set.trajectories.iter().flatten().all(|p| *p == Vec2::ZERO));
        }
    }

    #[test]
    fn fusion_group_counts() {
        let hard = Model::zeros(small(Variant::SocialPlus, FusionMode::Hard)).unwrap();
        assert_eq!(hard.param_count().fusion, 0);
        let adaptive = Model::zeros(small(Variant::SocialPlus, FusionMode::Adaptive)).unwrap();
        assert_eq!(adaptive.param_count().fusion, 2 * 3 + 1);
        let c = adaptive.param_count();
        assert_eq!(c.trajectory_encoder + c.circle_encoder + c.fusion + c.decoder, c.total);
    }

    #[test]
    fn social_variant_requires_reps() {
        let m = Model::zeros(small(Variant::Social, FusionMode::Hard)).unwrap();
        assert!(m.forward(&sample(), None, &[0.0, 0.0]).is_err());
        let none = Model::zeros(small(Variant::None, FusionMode::Hard)).unwrap();
        assert!(none.forward(&sample(), None, &[0.0, 0.0]).is_ok());
        assert!(none.forward(&sample(), None, &[0.0]).is_err());
    }

    #[test]
    fn unpadded_overlong_circle_is_config_error() {
        let mut cfg = small(Variant::Social, FusionMode::Hard);
        cfg.circle.n_theta = 8;
        assert!(matches!(Model::zeros(cfg), Err(PredictorError::Circle(_))));
        cfg.padded = true;
        let m = Model::zeros(cfg).unwrap();
        assert_eq!(m.params.block("traj.w").unwrap().cols, 16);
    }

    #[test]
    fn loss_variety_examples() {
        let truth = vec![Vec2::new(1.0, 0.0), Vec2::new(2.0, 0.0)];
        let set = PredictionSet {
            trajectories: vec![vec![Vec2::ZERO; 2], truth.clone()],
        };
        assert_eq!(loss_variety(&set, &truth).unwrap(), 0.0);
        let one = PredictionSet {
            trajectories: vec![vec![Vec2::ZERO; 2]],
        };
        assert_eq!(loss_variety(&one, &truth).unwrap(), 1.5);
        assert!(loss_variety(&PredictionSet { trajectories: vec![] }, &truth).is_err());
    }

    #[test]
    fn params_round_trip() {
        let m = Model::init(small(Variant::SocialPlus, FusionMode::Adaptive), 3).unwrap();
        let mut buf = Vec::new();
        save_params(&m, 3, &mut buf).unwrap();
        let (back, header) = load_params(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.seed, 3);
        buf[0] = b'X';
        assert!(load_params(buf.as_slice()).is_err());
    }

    #[test]
    fn lr_zero_keeps_params() {
        let m = Model::init(small(Variant::Social, FusionMode::Hard), 1).unwrap();
        let data = vec![m.prepare(&Case::open(sample()))];
        let opts = TrainOptions {
            epochs: 3,
            lr: 0.0,
            batch_size: 1,
            seed: 0,
            k_train: 2,
        };
        let out = train(&m, &data, &[], &opts).unwrap();
        assert_eq!(out.model, m);
        assert!(train(&m, &[], &[], &opts).is_err());
    }
}
