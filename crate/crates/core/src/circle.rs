//! Angle-partitioned interaction representations.
//!
//! The space around a target agent is cut into `n_theta` equal angular
//! sectors, counterclockwise from +x in the global frame and anchored at the
//! target's last observed position. Each sector gets three meta components:
//!
//! * social: mean neighbor speed, mean neighbor distance, circular mean of
//!   neighbor headings;
//! * physical: mean non-walkability of the scanned map samples, distance to the
//!   nearest blocked sample (capped at the scan radius), and the angular offset
//!   of the blocked-mass centroid from the sector's start.
//!
//! Sectors are encoded row-wise by a shared `3 → d_sc` affine + tanh layer and
//! the physical sequence is fused onto the social one, either by plain
//! addition or through a per-sector sigmoid gate.
//!
//! Empty sectors (no neighbors, or no non-walkable mass) encode to exact zero
//! vectors, so a scene without neighbors and without obstacles carries no
//! interaction signal at all.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_angle, Vec2};
use crate::segmap::Environment;
use crate::trajdata::{nearest_neighbors, TrajectorySample};

#[derive(Debug, Error, PartialEq)]
pub enum CircleError {
    #[error("invalid circle spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{n_theta} partitions exceed {t_h} observed steps; enable padded trajectory representations")]
    UnpaddedBackbone { n_theta: usize, t_h: usize },
}

pub type Result<T> = std::result::Result<T, CircleError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircleSpec {
    pub n_theta: usize,
    /// Lower bound on the physical scan radius, scene units.
    pub r_min: f64,
    /// Rays per partition when scanning the map.
    pub n_ray: usize,
    /// Samples per ray.
    pub n_rad: usize,
    /// Neighbors considered, nearest first.
    pub neighbor_limit: usize,
}

impl Default for CircleSpec {
    fn default() -> Self {
        CircleSpec {
            n_theta: 8,
            r_min: 1.0,
            n_ray: 4,
            n_rad: 8,
            neighbor_limit: 50,
        }
    }
}

impl CircleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_theta < 1 {
            return Err(CircleError::InvalidSpec("n_theta must be >= 1".into()));
        }
        if !(self.r_min > 0.0) {
            return Err(CircleError::InvalidSpec("r_min must be > 0".into()));
        }
        if self.n_ray < 1 {
            return Err(CircleError::InvalidSpec("n_ray must be >= 1".into()));
        }
        if self.n_rad < 2 {
            return Err(CircleError::InvalidSpec("n_rad must be >= 2".into()));
        }
        if self.neighbor_limit < 1 {
            return Err(CircleError::InvalidSpec("neighbor_limit must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sector_width(&self) -> f64 {
        TAU / self.n_theta as f64
    }
}

/// Sector index of an angle (wrapped into `[0, 2π)` first).
pub fn partition_index(angle: f64, n_theta: usize) -> usize {
    let a = wrap_angle(angle);
    let idx = (a * n_theta as f64 / TAU).floor() as usize;
    idx.min(n_theta - 1)
}

/// Common view over both representation variants.
pub trait CircleRep {
    fn rows(&self) -> &[[f64; 3]];
    /// Whether sector `j` carries any signal; absent sectors encode to zero.
    fn present(&self, j: usize) -> bool;

    fn n_theta(&self) -> usize {
        self.rows().len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialCircleRep {
    /// `(velocity, distance, direction)` per sector.
    pub rows: Vec<[f64; 3]>,
    /// Neighbors assigned to each sector.
    pub counts: Vec<usize>,
}

impl CircleRep for SocialCircleRep {
    fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    fn present(&self, j: usize) -> bool {
        self.counts[j] > 0
    }
}

impl SocialCircleRep {
    pub fn empty(n_theta: usize) -> Self {
        SocialCircleRep {
            rows: vec![[0.0; 3]; n_theta],
            counts: vec![0; n_theta],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("partition,velocity,distance,direction,count\n");
        for (j, (r, c)) in self.rows.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{j},{},{},{},{c}\n", r[0], r[1], r[2]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCircleRep {
    /// `(obstruction, clearance, bearing)` per sector.
    pub rows: Vec<[f64; 3]>,
    /// Scan radius used for every sector.
    pub radius: f64,
}

impl CircleRep for PhysicalCircleRep {
    fn rows(&self) -> &[[f64; 3]] {
        &self.rows
    }

    fn present(&self, j: usize) -> bool {
        self.rows[j][0] > 0.0
    }
}

impl PhysicalCircleRep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("partition,obstruction,clearance,bearing\n");
        for (j, r) in self.rows.iter().enumerate() {
            out.push_str(&format!("{j},{},{},{}\n", r[0], r[1], r[2]));
        }
        out
    }
}

/// Per-neighbor quantities feeding the social sectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeighborStats {
    pub partition: usize,
    /// Mean per-step speed over the observed window.
    pub speed: f64,
    /// Distance to the target at the last observed step.
    pub distance: f64,
    /// Last-step movement heading; `None` when the neighbor did not move.
    pub heading: Option<f64>,
}

pub fn neighbor_stats(sample: &TrajectorySample, index: usize, n_theta: usize) -> NeighborStats {
    let target = sample.last_observed();
    let obs = &sample.neighbors[index].observed;
    let last = *obs.last().expect("neighbor has observations");
    let rel = last - target;
    let speed = if obs.len() > 1 {
        obs.windows(2).map(|w| w[1].distance(w[0])).sum::<f64>() / (obs.len() - 1) as f64
    } else {
        0.0
    };
    let heading = if obs.len() > 1 {
        let step = last - obs[obs.len() - 2];
        (step.x != 0.0 || step.y != 0.0).then(|| step.bearing())
    } else {
        None
    };
    NeighborStats {
        partition: partition_index(rel.y.atan2(rel.x), n_theta),
        speed,
        distance: rel.norm(),
        heading,
    }
}

/// Social meta components of the listed neighbors.
pub fn social_circle(
    sample: &TrajectorySample,
    neighbor_ids: &[usize],
    spec: &CircleSpec,
) -> SocialCircleRep {
    let n = spec.n_theta;
    let mut speed = vec![0.0; n];
    let mut dist = vec![0.0; n];
    let mut sin = vec![0.0; n];
    let mut cos = vec![0.0; n];
    let mut counts = vec![0usize; n];
    for &i in neighbor_ids {
        let st = neighbor_stats(sample, i, n);
        let j = st.partition;
        counts[j] += 1;
        speed[j] += st.speed;
        dist[j] += st.distance;
        if let Some(h) = st.heading {
            sin[j] += h.sin();
            cos[j] += h.cos();
        }
    }
    let rows = (0..n)
        .map(|j| {
            if counts[j] == 0 {
                return [0.0; 3];
            }
            let c = counts[j] as f64;
            let direction = if sin[j] == 0.0 && cos[j] == 0.0 {
                0.0
            } else {
                wrap_angle(sin[j].atan2(cos[j]))
            };
            [speed[j] / c, dist[j] / c, direction]
        })
        .collect();
    SocialCircleRep { rows, counts }
}

/// Social circle over the `spec.neighbor_limit` nearest neighbors.
pub fn social_circle_nearest(sample: &TrajectorySample, spec: &CircleSpec) -> SocialCircleRep {
    social_circle(sample, &nearest_neighbors(sample, spec.neighbor_limit), spec)
}

/// Scan radius: twice the straight-line displacement over the observed
/// window, but at least `r_min`.
pub fn scan_radius(sample: &TrajectorySample, spec: &CircleSpec) -> f64 {
    let first = sample.observed[0];
    let last = sample.last_observed();
    (2.0 * last.distance(first)).max(spec.r_min)
}

/// Polar sample points of sector `j` as `(angle, radius)` pairs.
pub fn scan_points(spec: &CircleSpec, j: usize, radius: f64) -> Vec<(f64, f64)> {
    let width = spec.sector_width();
    let mut pts = Vec::with_capacity(spec.n_ray * spec.n_rad);
    for a in 0..spec.n_ray {
        let angle = (j as f64 + (a as f64 + 0.5) / spec.n_ray as f64) * width;
        for b in 0..spec.n_rad {
            pts.push((angle, radius * (b + 1) as f64 / spec.n_rad as f64));
        }
    }
    pts
}

/// Map samples at or above this weight count as blocked for clearance.
pub const BLOCKED: f64 = 0.5;

/// Physical meta components from a polar scan of the environment.
pub fn physical_circle(
    sample: &TrajectorySample,
    env: &Environment,
    spec: &CircleSpec,
) -> PhysicalCircleRep {
    let radius = scan_radius(sample, spec);
    let center = sample.to_raw(sample.last_observed());
    let width = spec.sector_width();
    let rows = (0..spec.n_theta)
        .map(|j| {
            let start = j as f64 * width;
            let pts = scan_points(spec, j, radius);
            let mut mass = 0.0;
            let mut moment = 0.0;
            let mut clearance = radius;
            for &(angle, r) in &pts {
                let w = env.walkability(center + Vec2::from_polar(r, angle));
                mass += w;
                moment += w * (angle - start);
                if w >= BLOCKED && r < clearance {
                    clearance = r;
                }
            }
            let obstruction = (mass / pts.len() as f64).clamp(0.0, 1.0);
            let bearing = if mass > 0.0 { moment / mass } else { 0.0 };
            [obstruction, clearance, bearing]
        })
        .collect();
    PhysicalCircleRep { rows, radius }
}

/// Row-major `rows × width` feature sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSeq {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FeatureSeq {
    pub fn zeros(rows: usize, width: usize) -> Self {
        FeatureSeq {
            rows,
            width,
            data: vec![0.0; rows * width],
        }
    }

    pub fn from_data(rows: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(CircleError::Shape(format!(
                "{} values for a {rows}x{width} sequence",
                data.len()
            )));
        }
        Ok(FeatureSeq { rows, width, data })
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.width..(j + 1) * self.width]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.width)
    }
}

/// Shared row encoder `tanh(W·row + b)` with `W: d_sc × 3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EncoderParams {
    pub fn zeros(d_sc: usize) -> Self {
        EncoderParams {
            weight: vec![0.0; 3 * d_sc],
            bias: vec![0.0; d_sc],
        }
    }
}

/// Encodes sector rows with the meta-component mask applied. Absent sectors
/// stay zero.
pub(crate) fn encode_rows(
    rows: &[[f64; 3]],
    present: impl Fn(usize) -> bool,
    mask: [bool; 3],
    weight: &[f64],
    bias: &[f64],
) -> FeatureSeq {
    let d_sc = bias.len();
    let mut out = FeatureSeq::zeros(rows.len(), d_sc);
    for (j, row) in rows.iter().enumerate() {
        if !present(j) {
            continue;
        }
        let x = masked(row, mask);
        let dst = &mut out.data[j * d_sc..(j + 1) * d_sc];
        for (o, v) in dst.iter_mut().enumerate() {
            let w = &weight[o * 3..o * 3 + 3];
            *v = (w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + bias[o]).tanh();
        }
    }
    out
}

pub(crate) fn masked(row: &[f64; 3], mask: [bool; 3]) -> [f64; 3] {
    [
        if mask[0] { row[0] } else { 0.0 },
        if mask[1] { row[1] } else { 0.0 },
        if mask[2] { row[2] } else { 0.0 },
    ]
}

/// Encodes every sector of `rep` into a `d_sc`-wide feature row.
pub fn encode<R: CircleRep + ?Sized>(
    rep: &R,
    params: &EncoderParams,
    d_sc: usize,
    mask: [bool; 3],
) -> Result<FeatureSeq> {
    if params.weight.len() != 3 * d_sc || params.bias.len() != d_sc {
        return Err(CircleError::Shape(format!(
            "encoder has {} weights and {} biases, expected {} and {d_sc}",
            params.weight.len(),
            params.bias.len(),
            3 * d_sc
        )));
    }
    Ok(encode_rows(
        rep.rows(),
        |j| rep.present(j),
        mask,
        &params.weight,
        &params.bias,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Parameter-free elementwise addition.
    Hard,
    /// Per-sector sigmoid gate on the physical features.
    Adaptive,
}

impl std::fmt::Display for FusionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMode::Hard => "hard",
            FusionMode::Adaptive => "adaptive",
        })
    }
}

impl std::str::FromStr for FusionMode {
    type Err = CircleError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hard" | "h" => Ok(FusionMode::Hard),
            "adaptive" | "a" => Ok(FusionMode::Adaptive),
            _ => Err(CircleError::InvalidSpec(format!("unknown fusion mode {s:?}"))),
        }
    }
}

/// Fusion settings; hard mode carries no trainable values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionParams {
    pub mode: FusionMode,
    /// Gate weights over `[f_s ‖ f_p]` (length `2·d_sc`), adaptive only.
    pub gate: Vec<f64>,
    pub gate_bias: f64,
}

impl FusionParams {
    pub fn hard() -> Self {
        FusionParams {
            mode: FusionMode::Hard,
            gate: Vec::new(),
            gate_bias: 0.0,
        }
    }

    pub fn adaptive(gate: Vec<f64>, gate_bias: f64) -> Self {
        FusionParams {
            mode: FusionMode::Adaptive,
            gate,
            gate_bias,
        }
    }

    pub fn trainable_count(&self) -> usize {
        match self.mode {
            FusionMode::Hard => 0,
            FusionMode::Adaptive => self.gate.len() + 1,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Gate value of one sector.
pub(crate) fn gate_value(fs: &[f64], fp: &[f64], gate: &[f64], gate_bias: f64) -> f64 {
    let d = fs.len();
    let mut z = gate_bias;
    for i in 0..d {
        z += gate[i] * fs[i] + gate[d + i] * fp[i];
    }
    sigmoid(z)
}

/// Fuses physical features onto social ones; also returns per-sector gates
/// (all ones in hard mode).
pub fn fuse_with_gates(
    f_s: &FeatureSeq,
    f_p: &FeatureSeq,
    params: &FusionParams,
) -> Result<(FeatureSeq, Vec<f64>)> {
    if f_s.shape() != f_p.shape() {
        return Err(CircleError::Shape(format!(
            "social {:?} vs physical {:?}",
            f_s.shape(),
            f_p.shape()
        )));
    }
    if params.mode == FusionMode::Adaptive && params.gate.len() != 2 * f_s.width {
        return Err(CircleError::Shape(format!(
            "gate has {} weights, expected {}",
            params.gate.len(),
            2 * f_s.width
        )));
    }
    let mut out = f_s.clone();
    let mut gates = Vec::with_capacity(f_s.rows);
    for j in 0..f_s.rows {
        let g = match params.mode {
            FusionMode::Hard => 1.0,
            FusionMode::Adaptive => gate_value(f_s.row(j), f_p.row(j), &params.gate, params.gate_bias),
        };
        gates.push(g);
        let w = f_s.width;
        for (o, p) in out.data[j * w..(j + 1) * w].iter_mut().zip(f_p.row(j)) {
            *o += g * p;
        }
    }
    Ok((out, gates))
}

pub fn fuse(f_s: &FeatureSeq, f_p: &FeatureSeq, params: &FusionParams) -> Result<FeatureSeq> {
    fuse_with_gates(f_s, f_p, params).map(|(f, _)| f)
}

/// Number of rows the backbone consumes: `t_h`, or `n_theta` when it exceeds
/// `t_h` and the backbone pads its trajectory representation.
pub fn backbone_length(n_theta: usize, t_h: usize, padded: bool) -> Result<usize> {
    if n_theta <= t_h {
        Ok(t_h)
    } else if padded {
        Ok(n_theta)
    } else {
        Err(CircleError::UnpaddedBackbone { n_theta, t_h })
    }
}

/// Zero-pads the fused sequence at the tail to the backbone length.
pub fn align_to_backbone(fused: &FeatureSeq, t_h: usize, padded: bool) -> Result<FeatureSeq> {
    let len = backbone_length(fused.rows, t_h, padded)?;
    let mut out = FeatureSeq::zeros(len, fused.width);
    out.data[..fused.data.len()].copy_from_slice(&fused.data);
    Ok(out)
}

/// Trajectory representation zero-padded at the tail to `len` positions.
pub fn pad_trajectory(observed: &[Vec2], len: usize) -> Vec<Vec2> {
    let mut out = observed.to_vec();
    out.resize(len.max(observed.len()), Vec2::ZERO);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmap::{AffineCalib, SegmentationMap};
    use crate::trajdata::Neighbor;
    use std::f64::consts::PI;

    fn target_only() -> TrajectorySample {
        TrajectorySample {
            id: "t".into(),
            target_id: 0,
            observed: (0..8).map(|t| Vec2::new(t as f64 - 7.0, 0.0)).collect(),
            future: vec![],
            neighbors: vec![],
            origin_offset: Vec2::ZERO,
        }
    }

    #[test]
    fn partition_examples() {
        assert_eq!(partition_index(0.0, 8), 0);
        assert_eq!(partition_index(PI, 8), 4);
        assert_eq!(partition_index(TAU - 1e-9, 8), 7);
        assert_eq!(partition_index(TAU, 8), 0);
        assert_eq!(partition_index(1.0, 1), 0);
    }

    #[test]
    fn no_neighbors_gives_zero_rep() {
        let rep = social_circle_nearest(&target_only(), &CircleSpec::default());
        assert!(rep.rows.iter().all(|r| *r == [0.0; 3]));
        assert!(rep.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn single_stationary_neighbor() {
        let mut s = target_only();
        s.neighbors.push(Neighbor {
            agent_id: 1,
            observed: vec![Vec2::new(2.0, 0.0); 8],
        });
        let spec = CircleSpec {
            n_theta: 4,
            ..CircleSpec::default()
        };
        let rep = social_circle_nearest(&s, &spec);
        assert_eq!(rep.rows[0], [0.0, 2.0, 0.0]);
        for j in 1..4 {
            assert_eq!(rep.rows[j], [0.0; 3]);
        }
    }

    #[test]
    fn walkable_map_gives_open_rows() {
        let s = target_only();
        let spec = CircleSpec::default();
        let rep = physical_circle(&s, &Environment::open(), &spec);
        // displacement 7 → radius 14
        assert_eq!(rep.radius, 14.0);
        assert!(rep.rows.iter().all(|r| *r == [0.0, 14.0, 0.0]));
        assert!((0..8).all(|j| !rep.present(j)));
    }

    #[test]
    fn radius_is_twice_displacement() {
        let mut s = target_only();
        s.observed = vec![Vec2::new(-2.0, 0.0), Vec2::new(-1.0, 0.0), Vec2::ZERO];
        assert_eq!(scan_radius(&s, &CircleSpec::default()), 4.0);
        s.observed = vec![Vec2::ZERO, Vec2::ZERO];
        assert_eq!(scan_radius(&s, &CircleSpec::default()), 1.0);
    }

    #[test]
    fn blocked_map_is_fully_obstructed() {
        let env = Environment::new(
            SegmentationMap::filled(4, 4, 1.0, [1.0, 1.0]).unwrap(),
            AffineCalib::identity(),
        );
        let rep = physical_circle(&target_only(), &env, &CircleSpec::default());
        for r in &rep.rows {
            assert_eq!(r[0], 1.0);
            assert_eq!(r[1], rep.radius / 8.0);
        }
    }

    #[test]
    fn zero_encoder_gives_zero_features() {
        let rep = SocialCircleRep::empty(8);
        let f = encode(&rep, &EncoderParams::zeros(4), 4, [true; 3]).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
        assert!(encode(&rep, &EncoderParams::zeros(4), 5, [true; 3]).is_err());
    }

    #[test]
    fn identical_rows_encode_identically() {
        let rep = SocialCircleRep {
            rows: vec![[0.3, 1.2, 2.0]; 3],
            counts: vec![1; 3],
        };
        let params = EncoderParams {
            weight: (0..12).map(|i| 0.1 * i as f64 - 0.5).collect(),
            bias: vec![0.1, -0.2, 0.3, 0.0],
        };
        let f = encode(&rep, &params, 4, [true; 3]).unwrap();
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(f.row(1), f.row(2));
        assert!(f.row(0).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn hard_fusion_is_addition_and_zero_physical_is_identity() {
        let fs = FeatureSeq::from_data(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let fp = FeatureSeq::from_data(2, 2, vec![1.0, -1.0, 0.5, 0.0]).unwrap();
        let f = fuse(&fs, &fp, &FusionParams::hard()).unwrap();
        for i in 0..4 {
            assert_eq!(f.data[i] - fs.data[i], fp.data[i]);
        }
        let zero = FeatureSeq::zeros(2, 2);
        assert_eq!(fuse(&fs, &zero, &FusionParams::hard()).unwrap(), fs);
        let adaptive = FusionParams::adaptive(vec![0.7; 4], -0.3);
        assert_eq!(fuse(&fs, &zero, &adaptive).unwrap(), fs);
        assert_eq!(FusionParams::hard().trainable_count(), 0);
        assert_eq!(adaptive.trainable_count(), 5);
    }

    #[test]
    fn fusion_rejects_shape_mismatch() {
        let a = FeatureSeq::zeros(2, 2);
        let b = FeatureSeq::zeros(3, 2);
        assert!(fuse(&a, &b, &FusionParams::hard()).is_err());
        assert!(fuse(&a, &a, &FusionParams::adaptive(vec![0.0; 3], 0.0)).is_err());
    }

    #[test]
    fn alignment_pads_or_errors() {
        let f = FeatureSeq::from_data(8, 1, (0..8).map(f64::from).collect()).unwrap();
        assert_eq!(align_to_backbone(&f, 8, false).unwrap(), f);

        let short = FeatureSeq::from_data(4, 2, vec![1.0; 8]).unwrap();
        let a = align_to_backbone(&short, 8, false).unwrap();
        assert_eq!(a.rows, 8);
        assert!((4..8).all(|j| a.row(j).iter().all(|&v| v == 0.0)));

        let long = FeatureSeq::zeros(16, 2);
        assert_eq!(
            align_to_backbone(&long, 8, false),
            Err(CircleError::UnpaddedBackbone { n_theta: 16, t_h: 8 })
        );
        assert_eq!(align_to_backbone(&long, 8, true).unwrap().rows, 16);
        let traj = pad_trajectory(&target_only().observed, backbone_length(16, 8, true).unwrap());
        assert_eq!(traj.len(), 16);
        assert_eq!(traj[15], Vec2::ZERO);
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
    }
}
