//! Annotation ingestion, fixed-horizon sample assembly, neighbor queries and
//! dataset splits.

mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::segmap::Environment;

pub use synthetic::{generate_synthetic, ScenarioKind, SynthConfig, SyntheticScene};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate record for frame {frame_id}, agent {agent_id}")]
    DuplicateRecord { frame_id: i64, agent_id: i64 },
    #[error("invalid sample spec: {0}")]
    InvalidSpec(String),
    #[error("unknown clip id {0:?}")]
    UnknownClip(String),
    #[error("unknown unit {0:?} (expected meters, pixels or inches)")]
    UnknownUnit(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Observation/prediction horizon of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Observed steps.
    pub t_h: usize,
    /// Predicted steps.
    pub t_f: usize,
    /// Seconds between steps.
    pub dt: f64,
}

impl SampleSpec {
    pub fn new(t_h: usize, t_f: usize, dt: f64) -> Result<Self> {
        let spec = SampleSpec { t_h, t_f, dt };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_h < 2 {
            return Err(DataError::InvalidSpec(format!("t_h must be >= 2, got {}", self.t_h)));
        }
        if self.t_f < 1 {
            return Err(DataError::InvalidSpec(format!("t_f must be >= 1, got {}", self.t_f)));
        }
        if !(self.dt > 0.0) {
            return Err(DataError::InvalidSpec(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn window(&self) -> usize {
        self.t_h + self.t_f
    }
}

impl Default for SampleSpec {
    fn default() -> Self {
        SampleSpec {
            t_h: 8,
            t_f: 12,
            dt: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Unit {
    Meters,
    Pixels,
    Inches,
}

impl FromStr for Unit {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "meters" | "m" => Ok(Unit::Meters),
            "pixels" | "px" => Ok(Unit::Pixels),
            "inches" | "in" => Ok(Unit::Inches),
            _ => Err(DataError::UnknownUnit(s.to_owned())),
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Unit::Meters => "meters",
            Unit::Pixels => "pixels",
            Unit::Inches => "inches",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub frame_id: i64,
    pub agent_id: i64,
    pub pos: Vec2,
}

/// One annotated video clip. Records are kept sorted by `(frame_id, agent_id)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneClip {
    pub clip_id: String,
    pub unit: Unit,
    records: Vec<Record>,
}

impl SceneClip {
    pub fn new(clip_id: impl Into<String>, unit: Unit, mut records: Vec<Record>) -> Result<Self> {
        records.sort_by_key(|r| (r.frame_id, r.agent_id));
        if let Some(w) = records
            .windows(2)
            .find(|w| (w[0].frame_id, w[0].agent_id) == (w[1].frame_id, w[1].agent_id))
        {
            return Err(DataError::DuplicateRecord {
                frame_id: w[0].frame_id,
                agent_id: w[0].agent_id,
            });
        }
        Ok(SceneClip {
            clip_id: clip_id.into(),
            unit,
            records,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Per-agent tracks, frames ascending.
    pub fn tracks(&self) -> BTreeMap<i64, Vec<(i64, Vec2)>> {
        let mut tracks: BTreeMap<i64, Vec<(i64, Vec2)>> = BTreeMap::new();
        for r in &self.records {
            tracks.entry(r.agent_id).or_default().push((r.frame_id, r.pos));
        }
        tracks
    }

    /// Smallest gap between consecutive distinct frame ids.
    pub fn frame_step(&self) -> Option<i64> {
        let frames: BTreeSet<i64> = self.records.iter().map(|r| r.frame_id).collect();
        frames
            .iter()
            .zip(frames.iter().skip(1))
            .map(|(a, b)| b - a)
            .min()
    }

    /// Serializes into the `frame_id agent_id x y` text format.
    pub fn to_annotation_string(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!("{} {} {} {}\n", r.frame_id, r.agent_id, r.pos.x, r.pos.y));
        }
        out
    }
}

/// Parses whitespace-separated `frame_id agent_id x y` lines; blank lines and
/// lines starting with `#` are skipped.
pub fn parse_annotations(text: &str, clip_id: &str, unit: Unit) -> Result<SceneClip> {
    let mut records = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| DataError::Parse {
            line: idx + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 fields, found {}", fields.len())));
        }
        // some exports write integral ids as floats ("10.0")
        let parse_id = |s: &str| -> std::result::Result<i64, String> {
            s.parse::<i64>().or_else(|_| match s.parse::<f64>() {
                Ok(v) if v.fract() == 0.0 && v.abs() < 9e15 => Ok(v as i64),
                _ => Err(format!("bad id {s:?}")),
            })
        };
        let parse_coord = |s: &str| -> std::result::Result<f64, String> {
            match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(format!("bad coordinate {s:?}")),
            }
        };
        records.push(Record {
            frame_id: parse_id(fields[0]).map_err(err)?,
            agent_id: parse_id(fields[1]).map_err(err)?,
            pos: Vec2::new(
                parse_coord(fields[2]).map_err(err)?,
                parse_coord(fields[3]).map_err(err)?,
            ),
        });
    }
    SceneClip::new(clip_id, unit, records)
}

/// Reads an annotation file; the clip id is the file stem.
pub fn load_annotations(path: &Path, unit: Unit) -> Result<SceneClip> {
    let text = std::fs::read_to_string(path)?;
    let clip_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_annotations(&text, &clip_id, unit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub agent_id: i64,
    /// Exactly `t_h` positions aligned with the target's observed frames.
    pub observed: Vec<Vec2>,
}

/// One prediction case in the sample-normalized frame, where the target's
/// last observed position is the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub id: String,
    pub target_id: i64,
    pub observed: Vec<Vec2>,
    /// Ground truth; empty for pure-inference samples.
    pub future: Vec<Vec2>,
    pub neighbors: Vec<Neighbor>,
    /// Raw position of the origin; add it back to recover scene coordinates.
    pub origin_offset: Vec2,
}

impl TrajectorySample {
    pub fn t_h(&self) -> usize {
        self.observed.len()
    }

    pub fn t_f(&self) -> usize {
        self.future.len()
    }

    pub fn has_future(&self) -> bool {
        !self.future.is_empty()
    }

    pub fn last_observed(&self) -> Vec2 {
        *self.observed.last().expect("sample has observations")
    }

    pub fn to_raw(&self, p: Vec2) -> Vec2 {
        p + self.origin_offset
    }

    /// Applies `f` to every target, neighbor and future position.
    pub fn map_positions(&self, f: impl Fn(Vec2) -> Vec2) -> TrajectorySample {
        TrajectorySample {
            id: self.id.clone(),
            target_id: self.target_id,
            observed: self.observed.iter().map(|&p| f(p)).collect(),
            future: self.future.iter().map(|&p| f(p)).collect(),
            neighbors: self
                .neighbors
                .iter()
                .map(|n| Neighbor {
                    agent_id: n.agent_id,
                    observed: n.observed.iter().map(|&p| f(p)).collect(),
                })
                .collect(),
            origin_offset: self.origin_offset,
        }
    }

    /// Copy with one more neighbor appended.
    pub fn with_neighbor(&self, neighbor: Neighbor) -> TrajectorySample {
        let mut out = self.clone();
        out.neighbors.push(neighbor);
        out
    }

    /// Agent id guaranteed not to collide with the target or any neighbor.
    pub fn unused_agent_id(&self) -> i64 {
        self.neighbors
            .iter()
            .map(|n| n.agent_id)
            .chain(std::iter::once(self.target_id))
            .max()
            .unwrap_or(0)
            + 1
    }
}

/// A sample together with the environment it was recorded in.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub sample: TrajectorySample,
    pub env: Arc<Environment>,
}

impl Case {
    pub fn new(sample: TrajectorySample, env: Arc<Environment>) -> Self {
        Case { sample, env }
    }

    pub fn open(sample: TrajectorySample) -> Self {
        Case {
            sample,
            env: Arc::new(Environment::open()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildOutcome {
    pub samples: Vec<TrajectorySample>,
    /// Agents that never had a complete window.
    pub skipped_agents: usize,
}

/// Cuts every full `t_h + t_f` window out of each agent's track.
///
/// Windows advance `stride` steps along the agent's own frame sequence and
/// require the agent at every frame (frames spaced by the clip's frame step).
/// Neighbors are all other agents seen at least once in the observed frames;
/// their missing frames hold the nearest available observation.
pub fn build_samples(clip: &SceneClip, spec: &SampleSpec, stride: usize) -> BuildOutcome {
    let stride = stride.max(1);
    let tracks = clip.tracks();
    let step = clip.frame_step().unwrap_or(1);
    let len = spec.window();
    let mut samples = Vec::new();
    let mut skipped = 0;

    for (&agent, track) in &tracks {
        let before = samples.len();
        let mut start = 0;
        while start + len <= track.len() {
            let window = &track[start..start + len];
            let contiguous = window.windows(2).all(|w| w[1].0 - w[0].0 == step);
            if contiguous {
                samples.push(cut_sample(clip, &tracks, agent, window, spec, step));
            }
            start += stride;
        }
        if samples.len() == before {
            skipped += 1;
        }
    }
    BuildOutcome {
        samples,
        skipped_agents: skipped,
    }
}

fn cut_sample(
    clip: &SceneClip,
    tracks: &BTreeMap<i64, Vec<(i64, Vec2)>>,
    agent: i64,
    window: &[(i64, Vec2)],
    spec: &SampleSpec,
    step: i64,
) -> TrajectorySample {
    let obs_frames: Vec<i64> = window[..spec.t_h].iter().map(|w| w.0).collect();
    let first = obs_frames[0];
    let last = obs_frames[spec.t_h - 1];
    let origin = window[spec.t_h - 1].1;

    let mut neighbors = Vec::new();
    for (&other, track) in tracks {
        if other == agent {
            continue;
        }
        let seen: Vec<(i64, Vec2)> = track
            .iter()
            .copied()
            .filter(|&(f, _)| f >= first && f <= last && (f - first) % step == 0)
            .collect();
        if seen.is_empty() {
            continue;
        }
        let observed = obs_frames
            .iter()
            .map(|&f| nearest_observation(&seen, f) - origin)
            .collect();
        neighbors.push(Neighbor {
            agent_id: other,
            observed,
        });
    }

    TrajectorySample {
        id: format!("{}/{}@{}", clip.clip_id, agent, first),
        target_id: agent,
        observed: window[..spec.t_h].iter().map(|w| w.1 - origin).collect(),
        future: window[spec.t_h..].iter().map(|w| w.1 - origin).collect(),
        neighbors,
        origin_offset: origin,
    }
}

/// Position at the frame closest to `frame`; ties go to the earlier frame.
fn nearest_observation(seen: &[(i64, Vec2)], frame: i64) -> Vec2 {
    seen.iter()
        .min_by_key(|&&(f, _)| ((f - frame).abs(), f))
        .map(|&(_, p)| p)
        .expect("neighbor has at least one observation")
}

/// Up to `k` neighbor indices ordered by distance to the target at the last
/// observed step; equal distances go to the lower agent id.
pub fn nearest_neighbors(sample: &TrajectorySample, k: usize) -> Vec<usize> {
    let target = sample.last_observed();
    let mut order: Vec<(f64, i64, usize)> = sample
        .neighbors
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let p = *n.observed.last().expect("neighbor has observations");
            (p.distance(target), n.agent_id, i)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, _, i)| i).collect()
}

/// Disjoint train/val/test clip-id sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitPlan {
    /// Moves the named clips from `train` into `val`.
    pub fn with_validation(mut self, val: &[&str]) -> Result<Self> {
        for &id in val {
            let pos = self
                .train
                .iter()
                .position(|t| t == id)
                .ok_or_else(|| DataError::UnknownClip(id.to_owned()))?;
            self.val.push(self.train.remove(pos));
        }
        Ok(self)
    }
}

/// Holds out one clip for testing and trains on the rest.
pub fn leave_one_out_splits(clips: &[SceneClip], held_out: &str) -> Result<SplitPlan> {
    if !clips.iter().any(|c| c.clip_id == held_out) {
        return Err(DataError::UnknownClip(held_out.to_owned()));
    }
    let train: Vec<String> = clips
        .iter()
        .filter(|c| c.clip_id != held_out)
        .map(|c| c.clip_id.clone())
        .collect();
    if train.is_empty() {
        log::warn!("holding out {held_out:?} leaves no training clips");
    }
    Ok(SplitPlan {
        train,
        val: Vec::new(),
        test: vec![held_out.to_owned()],
    })
}

/// Seeded random subset of `count` items, original order preserved.
pub fn subsample<T: Clone>(items: &[T], count: usize, seed: u64) -> Vec<T> {
    if count >= items.len() {
        return items.to_vec();
    }
    let mut rng = crate::rng::stream(seed);
    let mut idx = sample_indices(&mut rng, items.len(), count).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| items[i].clone()).collect()
}
