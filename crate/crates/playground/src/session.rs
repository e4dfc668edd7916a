//! Session state and snapshot computation. Everything here is synchronous
//! and recomputed from the base case on every call.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use socialcircle::causal::{
    apply_interventions, divergence, intervene_all, CausalError, DivergenceReport,
    InterventionSpec,
};
use socialcircle::circle::FeatureSeq;
use socialcircle::predictor::{Model, RawReps, Variant};
use socialcircle::segmap::{AffineCalib, SegmentationMap};
use socialcircle::trajdata::{Case, Neighbor};
use socialcircle::Vec2;

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub model_name: String,
    pub model: Arc<Model>,
    /// Never modified after creation.
    pub base: Case,
    pub interventions: Vec<InterventionSpec>,
    pub seed: u64,
    pub k: usize,
}

/// Map as `(value, run)` pairs over row-major cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RleMap {
    pub height: usize,
    pub width: usize,
    pub pixels_per_cell: [f64; 2],
    pub runs: Vec<(f64, usize)>,
}

impl RleMap {
    pub fn encode(map: &SegmentationMap) -> Self {
        RleMap {
            height: map.height(),
            width: map.width(),
            pixels_per_cell: map.pixels_per_cell(),
            runs: map.run_lengths(),
        }
    }

    pub fn decode(&self) -> Vec<f64> {
        self.runs
            .iter()
            .flat_map(|&(v, n)| std::iter::repeat_n(v, n))
            .collect()
    }
}

/// Positions are in the sample frame; add `origin` for scene coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneView {
    pub sample_id: String,
    pub origin: Vec2,
    pub calib: AffineCalib,
    pub observed: Vec<Vec2>,
    pub future: Vec<Vec2>,
    pub neighbors: Vec<Neighbor>,
    /// `p_0..p_{t_h}` of every injected neighbor.
    pub manual_neighbors: Vec<Vec<Vec2>>,
    pub base_map: RleMap,
    pub map: RleMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepView {
    pub reps: RawReps,
    pub s: Option<FeatureSeq>,
    pub p: Option<FeatureSeq>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: String,
    pub model: String,
    pub variant: Variant,
    pub n_theta: usize,
    pub seed: u64,
    pub k: usize,
    pub interventions: Vec<InterventionSpec>,
    pub scene: SceneView,
    pub factual: Vec<Vec<Vec2>>,
    pub counterfactual: Vec<Vec<Vec2>>,
    pub divergence: DivergenceReport,
    pub factual_reps: RepView,
    pub counterfactual_reps: RepView,
}

impl Session {
    /// Applies the current intervention list to the base case and predicts
    /// both worlds with the session seed.
    pub fn snapshot(&self) -> Result<Snapshot, CausalError> {
        let model = &self.model;
        let applied = apply_interventions(model, &self.base, &self.interventions)?;
        let out = intervene_all(model, &self.base, &self.interventions, self.k, self.seed)?;
        let truth = self
            .base
            .sample
            .has_future()
            .then_some(self.base.sample.future.as_slice());
        let div = divergence(&out.factual.y, &out.counterfactual.y, truth)?;
        let s = &self.base.sample;
        Ok(Snapshot {
            id: self.id.clone(),
            model: self.model_name.clone(),
            variant: model.config.variant,
            n_theta: model.config.circle.n_theta,
            seed: self.seed,
            k: self.k,
            interventions: self.interventions.clone(),
            scene: SceneView {
                sample_id: s.id.clone(),
                origin: s.origin_offset,
                calib: self.base.env.calib,
                observed: s.observed.clone(),
                future: s.future.clone(),
                neighbors: s.neighbors.clone(),
                manual_neighbors: out.manual_tracks.clone(),
                base_map: RleMap::encode(&self.base.env.map),
                map: RleMap::encode(&applied.case.env.map),
            },
            factual: out.factual.y.trajectories,
            counterfactual: out.counterfactual.y.trajectories,
            divergence: div,
            factual_reps: RepView {
                reps: out.factual.reps,
                s: out.factual.s,
                p: out.factual.p,
            },
            counterfactual_reps: RepView {
                reps: out.counterfactual.reps,
                s: out.counterfactual.s,
                p: out.counterfactual.p,
            },
        })
    }
}
