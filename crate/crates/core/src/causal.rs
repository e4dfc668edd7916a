//! Counterfactual interventions on the social (S) and physical (P) variables.
//!
//! Zero and fix interventions replace the encoded features directly, cutting
//! every edge into the variable. Manual neighbors and boxes act on the inputs
//! (neighbor list, segmentation map) and let the representation be recomputed.
//! Factual and counterfactual predictions share one noise seed, so any
//! difference between them is caused by the intervention alone.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::FeatureSeq;
use crate::eval::{self, ConfigEcho, MetricsReport, SampleMetrics};
use crate::geometry::Vec2;
use crate::predictor::{Encoded, Model, PredictionSet, PredictorError, RawReps, Variant};
use crate::segmap::{BoundingBox, SegmapError};
use crate::trajdata::{Case, Neighbor};

#[derive(Debug, Error)]
pub enum CausalError {
    #[error("intervention not valid for this model: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// A spec field holds an unusable value.
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Segmap(#[from] SegmapError),
    #[error(transparent)]
    Eval(#[from] eval::EvalError),
}

pub type Result<T> = std::result::Result<T, CausalError>;

impl CausalError {
    fn field(field: &str, message: impl Into<String>) -> Self {
        CausalError::Field {
            field: field.to_string(),
            message: message.into(),
        }
    }

    /// Spec field the error refers to, when there is one.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            CausalError::Field { field, .. } => Some(field),
            CausalError::Config(_) => Some("kind"),
            _ => None,
        }
    }
}

/// Linearly interpolated neighbor: `t_h + 1` positions from `p0` to `p_end`.
pub fn manual_neighbor_linear(p0: Vec2, p_end: Vec2, t_h: usize) -> Vec<Vec2> {
    let v = (p_end - p0) / t_h as f64;
    (0..=t_h).map(|t| p0 + v * t as f64).collect()
}

/// Per-step velocity increment that makes the accumulated velocities
/// `v0 + t·Δv` (t = 1..t_h) sum to `p_end − p0`.
pub fn nonlinear_delta_v(p0: Vec2, v0: Vec2, p_end: Vec2, t_h: usize) -> Vec2 {
    let n = t_h as f64;
    // 2(p_end − p0 − v0·t_h) / (t_h(t_h+1)), arranged so v0 = (p_end − p0)/t_h
    // gives exactly zero.
    ((p_end - p0) / n - v0) * (2.0 / (n + 1.0))
}

/// Velocities `v_t = v0 + t·Δv` for t = 1..t_h.
pub fn manual_neighbor_velocities(p0: Vec2, v0: Vec2, p_end: Vec2, t_h: usize) -> Vec<Vec2> {
    let dv = nonlinear_delta_v(p0, v0, p_end, t_h);
    (1..=t_h).map(|t| v0 + dv * t as f64).collect()
}

/// Velocity-interpolated neighbor: `p_t = p0 + t·v0 + Δv·t(t+1)/2`.
pub fn manual_neighbor_nonlinear(p0: Vec2, v0: Vec2, p_end: Vec2, t_h: usize) -> Vec<Vec2> {
    let dv = nonlinear_delta_v(p0, v0, p_end, t_h);
    (0..=t_h)
        .map(|t| {
            let t = t as f64;
            p0 + v0 * t + dv * (t * (t + 1.0) / 2.0)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManualMode {
    Linear,
    Nonlinear,
}

/// One counterfactual manipulation. Manual-neighbor positions are in the
/// sample's normalized frame; boxes are in map pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterventionSpec {
    ZeroS,
    ZeroP,
    FixS {
        value: FeatureSeq,
    },
    FixP {
        value: FeatureSeq,
    },
    ManualNeighbor {
        mode: ManualMode,
        p0: Vec2,
        p_end: Vec2,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v0: Option<Vec2>,
    },
    PhysicalBox {
        #[serde(rename = "box")]
        bbox: BoundingBox,
    },
}

impl InterventionSpec {
    pub fn name(&self) -> &'static str {
        match self {
            InterventionSpec::ZeroS => "zero_s",
            InterventionSpec::ZeroP => "zero_p",
            InterventionSpec::FixS { .. } => "fix_s",
            InterventionSpec::FixP { .. } => "fix_p",
            InterventionSpec::ManualNeighbor { .. } => "manual_neighbor",
            InterventionSpec::PhysicalBox { .. } => "physical_box",
        }
    }

    /// Checks the spec against a model. S interventions are accepted (as
    /// no-ops) on variant none, which has no S; P interventions need
    /// social_plus.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let variant = model.config.variant;
        let shape = model.encoded_shape();
        let check_seq = |seq: &FeatureSeq, field: &str| -> Result<()> {
            if seq.shape() != shape || seq.data.len() != shape.0 * shape.1 {
                return Err(CausalError::field(
                    field,
                    format!("value is {:?}, expected {shape:?}", seq.shape()),
                ));
            }
            if seq.data.iter().any(|v| !v.is_finite()) {
                return Err(CausalError::field(field, "non-finite value"));
            }
            Ok(())
        };
        let finite = |p: &Vec2, field: &str| -> Result<()> {
            if p.is_finite() {
                Ok(())
            } else {
                Err(CausalError::field(field, "non-finite position"))
            }
        };
        match self {
            InterventionSpec::ZeroP | InterventionSpec::FixP { .. } | InterventionSpec::PhysicalBox { .. }
                if variant != Variant::SocialPlus =>
            {
                Err(CausalError::Config(format!(
                    "{} needs a social_plus model, got {variant}",
                    self.name()
                )))
            }
            InterventionSpec::FixS { value } if variant.uses_social() => check_seq(value, "value"),
            InterventionSpec::FixS { .. } => Err(CausalError::Config(format!(
                "fix_s needs a social variable; variant {variant} has none"
            ))),
            InterventionSpec::FixP { value } => check_seq(value, "value"),
            InterventionSpec::ManualNeighbor { mode, p0, p_end, v0 } => {
                finite(p0, "p0")?;
                finite(p_end, "p_end")?;
                match (mode, v0) {
                    (ManualMode::Nonlinear, None) => Err(CausalError::field(
                        "v0",
                        "required for nonlinear manual neighbors",
                    )),
                    (_, Some(v)) => finite(v, "v0"),
                    _ => Ok(()),
                }
            }
            InterventionSpec::PhysicalBox { bbox } => bbox
                .validate()
                .map_err(|e| CausalError::field("box", e.to_string())),
            _ => Ok(()),
        }
    }

    /// Positions `p_0..p_{t_h}` of a manual neighbor spec.
    pub fn manual_track(&self, t_h: usize) -> Option<Vec<Vec2>> {
        match self {
            InterventionSpec::ManualNeighbor { mode, p0, p_end, v0 } => Some(match mode {
                ManualMode::Linear => manual_neighbor_linear(*p0, *p_end, t_h),
                ManualMode::Nonlinear => {
                    manual_neighbor_nonlinear(*p0, v0.unwrap_or(Vec2::ZERO), *p_end, t_h)
                }
            }),
            _ => None,
        }
    }
}

/// X, S, P and Y of one prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalVariables {
    pub x: Vec<Vec2>,
    pub s: Option<FeatureSeq>,
    pub p: Option<FeatureSeq>,
    pub y: PredictionSet,
    /// Raw reps the features were encoded from (before any override).
    pub reps: RawReps,
}

/// Case and representation overrides after applying a list of specs.
#[derive(Debug, Clone)]
pub struct AppliedScenario {
    pub case: Case,
    pub s_override: Option<FeatureSeq>,
    pub p_override: Option<FeatureSeq>,
    /// Injected neighbor tracks, `p_0..p_{t_h}` each.
    pub manual_tracks: Vec<Vec<Vec2>>,
}

/// Applies specs in order. Input-level specs (manual neighbors, boxes) edit
/// the case; representation-level specs override S or P, the last one per
/// variable winning.
pub fn apply_interventions(
    model: &Model,
    case: &Case,
    specs: &[InterventionSpec],
) -> Result<AppliedScenario> {
    let t_h = model.config.t_h;
    let mut sample = case.sample.clone();
    let mut env = Arc::clone(&case.env);
    let mut out = AppliedScenario {
        case: case.clone(),
        s_override: None,
        p_override: None,
        manual_tracks: Vec::new(),
    };
    let (rows, width) = model.encoded_shape();
    for spec in specs {
        spec.validate(model)?;
        match spec {
            InterventionSpec::ZeroS => out.s_override = Some(FeatureSeq::zeros(rows, width)),
            InterventionSpec::ZeroP => out.p_override = Some(FeatureSeq::zeros(rows, width)),
            InterventionSpec::FixS { value } => out.s_override = Some(value.clone()),
            InterventionSpec::FixP { value } => out.p_override = Some(value.clone()),
            InterventionSpec::ManualNeighbor { .. } => {
                let track = spec.manual_track(t_h).expect("manual neighbor spec");
                sample = sample.with_neighbor(Neighbor {
                    agent_id: sample.unused_agent_id(),
                    observed: track[1..].to_vec(),
                });
                out.manual_tracks.push(track);
            }
            InterventionSpec::PhysicalBox { bbox } => env = Arc::new(env.with_box(bbox)?),
        }
    }
    out.case = Case::new(sample, env);
    Ok(out)
}

fn variables(
    model: &Model,
    case: &Case,
    s_override: Option<&FeatureSeq>,
    p_override: Option<&FeatureSeq>,
    k: usize,
    seed: u64,
) -> Result<CausalVariables> {
    let reps = model.raw_reps(case);
    let mut encoded: Encoded = model.encode_reps(&reps)?;
    if let (Some(v), Some(_)) = (s_override, &encoded.f_s) {
        encoded.f_s = Some(v.clone());
    }
    if let (Some(v), Some(_)) = (p_override, &encoded.f_p) {
        encoded.f_p = Some(v.clone());
    }
    let ctx = model.context(&encoded)?;
    let y = model.predict_with(&case.sample, &ctx, k, seed)?;
    Ok(CausalVariables {
        x: case.sample.observed.clone(),
        s: encoded.f_s,
        p: encoded.f_p,
        y,
        reps,
    })
}

/// Factual prediction of a case with `k` draws from `seed`.
pub fn factual(model: &Model, case: &Case, k: usize, seed: u64) -> Result<CausalVariables> {
    variables(model, case, None, None, k, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub factual: CausalVariables,
    pub counterfactual: CausalVariables,
    pub manual_tracks: Vec<Vec<Vec2>>,
}

/// Factual and counterfactual predictions under an ordered list of specs.
pub fn intervene_all(
    model: &Model,
    case: &Case,
    specs: &[InterventionSpec],
    k: usize,
    seed: u64,
) -> Result<InterventionOutcome> {
    let applied = apply_interventions(model, case, specs)?;
    Ok(InterventionOutcome {
        factual: factual(model, case, k, seed)?,
        counterfactual: variables(
            model,
            &applied.case,
            applied.s_override.as_ref(),
            applied.p_override.as_ref(),
            k,
            seed,
        )?,
        manual_tracks: applied.manual_tracks,
    })
}

pub fn intervene(
    model: &Model,
    case: &Case,
    spec: &InterventionSpec,
    k: usize,
    seed: u64,
) -> Result<InterventionOutcome> {
    intervene_all(model, case, std::slice::from_ref(spec), k, seed)
}

/// Best-of-k metrics against the truth, before and after.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricShift {
    pub ade_before: f64,
    pub ade_after: f64,
    pub fde_before: f64,
    pub fde_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    /// Mean over matched pairs and steps of the displacement.
    pub mean_displacement: f64,
    pub max_displacement: f64,
    /// Mean displacement per future step.
    pub per_step: Vec<f64>,
    pub metrics: Option<MetricShift>,
}

/// Compares the i-th factual trajectory with the i-th counterfactual one.
pub fn divergence(
    factual: &PredictionSet,
    counterfactual: &PredictionSet,
    truth: Option<&[Vec2]>,
) -> Result<DivergenceReport> {
    let t_f = factual.t_f();
    if factual.k() == 0
        || factual.k() != counterfactual.k()
        || factual
            .trajectories
            .iter()
            .chain(&counterfactual.trajectories)
            .any(|t| t.len() != t_f)
    {
        return Err(CausalError::Shape(format!(
            "factual {}x{} vs counterfactual {}x{}",
            factual.k(),
            t_f,
            counterfactual.k(),
            counterfactual.t_f()
        )));
    }
    let mut per_step = vec![0.0; t_f];
    let mut max: f64 = 0.0;
    for (a, b) in factual.trajectories.iter().zip(&counterfactual.trajectories) {
        for (t, (p, q)) in a.iter().zip(b).enumerate() {
            let d = p.distance(*q);
            per_step[t] += d;
            max = max.max(d);
        }
    }
    let k = factual.k() as f64;
    per_step.iter_mut().for_each(|v| *v /= k);
    let metrics = match truth {
        Some(truth) => Some(MetricShift {
            ade_before: eval::min_ade(factual, truth)?,
            ade_after: eval::min_ade(counterfactual, truth)?,
            fde_before: eval::min_fde(factual, truth)?,
            fde_after: eval::min_fde(counterfactual, truth)?,
        }),
        None => None,
    };
    Ok(DivergenceReport {
        mean_displacement: per_step.iter().sum::<f64>() / t_f.max(1) as f64,
        max_displacement: max,
        per_step,
        metrics,
    })
}

/// Dataset-level effect of one spec list applied to every case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEffect {
    pub factual: MetricsReport,
    pub counterfactual: MetricsReport,
    pub mean_divergence: f64,
    pub max_divergence: f64,
}

/// Factual and counterfactual best-of-k metrics over cases with futures,
/// using the same per-sample seeds as [`eval::evaluate`].
pub fn evaluate_intervention(
    model: &Model,
    cases: &[Case],
    specs: &[InterventionSpec],
    k: usize,
    seed: u64,
) -> Result<DatasetEffect> {
    if cases.is_empty() {
        return Err(eval::EvalError::EmptyDataset.into());
    }
    let rows = cases
        .par_iter()
        .map(|case| {
            let s = eval::sample_seed(seed, &case.sample.id);
            let out = intervene_all(model, case, specs, k, s)?;
            let div = divergence(
                &out.factual.y,
                &out.counterfactual.y,
                Some(&case.sample.future),
            )?;
            let m = div.metrics.expect("truth given");
            let id = case.sample.id.clone();
            Ok((
                SampleMetrics {
                    id: id.clone(),
                    ade: m.ade_before,
                    fde: m.fde_before,
                },
                SampleMetrics {
                    id,
                    ade: m.ade_after,
                    fde: m.fde_after,
                },
                div.mean_displacement,
                div.max_displacement,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = rows.len() as f64;
    let report = |pick: &dyn Fn(&(SampleMetrics, SampleMetrics, f64, f64)) -> SampleMetrics| {
        let per_sample: Vec<SampleMetrics> = rows.iter().map(pick).collect();
        MetricsReport {
            ade: per_sample.iter().map(|s| s.ade).sum::<f64>() / n,
            fde: per_sample.iter().map(|s| s.fde).sum::<f64>() / n,
            n_samples: per_sample.len(),
            per_sample,
            config: ConfigEcho::new(&model.config, k, seed),
        }
    };
    Ok(DatasetEffect {
        factual: report(&|r| r.0.clone()),
        counterfactual: report(&|r| r.1.clone()),
        mean_divergence: rows.iter().map(|r| r.2).sum::<f64>() / n,
        max_divergence: rows.iter().map(|r| r.3).fold(0.0, f64::max),
    })
}
