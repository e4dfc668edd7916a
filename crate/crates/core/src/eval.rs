//! Best-of-K displacement metrics, dataset evaluation and the ablation harness.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::circle::FusionMode;
use crate::geometry::Vec2;
use crate::predictor::{self, Model, ModelConfig, PredictionSet, PredictorError, Prepared, TrainOptions, Variant};
use crate::rng::seed_for_key;
use crate::trajdata::Case;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction set is empty")]
    EmptySet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("ablation grid is empty")]
    EmptyGrid,
    #[error("unknown baseline row {0:?}")]
    UnknownBaseline(String),
    #[error("sample {0} has no ground-truth future")]
    NoFuture(String),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("combination {label} (seed {seed}): {source}")]
    Combination {
        label: String,
        seed: u64,
        #[source]
        source: Box<EvalError>,
    },
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_shapes(set: &PredictionSet, truth: &[Vec2]) -> Result<()> {
    if set.k() == 0 {
        return Err(EvalError::EmptySet);
    }
    if truth.is_empty() || set.trajectories.iter().any(|t| t.len() != truth.len()) {
        return Err(EvalError::Shape(format!(
            "predictions of length {} vs truth of length {}",
            set.t_f(),
            truth.len()
        )));
    }
    Ok(())
}

/// Minimum over the set of the mean per-step Euclidean error.
pub fn min_ade(set: &PredictionSet, truth: &[Vec2]) -> Result<f64> {
    check_shapes(set, truth)?;
    Ok(set
        .trajectories
        .iter()
        .map(|t| predictor::mean_displacement(t, truth))
        .fold(f64::INFINITY, f64::min))
}

/// Minimum over the set of the final-step Euclidean error.
pub fn min_fde(set: &PredictionSet, truth: &[Vec2]) -> Result<f64> {
    check_shapes(set, truth)?;
    let last = truth[truth.len() - 1];
    Ok(set
        .trajectories
        .iter()
        .map(|t| t[t.len() - 1].distance(last))
        .fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub id: String,
    pub ade: f64,
    pub fde: f64,
}

/// Settings that produced a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub variant: Variant,
    pub n_theta: usize,
    pub fusion: Option<FusionMode>,
    pub meta_mask: [bool; 3],
    pub k: usize,
    pub seed: u64,
}

impl ConfigEcho {
    pub fn new(cfg: &ModelConfig, k: usize, seed: u64) -> Self {
        ConfigEcho {
            variant: cfg.variant,
            n_theta: cfg.circle.n_theta,
            fusion: cfg.fusion_mode(),
            meta_mask: cfg.meta_mask,
            k,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ade: f64,
    pub fde: f64,
    pub n_samples: usize,
    pub per_sample: Vec<SampleMetrics>,
    pub config: ConfigEcho,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample,ade,fde\n");
        for s in &self.per_sample {
            out.push_str(&format!("{},{},{}\n", s.id, s.ade, s.fde));
        }
        out
    }
}

/// Noise seed of one sample under a global evaluation seed. Keyed by sample
/// id so reordering or duplicating a dataset leaves per-sample metrics alone.
pub fn sample_seed(seed: u64, sample_id: &str) -> u64 {
    seed_for_key(seed, sample_id)
}

/// Best-of-`k` metrics over prepared samples.
pub fn evaluate(model: &Model, data: &[Prepared], k: usize, seed: u64) -> Result<MetricsReport> {
    if data.is_empty() {
        return Err(EvalError::EmptyDataset);
    }
    let per_sample = data
        .par_iter()
        .map(|p| {
            if !p.sample.has_future() {
                return Err(EvalError::NoFuture(p.sample.id.clone()));
            }
            let set = model.predict_k(
                &p.sample,
                Some(&p.reps),
                k,
                sample_seed(seed, &p.sample.id),
            )?;
            Ok(SampleMetrics {
                id: p.sample.id.clone(),
                ade: min_ade(&set, &p.sample.future)?,
                fde: min_fde(&set, &p.sample.future)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_sample.len() as f64;
    Ok(MetricsReport {
        ade: per_sample.iter().map(|s| s.ade).sum::<f64>() / n,
        fde: per_sample.iter().map(|s| s.fde).sum::<f64>() / n,
        n_samples: per_sample.len(),
        per_sample,
        config: ConfigEcho::new(&model.config, k, seed),
    })
}

/// Like [`evaluate`], computing circle reps from the cases first.
pub fn evaluate_cases(model: &Model, cases: &[Case], k: usize, seed: u64) -> Result<MetricsReport> {
    let data: Vec<Prepared> = cases.par_iter().map(|c| model.prepare(c)).collect();
    evaluate(model, &data, k, seed)
}

/// One named combination of the ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationEntry {
    pub label: String,
    pub config: ModelConfig,
}

/// Train/val/test cases shared by every combination.
#[derive(Debug, Clone)]
pub struct AblationData {
    pub train: Vec<Case>,
    pub val: Vec<Case>,
    pub test: Vec<Case>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub config: ModelConfig,
    pub reports: Vec<MetricsReport>,
    pub seeds: Vec<u64>,
    pub mean_ade: f64,
    pub mean_fde: f64,
    /// `(row − baseline) / baseline · 100`.
    pub delta_ade_pct: f64,
    pub delta_fde_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub baseline: String,
    pub rows: Vec<AblationRow>,
}

pub fn pct_delta(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        if value == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (value - baseline) / baseline * 100.0
    }
}

impl AblationTable {
    pub fn row(&self, label: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "label,variant,fusion,n_theta,meta_mask,seeds,mean_ade,mean_fde,delta_ade_pct,delta_fde_pct\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.config.variant,
                r.config.fusion_mode().map_or("-".to_string(), |f| f.to_string()),
                r.config.circle.n_theta,
                mask_code(r.config.meta_mask),
                r.seeds.len(),
                r.mean_ade,
                r.mean_fde,
                r.delta_ade_pct,
                r.delta_fde_pct
            ));
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::from(
            "| label | variant | fusion | N | mask | ADE | FDE | ΔADE % | ΔFDE % |\n|---|---|---|---|---|---|---|---|---|\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} | {:.4} | {:.4} | {:+.2} | {:+.2} |\n",
                r.label,
                r.config.variant,
                r.config.fusion_mode().map_or("-".to_string(), |f| f.to_string()),
                r.config.circle.n_theta,
                mask_code(r.config.meta_mask),
                r.mean_ade,
                r.mean_fde,
                r.delta_ade_pct,
                r.delta_fde_pct
            ));
        }
        out
    }
}

/// `vdc`-style code with disabled components shown as `-`.
pub fn mask_code(mask: [bool; 3]) -> String {
    ['v', 'd', 'c']
        .iter()
        .zip(mask)
        .map(|(c, on)| if on { *c } else { '-' })
        .collect()
}

/// Trains one model per (combination, seed) and evaluates it on the test
/// cases with best-of-`k`.
pub fn train_and_evaluate(
    config: &ModelConfig,
    data: &AblationData,
    opts: &TrainOptions,
    k: usize,
) -> Result<(Model, MetricsReport)> {
    let init = Model::init(*config, opts.seed)?;
    let prep = |cases: &[Case]| -> Vec<Prepared> { cases.par_iter().map(|c| init.prepare(c)).collect() };
    let train = prep(&data.train);
    let val = prep(&data.val);
    let test = prep(&data.test);
    let outcome = predictor::train(&init, &train, &val, opts)?;
    let report = evaluate(&outcome.model, &test, k, opts.seed)?;
    Ok((outcome.model, report))
}

pub fn run_ablation(
    grid: &[AblationEntry],
    data: &AblationData,
    seeds: &[u64],
    opts: &TrainOptions,
    k: usize,
    baseline: &str,
) -> Result<AblationTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    if !grid.iter().any(|e| e.label == baseline) {
        return Err(EvalError::UnknownBaseline(baseline.to_string()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for entry in grid {
        let mut reports = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let o = TrainOptions { seed, ..*opts };
            let (_, report) = train_and_evaluate(&entry.config, data, &o, k).map_err(|e| {
                EvalError::Combination {
                    label: entry.label.clone(),
                    seed,
                    source: Box::new(e),
                }
            })?;
            log::info!("{} seed {seed}: ade {:.4} fde {:.4}", entry.label, report.ade, report.fde);
            reports.push(report);
        }
        let n = reports.len() as f64;
        rows.push(AblationRow {
            label: entry.label.clone(),
            config: entry.config,
            mean_ade: reports.iter().map(|r| r.ade).sum::<f64>() / n,
            mean_fde: reports.iter().map(|r| r.fde).sum::<f64>() / n,
            reports,
            seeds: seeds.to_vec(),
            delta_ade_pct: 0.0,
            delta_fde_pct: 0.0,
        });
    }
    let base = rows
        .iter()
        .find(|r| r.label == baseline)
        .map(|r| (r.mean_ade, r.mean_fde))
        .expect("baseline checked above");
    for r in &mut rows {
        r.delta_ade_pct = pct_delta(r.mean_ade, base.0);
        r.delta_fde_pct = pct_delta(r.mean_fde, base.1);
    }
    Ok(AblationTable {
        baseline: baseline.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(trajs: Vec<Vec<Vec2>>) -> PredictionSet {
        PredictionSet { trajectories: trajs }
    }

    #[test]
    fn exact_prediction_scores_zero() {
        let truth: Vec<Vec2> = (0..5).map(|t| Vec2::new(t as f64, 1.0)).collect();
        let s = set(vec![vec![Vec2::ZERO; 5], truth.clone()]);
        assert_eq!(min_ade(&s, &truth).unwrap(), 0.0);
        assert_eq!(min_fde(&s, &truth).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_gives_five() {
        let truth: Vec<Vec2> = (0..4).map(|t| Vec2::new(t as f64, 0.0)).collect();
        let shifted = truth.iter().map(|&p| p + Vec2::new(3.0, 4.0)).collect();
        let s = set(vec![shifted]);
        assert_eq!(min_ade(&s, &truth).unwrap(), 5.0);
        assert_eq!(min_fde(&s, &truth).unwrap(), 5.0);
    }

    #[test]
    fn empty_or_mismatched_sets_error() {
        let truth = vec![Vec2::ZERO; 3];
        assert!(matches!(min_ade(&set(vec![]), &truth), Err(EvalError::EmptySet)));
        assert!(min_fde(&set(vec![vec![Vec2::ZERO; 2]]), &truth).is_err());
    }

    #[test]
    fn percentage_delta() {
        assert!((pct_delta(0.9, 1.0) + 10.0).abs() < 1e-12);
        assert_eq!(pct_delta(1.0, 1.0), 0.0);
        assert_eq!(mask_code([true, false, true]), "v-c");
    }
}
