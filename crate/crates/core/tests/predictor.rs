use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialcircle::circle::{CircleRep, CircleSpec, FusionMode};
use socialcircle::predictor::{
    load_params, loss_variety, mean_displacement, noise_draws, save_params, train, Model,
    ModelConfig, ParamGroup, PredictionSet, PredictorError, Prepared, BatchItem, TrainOptions,
    Variant, INPUT_SCALE,
};
use socialcircle::segmap::{AffineCalib, Environment, SegmentationMap};
use socialcircle::trajdata::{Case, Neighbor, TrajectorySample};
use socialcircle::Vec2;

fn rand_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec2 {
    Vec2::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn random_case(rng: &mut ChaCha8Rng, t_h: usize, t_f: usize) -> Case {
    let vel = rand_vec(rng, 1.0);
    let observed = (0..t_h)
        .map(|t| vel * (t as f64 - (t_h - 1) as f64) + rand_vec(rng, 0.1))
        .collect();
    let future = (1..=t_f).map(|t| vel * t as f64).collect();
    let neighbors = (0..rng.random_range(1..6))
        .map(|i| {
            let start = rand_vec(rng, 4.0);
            let v = rand_vec(rng, 1.0);
            Neighbor {
                agent_id: 10 + i,
                observed: (0..t_h).map(|t| start + v * t as f64).collect(),
            }
        })
        .collect();
    let values = (0..400)
        .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
        .collect();
    let map = SegmentationMap::new(20, 20, values, [1.0, 1.0]).unwrap();
    let calib = AffineCalib::new(Vec2::new(2.0, 2.0), Vec2::new(10.0, 10.0)).unwrap();
    let sample = TrajectorySample {
        id: format!("p{}", rng.random::<u32>()),
        target_id: 1,
        observed,
        future,
        neighbors,
        origin_offset: Vec2::ZERO,
    };
    Case::new(sample, Arc::new(Environment::new(map, calib)))
}

fn small(variant: Variant, fusion: FusionMode) -> ModelConfig {
    ModelConfig {
        d: 7,
        d_sc: 4,
        k_gen: 5,
        noise_dim: 3,
        layers: 2,
        variant,
        fusion,
        t_h: 6,
        t_f: 4,
        circle: CircleSpec {
            n_theta: 5,
            r_min: 2.0,
            ..CircleSpec::default()
        },
        ..ModelConfig::default()
    }
}

fn configs() -> Vec<ModelConfig> {
    let mut out = vec![];
    for v in Variant::ALL {
        for f in [FusionMode::Hard, FusionMode::Adaptive] {
            out.push(small(v, f));
        }
    }
    let mut padded = small(Variant::SocialPlus, FusionMode::Adaptive);
    padded.padded = true;
    padded.circle.n_theta = 9;
    padded.layers = 1;
    out.push(padded);
    let mut masked = small(Variant::Social, FusionMode::Hard);
    masked.meta_mask = [false, true, false];
    masked.layers = 0;
    out.push(masked);
    out
}

fn perturbed(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Model {
    let mut m = Model::init(cfg, rng.random()).unwrap();
    for v in &mut m.params.values {
        *v += rng.random_range(-0.5..0.5);
    }
    m
}

/// Weight block as (rows, cols, values).
fn block<'a>(m: &'a Model, name: &str) -> (usize, usize, &'a [f64]) {
    let b = m.params.block(name).unwrap_or_else(|| panic!("missing {name}"));
    (b.rows, b.cols, &m.params.values[b.range()])
}

fn affine_tanh(w: (usize, usize, &[f64]), b: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(w.1, x.len());
    (0..w.0)
        .map(|o| {
            let mut s = b[o];
            for i in 0..w.1 {
                s += w.2[o * w.1 + i] * x[i];
            }
            s.tanh()
        })
        .collect()
}

fn encode_oracle(m: &Model, rep: &dyn CircleRep, which: &str, mask: [bool; 3]) -> Vec<Vec<f64>> {
    let w = block(m, &format!("{which}.w"));
    let b = block(m, &format!("{which}.b")).2;
    (0..rep.n_theta())
        .map(|j| {
            if !rep.present(j) {
                return vec![0.0; w.0];
            }
            let row = rep.rows()[j];
            let x: Vec<f64> = (0..3).map(|c| if mask[c] { row[c] } else { 0.0 }).collect();
            affine_tanh(w, b, &x)
        })
        .collect()
}

/// Independent re-evaluation of the network from named parameter blocks.
fn forward_oracle(m: &Model, case: &Case, noise: &[f64]) -> Vec<Vec2> {
    let cfg = &m.config;
    let s = &case.sample;
    let len = if cfg.padded { cfg.t_h.max(cfg.circle.n_theta) } else { cfg.t_h };
    let mut x = vec![0.0; 2 * len];
    for (t, p) in s.observed.iter().enumerate() {
        x[2 * t] = INPUT_SCALE * p.x;
        x[2 * t + 1] = INPUT_SCALE * p.y;
    }
    let tw = block(m, "traj.w");
    let tb = block(m, "traj.b").2;
    let mut pre: Vec<f64> = (0..cfg.d)
        .map(|o| tb[o] + (0..2 * len).map(|i| tw.2[o * 2 * len + i] * x[i]).sum::<f64>())
        .collect();
    if cfg.variant != Variant::None {
        let reps = m.raw_reps(case);
        let fs = encode_oracle(m, reps.social.as_ref().unwrap(), "social", cfg.meta_mask);
        let mut fused = fs.clone();
        if cfg.variant == Variant::SocialPlus {
            let fp = encode_oracle(m, reps.physical.as_ref().unwrap(), "physical", [true; 3]);
            for j in 0..fused.len() {
                let g = match cfg.fusion {
                    FusionMode::Hard => 1.0,
                    FusionMode::Adaptive => {
                        let u = block(m, "gate.u").2;
                        let c = block(m, "gate.c").2[0];
                        let z: f64 = c
                            + fs[j].iter().chain(&fp[j]).zip(u).map(|(a, b)| a * b).sum::<f64>();
                        1.0 / (1.0 + (-z).exp())
                    }
                };
                for i in 0..cfg.d_sc {
                    fused[j][i] += g * fp[j][i];
                }
            }
        }
        let mut flat: Vec<f64> = fused.concat();
        flat.resize(len * cfg.d_sc, 0.0);
        let cw = block(m, "context.w");
        for (o, v) in pre.iter_mut().enumerate() {
            *v += (0..flat.len()).map(|i| cw.2[o * cw.1 + i] * flat[i]).sum::<f64>();
        }
    }
    let mut z: Vec<f64> = pre.iter().map(|v| v.tanh()).chain(noise.iter().copied()).collect();
    for l in 0..cfg.layers {
        z = affine_tanh(
            block(m, &format!("decoder.{l}.w")),
            block(m, &format!("decoder.{l}.b")).2,
            &z,
        );
    }
    let ow = block(m, "out.w");
    let ob = block(m, "out.b").2;
    let mut pos = Vec2::ZERO;
    (0..cfg.t_f)
        .map(|t| {
            let off = |r: usize| ob[r] + (0..ow.1).map(|i| ow.2[r * ow.1 + i] * z[i]).sum::<f64>();
            pos = pos + Vec2::new(off(2 * t), off(2 * t + 1));
            pos
        })
        .collect()
}

#[test]
fn forward_matches_formula_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for (i, cfg) in configs().into_iter().cycle().take(80).enumerate() {
        let m = perturbed(cfg, &mut rng);
        let case = random_case(&mut rng, cfg.t_h, cfg.t_f);
        let noise: Vec<f64> = (0..cfg.noise_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = m.forward(&case.sample, Some(&m.raw_reps(&case)), &noise).unwrap();
        let want = forward_oracle(&m, &case, &noise);
        for (a, b) in got.iter().zip(&want) {
            assert!((*a - *b).norm() < 1e-12, "instance {i}: {a:?} vs {b:?}");
        }
        // determinism
        assert_eq!(got, m.forward(&case.sample, Some(&m.raw_reps(&case)), &noise).unwrap());
    }
}

#[test]
fn zero_network_predicts_standing_still() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for cfg in configs() {
        let m = Model::zeros(cfg).unwrap();
        let case = random_case(&mut rng, cfg.t_h, cfg.t_f);
        let out = m
            .forward(&case.sample, Some(&m.raw_reps(&case)), &vec![0.0; cfg.noise_dim])
            .unwrap();
        assert!(out.iter().all(|&p| p == Vec2::ZERO));
    }
}

#[test]
fn forward_rejects_wrong_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = small(Variant::Social, FusionMode::Hard);
    let m = Model::init(cfg, 0).unwrap();
    let case = random_case(&mut rng, cfg.t_h, cfg.t_f);
    let reps = m.raw_reps(&case);
    assert!(m.forward(&case.sample, Some(&reps), &[0.0]).is_err());
    assert!(m.forward(&case.sample, None, &[0.0; 3]).is_err());
    let short = random_case(&mut rng, cfg.t_h - 1, cfg.t_f);
    assert!(m.forward(&short.sample, Some(&reps), &[0.0; 3]).is_err());
}

#[test]
fn predict_k_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = small(Variant::SocialPlus, FusionMode::Adaptive);
    let m = perturbed(cfg, &mut rng);
    let case = random_case(&mut rng, cfg.t_h, cfg.t_f);
    let reps = m.raw_reps(&case);
    let one = m.predict_k(&case.sample, Some(&reps), 1, 99).unwrap();
    let first = &noise_draws(99, 1, cfg.noise_dim)[0];
    assert_eq!(one.trajectories, vec![m.forward(&case.sample, Some(&reps), first).unwrap()]);
    let a = m.predict_k(&case.sample, Some(&reps), 20, 5).unwrap();
    assert_eq!(a, m.predict_k(&case.sample, Some(&reps), 20, 5).unwrap());
    assert_eq!((a.k(), a.t_f()), (20, cfg.t_f));
    assert_ne!(a.trajectories[0], a.trajectories[1]);
    assert!(m.predict_k(&case.sample, Some(&reps), 0, 5).is_err());

    let quiet = perturbed(ModelConfig { noise_dim: 0, ..cfg }, &mut rng);
    let set = quiet.predict_k(&case.sample, Some(&reps), 6, 5).unwrap();
    assert!(set.trajectories.iter().all(|t| *t == set.trajectories[0]));
}

#[test]
fn variety_loss_is_min_of_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let truth: Vec<Vec2> = (0..5).map(|_| rand_vec(&mut rng, 3.0)).collect();
        let set = PredictionSet {
            trajectories: (0..3)
                .map(|_| (0..5).map(|_| rand_vec(&mut rng, 3.0)).collect())
                .collect(),
        };
        let brute = set
            .trajectories
            .iter()
            .map(|t| t.iter().zip(&truth).map(|(a, b)| (*a - *b).norm()).sum::<f64>() / 5.0)
            .fold(f64::INFINITY, f64::min);
        assert!((loss_variety(&set, &truth).unwrap() - brute).abs() < 1e-12);
        let single = PredictionSet {
            trajectories: vec![set.trajectories[1].clone()],
        };
        assert_eq!(
            loss_variety(&single, &truth).unwrap(),
            mean_displacement(&set.trajectories[1], &truth)
        );
        let mut with_truth = set.clone();
        with_truth.trajectories.push(truth.clone());
        assert_eq!(loss_variety(&with_truth, &truth).unwrap(), 0.0);
    }
    let set = PredictionSet {
        trajectories: vec![vec![Vec2::ZERO; 2]],
    };
    assert!(loss_variety(&set, &[Vec2::ZERO; 3]).is_err());
}

#[test]
fn parameter_counts_match_storage() {
    for cfg in configs() {
        let m = Model::init(cfg, 0).unwrap();
        let count = m.param_count();
        let mut by_group = [0usize; 4];
        for i in 0..m.params.values.len() {
            let g = m.params.group_of(i).unwrap();
            by_group[ParamGroup::ALL.iter().position(|x| *x == g).unwrap()] += 1;
        }
        for (g, n) in ParamGroup::ALL.iter().zip(by_group) {
            assert_eq!(count.group(*g), n, "{g}");
        }
        assert_eq!(count.total, m.params.values.len());
        assert_eq!(
            count.total,
            count.trajectory_encoder + count.circle_encoder + count.fusion + count.decoder
        );
        // closed form for the layout
        let l = if cfg.padded { cfg.t_h.max(cfg.circle.n_theta) } else { cfg.t_h };
        let (d, s, nd, tf) = (cfg.d, cfg.d_sc, cfg.noise_dim, cfg.t_f);
        assert_eq!(count.trajectory_encoder, d * 2 * l + d);
        let enc = match cfg.variant {
            Variant::None => 0,
            Variant::Social => 4 * s + d * l * s,
            Variant::SocialPlus => 8 * s + d * l * s,
        };
        assert_eq!(count.circle_encoder, enc);
        let fusion = if cfg.variant == Variant::SocialPlus && cfg.fusion == FusionMode::Adaptive {
            2 * s + 1
        } else {
            0
        };
        assert_eq!(count.fusion, fusion);
        let hidden = if cfg.layers == 0 {
            0
        } else {
            d * (d + nd) + d + (cfg.layers - 1) * (d * d + d)
        };
        let last = if cfg.layers == 0 { d + nd } else { d };
        assert_eq!(count.decoder, hidden + 2 * tf * last + 2 * tf);
    }
}

#[test]
fn adaptive_fusion_overhead_is_small_at_default_size() {
    let m = Model::init(ModelConfig::default(), 0).unwrap();
    let c = m.param_count();
    assert_eq!(c.fusion, 2 * 16 + 1);
    assert!((c.fusion as f64) < 0.01 * c.total as f64);
    let hard = Model::init(
        ModelConfig {
            fusion: FusionMode::Hard,
            ..ModelConfig::default()
        },
        0,
    )
    .unwrap();
    assert_eq!(hard.param_count().fusion, 0);
    assert_eq!(c.total - hard.param_count().total, c.fusion);
}

fn linear_sample() -> Case {
    let v = Vec2::new(0.6, 0.2);
    Case::open(TrajectorySample {
        id: "line".into(),
        target_id: 1,
        observed: (0..8).map(|t| v * (t as f64 - 7.0)).collect(),
        future: (1..=12).map(|t| v * t as f64).collect(),
        neighbors: vec![],
        origin_offset: Vec2::ZERO,
    })
}

#[test]
fn training_fits_linear_motion() {
    let cfg = ModelConfig {
        k_gen: 1,
        noise_dim: 0,
        variant: Variant::None,
        ..ModelConfig::default()
    };
    let model = Model::init(cfg, 7).unwrap();
    let data = vec![model.prepare(&linear_sample())];
    let opts = TrainOptions {
        epochs: 200,
        // the per-step norm is non-smooth at the optimum; this rate keeps the
        // descent monotone over the whole run
        lr: 1.5e-3,
        batch_size: 1,
        seed: 7,
        k_train: 1,
    };
    let out = train(&model, &data, &[], &opts).unwrap();
    let losses: Vec<f64> = out.curve.iter().map(|e| e.train).collect();
    assert_eq!(losses.len(), 200);
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss rose: {} -> {}", w[0], w[1]);
    }
    let final_loss = out.model.mean_loss(&data, 1, 0).unwrap();
    assert!(final_loss < 0.1 * losses[0], "{final_loss} vs {}", losses[0]);

    let again = train(&model, &data, &[], &opts).unwrap();
    assert_eq!(again.curve, out.curve);
    assert_eq!(again.model, out.model);
}

#[test]
fn training_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = small(Variant::SocialPlus, FusionMode::Adaptive);
    let model = Model::init(cfg, 1).unwrap();
    let data: Vec<Prepared> = (0..6)
        .map(|_| model.prepare(&random_case(&mut rng, cfg.t_h, cfg.t_f)))
        .collect();
    let frozen = TrainOptions {
        epochs: 3,
        lr: 0.0,
        batch_size: 4,
        seed: 1,
        k_train: 3,
    };
    let out = train(&model, &data, &data[..2], &frozen).unwrap();
    assert_eq!(out.model, model);
    assert!(out.curve.iter().all(|e| e.val.is_some()));
    let opts = TrainOptions { lr: 1e-2, ..frozen };
    let a = train(&model, &data, &[], &opts).unwrap();
    let b = train(&model, &data, &[], &opts).unwrap();
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.model.values(), b.model.values());
    assert!(matches!(train(&model, &[], &[], &opts), Err(PredictorError::EmptyData)));
}

#[test]
fn non_finite_gradient_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = small(Variant::Social, FusionMode::Hard);
    let mut m = Model::init(cfg, 1).unwrap();
    let r = m.params.block("out.b").unwrap().range();
    m.params.values[r.start] = f64::INFINITY;
    let p = m.prepare(&random_case(&mut rng, cfg.t_h, cfg.t_f));
    let batch = [BatchItem {
        prepared: &p,
        noise: vec![vec![0.0; 3]],
    }];
    assert!(matches!(m.gradient(&batch), Err(PredictorError::NonFinite { .. })));
}

#[test]
fn variant_none_ignores_scene() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = small(Variant::None, FusionMode::Hard);
    let m = perturbed(cfg, &mut rng);
    for _ in 0..20 {
        let case = random_case(&mut rng, cfg.t_h, cfg.t_f);
        let base = m.predict_case(&case, 4, 3).unwrap();
        let mut alone = case.sample.clone();
        alone.neighbors.clear();
        let stripped = Case::open(alone);
        let other = random_case(&mut rng, cfg.t_h, cfg.t_f);
        let mut crowded = case.sample.clone();
        crowded.neighbors = other.sample.neighbors.clone();
        let swapped = Case::new(crowded, other.env.clone());
        assert_eq!(m.predict_case(&stripped, 4, 3).unwrap(), base);
        assert_eq!(m.predict_case(&swapped, 4, 3).unwrap(), base);
    }
}

#[test]
fn meta_mask_only_zeroes_its_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let full = small(Variant::Social, FusionMode::Hard);
    for c in 0..3 {
        let mut mask = [true; 3];
        mask[c] = false;
        let base = perturbed(full, &mut rng);
        let masked = Model::from_values(ModelConfig { meta_mask: mask, ..full }, base.values().to_vec())
            .unwrap();
        let case = random_case(&mut rng, full.t_h, full.t_f);
        let reps = base.raw_reps(&case);
        let mut zeroed = reps.clone();
        for row in &mut zeroed.social.as_mut().unwrap().rows {
            row[c] = 0.0;
        }
        let a = masked.encode_reps(&reps).unwrap();
        let b = base.encode_reps(&zeroed).unwrap();
        assert_eq!(a, b);
        let unmasked = base.encode_reps(&reps).unwrap();
        assert_ne!(a, unmasked);
    }
}

#[test]
fn params_file_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for cfg in configs() {
        let m = perturbed(cfg, &mut rng);
        let mut bytes = Vec::new();
        save_params(&m, 42, &mut bytes).unwrap();
        let (back, header) = load_params(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(header.seed, 42);
        assert_eq!(header.count, m.param_count());
        bytes.truncate(bytes.len() - 3);
        assert!(load_params(bytes.as_slice()).is_err());
    }
    assert!(load_params(&b"NOTPARAM"[..]).is_err());
}
