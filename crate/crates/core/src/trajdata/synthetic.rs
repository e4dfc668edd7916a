//! Seeded desk-scale scenario generator standing in for recorded datasets.
//!
//! Every scenario occupies its own block of frames in a single clip, so the
//! emitted clip serializes to the ordinary annotation format and re-ingests
//! into the same samples. Neighbors are only recorded over the target's
//! observed frames; they never form complete windows themselves.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{build_samples, Case, DataError, Record, SampleSpec, SceneClip, TrajectorySample, Unit};
use crate::geometry::Vec2;
use crate::rng::{derive_seed, stream};
use crate::segmap::{pool_map, AffineCalib, Environment, RawGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// Target crosses the straight paths of a few neighbors and reacts to them.
    Crossing,
    /// Faster target closes in on a slower agent walking ahead on the same line.
    Overtake,
    /// Lone target bending around a blocked rectangle on the map.
    Obstacle,
    /// Lone target on an empty map.
    Isolated,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Crossing,
        ScenarioKind::Overtake,
        ScenarioKind::Obstacle,
        ScenarioKind::Isolated,
    ];

    fn code(self) -> u64 {
        match self {
            ScenarioKind::Crossing => 1,
            ScenarioKind::Overtake => 2,
            ScenarioKind::Obstacle => 3,
            ScenarioKind::Isolated => 4,
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Crossing => "crossing",
            ScenarioKind::Overtake => "overtake",
            ScenarioKind::Obstacle => "obstacle",
            ScenarioKind::Isolated => "isolated",
        })
    }
}

impl FromStr for ScenarioKind {
    type Err = DataError;
    fn from_str(s: &str) -> Result<Self, DataError> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| DataError::InvalidSpec(format!("unknown scenario kind {s:?}")))
    }
}

/// Generator shape parameters. Lengths are scene units, times are steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub speed_min: f64,
    pub speed_max: f64,
    /// Std-dev of the measurement noise added to every recorded position.
    pub jitter: f64,
    /// Half-width of the heading distribution around +x, radians.
    pub heading_spread: f64,
    /// Social-force repulsion strength (units/step²).
    pub repulsion: f64,
    /// Decay length of the repulsion.
    pub repulsion_range: f64,
    /// Distance at which repulsion equals `repulsion`.
    pub personal_radius: f64,
    /// Steps to relax back to the preferred velocity.
    pub relaxation: f64,
    /// Weight of neighbors behind the target relative to those ahead.
    pub rear_weight: f64,
    /// Clearance kept from the obstacle rectangle.
    pub obstacle_margin: f64,
    /// Along-track length of the avoidance bend.
    pub bend_length: f64,
    /// Upper bound on crossing neighbors per scenario (at least one).
    pub crowd_max: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speed_min: 0.8,
            speed_max: 1.6,
            jitter: 0.05,
            heading_spread: 0.2,
            repulsion: 0.6,
            repulsion_range: 1.0,
            personal_radius: 1.2,
            relaxation: 3.0,
            rear_weight: 0.3,
            obstacle_margin: 1.2,
            bend_length: 4.0,
            crowd_max: 3,
        }
    }
}

/// Generated scenario set: raw clip, its environment, and the built samples.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub kind: ScenarioKind,
    pub clip: SceneClip,
    pub env: Arc<Environment>,
    pub samples: Vec<TrajectorySample>,
}

impl SyntheticScene {
    pub fn cases(&self) -> Vec<Case> {
        self.samples
            .iter()
            .map(|s| Case::new(s.clone(), Arc::clone(&self.env)))
            .collect()
    }
}

// Obstacle scene geometry: a 50 × 50 unit area drawn at 10 px/unit and pooled
// to 100 × 100 cells.
const SCENE_SIZE: f64 = 50.0;
const PX_PER_UNIT: f64 = 10.0;
const MAP_CELLS: usize = 100;
const OBSTACLE_FRONT: f64 = 30.0;
const OBSTACLE_DEPTH: f64 = 4.0;
/// Agent ids reserved per scenario.
const AGENT_BLOCK: usize = 16;

/// Generates `n` scenarios of one kind, deterministic in `seed`.
pub fn generate_synthetic(
    kind: ScenarioKind,
    n: usize,
    seed: u64,
    spec: &SampleSpec,
    cfg: &SynthConfig,
) -> SyntheticScene {
    let mut rng = stream(derive_seed(seed, &[kind.code()]));
    let len = spec.window();
    let env = match kind {
        ScenarioKind::Obstacle => obstacle_environment(&mut rng),
        _ => Environment::open(),
    };
    let mut records = Vec::new();
    for i in 0..n {
        let base = (i * (len + 1)) as i64;
        let target_id = (i * AGENT_BLOCK) as i64 + 1;
        let (target, neighbors) = match kind {
            ScenarioKind::Crossing => crossing(&mut rng, spec, cfg),
            ScenarioKind::Overtake => overtake(&mut rng, spec, cfg),
            ScenarioKind::Obstacle => (obstacle_track(&mut rng, spec, cfg, &env), vec![]),
            ScenarioKind::Isolated => (isolated(&mut rng, spec, cfg), vec![]),
        };
        let noise = Normal::new(0.0, cfg.jitter.max(0.0)).expect("finite jitter");
        let mut jitter = |p: Vec2| {
            if cfg.jitter > 0.0 {
                p + Vec2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                p
            }
        };
        for (t, &p) in target.iter().enumerate() {
            records.push(Record {
                frame_id: base + t as i64,
                agent_id: target_id,
                pos: jitter(p),
            });
        }
        for (j, track) in neighbors.iter().enumerate() {
            for (t, &p) in track.iter().take(spec.t_h).enumerate() {
                records.push(Record {
                    frame_id: base + t as i64,
                    agent_id: target_id + 1 + j as i64,
                    pos: jitter(p),
                });
            }
        }
    }
    let clip = SceneClip::new(format!("synthetic-{kind}"), Unit::Meters, records)
        .expect("generated records are unique");
    let samples = build_samples(&clip, spec, len).samples;
    debug_assert_eq!(samples.len(), n);
    SyntheticScene {
        kind,
        clip,
        env: Arc::new(env),
        samples,
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn heading(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> f64 {
    uniform(rng, -cfg.heading_spread, cfg.heading_spread)
}

fn isolated(rng: &mut ChaCha8Rng, spec: &SampleSpec, cfg: &SynthConfig) -> Vec<Vec2> {
    let v = Vec2::from_polar(uniform(rng, cfg.speed_min, cfg.speed_max), heading(rng, cfg));
    let start = Vec2::new(uniform(rng, 0.0, 20.0), uniform(rng, 0.0, 20.0));
    (0..spec.window()).map(|t| start + v * t as f64).collect()
}

fn crossing(rng: &mut ChaCha8Rng, spec: &SampleSpec, cfg: &SynthConfig) -> (Vec<Vec2>, Vec<Vec<Vec2>>) {
    let len = spec.window();
    let phi = heading(rng, cfg);
    let v_a = Vec2::from_polar(uniform(rng, cfg.speed_min, cfg.speed_max), phi);
    let start = Vec2::new(uniform(rng, 0.0, 20.0), uniform(rng, 0.0, 20.0));
    let count = rng.random_range(1..=cfg.crowd_max.clamp(1, AGENT_BLOCK - 1));
    let neighbors: Vec<Vec<Vec2>> = (0..count)
        .map(|_| {
            let t_cross = uniform(rng, spec.t_h as f64, (len - 3).max(spec.t_h) as f64);
            let meet = start + v_a * t_cross;
            let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let phi_b = phi + side * std::f64::consts::FRAC_PI_2 + uniform(rng, -0.3, 0.3);
            let v_b = Vec2::from_polar(uniform(rng, cfg.speed_min, cfg.speed_max), phi_b);
            let lag = uniform(rng, -3.0, 3.0);
            let q0 = meet - v_b * (t_cross + lag);
            (0..len).map(|t| q0 + v_b * t as f64).collect()
        })
        .collect();
    (social_force(start, v_a, &neighbors, cfg), neighbors)
}

fn overtake(rng: &mut ChaCha8Rng, spec: &SampleSpec, cfg: &SynthConfig) -> (Vec<Vec2>, Vec<Vec<Vec2>>) {
    let len = spec.window();
    let phi = heading(rng, cfg);
    let mid = 0.5 * (cfg.speed_min + cfg.speed_max);
    let s_a = uniform(rng, mid, cfg.speed_max);
    let s_b = uniform(rng, cfg.speed_min, mid - 0.2 * (mid - cfg.speed_min));
    let dir = Vec2::from_polar(1.0, phi);
    let normal = dir.rotate(std::f64::consts::FRAC_PI_2);
    let start = Vec2::new(uniform(rng, 0.0, 20.0), uniform(rng, 0.0, 20.0));
    let t_meet = uniform(rng, (spec.t_h + 1) as f64, (len - 2).max(spec.t_h + 1) as f64);
    let gap = (s_a - s_b) * t_meet;
    let q0 = start + dir * gap + normal * uniform(rng, -0.4, 0.4);
    let neighbor: Vec<Vec2> = (0..len).map(|t| q0 + dir * (s_b * t as f64)).collect();
    let neighbors = vec![neighbor];
    (social_force(start, dir * s_a, &neighbors, cfg), neighbors)
}

/// Target integrates a relaxation term toward its preferred velocity plus an
/// exponential, front-weighted repulsion from non-reactive neighbors. All
/// neighbor tracks share the target's length.
fn social_force(start: Vec2, v_pref: Vec2, neighbors: &[Vec<Vec2>], cfg: &SynthConfig) -> Vec<Vec2> {
    let len = neighbors.first().map_or(0, Vec::len);
    let mut p = start;
    let mut v = v_pref;
    let mut track = Vec::with_capacity(len);
    track.push(p);
    for t in 0..len.saturating_sub(1) {
        let heading = if v.norm() > 0.0 { v / v.norm() } else { Vec2::ZERO };
        let mut force = (v_pref - v) / cfg.relaxation;
        for q in neighbors.iter().map(|n| n[t]) {
            let away = p - q;
            let d = away.norm().max(1e-6);
            let n = away / d;
            // cos of the angle between our heading and the direction to the neighbor
            let ahead = (-n).dot(heading);
            let weight = cfg.rear_weight + (1.0 - cfg.rear_weight) * 0.5 * (1.0 + ahead);
            force += n * (cfg.repulsion * ((cfg.personal_radius - d) / cfg.repulsion_range).exp() * weight);
        }
        v += force;
        p += v;
        track.push(p);
    }
    track
}

fn obstacle_environment(rng: &mut ChaCha8Rng) -> Environment {
    let half = uniform(rng, 2.5, 3.5);
    let center = SCENE_SIZE / 2.0;
    let px = (SCENE_SIZE * PX_PER_UNIT) as usize;
    let mut raw = RawGrid::filled(px, px, 0.0).expect("nonempty");
    for r in 0..px {
        let x = (r as f64 + 0.5) / PX_PER_UNIT;
        if !(OBSTACLE_FRONT..=OBSTACLE_FRONT + OBSTACLE_DEPTH).contains(&x) {
            continue;
        }
        for c in 0..px {
            let y = (c as f64 + 0.5) / PX_PER_UNIT;
            if (y - center).abs() <= half {
                raw.set(r, c, 1.0);
            }
        }
    }
    let map = pool_map(&raw, (MAP_CELLS, MAP_CELLS)).expect("pool fits");
    let calib = AffineCalib::new(Vec2::new(PX_PER_UNIT, PX_PER_UNIT), Vec2::ZERO)
        .expect("nonzero scale");
    Environment::new(map, calib)
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

/// Lateral half-extent of the blocked rectangle, read back from the map.
fn obstacle_half_width(env: &Environment) -> f64 {
    let center = SCENE_SIZE / 2.0;
    let x = OBSTACLE_FRONT + OBSTACLE_DEPTH / 2.0;
    let mut half = 0.0;
    let step = 0.5 / PX_PER_UNIT;
    while env.walkability(Vec2::new(x, center + half + step)) > 0.0 {
        half += step;
    }
    half + step
}

fn obstacle_track(
    rng: &mut ChaCha8Rng,
    spec: &SampleSpec,
    cfg: &SynthConfig,
    env: &Environment,
) -> Vec<Vec2> {
    let len = spec.window();
    let center = SCENE_SIZE / 2.0;
    let half = obstacle_half_width(env);
    let reach = half + cfg.obstacle_margin;
    for _ in 0..1000 {
        let speed = uniform(rng, cfg.speed_min, cfg.speed_max);
        let lateral = uniform(rng, -(reach + 1.5), reach + 1.5);
        let arrive = uniform(rng, (spec.t_h + 2) as f64, (len - 3).max(spec.t_h + 2) as f64);
        let x0 = OBSTACLE_FRONT - speed * arrive;
        let y0 = center + lateral;
        let clear = if lateral.abs() < reach {
            Some(center + reach * if lateral >= 0.0 { 1.0 } else { -1.0 })
        } else {
            None
        };
        let track: Vec<Vec2> = (0..len)
            .map(|t| {
                let x = x0 + speed * t as f64;
                let y = match clear {
                    Some(yc) => {
                        let u = (x - (OBSTACLE_FRONT - cfg.bend_length)) / cfg.bend_length;
                        y0 + (yc - y0) * smoothstep(u)
                    }
                    None => y0,
                };
                Vec2::new(x, y)
            })
            .collect();
        // keep a 3σ jitter band clear of blocked cells
        let band = 3.0 * cfg.jitter;
        let ok = track.iter().all(|&p| {
            [Vec2::ZERO, Vec2::new(band, 0.0), Vec2::new(-band, 0.0), Vec2::new(0.0, band), Vec2::new(0.0, -band)]
                .iter()
                .all(|&o| env.walkability(p + o) < 0.5)
        });
        if ok {
            return track;
        }
    }
    unreachable!("obstacle layout always admits a clear path")
}
