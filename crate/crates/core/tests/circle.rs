use std::f64::consts::TAU;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialcircle::circle::{
    encode, fuse_with_gates, partition_index, physical_circle, scan_points, scan_radius,
    social_circle, CircleSpec, EncoderParams, FeatureSeq, FusionParams, SocialCircleRep,
};
use socialcircle::geometry::angle_distance;
use socialcircle::segmap::{AffineCalib, Environment, SegmentationMap};
use socialcircle::trajdata::{Neighbor, TrajectorySample};
use socialcircle::Vec2;

fn sample_with(observed: Vec<Vec2>, neighbors: Vec<Vec<Vec2>>) -> TrajectorySample {
    TrajectorySample {
        id: "c".into(),
        target_id: 0,
        observed,
        future: vec![],
        neighbors: neighbors
            .into_iter()
            .enumerate()
            .map(|(i, observed)| Neighbor {
                agent_id: i as i64 + 1,
                observed,
            })
            .collect(),
        origin_offset: Vec2::ZERO,
    }
}

fn random_sample(rng: &mut ChaCha8Rng, n_neighbors: usize) -> TrajectorySample {
    let observed = (0..8)
        .map(|t| Vec2::new(t as f64 * 0.9 - 6.3, 0.2 * t as f64))
        .collect();
    let neighbors = (0..n_neighbors)
        .map(|_| {
            let s = Vec2::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0));
            let v = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            (0..8).map(|t| s + v * t as f64).collect()
        })
        .collect();
    sample_with(observed, neighbors)
}

/// Per-neighbor recomputation straight from the definitions.
fn brute_social(sample: &TrajectorySample, n_theta: usize) -> (Vec<[f64; 3]>, Vec<usize>) {
    let target = *sample.observed.last().unwrap();
    let mut groups: Vec<Vec<(f64, f64, Option<f64>)>> = vec![vec![]; n_theta];
    for nb in &sample.neighbors {
        let obs = &nb.observed;
        let last = obs[obs.len() - 1];
        let rel = last - target;
        let mut angle = rel.y.atan2(rel.x);
        if angle < 0.0 {
            angle += TAU;
        }
        let j = ((angle / TAU * n_theta as f64) as usize).min(n_theta - 1);
        let mut speed = 0.0;
        for t in 1..obs.len() {
            speed += ((obs[t].x - obs[t - 1].x).powi(2) + (obs[t].y - obs[t - 1].y).powi(2)).sqrt();
        }
        speed /= (obs.len() - 1) as f64;
        let step = last - obs[obs.len() - 2];
        let heading = (step.x != 0.0 || step.y != 0.0).then(|| step.y.atan2(step.x));
        groups[j].push((speed, (rel.x * rel.x + rel.y * rel.y).sqrt(), heading));
    }
    let rows = groups
        .iter()
        .map(|g| {
            if g.is_empty() {
                return [0.0; 3];
            }
            let n = g.len() as f64;
            let (s, c) = g
                .iter()
                .filter_map(|x| x.2)
                .fold((0.0, 0.0), |(s, c), h| (s + h.sin(), c + h.cos()));
            let mut dir = if s == 0.0 && c == 0.0 { 0.0 } else { s.atan2(c) };
            if dir < 0.0 {
                dir += TAU;
            }
            [
                g.iter().map(|x| x.0).sum::<f64>() / n,
                g.iter().map(|x| x.1).sum::<f64>() / n,
                dir,
            ]
        })
        .collect();
    (rows, groups.iter().map(Vec::len).collect())
}

#[test]
fn social_circle_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n_theta in [1, 4, 8, 12] {
        for _ in 0..50 {
            let s = random_sample(&mut rng, 10);
            let spec = CircleSpec {
                n_theta,
                ..CircleSpec::default()
            };
            let ids: Vec<usize> = (0..10).collect();
            let rep = social_circle(&s, &ids, &spec);
            let (rows, counts) = brute_social(&s, n_theta);
            assert_eq!(rep.counts, counts);
            for (a, b) in rep.rows.iter().zip(&rows) {
                assert!((a[0] - b[0]).abs() < 1e-12);
                assert!((a[1] - b[1]).abs() < 1e-12);
                assert!(angle_distance(a[2], b[2]) < 1e-12);
                assert!((0.0..TAU).contains(&a[2]));
            }
        }
    }
}

#[test]
fn physical_circle_matches_dense_scan_east_block() {
    // Blocked rectangle east of the target: x ∈ [3, 5], y ∈ [-1, 1].
    let cells = 200;
    let values: Vec<f64> = (0..cells * cells)
        .map(|i| {
            let (r, c) = (i / cells, i % cells);
            let x = (r as f64 + 0.5) * 0.1 - 10.0;
            let y = (c as f64 + 0.5) * 0.1 - 10.0;
            if (3.0..=5.0).contains(&x) && (-1.0..=1.0).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let map = SegmentationMap::new(cells, cells, values, [1.0, 1.0]).unwrap();
    let env = Environment::new(
        map,
        AffineCalib::new(Vec2::new(10.0, 10.0), Vec2::new(100.0, 100.0)).unwrap(),
    );
    // Displacement 3 → radius 6.
    let s = sample_with(
        (0..4).map(|t| Vec2::new(0.0, t as f64 - 3.0)).collect(),
        vec![],
    );
    let spec = CircleSpec {
        n_theta: 4,
        n_ray: 16,
        n_rad: 24,
        ..CircleSpec::default()
    };
    let rep = physical_circle(&s, &env, &spec);
    assert_eq!(rep.radius, 6.0);
    assert_eq!(scan_radius(&s, &spec), 6.0);

    // Independent oracle: walk every sample point and test the rectangle.
    let blocked = |p: Vec2| (3.0..=5.0).contains(&p.x) && (-1.0..=1.0).contains(&p.y);
    for j in 0..4 {
        let pts = scan_points(&spec, j, 6.0);
        let hits: Vec<&(f64, f64)> = pts
            .iter()
            .filter(|(a, r)| blocked(Vec2::new(r * a.cos(), r * a.sin())))
            .collect();
        let row = rep.rows[j];
        if j == 0 {
            assert!(row[0] > 0.0);
            let min_r = hits.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
            assert!((row[1] - min_r).abs() < 1e-12, "{} vs {min_r}", row[1]);
            // obstruction is the blocked fraction (cells are 0/1, centers
            // differ from the exact rectangle only on its boundary)
            let frac = hits.len() as f64 / pts.len() as f64;
            assert!((row[0] - frac).abs() <= 2.0 / pts.len() as f64);
        } else if j == 3 {
            // the rectangle straddles angle 0, so partition 3 sees it too
            assert!(row[0] > 0.0);
        } else {
            assert_eq!(row, [0.0, 6.0, 0.0]);
        }
    }
}

#[test]
fn physical_circle_rect_strictly_inside_partition_zero() {
    let cells = 100;
    let values: Vec<f64> = (0..cells * cells)
        .map(|i| {
            let (r, c) = (i / cells, i % cells);
            let (x, y) = (r as f64 - 50.0 + 0.5, c as f64 - 50.0 + 0.5);
            if (3.0..=6.0).contains(&x) && (0.5..=2.0).contains(&y) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let env = Environment::new(
        SegmentationMap::new(cells, cells, values, [1.0, 1.0]).unwrap(),
        AffineCalib::new(Vec2::new(1.0, 1.0), Vec2::new(50.0, 50.0)).unwrap(),
    );
    let s = sample_with(vec![Vec2::new(-4.0, 0.0), Vec2::ZERO], vec![]);
    let spec = CircleSpec {
        n_theta: 4,
        ..CircleSpec::default()
    };
    let rep = physical_circle(&s, &env, &spec);
    assert!(rep.rows[0][0] > 0.0);
    for j in 1..4 {
        assert_eq!(rep.rows[j], [0.0, 8.0, 0.0]);
    }
}

#[test]
fn all_blocked_map_gives_full_obstruction() {
    let env = Environment::new(
        SegmentationMap::filled(10, 10, 1.0, [1.0, 1.0]).unwrap(),
        AffineCalib::identity(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n_theta in 1..=12 {
        let s = random_sample(&mut rng, 0);
        let rep = physical_circle(
            &s,
            &env,
            &CircleSpec {
                n_theta,
                ..CircleSpec::default()
            },
        );
        assert!(rep.rows.iter().all(|r| r[0] == 1.0));
    }
}

#[test]
fn encoder_matches_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let d_sc = rng.random_range(1..8);
        let rep = SocialCircleRep {
            rows: (0..6)
                .map(|_| [rng.random_range(0.0..2.0), rng.random_range(0.0..9.0), rng.random_range(0.0..TAU)])
                .collect(),
            counts: (0..6).map(|_| rng.random_range(0..3)).collect(),
        };
        let params = EncoderParams {
            weight: (0..3 * d_sc).map(|_| rng.random_range(-1.0..1.0)).collect(),
            bias: (0..d_sc).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let f = encode(&rep, &params, d_sc, [true; 3]).unwrap();
        assert_eq!(f.shape(), (6, d_sc));
        for j in 0..6 {
            for o in 0..d_sc {
                let expect = if rep.counts[j] == 0 {
                    0.0
                } else {
                    let x = rep.rows[j];
                    (params.weight[3 * o] * x[0]
                        + params.weight[3 * o + 1] * x[1]
                        + params.weight[3 * o + 2] * x[2]
                        + params.bias[o])
                        .tanh()
                };
                assert!((f.row(j)[o] - expect).abs() < 1e-15);
            }
        }
    }
}

fn dyadic() -> impl Strategy<Value = f64> {
    (-512i32..512).prop_map(|v| v as f64 / 8.0)
}

fn dyadic_vec() -> impl Strategy<Value = Vec2> {
    (dyadic(), dyadic()).prop_map(|(x, y)| Vec2::new(x, y))
}

fn track() -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec(dyadic_vec(), 8)
}

fn arb_sample() -> impl Strategy<Value = TrajectorySample> {
    (track(), prop::collection::vec(track(), 0..12))
        .prop_map(|(observed, neighbors)| sample_with(observed, neighbors))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn translation_leaves_social_circle_unchanged(s in arb_sample(), shift in dyadic_vec(), n_theta in 1usize..16) {
        let spec = CircleSpec { n_theta, ..CircleSpec::default() };
        let ids: Vec<usize> = (0..s.neighbors.len()).collect();
        let moved = s.map_positions(|p| p + shift);
        prop_assert_eq!(social_circle(&s, &ids, &spec), social_circle(&moved, &ids, &spec));
    }

    #[test]
    fn rotation_shifts_partitions(seed in any::<u64>(), n_theta in 1usize..16, m in 0usize..16) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(0..12);
        let s = random_sample(&mut rng, n);
        let spec = CircleSpec { n_theta, ..CircleSpec::default() };
        let ids: Vec<usize> = (0..s.neighbors.len()).collect();
        let angle = TAU * m as f64 / n_theta as f64;
        let rotated = s.map_positions(|p| p.rotate(angle));
        let a = social_circle(&s, &ids, &spec);
        let b = social_circle(&rotated, &ids, &spec);
        for j in 0..n_theta {
            let k = (j + m) % n_theta;
            prop_assert_eq!(a.counts[j], b.counts[k]);
            prop_assert!((a.rows[j][0] - b.rows[k][0]).abs() < 1e-9);
            prop_assert!((a.rows[j][1] - b.rows[k][1]).abs() < 1e-9);
            if a.counts[j] > 0 && a.rows[j][2] != 0.0 {
                prop_assert!(angle_distance(a.rows[j][2] + angle, b.rows[k][2]) < 1e-9);
            }
        }
    }

    #[test]
    fn every_neighbor_lands_in_one_partition(s in arb_sample(), n_theta in 1usize..24) {
        let spec = CircleSpec { n_theta, ..CircleSpec::default() };
        let ids: Vec<usize> = (0..s.neighbors.len()).collect();
        let rep = social_circle(&s, &ids, &spec);
        prop_assert_eq!(rep.counts.iter().sum::<usize>(), s.neighbors.len());
        for (r, &c) in rep.rows.iter().zip(&rep.counts) {
            if c == 0 {
                prop_assert_eq!(*r, [0.0; 3]);
            }
            prop_assert!((0.0..TAU).contains(&r[2]));
        }
    }

    #[test]
    fn partition_index_in_range(angle in -1e6f64..1e6, n_theta in 1usize..64) {
        let j = partition_index(angle, n_theta);
        prop_assert!(j < n_theta);
    }

    #[test]
    fn hard_fusion_is_exact_addition(fs in prop::collection::vec(-1.0f64..1.0, 12), fp in prop::collection::vec(-1.0f64..1.0, 12)) {
        let a = FeatureSeq::from_data(4, 3, fs).unwrap();
        let b = FeatureSeq::from_data(4, 3, fp).unwrap();
        let (f, gates) = fuse_with_gates(&a, &b, &FusionParams::hard()).unwrap();
        for i in 0..12 {
            // bitwise the sum; the difference recovers f_p up to one rounding
            prop_assert_eq!(f.data[i], a.data[i] + b.data[i]);
            prop_assert!((f.data[i] - a.data[i] - b.data[i]).abs() <= 1e-15);
        }
        prop_assert!(gates.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn adaptive_gates_stay_in_unit_interval(fs in prop::collection::vec(-1.0f64..1.0, 12), fp in prop::collection::vec(-1.0f64..1.0, 12), u in prop::collection::vec(-50.0f64..50.0, 6), c in -50.0f64..50.0) {
        let a = FeatureSeq::from_data(4, 3, fs).unwrap();
        let b = FeatureSeq::from_data(4, 3, fp).unwrap();
        let (_, gates) = fuse_with_gates(&a, &b, &FusionParams::adaptive(u, c)).unwrap();
        prop_assert!(gates.iter().all(|&g| (0.0..=1.0).contains(&g)));
    }
}
