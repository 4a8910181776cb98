use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maskdistill::dataio::{decode_mask_rle, encode_mask_rle, Tensor};
use maskdistill::distill::{hungarian_match, CostMatrix};
use maskdistill::fields::{render_ray, sample_ray, Aabb, CameraModel, GridField, SampleWeight};
use maskdistill::inference::{nms, query_probs, relevance, QueryConfig, TextEmbeddingSet};
use maskdistill::metrics::{miou, Evaluator};

fn labels(len: usize, classes: i32) -> impl Strategy<Value = Vec<i32>> {
    prop::collection::vec(-1..classes, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ray_weights_are_a_sub_partition(seed in any::<u64>(), lo in -5.0f64..0.0, hi in 0.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut grid = GridField::initialized([6; 3], Aabb::cube(0.5), 2, 0.0, 0.5, &mut rng).unwrap();
        grid.density.iter_mut().for_each(|d| *d = rng.random_range(lo..=hi));
        let eye = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 2.0];
        let cam = CameraModel::look_at(eye, [0.0; 3], [0.0, 1.0, 0.0], 6.0, 6, 6, 0.2, 5.0).unwrap();
        let samples = sample_ray(cam.near(), cam.far(), 32, true, &mut rng);
        let (out, w) = render_ray(&grid, &cam.ray(rng.random_range(0..6), rng.random_range(0..6)), &samples);
        prop_assert!(w.iter().all(|s| (0.0..=1.0).contains(&s.alpha)));
        prop_assert!(w.windows(2).all(|p| p[1].transmittance <= p[0].transmittance));
        let sum: f64 = w.iter().map(SampleWeight::weight).sum();
        prop_assert!(sum <= 1.0 + 1e-9);
        prop_assert!((out.accum_opacity - sum).abs() < 1e-9);
        prop_assert!((0.0..=1.0 + 1e-9).contains(&out.accum_opacity));
    }

    #[test]
    fn miou_is_symmetric(a in labels(40, 4), b in labels(40, 4)) {
        prop_assert_eq!(miou(&a, &b, 4).unwrap(), miou(&b, &a, 4).unwrap());
    }

    #[test]
    fn miou_ignores_class_names(a in labels(40, 4), b in labels(40, 4), perm in Just([0i32, 1, 2, 3]).prop_shuffle()) {
        let relabel = |m: &[i32]| m.iter().map(|&c| if c < 0 { c } else { perm[c as usize] }).collect::<Vec<_>>();
        let (per, mean) = miou(&a, &b, 4).unwrap();
        let (per2, mean2) = miou(&relabel(&a), &relabel(&b), 4).unwrap();
        for c in 0..4 {
            prop_assert_eq!(per[c], per2[perm[c] as usize]);
        }
        prop_assert!((mean - mean2).abs() < 1e-12);
    }

    #[test]
    fn pooled_metrics_ignore_view_order(views in prop::collection::vec((labels(30, 3), labels(30, 3)), 1..6)) {
        let run = |order: &mut dyn Iterator<Item = &(Vec<i32>, Vec<i32>)>| {
            let mut ev = Evaluator::new(3, 1);
            for (p, g) in order {
                ev.add_view(p, g, 5, 6).unwrap();
            }
            ev.report(&["a".into(), "b".into(), "c".into()])
        };
        prop_assert_eq!(run(&mut views.iter()), run(&mut views.iter().rev()));
    }

    #[test]
    fn nms_keeps_a_distinct_subset(
        probs in prop::collection::vec(0.0f64..1.0, 6 * 20),
        scores in prop::collection::vec(0.0f64..1.0, 6),
        thresh in 0.1f64..0.95,
    ) {
        let kept = nms(&probs, 20, &scores, thresh).unwrap();
        let mut sorted = kept.clone();
        sorted.sort_unstable();
        sorted.dedup();
        prop_assert_eq!(sorted.len(), kept.len());
        prop_assert!(kept.iter().all(|&i| i < 6));
    }

    #[test]
    fn relevance_columns_sum_to_one(seed in any::<u64>(), n_k in 1usize..7, tau in 0.05f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_s = 5;
        let mut unit = || {
            let v: Vec<f64> = (0..d_s).map(|_| rng.random_range(-1.0..1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let sem: Vec<f64> = (0..n_k).flat_map(|_| unit()).collect();
        let texts = TextEmbeddingSet::new(vec!["x".into(), "y".into(), "z".into()], (0..3).map(|_| unit()).collect()).unwrap();
        let p = relevance(&sem, d_s, &texts, tau).unwrap();
        for c in 0..3 {
            let col: f64 = (0..n_k).map(|i| p[i * 3 + c]).sum();
            prop_assert!((col - 1.0).abs() < 1e-9, "column {} sums to {}", c, col);
        }
    }

    #[test]
    fn stricter_query_lights_fewer_pixels(
        probs in prop::collection::vec(0.0f64..1.0, 4 * 16),
        rel in prop::collection::vec(0.0f64..1.0, 4),
        t1 in 0.0f64..1.0,
        t2 in 0.0f64..1.0,
        k in 1usize..4,
    ) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let cfg = |t| QueryConfig { rel_thresh: t, min_relevance: 0.0, smooth_k: k, ..QueryConfig::default() };
        let loose = query_probs(4, 4, &probs, rel.clone(), &cfg(lo)).unwrap();
        let strict = query_probs(4, 4, &probs, rel, &cfg(hi)).unwrap();
        prop_assert!(strict.mask.iter().zip(&loose.mask).all(|(&s, &l)| !s || l));
    }

    #[test]
    fn tensors_round_trip(dims in prop::collection::vec(1usize..5, 0..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = Tensor::f64(dims.clone(), (0..n).map(|_| rng.random_range(-1e6..1e6)).collect());
        prop_assert_eq!(Tensor::decode(&f.encode()).unwrap(), f);
        let i = Tensor::i32(dims, (0..n).map(|_| rng.random()).collect());
        prop_assert_eq!(Tensor::decode(&i.encode()).unwrap(), i);
    }

    #[test]
    fn rle_round_trips(h in 1usize..12, w in 1usize..12, seed in any::<u64>(), density in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
        prop_assert_eq!(decode_mask_rle(&encode_mask_rle(&mask, h, w)).unwrap(), (h, w, mask));
    }

    #[test]
    fn hungarian_beats_random_assignments(seed in any::<u64>(), rows in 1usize..7, extra in 0usize..3) {
        let cols = rows.saturating_sub(extra).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(0.0..10.0)).collect();
        let cost = CostMatrix::new(rows, cols, data).unwrap();
        let best = hungarian_match(&cost).unwrap().total_cost;
        for _ in 0..20 {
            let mut order: Vec<usize> = (0..rows).collect();
            rand::seq::SliceRandom::shuffle(&mut order[..], &mut rng);
            let total: f64 = (0..cols).map(|t| cost.get(order[t], t)).sum();
            prop_assert!(best <= total + 1e-9);
        }
    }
}
