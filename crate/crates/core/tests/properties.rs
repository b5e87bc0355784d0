use beatssl_core::beats::{map_rpeak_to_frames, roi_pool, PoolReducer};
use beatssl_core::data::{BeatClass, Signal, N_LEADS};
use beatssl_core::loss::{ntxent, ntxent_oracle, Context, ProjectionBatch};
use beatssl_core::nn::{FeatureMap, PROJECTION_DIM};
use beatssl_core::pipeline::{Checkpoint, RunConfig};
use beatssl_core::stats::{auroc, bonferroni, dice, midranks, wilcoxon_signed_rank};
use beatssl_core::targets::{beat_hard_targets, hard_targets, soft1_targets, soft2_targets};
use beatssl_core::vcg::{rotate_vcg, AugmentDraw, AugmentParams, KorsTransform};
use beatssl_core::Exec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn signal(rows: usize, d: usize) -> impl Strategy<Value = Signal> {
    prop::collection::vec(-3.0f64..3.0, rows * d).prop_map(move |v| Signal::from_vec(rows, d, v).unwrap())
}

fn scores_and_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..40).prop_flat_map(|n| (prop::collection::vec(-5.0f64..5.0, n), prop::collection::vec(any::<bool>(), n)))
}

fn features() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..12, 2usize..5).prop_flat_map(|(n, f)| prop::collection::vec(prop::collection::vec(-4.0f64..4.0, f), n))
}

fn col_norms(s: &Signal) -> Vec<f64> {
    (0..s.samples()).map(|t| s.column(t).iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn auroc_invariant_to_monotone_maps((s, l) in scores_and_labels(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let base = auroc(&s, &l).unwrap();
        let mapped: Vec<f64> = s.iter().map(|x| (a * x + b).exp()).collect();
        let m = auroc(&mapped, &l).unwrap();
        prop_assert!((base.value - m.value).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&base.value));
        if !base.degenerate {
            let flipped: Vec<bool> = l.iter().map(|x| !x).collect();
            prop_assert!((auroc(&s, &flipped).unwrap().value - (1.0 - base.value)).abs() < 1e-12);
        }
    }

    #[test]
    fn midranks_sum_to_triangular(x in prop::collection::vec(prop::sample::select(vec![0.0, 1.0, 2.0, 2.5, 7.0]), 1..50)) {
        let n = x.len() as f64;
        prop_assert!((midranks(&x).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn dice_is_symmetric_and_bounded(
        pairs in prop::collection::vec((0u8..4, 0u8..4), 1..200),
        class in 0u8..4,
    ) {
        let (a, b): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
        let ab = dice(&a, &b, class).unwrap();
        prop_assert_eq!(ab, dice(&b, &a, class).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(dice(&a, &a, class).unwrap(), 1.0);
    }

    #[test]
    fn bonferroni_caps_and_scales(p in prop::collection::vec(0.0f64..=1.0, 1..20), extra in 0usize..10) {
        let m = p.len() + extra;
        let adj = bonferroni(&p, m).unwrap();
        for (raw, a) in p.iter().zip(&adj) {
            prop_assert!(*a >= *raw && *a <= 1.0);
            prop_assert!((*a - (raw * m as f64).min(1.0)).abs() < 1e-15);
        }
        if p.len() > 1 {
            prop_assert!(bonferroni(&p, p.len() - 1).is_err());
        }
    }

    #[test]
    fn wilcoxon_swap_keeps_p(pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..40)) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ab = wilcoxon_signed_rank(&a, &b).unwrap();
        let ba = wilcoxon_signed_rank(&b, &a).unwrap();
        prop_assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        prop_assert!(ab.p_value > 0.0 && ab.p_value <= 1.0);
        let n = ab.n as f64;
        prop_assert!((ab.w_plus + ba.w_plus - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn rhythm_targets_are_valid(f in features(), exponent in prop::sample::select(vec![1.0, 5.0, 50.0])) {
        let n = f.len();
        hard_targets(n).unwrap().validate(1e-9).unwrap();
        let s1 = soft1_targets(&f, exponent).unwrap();
        s1.validate(1e-9).unwrap();
        prop_assert_eq!(s1.size, 2 * n);
        let s2 = soft2_targets(&f, 2, 2.0).unwrap();
        s2.validate(1e-9).unwrap();
        for i in 0..n {
            prop_assert_eq!(s1.raw_at(i, i + n), 1.0);
            prop_assert_eq!(s2.raw_at(i, i + n), 1.0);
        }
    }

    #[test]
    fn beat_targets_pair_same_class(classes in prop::collection::vec(prop::sample::select(BeatClass::ALL.to_vec()), 2..30)) {
        let t = beat_hard_targets(&classes).unwrap();
        t.validate(1e-9).unwrap();
        let n = classes.len();
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    prop_assert_eq!(t.raw_at(i, k) > 0.0, classes[i] == classes[k]);
                }
            }
        }
    }

    #[test]
    fn kors_subspace_round_trip(x in signal(N_LEADS, 20)) {
        let k = KorsTransform::new();
        let vcg = k.ecg_to_vcg(&x).unwrap();
        let back = k.ecg_to_vcg(&k.vcg_to_ecg(&vcg).unwrap()).unwrap();
        let scale = vcg.frobenius_norm().max(1e-12);
        for (a, b) in vcg.as_slice().iter().zip(back.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn rotation_preserves_column_norms(
        v in signal(3, 30),
        theta in -180.0f64..180.0,
        axis in prop::array::uniform3(-1.0f64..1.0).prop_filter("nonzero axis", |a| a.iter().map(|x| x * x).sum::<f64>() > 1e-3),
    ) {
        let n = axis.iter().map(|x| x * x).sum::<f64>().sqrt();
        let unit = [axis[0] / n, axis[1] / n, axis[2] / n];
        let r = rotate_vcg(&v, theta, unit).unwrap();
        for (a, b) in col_norms(&v).iter().zip(col_norms(&r)) {
            prop_assert!((a - b).abs() <= 1e-9 * a.max(1e-12));
        }
    }

    #[test]
    fn noiseless_augment_stays_in_kors_space(x in signal(N_LEADS, 16), seed in any::<u64>()) {
        let k = KorsTransform::new();
        let params = AugmentParams { noise_sigma: 0.0, ..AugmentParams::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = k.augment(&x, &params, &mut rng).unwrap();
        let reproj = k.project(&out).unwrap();
        let scale = out.frobenius_norm().max(1e-12);
        let resid = out.as_slice().iter().zip(reproj.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        prop_assert!(resid <= 1e-9 * scale);

        let draw = AugmentDraw::sample(&params, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let pre = col_norms(&k.ecg_to_vcg(&x).unwrap());
        let post = col_norms(&k.ecg_to_vcg(&out).unwrap());
        for (a, b) in pre.iter().zip(post) {
            prop_assert!((a * draw.scale - b).abs() <= 1e-9 * a.max(1e-9));
        }
    }

    #[test]
    fn ntxent_nonnegative_and_scale_invariant(
        rows in (2usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(-1.0f64..1.0, PROJECTION_DIM), 2 * n)),
        scales in prop::collection::vec(0.1f64..10.0, 12),
        tau in 0.05f64..1.0,
    ) {
        let t = hard_targets(rows.len() / 2).unwrap();
        let batch = ProjectionBatch::new(rows.clone(), Context::Rhythm).unwrap();
        let l = ntxent(&batch, &t, tau).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!((l - ntxent_oracle(&rows, &t, tau).unwrap()).abs() <= 1e-9 * l.max(1.0));
        let scaled: Vec<Vec<f64>> = rows.iter().zip(&scales).map(|(r, s)| r.iter().map(|x| x * s).collect()).collect();
        let ls = ntxent(&ProjectionBatch::new(scaled, Context::Rhythm).unwrap(), &t, tau).unwrap();
        prop_assert!((l - ls).abs() <= 1e-9 * l.max(1.0));
    }

    #[test]
    fn frame_window_follows_shift(r in 0usize..4000, n in prop::sample::select(vec![128usize, 256, 512]), stride in prop::sample::select(vec![2usize, 4, 8, 16])) {
        let frames = 5000 / stride;
        let (a0, a1) = map_rpeak_to_frames(r, n, stride, frames);
        prop_assert!(a0 < a1 && a1 <= frames);
        let (b0, b1) = map_rpeak_to_frames(r + stride, n, stride, frames);
        // Interior windows move by exactly one frame per stride of shift.
        if r >= n / 2 && r + stride + n / 2 < stride * (frames - 1) {
            prop_assert_eq!((b0, b1), (a0 + 1, a1 + 1));
        }
    }

    #[test]
    fn roi_pool_within_channel_range(
        data in prop::collection::vec(-2.0f32..2.0, 4 * 20),
        start in 0usize..19,
        len in 1usize..20,
    ) {
        let map = FeatureMap { channels: 4, frames: 20, data };
        let end = (start + len).min(20);
        for reducer in [PoolReducer::Mean, PoolReducer::Max] {
            let pooled = roi_pool(&map, (start, end), reducer).unwrap();
            prop_assert_eq!(pooled.len(), 4);
            for (c, v) in pooled.iter().enumerate() {
                let w = &map.channel(c)[start..end];
                let lo = w.iter().cloned().fold(f32::INFINITY, f32::min);
                let hi = w.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                prop_assert!(*v >= lo - 1e-5 && *v <= hi + 1e-5);
            }
        }
        prop_assert!(roi_pool(&map, (start, start), PoolReducer::Mean).is_err());
    }

    #[test]
    fn checkpoint_bytes_round_trip(blobs in prop::collection::vec(prop::collection::vec(any::<f32>().prop_filter("finite", |x| x.is_finite()), 0..50), 1..4), epochs in 0usize..100, seed in any::<u64>()) {
        let config = RunConfig::desk();
        let ck = Checkpoint {
            config_hash: config.hash(),
            ablation: config.ablation(),
            config,
            epochs,
            seed,
            blobs: blobs.into_iter().enumerate().map(|(i, b)| (format!("blob{i}"), b)).collect(),
        };
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn exec_modes_agree(xs in prop::collection::vec(any::<i64>(), 0..200)) {
        let f = |x: &i64| x.wrapping_mul(31).rotate_left(7);
        prop_assert_eq!(Exec::Sequential.map(&xs, f), Exec::Parallel.map(&xs, f));
        prop_assert_eq!(Exec::Sequential.map_range(xs.len(), |i| i * i), Exec::Parallel.map_range(xs.len(), |i| i * i));
    }
}
