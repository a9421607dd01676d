mod common;

use common::*;
use hodn::evaluation::{detection_metrics, pairwise_nms, role_map};
use hodn::training::hungarian_match;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn role_map_matches_oracle(seed in any::<u64>(), thr in 0.3..0.9f64) {
        let (preds, gts) = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let got = role_map(&preds, &gts, 2, thr).unwrap();
        let (per, mean) = role_oracle(&preds, &gts, 2, thr);
        for (a, b) in got.per_action.iter().zip(&per) {
            prop_assert!(close(*a, *b), "{:?} vs {:?}", got, per);
        }
        prop_assert!(close(got.mean_ap, mean));
        prop_assert!(got.per_action.iter().flatten().all(|ap| (0.0..=1.0).contains(ap)));
    }

    #[test]
    fn detection_matches_oracle(seed in any::<u64>()) {
        let (preds, gts) = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let (h, o) = detection_metrics(&preds, &gts, 0.5).unwrap();
        for (r, objects) in [(h, false), (o, true)] {
            let (recall, precision, map) = detection_oracle(&preds, &gts, 0.5, objects);
            prop_assert!(close(r.recall, recall) && close(Some(r.precision), Some(precision)) && close(r.map, map));
        }
    }

    #[test]
    fn metrics_ignore_prediction_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (preds, gts) = random_case(&mut rng);
        let mut shuffled = preds.clone();
        shuffled.shuffle(&mut rng);
        prop_assert_eq!(role_map(&preds, &gts, 2, 0.5).unwrap(), role_map(&shuffled, &gts, 2, 0.5).unwrap());
        prop_assert_eq!(detection_metrics(&preds, &gts, 0.5).unwrap(), detection_metrics(&shuffled, &gts, 0.5).unwrap());
    }

    #[test]
    fn nms_matches_oracle(seed in any::<u64>(), thr in 0.3..=1.0f64) {
        let (preds, _) = random_case(&mut ChaCha8Rng::seed_from_u64(seed));
        let kept = pairwise_nms(&preds, thr).unwrap();
        prop_assert_eq!(&kept, &nms_oracle(&preds, thr));
        prop_assert!(kept.iter().all(|k| preds.contains(k)));
    }

    #[test]
    fn hungarian_matches_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..=6);
        let g = rng.gen_range(0..=n);
        let cost: Vec<Vec<f64>> = (0..g).map(|_| (0..n).map(|_| rng.gen_range(-2.0..5.0)).collect()).collect();
        let m = hungarian_match(&cost).unwrap();
        prop_assert!((m.total_cost - brute_force_min_cost(&cost)).abs() < 1e-9);
    }
}
