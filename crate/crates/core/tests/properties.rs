use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use satl_core::eval::{argmin, roc_auc};
use satl_core::masked_l2;
use satl_core::numcore::euclidean;

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 2..12)
}

proptest! {
    #[test]
    fn argmin_survives_monotone_transforms(s in scores()) {
        let t: Vec<f64> = s.iter().map(|x| x * x * x + 3.0 * x).collect();
        let e: Vec<f64> = s.iter().map(|x| (x / 10.0).exp()).collect();
        prop_assert_eq!(argmin(&s), argmin(&t));
        prop_assert_eq!(argmin(&s), argmin(&e));
    }

    #[test]
    fn auc_survives_monotone_transforms(s in scores(), bits in prop::collection::vec(any::<bool>(), 12)) {
        let labels: Vec<bool> = (0..s.len()).map(|i| bits[i]).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let a = roc_auc(&s, &labels).unwrap();
        let t: Vec<f64> = s.iter().map(|x| 2.0 * x + 7.0).collect();
        prop_assert_eq!(a, roc_auc(&t, &labels).unwrap());
        let flipped: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((roc_auc(&flipped, &labels).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn unit_mask_distance_is_euclidean(a in prop::collection::vec(-10.0f64..10.0, 1..16), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
        let ones = vec![1.0; a.len()];
        prop_assert_eq!(masked_l2(&a, &b, &ones).unwrap(), euclidean(&a, &b).unwrap());
    }
}

#[test]
fn random_labels_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let scores: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        let auc = roc_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.05, "{auc}");
    }
}
