use std::collections::BTreeMap;

use nanosat_core::ai::{
    accuracy, finetune, gradient, gt_factory, is_cloudy, loss, predict, CloudModel, FeatureVector, GtRequest,
    TrainConfig, CLOUDY_FRACTION, FEATURES,
};
use nanosat_core::mission::synthetic_feature_set;
use nanosat_core::scenegen::{SceneConfig, SceneTruth};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn features() -> impl Strategy<Value = FeatureVector<f64>> {
    proptest::array::uniform16(-1.0f64..1.0).prop_map(|mut f| {
        for v in f.iter_mut().take(8) {
            *v = (*v + 1.0) * 127.5;
        }
        f[15] = 1.0;
        f
    })
}

fn batch() -> impl Strategy<Value = Vec<(FeatureVector<f64>, bool)>> {
    proptest::collection::vec((features(), any::<bool>()), 1..24)
}

fn weights() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0f64..3.0, FEATURES)
}

#[test]
fn label_noise_rate_is_honoured() {
    let truths: BTreeMap<u64, SceneTruth> =
        (0..10_000u64).map(|s| (s, SceneTruth::from_mask((0..20).map(|i| i < s % 20).collect(), s))).collect();
    let reqs: Vec<GtRequest> = (0..10_000).map(|s| GtRequest { asset_id: s, seed: s }).collect();
    let (labels, missing) = gt_factory(&reqs, &truths, 0.07, 11);
    assert!(missing.is_empty());
    let flipped = labels.iter().filter(|l| l.cloudy != (truths[&l.asset_id].cloud_fraction > CLOUDY_FRACTION)).count();
    let rate = flipped as f64 / labels.len() as f64;
    assert!((rate - 0.07).abs() <= 0.01, "flip rate {rate}");
}

#[test]
fn finetune_is_deterministic() {
    let set = synthetic_feature_set(40, 5, 32, 0.3, &SceneConfig::default()).unwrap();
    let cfg = TrainConfig::default();
    let a = finetune(&CloudModel::zeros(), &set, &cfg).unwrap();
    let b = finetune(&CloudModel::zeros(), &set, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.version, 1);
    assert_eq!(a.trained_on, 40);
}

#[test]
fn model_trained_at_the_operational_threshold_is_accurate() {
    let scene = SceneConfig::default();
    let train = synthetic_feature_set(200, 0x9E_F117, 32, CLOUDY_FRACTION, &scene).unwrap();
    let eval = synthetic_feature_set(150, 77, 32, CLOUDY_FRACTION, &scene).unwrap();
    let cfg = TrainConfig { learning_rate: 1.0, epochs: 200, ..TrainConfig::default() };
    let m = finetune(&CloudModel::zeros(), &train, &cfg).unwrap();
    let acc = accuracy(&m, &eval).unwrap();
    assert!(acc >= 0.85, "accuracy {acc}");
}

/// Accuracy gained, for each of 20 seeds, by fine-tuning a model
/// pretrained against a shifted labelling threshold on noisy labels drawn
/// at the operational threshold.
fn finetune_gains() -> Vec<f64> {
    let scene = SceneConfig::default();
    let pre_cfg = TrainConfig { learning_rate: 1.0, epochs: 200, ..TrainConfig::default() };
    (0..20u64)
        .map(|seed| {
            let pre = synthetic_feature_set(200, 1000 + seed, 32, 0.6, &scene).unwrap();
            let eval = synthetic_feature_set(150, 2000 + seed, 32, CLOUDY_FRACTION, &scene).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
            let labelled: Vec<_> = synthetic_feature_set(60, 4000 + seed, 32, CLOUDY_FRACTION, &scene)
                .unwrap()
                .into_iter()
                .map(|(x, y)| (x, y != rng.random_bool(0.07)))
                .collect();
            let base = finetune(&CloudModel::zeros(), &pre, &pre_cfg).unwrap();
            let tuned = finetune(&base, &labelled, &TrainConfig { seed, ..TrainConfig::default() }).unwrap();
            accuracy(&tuned, &eval).unwrap() - accuracy(&base, &eval).unwrap()
        })
        .collect()
}

#[test]
fn finetuning_on_ground_labels_improves_median_accuracy() {
    let mut gains = finetune_gains();
    gains.sort_by(f64::total_cmp);
    let median = (gains[9] + gains[10]) / 2.0;
    assert!(median >= 0.03, "median gain {median}, gains {gains:?}");
}

proptest! {
    #[test]
    fn gradient_matches_central_differences(w in weights(), b in batch(), l2 in 0.0f64..0.01) {
        let g = gradient(&w, &b, l2);
        let h = 1e-5;
        for i in 0..FEATURES {
            let mut up = w.clone();
            let mut down = w.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (loss(&up, &b, l2) - loss(&down, &b, l2)) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6, "weight {}: analytic {} numeric {}", i, g[i], fd);
        }
    }

    #[test]
    fn decision_is_invariant_to_positive_weight_scaling(w in weights(), x in features(), c in 0.01f64..100.0) {
        let m = CloudModel { weights: w.clone(), ..CloudModel::zeros() };
        let scaled = CloudModel { weights: w.iter().map(|v| v * c).collect(), ..CloudModel::zeros() };
        let p = predict(&m, &x).unwrap();
        prop_assume!((p - 0.5).abs() > 1e-9);
        prop_assert_eq!(is_cloudy(p), is_cloudy(predict(&scaled, &x).unwrap()));
    }

    #[test]
    fn model_bytes_round_trip(w in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), FEATURES), version in any::<u32>()) {
        let m = CloudModel { weights: w, version, ..CloudModel::zeros() };
        let bytes = m.to_bytes().unwrap();
        prop_assert_eq!(bytes.len(), m.serialized_len());
        let back = CloudModel::<f64>::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.weights, m.weights);
        prop_assert_eq!(back.version, version);
        prop_assert!(CloudModel::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn a_gradient_step_does_not_raise_the_loss(w in weights(), b in batch()) {
        let g = gradient(&w, &b, 1e-4);
        let stepped: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - 1e-3 * gi).collect();
        prop_assert!(loss(&stepped, &b, 1e-4) <= loss(&w, &b, 1e-4) + 1e-12);
    }
}
