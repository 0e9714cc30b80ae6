//! Property tests over scoring, selection, the bandit policy and data splits.

use std::collections::BTreeSet;

use placebocil_core::data::{rebuild_local_env, split_phases, CandidateBuffer, Dataset, PhaseSchedule, Sample};
use placebocil_core::memory::{select_exemplars, ExemplarStrategy};
use placebocil_core::nn::loss::softmax;
use placebocil_core::nn::{Activation, Dense, Matrix, Model};
use placebocil_core::placebo::{refill_placebos, score_feature, Action, PrototypeSet, ScoreDirection};
use placebocil_core::policy::PolicyState;
use proptest::collection::vec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIM: usize = 3;

fn feature() -> impl Strategy<Value = Vec<f64>> {
    vec(-3.0f64..3.0, DIM)
}

fn protos() -> impl Strategy<Value = PrototypeSet> {
    (vec(feature(), 1..4), vec(feature(), 1..3)).prop_map(|(old, new)| PrototypeSet { old, new, snapshot: 0 })
}

fn identity_model(classes: usize) -> Model {
    let ex = Dense::new(Matrix::identity(DIM), vec![0.0; DIM], Activation::Identity).unwrap();
    let head = Dense::new(Matrix::zeros(classes, DIM), vec![0.0; classes], Activation::Identity).unwrap();
    Model::new(vec![ex], head).unwrap()
}

fn labeled(counts: &[usize]) -> Dataset {
    let mut samples = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let id = samples.len() as u64;
            samples.push(Sample::labeled(id, vec![id as f64], c));
        }
    }
    Dataset::new(1, samples).unwrap()
}

proptest! {
    #[test]
    fn score_is_affine_in_the_action(f in feature(), p in protos(), b in 0.0f64..3.0, g in 0.0f64..3.0) {
        let s = |b, g| score_feature(&f, 0, &p, Action::new(b, g)).unwrap();
        let base = s(0.0, 0.0);
        let predicted = base + b * (s(1.0, 0.0) - base) + g * (s(0.0, 1.0) - base);
        prop_assert!((s(b, g) - predicted).abs() < 1e-9);
        prop_assert!(s(b, g).abs() <= 1.0 + b + g + 1e-12);
    }

    #[test]
    fn chosen_scores_never_exceed_rejected(p in protos(), feats in vec(feature(), 4..12), b in 0.0f64..2.0, g in 0.0f64..2.0) {
        let action = Action::new(b, g);
        let k = feats.len() / (p.old.len() + 1);
        prop_assume!(k >= 1);
        let u = CandidateBuffer {
            samples: feats.iter().enumerate().map(|(i, f)| Sample::unlabeled(i as u64, f.clone())).collect(),
        };
        let buf = refill_placebos(&u, &p, action, k, &identity_model(p.old.len()), ScoreDirection::Lowest).unwrap();
        let first: BTreeSet<u64> = buf.entries().filter(|e| e.class == Some(0)).map(|e| e.sample.id).collect();
        prop_assert_eq!(first.len(), k);
        let score = |i: usize| score_feature(&feats[i], 0, &p, action).unwrap();
        let worst_chosen = first.iter().map(|&i| score(i as usize)).fold(f64::MIN, f64::max);
        for i in (0..feats.len()).filter(|i| !first.contains(&(*i as u64))) {
            prop_assert!(score(i) >= worst_chosen);
        }
        let all: BTreeSet<u64> = buf.entries().map(|e| e.sample.id).collect();
        prop_assert_eq!(all.len(), buf.len());
    }

    #[test]
    fn weights_stay_positive_and_finite(
        n in 1usize..6,
        updates in vec((0usize..6, 0.0f64..=1.0), 0..400),
        xi in 0.01f64..1.0,
    ) {
        let mut s = PolicyState::new(n, xi, 0.01).unwrap();
        for (arm, r) in updates {
            let arm = arm % n;
            let p = s.distribution()[arm];
            s.update(arm, r, p).unwrap();
            prop_assert!(s.weights().iter().all(|w| w.is_finite() && *w > 0.0));
            let total: f64 = s.distribution().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn distribution_ignores_weight_scale(w in vec(0.01f64..100.0, 1..6), c in 0.001f64..1000.0) {
        let a = PolicyState::from_weights(w.clone(), 0.1, 0.0).unwrap().distribution();
        let b = PolicyState::from_weights(w.iter().map(|x| x * c).collect(), 0.1, 0.0).unwrap().distribution();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reward_never_lowers_the_rewarded_arm(w in vec(0.1f64..10.0, 2..6), arm in 0usize..6, r in 0.0f64..=1.0, floor in 0.0f64..0.2) {
        let arm = arm % w.len();
        let mut s = PolicyState::from_weights(w, 0.2, floor).unwrap();
        let before = s.distribution();
        s.update(arm, r, before[arm]).unwrap();
        let after = s.distribution();
        prop_assert!(after[arm] >= before[arm] - 1e-12);
        for (i, (a, b)) in after.iter().zip(&before).enumerate() {
            if i != arm {
                prop_assert!(*a <= b + 1e-12);
            }
        }
    }

    #[test]
    fn phases_partition_the_dataset(per_phase in 1usize..4, phases in 1usize..5, sizes in vec(1usize..6, 16)) {
        let classes = per_phase * phases;
        let data = labeled(&sizes[..classes]);
        let schedule = PhaseSchedule::uniform(per_phase, phases).unwrap();
        let parts = split_phases(&data, &schedule).unwrap();
        prop_assert_eq!(parts.len(), phases);
        let mut ids = Vec::new();
        for (i, part) in parts.iter().enumerate() {
            let range = schedule.new_classes(i);
            prop_assert!(part.iter().all(|s| range.contains(&s.label.unwrap())));
            ids.extend(part.ids());
        }
        ids.sort_unstable();
        prop_assert_eq!(ids, data.ids());
    }

    #[test]
    fn local_env_is_a_disjoint_cover(sizes in vec(2usize..9, 1..5), s in 1usize..8, seed in any::<u64>()) {
        let data = labeled(&sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let result = rebuild_local_env(&data, s, &mut rng);
        if s >= *sizes.iter().min().unwrap() {
            prop_assert!(result.is_err());
            return Ok(());
        }
        let env = result.unwrap();
        prop_assert_eq!(env.validation.len(), s * sizes.len());
        let v: BTreeSet<u64> = env.validation.ids().into_iter().collect();
        let t: BTreeSet<u64> = env.train.ids().into_iter().collect();
        prop_assert!(v.is_disjoint(&t));
        prop_assert_eq!(v.len() + t.len(), data.len());
    }

    #[test]
    fn herding_is_prefix_consistent(feats in vec(feature(), 3..15), cap in 1usize..14, seed in any::<u64>()) {
        let class: Vec<Sample> = feats.into_iter().enumerate().map(|(i, f)| Sample::labeled(i as u64, f, 0)).collect();
        let cap = cap.min(class.len() - 2);
        let model = identity_model(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let short = select_exemplars(&model, &class, cap, ExemplarStrategy::Herding, &mut rng).unwrap();
        let long = select_exemplars(&model, &class, cap + 1, ExemplarStrategy::Herding, &mut rng).unwrap();
        let short_ids: Vec<u64> = short.iter().map(|s| s.id).collect();
        let long_ids: Vec<u64> = long.iter().map(|s| s.id).collect();
        prop_assert_eq!(&short_ids[..], &long_ids[..cap]);
        let unique: BTreeSet<u64> = long_ids.iter().copied().collect();
        prop_assert_eq!(unique.len(), long_ids.len());
    }

    #[test]
    fn softmax_is_a_distribution(row in vec(-500.0f64..500.0, 1..10)) {
        let p = softmax(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
    }
}
