//! Independent oracles: brute-force selection, reference means, scalar
//! arithmetic and sampling statistics.

mod support;

use placebocil_core::data::{rebuild_local_env, CandidateBuffer, Dataset, Sample};
use placebocil_core::memory::{apply_strict_budget, select_exemplars, ExemplarStrategy};
use placebocil_core::nn::{Activation, Dense, Matrix, Model};
use placebocil_core::placebo::{
    baseline_select, compute_prototypes, evaluate, refill_placebos, score_feature, Action,
    PrototypeSet, ScoreDirection, Selection,
};
use placebocil_core::policy::{regret_harness, BanditSpec, PolicyState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::{
    exp3_error, identity_model, median, prototype_error, reference_forward, topk_matches_brute_force,
};

fn unlabeled(id: u64, f: &[f64]) -> Sample {
    Sample::unlabeled(id, f.to_vec())
}

fn random_samples(rng: &mut ChaCha8Rng, n: usize, dim: usize, label: Option<usize>, id0: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let f: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            match label {
                Some(l) => Sample::labeled(id0 + i as u64, f, l),
                None => Sample::unlabeled(id0 + i as u64, f),
            }
        })
        .collect()
}

#[test]
fn prototypes_match_reference_means() {
    for seed in 0..5 {
        let err = prototype_error(seed);
        assert!(err < 1e-12, "seed {seed}: {err}");
    }
}

#[test]
fn prototype_examples() {
    let model = identity_model(2, 2);
    let set = [
        Sample::labeled(0, vec![1.0, 0.0], 0),
        Sample::labeled(1, vec![0.0, 1.0], 0),
    ];
    let single = [Sample::labeled(2, vec![3.0, -1.0], 1)];
    let p = compute_prototypes(&model, &[&set, &single], &[]).unwrap();
    assert_eq!(p.old[0], vec![0.5, 0.5]);
    assert_eq!(p.old[1], vec![3.0, -1.0]);
    let err = compute_prototypes(&model, &[&set, &[]], &[]).unwrap_err();
    assert!(err.to_string().contains("class 1"), "{err}");
}

fn fixture() -> PrototypeSet {
    PrototypeSet {
        old: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        new: vec![vec![-1.0, 0.0]],
        snapshot: 0,
    }
}

#[test]
fn score_hand_arithmetic() {
    let p = fixture();
    let a = Action::new(1.0, 1.0);
    assert_eq!(score_feature(&[1.0, 0.0], 0, &p, a).unwrap(), -2.0);
    assert_eq!(score_feature(&[1.0, 0.0], 1, &p, a).unwrap(), 0.0);
    assert_eq!(score_feature(&[1.0, 0.0], 0, &p, Action::new(0.0, 0.0)).unwrap(), -1.0);
    let model = identity_model(2, 2);
    let s = unlabeled(9, &[2.0, 0.0]);
    assert_eq!(evaluate(&s, 0, &p, a, &model).unwrap(), -2.0);
    // Zero feature: every similarity is 0.
    assert_eq!(score_feature(&[0.0, 0.0], 0, &p, a).unwrap(), 0.0);
    // One old class: the beta term is empty.
    let one = PrototypeSet {
        old: vec![vec![1.0, 0.0]],
        new: vec![],
        snapshot: 0,
    };
    assert_eq!(score_feature(&[0.0, 1.0], 0, &one, Action::new(5.0, 5.0)).unwrap(), 0.0);
}

#[test]
fn refill_fixture() {
    let p = fixture();
    let r = std::f64::consts::FRAC_1_SQRT_2;
    let u = CandidateBuffer {
        samples: vec![unlabeled(0, &[1.0, 0.0]), unlabeled(1, &[0.0, 1.0]), unlabeled(2, &[r, r])],
    };
    let buf = refill_placebos(&u, &p, Action::new(1.0, 1.0), 1, &identity_model(2, 2), ScoreDirection::Lowest).unwrap();
    let picks: Vec<(Option<usize>, u64)> = buf.entries().map(|e| (e.class, e.sample.id)).collect();
    assert_eq!(picks, vec![(Some(0), 0), (Some(1), 1)]);
}

#[test]
fn single_class_exhaustive_refill_takes_everything() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = PrototypeSet {
        old: vec![vec![0.3, -0.2]],
        new: vec![vec![1.0, 1.0]],
        snapshot: 0,
    };
    let u = CandidateBuffer {
        samples: random_samples(&mut rng, 9, 2, None, 0),
    };
    let buf = refill_placebos(&u, &p, Action::new(0.5, 2.0), 9, &identity_model(2, 1), ScoreDirection::Lowest).unwrap();
    let mut ids: Vec<u64> = buf.entries().map(|e| e.sample.id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..9).collect::<Vec<_>>());
}

#[test]
fn refill_equals_brute_force() {
    for seed in 0..40 {
        assert!(topk_matches_brute_force(seed), "seed {seed}");
    }
}

#[test]
fn refill_underflow_is_reported() {
    let p = fixture();
    let u = CandidateBuffer {
        samples: vec![unlabeled(0, &[1.0, 0.0]), unlabeled(1, &[0.0, 1.0])],
    };
    let err = refill_placebos(&u, &p, Action::new(1.0, 1.0), 2, &identity_model(2, 2), ScoreDirection::Lowest).unwrap_err();
    assert!(err.to_string().contains('4'), "{err}");
}

#[test]
fn confidence_baseline_ranks_the_sure_candidate_first() {
    // Head logits (x0, -x0): a large x0 gives softmax close to 1 on class 0.
    let ex = Dense::new(Matrix::identity(2), vec![0.0; 2], Activation::Identity).unwrap();
    let head = Dense::new(
        Matrix::from_vec(2, 2, vec![1.0, 0.0, -1.0, 0.0]).unwrap(),
        vec![0.0; 2],
        Activation::Identity,
    )
    .unwrap();
    let model = Model::new(vec![ex], head).unwrap();
    let sure = 0.99f64;
    let x0 = (sure / (1.0 - sure)).ln() / 2.0;
    let u = CandidateBuffer {
        samples: vec![unlabeled(0, &[0.1, 0.0]), unlabeled(1, &[x0, 0.0]), unlabeled(2, &[0.0, 0.0])],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let buf = baseline_select(&u, Selection::Confidence, &model, 2, 1, &mut rng).unwrap();
    assert_eq!(buf.entries().next().unwrap().sample.id, 1);
    for mode in [Selection::Random, Selection::Confidence] {
        let all = baseline_select(&u, mode, &model, 2, 3, &mut rng).unwrap();
        assert_eq!(all.len(), 3);
    }
}

#[test]
fn herding_cap_one_is_nearest_to_mean() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::random(&[4, 8, 5], 2, &mut rng).unwrap();
        let class = random_samples(&mut rng, 15, 4, Some(1), 0);
        let feats: Vec<Vec<f64>> = class.iter().map(|s| reference_forward(&model, &s.features).0).collect();
        let mean: Vec<f64> = (0..5).map(|j| feats.iter().map(|f| f[j]).sum::<f64>() / 15.0).collect();
        let dist = |f: &[f64]| f.iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        let best = (0..15).min_by(|&a, &b| dist(&feats[a]).total_cmp(&dist(&feats[b]))).unwrap();
        let got = select_exemplars(&model, &class, 1, ExemplarStrategy::Herding, &mut rng).unwrap();
        assert_eq!(got[0].id, class[best].id);
    }
}

#[test]
fn exp3_scalar_update() {
    let mut s = PolicyState::new(3, 0.1, 0.0).unwrap();
    s.update(1, 0.5, 0.5).unwrap();
    assert!((s.weights()[1] - 0.1f64.exp()).abs() < 1e-12);
    assert!((s.weights()[1] - 1.10517).abs() < 1e-5);
    for (w, xi, r, p) in [(1.0, 0.1, 0.5, 0.5), (2.5, 0.3, 1.0, 0.05), (0.2, 1.0, 0.0, 0.9)] {
        assert!(exp3_error(w, xi, r, p) < 1e-12);
    }
    assert_eq!(s.weights()[0], 1.0);
    assert_eq!(s.weights()[2], 1.0);
    s.update(0, 0.0, 0.3).unwrap();
    assert_eq!(s.weights()[0], 1.0);
}

#[test]
fn distribution_examples() {
    let d = PolicyState::new(4, 0.3, 0.0).unwrap().distribution();
    assert!(d.iter().all(|p| (p - 0.25).abs() < 1e-15));
    let d = PolicyState::from_weights(vec![3.0, 1.0], 0.3, 0.0).unwrap().distribution();
    assert!((d[0] - 0.75).abs() < 1e-15 && (d[1] - 0.25).abs() < 1e-15);
    let d = PolicyState::from_weights(vec![3.0, 1.0], 0.3, 0.1).unwrap().distribution();
    assert!((d[0] - 0.725).abs() < 1e-12 && (d[1] - 0.275).abs() < 1e-12);
}

#[test]
fn sampling_frequencies_within_three_sigma() {
    let s = PolicyState::from_weights(vec![5.0, 1.0, 2.5, 0.5, 1.0], 0.3, 0.05).unwrap();
    let dist = s.distribution();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let mut counts = vec![0usize; dist.len()];
    for _ in 0..n {
        let (i, p) = s.sample(&mut rng);
        assert_eq!(p, dist[i]);
        counts[i] += 1;
    }
    for (c, p) in counts.iter().zip(&dist) {
        let expected = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - expected).abs() <= 3.0 * sigma, "{c} vs {expected}");
    }
    let single = PolicyState::new(1, 0.3, 0.05).unwrap();
    assert_eq!(single.sample(&mut rng), (0, 1.0));
}

#[test]
fn harness_concentrates_on_the_best_arm() {
    let masses: Vec<f64> = (0..5)
        .map(|seed| {
            let spec = BanditSpec {
                arms: vec![1.0, 0.0],
                rounds: 500,
                xi: 0.2,
                floor: 0.05,
                seed,
            };
            regret_harness(&spec).unwrap().final_best_mass()
        })
        .collect();
    assert!(median(masses.clone()) >= 0.9, "{masses:?}");
}

#[test]
fn harness_identical_arms_median_near_uniform() {
    let first: Vec<f64> = (0..5)
        .map(|seed| {
            let spec = BanditSpec {
                arms: vec![1.0, 1.0],
                rounds: 500,
                xi: 0.2,
                floor: 0.05,
                seed,
            };
            regret_harness(&spec).unwrap().final_distribution[0]
        })
        .collect();
    assert!((median(first.clone()) - 0.5).abs() <= 0.15, "{first:?}");
}

#[test]
fn harness_without_rounds_is_uniform() {
    let spec = BanditSpec {
        arms: vec![0.2, 0.9, 0.4],
        rounds: 0,
        xi: 0.3,
        floor: 0.05,
        seed: 0,
    };
    let r = regret_harness(&spec).unwrap();
    assert!(r.rounds.is_empty());
    assert!(r.final_distribution.iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));
}

fn labeled_data(classes: usize, per_class: usize) -> Dataset {
    let mut samples = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let id = (c * per_class + i) as u64;
            samples.push(Sample::labeled(id, vec![id as f64, c as f64], c));
        }
    }
    Dataset::new(2, samples).unwrap()
}

#[test]
fn strict_budget_example() {
    let data = labeled_data(10, 1000);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (kept, removed) = apply_strict_budget(&data, 1000, 200, &mut rng).unwrap();
    assert_eq!(kept.len(), 8800);
    assert_eq!(removed.len(), 1200);
    let (same, none) = apply_strict_budget(&data, 0, 0, &mut rng).unwrap();
    assert_eq!(same, data);
    assert!(none.is_empty());
    assert!(apply_strict_budget(&labeled_data(1, 10), 8, 2, &mut rng).is_err());
}

#[test]
fn strict_budget_removal_is_class_uniform() {
    // Chi-square over class totals of 100 seeded removals; 4 degrees of freedom.
    const CRITICAL_0_001: f64 = 18.467;
    let data = labeled_data(5, 400);
    let mut totals = [0f64; 5];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (_, removed) = apply_strict_budget(&data, 250, 50, &mut rng).unwrap();
        for id in removed {
            totals[(id / 400) as usize] += 1.0;
        }
    }
    let expected = 100.0 * 300.0 / 5.0;
    let chi2: f64 = totals.iter().map(|o| (o - expected).powi(2) / expected).sum();
    assert!(chi2 < CRITICAL_0_001, "chi2 {chi2}, totals {totals:?}");
}

#[test]
fn local_env_counts() {
    let data = labeled_data(3, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let env = rebuild_local_env(&data, 2, &mut rng).unwrap();
    assert_eq!(env.validation.len(), 6);
    assert_eq!(env.train.len(), 24);
    assert!(env.validation.class_histogram().values().all(|&n| n == 2));
    let err = rebuild_local_env(&labeled_data(2, 5), 5, &mut rng).unwrap_err();
    assert!(err.to_string().contains("class 0"), "{err}");
}
