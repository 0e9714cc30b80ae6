//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use placebocil_core::data::{CandidateBuffer, Sample};
use placebocil_core::nn::{ce_loss_grad, kd_loss_grad, Activation, Dense, KdKind, LossConfig, Matrix, Model};
use placebocil_core::placebo::{
    compute_prototypes, refill_placebos, score_feature, Action, PrototypeSet, ScoreDirection,
};
use placebocil_core::policy::PolicyState;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;

pub fn identity_model(dim: usize, classes: usize) -> Model {
    let ex = Dense::new(Matrix::identity(dim), vec![0.0; dim], Activation::Identity).unwrap();
    let head = Dense::new(Matrix::zeros(classes, dim), vec![0.0; classes], Activation::Identity).unwrap();
    Model::new(vec![ex], head).unwrap()
}

/// Reference forward pass: plain nested loops over the public layer data.
/// Returns `(features, logits)`.
pub fn reference_forward(model: &Model, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let layer_out = |layer: &Dense, h: &[f64]| -> Vec<f64> {
        let w = &layer.weights;
        (0..w.rows())
            .map(|i| {
                let mut acc = layer.bias[i];
                for (j, hj) in h.iter().enumerate() {
                    acc += w[(i, j)] * hj;
                }
                match layer.activation {
                    Activation::Relu => acc.max(0.0),
                    Activation::Identity => acc,
                }
            })
            .collect()
    };
    let mut h = x.to_vec();
    for layer in model.extractor() {
        h = layer_out(layer, &h);
    }
    let logits = layer_out(model.head(), &h);
    (h, logits)
}

pub struct Instance {
    pub model: Model,
    /// Teacher; has fewer classes than `model` when built with `old_classes`.
    pub other: Model,
    pub x: Matrix,
    pub labels: Vec<usize>,
}

/// Random model (<= 500 parameters) with inputs kept away from ReLU kinks.
pub fn instance(seed: u64, old_classes: bool) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(2..6);
    let hidden = rng.random_range(3..9);
    let feat = rng.random_range(2..7);
    let classes = rng.random_range(2..6);
    let model = Model::random(&[input, hidden, feat], classes, &mut rng).unwrap();
    assert!(model.param_count() <= 500);
    let mut other = Model::random(&[input, hidden, feat], classes, &mut rng).unwrap();
    if old_classes {
        other = Model::random(&[input, hidden, feat], classes.max(3) - 1, &mut rng).unwrap();
    }
    let n = rng.random_range(1..6);
    loop {
        let x = Matrix::from_vec(
            n,
            input,
            (0..n * input).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        if far_from_kinks(&model, &x) {
            let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
            return Instance {
                model,
                other,
                x,
                labels,
            };
        }
    }
}

fn far_from_kinks(model: &Model, x: &Matrix) -> bool {
    let mut h = x.clone();
    for layer in model.extractor() {
        let mut pre = Matrix::zeros(h.rows(), layer.output_dim());
        for r in 0..h.rows() {
            for i in 0..layer.output_dim() {
                let mut acc = layer.bias[i];
                for j in 0..layer.input_dim() {
                    acc += layer.weights[(i, j)] * h[(r, j)];
                }
                if acc.abs() < 1e-3 {
                    return false;
                }
                pre[(r, i)] = acc.max(0.0);
            }
        }
        h = pre;
    }
    true
}

/// Largest relative error between `analytic` and central differences of `loss`.
pub fn max_relative_error(model: &Model, analytic: &[f64], loss: impl Fn(&Model) -> f64) -> f64 {
    let params = model.flat_params();
    assert_eq!(params.len(), analytic.len());
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (k, &a) in analytic.iter().enumerate() {
        let mut p = params.clone();
        p[k] += STEP;
        probe.set_flat_params(&p).unwrap();
        let up = loss(&probe);
        p[k] -= 2.0 * STEP;
        probe.set_flat_params(&p).unwrap();
        let down = loss(&probe);
        let numeric = (up - down) / (2.0 * STEP);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-5));
    }
    worst
}

pub fn ce_error(seed: u64) -> f64 {
    let inst = instance(seed, false);
    let (_, g) = ce_loss_grad(&inst.model, &inst.x, &inst.labels).unwrap();
    max_relative_error(&inst.model, &g.flat(), |m| ce_loss_grad(m, &inst.x, &inst.labels).unwrap().0)
}

pub fn kd_error(kind: KdKind, seed: u64) -> f64 {
    let inst = instance(seed, true);
    let cfg = LossConfig {
        lambda: 1.0,
        kd_kind: kind,
        temperature: 1.0 + (seed % 3) as f64,
    };
    let (_, g) = kd_loss_grad(&inst.other, &inst.model, &inst.x, &cfg).unwrap();
    max_relative_error(&inst.model, &g.flat(), |m| kd_loss_grad(&inst.other, m, &inst.x, &cfg).unwrap().0)
}

/// Exhaustive per-class enumeration: for each class in order, the K-subset of
/// the remaining candidates with the smallest total score.
pub fn brute_force_topk(feats: &[Vec<f64>], protos: &PrototypeSet, action: Action, k: usize) -> Vec<Vec<usize>> {
    let n = feats.len();
    let mut taken = 0u32;
    let mut out = Vec::new();
    for m in 0..protos.old.len() {
        let mut best: Option<(f64, u32)> = None;
        for mask in 0u32..(1 << n) {
            if mask & taken != 0 || mask.count_ones() as usize != k {
                continue;
            }
            let total: f64 = (0..n)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| score_feature(&feats[i], m, protos, action).unwrap())
                .sum();
            if best.is_none_or(|(b, _)| total < b) {
                best = Some((total, mask));
            }
        }
        let mask = best.unwrap().1;
        taken |= mask;
        out.push((0..n).filter(|i| mask >> i & 1 == 1).collect());
    }
    out
}

/// One random selection problem with `|U| <= 12`; true when the refill
/// matches the brute-force oracle.
pub fn topk_matches_brute_force(seed: u64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(2..5);
    let c_old = rng.random_range(1..4);
    let k = rng.random_range(1..4);
    let n = rng.random_range(c_old * k..=12);
    let rand_vec = |rng: &mut ChaCha8Rng| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    let protos = PrototypeSet {
        old: (0..c_old).map(|_| rand_vec(&mut rng)).collect(),
        new: (0..rng.random_range(1..3)).map(|_| rand_vec(&mut rng)).collect(),
        snapshot: 0,
    };
    let feats: Vec<Vec<f64>> = (0..n).map(|_| rand_vec(&mut rng)).collect();
    let action = Action::new(rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
    let u = CandidateBuffer {
        samples: feats.iter().enumerate().map(|(i, f)| Sample::unlabeled(i as u64, f.clone())).collect(),
    };
    let buf = refill_placebos(&u, &protos, action, k, &identity_model(dim, c_old), ScoreDirection::Lowest).unwrap();
    if buf.len() != c_old * k {
        return false;
    }
    brute_force_topk(&feats, &protos, action, k)
        .iter()
        .enumerate()
        .all(|(m, expect)| {
            let mut got: Vec<usize> = buf
                .entries()
                .filter(|e| e.class == Some(m))
                .map(|e| e.sample.id as usize)
                .collect();
            got.sort_unstable();
            &got == expect
        })
}

pub fn labeled_random(rng: &mut ChaCha8Rng, n: usize, dim: usize, label: usize, id0: u64) -> Vec<Sample> {
    (0..n)
        .map(|i| Sample::labeled(id0 + i as u64, (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect(), label))
        .collect()
}

/// Largest gap between computed prototypes and means of reference features.
pub fn prototype_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = Model::random(&[5, 12, 6], 3, &mut rng).unwrap();
    let old: Vec<Vec<Sample>> = (0..2).map(|c| labeled_random(&mut rng, 20, 5, c, 100 * c as u64)).collect();
    let new = vec![labeled_random(&mut rng, 7, 5, 2, 1000)];
    let old_refs: Vec<&[Sample]> = old.iter().map(Vec::as_slice).collect();
    let new_refs: Vec<&[Sample]> = new.iter().map(Vec::as_slice).collect();
    let protos = compute_prototypes(&model, &old_refs, &new_refs).unwrap();
    let oracle = |set: &[Sample]| {
        let mut mean = vec![0.0; 6];
        for s in set {
            for (m, v) in mean.iter_mut().zip(reference_forward(&model, &s.features).0) {
                *m += v / set.len() as f64;
            }
        }
        mean
    };
    let mut worst = 0.0f64;
    for (got, set) in protos.old.iter().zip(&old).chain(protos.new.iter().zip(&new)) {
        for (a, b) in got.iter().zip(oracle(set)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}

/// Gap between one Exp3 update and `w * exp(xi * r / p)` computed by hand.
pub fn exp3_error(w: f64, xi: f64, r: f64, p: f64) -> f64 {
    let mut s = PolicyState::from_weights(vec![w, 1.0], xi, 0.0).unwrap();
    s.update(0, r, p).unwrap();
    (s.weights()[0] - w * (xi * r / p).exp()).abs()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}
