//! Cross-entropy and the two distillation losses, with analytic gradients.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, norm, Matrix};
use super::model::{Gradients, Model};
use crate::error::{Error, Result};

/// Teacher probabilities below this contribute nothing to the KL divergence.
pub const KL_PROBABILITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KdKind {
    /// KL divergence between temperature-softened old-class distributions.
    LogitKl,
    /// `1 - cos` between teacher and student extractor features.
    CosineEmbedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda: f64,
    pub kd_kind: KdKind,
    pub temperature: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 20.0,
            kd_kind: KdKind::CosineEmbedding,
            temperature: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "loss.lambda must be a nonnegative real, got {}",
                self.lambda
            )));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "loss.temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Log-sum-exp stabilized log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean softmax cross-entropy and its gradient.
pub fn ce_loss_grad(model: &Model, batch: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
    if labels.len() != batch.rows() {
        return Err(Error::shape("labels", batch.rows(), labels.len()));
    }
    let classes = model.class_count();
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Domain(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    if batch.rows() == 0 {
        return Ok((0.0, Gradients::zeros_like(model)));
    }
    let cache = model.forward_cached(batch)?;
    let n = batch.rows() as f64;
    let mut d_logits = Matrix::zeros(batch.rows(), classes);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let logp = log_softmax(cache.logits.row(r));
        loss -= logp[label];
        let d = d_logits.row_mut(r);
        for (j, lp) in logp.iter().enumerate() {
            d[j] = lp.exp() / n;
        }
        d[label] -= 1.0 / n;
    }
    let grads = model.backward(&cache, Some(&d_logits), None);
    Ok((loss / n, grads))
}

/// Distillation loss from a frozen teacher over the teacher's classes.
///
/// An empty batch yields loss 0 with zero gradients.
pub fn kd_loss_grad(
    teacher: &Model,
    student: &Model,
    batch: &Matrix,
    cfg: &LossConfig,
) -> Result<(f64, Gradients)> {
    kd_loss_grad_over(teacher, student, batch, cfg, teacher.class_count())
}

/// Like [`kd_loss_grad`] but distilling only the first `classes` logits.
pub fn kd_loss_grad_over(
    teacher: &Model,
    student: &Model,
    batch: &Matrix,
    cfg: &LossConfig,
    classes: usize,
) -> Result<(f64, Gradients)> {
    if classes > teacher.class_count() || classes > student.class_count() {
        return Err(Error::Domain(format!(
            "cannot distill {classes} classes: teacher has {}, student {}",
            teacher.class_count(),
            student.class_count()
        )));
    }
    if teacher.feature_dim() != student.feature_dim() {
        return Err(Error::shape(
            "teacher/student features",
            teacher.feature_dim(),
            student.feature_dim(),
        ));
    }
    if batch.rows() == 0 {
        return Ok((0.0, Gradients::zeros_like(student)));
    }
    let target = teacher.forward(batch)?;
    let cache = student.forward_cached(batch)?;
    let n = batch.rows() as f64;
    match cfg.kd_kind {
        KdKind::LogitKl => {
            let t = cfg.temperature;
            let mut d_logits = Matrix::zeros(batch.rows(), student.class_count());
            let mut loss = 0.0;
            for r in 0..batch.rows() {
                let tl: Vec<f64> = target.logits.row(r)[..classes].iter().map(|v| v / t).collect();
                let sl: Vec<f64> = cache.logits.row(r)[..classes].iter().map(|v| v / t).collect();
                let log_p = log_softmax(&tl);
                let log_q = log_softmax(&sl);
                let (row_loss, row_grad) = kl_row(&log_p, &log_q);
                loss += row_loss;
                let d = d_logits.row_mut(r);
                for (dj, gj) in d.iter_mut().zip(row_grad) {
                    *dj = gj / (t * n);
                }
            }
            let grads = student.backward(&cache, Some(&d_logits), None);
            Ok((loss / n, grads))
        }
        KdKind::CosineEmbedding => {
            let mut d_feat = Matrix::zeros(batch.rows(), student.feature_dim());
            let mut loss = 0.0;
            for r in 0..batch.rows() {
                let (row_loss, row_grad) =
                    cosine_row(target.features.row(r), cache.features.row(r));
                loss += row_loss;
                for (d, g) in d_feat.row_mut(r).iter_mut().zip(row_grad) {
                    *d = g / n;
                }
            }
            let grads = student.backward(&cache, None, Some(&d_feat));
            Ok((loss / n, grads))
        }
    }
}

/// `KL(p || q)` for one row and its gradient w.r.t. the (scaled) student logits.
fn kl_row(log_p: &[f64], log_q: &[f64]) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut kept_mass = 0.0;
    let mut masked = false;
    for (&lp, &lq) in log_p.iter().zip(log_q) {
        let p = lp.exp();
        if p < KL_PROBABILITY_FLOOR {
            masked = true;
            continue;
        }
        kept_mass += p;
        loss += p * (lp - lq);
    }
    let grad = log_p
        .iter()
        .zip(log_q)
        .map(|(&lp, &lq)| {
            let p = lp.exp();
            let q = lq.exp();
            if masked {
                let kept = if p < KL_PROBABILITY_FLOOR { 0.0 } else { p };
                q * kept_mass - kept
            } else {
                q - p
            }
        })
        .collect();
    (loss, grad)
}

/// `1 - cos(t, s)` and its gradient w.r.t. `s`.
///
/// Identical rows (including two zero rows) contribute zero loss and gradient;
/// a zero-norm row against a nonzero one has cosine 0 and no gradient.
fn cosine_row(t: &[f64], s: &[f64]) -> (f64, Vec<f64>) {
    if t == s {
        return (0.0, vec![0.0; s.len()]);
    }
    let nt = norm(t);
    let ns = norm(s);
    if nt == 0.0 || ns == 0.0 {
        return (1.0, vec![0.0; s.len()]);
    }
    let cos = dot(t, s) / (nt * ns);
    let grad = t
        .iter()
        .zip(s)
        .map(|(&ti, &si)| -(ti / (nt * ns) - cos * si / (ns * ns)))
        .collect();
    (1.0 - cos, grad)
}
