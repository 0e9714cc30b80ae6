use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected layer, `y = act(W x + b)` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::shape("dense bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    /// He-normal initialization with zero bias.
    pub fn random<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let std = (2.0 / input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self {
            weights: Matrix::from_vec(output, input, data).expect("sized buffer"),
            bias: vec![0.0; output],
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn param_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    /// Returns `(pre_activation, output)`.
    fn forward(&self, input: &Matrix) -> (Matrix, Matrix) {
        let mut pre = input.mul_transposed(&self.weights);
        for r in 0..pre.rows() {
            for (v, b) in pre.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        let out = match self.activation {
            Activation::Identity => pre.clone(),
            act => {
                let mut out = pre.clone();
                out.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
                out
            }
        };
        (pre, out)
    }
}

/// Outputs of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub features: Matrix,
    pub logits: Matrix,
}

/// Intermediate values kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    inputs: Vec<Matrix>,
    pre: Vec<Matrix>,
    pub features: Matrix,
    pub logits: Matrix,
}

/// Feature extractor (stack of dense layers) followed by a linear classifier head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    extractor: Vec<Dense>,
    head: Dense,
}

impl Model {
    pub fn new(extractor: Vec<Dense>, head: Dense) -> Result<Self> {
        for (k, pair) in extractor.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::shape(
                    format!("layer {}", k + 1),
                    pair[0].output_dim(),
                    pair[1].input_dim(),
                ));
            }
        }
        if head.activation != Activation::Identity {
            return Err(Error::Config("classifier head must be linear".into()));
        }
        let feat = extractor
            .last()
            .map(Dense::output_dim)
            .unwrap_or(head.input_dim());
        if feat != head.input_dim() {
            return Err(Error::shape("head", feat, head.input_dim()));
        }
        Ok(Self { extractor, head })
    }

    /// ReLU extractor with the given widths (`dims[0]` is the input dimension,
    /// the last entry the feature dimension) and a He-initialized linear head.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(
                "model needs an input and at least one extractor width".into(),
            ));
        }
        if dims.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        let extractor = dims
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], Activation::Relu, rng))
            .collect();
        let feat = *dims.last().unwrap();
        let head = Dense::random(feat, classes, Activation::Identity, rng);
        Self::new(extractor, head)
    }

    pub fn input_dim(&self) -> usize {
        self.extractor
            .first()
            .map(Dense::input_dim)
            .unwrap_or(self.head.input_dim())
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn class_count(&self) -> usize {
        self.head.output_dim()
    }

    pub fn extractor(&self) -> &[Dense] {
        &self.extractor
    }

    pub fn head(&self) -> &Dense {
        &self.head
    }

    /// Grows the head to `classes` outputs; new rows start at zero so old logits are unchanged.
    pub fn expand_head(&mut self, classes: usize) -> Result<()> {
        if classes < self.class_count() {
            return Err(Error::Domain(format!(
                "head can only grow: {} -> {classes}",
                self.class_count()
            )));
        }
        self.head.weights.grow_rows(classes);
        self.head.bias.resize(classes, 0.0);
        Ok(())
    }

    fn check_input(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape("layer 0 input", self.input_dim(), batch.cols()));
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Matrix) -> Result<Forward> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.extractor {
            x = layer.forward(&x).1;
        }
        let (logits, _) = self.head.forward(&x);
        Ok(Forward {
            features: x,
            logits,
        })
    }

    /// Extractor output only.
    pub fn features(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_input(batch)?;
        let mut x = batch.clone();
        for layer in &self.extractor {
            x = layer.forward(&x).1;
        }
        Ok(x)
    }

    pub fn forward_cached(&self, batch: &Matrix) -> Result<ForwardCache> {
        self.check_input(batch)?;
        let mut inputs = Vec::with_capacity(self.extractor.len());
        let mut pre = Vec::with_capacity(self.extractor.len());
        let mut x = batch.clone();
        for layer in &self.extractor {
            let (p, out) = layer.forward(&x);
            inputs.push(x);
            pre.push(p);
            x = out;
        }
        let (logits, _) = self.head.forward(&x);
        Ok(ForwardCache {
            inputs,
            pre,
            features: x,
            logits,
        })
    }

    /// Backpropagates loss gradients w.r.t. logits and (optionally) features.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_logits: Option<&Matrix>,
        d_features: Option<&Matrix>,
    ) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let n = cache.features.rows();
        let mut upstream = match d_features {
            Some(df) => df.clone(),
            None => Matrix::zeros(n, self.feature_dim()),
        };
        if let Some(dl) = d_logits {
            dl.add_transposed_mul_into(&cache.features, &mut grads.head.weights);
            accumulate_bias(dl, &mut grads.head.bias);
            let back = dl.mul(&self.head.weights);
            for (u, b) in upstream.as_mut_slice().iter_mut().zip(back.as_slice()) {
                *u += b;
            }
        }
        for (k, layer) in self.extractor.iter().enumerate().rev() {
            let mut d_pre = upstream;
            if layer.activation != Activation::Identity {
                for (d, &p) in d_pre
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre[k].as_slice())
                {
                    *d *= layer.activation.derivative(p);
                }
            }
            let g = &mut grads.extractor[k];
            d_pre.add_transposed_mul_into(&cache.inputs[k], &mut g.weights);
            accumulate_bias(&d_pre, &mut g.bias);
            upstream = if k > 0 {
                d_pre.mul(&layer.weights)
            } else {
                Matrix::zeros(0, 0)
            };
        }
        grads
    }

    pub fn param_count(&self) -> usize {
        self.extractor.iter().map(Dense::param_count).sum::<usize>() + self.head.param_count()
    }

    fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.extractor.iter().chain(std::iter::once(&self.head))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense> {
        self.extractor.iter_mut().chain(std::iter::once(&mut self.head))
    }

    /// All parameters flattened: per layer, weights row-major then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape("flat parameters", self.param_count(), params.len()));
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let w = l.weights.as_mut_slice();
            w.copy_from_slice(&params[off..off + w.len()]);
            off += w.len();
            let b = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + b]);
            off += b;
        }
        Ok(())
    }

    /// Visits every parameter with its flat index.
    pub(crate) fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let mut idx = 0;
        for l in self.layers_mut() {
            for p in l.weights.as_mut_slice().iter_mut().chain(l.bias.iter_mut()) {
                f(idx, p);
                idx += 1;
            }
        }
    }

    /// FNV-1a over parameter bits; identifies a model state in logs.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for l in self.layers() {
            for v in l.weights.as_slice().iter().chain(&l.bias) {
                for byte in v.to_bits().to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    /// Argmax over logits per row; ties resolve to the lowest class index.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let fwd = self.forward(batch)?;
        Ok(fwd.logits.iter_rows().map(argmax).collect())
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn accumulate_bias(d: &Matrix, bias: &mut [f64]) {
    for row in d.iter_rows() {
        for (b, v) in bias.iter_mut().zip(row) {
            *b += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients shaped like a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub extractor: Vec<DenseGrad>,
    pub head: DenseGrad,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        let z = |l: &Dense| DenseGrad {
            weights: Matrix::zeros(l.weights.rows(), l.weights.cols()),
            bias: vec![0.0; l.bias.len()],
        };
        Self {
            extractor: model.extractor.iter().map(z).collect(),
            head: z(&model.head),
        }
    }

    fn parts(&self) -> impl Iterator<Item = &DenseGrad> {
        self.extractor.iter().chain(std::iter::once(&self.head))
    }

    fn parts_mut(&mut self) -> impl Iterator<Item = &mut DenseGrad> {
        self.extractor.iter_mut().chain(std::iter::once(&mut self.head))
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in self.parts() {
            out.extend_from_slice(g.weights.as_slice());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.parts_mut() {
            g.weights.scale(s);
            g.bias.iter_mut().for_each(|b| *b *= s);
        }
    }

    /// `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Gradients, alpha: f64) {
        for (a, b) in self.parts_mut().zip(other.parts()) {
            for (x, y) in a.weights.as_mut_slice().iter_mut().zip(b.weights.as_slice()) {
                *x += alpha * y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += alpha * y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.parts().all(|g| {
            g.weights.as_slice().iter().all(|&v| v == 0.0) && g.bias.iter().all(|&v| v == 0.0)
        })
    }
}
