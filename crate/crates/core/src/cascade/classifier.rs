//! Multinomial logistic regression over standardized features, trained by
//! full-batch gradient descent with step halving so the loss never increases.

use serde::{Deserialize, Serialize};

use super::CascadeError;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentClass {
    Pdac,
    NonPdac,
    Spurious,
}

impl ComponentClass {
    pub const ALL: [ComponentClass; 3] = [ComponentClass::Pdac, ComponentClass::NonPdac, ComponentClass::Spurious];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ComponentClass::Pdac => "pdac",
            ComponentClass::NonPdac => "non_pdac",
            ComponentClass::Spurious => "spurious",
        }
    }
}

pub const N_CLASSES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.5, epochs: 400, l2: 1e-3, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Row-major `N_CLASSES x dim`.
    pub weights: Vec<f64>,
    pub bias: [f64; N_CLASSES],
    /// Loss after each accepted epoch, starting with the initial loss.
    pub training_loss: Vec<f64>,
}

fn softmax(logits: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|v| v / s)
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` and its gradient. `theta` holds
/// the weights (row-major) followed by the biases.
pub fn objective(theta: &[f64], xs: &[Vec<f64>], ys: &[usize], l2: f64) -> (f64, Vec<f64>) {
    let dim = xs.first().map_or(0, |x| x.len());
    let nw = N_CLASSES * dim;
    let mut grad = vec![0.0; theta.len()];
    let mut loss = 0.0;
    let n = xs.len() as f64;
    for (x, &y) in xs.iter().zip(ys) {
        let mut logits = [0.0; N_CLASSES];
        for (k, l) in logits.iter_mut().enumerate() {
            *l = theta[nw + k] + x.iter().zip(&theta[k * dim..(k + 1) * dim]).map(|(a, w)| a * w).sum::<f64>();
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
        loss += lse - logits[y];
        for k in 0..N_CLASSES {
            let d = (logits[k] - lse).exp() - if k == y { 1.0 } else { 0.0 };
            for j in 0..dim {
                grad[k * dim + j] += d * x[j] / n;
            }
            grad[nw + k] += d / n;
        }
    }
    loss /= n;
    let mut penalty = 0.0;
    for j in 0..nw {
        penalty += theta[j] * theta[j];
        grad[j] += l2 * theta[j];
    }
    (loss + 0.5 * l2 * penalty, grad)
}

impl Classifier {
    /// All-zero model over `dim` features: uniform probabilities everywhere.
    pub fn zeros(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
            weights: vec![0.0; N_CLASSES * dim],
            bias: [0.0; N_CLASSES],
            training_loss: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<[f64; N_CLASSES], CascadeError> {
        if x.len() != self.dim() {
            return Err(CascadeError::Dimension { expected: self.dim(), got: x.len() });
        }
        let z = self.standardize(x);
        let dim = self.dim();
        let mut out = self.bias;
        for (k, o) in out.iter_mut().enumerate() {
            *o += z.iter().zip(&self.weights[k * dim..(k + 1) * dim]).map(|(a, w)| a * w).sum::<f64>();
        }
        Ok(out)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; N_CLASSES], CascadeError> {
        Ok(softmax(self.logits(x)?))
    }

    pub fn predict(&self, x: &[f64]) -> Result<ComponentClass, CascadeError> {
        let p = self.predict_proba(x)?;
        Ok(ComponentClass::ALL[argmax(&p)])
    }

    pub fn train(features: &[Vec<f64>], labels: &[ComponentClass], cfg: &TrainConfig) -> Result<Self, CascadeError> {
        if features.len() != labels.len() {
            return Err(CascadeError::DegenerateTraining(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, |x| x.len());
        if features.iter().any(|x| x.len() != dim) {
            return Err(CascadeError::DegenerateTraining("feature rows differ in length".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(CascadeError::DegenerateTraining("non-finite feature value".into()));
        }
        let mut present = labels.to_vec();
        present.sort();
        present.dedup();
        if present.len() < 2 {
            return Err(CascadeError::DegenerateTraining(format!("need at least two classes, got {present:?}")));
        }
        if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0) {
            return Err(CascadeError::Config("learning_rate must be > 0 and l2 >= 0".into()));
        }

        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for x in features {
            for j in 0..dim {
                mean[j] += x[j] / n;
            }
        }
        let mut scale = vec![0.0; dim];
        for x in features {
            for j in 0..dim {
                scale[j] += (x[j] - mean[j]).powi(2) / n;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }
        let mut model = Self { mean, scale, weights: vec![0.0; N_CLASSES * dim], bias: [0.0; N_CLASSES], training_loss: Vec::new() };
        let xs: Vec<Vec<f64>> = features.iter().map(|x| model.standardize(x)).collect();
        let ys: Vec<usize> = labels.iter().map(|c| c.index()).collect();

        let mut r = rng::stream(cfg.seed, 0x7A1);
        let mut theta: Vec<f64> = (0..N_CLASSES * dim + N_CLASSES).map(|_| 0.01 * rng::normal(&mut r)).collect();
        let (mut loss, mut grad) = objective(&theta, &xs, &ys, cfg.l2);
        model.training_loss.push(loss);
        let mut lr = cfg.learning_rate;
        'epochs: for _ in 0..cfg.epochs {
            loop {
                let cand: Vec<f64> = theta.iter().zip(&grad).map(|(t, g)| t - lr * g).collect();
                let (cl, cg) = objective(&cand, &xs, &ys, cfg.l2);
                if cl <= loss {
                    theta = cand;
                    loss = cl;
                    grad = cg;
                    model.training_loss.push(loss);
                    break;
                }
                lr *= 0.5;
                if lr < 1e-12 {
                    break 'epochs;
                }
            }
        }
        let nw = N_CLASSES * dim;
        model.weights.copy_from_slice(&theta[..nw]);
        model.bias.copy_from_slice(&theta[nw..]);
        Ok(model)
    }
}

pub fn argmax(p: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    best
}
