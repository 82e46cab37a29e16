//! Flat-parameter models: multinomial logistic regression and a one-hidden-layer
//! tanh MLP, with analytic softmax cross-entropy gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};
use rand_distr::{Distribution, Uniform};

use super::EngineError;
use crate::data::Dataset;

/// Probabilities are clamped here before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Architecture {
    Logistic {
        num_features: usize,
        num_classes: usize,
    },
    Mlp {
        num_features: usize,
        hidden_width: usize,
        num_classes: usize,
    },
}

impl Architecture {
    pub fn num_features(&self) -> usize {
        match *self {
            Architecture::Logistic { num_features, .. } | Architecture::Mlp { num_features, .. } => {
                num_features
            }
        }
    }

    pub fn num_classes(&self) -> usize {
        match *self {
            Architecture::Logistic { num_classes, .. } | Architecture::Mlp { num_classes, .. } => {
                num_classes
            }
        }
    }

    /// Parameter count `d`.
    pub fn dim(&self) -> usize {
        match *self {
            Architecture::Logistic {
                num_features,
                num_classes,
            } => num_classes * (num_features + 1),
            Architecture::Mlp {
                num_features,
                hidden_width,
                num_classes,
            } => hidden_width * (num_features + 1) + num_classes * (hidden_width + 1),
        }
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<(), EngineError> {
        if data.num_features() != self.num_features() || data.num_classes() != self.num_classes() {
            return Err(EngineError::ArchitectureMismatch(format!(
                "model expects {} features / {} classes, dataset has {} / {}",
                self.num_features(),
                self.num_classes(),
                data.num_features(),
                data.num_classes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub arch: Architecture,
    pub params: Vec<f64>,
}

impl ModelWeights {
    pub fn new(arch: Architecture, params: Vec<f64>) -> Result<Self, EngineError> {
        if params.len() != arch.dim() {
            return Err(EngineError::DimensionMismatch {
                expected: arch.dim(),
                found: params.len(),
            });
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(EngineError::NonFiniteLoss);
        }
        Ok(ModelWeights { arch, params })
    }

    pub fn zeros(arch: Architecture) -> Self {
        ModelWeights {
            arch,
            params: vec![0.0; arch.dim()],
        }
    }

    /// Zero weights for logistic regression; Glorot-uniform layers and zero biases
    /// for the MLP.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut w = ModelWeights::zeros(arch);
        if let Architecture::Mlp {
            num_features: f,
            hidden_width: h,
            num_classes: c,
        } = arch
        {
            let l1 = Uniform::new_inclusive(-1.0, 1.0).unwrap();
            let s1 = (6.0 / (f + h) as f64).sqrt();
            let s2 = (6.0 / (h + c) as f64).sqrt();
            let (w1, rest) = w.params.split_at_mut(h * f);
            for x in w1.iter_mut() {
                *x = s1 * l1.sample(rng);
            }
            let w2 = &mut rest[h..h + c * h];
            for x in w2.iter_mut() {
                *x = s2 * l1.sample(rng);
            }
        }
        w
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|x| x.is_finite())
    }

    /// Class scores for one example; no dropout.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut scratch = Scratch::new(&self.arch);
        self.forward(x, &mut scratch, None);
        scratch.logits
    }

    /// Argmax class; ties resolve to the lowest index.
    pub fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn forward(&self, x: &[f64], s: &mut Scratch, dropout_mask: Option<&[f64]>) {
        match self.arch {
            Architecture::Logistic {
                num_features: f,
                num_classes: c,
            } => {
                let (w, b) = self.params.split_at(c * f);
                for k in 0..c {
                    s.logits[k] = b[k] + dot(&w[k * f..(k + 1) * f], x);
                }
            }
            Architecture::Mlp {
                num_features: f,
                hidden_width: h,
                num_classes: c,
            } => {
                let (w1, rest) = self.params.split_at(h * f);
                let (b1, rest) = rest.split_at(h);
                let (w2, b2) = rest.split_at(c * h);
                for j in 0..h {
                    let a = (b1[j] + dot(&w1[j * f..(j + 1) * f], x)).tanh();
                    s.hidden_act[j] = a;
                    s.hidden[j] = match dropout_mask {
                        Some(m) => a * m[j],
                        None => a,
                    };
                }
                for k in 0..c {
                    s.logits[k] = b2[k] + dot(&w2[k * h..(k + 1) * h], &s.hidden);
                }
            }
        }
    }

    /// Cross-entropy of one example (no dropout).
    pub fn example_loss(&self, x: &[f64], y: usize) -> f64 {
        let logits = self.logits(x);
        clamped_nll(softmax(&logits)[y])
    }

    /// Loss and gradient of one example with dropout disabled.
    pub fn example_loss_grad(&self, x: &[f64], y: usize) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.dim()];
        let mut scratch = Scratch::new(&self.arch);
        let loss = self.accumulate(x, y, &mut grad, &mut scratch, None);
        (loss, grad)
    }

    /// Adds the gradient of one example's loss into `grad`; returns the loss.
    pub(crate) fn accumulate(
        &self,
        x: &[f64],
        y: usize,
        grad: &mut [f64],
        s: &mut Scratch,
        dropout_mask: Option<&[f64]>,
    ) -> f64 {
        self.forward(x, s, dropout_mask);
        let probs = softmax(&s.logits);
        let loss = clamped_nll(probs[y]);
        for (k, p) in probs.iter().enumerate() {
            s.dlogits[k] = p - f64::from(u8::from(k == y));
        }
        match self.arch {
            Architecture::Logistic {
                num_features: f,
                num_classes: c,
            } => {
                let (gw, gb) = grad.split_at_mut(c * f);
                for k in 0..c {
                    let d = s.dlogits[k];
                    gb[k] += d;
                    for (g, xi) in gw[k * f..(k + 1) * f].iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            Architecture::Mlp {
                num_features: f,
                hidden_width: h,
                num_classes: c,
            } => {
                let w2 = &self.params[h * f + h..h * f + h + c * h];
                let (gw1, rest) = grad.split_at_mut(h * f);
                let (gb1, rest) = rest.split_at_mut(h);
                let (gw2, gb2) = rest.split_at_mut(c * h);
                for k in 0..c {
                    let d = s.dlogits[k];
                    gb2[k] += d;
                    for (g, hj) in gw2[k * h..(k + 1) * h].iter_mut().zip(&s.hidden) {
                        *g += d * hj;
                    }
                }
                for j in 0..h {
                    let mut dh = 0.0;
                    for k in 0..c {
                        dh += s.dlogits[k] * w2[k * h + j];
                    }
                    if let Some(m) = dropout_mask {
                        dh *= m[j];
                    }
                    let a = s.hidden_act[j];
                    let dz = dh * (1.0 - a * a);
                    gb1[j] += dz;
                    for (g, xi) in gw1[j * f..(j + 1) * f].iter_mut().zip(x) {
                        *g += dz * xi;
                    }
                }
            }
        }
        loss
    }

    /// Width of the droppable hidden layer (zero for logistic regression).
    pub(crate) fn hidden_width(&self) -> usize {
        match self.arch {
            Architecture::Mlp { hidden_width, .. } => hidden_width,
            Architecture::Logistic { .. } => 0,
        }
    }
}

/// Reusable forward/backward buffers.
pub(crate) struct Scratch {
    logits: Vec<f64>,
    dlogits: Vec<f64>,
    hidden: Vec<f64>,
    hidden_act: Vec<f64>,
}

impl Scratch {
    pub(crate) fn new(arch: &Architecture) -> Self {
        let h = match *arch {
            Architecture::Mlp { hidden_width, .. } => hidden_width,
            Architecture::Logistic { .. } => 0,
        };
        let c = arch.num_classes();
        Scratch {
            logits: vec![0.0; c],
            dlogits: vec![0.0; c],
            hidden: vec![0.0; h],
            hidden_act: vec![0.0; h],
        }
    }
}

/// `−ln(max(p, floor))`, propagating NaN so divergence stays visible.
pub(crate) fn clamped_nll(p: f64) -> f64 {
    if p.is_nan() {
        f64::NAN
    } else {
        -p.max(PROB_FLOOR).ln()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}
