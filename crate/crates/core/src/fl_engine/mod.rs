//! One federated round: client local training, validation scoring, and server
//! aggregation over a pseudo-gradient with momentum.

mod model;

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{ClientShard, Dataset};
use crate::exec;
use crate::hp_space::{HPVector, HyperparamSpec};

pub use model::{Architecture, ModelWeights, PROB_FLOOR};
use model::Scratch;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss became non-finite during local training")]
    NonFiniteLoss,
    #[error("hyperparameter `{0}` missing from the search space")]
    MissingHyperparameter(String),
    #[error("hyperparameter `{name}` decodes to invalid value {value}")]
    InvalidHyperparameter { name: String, value: String },
    #[error("aggregation needs at least one client model")]
    NoClients,
}

/// Multiplicative learning-rate schedule over a horizon (epochs or rounds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    Constant,
    /// ×0.5 after every third of the horizon.
    Step,
    /// Half-cosine from 1 down to 0.01 over the horizon.
    Cosine,
}

impl Scheduler {
    pub fn factor(self, t: usize, horizon: usize) -> f64 {
        let horizon = horizon.max(1);
        match self {
            Scheduler::Constant => 1.0,
            Scheduler::Step => 0.5f64.powi((3 * t / horizon) as i32),
            Scheduler::Cosine => {
                let frac = t.min(horizon) as f64 / horizon as f64;
                0.01 + 0.99 * 0.5 * (1.0 + (PI * frac).cos())
            }
        }
    }

    fn parse(name: &str) -> Option<Self> {
        match name {
            "constant" => Some(Scheduler::Constant),
            "step" => Some(Scheduler::Step),
            "cosine" => Some(Scheduler::Cosine),
            _ => None,
        }
    }
}

/// Decoded client-side HP-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClientHPs {
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub momentum: f64,
    pub weight_decay: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
}

impl Default for ClientHPs {
    fn default() -> Self {
        ClientHPs {
            learning_rate: 0.1,
            scheduler: Scheduler::Constant,
            momentum: 0.0,
            weight_decay: 0.0,
            local_epochs: 1,
            batch_size: 32,
            dropout: 0.0,
        }
    }
}

/// Decoded server-side HP-vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerHPs {
    pub learning_rate: f64,
    pub scheduler: Scheduler,
    pub momentum: f64,
}

impl Default for ServerHPs {
    fn default() -> Self {
        ServerHPs {
            learning_rate: 1.0,
            scheduler: Scheduler::Constant,
            momentum: 0.0,
        }
    }
}

fn lookup<'a>(specs: &'a [HyperparamSpec], v: &'a HPVector, name: &str) -> Option<(&'a HyperparamSpec, &'a crate::hp_space::HpValue)> {
    let i = specs.iter().position(|s| s.name == name)?;
    Some((&specs[i], &v.values[i]))
}

fn decode_real(
    specs: &[HyperparamSpec],
    v: &HPVector,
    name: &str,
    default: Option<f64>,
    valid: impl Fn(f64) -> bool,
) -> Result<f64, EngineError> {
    let x = match lookup(specs, v, name) {
        Some((s, value)) => s.natural(value),
        None => default.ok_or_else(|| EngineError::MissingHyperparameter(name.into()))?,
    };
    if valid(x) {
        Ok(x)
    } else {
        Err(EngineError::InvalidHyperparameter {
            name: name.into(),
            value: x.to_string(),
        })
    }
}

fn decode_scheduler(specs: &[HyperparamSpec], v: &HPVector) -> Result<Scheduler, EngineError> {
    match lookup(specs, v, "scheduler") {
        None => Ok(Scheduler::Constant),
        Some((s, value)) => {
            let label = s.display(value);
            Scheduler::parse(&label).ok_or(EngineError::InvalidHyperparameter {
                name: "scheduler".into(),
                value: label,
            })
        }
    }
}

impl ClientHPs {
    /// Reads coordinates by name. `learning_rate` is required; any other missing
    /// coordinate takes its [`Default`] value.
    pub fn decode(specs: &[HyperparamSpec], v: &HPVector) -> Result<Self, EngineError> {
        let d = ClientHPs::default();
        let count = |x: f64| x.is_finite() && x.round() >= 1.0;
        Ok(ClientHPs {
            learning_rate: decode_real(specs, v, "learning_rate", None, |x| x >= 0.0 && x.is_finite())?,
            scheduler: decode_scheduler(specs, v)?,
            momentum: decode_real(specs, v, "momentum", Some(d.momentum), |x| (0.0..1.0).contains(&x))?,
            weight_decay: decode_real(specs, v, "weight_decay", Some(d.weight_decay), |x| x >= 0.0 && x.is_finite())?,
            local_epochs: decode_real(specs, v, "local_epochs", Some(d.local_epochs as f64), count)?.round() as usize,
            batch_size: decode_real(specs, v, "batch_size", Some(d.batch_size as f64), count)?.round() as usize,
            dropout: decode_real(specs, v, "dropout", Some(d.dropout), |x| (0.0..1.0).contains(&x))?,
        })
    }
}

impl ServerHPs {
    pub fn decode(specs: &[HyperparamSpec], v: &HPVector) -> Result<Self, EngineError> {
        let d = ServerHPs::default();
        Ok(ServerHPs {
            learning_rate: decode_real(specs, v, "learning_rate", None, |x| x >= 0.0 && x.is_finite())?,
            scheduler: decode_scheduler(specs, v)?,
            momentum: decode_real(specs, v, "momentum", Some(d.momentum), |x| (0.0..1.0).contains(&x))?,
        })
    }
}

/// Server momentum buffer plus the round counter that drives its schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptState {
    pub momentum: Vec<f64>,
    pub round: usize,
    /// Rounds over which the server scheduler runs.
    pub horizon: usize,
}

impl ServerOptState {
    pub fn new(dim: usize, horizon: usize) -> Self {
        ServerOptState {
            momentum: vec![0.0; dim],
            round: 0,
            horizon: horizon.max(1),
        }
    }
}

/// Local training: `local_epochs` passes of shuffled mini-batch SGD with momentum,
/// weight decay (added to the gradient), hidden-layer inverted dropout, and a
/// per-epoch learning-rate schedule. The input weights are left untouched.
pub fn loc<R: Rng + ?Sized>(
    beta: &ClientHPs,
    w: &ModelWeights,
    train: &Dataset,
    rng: &mut R,
) -> Result<ModelWeights, EngineError> {
    w.arch.check_dataset(train)?;
    let mut params = w.params.clone();
    let mut velocity = vec![0.0; params.len()];
    let mut grad = vec![0.0; params.len()];
    let mut scratch = Scratch::new(&w.arch);
    let hidden = w.hidden_width();
    let keep = 1.0 - beta.dropout;
    let mut mask = vec![1.0; hidden];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let batch_size = beta.batch_size.max(1);
    let mut current = w.clone();

    for epoch in 0..beta.local_epochs {
        let lr = beta.learning_rate * beta.scheduler.factor(epoch, beta.local_epochs);
        order.shuffle(rng);
        for batch in order.chunks(batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            current.params.copy_from_slice(&params);
            let mut loss = 0.0;
            for &i in batch {
                let m = if hidden > 0 && beta.dropout > 0.0 {
                    for mj in mask.iter_mut() {
                        *mj = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                    }
                    Some(mask.as_slice())
                } else {
                    None
                };
                loss += current.accumulate(train.row(i), train.label(i), &mut grad, &mut scratch, m);
            }
            if !loss.is_finite() {
                return Err(EngineError::NonFiniteLoss);
            }
            let scale = 1.0 / batch.len() as f64;
            for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                let g = g * scale + beta.weight_decay * *p;
                *v = beta.momentum * *v + g;
                *p -= lr * *v;
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(EngineError::NonFiniteLoss);
        }
    }
    current.params = params;
    Ok(current)
}

/// Summed evaluation counts over a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvalTotals {
    pub correct: usize,
    pub loss_sum: f64,
    pub count: usize,
}

impl EvalTotals {
    pub fn merge(self, other: EvalTotals) -> EvalTotals {
        EvalTotals {
            correct: self.correct + other.correct,
            loss_sum: self.loss_sum + other.loss_sum,
            count: self.count + other.count,
        }
    }

    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.correct as f64 / self.count as f64
        }
    }

    pub fn loss(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.loss_sum / self.count as f64
        }
    }
}

pub fn evaluate(w: &ModelWeights, data: &Dataset) -> EvalTotals {
    let mut totals = EvalTotals::default();
    for i in 0..data.len() {
        let logits = w.logits(data.row(i));
        let y = data.label(i);
        let probs = model::softmax(&logits);
        totals.loss_sum += model::clamped_nll(probs[y]);
        totals.correct += usize::from(model::argmax(&logits) == y);
        totals.count += 1;
    }
    totals
}

/// Mean cross-entropy over `valset`; lower is better.
pub fn val(w: &ModelWeights, valset: &Dataset) -> f64 {
    evaluate(w, valset).loss()
}

pub fn accuracy(w: &ModelWeights, data: &Dataset) -> f64 {
    evaluate(w, data).accuracy()
}

/// Server update: `g = w − mean(clients)`, `m' = μ·m + g`, `ŵ = w − lr_r·m'`.
/// `mix` optionally supplies per-client weights for the mean (normalised here).
pub fn agg(
    alpha: &ServerHPs,
    w: &ModelWeights,
    clients: &[ModelWeights],
    mix: Option<&[f64]>,
    state: &ServerOptState,
) -> Result<(ModelWeights, ServerOptState), EngineError> {
    if clients.is_empty() {
        return Err(EngineError::NoClients);
    }
    let d = w.dim();
    for c in clients {
        if c.dim() != d {
            return Err(EngineError::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
    }
    if state.momentum.len() != d {
        return Err(EngineError::DimensionMismatch {
            expected: d,
            found: state.momentum.len(),
        });
    }
    let coeffs: Vec<f64> = match mix {
        Some(m) if m.len() == clients.len() => {
            let total: f64 = m.iter().sum();
            m.iter().map(|x| x / total).collect()
        }
        Some(m) => {
            return Err(EngineError::DimensionMismatch {
                expected: clients.len(),
                found: m.len(),
            })
        }
        None => vec![1.0 / clients.len() as f64; clients.len()],
    };
    let lr = alpha.learning_rate * alpha.scheduler.factor(state.round, state.horizon);
    let mut next = w.clone();
    let mut momentum = state.momentum.clone();
    for j in 0..d {
        let mean: f64 = if mix.is_none() {
            clients.iter().map(|c| c.params[j]).sum::<f64>() / clients.len() as f64
        } else {
            clients.iter().zip(&coeffs).map(|(c, a)| a * c.params[j]).sum()
        };
        let g = w.params[j] - mean;
        momentum[j] = alpha.momentum * momentum[j] + g;
        next.params[j] = w.params[j] - lr * momentum[j];
    }
    Ok((
        next,
        ServerOptState {
            momentum,
            round: state.round + 1,
            horizon: state.horizon,
        },
    ))
}

/// Everything a round produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutcome {
    pub weights: ModelWeights,
    pub state: ServerOptState,
    /// Validation loss of each pre-aggregation client model; `+∞` marks divergence.
    pub scores: Vec<f64>,
    pub diverged_clients: usize,
    /// The aggregated model was non-finite and the round was rolled back.
    pub server_diverged: bool,
}

/// One communication round for `K` active clients. Client `k` trains from the shared
/// `w` with `betas[k]` on `shards[k]` using `rngs[k]`; its score is the validation
/// loss before aggregation. Diverged clients score `+∞` and are left out of the mean.
pub fn fed_opt_round<R: Rng + Send>(
    alpha: &ServerHPs,
    betas: &[ClientHPs],
    w: &ModelWeights,
    shards: &[&ClientShard],
    state: &ServerOptState,
    rngs: Vec<R>,
    weight_by_examples: bool,
) -> Result<RoundOutcome, EngineError> {
    if shards.is_empty() {
        return Err(EngineError::NoClients);
    }
    if betas.len() != shards.len() || rngs.len() != shards.len() {
        return Err(EngineError::DimensionMismatch {
            expected: shards.len(),
            found: betas.len().min(rngs.len()),
        });
    }
    for s in shards {
        w.arch.check_dataset(&s.train)?;
    }
    let tasks: Vec<(usize, R)> = rngs.into_iter().enumerate().collect();
    let results: Vec<Option<(ModelWeights, f64)>> = exec::map_owned(tasks, |(k, mut rng)| {
        match loc(&betas[k], w, &shards[k].train, &mut rng) {
            Ok(wk) => {
                let s = val(&wk, &shards[k].val);
                Some((wk, if s.is_finite() { s } else { f64::INFINITY }))
            }
            Err(_) => None,
        }
    });

    let mut scores = Vec::with_capacity(results.len());
    let mut survivors = Vec::new();
    let mut mix = Vec::new();
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Some((wk, s)) => {
                scores.push(s);
                survivors.push(wk);
                mix.push(shards[k].train.len() as f64);
            }
            None => scores.push(f64::INFINITY),
        }
    }
    let diverged_clients = shards.len() - survivors.len();
    if survivors.is_empty() {
        let mut state = state.clone();
        state.round += 1;
        return Ok(RoundOutcome {
            weights: w.clone(),
            state,
            scores,
            diverged_clients,
            server_diverged: false,
        });
    }
    let mix = weight_by_examples.then_some(mix.as_slice());
    let (next, next_state) = agg(alpha, w, &survivors, mix, state)?;
    if next.is_finite() {
        Ok(RoundOutcome {
            weights: next,
            state: next_state,
            scores,
            diverged_clients,
            server_diverged: false,
        })
    } else {
        let mut state = ServerOptState::new(w.dim(), state.horizon);
        state.round = next_state.round;
        Ok(RoundOutcome {
            weights: w.clone(),
            state,
            scores: vec![f64::INFINITY; scores.len()],
            diverged_clients,
            server_diverged: true,
        })
    }
}
