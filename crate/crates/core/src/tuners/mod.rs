//! Population constructors (random search, successive halving) and the FedPop
//! evolutionary updates layered on top of them.
//!
//! Scores are validation losses throughout: lower is better, and the `+∞` sentinel
//! marks diverged clients or processes.

mod select;
mod sha;

use std::collections::HashSet;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ClientShard;
use crate::evo::{anneal, evo, EvoParams};
use crate::exec;
use crate::fl_engine::{
    evaluate, fed_opt_round, ClientHPs, EngineError, EvalTotals, ModelWeights, ServerHPs,
    ServerOptState,
};
use crate::hp_space::{self, HPVector, HyperparamSpec, SearchSpace, SpaceError, SpaceRole};
use crate::stream::{Purpose, StreamKey};

pub use select::{quantile_split, QuantileSplit};
pub use sha::{schedule as sha_schedule, ShaParams, ShaSchedule};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("budget mismatch: {0}")]
    BudgetMismatch(String),
    #[error("infeasible SHA schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("invalid tuner parameters: {0}")]
    InvalidParams(String),
    #[error("process {process}, round {round}: {source}")]
    Engine {
        process: usize,
        round: usize,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningBudget {
    /// Total communication rounds `R_t`.
    pub total_rounds: usize,
    /// Maximum rounds per configuration `R_c`.
    pub rounds_per_config: usize,
    /// Population size `N_c`.
    pub num_configs: usize,
    /// Active clients per round `K`.
    pub clients_per_round: usize,
}

impl TuningBudget {
    /// Random-search budget with `N_c = R_t / R_c`.
    pub fn for_rs(
        total_rounds: usize,
        rounds_per_config: usize,
        clients_per_round: usize,
    ) -> Result<Self, TuneError> {
        if rounds_per_config == 0 || !total_rounds.is_multiple_of(rounds_per_config) {
            return Err(TuneError::BudgetMismatch(format!(
                "R_t = {total_rounds} is not a multiple of R_c = {rounds_per_config}"
            )));
        }
        let b = TuningBudget {
            total_rounds,
            rounds_per_config,
            num_configs: total_rounds / rounds_per_config,
            clients_per_round,
        };
        b.validate_common()?;
        Ok(b)
    }

    fn validate_common(&self) -> Result<(), TuneError> {
        if self.total_rounds == 0
            || self.rounds_per_config == 0
            || self.num_configs == 0
            || self.clients_per_round == 0
        {
            return Err(TuneError::BudgetMismatch(
                "all budget entries must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_rs(&self) -> Result<(), TuneError> {
        self.validate_common()?;
        if self.num_configs * self.rounds_per_config != self.total_rounds {
            return Err(TuneError::BudgetMismatch(format!(
                "random search needs R_t = N_c·R_c, got {} ≠ {}·{}",
                self.total_rounds, self.num_configs, self.rounds_per_config
            )));
        }
        Ok(())
    }

    pub fn check_clients(&self, available: usize) -> Result<(), TuneError> {
        if self.clients_per_round > available {
            return Err(TuneError::BudgetMismatch(format!(
                "K = {} exceeds the {available} available clients",
                self.clients_per_round
            )));
        }
        Ok(())
    }
}

/// FedPop coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedPopParams {
    /// Quantile coefficient ρ.
    pub rho: usize,
    /// Rounds between inter-configuration (FedPop-G) updates.
    pub t_g: usize,
    pub evo: EvoParams,
    /// Exponent of the power-law weights used for windowed scores.
    pub decay_power: f64,
    /// Run the intra-configuration update (FedPop-L).
    pub local: bool,
    /// Run the inter-configuration update (FedPop-G).
    pub global: bool,
}

impl FedPopParams {
    /// ε = p_re = 0.1, ρ = 3, T_g = 0.05·R_c, annealed over R_c, power 1.
    pub fn with_defaults(rounds_per_config: usize) -> Self {
        FedPopParams {
            rho: 3,
            t_g: default_t_g(rounds_per_config),
            evo: EvoParams {
                epsilon0: 0.1,
                p_re0: 0.1,
                anneal_horizon: rounds_per_config.max(1),
            },
            decay_power: 1.0,
            local: true,
            global: true,
        }
    }

    pub fn validate(&self, budget: &TuningBudget) -> Result<(), TuneError> {
        if self.rho < 2 {
            return Err(TuneError::InvalidParams("rho must be at least 2".into()));
        }
        if self.t_g == 0 || self.t_g > budget.rounds_per_config {
            return Err(TuneError::InvalidParams(format!(
                "T_g = {} must lie in 1..={}",
                self.t_g, budget.rounds_per_config
            )));
        }
        if !(self.decay_power > 0.0 && self.decay_power.is_finite()) {
            return Err(TuneError::InvalidParams("decay_power must be positive".into()));
        }
        self.evo
            .validate()
            .map_err(|e| TuneError::InvalidParams(e.to_string()))
    }
}

/// `T_g = 0.05·R_c`, rounded, at least one round.
pub fn default_t_g(rounds_per_config: usize) -> usize {
    ((0.05 * rounds_per_config as f64).round() as usize).max(1)
}

/// How a hyperparameter vector came to exist. Together with process, round and
/// slot it identifies one tried vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    Ball,
    LocalEvo,
    GlobalEvo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VectorId {
    pub origin: Origin,
    pub process: usize,
    pub round: usize,
    pub slot: usize,
}

impl VectorId {
    fn new(origin: Origin, process: usize, round: usize, slot: usize) -> Self {
        VectorId {
            origin,
            process,
            round,
            slot,
        }
    }
}

/// One population member.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningProcess {
    pub id: usize,
    pub alpha: HPVector,
    pub alpha_id: VectorId,
    /// Perturbation center for the client vectors.
    pub beta0: HPVector,
    pub beta0_id: VectorId,
    /// Per-client vectors; empty means "resample next round".
    pub betas: Vec<HPVector>,
    pub beta_ids: Vec<VectorId>,
    pub weights: ModelWeights,
    pub server_state: ServerOptState,
    /// `(round, s_i)` pairs, oldest first.
    pub score_history: Vec<(usize, f64)>,
}

impl TuningProcess {
    /// A process at round zero: empty β list, weights `w0`, zeroed server state.
    pub fn fresh(
        id: usize,
        alpha: HPVector,
        beta0: HPVector,
        w0: &ModelWeights,
        horizon: usize,
    ) -> Self {
        TuningProcess {
            id,
            alpha,
            alpha_id: VectorId::new(Origin::Initial, id, 0, 0),
            beta0,
            beta0_id: VectorId::new(Origin::Initial, id, 0, 1),
            betas: Vec::new(),
            beta_ids: Vec::new(),
            weights: w0.clone(),
            server_state: ServerOptState::new(w0.dim(), horizon),
            score_history: Vec::new(),
        }
    }

    /// Power-law weighted mean of the last `window` scores.
    pub fn windowed_score(&self, window: usize, decay_power: f64) -> f64 {
        let scores: Vec<f64> = self.score_history.iter().map(|&(_, s)| s).collect();
        windowed_score(&scores, window, decay_power)
    }

    pub fn last_score(&self) -> f64 {
        self.score_history
            .last()
            .map_or(f64::INFINITY, |&(_, s)| s)
    }
}

/// Weighted mean of the newest `window` entries of `history` (oldest first), with
/// weight `(age + 1)^(−c)` and age 0 for the newest entry. Empty history scores `+∞`.
pub fn windowed_score(history: &[f64], window: usize, decay_power: f64) -> f64 {
    let take = window.max(1).min(history.len());
    if take == 0 {
        return f64::INFINITY;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (age, s) in history.iter().rev().take(take).enumerate() {
        let w = ((age + 1) as f64).powf(-decay_power);
        num += w * s;
        den += w;
    }
    let m = num / den;
    if m.is_nan() {
        f64::INFINITY
    } else {
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EventTags {
    pub fedpop_g_replaced: bool,
    pub fedpop_l_replaced: bool,
    pub sha_eliminated: bool,
    pub resampled_ball: bool,
}

impl EventTags {
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.fedpop_g_replaced {
            out.push("fedpop_g_replaced");
        }
        if self.fedpop_l_replaced {
            out.push("fedpop_l_replaced");
        }
        if self.sha_eliminated {
            out.push("sha_eliminated");
        }
        if self.resampled_ball {
            out.push("resampled_ball");
        }
        out
    }
}

/// Record of one live process in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub round: usize,
    pub process_id: usize,
    pub client_ids: Vec<usize>,
    pub client_scores: Vec<f64>,
    /// `s_i`, the mean client score.
    pub mean_score: f64,
    pub alpha: HPVector,
    pub beta0: HPVector,
    pub alpha_id: VectorId,
    /// Vectors handed to the clients this round.
    pub beta_ids: Vec<VectorId>,
    pub events: EventTags,
    /// Test accuracy of the process's aggregated model, on evaluation rounds.
    pub global_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constructor {
    Rs,
    Sha,
}

/// Switches that do not change the tuning algorithm itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[derive(Default)]
pub struct RunOptions {
    /// Weight the aggregation mean by client training-set size.
    pub weight_by_examples: bool,
    /// Evaluate every live model on all test sets every this many rounds (0 = never).
    pub eval_every: usize,
}


#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Processes alive at the end of the run.
    pub processes: Vec<TuningProcess>,
    pub traces: Vec<RoundTrace>,
    /// Total fed-opt rounds executed across all processes.
    pub rounds_consumed: usize,
    pub schedule: Option<ShaSchedule>,
}

fn sample_configs(
    space: &SearchSpace,
    count: usize,
    w0: &ModelWeights,
    horizon: usize,
    seed: u64,
) -> Vec<TuningProcess> {
    (0..count)
        .map(|i| {
            let alpha = hp_space::sample(
                &space.server,
                SpaceRole::Server,
                &mut StreamKey::new(seed, Purpose::SampleAlpha).process(i).rng(),
            );
            let beta0 = hp_space::sample(
                &space.client,
                SpaceRole::Client,
                &mut StreamKey::new(seed, Purpose::SampleBeta).process(i).rng(),
            );
            TuningProcess::fresh(i, alpha, beta0, w0, horizon)
        })
        .collect()
}

/// `N_c = R_t / R_c` independently sampled configurations sharing `w0`.
pub fn construct_population_rs(
    space: &SearchSpace,
    budget: &TuningBudget,
    w0: &ModelWeights,
    seed: u64,
) -> Result<Vec<TuningProcess>, TuneError> {
    budget.validate_rs()?;
    Ok(sample_configs(
        space,
        budget.num_configs,
        w0,
        budget.rounds_per_config,
        seed,
    ))
}

/// `η^rungs` configurations plus the rung schedule that eliminates down to one.
pub fn construct_population_sha(
    space: &SearchSpace,
    budget: &TuningBudget,
    params: &ShaParams,
    w0: &ModelWeights,
    seed: u64,
) -> Result<(Vec<TuningProcess>, ShaSchedule), TuneError> {
    let schedule = sha_schedule(params, budget.total_rounds, budget.rounds_per_config)?;
    let procs = sample_configs(
        space,
        schedule.initial_configs(),
        w0,
        budget.rounds_per_config,
        seed,
    );
    Ok((procs, schedule))
}

/// Intra-configuration update. Every index in the bottom quantile receives an
/// evolved copy of a uniformly drawn top-quantile donor, clipped into the Δ-ball
/// of `center`. Returns the new vectors and the replaced indices.
#[allow(clippy::too_many_arguments)]
pub fn fedpop_l<R: Rng + ?Sized>(
    specs: &[HyperparamSpec],
    betas: &[HPVector],
    scores: &[f64],
    rho: usize,
    epsilon: f64,
    p_re: f64,
    center: &HPVector,
    rng: &mut R,
) -> (Vec<HPVector>, Vec<usize>) {
    let split = quantile_split(scores, rho);
    let mut out = betas.to_vec();
    for &kb in &split.bottom {
        let kt = split.top[rng.random_range(0..split.top.len())];
        let evolved = evo(specs, &betas[kt], epsilon, p_re, rng);
        out[kb] = hp_space::clip_to_ball(specs, center, &evolved);
    }
    (out, split.bottom)
}

/// Inter-configuration update over `processes` using `measurements` (one per
/// process). Bottom-quantile processes take an evolved copy of a top donor's α and
/// β⁰, the donor's weights and server state, and an empty β list. Returns the
/// replaced positions.
#[allow(clippy::too_many_arguments)]
pub fn fedpop_g<R: Rng + ?Sized>(
    space: &SearchSpace,
    processes: &mut [TuningProcess],
    measurements: &[f64],
    rho: usize,
    epsilon: f64,
    p_re: f64,
    round: usize,
    rng: &mut R,
) -> Vec<usize> {
    let split = quantile_split(measurements, rho);
    for &ib in &split.bottom {
        let it = split.top[rng.random_range(0..split.top.len())];
        let donor = &processes[it];
        let alpha = evo(&space.server, &donor.alpha, epsilon, p_re, rng);
        let beta0 = evo(&space.client, &donor.beta0, epsilon, p_re, rng);
        let weights = donor.weights.clone();
        let state = donor.server_state.clone();
        let target = &mut processes[ib];
        let id = target.id;
        target.alpha = alpha;
        target.alpha_id = VectorId::new(Origin::GlobalEvo, id, round, 0);
        target.beta0 = beta0;
        target.beta0_id = VectorId::new(Origin::GlobalEvo, id, round, 1);
        target.weights = weights;
        target.server_state = state;
        target.betas.clear();
        target.beta_ids.clear();
    }
    split.bottom
}

/// Counts distinct α vectors used in aggregation and β vectors used in local
/// training.
pub fn count_tried_vectors(traces: &[RoundTrace]) -> (usize, usize) {
    let alphas: HashSet<VectorId> = traces.iter().map(|t| t.alpha_id).collect();
    let betas: HashSet<VectorId> = traces
        .iter()
        .flat_map(|t| t.beta_ids.iter().copied())
        .collect();
    (alphas.len(), betas.len())
}

/// Test-set totals of `w` over every client.
pub fn evaluate_on_tests(w: &ModelWeights, shards: &[ClientShard]) -> EvalTotals {
    shards
        .iter()
        .fold(EvalTotals::default(), |acc, s| acc.merge(evaluate(w, &s.test)))
}

struct RoundContext<'a> {
    space: &'a SearchSpace,
    shards: &'a [ClientShard],
    active: &'a [usize],
    seed: u64,
    round: usize,
    epsilon: f64,
    p_re: f64,
    rho: usize,
    local: bool,
    options: RunOptions,
}

fn step_process(p: &mut TuningProcess, ctx: &RoundContext<'_>) -> Result<RoundTrace, TuneError> {
    let k = ctx.active.len();
    let r = ctx.round;
    let mut events = EventTags::default();
    if p.betas.is_empty() {
        if ctx.local {
            let mut rng = StreamKey::new(ctx.seed, Purpose::DeltaBall)
                .process(p.id)
                .round(r)
                .rng();
            p.betas = (0..k)
                .map(|_| hp_space::sample_in_ball(&ctx.space.client, &p.beta0, &mut rng))
                .collect();
            p.beta_ids = (0..k).map(|slot| VectorId::new(Origin::Ball, p.id, r, slot)).collect();
            events.resampled_ball = true;
        } else {
            p.betas = vec![p.beta0.clone(); k];
            p.beta_ids = vec![p.beta0_id; k];
        }
    }
    let engine_err = |source| TuneError::Engine {
        process: p.id,
        round: r,
        source,
    };
    let alpha = ServerHPs::decode(&ctx.space.server, &p.alpha).map_err(engine_err)?;
    let betas = p
        .betas
        .iter()
        .map(|b| ClientHPs::decode(&ctx.space.client, b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(engine_err)?;
    let shards: Vec<&ClientShard> = ctx.active.iter().map(|&c| &ctx.shards[c]).collect();
    let rngs = ctx
        .active
        .iter()
        .map(|&c| {
            StreamKey::new(ctx.seed, Purpose::LocalTrain)
                .process(p.id)
                .round(r)
                .client(c)
                .rng()
        })
        .collect();
    let outcome = fed_opt_round(
        &alpha,
        &betas,
        &p.weights,
        &shards,
        &p.server_state,
        rngs,
        ctx.options.weight_by_examples,
    )
    .map_err(|source| TuneError::Engine {
        process: p.id,
        round: r,
        source,
    })?;

    let mean_score = outcome.scores.iter().sum::<f64>() / k as f64;
    let mut trace = RoundTrace {
        round: r,
        process_id: p.id,
        client_ids: ctx.active.to_vec(),
        client_scores: outcome.scores.clone(),
        mean_score,
        alpha: p.alpha.clone(),
        beta0: p.beta0.clone(),
        alpha_id: p.alpha_id,
        beta_ids: p.beta_ids.clone(),
        events,
        global_accuracy: None,
    };

    if ctx.local {
        let mut rng = StreamKey::new(ctx.seed, Purpose::FedPopL)
            .process(p.id)
            .round(r)
            .rng();
        let (next, replaced) = fedpop_l(
            &ctx.space.client,
            &p.betas,
            &outcome.scores,
            ctx.rho,
            ctx.epsilon,
            ctx.p_re,
            &p.beta0,
            &mut rng,
        );
        p.betas = next;
        for &slot in &replaced {
            p.beta_ids[slot] = VectorId::new(Origin::LocalEvo, p.id, r, slot);
        }
        trace.events.fedpop_l_replaced = !replaced.is_empty();
    }
    p.weights = outcome.weights;
    p.server_state = outcome.state;
    p.score_history.push((r, mean_score));
    Ok(trace)
}

/// Runs a population for `R_c` synchronous rounds.
///
/// Each round, every live process (in parallel) resamples its client vectors if
/// needed, runs one fed-opt round on the round's `K` active clients, and applies
/// FedPop-L. Then, every `T_g` rounds, FedPop-G acts on the live population, and
/// SHA eliminates at its rungs. `fedpop = None` runs the bare constructor.
///
/// FedPop-L (and with it the Δ-ball client vectors) is active only when enabled and
/// `⌊K/ρ⌋ ≥ 1`; otherwise every client trains with β⁰.
#[allow(clippy::too_many_arguments)]
pub fn run_fedpop(
    constructor: Constructor,
    space: &SearchSpace,
    budget: &TuningBudget,
    sha: &ShaParams,
    fedpop: Option<&FedPopParams>,
    shards: &[ClientShard],
    w0: &ModelWeights,
    seed: u64,
    options: RunOptions,
) -> Result<RunOutcome, TuneError> {
    space.validate()?;
    budget.check_clients(shards.len())?;
    if let Some(fp) = fedpop {
        fp.validate(budget)?;
    }
    let (mut live, schedule) = match constructor {
        Constructor::Rs => (construct_population_rs(space, budget, w0, seed)?, None),
        Constructor::Sha => {
            let (p, s) = construct_population_sha(space, budget, sha, w0, seed)?;
            (p, Some(s))
        }
    };
    let k = budget.clients_per_round;
    let local = fedpop.is_some_and(|f| f.local && k / f.rho >= 1);
    let global = fedpop.is_some_and(|f| f.global);
    let rho = fedpop.map_or(usize::MAX, |f| f.rho);

    let mut traces = Vec::new();
    let mut rounds_consumed = 0;
    for r in 1..=budget.rounds_per_config {
        let (epsilon, p_re) = fedpop.map_or((0.0, 0.0), |f| anneal(&f.evo, r - 1));
        let active: Vec<usize> = index::sample(
            &mut StreamKey::new(seed, Purpose::ClientSelect).round(r).rng(),
            shards.len(),
            k,
        )
        .into_vec();
        let ctx = RoundContext {
            space,
            shards,
            active: &active,
            seed,
            round: r,
            epsilon,
            p_re,
            rho,
            local,
            options,
        };
        let mut slots: Vec<(TuningProcess, Option<Result<RoundTrace, TuneError>>)> =
            live.into_iter().map(|p| (p, None)).collect();
        exec::for_each_mut(&mut slots, |(p, out)| *out = Some(step_process(p, &ctx)));
        let mut round_traces = Vec::with_capacity(slots.len());
        live = Vec::with_capacity(slots.len());
        for (p, out) in slots {
            round_traces.push(out.expect("every process stepped")?);
            live.push(p);
        }
        rounds_consumed += live.len();

        if let Some(fp) = fedpop.filter(|_| global) {
            if r % fp.t_g == 0 {
                let measurements: Vec<f64> = live
                    .iter()
                    .map(|p| p.windowed_score(fp.t_g, fp.decay_power))
                    .collect();
                let mut rng = StreamKey::new(seed, Purpose::FedPopG).round(r).rng();
                let replaced =
                    fedpop_g(space, &mut live, &measurements, rho, epsilon, p_re, r, &mut rng);
                for i in replaced {
                    round_traces[i].events.fedpop_g_replaced = true;
                }
            }
        }

        if let Some(s) = schedule.as_ref().filter(|s| s.is_rung(r)) {
            let keep = (live.len() / s.eta).max(1);
            let mut order: Vec<usize> = (0..live.len()).collect();
            order.sort_by(|&a, &b| {
                live[a]
                    .last_score()
                    .total_cmp(&live[b].last_score())
                    .then(live[a].id.cmp(&live[b].id))
            });
            let survivors: HashSet<usize> = order[..keep].iter().copied().collect();
            for (i, t) in round_traces.iter_mut().enumerate() {
                t.events.sha_eliminated = !survivors.contains(&i);
            }
            live = live
                .into_iter()
                .enumerate()
                .filter(|(i, _)| survivors.contains(i))
                .map(|(_, p)| p)
                .collect();
        }

        if options.eval_every > 0 && (r % options.eval_every == 0 || r == budget.rounds_per_config)
        {
            let accs = exec::map(&live, |p| evaluate_on_tests(&p.weights, shards).accuracy());
            for (p, acc) in live.iter().zip(accs) {
                if let Some(t) = round_traces.iter_mut().find(|t| t.process_id == p.id) {
                    t.global_accuracy = Some(acc);
                }
            }
        }
        traces.extend(round_traces);
    }
    Ok(RunOutcome {
        processes: live,
        traces,
        rounds_consumed,
        schedule,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fl_engine::Architecture;
    use crate::stream::stream;

    #[test]
    fn windowed_score_example() {
        let m = windowed_score(&[4.0, 3.0, 2.0, 1.0], 4, 1.0);
        let expect = 4.0 / (1.0 + 0.5 + 1.0 / 3.0 + 0.25);
        assert!((m - expect).abs() < 1e-12);
        assert!((m - 1.92).abs() < 0.01);
        // Only the newest `window` entries count.
        assert_eq!(windowed_score(&[100.0, 2.0], 1, 1.0), 2.0);
        assert_eq!(windowed_score(&[], 4, 1.0), f64::INFINITY);
        assert_eq!(windowed_score(&[1.0, f64::INFINITY], 2, 1.0), f64::INFINITY);
    }

    #[test]
    fn rs_budget() {
        let b = TuningBudget::for_rs(4000, 800, 5).unwrap();
        assert_eq!(b.num_configs, 5);
        assert!(TuningBudget::for_rs(4000, 700, 5).is_err());
        let bad = TuningBudget {
            num_configs: 4,
            ..b
        };
        assert!(matches!(bad.validate_rs(), Err(TuneError::BudgetMismatch(_))));
    }

    #[test]
    fn rs_population_shares_weights() {
        let space = SearchSpace::default();
        let b = TuningBudget::for_rs(4000, 800, 5).unwrap();
        let w0 = ModelWeights::init(
            Architecture::Mlp {
                num_features: 3,
                hidden_width: 4,
                num_classes: 2,
            },
            &mut stream(1, Purpose::InitWeights),
        );
        let procs = construct_population_rs(&space, &b, &w0, 1).unwrap();
        assert_eq!(procs.len(), 5);
        for p in &procs {
            assert_eq!(p.weights, w0);
            assert!(p.betas.is_empty());
            assert!(p.server_state.momentum.iter().all(|&m| m == 0.0));
            p.alpha.validate(&space.server).unwrap();
            p.beta0.validate(&space.client).unwrap();
        }
    }

    #[test]
    fn fedpop_params_defaults() {
        let p = FedPopParams::with_defaults(800);
        assert_eq!(p.t_g, 40);
        assert_eq!(p.rho, 3);
        assert_eq!(p.evo.epsilon0, 0.1);
        assert_eq!(p.evo.p_re0, 0.1);
        assert_eq!(FedPopParams::with_defaults(80).t_g, 4);
        let b = TuningBudget::for_rs(400, 80, 5).unwrap();
        assert!(p.validate(&b).is_ok());
        assert!(FedPopParams { rho: 1, ..p }.validate(&b).is_err());
        assert!(FedPopParams { t_g: 81, ..p }.validate(&b).is_err());
    }

    #[test]
    fn fedpop_l_identity_evo_copies_donors() {
        let space = SearchSpace::default();
        let specs = &space.client;
        let mut rng = stream(2, Purpose::SampleBeta);
        let center = hp_space::sample(specs, SpaceRole::Client, &mut rng);
        let betas: Vec<HPVector> = (0..9)
            .map(|_| hp_space::sample_in_ball(specs, &center, &mut rng))
            .collect();
        let scores: Vec<f64> = (1..=9).map(f64::from).collect();
        let (out, replaced) = fedpop_l(specs, &betas, &scores, 3, 0.0, 0.0, &center, &mut rng);
        assert_eq!(replaced, vec![6, 7, 8]);
        for k in 0..6 {
            assert_eq!(out[k], betas[k]);
        }
        for k in 6..9 {
            assert!(betas[..3].contains(&out[k]));
        }
    }

    #[test]
    fn fedpop_g_identity_evo_copies_donor() {
        let space = SearchSpace::default();
        let b = TuningBudget::for_rs(500, 100, 5).unwrap();
        let w0 = ModelWeights::zeros(Architecture::Logistic {
            num_features: 2,
            num_classes: 2,
        });
        let mut procs = construct_population_rs(&space, &b, &w0, 3).unwrap();
        for (i, p) in procs.iter_mut().enumerate() {
            p.weights.params[0] = i as f64;
            p.betas = vec![p.beta0.clone(); 5];
        }
        let before = procs.clone();
        let replaced = fedpop_g(
            &space,
            &mut procs,
            &[0.5, 0.1, 0.9, 0.3, 0.4],
            3,
            0.0,
            0.0,
            4,
            &mut stream(3, Purpose::FedPopG),
        );
        assert_eq!(replaced, vec![2]);
        assert_eq!(procs[2].alpha, before[1].alpha);
        assert_eq!(procs[2].beta0, before[1].beta0);
        assert_eq!(procs[2].weights, before[1].weights);
        assert!(procs[2].betas.is_empty());
        assert_eq!(procs[2].id, 2);
        for i in [0, 1, 3, 4] {
            assert_eq!(procs[i], before[i]);
        }
    }
}
