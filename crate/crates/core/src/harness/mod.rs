//! Multi-seed experiment runner: builds data per seed, runs the configured tuner,
//! evaluates the selected process globally and after local finetuning, and
//! writes reports.

mod config;
mod report;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{self, ClientShard, DataError, ShardManifest};
use crate::exec;
use crate::fl_engine::{self, ClientHPs, EngineError, EvalTotals, ModelWeights};
use crate::hp_space::{HPVector, HyperparamSpec};
use crate::stream::{stream, Purpose, StreamKey};
use crate::tuners::{self, RoundTrace, RunOptions, TuneError};

pub use config::{
    BudgetConfig, DatasetConfig, ExperimentConfig, FedPopConfig, Method, ModelConfig, TunerConfig,
};
pub use report::{
    emit_reports, format_g9, print_report, report_paths, run_sweep, SweepGrid, SweepManifest, SweepPoint,
    TRACE_FIXED_COLUMNS,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("seed {seed}: data: {source}")]
    Data {
        seed: u64,
        #[source]
        source: DataError,
    },
    #[error("seed {seed}: {source}")]
    Tune {
        seed: u64,
        #[source]
        source: TuneError,
    },
    #[error("seed {seed}: finetuning: {source}")]
    Engine {
        seed: u64,
        #[source]
        source: EngineError,
    },
    #[error("{path}: malformed report: {message}")]
    Report { path: String, message: String },
}

impl HarnessError {
    /// 2 for configuration problems, 1 for anything that failed at run time.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config { .. } => 2,
            _ => 1,
        }
    }
}

/// Serde adapters: floats are written with 9 significant digits and non-finite
/// values become `null` (read back as +∞).
mod json_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(super::report::round_sig9(*x))
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }

    pub mod opt {
        use serde::{Deserialize, Deserializer, Serializer};

        pub fn serialize<S: Serializer>(x: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
            match x {
                Some(v) if v.is_finite() => s.serialize_f64(super::super::report::round_sig9(*v)),
                _ => s.serialize_none(),
            }
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
            Option::<f64>::deserialize(d)
        }
    }
}

/// Mean and sample standard deviation (absent for a single seed).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    #[serde(with = "json_float")]
    pub mean: f64,
    #[serde(with = "json_float::opt")]
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Stat {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = (xs.len() >= 2).then(|| {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        });
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    #[serde(with = "json_float")]
    pub global_accuracy: f64,
    #[serde(with = "json_float")]
    pub global_loss: f64,
    #[serde(with = "json_float")]
    pub finetuned_accuracy: f64,
    #[serde(with = "json_float")]
    pub finetuned_loss: f64,
    /// Clients whose finetuning diverged; excluded from the finetuned averages.
    pub finetune_diverged: usize,
    pub best_process: usize,
    #[serde(with = "json_float")]
    pub best_score: f64,
    pub num_alpha: usize,
    pub num_beta: usize,
    pub rounds_consumed: usize,
    pub fedpop_g_events: usize,
    pub fedpop_l_events: usize,
    pub sha_eliminations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub seeds: Vec<SeedResult>,
    pub global_accuracy: Stat,
    pub global_loss: Stat,
    pub finetuned_accuracy: Stat,
    pub finetuned_loss: Stat,
    pub num_alpha: Stat,
    pub num_beta: Stat,
    /// Convergence trace written next to this report.
    pub trace_file: String,
}

impl RunReport {
    fn from_seeds(method: &str, seeds: Vec<SeedResult>) -> RunReport {
        let stat = |f: fn(&SeedResult) -> f64| Stat::of(&seeds.iter().map(f).collect::<Vec<_>>());
        RunReport {
            method: method.to_string(),
            global_accuracy: stat(|s| s.global_accuracy),
            global_loss: stat(|s| s.global_loss),
            finetuned_accuracy: stat(|s| s.finetuned_accuracy),
            finetuned_loss: stat(|s| s.finetuned_loss),
            num_alpha: stat(|s| s.num_alpha as f64),
            num_beta: stat(|s| s.num_beta as f64),
            trace_file: report::TRACE_FILE.to_string(),
            seeds,
        }
    }
}

/// Everything a run produces, before it is written out.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// The validated config with every default written out.
    pub config: ExperimentConfig,
    pub report: RunReport,
    pub traces: Vec<SeedTrace>,
}

#[derive(Debug, Clone)]
pub struct SeedTrace {
    pub seed: u64,
    pub rounds: Vec<RoundTrace>,
    pub partition: Vec<ShardManifest>,
}

/// Finetuned evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Finetuned {
    pub accuracy: f64,
    pub loss: f64,
    pub diverged: usize,
}

/// Example-weighted accuracy and loss over every client's test split.
pub fn evaluate_global(w: &ModelWeights, shards: &[ClientShard]) -> (f64, f64) {
    let t = tuners::evaluate_on_tests(w, shards);
    (t.accuracy(), t.loss())
}

/// Each client trains `w` locally with β⁰ on its own training split, then scores
/// on its test split; totals are pooled across the clients that did not diverge.
pub fn evaluate_finetuned(
    w: &ModelWeights,
    beta0: &HPVector,
    specs: &[HyperparamSpec],
    shards: &[ClientShard],
    seed: u64,
) -> Result<Finetuned, EngineError> {
    let beta = ClientHPs::decode(specs, beta0)?;
    let key = StreamKey::new(seed, Purpose::Finetune);
    let per_client = exec::map(shards, |s| {
        let mut rng = key.client(s.client_id).rng();
        fl_engine::loc(&beta, w, &s.train, &mut rng)
            .ok()
            .map(|wk| fl_engine::evaluate(&wk, &s.test))
    });
    let diverged = per_client.iter().filter(|t| t.is_none()).count();
    if diverged > 0 {
        log::warn!("{diverged} of {} clients diverged while finetuning", shards.len());
    }
    let totals = per_client
        .into_iter()
        .flatten()
        .fold(EvalTotals::default(), EvalTotals::merge);
    let loss = if totals.count == 0 { f64::INFINITY } else { totals.loss() };
    Ok(Finetuned {
        accuracy: totals.accuracy(),
        loss,
        diverged,
    })
}

/// Builds the seed's dataset and client shards.
pub fn build_shards(config: &ExperimentConfig, seed: u64) -> Result<Vec<ClientShard>, HarnessError> {
    let dataset = match &config.dataset {
        DatasetConfig::Synthetic {
            num_examples,
            num_features,
            num_classes,
            class_separation,
        } => data::generate_synthetic(
            *num_examples,
            *num_features,
            *num_classes,
            *class_separation,
            &mut stream(seed, Purpose::Data),
        ),
        DatasetConfig::Csv { path, label_column } => data::load_csv(path, label_column),
    }
    .map_err(|source| HarnessError::Data { seed, source })?;
    data::partition(&dataset, &config.partition, &mut stream(seed, Purpose::Partition))
        .map_err(|source| HarnessError::Data { seed, source })
}

fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<(SeedResult, SeedTrace), HarnessError> {
    let shards = build_shards(config, seed)?;
    let first = &shards[0].train;
    let arch = config
        .model
        .architecture(first.num_features(), first.num_classes());
    let w0 = ModelWeights::init(arch, &mut stream(seed, Purpose::InitWeights));
    let budget = config.tuning_budget()?;
    let fedpop = config.fedpop_params();
    let outcome = tuners::run_fedpop(
        config.tuner.method.constructor(),
        &config.space,
        &budget,
        &config.tuner.sha,
        fedpop.as_ref(),
        &shards,
        &w0,
        seed,
        RunOptions {
            weight_by_examples: config.tuner.weight_by_examples,
            eval_every: config.eval_every,
        },
    )
    .map_err(|source| HarnessError::Tune { seed, source })?;

    let (window, decay) = config.selection_window();
    let best = outcome
        .processes
        .iter()
        .map(|p| (p.windowed_score(window, decay), p))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.id.cmp(&b.1.id)))
        .expect("at least one process survives");
    let (best_score, best) = best;
    let (global_accuracy, global_loss) = evaluate_global(&best.weights, &shards);
    let ft = evaluate_finetuned(&best.weights, &best.beta0, &config.space.client, &shards, seed)
        .map_err(|source| HarnessError::Engine { seed, source })?;
    let (num_alpha, num_beta) = tuners::count_tried_vectors(&outcome.traces);
    let count = |f: fn(&RoundTrace) -> bool| outcome.traces.iter().filter(|t| f(t)).count();

    let result = SeedResult {
        seed,
        global_accuracy,
        global_loss,
        finetuned_accuracy: ft.accuracy,
        finetuned_loss: ft.loss,
        finetune_diverged: ft.diverged,
        best_process: best.id,
        best_score,
        num_alpha,
        num_beta,
        rounds_consumed: outcome.rounds_consumed,
        fedpop_g_events: count(|t| t.events.fedpop_g_replaced),
        fedpop_l_events: count(|t| t.events.fedpop_l_replaced),
        sha_eliminations: count(|t| t.events.sha_eliminated),
    };
    log::info!(
        "seed {seed}: {} global acc {:.4}, finetuned {:.4}",
        config.tuner.method.name(),
        global_accuracy,
        ft.accuracy
    );
    let trace = SeedTrace {
        seed,
        rounds: outcome.traces,
        partition: data::manifest(&shards),
    };
    Ok((result, trace))
}

/// Validates `config`, then runs every seed (concurrently when the parallel
/// feature is on). Results are ordered as the seeds are listed.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Experiment, HarnessError> {
    let resolved = config.resolved()?;
    let runs = exec::map(&resolved.seeds, |&seed| run_seed(&resolved, seed));
    let mut results = Vec::with_capacity(runs.len());
    let mut traces = Vec::with_capacity(runs.len());
    for run in runs {
        let (r, t) = run?;
        results.push(r);
        traces.push(t);
    }
    let report = RunReport::from_seeds(resolved.tuner.method.name(), results);
    Ok(Experiment {
        config: resolved,
        report,
        traces,
    })
}

/// Runs and writes reports into `config.output_dir`.
pub fn run_to_dir(config: &ExperimentConfig) -> Result<(RunReport, PathBuf), HarnessError> {
    let exp = run_experiment(config)?;
    let dir = exp.config.output_dir.clone();
    emit_reports(&exp, &dir)?;
    Ok((exp.report, dir))
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}
