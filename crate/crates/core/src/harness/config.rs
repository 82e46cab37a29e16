//! Experiment configuration: one JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::data::PartitionSpec;
use crate::evo::EvoParams;
use crate::fl_engine::{Architecture, ClientHPs, ServerHPs};
use crate::hp_space::{self, HPVector, SearchSpace, SpaceRole};
use crate::stream::{stream, Purpose};
use crate::tuners::{Constructor, FedPopParams, ShaParams, TuningBudget};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        num_examples: usize,
        num_features: usize,
        num_classes: usize,
        class_separation: f64,
    },
    Csv {
        path: PathBuf,
        label_column: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Logistic,
    Mlp { hidden_width: usize },
}

impl ModelConfig {
    pub fn architecture(&self, num_features: usize, num_classes: usize) -> Architecture {
        match *self {
            ModelConfig::Logistic => Architecture::Logistic {
                num_features,
                num_classes,
            },
            ModelConfig::Mlp { hidden_width } => Architecture::Mlp {
                num_features,
                hidden_width,
                num_classes,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    pub total_rounds: usize,
    pub rounds_per_config: usize,
    pub clients_per_round: usize,
    /// Derived from the constructor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_configs: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rs,
    Sha,
    FedpopRs,
    FedpopSha,
}

impl Method {
    pub fn constructor(self) -> Constructor {
        match self {
            Method::Rs | Method::FedpopRs => Constructor::Rs,
            Method::Sha | Method::FedpopSha => Constructor::Sha,
        }
    }

    pub fn uses_fedpop(self) -> bool {
        matches!(self, Method::FedpopRs | Method::FedpopSha)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rs => "rs",
            Method::Sha => "sha",
            Method::FedpopRs => "fedpop_rs",
            Method::FedpopSha => "fedpop_sha",
        }
    }
}

/// FedPop block; every field falls back to the standard coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FedPopConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_g: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_re0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal_horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decay_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global: Option<bool>,
}

impl FedPopConfig {
    pub fn params(&self, rounds_per_config: usize) -> FedPopParams {
        let d = FedPopParams::with_defaults(rounds_per_config);
        FedPopParams {
            rho: self.rho.unwrap_or(d.rho),
            t_g: self.t_g.unwrap_or(d.t_g),
            evo: EvoParams {
                epsilon0: self.epsilon0.unwrap_or(d.evo.epsilon0),
                p_re0: self.p_re0.unwrap_or(d.evo.p_re0),
                anneal_horizon: self.anneal_horizon.unwrap_or(d.evo.anneal_horizon),
            },
            decay_power: self.decay_power.unwrap_or(d.decay_power),
            local: self.local.unwrap_or(d.local),
            global: self.global.unwrap_or(d.global),
        }
    }

    fn pinned(p: &FedPopParams) -> Self {
        FedPopConfig {
            rho: Some(p.rho),
            t_g: Some(p.t_g),
            epsilon0: Some(p.evo.epsilon0),
            p_re0: Some(p.evo.p_re0),
            anneal_horizon: Some(p.evo.anneal_horizon),
            decay_power: Some(p.decay_power),
            local: Some(p.local),
            global: Some(p.global),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunerConfig {
    pub method: Method,
    #[serde(default)]
    pub fedpop: FedPopConfig,
    #[serde(default)]
    pub sha: ShaParams,
    /// Weight the aggregation mean by client training-set size.
    #[serde(default)]
    pub weight_by_examples: bool,
}

fn default_eval_every() -> usize {
    0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub partition: PartitionSpec,
    pub model: ModelConfig,
    #[serde(default)]
    pub space: SearchSpace,
    pub budget: BudgetConfig,
    pub tuner: TunerConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Record test accuracy of every live model every this many rounds (0 = final round only).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Also write the per-seed client partitions.
    #[serde(default)]
    pub export_partitions: bool,
}

fn config_err(path: &str, message: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config {
        path: path.to_string(),
        message: message.to_string(),
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| config_err("<document>", e))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Budget with `N_c` derived for the constructor.
    pub fn tuning_budget(&self) -> Result<TuningBudget, HarnessError> {
        let b = &self.budget;
        let num_configs = match self.tuner.method.constructor() {
            Constructor::Rs => {
                if b.rounds_per_config == 0 || !b.total_rounds.is_multiple_of(b.rounds_per_config) {
                    return Err(config_err(
                        "budget.total_rounds",
                        "random search needs total_rounds to be a multiple of rounds_per_config",
                    ));
                }
                b.total_rounds / b.rounds_per_config
            }
            Constructor::Sha => self
                .tuner
                .sha
                .eta
                .checked_pow(self.tuner.sha.num_rungs as u32)
                .ok_or_else(|| config_err("tuner.sha", "population size overflows"))?,
        };
        if let Some(n) = b.num_configs {
            if n != num_configs {
                return Err(config_err(
                    "budget.num_configs",
                    format!("constructor implies {num_configs}, config says {n}"),
                ));
            }
        }
        Ok(TuningBudget {
            total_rounds: b.total_rounds,
            rounds_per_config: b.rounds_per_config,
            num_configs,
            clients_per_round: b.clients_per_round,
        })
    }

    pub fn fedpop_params(&self) -> Option<FedPopParams> {
        self.tuner
            .method
            .uses_fedpop()
            .then(|| self.tuner.fedpop.params(self.budget.rounds_per_config))
    }

    /// Window for end-of-run process selection.
    pub fn selection_window(&self) -> (usize, f64) {
        let p = self.tuner.fedpop.params(self.budget.rounds_per_config);
        (p.t_g, p.decay_power)
    }

    /// Checks every block before any computation.
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        match &self.dataset {
            DatasetConfig::Synthetic {
                num_examples,
                num_features,
                num_classes,
                class_separation,
            } => {
                if *num_examples == 0 {
                    return Err(config_err("dataset.synthetic.num_examples", "must be positive"));
                }
                if *num_features == 0 {
                    return Err(config_err("dataset.synthetic.num_features", "must be positive"));
                }
                if *num_classes < 2 {
                    return Err(config_err("dataset.synthetic.num_classes", "must be at least 2"));
                }
                if !(*class_separation >= 0.0 && class_separation.is_finite()) {
                    return Err(config_err(
                        "dataset.synthetic.class_separation",
                        "must be non-negative",
                    ));
                }
            }
            DatasetConfig::Csv { path, .. } => {
                if !path.exists() {
                    return Err(config_err(
                        "dataset.csv.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
            }
        }
        self.partition
            .validate()
            .map_err(|e| config_err("partition", e))?;
        if let ModelConfig::Mlp { hidden_width: 0 } = self.model {
            return Err(config_err("model.mlp.hidden_width", "must be positive"));
        }
        self.space.validate().map_err(|e| config_err("space", e))?;
        // Every vector the space can produce must decode.
        let mut rng = stream(0, Purpose::SampleAlpha);
        for _ in 0..16 {
            let a = hp_space::sample(&self.space.server, SpaceRole::Server, &mut rng);
            ServerHPs::decode(&self.space.server, &a).map_err(|e| config_err("space.server", e))?;
            let b = hp_space::sample(&self.space.client, SpaceRole::Client, &mut rng);
            ClientHPs::decode(&self.space.client, &b).map_err(|e| config_err("space.client", e))?;
        }
        // Interval endpoints must decode too.
        for extreme in [0.0, 1.0 - 1e-12] {
            let edge = |specs: &[hp_space::HyperparamSpec], role| HPVector {
                role,
                values: specs.iter().map(|s| s.from_unit(extreme)).collect(),
            };
            let a = edge(&self.space.server, SpaceRole::Server);
            ServerHPs::decode(&self.space.server, &a).map_err(|e| config_err("space.server", e))?;
            let b = edge(&self.space.client, SpaceRole::Client);
            ClientHPs::decode(&self.space.client, &b).map_err(|e| config_err("space.client", e))?;
        }
        let budget = self.tuning_budget()?;
        if budget.clients_per_round == 0 {
            return Err(config_err("budget.clients_per_round", "must be positive"));
        }
        if budget.clients_per_round > self.partition.num_clients {
            return Err(config_err(
                "budget.clients_per_round",
                "exceeds partition.num_clients",
            ));
        }
        if budget.rounds_per_config == 0 || budget.total_rounds == 0 {
            return Err(config_err("budget", "round budgets must be positive"));
        }
        if self.tuner.method.constructor() == Constructor::Sha {
            crate::tuners::sha_schedule(
                &self.tuner.sha,
                budget.total_rounds,
                budget.rounds_per_config,
            )
            .map_err(|e| config_err("tuner.sha", e))?;
        }
        let fp = self.tuner.fedpop.params(budget.rounds_per_config);
        fp.validate(&budget)
            .map_err(|e| config_err("tuner.fedpop", e))?;
        Ok(())
    }

    /// Copy with every defaulted field written out, suitable for re-running.
    pub fn resolved(&self) -> Result<Self, HarnessError> {
        self.validate()?;
        let mut out = self.clone();
        let budget = self.tuning_budget()?;
        out.budget.num_configs = Some(budget.num_configs);
        out.tuner.fedpop = FedPopConfig::pinned(&self.tuner.fedpop.params(budget.rounds_per_config));
        Ok(out)
    }
}
