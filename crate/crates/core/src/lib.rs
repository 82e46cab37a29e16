//! Federated-learning simulator with a population-based hyperparameter tuning layer.
//!
//! The crate is organised bottom-up:
//!
//! * [`hp_space`] declares search spaces and samples hyperparameter vectors.
//! * [`evo`] perturbs vectors with annealed intensity and resampling probability.
//! * [`data`] builds synthetic or CSV datasets and partitions them across clients.
//! * [`fl_engine`] runs local training, validation and server aggregation.
//! * [`tuners`] holds the RS / SHA population constructors and the FedPop updates.
//! * [`harness`] drives multi-seed experiments and writes reports.
//!
//! Client updates, tuning processes and seeds are mapped through [`exec`], which
//! uses rayon when the `parallel` feature is enabled and plain iterators otherwise.
//! Every random decision is drawn from a stream keyed in [`stream`], so results do
//! not depend on scheduling.

pub mod data;
pub mod evo;
pub mod exec;
pub mod fl_engine;
pub mod harness;
pub mod hp_space;
pub mod stream;
pub mod tuners;

pub use data::{ClientShard, Dataset, PartitionScheme, PartitionSpec};
pub use evo::{anneal, evo, perturb_value, EvoParams};
pub use fl_engine::{Architecture, ClientHPs, ModelWeights, ServerHPs, ServerOptState};
pub use harness::{run_experiment, ExperimentConfig, RunReport};
pub use hp_space::{HPVector, HpValue, HyperparamSpec, SearchSpace, SpaceRole, SpecKind};
pub use tuners::{FedPopParams, RoundTrace, ShaParams, TuningBudget, TuningProcess};
