#![allow(dead_code)]

use std::path::Path;

use fedpop::harness::{ExperimentConfig, Method};

/// The desk-scale task: 10 Gaussian classes in 20 dimensions, 2000 examples over
/// 20 Dirichlet(0.5) clients, K = 5, budget (400, 80).
pub fn desk_config(method: Method, out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"{{
          "dataset": {{ "synthetic": {{ "num_examples": 2000, "num_features": 20,
                                        "num_classes": 10, "class_separation": 4.0 }} }},
          "partition": {{ "scheme": {{ "dirichlet": {{ "concentration": 0.5 }} }}, "num_clients": 20 }},
          "model": {{ "mlp": {{ "hidden_width": 16 }} }},
          "budget": {{ "total_rounds": 400, "rounds_per_config": 80, "clients_per_round": 5 }},
          "tuner": {{ "method": "{}" }},
          "seeds": [1, 2, 3, 4, 5],
          "output_dir": {}
        }}"#,
        method.name(),
        serde_json::to_string(out).unwrap()
    );
    ExperimentConfig::from_json(&text).unwrap()
}

/// Small and fast: 600 examples, 10 clients, 30-round configurations.
pub fn small_config(method: Method, out: &Path) -> ExperimentConfig {
    let mut c = desk_config(method, out);
    c.dataset = fedpop::harness::DatasetConfig::Synthetic {
        num_examples: 600,
        num_features: 6,
        num_classes: 3,
        class_separation: 3.0,
    };
    c.partition.num_clients = 10;
    c.model = fedpop::harness::ModelConfig::Logistic;
    c.budget.total_rounds = 90;
    c.budget.rounds_per_config = 30;
    c.budget.clients_per_round = 4;
    c.seeds = vec![7, 8];
    c
}
