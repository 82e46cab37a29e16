//! Round throughput on the default rayon pool versus a single-thread pool.
//!
//! `cargo bench -p fedpop` compares both pools; `cargo bench -p fedpop
//! --no-default-features` measures the plain sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fedpop::data::{generate_synthetic, partition, ClientShard, PartitionScheme, PartitionSpec};
use fedpop::fl_engine::{fed_opt_round, Architecture, ClientHPs, ModelWeights, ServerHPs, ServerOptState};
use fedpop::hp_space::SearchSpace;
use fedpop::stream::{stream, Purpose, StreamKey};
use fedpop::tuners::{run_fedpop, Constructor, FedPopParams, RunOptions, ShaParams, TuningBudget};

fn desk_shards() -> Vec<ClientShard> {
    let data = generate_synthetic(2000, 20, 10, 4.0, &mut stream(1, Purpose::Data)).unwrap();
    partition(
        &data,
        &PartitionSpec {
            scheme: PartitionScheme::Dirichlet { concentration: 0.5 },
            num_clients: 20,
            split_fractions: [0.7, 0.15, 0.15],
        },
        &mut stream(1, Purpose::Partition),
    )
    .unwrap()
}

const ARCH: Architecture = Architecture::Mlp {
    num_features: 20,
    hidden_width: 16,
    num_classes: 10,
};

fn pools() -> Vec<(&'static str, rayon::ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("default_pool", default), ("one_thread", single)]
}

fn bench_round(c: &mut Criterion) {
    let shards = desk_shards();
    let w = ModelWeights::init(ARCH, &mut stream(1, Purpose::InitWeights));
    let beta = ClientHPs {
        learning_rate: 0.05,
        local_epochs: 2,
        batch_size: 16,
        ..Default::default()
    };
    let mut group = c.benchmark_group("fed_opt_round");
    for k in [5, 20] {
        let refs: Vec<&ClientShard> = shards.iter().take(k).collect();
        let betas = vec![beta; k];
        for (name, pool) in pools() {
            group.bench_with_input(BenchmarkId::new(name, k), &k, |b, &k| {
                b.iter(|| {
                    pool.install(|| {
                        let key = StreamKey::new(1, Purpose::LocalTrain);
                        let rngs = (0..k).map(|i| key.client(i).rng()).collect();
                        fed_opt_round(
                            &ServerHPs::default(),
                            &betas,
                            &w,
                            &refs,
                            &ServerOptState::new(w.dim(), 10),
                            rngs,
                            false,
                        )
                        .unwrap()
                    })
                })
            });
        }
    }
    group.finish();
}

fn bench_population(c: &mut Criterion) {
    let shards = desk_shards();
    let w0 = ModelWeights::init(ARCH, &mut stream(1, Purpose::InitWeights));
    let budget = TuningBudget {
        total_rounds: 100,
        rounds_per_config: 20,
        num_configs: 5,
        clients_per_round: 5,
    };
    let fp = FedPopParams::with_defaults(20);
    let mut group = c.benchmark_group("fedpop_rs_20_rounds");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| {
                pool.install(|| {
                    run_fedpop(
                        Constructor::Rs,
                        &SearchSpace::default(),
                        &budget,
                        &ShaParams::default(),
                        Some(&fp),
                        &shards,
                        &w0,
                        1,
                        RunOptions::default(),
                    )
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_round, bench_population);
criterion_main!(benches);
