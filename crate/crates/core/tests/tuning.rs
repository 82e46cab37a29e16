use std::collections::BTreeSet;

use fedpop::data::{generate_synthetic, partition, ClientShard, PartitionScheme, PartitionSpec};
use fedpop::evo::{perturb_value_traced, EvoParams};
use fedpop::fl_engine::{Architecture, ModelWeights};
use fedpop::hp_space::{self, HPVector, HpValue, HyperparamSpec, SearchSpace, SpaceRole};
use fedpop::stream::{stream, Purpose};
use fedpop::tuners::{
    construct_population_rs, count_tried_vectors, fedpop_l, quantile_split, run_fedpop, Constructor,
    FedPopParams, RunOptions, ShaParams, TuningBudget,
};
use proptest::prelude::*;
use rand::Rng;

fn shards(seed: u64) -> Vec<ClientShard> {
    let data = generate_synthetic(600, 6, 3, 3.0, &mut stream(seed, Purpose::Data)).unwrap();
    partition(
        &data,
        &PartitionSpec {
            scheme: PartitionScheme::Dirichlet { concentration: 0.5 },
            num_clients: 10,
            split_fractions: [0.7, 0.15, 0.15],
        },
        &mut stream(seed, Purpose::Partition),
    )
    .unwrap()
}

fn w0() -> ModelWeights {
    ModelWeights::zeros(Architecture::Logistic {
        num_features: 6,
        num_classes: 3,
    })
}

fn budget(total: usize, per_config: usize, k: usize) -> TuningBudget {
    TuningBudget {
        total_rounds: total,
        rounds_per_config: per_config,
        num_configs: total / per_config,
        clients_per_round: k,
    }
}

/// Rank-based oracle: `top` holds ranks `< m`, `bottom` ranks `≥ n − m` whose
/// score exceeds every top score.
fn oracle(scores: &[f64], rho: usize) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let n = scores.len();
    let m = n / rho;
    let rank = |i: usize| {
        (0..n)
            .filter(|&j| scores[j] < scores[i] || (scores[j] == scores[i] && j < i))
            .count()
    };
    let top: BTreeSet<usize> = (0..n).filter(|&i| rank(i) < m).collect();
    let worst_top = top.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
    let bottom = (0..n)
        .filter(|&i| rank(i) >= n - m && m > 0 && scores[i] > worst_top)
        .collect();
    (top, bottom)
}

#[test]
fn quantile_sets_match_full_sort_oracle() {
    let mut rng = stream(1, Purpose::FedPopL);
    for trial in 0..1000 {
        let n = rng.random_range(1..30);
        let rho = rng.random_range(2..6);
        // Few distinct levels so ties are common.
        let levels = if trial % 2 == 0 { 3 } else { 1000 };
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64).collect();
        let split = quantile_split(&scores, rho);
        let (top, bottom) = oracle(&scores, rho);
        assert_eq!(split.top.iter().copied().collect::<BTreeSet<_>>(), top);
        assert_eq!(split.bottom.iter().copied().collect::<BTreeSet<_>>(), bottom);
    }
}

#[test]
fn fedpop_l_replaces_exactly_the_oracle_bottom() {
    let space = SearchSpace::default();
    let specs = &space.client;
    let mut rng = stream(2, Purpose::FedPopL);
    for _ in 0..200 {
        let center = hp_space::sample(specs, SpaceRole::Client, &mut rng);
        let k = rng.random_range(3..12);
        let betas: Vec<HPVector> = (0..k).map(|_| hp_space::sample_in_ball(specs, &center, &mut rng)).collect();
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(0..4) as f64).collect();
        let (out, replaced) = fedpop_l(specs, &betas, &scores, 3, 0.0, 0.0, &center, &mut rng);
        let (top, bottom) = oracle(&scores, 3);
        assert_eq!(replaced.iter().copied().collect::<BTreeSet<_>>(), bottom);
        for i in 0..k {
            if bottom.contains(&i) {
                assert!(top.iter().any(|&t| out[i] == betas[t]));
            } else {
                assert_eq!(out[i], betas[i]);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn fedpop_l_keeps_ball_invariant(seed in any::<u64>(), k in 3usize..10, eps in 0.0f64..0.5, p_re in 0.0f64..1.0) {
        let space = SearchSpace::default();
        let specs = &space.client;
        let mut rng = stream(seed, Purpose::FedPopL);
        let center = hp_space::sample(specs, SpaceRole::Client, &mut rng);
        let betas: Vec<HPVector> = (0..k).map(|_| hp_space::sample_in_ball(specs, &center, &mut rng)).collect();
        let scores: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let (out, _) = fedpop_l(specs, &betas, &scores, 3, eps, p_re, &center, &mut rng);
        prop_assert_eq!(out.len(), k);
        for b in &out {
            prop_assert!(hp_space::in_ball(specs, &center, b));
            prop_assert!(b.validate(specs).is_ok());
        }
    }
}

/// Largest gap between an empirical CDF and the uniform CDF on [0, 1].
fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn rs_alpha_vectors_are_iid_draws() {
    let space = SearchSpace::default();
    let b = budget(20 * 10, 10, 2);
    let mut per_coord = vec![Vec::new(); space.server.len()];
    let mut first_two = Vec::new();
    for seed in 0..100 {
        let procs = construct_population_rs(&space, &b, &w0(), seed).unwrap();
        assert_eq!(procs.len(), 20);
        assert!(procs.iter().all(|p| p.weights == procs[0].weights));
        for p in &procs {
            for (j, (spec, v)) in space.server.iter().zip(&p.alpha.values).enumerate() {
                let u = match v {
                    HpValue::Real(x) => {
                        let (lo, hi) = spec.bounds();
                        (x - lo) / (hi - lo)
                    }
                    HpValue::Index(i) => (*i as f64 + 0.5) / (spec.max_index() + 1) as f64,
                };
                per_coord[j].push(u);
            }
        }
        let u = |p: &fedpop::tuners::TuningProcess| match p.alpha.values[0] {
            HpValue::Real(x) => x,
            HpValue::Index(i) => i as f64,
        };
        first_two.push((u(&procs[0]), u(&procs[1])));
    }
    for (j, spec) in space.server.iter().enumerate() {
        if spec.is_continuous() {
            let d = ks_uniform(per_coord[j].clone());
            assert!(d < 0.05, "{}: KS {d}", spec.name);
        }
    }
    let n = first_two.len() as f64;
    let (mx, my) = first_two.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
    let cov = first_two.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / n;
    let sx = (first_two.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (first_two.iter().map(|p| (p.1 - my).powi(2)).sum::<f64>() / n).sqrt();
    assert!((cov / (sx * sy)).abs() < 0.3);
}

#[test]
fn resampling_escapes_the_jitter_interval_at_the_expected_rate() {
    // Uniform [0, 1] centred at 0.5 with ε = 0.1: jitter stays in [0.4, 0.6]; a
    // resample lands outside with probability 0.8.
    let spec = HyperparamSpec::uniform("x", 0.0, 1.0);
    let mut rng = stream(3, Purpose::FedPopG);
    let trials = 20_000;
    let p_re = 0.5;
    let outside = (0..trials)
        .filter(|_| {
            let v = perturb_value_traced(&spec, &HpValue::Real(0.5), 0.1, p_re, &mut rng).value;
            match v {
                HpValue::Real(x) => !(0.4..=0.6).contains(&x),
                HpValue::Index(_) => unreachable!(),
            }
        })
        .count();
    let rate = outside as f64 / trials as f64;
    assert!((rate - p_re * 0.8).abs() < 0.02, "{rate}");
}

#[test]
fn sha_accounting_27_9_3_1() {
    let s = shards(4);
    let b = TuningBudget {
        total_rounds: 400,
        rounds_per_config: 80,
        num_configs: 27,
        clients_per_round: 3,
    };
    let out = run_fedpop(Constructor::Sha, &SearchSpace::default(), &b, &ShaParams::default(), None, &s, &w0(), 4, RunOptions::default()).unwrap();
    let sched = out.schedule.clone().unwrap();
    let live_at = |r: usize| out.traces.iter().filter(|t| t.round == r).count();
    let mut counts = vec![live_at(1)];
    for &rung in &sched.rungs {
        counts.push(live_at(rung + 1));
    }
    assert_eq!(counts, vec![27, 9, 3, 1]);
    assert_eq!(live_at(80), 1);
    assert!(out.rounds_consumed <= 400);
    assert_eq!(out.rounds_consumed, out.traces.len());
    assert_eq!(count_tried_vectors(&out.traces), (27, 27));
}

#[test]
fn rs_and_fedpop_rs_spend_the_whole_budget() {
    let s = shards(5);
    let b = budget(90, 30, 4);
    let fp = FedPopParams::with_defaults(30);
    for fedpop in [None, Some(&fp)] {
        let out = run_fedpop(Constructor::Rs, &SearchSpace::default(), &b, &ShaParams::default(), fedpop, &s, &w0(), 5, RunOptions::default()).unwrap();
        assert_eq!(out.rounds_consumed, 90);
        assert_eq!(out.processes.len(), 3);
    }
}

#[test]
fn oversized_rho_reduces_to_the_bare_constructor() {
    let s = shards(6);
    let space = SearchSpace::default();
    let b = budget(150, 30, 4);
    let mut fp = FedPopParams::with_defaults(30);
    fp.rho = 50;
    for constructor in [Constructor::Rs, Constructor::Sha] {
        let b = if constructor == Constructor::Sha {
            TuningBudget {
                num_configs: 27,
                total_rounds: 400,
                ..b
            }
        } else {
            b
        };
        let bare = run_fedpop(constructor, &space, &b, &ShaParams::default(), None, &s, &w0(), 6, RunOptions::default()).unwrap();
        let degenerate = run_fedpop(constructor, &space, &b, &ShaParams::default(), Some(&fp), &s, &w0(), 6, RunOptions::default()).unwrap();
        assert_eq!(bare.traces, degenerate.traces);
        assert_eq!(bare.processes, degenerate.processes);
    }
}

#[test]
fn fedpop_counts_many_more_beta_vectors() {
    let s = shards(7);
    let b = budget(150, 30, 4);
    let fp = FedPopParams::with_defaults(30);
    let bare = run_fedpop(Constructor::Rs, &SearchSpace::default(), &b, &ShaParams::default(), None, &s, &w0(), 7, RunOptions::default()).unwrap();
    let pop = run_fedpop(Constructor::Rs, &SearchSpace::default(), &b, &ShaParams::default(), Some(&fp), &s, &w0(), 7, RunOptions::default()).unwrap();
    let (a0, b0) = count_tried_vectors(&bare.traces);
    let (a1, b1) = count_tried_vectors(&pop.traces);
    assert_eq!((a0, b0), (5, 5));
    assert!(b1 >= 5 * 4, "{b1}");
    assert!(a1 > a0 && b1 > b0);
}

#[test]
fn anneal_defaults_follow_rounds_per_config() {
    let fp = FedPopParams::with_defaults(800);
    assert_eq!(fp.t_g, 40);
    assert_eq!(fp.rho, 3);
    assert_eq!(fp.evo, EvoParams { epsilon0: 0.1, p_re0: 0.1, anneal_horizon: 800 });
}
