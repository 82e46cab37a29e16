//! Evolutionary perturbation of hyperparameter vectors.
//!
//! Each coordinate is, with probability `p_re`, redrawn from its original
//! distribution. Otherwise a continuous coordinate is jittered uniformly within
//! `±(high − low)·ε` (clipped to the support) and a discrete coordinate moves to one
//! of `{i − step, i, i + step}` with `step = max(1, ⌊ε·n⌉)`.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hp_space::{uniform_in, HPVector, HpValue, HyperparamSpec};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid evolution parameters: {0}")]
pub struct EvoParamsError(String);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvoParams {
    /// Initial perturbation intensity ε.
    pub epsilon0: f64,
    /// Initial resampling probability.
    pub p_re0: f64,
    /// Number of rounds over which both decay to zero.
    pub anneal_horizon: usize,
}

impl Default for EvoParams {
    fn default() -> Self {
        EvoParams {
            epsilon0: 0.1,
            p_re0: 0.1,
            anneal_horizon: 1,
        }
    }
}

impl EvoParams {
    pub fn validate(&self) -> Result<(), EvoParamsError> {
        if !(self.epsilon0 > 0.0 && self.epsilon0 < 1.0) {
            return Err(EvoParamsError("epsilon0 must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.p_re0) {
            return Err(EvoParamsError("p_re0 must lie in [0, 1]".into()));
        }
        if self.anneal_horizon == 0 {
            return Err(EvoParamsError("anneal_horizon must be at least 1".into()));
        }
        Ok(())
    }
}

/// Half-cosine decay of `(ε, p_re)` from their initial values to zero at the horizon.
/// Rounds past the horizon are clamped to it.
pub fn anneal(params: &EvoParams, round: usize) -> (f64, f64) {
    let horizon = params.anneal_horizon.max(1);
    let t = round.min(horizon) as f64 / horizon as f64;
    let factor = 0.5 * (1.0 + (PI * t).cos());
    (params.epsilon0 * factor, params.p_re0 * factor)
}

/// Result of perturbing one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub value: HpValue,
    /// True when the coordinate was redrawn from the spec's distribution.
    pub resampled: bool,
}

/// Perturbs one coordinate, reporting whether the resampling branch fired.
pub fn perturb_value_traced<R: Rng + ?Sized>(
    spec: &HyperparamSpec,
    value: &HpValue,
    epsilon: f64,
    p_re: f64,
    rng: &mut R,
) -> Perturbation {
    if p_re > 0.0 && rng.random::<f64>() < p_re {
        return Perturbation {
            value: spec.sample(rng),
            resampled: true,
        };
    }
    let value = match *value {
        HpValue::Real(x) => {
            let (lo, hi) = spec.bounds();
            let delta = (hi - lo) * epsilon;
            if delta <= 0.0 {
                HpValue::Real(x)
            } else {
                HpValue::Real(uniform_in(rng, (x - delta).max(lo), (x + delta).min(hi)))
            }
        }
        HpValue::Index(i) => {
            let n = spec.max_index();
            let step = discrete_step(epsilon, n);
            if step == 0 {
                HpValue::Index(i)
            } else {
                let mut choices = [i; 3];
                let mut len = 0;
                if i >= step {
                    choices[len] = i - step;
                    len += 1;
                }
                choices[len] = i;
                len += 1;
                if i + step <= n {
                    choices[len] = i + step;
                    len += 1;
                }
                HpValue::Index(choices[rng.random_range(0..len)])
            }
        }
    };
    Perturbation {
        value,
        resampled: false,
    }
}

/// Index step for a discrete list with largest index `n`: zero when ε is zero,
/// otherwise `max(1, ⌊ε·n⌉)`.
pub fn discrete_step(epsilon: f64, n: usize) -> usize {
    if epsilon <= 0.0 {
        0
    } else {
        ((epsilon * n as f64).round() as usize).max(1)
    }
}

pub fn perturb_value<R: Rng + ?Sized>(
    spec: &HyperparamSpec,
    value: &HpValue,
    epsilon: f64,
    p_re: f64,
    rng: &mut R,
) -> HpValue {
    perturb_value_traced(spec, value, epsilon, p_re, rng).value
}

/// Applies [`perturb_value`] independently to every coordinate.
pub fn evo<R: Rng + ?Sized>(
    specs: &[HyperparamSpec],
    vector: &HPVector,
    epsilon: f64,
    p_re: f64,
    rng: &mut R,
) -> HPVector {
    HPVector {
        role: vector.role,
        values: specs
            .iter()
            .zip(&vector.values)
            .map(|(s, v)| perturb_value(s, v, epsilon, p_re, rng))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hp_space::{sample, SearchSpace, SpaceRole};
    use crate::stream::{stream, Purpose};
    use proptest::prelude::*;

    #[test]
    fn anneal_examples() {
        let p = EvoParams {
            epsilon0: 0.1,
            p_re0: 0.1,
            anneal_horizon: 100,
        };
        assert_eq!(anneal(&p, 0), (0.1, 0.1));
        let (e, r) = anneal(&p, 100);
        assert!(e.abs() < 1e-12 && r.abs() < 1e-12);
        let (e, _) = anneal(&p, 50);
        assert!((e - 0.05).abs() < 1e-12);
        assert_eq!(anneal(&p, 250), anneal(&p, 100));
        let mut prev = f64::INFINITY;
        for round in 0..=100 {
            let (e, _) = anneal(&p, round);
            assert!(e <= prev);
            prev = e;
        }
    }

    #[test]
    fn params_validation() {
        let ok = EvoParams {
            epsilon0: 0.1,
            p_re0: 0.1,
            anneal_horizon: 10,
        };
        assert!(ok.validate().is_ok());
        assert!(EvoParams { epsilon0: 0.0, ..ok }.validate().is_err());
        assert!(EvoParams { epsilon0: 1.0, ..ok }.validate().is_err());
        assert!(EvoParams { p_re0: 1.5, ..ok }.validate().is_err());
        assert!(EvoParams { anneal_horizon: 0, ..ok }.validate().is_err());
    }

    #[test]
    fn continuous_jitter_stays_in_interval() {
        let s = HyperparamSpec::uniform("x", 0.0, 1.0);
        let mut rng = stream(1, Purpose::FedPopL);
        for _ in 0..10_000 {
            let HpValue::Real(x) = perturb_value(&s, &HpValue::Real(0.5), 0.1, 0.0, &mut rng)
            else {
                unreachable!()
            };
            assert!((0.4 - 1e-12..=0.6 + 1e-12).contains(&x));
        }
    }

    #[test]
    fn discrete_jitter_is_uniform_over_neighbours() {
        let values: Vec<f64> = (0..11).map(f64::from).collect();
        let s = HyperparamSpec::numbers("d", &values);
        assert_eq!(discrete_step(0.1, 10), 1);
        let mut rng = stream(2, Purpose::FedPopL);
        let mut counts = [0usize; 11];
        let n = 10_000;
        for _ in 0..n {
            let HpValue::Index(i) = perturb_value(&s, &HpValue::Index(5), 0.1, 0.0, &mut rng)
            else {
                unreachable!()
            };
            counts[i] += 1;
        }
        assert_eq!(counts[4] + counts[5] + counts[6], n);
        for c in &counts[4..=6] {
            assert!((*c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn discrete_edges_drop_out_of_range_neighbours() {
        let s = HyperparamSpec::numbers("d", &[1.0, 2.0, 3.0]);
        let mut rng = stream(3, Purpose::FedPopL);
        for _ in 0..500 {
            let HpValue::Index(i) = perturb_value(&s, &HpValue::Index(0), 0.5, 0.0, &mut rng)
            else {
                unreachable!()
            };
            assert!(i <= 1);
        }
    }

    #[test]
    fn zero_intensity_is_identity() {
        let space = SearchSpace::default();
        let mut rng = stream(4, Purpose::FedPopG);
        for _ in 0..100 {
            let v = sample(&space.client, SpaceRole::Client, &mut rng);
            assert_eq!(evo(&space.client, &v, 0.0, 0.0, &mut rng), v);
        }
    }

    /// Two-sample Kolmogorov–Smirnov statistic.
    fn ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn full_resampling_matches_prior() {
        let s = HyperparamSpec::log_uniform("lr", 1e-3, 1.0);
        let mut rng = stream(5, Purpose::FedPopG);
        let n = 10_000;
        let perturbed: Vec<f64> = (0..n)
            .map(|_| match perturb_value(&s, &HpValue::Real(-1.0), 0.1, 1.0, &mut rng) {
                HpValue::Real(x) => x,
                _ => unreachable!(),
            })
            .collect();
        let prior: Vec<f64> = (0..n)
            .map(|_| match s.sample(&mut rng) {
                HpValue::Real(x) => x,
                _ => unreachable!(),
            })
            .collect();
        assert!(ks(perturbed, prior) < 0.05);
    }

    proptest! {
        #[test]
        fn perturbed_vectors_conform(seed in any::<u64>(), eps in 0.0f64..1.0, p_re in 0.0f64..=1.0) {
            let space = SearchSpace::default();
            let mut rng = stream(seed, Purpose::FedPopL);
            for role in [SpaceRole::Server, SpaceRole::Client] {
                let specs = space.specs(role);
                let v = sample(specs, role, &mut rng);
                let out = evo(specs, &v, eps, p_re, &mut rng);
                prop_assert!(out.validate(specs).is_ok());
            }
        }

        #[test]
        fn evo_is_deterministic(seed in any::<u64>()) {
            let space = SearchSpace::default();
            let v = sample(&space.client, SpaceRole::Client, &mut stream(seed, Purpose::SampleBeta));
            let a = evo(&space.client, &v, 0.1, 0.1, &mut stream(seed, Purpose::FedPopL));
            let b = evo(&space.client, &v, 0.1, 0.1, &mut stream(seed, Purpose::FedPopL));
            prop_assert_eq!(a, b);
        }
    }
}
