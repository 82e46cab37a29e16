//! Successive-halving rung schedules.

use serde::{Deserialize, Serialize};

use super::TuneError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShaParams {
    /// Elimination factor η: each rung keeps the best 1/η.
    pub eta: usize,
    pub num_rungs: usize,
    /// Cumulative rounds per survivor at which each rung fires. Solved from the
    /// budget when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rungs: Option<Vec<usize>>,
}

impl Default for ShaParams {
    fn default() -> Self {
        ShaParams {
            eta: 3,
            num_rungs: 3,
            rungs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaSchedule {
    pub eta: usize,
    /// Rounds (1-based, cumulative) after which elimination happens.
    pub rungs: Vec<usize>,
    /// Live processes in each segment: `η^n, η^(n−1), …, 1`.
    pub survivors: Vec<usize>,
    pub rounds_per_config: usize,
    /// Fed-opt rounds the whole schedule consumes.
    pub total_rounds: usize,
}

impl ShaSchedule {
    pub fn initial_configs(&self) -> usize {
        self.survivors[0]
    }

    pub fn is_rung(&self, round: usize) -> bool {
        self.rungs.contains(&round)
    }
}

fn cost(eta: usize, rungs: &[usize], rounds_per_config: usize) -> (Vec<usize>, usize) {
    let n = rungs.len();
    let survivors: Vec<usize> = (0..=n).map(|j| eta.pow((n - j) as u32)).collect();
    let mut total = 0;
    let mut prev = 0;
    for (j, &end) in rungs.iter().chain(std::iter::once(&rounds_per_config)).enumerate() {
        total += survivors[j] * (end - prev);
        prev = end;
    }
    (survivors, total)
}

/// Builds a schedule. Without explicit rungs, rungs are geometric
/// (`c, η·c, …, η^(n−1)·c`) with the largest `c` that keeps the total within
/// `total_rounds` and the last rung before `rounds_per_config`.
pub fn schedule(
    params: &ShaParams,
    total_rounds: usize,
    rounds_per_config: usize,
) -> Result<ShaSchedule, TuneError> {
    let eta = params.eta;
    if eta < 2 {
        return Err(TuneError::InfeasibleSchedule("eta must be at least 2".into()));
    }
    if params.num_rungs == 0 {
        return Err(TuneError::InfeasibleSchedule("need at least one rung".into()));
    }
    let n = params.num_rungs;
    let rungs = match &params.rungs {
        Some(r) => {
            if r.len() != n {
                return Err(TuneError::InfeasibleSchedule(format!(
                    "{} rungs given for num_rungs = {n}",
                    r.len()
                )));
            }
            r.clone()
        }
        None => {
            let top = eta.pow((n - 1) as u32);
            let mut c = (rounds_per_config.saturating_sub(1)) / top;
            while c > 0 {
                let rungs: Vec<usize> = (0..n).map(|j| c * eta.pow(j as u32)).collect();
                if cost(eta, &rungs, rounds_per_config).1 <= total_rounds {
                    break;
                }
                c -= 1;
            }
            if c == 0 {
                return Err(TuneError::InfeasibleSchedule(format!(
                    "no geometric schedule with {n} rungs fits R_t = {total_rounds}, R_c = {rounds_per_config}"
                )));
            }
            (0..n).map(|j| c * eta.pow(j as u32)).collect()
        }
    };
    if rungs[0] == 0
        || rungs.windows(2).any(|w| w[0] >= w[1])
        || *rungs.last().unwrap() >= rounds_per_config
    {
        return Err(TuneError::InfeasibleSchedule(
            "rungs must be strictly increasing and below R_c".into(),
        ));
    }
    let (survivors, total) = cost(eta, &rungs, rounds_per_config);
    if total > total_rounds {
        return Err(TuneError::InfeasibleSchedule(format!(
            "schedule consumes {total} rounds, budget is {total_rounds}"
        )));
    }
    Ok(ShaSchedule {
        eta,
        rungs,
        survivors,
        rounds_per_config,
        total_rounds: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_budget_fills_rungs() {
        let s = schedule(&ShaParams::default(), 4000, 800).unwrap();
        assert_eq!(s.initial_configs(), 27);
        assert_eq!(s.survivors, vec![27, 9, 3, 1]);
        assert_eq!(s.rungs, vec![59, 177, 531]);
        assert_eq!(s.total_rounds, 27 * 59 + 9 * 118 + 3 * 354 + 269);
        assert!(s.total_rounds <= 4000);
    }

    #[test]
    fn desk_budget() {
        let s = schedule(&ShaParams::default(), 400, 80).unwrap();
        assert_eq!(s.rungs, vec![5, 15, 45]);
        assert_eq!(s.total_rounds, 27 * 5 + 9 * 10 + 3 * 30 + 35);
    }

    #[test]
    fn explicit_rungs_are_checked() {
        let mut p = ShaParams {
            rungs: Some(vec![89, 178, 355]),
            ..Default::default()
        };
        // 27·89 + 9·89 + 3·177 + 445 = 4180 > 4000.
        assert!(matches!(schedule(&p, 4000, 800), Err(TuneError::InfeasibleSchedule(_))));
        assert_eq!(schedule(&p, 4200, 800).unwrap().total_rounds, 4180);
        p.rungs = Some(vec![10, 5, 20]);
        assert!(schedule(&p, 4000, 800).is_err());
        p.rungs = Some(vec![10, 20]);
        assert!(schedule(&p, 4000, 800).is_err());
    }

    #[test]
    fn infeasible_budget() {
        assert!(schedule(&ShaParams::default(), 30, 80).is_err());
        assert!(schedule(&ShaParams { eta: 1, ..Default::default() }, 400, 80).is_err());
    }
}
