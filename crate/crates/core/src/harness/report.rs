//! Report files, float formatting, sweeps and the plain-text summary table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{io_err, run_experiment, Experiment, HarnessError, RunReport};
use crate::hp_space::{HpValue, HyperparamSpec, SpecKind};
use crate::tuners::Constructor;

pub(crate) const TRACE_FILE: &str = "trace.csv";
const SUMMARY_FILE: &str = "summary.json";
const CONFIG_ECHO_FILE: &str = "config_echo.json";
const MANIFEST_FILE: &str = "manifest.json";

/// Leading trace.csv columns; `alpha.<name>` and `beta0.<name>` columns follow in
/// search-space order.
pub const TRACE_FIXED_COLUMNS: [&str; 10] = [
    "seed",
    "round",
    "process_id",
    "mean_score",
    "client_score_mean",
    "client_score_min",
    "client_score_max",
    "client_ids",
    "events",
    "global_accuracy",
];

pub(crate) fn round_sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// `%.9g`-style: 9 significant digits, trailing zeros trimmed, exponent form
/// outside `[1e-5, 1e9)`. Non-finite values print as `inf`, `-inf`, `nan`.
pub fn format_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let r = round_sig9(x);
    let exp = r.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        format!("{r}")
    } else {
        format!("{r:e}")
    }
}

fn hp_cell(spec: &HyperparamSpec, v: &HpValue) -> String {
    match spec.kind {
        SpecKind::Discrete { .. } => spec.display(v),
        SpecKind::Continuous { .. } => format_g9(spec.natural(v)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serialises");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> HarnessError + '_ {
    move |e| HarnessError::Io {
        path: path.display().to_string(),
        source: e.into(),
    }
}

fn write_trace(exp: &Experiment, path: &Path) -> Result<(), HarnessError> {
    let space = &exp.config.space;
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = TRACE_FIXED_COLUMNS
        .iter()
        .map(|c| c.to_string())
        .chain(space.server.iter().map(|s| format!("alpha.{}", s.name)))
        .chain(space.client.iter().map(|s| format!("beta0.{}", s.name)))
        .collect();
    w.write_record(&header).map_err(csv_err(path))?;
    for seed in &exp.traces {
        for t in &seed.rounds {
            let scores = &t.client_scores;
            let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mean = scores.iter().sum::<f64>() / scores.len() as f64;
            let ids: Vec<String> = t.client_ids.iter().map(|c| c.to_string()).collect();
            let mut row = vec![
                seed.seed.to_string(),
                t.round.to_string(),
                t.process_id.to_string(),
                format_g9(t.mean_score),
                format_g9(mean),
                format_g9(min),
                format_g9(max),
                ids.join("|"),
                t.events.labels().join("|"),
                t.global_accuracy.map(format_g9).unwrap_or_default(),
            ];
            row.extend(space.server.iter().zip(&t.alpha.values).map(|(s, v)| hp_cell(s, v)));
            row.extend(space.client.iter().zip(&t.beta0.values).map(|(s, v)| hp_cell(s, v)));
            w.write_record(&row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

/// Writes `summary.json`, `trace.csv`, `config_echo.json` and, when the config
/// asks for it, `partitions/seed_<s>.json` under `outdir`.
pub fn emit_reports(exp: &Experiment, outdir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(outdir).map_err(io_err(outdir))?;
    write_json(&outdir.join(SUMMARY_FILE), &exp.report)?;
    write_trace(exp, &outdir.join(TRACE_FILE))?;
    let echo = outdir.join(CONFIG_ECHO_FILE);
    fs::write(&echo, exp.config.to_json() + "\n").map_err(io_err(&echo))?;
    if exp.config.export_partitions {
        let dir = outdir.join("partitions");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        for t in &exp.traces {
            write_json(&dir.join(format!("seed_{}.json", t.seed)), &t.partition)?;
        }
    }
    Ok(())
}

/// Scalability grid: each listed axis is swept with the other held at the base
/// config's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub num_configs: Vec<usize>,
    #[serde(default)]
    pub rounds_per_config: Vec<usize>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<SweepGrid, HarnessError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Config {
            path: "<grid>".into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub parameter: String,
    pub value: usize,
    pub total_rounds: usize,
    pub rounds_per_config: usize,
    pub dir: String,
    #[serde(with = "super::json_float")]
    pub global_accuracy: f64,
    #[serde(with = "super::json_float")]
    pub finetuned_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepManifest {
    pub method: String,
    pub points: Vec<SweepPoint>,
}

/// Runs one experiment per grid point into `<output_dir>/<axis>_<value>/` and
/// writes `manifest.json` beside them.
///
/// Random search keeps `R_t = N_c · R_c`. SHA has a fixed population, so only
/// `R_c` can be swept, with `R_t` scaled in proportion.
pub fn run_sweep(base: &super::ExperimentConfig, grid: &SweepGrid) -> Result<SweepManifest, HarnessError> {
    base.validate()?;
    if grid.num_configs.is_empty() && grid.rounds_per_config.is_empty() {
        return Err(HarnessError::Config {
            path: "<grid>".into(),
            message: "grid lists no values".into(),
        });
    }
    let constructor = base.tuner.method.constructor();
    if constructor == Constructor::Sha && !grid.num_configs.is_empty() {
        return Err(HarnessError::Config {
            path: "<grid>.num_configs".into(),
            message: "SHA fixes the population size; sweep rounds_per_config instead".into(),
        });
    }
    let base_budget = base.tuning_budget()?;
    let mut points = Vec::new();
    let axes = grid
        .num_configs
        .iter()
        .map(|&v| ("num_configs", v))
        .chain(grid.rounds_per_config.iter().map(|&v| ("rounds_per_config", v)));
    for (axis, value) in axes {
        let mut cfg = base.clone();
        let (n_c, r_c) = match axis {
            "num_configs" => (value, base_budget.rounds_per_config),
            _ => (base_budget.num_configs, value),
        };
        cfg.budget.rounds_per_config = r_c;
        match constructor {
            Constructor::Rs => {
                cfg.budget.total_rounds = n_c * r_c;
                cfg.budget.num_configs = Some(n_c);
            }
            Constructor::Sha => {
                cfg.budget.total_rounds =
                    base_budget.total_rounds * r_c / base_budget.rounds_per_config;
            }
        }
        let dir_name = format!("{axis}_{value}");
        cfg.output_dir = base.output_dir.join(&dir_name);
        let exp = run_experiment(&cfg)?;
        emit_reports(&exp, &cfg.output_dir)?;
        points.push(SweepPoint {
            parameter: axis.to_string(),
            value,
            total_rounds: cfg.budget.total_rounds,
            rounds_per_config: r_c,
            dir: dir_name,
            global_accuracy: exp.report.global_accuracy.mean,
            finetuned_accuracy: exp.report.finetuned_accuracy.mean,
        });
    }
    let manifest = SweepManifest {
        method: base.tuner.method.name().to_string(),
        points,
    };
    write_json(&base.output_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Report {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn pm(s: &super::Stat) -> String {
    match s.std {
        Some(sd) => format!("{:.4} ± {:.4}", s.mean, sd),
        None => format!("{:.4}", s.mean),
    }
}

fn summary_table(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "method: {}  ({} seeds)", report.method, report.seeds.len());
    let _ = writeln!(
        out,
        "{:>8} {:>10} {:>10} {:>10} {:>10} {:>6} {:>6} {:>7}",
        "seed", "glob_acc", "glob_loss", "ft_acc", "ft_loss", "alpha", "beta", "rounds"
    );
    for s in &report.seeds {
        let _ = writeln!(
            out,
            "{:>8} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>6} {:>6} {:>7}",
            s.seed,
            s.global_accuracy,
            s.global_loss,
            s.finetuned_accuracy,
            s.finetuned_loss,
            s.num_alpha,
            s.num_beta,
            s.rounds_consumed
        );
    }
    let _ = writeln!(out, "global accuracy    {}", pm(&report.global_accuracy));
    let _ = writeln!(out, "global loss        {}", pm(&report.global_loss));
    let _ = writeln!(out, "finetuned accuracy {}", pm(&report.finetuned_accuracy));
    let _ = writeln!(out, "finetuned loss     {}", pm(&report.finetuned_loss));
    let _ = writeln!(
        out,
        "tried vectors      alpha {}, beta {}",
        pm(&report.num_alpha),
        pm(&report.num_beta)
    );
    out
}

/// Plain-text view of a run directory (or a sweep directory with a manifest).
pub fn print_report(dir: &Path) -> Result<String, HarnessError> {
    let manifest = dir.join(MANIFEST_FILE);
    if manifest.exists() {
        let m: SweepManifest = read_json(&manifest)?;
        let mut out = format!("sweep: {}\n", m.method);
        let _ = writeln!(
            out,
            "{:>18} {:>6} {:>6} {:>6} {:>10} {:>10}",
            "parameter", "value", "R_t", "R_c", "glob_acc", "ft_acc"
        );
        for p in &m.points {
            let _ = writeln!(
                out,
                "{:>18} {:>6} {:>6} {:>6} {:>10.4} {:>10.4}",
                p.parameter, p.value, p.total_rounds, p.rounds_per_config, p.global_accuracy, p.finetuned_accuracy
            );
        }
        return Ok(out);
    }
    let report: RunReport = read_json(&dir.join(SUMMARY_FILE))?;
    Ok(summary_table(&report))
}

/// Paths of the files a run writes.
pub fn report_paths(dir: &Path) -> [PathBuf; 3] {
    [
        dir.join(SUMMARY_FILE),
        dir.join(TRACE_FILE),
        dir.join(CONFIG_ECHO_FILE),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g9_formatting() {
        assert_eq!(format_g9(0.1), "0.1");
        assert_eq!(format_g9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_g9(2.0 / 3.0), "0.666666667");
        assert_eq!(format_g9(123456789012.0), "1.23456789e11");
        assert_eq!(format_g9(1.5e-7), "1.5e-7");
        assert_eq!(format_g9(-2.5), "-2.5");
        assert_eq!(format_g9(40.0), "40");
        assert_eq!(format_g9(f64::INFINITY), "inf");
        assert_eq!(format_g9(0.0), "0");
    }

    #[test]
    fn round_trip_of_rounded_values() {
        for x in [0.123456789123, 9.87654321e-3, 12345.6789] {
            let s = format_g9(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(format_g9(back), s);
        }
    }
}
