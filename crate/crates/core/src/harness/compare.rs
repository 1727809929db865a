use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ALConfig;
use super::oracle::SimulatedOracle;
use super::run_active_learning;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{render_percent, CurveSummary};

/// Per-strategy aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub label: String,
    pub per_seed: Vec<(u64, CurveSummary)>,
    pub aulc_mean: f64,
    pub md5_mean: Option<f64>,
    pub md10_mean: Option<f64>,
    pub mp90_median: Option<f64>,
    pub mp99_median: Option<f64>,
    /// Seeds on which this row had the highest AULC (ties count for every tied row).
    pub wins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let values: Option<Vec<f64>> = values.collect();
    let values = values?;
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

/// Median with unreached thresholds ordered above every ratio.
fn median(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.map(|x| x.unwrap_or(f64::INFINITY)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    m.is_finite().then_some(m)
}

/// Runs every config once per seed against the simulated oracle and tabulates
/// the resulting curves. Runs execute in parallel; results are ordered by
/// config then seed.
pub fn compare_strategies(
    configs: &[ALConfig],
    seeds: &[u64],
    dataset: &Dataset,
) -> Result<ComparisonReport> {
    if configs.len() < 2 {
        return Err(Error::config("comparison needs at least two configs"));
    }
    if seeds.is_empty() {
        return Err(Error::config("comparison needs at least one seed"));
    }
    if configs.iter().any(|c| c.dataset != configs[0].dataset) {
        return Err(Error::config("configs do not share a dataset"));
    }
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let summaries: Vec<CurveSummary> = jobs
        .par_iter()
        .map(|&(i, seed)| {
            let config = ALConfig {
                seed,
                ..configs[i].clone()
            };
            let mut oracle = SimulatedOracle::new(dataset);
            let outcome = run_active_learning(&config, dataset, &mut oracle, None)?;
            if let Some(reason) = outcome.failure {
                return Err(Error::config(format!(
                    "{} seed {seed} failed: {reason}",
                    config.label()
                )));
            }
            outcome.curve.summary()
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<ComparisonRow> = configs
        .iter()
        .enumerate()
        .map(|(i, config)| {
            let per_seed: Vec<(u64, CurveSummary)> = seeds
                .iter()
                .enumerate()
                .map(|(j, &s)| (s, summaries[i * seeds.len() + j]))
                .collect();
            ComparisonRow {
                label: config.label(),
                aulc_mean: per_seed.iter().map(|(_, s)| s.aulc).sum::<f64>()
                    / per_seed.len() as f64,
                md5_mean: mean(per_seed.iter().map(|(_, s)| s.md5)),
                md10_mean: mean(per_seed.iter().map(|(_, s)| s.md10)),
                mp90_median: median(per_seed.iter().map(|(_, s)| s.mp90)),
                mp99_median: median(per_seed.iter().map(|(_, s)| s.mp99)),
                per_seed,
                wins: 0,
            }
        })
        .collect();
    for j in 0..seeds.len() {
        let best = rows
            .iter()
            .map(|r| r.per_seed[j].1.aulc)
            .fold(f64::NEG_INFINITY, f64::max);
        for row in &mut rows {
            if row.per_seed[j].1.aulc == best {
                row.wins += 1;
            }
        }
    }
    Ok(ComparisonReport {
        seeds: seeds.to_vec(),
        rows,
    })
}

impl ComparisonReport {
    /// Fixed-width table; metrics in percent, `-` for unreached thresholds.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(8).max(8);
        let mut out = format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>5}\n",
            "strategy", "AULC", "Md@5", "Md@10", "Mp@90", "Mp@99", "wins"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}  {:>7}  {:>5}",
                r.label,
                render_percent(Some(r.aulc_mean)),
                render_percent(r.md5_mean),
                render_percent(r.md10_mean),
                render_percent(r.mp90_median),
                render_percent(r.mp99_median),
                format!("{}/{}", r.wins, self.seeds.len()),
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
