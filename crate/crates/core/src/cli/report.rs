use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::scenarios::{Check, Results, TraceMode};
use crate::adversary::Strategy;

/// Everything one `run` produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: String,
    pub config: ScenarioConfig,
    pub results: Results,
    pub checks: Vec<Check>,
    pub elapsed_ms: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

fn num(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x:.4}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Distinct keys in order of first appearance.
fn groups<K: PartialEq + Clone, T>(items: &[T], key: impl Fn(&T) -> K) -> Vec<(K, Vec<&T>)> {
    let mut out: Vec<(K, Vec<&T>)> = Vec::new();
    for item in items {
        let k = key(item);
        match out.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(item),
            None => out.push((k, vec![item])),
        }
    }
    out
}

/// Headline metrics, computed from the report alone.
pub fn summary(results: &Results) -> Table {
    match results {
        Results::FlCentralized(runs) => {
            let mut t = Table::new(&[
                "run",
                "baseline_accuracy",
                "final_accuracy",
                "accuracy_drop",
                "proofs_accepted",
                "proofs",
                "final_trace",
            ]);
            for o in runs {
                t.rows.push(vec![
                    o.run.to_string(),
                    num(o.baseline_accuracy),
                    num(o.final_accuracy),
                    num(o.accuracy_drop),
                    o.proofs.iter().filter(|p| p.verdict.accepted).count().to_string(),
                    o.proofs.len().to_string(),
                    o.final_trace
                        .as_ref()
                        .map(|a| a.to_string())
                        .unwrap_or_else(|| "none".into()),
                ]);
            }
            t
        }
        Results::FlP2p(runs) => {
            let mut t = Table::new(&[
                "run",
                "chain_length",
                "warm_accuracy",
                "final_accuracy",
                "proofs_accepted",
                "proofs",
                "final_trace",
            ]);
            for o in runs {
                t.rows.push(vec![
                    o.run.to_string(),
                    o.schedule.len().to_string(),
                    num(o.warm_accuracy),
                    num(o.final_accuracy),
                    o.proofs.iter().filter(|p| p.verdict.accepted).count().to_string(),
                    o.proofs.len().to_string(),
                    o.final_trace.to_string(),
                ]);
            }
            t
        }
        Results::Capacity(runs) => {
            let mut t = Table::new(&["scheme", "arch", "delta", "q", "runs", "saturated"]);
            for ((scheme, arch), g) in groups(runs, |o| (o.report.scheme_id, o.report.arch_label())) {
                let deltas: Vec<f64> = g.iter().map(|o| o.report.delta).collect();
                let qs: Vec<f64> = g.iter().map(|o| o.report.q as f64).collect();
                let saturated = g.iter().filter(|o| o.report.saturated()).count();
                let q = opt(median(&qs));
                t.rows.push(vec![
                    scheme.name().to_string(),
                    arch,
                    opt(median(&deltas)),
                    if saturated == g.len() { format!(">={q}") } else { q },
                    g.len().to_string(),
                    saturated.to_string(),
                ]);
            }
            t
        }
        Results::SpoilBench(records) => {
            let mut t = Table::new(&["k", "scheme", "surviving_median", "surviving_mean", "runs", "failures"]);
            for ((k, scheme), g) in groups(records, |r| (r.k, r.scheme)) {
                let fractions: Vec<f64> = g.iter().filter_map(|r| r.surviving).collect();
                let mean = (!fractions.is_empty()).then(|| fractions.iter().sum::<f64>() / fractions.len() as f64);
                t.rows.push(vec![
                    k.to_string(),
                    scheme.name().to_string(),
                    opt(median(&fractions)),
                    opt(mean),
                    g.len().to_string(),
                    (g.len() - fractions.len()).to_string(),
                ]);
            }
            t
        }
        Results::TraceBench(records) => {
            let mut t = Table::new(&[
                "mode",
                "runs",
                "correct",
                "correct_after_finetune",
                "false_accusations",
                "finetune_epochs",
            ]);
            for (mode, g) in groups(records, |r| r.mode) {
                let mode: TraceMode = mode;
                t.rows.push(vec![
                    mode.name().to_string(),
                    g.len().to_string(),
                    g.iter().filter(|r| r.correct()).count().to_string(),
                    g.iter().filter(|r| r.correct_after_finetune()).count().to_string(),
                    g.iter().map(|r| r.false_accusations()).sum::<usize>().to_string(),
                    g.first().map(|r| r.finetune_epochs).unwrap_or(0).to_string(),
                ]);
            }
            t
        }
        Results::PirateFuzz(runs) => {
            let mut t = Table::new(&["strategy", "trials", "accepted"]);
            let reports: Vec<_> = runs.iter().flat_map(|o| &o.reports).collect();
            for (strategy, g) in groups(&reports, |r| r.strategy) {
                let strategy: Strategy = strategy;
                t.rows.push(vec![
                    strategy.name().to_string(),
                    g.iter().map(|r| r.trials).sum::<usize>().to_string(),
                    g.iter().map(|r| r.accepted).sum::<usize>().to_string(),
                ]);
            }
            t
        }
    }
}
