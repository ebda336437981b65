use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Summary;
use crate::canonical;

/// Where a benchmark ran; absolute figures mean little without it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub optimized: bool,
}

impl Environment {
    pub fn current() -> Self {
        Environment {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            optimized: !cfg!(debug_assertions),
        }
    }

    fn line(&self) -> String {
        format!("{} {}, {} cpu(s), {} build", self.os, self.arch, self.cpus, if self.optimized { "release" } else { "debug" })
    }
}

/// One ledger function in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub round: String,
    pub function: String,
    pub send_rate_tps: f64,
    pub succeeded: usize,
    pub failed: usize,
    /// Failures that were read-write conflicts.
    pub conflicts: usize,
    pub max_latency_ms: f64,
    pub min_latency_ms: f64,
    pub avg_latency_ms: f64,
    pub throughput_tps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub environment: Environment,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn row(&self, round: &str, function: &str) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.round == round && r.function == function)
    }

    pub fn to_json(&self) -> String {
        canonical::to_string_pretty(self)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("# {}\n", self.environment.line());
        let _ = writeln!(
            out,
            "{:<8} {:<22} {:>9} {:>8} {:>6} {:>18} {:>12} {:>12}",
            "round", "function", "send tps", "succ", "fail", "max-min ms", "avg ms", "tput tps"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:<22} {:>9.1} {:>8} {:>6} {:>18} {:>12.2} {:>12.1}",
                r.round,
                r.function,
                r.send_rate_tps,
                r.succeeded,
                r.failed,
                format!("{:.1}-{:.1}", r.max_latency_ms, r.min_latency_ms),
                r.avg_latency_ms,
                r.throughput_tps
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        for r in &self.rows {
            w.serialize(r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv is utf-8")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalletBenchRow {
    pub function: String,
    pub samples: usize,
    pub min_ms: f64,
    pub max_ms: f64,
    pub median_ms: f64,
    pub mean_ms: f64,
    pub std_dev_ms: f64,
}

impl WalletBenchRow {
    pub fn from_samples(function: &str, samples_ms: &[f64]) -> Self {
        let s = Summary::of(samples_ms);
        WalletBenchRow {
            function: function.into(),
            samples: s.n,
            min_ms: s.min,
            max_ms: s.max,
            median_ms: s.median,
            mean_ms: s.mean,
            std_dev_ms: s.std_dev,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalletBenchReport {
    pub environment: Environment,
    pub rows: Vec<WalletBenchRow>,
    /// Raw samples per function, in recording order; `rounds` blocks of
    /// equal length.
    pub rounds: usize,
    pub samples_ms: Vec<(String, Vec<f64>)>,
}

impl WalletBenchReport {
    pub fn median(&self, function: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.function == function).map(|r| r.median_ms)
    }

    pub fn to_json(&self) -> String {
        canonical::to_string_pretty(self)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("# {}\n", self.environment.line());
        let _ = writeln!(
            out,
            "{:<26} {:>7} {:>20} {:>10} {:>10} {:>10}",
            "function", "samples", "min-max ms", "median", "mean", "std dev"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<26} {:>7} {:>20} {:>10.4} {:>10.4} {:>10.4}",
                r.function,
                r.samples,
                format!("{:.4}-{:.4}", r.min_ms, r.max_ms),
                r.median_ms,
                r.mean_ms,
                r.std_dev_ms
            );
        }
        out
    }

    /// Long format: one line per sample.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["function", "round", "sample", "ms"]).expect("writing to memory");
        for (function, samples) in &self.samples_ms {
            let per_round = samples.len().div_ceil(self.rounds.max(1)).max(1);
            for (i, ms) in samples.iter().enumerate() {
                w.write_record([function.as_str(), &(i / per_round).to_string(), &i.to_string(), &ms.to_string()])
                    .expect("writing to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv is utf-8")
    }
}
