use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::contracts::{ContractKind, ContractViolation};
use crate::stochastic::ModelSnapshot;

use super::port::Value;

/// One port write, for replay comparisons.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub cycle: u64,
    pub block: usize,
    pub port: &'static str,
    pub value: Value,
}

/// Clock readings around one block execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockTiming {
    pub cycle: u64,
    pub block: usize,
    /// Before preconditions.
    pub start: u64,
    pub step_start: u64,
    pub step_end: u64,
    /// After postconditions and invariants.
    pub end: u64,
    /// The sample fed to the execution-time model: `end - start` with
    /// contracts enabled, `step_end - step_start` otherwise.
    pub duration: u64,
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub app: String,
    pub blocks: Vec<String>,
    pub cycle_time_ns: u64,
    pub contracts_enabled: bool,
    pub timings: Vec<BlockTiming>,
    pub cycle_starts: Vec<u64>,
    /// Wake-up minus start of each cycle.
    pub periods: Vec<u64>,
    /// Time from cycle start until every block and check finished.
    pub busy: Vec<u64>,
    pub violations: Vec<ContractViolation>,
    pub models: Vec<ModelSnapshot>,
    pub trace: Vec<TraceEntry>,
    pub emitted: usize,
    pub sink_errors: usize,
    pub clock_domain_errors: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: u64,
    pub max: u64,
}

pub fn summarize(values: &[u64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    };
    Some(Summary {
        count: n,
        mean: values.iter().map(|&v| v as u128).sum::<u128>() as f64 / n as f64,
        median,
        min: sorted[0],
        max: sorted[n - 1],
    })
}

impl RunReport {
    pub fn cycles(&self) -> usize {
        self.cycle_starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycle_starts.is_empty()
    }

    pub fn block_index(&self, name: &str) -> Option<usize> {
        self.blocks.iter().position(|b| b == name)
    }

    /// Duration samples of one block, in cycle order.
    pub fn durations(&self, block: usize) -> Vec<u64> {
        self.timings.iter().filter(|t| t.block == block).map(|t| t.duration).collect()
    }

    pub fn timings_of(&self, block: usize) -> impl Iterator<Item = &BlockTiming> {
        self.timings.iter().filter(move |t| t.block == block)
    }

    pub fn count_by_kind(&self) -> BTreeMap<ContractKind, usize> {
        let mut counts = BTreeMap::new();
        for v in &self.violations {
            *counts.entry(v.kind).or_insert(0) += 1;
        }
        counts
    }

    pub fn count_of(&self, kind: ContractKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn functional_violations(&self) -> usize {
        self.violations.iter().filter(|v| v.kind.is_functional()).count()
    }

    pub fn busy_summary(&self) -> Option<Summary> {
        summarize(&self.busy)
    }

    pub fn period_summary(&self) -> Option<Summary> {
        summarize(&self.periods)
    }

    /// Columns `cycle, block, duration_ns, cycle_period_ns`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["cycle", "block", "duration_ns", "cycle_period_ns"])?;
        for t in &self.timings {
            let period = self.periods.get(t.cycle as usize).map(u64::to_string).unwrap_or_default();
            w.write_record([
                t.cycle.to_string(),
                self.blocks[t.block].clone(),
                t.duration.to_string(),
                period,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_of_even_and_odd() {
        let s = summarize(&[4, 1, 3]).unwrap();
        assert_eq!((s.mean, s.median, s.min, s.max), (8.0 / 3.0, 3.0, 1, 4));
        assert_eq!(summarize(&[1, 2, 3, 10]).unwrap().median, 2.5);
        assert!(summarize(&[]).is_none());
    }

    #[test]
    fn csv_layout() {
        let report = RunReport {
            blocks: vec!["Counter".into()],
            timings: vec![BlockTiming {
                cycle: 0,
                block: 0,
                start: 0,
                step_start: 1,
                step_end: 5,
                end: 6,
                duration: 6,
            }],
            cycle_starts: vec![0],
            periods: vec![100],
            ..Default::default()
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "cycle,block,duration_ns,cycle_period_ns\n0,Counter,6,100\n"
        );
    }
}
