//! Real-time contracts: execution time, cycle time, jitter and completion.
//!
//! All bounds are inclusive: a measurement equal to its bound passes.

use thiserror::Error;

use crate::contracts::{CheckContext, ContractKind, ContractViolation, RtMeasure};
use crate::kernel::clock::{ClockDomain, Timestamp};
use crate::stochastic::{ExecTimeModel, StatsError};

#[derive(Debug, Error, PartialEq)]
pub enum RtError {
    #[error("execution-time model is not trained yet")]
    UntrainedModel,
    #[error("cannot compare timestamps from {anchor:?} and {target:?}")]
    ClockDomainMismatch { anchor: ClockDomain, target: ClockDomain },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Compares `measured` against the model's current bound and feeds it to the
/// sliding window. Samples that violate are kept in the window too.
pub fn check_exec_time(
    model: &mut ExecTimeModel,
    measured: u64,
    ctx: CheckContext<'_>,
) -> Result<Option<ContractViolation>, RtError> {
    let bound = model.tau().ok_or(RtError::UntrainedModel)?;
    let verdict = exec_time_verdict(bound, measured, ctx);
    model.observe(measured)?;
    Ok(verdict)
}

/// The pure comparison behind [`check_exec_time`].
pub fn exec_time_verdict(bound_ns: f64, measured: u64, ctx: CheckContext<'_>) -> Option<ContractViolation> {
    let measured_ns = measured as f64;
    (measured_ns > bound_ns).then(|| {
        ContractViolation::real_time(
            ContractKind::ExecTime,
            "exec_time",
            format!("step took {measured} ns, bound {bound_ns:.1} ns"),
            RtMeasure { measured_ns, bound_ns },
            ctx,
        )
    })
}

/// Nominal period and tolerated deviation, plus what the last cycle measured.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleTimer {
    pub cycle_time_ns: u64,
    pub jitter_margin_ns: u64,
    pub last_start: Option<u64>,
    pub last_period: Option<u64>,
}

impl CycleTimer {
    pub fn new(cycle_time_ns: u64, jitter_margin_ns: u64) -> Self {
        CycleTimer { cycle_time_ns, jitter_margin_ns, last_start: None, last_period: None }
    }

    /// Records a cycle start and returns the period since the previous one.
    pub fn mark_start(&mut self, at: u64) -> Option<u64> {
        let period = self.last_start.map(|prev| at.saturating_sub(prev));
        self.last_start = Some(at);
        if period.is_some() {
            self.last_period = period;
        }
        period
    }

    /// Jitter contract on a measured period.
    pub fn check_cycle(&self, measured_period: u64, ctx: CheckContext<'_>) -> Option<ContractViolation> {
        check_cycle(self.cycle_time_ns, self.jitter_margin_ns, measured_period, ctx)
    }

    /// Cycle-time contract on the time all blocks took together.
    pub fn check_busy(&self, busy: u64, ctx: CheckContext<'_>) -> Option<ContractViolation> {
        check_busy(self.cycle_time_ns, busy, ctx)
    }
}

/// Violation iff `|measured - cycle_time| > margin`.
pub fn check_cycle(
    cycle_time_ns: u64,
    jitter_margin_ns: u64,
    measured_period: u64,
    ctx: CheckContext<'_>,
) -> Option<ContractViolation> {
    let deviation = measured_period.abs_diff(cycle_time_ns);
    (deviation > jitter_margin_ns).then(|| {
        ContractViolation::real_time(
            ContractKind::Jitter,
            "jitter_margin",
            format!(
                "period {measured_period} ns deviates {deviation} ns from {cycle_time_ns} ns, margin {jitter_margin_ns} ns"
            ),
            RtMeasure { measured_ns: deviation as f64, bound_ns: jitter_margin_ns as f64 },
            ctx,
        )
    })
}

/// Violation iff the blocks of one cycle ran longer than the cycle time.
pub fn check_busy(cycle_time_ns: u64, busy: u64, ctx: CheckContext<'_>) -> Option<ContractViolation> {
    (busy > cycle_time_ns).then(|| {
        ContractViolation::real_time(
            ContractKind::CycleTime,
            "cycle_time",
            format!("blocks ran {busy} ns in a {cycle_time_ns} ns cycle"),
            RtMeasure { measured_ns: busy as f64, bound_ns: cycle_time_ns as f64 },
            ctx,
        )
    })
}

/// Deadline from the start of `anchor`'s step to the end of `target`'s step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletionContract {
    pub label: String,
    pub anchor: String,
    pub target: String,
    pub deadline_ns: u64,
}

impl CompletionContract {
    pub fn new(anchor: impl Into<String>, target: impl Into<String>, deadline_ns: u64) -> Self {
        let (anchor, target) = (anchor.into(), target.into());
        CompletionContract { label: format!("{anchor}->{target}"), anchor, target, deadline_ns }
    }
}

pub fn check_completion(
    contract: &CompletionContract,
    anchor_start: Timestamp,
    target_end: Timestamp,
    ctx: CheckContext<'_>,
) -> Result<Option<ContractViolation>, RtError> {
    if anchor_start.domain != target_end.domain {
        return Err(RtError::ClockDomainMismatch { anchor: anchor_start.domain, target: target_end.domain });
    }
    let elapsed = target_end.ns as i128 - anchor_start.ns as i128;
    Ok((elapsed > contract.deadline_ns as i128).then(|| {
        ContractViolation::real_time(
            ContractKind::Completion,
            &contract.label,
            format!(
                "`{}` finished {elapsed} ns after `{}` started, deadline {} ns",
                contract.target, contract.anchor, contract.deadline_ns
            ),
            RtMeasure { measured_ns: elapsed as f64, bound_ns: contract.deadline_ns as f64 },
            ctx,
        )
    }))
}
