//! Fixed-period cycle executor.
//!
//! Cycle boundaries sit at `anchor + k * cycle_time`. A cycle that overruns
//! its boundary is followed immediately by the next one, which targets the
//! first boundary still ahead of it; missed boundaries are skipped rather
//! than caught up.

use crate::contracts::{CheckContext, ContractKind, ContractViolation, OldStore};
use crate::rtmon::{check_busy, check_completion, check_cycle, check_exec_time};
use crate::stochastic::{ExecTimeModel, ModelSnapshot};

use super::app::{AnchorSource, AppConfig, BlockId, KernelError};
use super::block::{ContractEnv, Phase, StepContext};
use super::clock::{Clock, Timestamp};
use super::log::ViolationLog;
use super::report::{BlockTiming, RunReport};
use super::schedule::schedule_order;

/// Where cycle 0 starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// On the first call.
    #[default]
    Now,
    /// On the next multiple of the cycle time, so separate executors on one
    /// clock share boundaries.
    Aligned,
    /// At a fixed clock reading (or immediately, if that is in the past).
    At(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub anchor: Anchor,
    /// Record every port write in the report.
    pub trace: bool,
}

pub struct Executor {
    app: AppConfig,
    order: Vec<BlockId>,
    clock: Box<dyn Clock>,
    log: ViolationLog,
    models: Vec<ExecTimeModel>,
    olds: Vec<OldStore>,
    options: RunOptions,
    report: RunReport,
    cycle: u64,
    anchor_ns: Option<u64>,
    next_start: u64,
    last_index: u64,
    step_starts: Vec<Option<u64>>,
}

impl Executor {
    pub fn new(app: AppConfig, clock: Box<dyn Clock>, log: ViolationLog) -> Result<Self, KernelError> {
        Self::with_options(app, clock, log, RunOptions::default())
    }

    pub fn with_options(
        app: AppConfig,
        clock: Box<dyn Clock>,
        log: ViolationLog,
        options: RunOptions,
    ) -> Result<Self, KernelError> {
        app.validate()?;
        let order = schedule_order(&app)?;
        let models = (0..app.block_count())
            .map(|i| {
                let (pi, h) = app.model_params(BlockId(i));
                ExecTimeModel::new(app.training_cycles, pi, h)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let report = RunReport {
            app: app.name.clone(),
            blocks: app.block_names().into_iter().map(str::to_owned).collect(),
            cycle_time_ns: app.cycle_time_ns,
            contracts_enabled: app.contracts_enabled,
            ..Default::default()
        };
        Ok(Executor {
            olds: (0..app.block_count()).map(|_| OldStore::new()).collect(),
            step_starts: vec![None; app.block_count()],
            app,
            order,
            clock,
            log,
            models,
            options,
            report,
            cycle: 0,
            anchor_ns: None,
            next_start: 0,
            last_index: 0,
        })
    }

    pub fn app(&self) -> &AppConfig {
        &self.app
    }

    pub fn order(&self) -> &[BlockId] {
        &self.order
    }

    pub fn models(&self) -> &[ExecTimeModel] {
        &self.models
    }

    pub fn log(&self) -> &ViolationLog {
        &self.log
    }

    /// Next cycle index.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn report(&self) -> &RunReport {
        &self.report
    }

    pub fn run_cycles(&mut self, cycles: u64) {
        for _ in 0..cycles {
            self.step_cycle();
        }
    }

    fn begin(&mut self) -> u64 {
        let now = self.clock.now();
        let t = self.app.cycle_time_ns;
        let anchor = match self.options.anchor {
            Anchor::Now => now,
            Anchor::Aligned => now.div_ceil(t) * t,
            Anchor::At(ns) => ns.max(now),
        };
        self.clock.sleep_until(anchor);
        self.anchor_ns = Some(anchor);
        anchor
    }

    /// Runs one full cycle, including the wait for the next boundary.
    pub fn step_cycle(&mut self) {
        let start = match self.anchor_ns {
            None => self.begin(),
            Some(_) => self.next_start,
        };
        let anchor = self.anchor_ns.expect("anchor is set");
        let t = self.app.cycle_time_ns;
        let margin = self.app.jitter_margin_ns;
        let cycle = self.cycle;
        let enabled = self.app.contracts_enabled;
        let faults = self.app.faults;
        let domain = self.clock.domain();

        let index = (self.last_index + 1).max((start - anchor) / t + 1);
        self.last_index = index;
        let deadline = anchor + index * t;
        self.report.cycle_starts.push(start);
        self.step_starts.iter_mut().for_each(|s| *s = None);

        let mut violations: Vec<ContractViolation> = Vec::new();
        let Executor { app, order, clock, log, models, olds, report, options, step_starts, .. } = self;
        let clock: &dyn Clock = clock.as_ref();

        for &id in order.iter() {
            let entry = &mut app.blocks[id.0];
            let name = entry.name.as_str();
            let bindings = entry.bindings.as_slice();
            let ports = &mut app.ports;
            let old = &mut olds[id.0];

            let t0 = clock.now();
            if enabled {
                let env = ContractEnv { block: name, cycle, ports, bindings, old };
                entry.hosted.evaluate(Phase::Before, &env, t0, &mut violations);
            }
            let s0 = clock.now();
            {
                let mut cx = StepContext {
                    block: name,
                    block_index: id.0,
                    cycle,
                    ports,
                    bindings,
                    old,
                    violations: &mut violations,
                    clock,
                    contracts_enabled: enabled,
                    step_start: s0,
                    trace: options.trace.then_some(&mut report.trace),
                };
                entry.hosted.step(&mut cx);
            }
            let s1 = clock.now();
            step_starts[id.0] = Some(s0);
            if enabled {
                let env = ContractEnv { block: name, cycle, ports, bindings, old };
                entry.hosted.evaluate(Phase::After, &env, s1, &mut violations);
            }
            let t1 = clock.now();
            let duration = if enabled { t1 - t0 } else { s1 - s0 };
            report.timings.push(BlockTiming {
                cycle,
                block: id.0,
                start: t0,
                step_start: s0,
                step_end: s1,
                end: t1,
                duration,
            });
            if !enabled {
                continue;
            }

            let ctx = CheckContext { block: name, cycle, at_ns: t1 };
            for c in app.completions.iter().filter(|c| c.target == id) {
                let anchor_ts = match c.anchor {
                    AnchorSource::Block(b) => step_starts[b.0].map(|ns| Timestamp { ns, domain }),
                    AnchorSource::StampPort(port) => {
                        let pv = app.ports.read(port.id);
                        if pv.is_fresh(cycle) { pv.value.stamp() } else { None }
                    }
                };
                let Some(anchor_ts) = anchor_ts else { continue };
                match check_completion(&c.contract, anchor_ts, Timestamp { ns: s1, domain }, ctx) {
                    Ok(v) => violations.extend(v),
                    Err(_) => report.clock_domain_errors += 1,
                }
            }

            let model = &mut models[id.0];
            if model.is_trained() {
                if let Ok(Some(v)) = check_exec_time(model, duration, ctx) {
                    violations.push(v);
                }
            } else if matches!(model.record_training(duration), Ok(true)) {
                let _ = model.train();
            }
        }

        if faults.fires(ContractKind::CycleTime, cycle) {
            let stall_to = start + t + margin / 2;
            let now = clock.now();
            if stall_to > now {
                clock.spend(stall_to - now);
            }
        }
        let busy = clock.now() - start;
        report.busy.push(busy);
        if enabled {
            let ctx = CheckContext { block: &app.name, cycle, at_ns: start + busy };
            violations.extend(check_busy(t, busy, ctx));
        }

        for v in violations {
            report.violations.push(v.clone());
            log.log(v);
        }
        let slack = deadline.saturating_sub(clock.now());
        if log.flush(slack).is_err() {
            report.sink_errors += 1;
        }
        olds.iter_mut().for_each(OldStore::clear);

        let mut wake = deadline;
        if faults.fires(ContractKind::Jitter, cycle) {
            wake += 3 * margin.max(1);
        }
        clock.sleep_until(wake);
        let woke = clock.now();
        let period = woke - start;
        report.periods.push(period);
        if enabled {
            let ctx = CheckContext { block: &app.name, cycle, at_ns: woke };
            if let Some(v) = check_cycle(t, margin, period, ctx) {
                report.violations.push(v.clone());
                log.log(v);
            }
        }
        self.next_start = woke;
        self.cycle += 1;
    }

    pub fn snapshots(&self) -> Vec<ModelSnapshot> {
        self.models
            .iter()
            .enumerate()
            .filter_map(|(i, m)| m.snapshot(self.app.block_name(BlockId(i))))
            .collect()
    }

    /// Writes out the remaining log and hands back the report and the app.
    pub fn finish(mut self) -> (RunReport, AppConfig) {
        if self.log.drain().is_err() {
            self.report.sink_errors += 1;
        }
        self.report.models = self.snapshots();
        self.report.emitted = self.log.emitted();
        (self.report, self.app)
    }
}

/// Builds an executor, runs `cycles` cycles and returns the report.
pub fn run_cycles(
    app: AppConfig,
    clock: Box<dyn Clock>,
    log: ViolationLog,
    cycles: u64,
) -> Result<(RunReport, AppConfig), KernelError> {
    let mut exec = Executor::new(app, clock, log)?;
    exec.run_cycles(cycles);
    Ok(exec.finish())
}
