//! One block counting from 1 up to 10 in every cycle.

use crate::contracts::{ContractKind, LoopMonitor};
use crate::fault::FaultPlan;
use crate::kernel::{Block, Contracts, KernelError, PortSpec, StepContext};

use super::{BuildOptions, CaseStudy};

pub const LIMIT: i64 = 10;

pub struct Counter {
    pub counter: i64,
    pub cycles_done: u64,
    work_ns: u64,
    /// Execution-time faults start once the model has been trained.
    exec_fault_from: u64,
    faults: FaultPlan,
}

impl Counter {
    pub fn new(work_ns: u64) -> Self {
        Counter { counter: 1, cycles_done: 0, work_ns, exec_fault_from: 0, faults: FaultPlan::none() }
    }
}

impl Block for Counter {
    fn ports(&self) -> Vec<PortSpec> {
        Vec::new()
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let cycle = cx.cycle();
        let _ = cx.capture_old("cycles_done", &self.cycles_done);
        cx.spend(self.work_ns);
        if cycle >= self.exec_fault_from && self.faults.fires(ContractKind::ExecTime, cycle) {
            cx.spend(self.work_ns);
        }

        self.counter = if self.faults.fires(ContractKind::LoopInvariant, cycle) { 0 } else { 1 };
        let mut stutter = self.faults.fires(ContractKind::LoopVariant, cycle);
        let mut monitor = LoopMonitor::new("increment");
        while self.counter < LIMIT {
            cx.loop_check(&mut monitor, (1..=LIMIT).contains(&self.counter), LIMIT - self.counter);
            if stutter {
                stutter = false;
                continue;
            }
            self.counter += 1;
        }

        if !self.faults.fires(ContractKind::Postcondition, cycle) {
            self.cycles_done += 1;
        }
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.precondition("counter_at_rest", |b, _| b.counter == 1 || b.counter == LIMIT)
            .monitored_loop("increment")
            .postcondition("counter_reached_limit", |b, _| b.counter == LIMIT)
            .postcondition("cycles_done_incremented", |b, env| {
                env.old::<u64>("cycles_done").is_ok_and(|old| b.cycles_done == old + 1)
            })
            .invariant("counter_in_range", |b, _| (1..=LIMIT).contains(&b.counter));
    }
}

pub fn build(opts: BuildOptions) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("simple-counter", 10, 0.95, 1);
    let mut counter = Counter::new(opts.work_ns(540));
    counter.faults = opts.faults;
    counter.exec_fault_from = app.training_cycles as u64 + 1;
    app.add_block("Counter", counter)?;
    Ok(CaseStudy { name: "simple-counter", app, expected_contracts: 9 })
}

