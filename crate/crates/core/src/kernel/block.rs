//! Function blocks and the contract methods attached to them.

use crate::contracts::{
    check, CheckContext, ContractKind, ContractViolation, LoopMonitor, OldStore, OldStoreError,
};

use super::clock::{Clock, ClockDomain};
use super::port::{PortId, PortSpec, PortTable, PortValue, Value};

/// A schedulable component. `step` is the per-cycle behavior; contracts are
/// registered once, up front, so the kernel can time and toggle them.
pub trait Block: Send + 'static {
    fn ports(&self) -> Vec<PortSpec>;

    fn step(&mut self, cx: &mut StepContext<'_>);

    /// Standard contract methods of this block type.
    fn contracts(contracts: &mut Contracts<Self>)
    where
        Self: Sized,
    {
        let _ = contracts;
    }
}

pub type Predicate<B> = Box<dyn Fn(&B, &ContractEnv<'_>) -> bool + Send>;

struct Named<B> {
    label: &'static str,
    predicate: Predicate<B>,
}

/// Contract methods of one block, grouped by evaluation phase.
pub struct Contracts<B> {
    pre: Vec<Named<B>>,
    post: Vec<Named<B>>,
    invariants: Vec<Named<B>>,
    loops: Vec<&'static str>,
}

impl<B> Default for Contracts<B> {
    fn default() -> Self {
        Contracts { pre: Vec::new(), post: Vec::new(), invariants: Vec::new(), loops: Vec::new() }
    }
}

impl<B> Contracts<B> {
    pub fn precondition(
        &mut self,
        label: &'static str,
        predicate: impl Fn(&B, &ContractEnv<'_>) -> bool + Send + 'static,
    ) -> &mut Self {
        self.pre.push(Named { label, predicate: Box::new(predicate) });
        self
    }

    pub fn postcondition(
        &mut self,
        label: &'static str,
        predicate: impl Fn(&B, &ContractEnv<'_>) -> bool + Send + 'static,
    ) -> &mut Self {
        self.post.push(Named { label, predicate: Box::new(predicate) });
        self
    }

    pub fn invariant(
        &mut self,
        label: &'static str,
        predicate: impl Fn(&B, &ContractEnv<'_>) -> bool + Send + 'static,
    ) -> &mut Self {
        self.invariants.push(Named { label, predicate: Box::new(predicate) });
        self
    }

    /// Declares a monitored loop: one loop invariant and one loop variant,
    /// checked from inside `step` through [`StepContext::loop_check`].
    pub fn monitored_loop(&mut self, label: &'static str) -> &mut Self {
        self.loops.push(label);
        self
    }

    /// Connectivity precondition for each named port.
    pub fn require_connected(&mut self, ports: &[&'static str]) -> &mut Self {
        for &port in ports {
            self.precondition(port, move |_, env| env.is_connected(port));
        }
        self
    }

    pub fn count(&self) -> usize {
        self.pre.len() + self.post.len() + self.invariants.len() + 2 * self.loops.len()
    }

    pub fn count_of(&self, kind: ContractKind) -> usize {
        match kind {
            ContractKind::Precondition => self.pre.len(),
            ContractKind::Postcondition => self.post.len(),
            ContractKind::ClassInvariant => self.invariants.len(),
            ContractKind::LoopInvariant | ContractKind::LoopVariant => self.loops.len(),
            _ => 0,
        }
    }
}

/// Read-only view handed to contract predicates.
pub struct ContractEnv<'a> {
    pub(crate) block: &'a str,
    pub(crate) cycle: u64,
    pub(crate) ports: &'a PortTable,
    pub(crate) bindings: &'a [(&'static str, PortId)],
    pub(crate) old: &'a OldStore,
}

fn lookup(bindings: &[(&'static str, PortId)], block: &str, name: &str) -> PortId {
    bindings
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, id)| *id)
        .unwrap_or_else(|| panic!("block `{block}` has no port `{name}`"))
}

impl ContractEnv<'_> {
    pub fn block(&self) -> &str {
        self.block
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn is_connected(&self, port: &str) -> bool {
        self.ports.is_connected(lookup(self.bindings, self.block, port))
    }

    pub fn port(&self, port: &str) -> &PortValue {
        self.ports.read(lookup(self.bindings, self.block, port))
    }

    pub fn value(&self, port: &str) -> &Value {
        &self.port(port).value
    }

    pub fn old<T: Clone + 'static>(&self, label: &str) -> Result<T, OldStoreError> {
        self.old.get(label)
    }
}

/// Everything a block's `step` may touch during one cycle.
pub struct StepContext<'a> {
    pub(crate) block: &'a str,
    pub(crate) block_index: usize,
    pub(crate) cycle: u64,
    pub(crate) ports: &'a mut PortTable,
    pub(crate) bindings: &'a [(&'static str, PortId)],
    pub(crate) old: &'a mut OldStore,
    pub(crate) violations: &'a mut Vec<ContractViolation>,
    pub(crate) clock: &'a dyn Clock,
    pub(crate) contracts_enabled: bool,
    pub(crate) step_start: u64,
    pub(crate) trace: Option<&'a mut Vec<super::report::TraceEntry>>,
}

impl StepContext<'_> {
    pub fn block(&self) -> &str {
        self.block
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn contracts_enabled(&self) -> bool {
        self.contracts_enabled
    }

    pub fn step_start_ns(&self) -> u64 {
        self.step_start
    }

    pub fn now_ns(&self) -> u64 {
        self.clock.now()
    }

    pub fn clock_domain(&self) -> ClockDomain {
        self.clock.domain()
    }

    /// Burns `ns` of clock time: a stand-in for component computation.
    pub fn spend(&self, ns: u64) {
        if ns > 0 {
            self.clock.spend(ns);
        }
    }

    pub fn input(&self, port: &str) -> &PortValue {
        self.ports.read(lookup(self.bindings, self.block, port))
    }

    pub fn read(&self, port: &str) -> &Value {
        &self.input(port).value
    }

    pub fn is_connected(&self, port: &str) -> bool {
        self.ports.is_connected(lookup(self.bindings, self.block, port))
    }

    /// True when the port's current value was written in this cycle.
    pub fn is_fresh(&self, port: &str) -> bool {
        self.input(port).is_fresh(self.cycle)
    }

    pub fn write(&mut self, port: &'static str, value: Value) {
        let id = lookup(self.bindings, self.block, port);
        let expected = self.ports.slot(id).spec.ty;
        assert_eq!(
            value.ty(),
            expected,
            "block `{}` wrote a {:?} to port `{port}` of type {expected:?}",
            self.block,
            value.ty()
        );
        if let Some(trace) = self.trace.as_deref_mut() {
            trace.push(super::report::TraceEntry {
                cycle: self.cycle,
                block: self.block_index,
                port,
                value: value.clone(),
            });
        }
        self.ports.write(id, value, self.cycle);
    }

    /// Saves a copy of `value` for this cycle's postconditions. A no-op when
    /// contracts are disabled.
    pub fn capture_old<T: Clone + Send + 'static>(&mut self, label: &str, value: &T) -> Result<(), OldStoreError> {
        if !self.contracts_enabled {
            return Ok(());
        }
        self.old.capture(label, value)
    }

    /// One iteration of a monitored loop.
    pub fn loop_check(&mut self, monitor: &mut LoopMonitor, invariant: bool, variant: i64) {
        if !self.contracts_enabled {
            return;
        }
        let ctx = CheckContext { block: self.block, cycle: self.cycle, at_ns: 0 };
        let verdict = monitor.check(invariant, variant, ctx);
        if !verdict.is_clean() {
            // Stamped only on failure: a clock read per iteration is not free.
            let at_ns = self.clock.now();
            self.violations.extend(verdict.into_iter().map(|v| ContractViolation { at_ns, ..v }));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Phase {
    Before,
    After,
}

/// Type-erased block plus its contracts.
pub(crate) trait HostedBlock: Send {
    fn step(&mut self, cx: &mut StepContext<'_>);
    /// Preconditions (and, past the first cycle, invariants) before the step;
    /// postconditions and invariants after it.
    fn evaluate(&self, phase: Phase, env: &ContractEnv<'_>, at_ns: u64, out: &mut Vec<ContractViolation>);
    fn contract_count(&self) -> usize;
    fn contract_count_of(&self, kind: ContractKind) -> usize;
    fn as_any(&self) -> &dyn std::any::Any;
}

pub(crate) struct Hosted<B> {
    pub block: B,
    pub contracts: Contracts<B>,
}

impl<B: Block> HostedBlock for Hosted<B> {
    fn step(&mut self, cx: &mut StepContext<'_>) {
        self.block.step(cx);
    }

    fn evaluate(&self, phase: Phase, env: &ContractEnv<'_>, at_ns: u64, out: &mut Vec<ContractViolation>) {
        let ctx = CheckContext { block: env.block, cycle: env.cycle, at_ns };
        let mut run = |kind, set: &[Named<B>]| {
            for c in set {
                out.extend(check(kind, c.label, (c.predicate)(&self.block, env), ctx));
            }
        };
        match phase {
            Phase::Before => {
                run(ContractKind::Precondition, &self.contracts.pre);
                if env.cycle > 0 {
                    run(ContractKind::ClassInvariant, &self.contracts.invariants);
                }
            }
            Phase::After => {
                run(ContractKind::Postcondition, &self.contracts.post);
                run(ContractKind::ClassInvariant, &self.contracts.invariants);
            }
        }
    }

    fn contract_count(&self) -> usize {
        self.contracts.count()
    }

    fn contract_count_of(&self, kind: ContractKind) -> usize {
        self.contracts.count_of(kind)
    }

    fn as_any(&self) -> &dyn std::any::Any {
        &self.block
    }
}
