use std::fmt;

use thiserror::Error;

use crate::contracts::ContractKind;
use crate::fault::FaultPlan;
use crate::rtmon::CompletionContract;
use crate::stochastic::StatsError;

use super::block::{Block, Contracts, Hosted, HostedBlock};
use super::port::{Direction, PortId, PortSpec, PortTable, ValueType};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("unknown application `{0}`")]
    UnknownApp(String),
    #[error("block name `{0}` is already used")]
    DuplicateBlock(String),
    #[error("no block named `{0}`")]
    UnknownBlock(String),
    #[error("block `{block}` has no port `{port}`")]
    UnknownPort { block: String, port: String },
    #[error("channel must run output -> input, got {source_dir:?} `{source_port}` -> {sink_dir:?} `{sink_port}`")]
    DirectionMismatch { source_port: String, source_dir: Direction, sink_port: String, sink_dir: Direction },
    #[error("input `{0}` already has a feeding channel")]
    SinkOccupied(String),
    #[error("cannot connect {source_ty:?} output `{source_port}` to {sink_ty:?} input `{sink_port}`")]
    TypeMismatch { source_port: String, source_ty: ValueType, sink_port: String, sink_ty: ValueType },
    #[error("undelayed channels form a cycle through {0:?}")]
    CyclicDependency(Vec<String>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("socket unavailable: {0}")]
    SocketUnavailable(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId(pub usize);

/// A specific port of a specific block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRef {
    pub block: BlockId,
    pub(crate) id: PortId,
    pub direction: Direction,
}

/// Unidirectional output -> input link. A delayed channel closes a feedback
/// loop: its sink reads the value written in the previous cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Channel {
    pub source: PortRef,
    pub sink: PortRef,
    pub delayed: bool,
}

/// Per-block execution-time model parameters; `None` inherits the app value.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockParams {
    pub pi: Option<f64>,
    pub window: Option<usize>,
}

/// Where a completion contract takes its start time from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorSource {
    /// Step start of a block of this application, this cycle.
    Block(BlockId),
    /// Stamp carried by a [`Value::Stamped`](super::port::Value::Stamped)
    /// port, used when the anchor block runs elsewhere.
    StampPort(PortRef),
}

#[derive(Debug, Clone)]
pub(crate) struct CompletionBinding {
    pub contract: CompletionContract,
    pub anchor: AnchorSource,
    pub target: BlockId,
}

pub(crate) struct BlockEntry {
    pub name: String,
    pub hosted: Box<dyn HostedBlock>,
    pub bindings: Vec<(&'static str, PortId)>,
    pub params: BlockParams,
}

/// Application wiring plus timing and contract parameters.
pub struct AppConfig {
    pub name: String,
    pub(crate) blocks: Vec<BlockEntry>,
    pub(crate) ports: PortTable,
    pub(crate) channels: Vec<Channel>,
    pub(crate) completions: Vec<CompletionBinding>,
    pub cycle_time_ns: u64,
    pub jitter_margin_ns: u64,
    pub training_cycles: usize,
    pub pi: f64,
    pub window: usize,
    pub contracts_enabled: bool,
    pub faults: FaultPlan,
}

impl fmt::Debug for AppConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AppConfig")
            .field("name", &self.name)
            .field("blocks", &self.block_names())
            .field("channels", &self.channels.len())
            .field("cycle_time_ns", &self.cycle_time_ns)
            .field("jitter_margin_ns", &self.jitter_margin_ns)
            .field("training_cycles", &self.training_cycles)
            .field("pi", &self.pi)
            .field("window", &self.window)
            .field("contracts_enabled", &self.contracts_enabled)
            .finish()
    }
}

impl AppConfig {
    /// 10 ms cycle, 0.1 ms jitter margin, 1000 training cycles, pi = 0.95, h = 1.
    pub fn new(name: impl Into<String>) -> Self {
        AppConfig {
            name: name.into(),
            blocks: Vec::new(),
            ports: PortTable::default(),
            channels: Vec::new(),
            completions: Vec::new(),
            cycle_time_ns: 10_000_000,
            jitter_margin_ns: 100_000,
            training_cycles: 1000,
            pi: 0.95,
            window: 1,
            contracts_enabled: true,
            faults: FaultPlan::none(),
        }
    }

    /// Adds a block together with its standard contracts.
    pub fn add_block<B: Block>(&mut self, name: impl Into<String>, block: B) -> Result<BlockId, KernelError> {
        self.add_block_with(name, block, |_| {})
    }

    /// Adds a block; `extra` may register contracts beyond the standard set.
    pub fn add_block_with<B: Block>(
        &mut self,
        name: impl Into<String>,
        block: B,
        extra: impl FnOnce(&mut Contracts<B>),
    ) -> Result<BlockId, KernelError> {
        let name = name.into();
        if self.blocks.iter().any(|b| b.name == name) {
            return Err(KernelError::DuplicateBlock(name));
        }
        let mut contracts = Contracts::default();
        B::contracts(&mut contracts);
        extra(&mut contracts);
        let id = BlockId(self.blocks.len());
        let specs: Vec<PortSpec> = block.ports();
        let mut bindings = Vec::with_capacity(specs.len());
        for spec in specs {
            if bindings.iter().any(|(n, _)| *n == spec.name) {
                return Err(KernelError::InvalidConfig(format!(
                    "block `{name}` declares port `{}` twice",
                    spec.name
                )));
            }
            bindings.push((spec.name, self.ports.add(id, spec)));
        }
        self.blocks.push(BlockEntry {
            name,
            hosted: Box::new(Hosted { block, contracts }),
            bindings,
            params: BlockParams::default(),
        });
        Ok(id)
    }

    pub fn block_id(&self, name: &str) -> Result<BlockId, KernelError> {
        self.blocks
            .iter()
            .position(|b| b.name == name)
            .map(BlockId)
            .ok_or_else(|| KernelError::UnknownBlock(name.to_owned()))
    }

    pub fn block_name(&self, id: BlockId) -> &str {
        &self.blocks[id.0].name
    }

    pub fn block_names(&self) -> Vec<&str> {
        self.blocks.iter().map(|b| b.name.as_str()).collect()
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Typed access to a hosted block's state.
    pub fn block<B: Block>(&self, id: BlockId) -> Option<&B> {
        self.blocks.get(id.0)?.hosted.as_any().downcast_ref::<B>()
    }

    pub fn set_params(&mut self, id: BlockId, params: BlockParams) {
        self.blocks[id.0].params = params;
    }

    pub fn params(&self, id: BlockId) -> BlockParams {
        self.blocks[id.0].params
    }

    /// Effective model parameters (pi, h) for a block.
    pub fn model_params(&self, id: BlockId) -> (f64, usize) {
        let p = self.blocks[id.0].params;
        (p.pi.unwrap_or(self.pi), p.window.unwrap_or(self.window))
    }

    pub fn port(&self, block: BlockId, name: &str) -> Result<PortRef, KernelError> {
        let entry = self
            .blocks
            .get(block.0)
            .ok_or_else(|| KernelError::UnknownBlock(format!("#{}", block.0)))?;
        let id = entry
            .bindings
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, id)| *id)
            .ok_or_else(|| KernelError::UnknownPort { block: entry.name.clone(), port: name.to_owned() })?;
        Ok(PortRef { block, id, direction: self.ports.slot(id).spec.direction })
    }

    /// Looks a port up by its `Block.port` path.
    pub fn port_by_path(&self, path: &str) -> Result<PortRef, KernelError> {
        let (block, port) = path
            .rsplit_once('.')
            .ok_or_else(|| KernelError::InvalidConfig(format!("port path `{path}` is not `block.port`")))?;
        self.port(self.block_id(block)?, port)
    }

    pub fn port_path(&self, port: PortRef) -> String {
        let slot = self.ports.slot(port.id);
        format!("{}.{}", self.blocks[slot.owner.0].name, slot.spec.name)
    }

    pub fn connect(&mut self, source: PortRef, sink: PortRef) -> Result<Channel, KernelError> {
        self.link(source, sink, false)
    }

    /// Feedback edge: ignored by the scheduler, read one cycle late.
    pub fn connect_delayed(&mut self, source: PortRef, sink: PortRef) -> Result<Channel, KernelError> {
        self.link(source, sink, true)
    }

    fn link(&mut self, source: PortRef, sink: PortRef, delayed: bool) -> Result<Channel, KernelError> {
        let (src, snk) = (self.ports.slot(source.id), self.ports.slot(sink.id));
        if src.spec.direction != Direction::Output || snk.spec.direction != Direction::Input {
            return Err(KernelError::DirectionMismatch {
                source_port: self.port_path(source),
                source_dir: src.spec.direction,
                sink_port: self.port_path(sink),
                sink_dir: snk.spec.direction,
            });
        }
        if snk.source.is_some() {
            return Err(KernelError::SinkOccupied(self.port_path(sink)));
        }
        if src.spec.ty != snk.spec.ty {
            return Err(KernelError::TypeMismatch {
                source_port: self.port_path(source),
                source_ty: src.spec.ty,
                sink_port: self.port_path(sink),
                sink_ty: snk.spec.ty,
            });
        }
        self.ports.slot_mut(sink.id).source = Some(source.id);
        self.ports.slot_mut(source.id).fanout += 1;
        let channel = Channel { source, sink, delayed };
        self.channels.push(channel);
        Ok(channel)
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn add_completion(
        &mut self,
        contract: CompletionContract,
        anchor: AnchorSource,
    ) -> Result<(), KernelError> {
        let target = self.block_id(&contract.target)?;
        if contract.deadline_ns == 0 {
            return Err(KernelError::InvalidConfig(format!(
                "completion `{}` needs a positive deadline",
                contract.label
            )));
        }
        if let AnchorSource::StampPort(port) = anchor {
            if self.ports.slot(port.id).spec.ty != ValueType::Stamped {
                return Err(KernelError::InvalidConfig(format!(
                    "completion anchor `{}` is not a stamped port",
                    self.port_path(port)
                )));
            }
        }
        self.completions.push(CompletionBinding { contract, anchor, target });
        Ok(())
    }

    pub fn completions(&self) -> impl Iterator<Item = &CompletionContract> {
        self.completions.iter().map(|c| &c.contract)
    }

    /// Every contract the application checks when contracts are enabled:
    /// functional contract methods, one execution-time contract per block,
    /// the cycle-time and jitter contracts, and completion contracts.
    pub fn contract_count(&self) -> usize {
        let functional: usize = self.blocks.iter().map(|b| b.hosted.contract_count()).sum();
        functional + self.blocks.len() + 2 + self.completions.len()
    }

    pub fn contract_count_of(&self, kind: ContractKind) -> usize {
        match kind {
            ContractKind::ExecTime => self.blocks.len(),
            ContractKind::CycleTime | ContractKind::Jitter => 1,
            ContractKind::Completion => self.completions.len(),
            _ => self.blocks.iter().map(|b| b.hosted.contract_count_of(kind)).sum(),
        }
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        let bad = |msg: String| Err(KernelError::InvalidConfig(msg));
        if self.cycle_time_ns == 0 {
            return bad("cycle time must be positive".into());
        }
        if self.training_cycles < 2 {
            return bad(format!("training length {} is below 2", self.training_cycles));
        }
        if self.blocks.is_empty() {
            return bad("application has no blocks".into());
        }
        for id in (0..self.blocks.len()).map(BlockId) {
            let (pi, h) = self.model_params(id);
            if !(0.0..=1.0).contains(&pi) {
                return bad(format!("pi {pi} of `{}` is outside [0, 1]", self.block_name(id)));
            }
            if h == 0 || h > self.training_cycles {
                return bad(format!(
                    "window {h} of `{}` must lie in 1..={}",
                    self.block_name(id),
                    self.training_cycles
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::block::StepContext;
    use crate::kernel::port::Value;

    struct Src;
    impl Block for Src {
        fn ports(&self) -> Vec<PortSpec> {
            vec![PortSpec::output("out", ValueType::Float)]
        }
        fn step(&mut self, cx: &mut StepContext<'_>) {
            cx.write("out", Value::Float(1.0));
        }
    }

    struct Dst;
    impl Block for Dst {
        fn ports(&self) -> Vec<PortSpec> {
            vec![PortSpec::input("in", ValueType::Float), PortSpec::input("n", ValueType::Int)]
        }
        fn step(&mut self, _cx: &mut StepContext<'_>) {}
    }

    fn pair() -> (AppConfig, BlockId, BlockId, BlockId) {
        let mut app = AppConfig::new("t");
        let s = app.add_block("Sensor", Src).unwrap();
        let s2 = app.add_block("Other", Src).unwrap();
        let d = app.add_block("Adder", Dst).unwrap();
        (app, s, s2, d)
    }

    #[test]
    fn first_connection_succeeds() {
        let (mut app, s, _, d) = pair();
        let out = app.port(s, "out").unwrap();
        let inp = app.port(d, "in").unwrap();
        app.connect(out, inp).unwrap();
        assert_eq!(app.channels().len(), 1);
    }

    #[test]
    fn reversed_direction_rejected() {
        let (mut app, s, _, d) = pair();
        let out = app.port(s, "out").unwrap();
        let inp = app.port(d, "in").unwrap();
        assert!(matches!(app.connect(inp, out), Err(KernelError::DirectionMismatch { .. })));
        assert!(matches!(app.connect(out, out), Err(KernelError::DirectionMismatch { .. })));
    }

    #[test]
    fn second_feeder_rejected() {
        let (mut app, s, s2, d) = pair();
        let inp = app.port(d, "in").unwrap();
        app.connect(app.port(s, "out").unwrap(), inp).unwrap();
        let err = app.connect(app.port(s2, "out").unwrap(), inp).unwrap_err();
        assert!(matches!(err, KernelError::SinkOccupied(ref p) if p == "Adder.in"));
    }

    #[test]
    fn incompatible_types_rejected() {
        let (mut app, s, _, d) = pair();
        let err = app.connect(app.port(s, "out").unwrap(), app.port(d, "n").unwrap()).unwrap_err();
        assert!(matches!(err, KernelError::TypeMismatch { .. }));
    }

    #[test]
    fn output_may_fan_out() {
        let mut app = AppConfig::new("t");
        let s = app.add_block("S", Src).unwrap();
        let d1 = app.add_block("D1", Dst).unwrap();
        let d2 = app.add_block("D2", Dst).unwrap();
        let out = app.port(s, "out").unwrap();
        app.connect(out, app.port(d1, "in").unwrap()).unwrap();
        app.connect(out, app.port(d2, "in").unwrap()).unwrap();
        assert_eq!(app.channels().len(), 2);
    }

    #[test]
    fn names_must_be_unique() {
        let (mut app, ..) = pair();
        assert!(matches!(app.add_block("Sensor", Src), Err(KernelError::DuplicateBlock(_))));
        assert!(matches!(app.port_by_path("Sensor.nope"), Err(KernelError::UnknownPort { .. })));
        assert!(matches!(app.block_id("Nope"), Err(KernelError::UnknownBlock(_))));
    }

    #[test]
    fn validation_rules() {
        let (mut app, s, ..) = pair();
        app.validate().unwrap();
        app.training_cycles = 1;
        assert!(app.validate().is_err());
        app.training_cycles = 10;
        app.set_params(s, BlockParams { pi: Some(1.5), window: None });
        assert!(app.validate().is_err());
        app.set_params(s, BlockParams { pi: None, window: Some(11) });
        assert!(app.validate().is_err());
        app.set_params(s, BlockParams::default());
        app.cycle_time_ns = 0;
        assert!(app.validate().is_err());
    }

    #[test]
    fn real_time_contracts_are_counted() {
        let (app, ..) = pair();
        // three blocks, no functional contracts
        assert_eq!(app.contract_count(), 3 + 2);
    }
}
