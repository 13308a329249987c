//! Minimal cyclic execution kernel: blocks, ports, channels, a scheduler and
//! a fixed-period executor with slack-time violation logging.

pub mod app;
pub mod block;
pub mod clock;
pub mod executor;
pub mod log;
pub mod port;
pub mod report;
pub mod schedule;

pub use app::{AnchorSource, AppConfig, BlockId, BlockParams, Channel, KernelError, PortRef};
pub use block::{Block, ContractEnv, Contracts, StepContext};
pub use clock::{Clock, ClockDomain, MonotonicClock, Timestamp, VirtualClock};
pub use executor::{run_cycles, Anchor, Executor, RunOptions};
pub use log::{LogFormat, LogRecord, ViolationLog, ViolationSink};
pub use port::{Direction, PortSpec, PortValue, Value, ValueType};
pub use report::{BlockTiming, RunReport, Summary, TraceEntry};
pub use schedule::schedule_order;
