//! User-defined applications from a TOML document.
//!
//! ```toml
//! name = "loop"
//! cycle_time_ms = 10.0
//! jitter_ms = 0.1
//! pi = 0.95
//! window = 5
//!
//! [[block]]
//! name = "Plant"
//! type = "System"
//! alpha = 0.2
//!
//! [[block]]
//! name = "Probe"
//! type = "Sensor"
//! pi = 0.99
//!
//! [[channel]]
//! from = "Plant.y"
//! to = "Probe.y"
//! delayed = true
//! ```
//!
//! Block types are the case-study blocks that need no external resources,
//! plus [`Load`], which only burns its work budget and declares no contracts.

use serde::Deserialize;

use crate::kernel::{AppConfig, Block, BlockParams, Contracts, KernelError, PortSpec, StepContext};

use super::binary_search::{ArrayCreator, BinarySearch, RandomInt, Sorter};
use super::energy_pack::{self, ErrorAdder, FeedForward, Feedback, Sensor, SumAdder, System};
use super::gaussian::{GaussianGenerator, RandomGenerator, RangeCalculator};
use super::simple_counter::Counter;
use super::BuildOptions;

pub const BLOCK_TYPES: [&str; 15] = [
    "Load",
    "Counter",
    "RandomGenerator",
    "GaussianGenerator",
    "RangeCalculator",
    "FeedForward",
    "Feedback",
    "Sensor",
    "ErrorAdder",
    "SumAdder",
    "System",
    "RandomInt",
    "ArrayCreator",
    "Sorter",
    "BinarySearch",
];

/// Spends its work and nothing else.
pub struct Load {
    work_ns: u64,
}

impl Load {
    pub fn new(work_ns: u64) -> Self {
        Load { work_ns }
    }
}

impl Block for Load {
    fn ports(&self) -> Vec<PortSpec> {
        Vec::new()
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
    }

    fn contracts(_: &mut Contracts<Self>) {}
}

fn default_cycle_ms() -> f64 {
    10.0
}
fn default_jitter_ms() -> f64 {
    0.1
}
fn default_training() -> usize {
    1000
}
fn default_pi() -> f64 {
    0.95
}
fn default_window() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppFile {
    pub name: String,
    #[serde(default = "default_cycle_ms")]
    pub cycle_time_ms: f64,
    #[serde(default = "default_jitter_ms")]
    pub jitter_ms: f64,
    #[serde(default = "default_training")]
    pub training_cycles: usize,
    #[serde(default = "default_pi")]
    pub pi: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default, rename = "block")]
    pub blocks: Vec<BlockDef>,
    #[serde(default, rename = "channel")]
    pub channels: Vec<ChannelDef>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDef {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    /// Nominal work per step in microseconds.
    pub work_us: Option<u64>,
    pub seed: Option<u64>,
    pub gain: Option<f64>,
    pub alpha: Option<f64>,
    pub setpoint: Option<f64>,
    pub pi: Option<f64>,
    pub window: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDef {
    pub from: String,
    pub to: String,
    #[serde(default)]
    pub delayed: bool,
}

pub fn parse(text: &str) -> Result<AppFile, KernelError> {
    toml::from_str(text).map_err(|e| KernelError::InvalidConfig(e.to_string()))
}

fn ms_to_ns(field: &str, ms: f64) -> Result<u64, KernelError> {
    if !ms.is_finite() || ms < 0.0 {
        return Err(KernelError::InvalidConfig(format!("{field} must be a nonnegative number of ms")));
    }
    Ok((ms * 1e6).round() as u64)
}

impl AppFile {
    /// Wires the application. `opts.seed` offsets every block seed, and
    /// `opts.fast` scales work as for the case studies; the cycle time is
    /// taken from the file.
    pub fn build(&self, opts: BuildOptions) -> Result<AppConfig, KernelError> {
        let mut app = AppConfig::new(self.name.clone());
        app.cycle_time_ns = ms_to_ns("cycle_time_ms", self.cycle_time_ms)?;
        app.jitter_margin_ns = ms_to_ns("jitter_ms", self.jitter_ms)?;
        app.training_cycles = self.training_cycles;
        app.pi = self.pi;
        app.window = self.window;
        app.faults = opts.faults;
        for def in &self.blocks {
            let work = opts.work_ns(def.work_us.unwrap_or(100));
            let seed = def.seed.unwrap_or(0).wrapping_add(opts.seed);
            let name = def.name.clone();
            let id = match def.kind.as_str() {
                "Load" => app.add_block(name, Load::new(work)),
                "Counter" => app.add_block(name, Counter::new(work)),
                "RandomGenerator" => app.add_block(name, RandomGenerator::new(seed, work)),
                "GaussianGenerator" => app.add_block(name, GaussianGenerator::new(work)),
                "RangeCalculator" => app.add_block(name, RangeCalculator::new(work)),
                "FeedForward" => app.add_block(
                    name,
                    FeedForward::new(
                        def.setpoint.unwrap_or(energy_pack::SETPOINT),
                        def.gain.unwrap_or(energy_pack::FEED_FORWARD_GAIN),
                        work,
                    ),
                ),
                "Feedback" => {
                    app.add_block(name, Feedback::new(def.gain.unwrap_or(energy_pack::FEEDBACK_GAIN), work))
                }
                "Sensor" => app.add_block(name, Sensor::new(work)),
                "ErrorAdder" => app.add_block(name, ErrorAdder::new(work)),
                "SumAdder" => app.add_block(name, SumAdder::new(work)),
                "System" => app.add_block(name, System::new(def.alpha.unwrap_or(energy_pack::ALPHA), work)),
                "RandomInt" => app.add_block(name, RandomInt::new(seed, work)),
                "ArrayCreator" => app.add_block(name, ArrayCreator::new(work)),
                "Sorter" => app.add_block(name, Sorter::new(work)),
                "BinarySearch" => app.add_block(name, BinarySearch::new(work)),
                other => {
                    return Err(KernelError::InvalidConfig(format!(
                        "unknown block type `{other}`; known types: {}",
                        BLOCK_TYPES.join(", ")
                    )))
                }
            }?;
            app.set_params(id, BlockParams { pi: def.pi, window: def.window });
        }
        for ch in &self.channels {
            let (from, to) = (app.port_by_path(&ch.from)?, app.port_by_path(&ch.to)?);
            if ch.delayed {
                app.connect_delayed(from, to)?;
            } else {
                app.connect(from, to)?;
            }
        }
        app.validate()?;
        Ok(app)
    }
}

pub fn load(path: &std::path::Path, opts: BuildOptions) -> Result<AppConfig, KernelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| KernelError::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)?.build(opts)
}
