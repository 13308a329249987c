//! The five case-study applications and a registry to build them by name.
//!
//! Block bodies stand in for real computation by spending a fixed amount of
//! clock time (`work`), sized so one cycle takes about as long as the
//! published contract-free execution times.

pub mod binary_search;
pub mod config;
pub mod energy_pack;
pub mod gaussian;
pub mod net_proxy;
pub mod simple_counter;

use crate::fault::FaultPlan;
use crate::kernel::{AppConfig, KernelError};

/// Knobs shared by every case-study builder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub seed: u64,
    pub faults: FaultPlan,
    /// 1 ms cycles and a tenth of the per-block work.
    pub fast: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { seed: 1, faults: FaultPlan::none(), fast: false }
    }
}

impl BuildOptions {
    pub fn fast() -> Self {
        BuildOptions { fast: true, ..Self::default() }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_faults(mut self, faults: FaultPlan) -> Self {
        self.faults = faults;
        self
    }

    /// Work of a block in ns, given its nominal cost in microseconds.
    pub fn work_ns(&self, micros: u64) -> u64 {
        if self.fast {
            micros * 100
        } else {
            micros * 1000
        }
    }

    pub fn cycle_time_ns(&self, nominal_ms: u64) -> u64 {
        if self.fast {
            1_000_000
        } else {
            nominal_ms * 1_000_000
        }
    }

    pub(crate) fn base_app(&self, name: &str, nominal_ms: u64, pi: f64, window: usize) -> AppConfig {
        let mut app = AppConfig::new(name);
        app.cycle_time_ns = self.cycle_time_ns(nominal_ms);
        app.jitter_margin_ns = 100_000;
        app.pi = pi;
        app.window = window;
        app.faults = self.faults;
        app
    }
}

/// A built application together with its published contract total.
#[derive(Debug)]
pub struct CaseStudy {
    pub name: &'static str,
    pub app: AppConfig,
    pub expected_contracts: usize,
}

impl CaseStudy {
    pub fn pi(&self) -> f64 {
        self.app.pi
    }

    pub fn window(&self) -> usize {
        self.app.window
    }
}

/// Names accepted by [`build`].
pub const CASE_STUDIES: [&str; 4] = ["simple-counter", "gaussian", "energy-pack", "binary-search"];

/// Builds one of the single-host case studies.
pub fn build(name: &str, opts: BuildOptions) -> Result<CaseStudy, KernelError> {
    match name {
        "simple-counter" => simple_counter::build(opts),
        "gaussian" => gaussian::build(opts),
        "energy-pack" => energy_pack::build(opts),
        "binary-search" => binary_search::build(opts),
        other => Err(KernelError::UnknownApp(other.to_owned())),
    }
}

pub fn is_case_study(name: &str) -> bool {
    CASE_STUDIES.contains(&name) || name == net_proxy::NAME
}
