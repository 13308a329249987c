//! Library side of the `stocon` command: running applications, dumping
//! execution-time models and the contracts-on/off overhead benchmark.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use stochastic_contracts::apps::{self, config, net_proxy, BuildOptions};
use stochastic_contracts::kernel::log::{sink_for, NullSink};
use stochastic_contracts::kernel::report::summarize;
use stochastic_contracts::kernel::{
    Anchor, AppConfig, Clock, Executor, KernelError, LogFormat, MonotonicClock, RunOptions, RunReport, ViolationLog,
    VirtualClock,
};
use stochastic_contracts::{ContractKind, FaultPlan, ModelSnapshot};

/// Overrides the violation log path.
pub const ENV_LOG: &str = "STOCON_LOG";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown application `{0}`; expected one of {known} or a .toml file", known = known_apps().join(", "))]
    UnknownApp(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model of `{block}` is not trained: it needs {needed} cycles with contracts on")]
    TrainingIncomplete { block: String, needed: usize },
    #[error("setup failed: {0}")]
    Setup(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownApp(_) | CliError::InvalidConfig(_) | CliError::TrainingIncomplete { .. } => 2,
            CliError::Setup(_) => 3,
        }
    }
}

impl From<KernelError> for CliError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::UnknownApp(name) => CliError::UnknownApp(name),
            KernelError::SocketUnavailable(msg) => CliError::Setup(msg),
            other => CliError::InvalidConfig(other.to_string()),
        }
    }
}

fn setup(what: &str, path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Setup(format!("{what} {}: {e}", path.display()))
}

pub fn known_apps() -> Vec<&'static str> {
    let mut names = apps::CASE_STUDIES.to_vec();
    names.extend([net_proxy::NAME, "net-proxy-sender", "net-proxy-receiver"]);
    names
}

/// Everything `stocon run` accepts.
#[derive(Debug, Clone)]
pub struct RunSettings {
    pub app: String,
    pub cycles: u64,
    pub contracts: bool,
    pub seed: u64,
    pub pi: Option<f64>,
    pub window: Option<usize>,
    pub cycle_time_ms: Option<f64>,
    pub jitter_ms: Option<f64>,
    pub training: Option<usize>,
    pub log_format: LogFormat,
    pub log_path: Option<PathBuf>,
    pub report_csv: Option<PathBuf>,
    pub dump_models: Option<PathBuf>,
    pub fast: bool,
    pub faults: FaultPlan,
    /// Simulated time instead of the host clock.
    pub virtual_clock: bool,
    pub bind: Option<SocketAddr>,
    pub peer: Option<SocketAddr>,
    /// Host-clock reading at which cycle 0 starts.
    pub start_ns: Option<u64>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            app: "simple-counter".into(),
            cycles: 10_000,
            contracts: true,
            seed: 1,
            pi: None,
            window: None,
            cycle_time_ms: None,
            jitter_ms: None,
            training: None,
            log_format: LogFormat::Json,
            log_path: None,
            report_csv: None,
            dump_models: None,
            fast: false,
            faults: FaultPlan::none(),
            virtual_clock: false,
            bind: None,
            peer: None,
            start_ns: None,
        }
    }
}

impl RunSettings {
    pub fn new(app: impl Into<String>) -> Self {
        RunSettings { app: app.into(), ..Self::default() }
    }

    fn build_options(&self) -> BuildOptions {
        BuildOptions { seed: self.seed, faults: self.faults, fast: self.fast }
    }

    /// `STOCON_LOG`, then `--out`, then `violations.jsonl` / `violations.log`.
    pub fn resolved_log_path(&self) -> PathBuf {
        if let Some(p) = std::env::var_os(ENV_LOG).filter(|p| !p.is_empty()) {
            return PathBuf::from(p);
        }
        self.log_path.clone().unwrap_or_else(|| {
            PathBuf::from(match self.log_format {
                LogFormat::Json => "violations.jsonl",
                LogFormat::Text => "violations.log",
            })
        })
    }

    fn apply_overrides(&self, app: &mut AppConfig) -> Result<(), CliError> {
        let ms = |field: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok((v * 1e6).round() as u64)
            } else {
                Err(CliError::InvalidConfig(format!("{field} must be a nonnegative number of ms")))
            }
        };
        if let Some(v) = self.cycle_time_ms {
            app.cycle_time_ns = ms("--cycle-time-ms", v)?;
        }
        if let Some(v) = self.jitter_ms {
            app.jitter_margin_ns = ms("--jitter-ms", v)?;
        }
        if let Some(pi) = self.pi {
            app.pi = pi;
        }
        if let Some(h) = self.window {
            app.window = h;
        }
        if let Some(n) = self.training {
            app.training_cycles = n;
        }
        app.contracts_enabled = self.contracts;
        app.validate()?;
        Ok(())
    }
}

/// Inserts `-tag` before the extension: `v.jsonl` -> `v-sender.jsonl`.
pub fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}-{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{tag}"),
    };
    path.with_file_name(name)
}

/// A single-host application: a case study by name or a TOML file.
pub fn prepare_app(settings: &RunSettings) -> Result<AppConfig, CliError> {
    let opts = settings.build_options();
    let mut app = if settings.app.ends_with(".toml") {
        let path = Path::new(&settings.app);
        if !path.exists() {
            return Err(CliError::InvalidConfig(format!("no such file {}", path.display())));
        }
        config::load(path, opts)?
    } else if apps::CASE_STUDIES.contains(&settings.app.as_str()) {
        apps::build(&settings.app, opts)?.app
    } else {
        return Err(CliError::UnknownApp(settings.app.clone()));
    };
    settings.apply_overrides(&mut app)?;
    Ok(app)
}

fn open_log(path: &Path, format: LogFormat) -> Result<ViolationLog, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| setup("cannot create", dir, e))?;
    }
    let file = File::create(path).map_err(|e| setup("cannot create", path, e))?;
    Ok(ViolationLog::measured(sink_for(format, BufWriter::new(file)), format))
}

fn clock(settings: &RunSettings) -> Box<dyn Clock> {
    if settings.virtual_clock {
        Box::new(VirtualClock::new())
    } else {
        Box::new(MonotonicClock::new())
    }
}

/// What one `run` produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub reports: Vec<RunReport>,
    pub log_paths: Vec<PathBuf>,
    pub models: Vec<ModelSnapshot>,
}

/// Runs the application and writes the violation log, plus the CSV report
/// and model dump when requested. Violations never make this fail.
pub fn run(settings: &RunSettings) -> Result<RunOutcome, CliError> {
    let log_path = settings.resolved_log_path();
    let (reports, log_paths) = match settings.app.as_str() {
        net_proxy::NAME => run_pair(settings, &log_path)?,
        "net-proxy-sender" | "net-proxy-receiver" => {
            (vec![run_endpoint(settings, &log_path)?], vec![log_path])
        }
        _ => {
            let app = prepare_app(settings)?;
            let log = open_log(&log_path, settings.log_format)?;
            let mut exec = Executor::new(app, clock(settings), log)?;
            exec.run_cycles(settings.cycles);
            (vec![exec.finish().0], vec![log_path])
        }
    };

    if let Some(csv_path) = &settings.report_csv {
        for (i, report) in reports.iter().enumerate() {
            let path = if reports.len() > 1 { tagged_path(csv_path, endpoint_tag(i)) } else { csv_path.clone() };
            let file = File::create(&path).map_err(|e| setup("cannot create", &path, e))?;
            report.write_csv(BufWriter::new(file)).map_err(|e| setup("cannot write", &path, e))?;
        }
    }
    let models = match &settings.dump_models {
        Some(path) => {
            let models = dump_models(&reports, training_len(settings))?;
            let file = File::create(path).map_err(|e| setup("cannot create", path, e))?;
            serde_json::to_writer_pretty(BufWriter::new(file), &models)
                .map_err(|e| setup("cannot write", path, e))?;
            models
        }
        None => reports.iter().flat_map(|r| r.models.iter().cloned()).collect(),
    };
    Ok(RunOutcome { reports, log_paths, models })
}

fn endpoint_tag(i: usize) -> &'static str {
    if i == 0 {
        "sender"
    } else {
        "receiver"
    }
}

fn training_len(settings: &RunSettings) -> usize {
    settings.training.unwrap_or(AppConfig::new("").training_cycles)
}

/// One snapshot per block of every report; fails if any model is untrained.
pub fn dump_models(reports: &[RunReport], training: usize) -> Result<Vec<ModelSnapshot>, CliError> {
    let mut out = Vec::new();
    for report in reports {
        for block in &report.blocks {
            match report.models.iter().find(|m| &m.block == block) {
                Some(m) => out.push(m.clone()),
                None => return Err(CliError::TrainingIncomplete { block: block.clone(), needed: training + 1 }),
            }
        }
    }
    Ok(out)
}

fn run_pair(settings: &RunSettings, log_path: &Path) -> Result<(Vec<RunReport>, Vec<PathBuf>), CliError> {
    let paths = vec![tagged_path(log_path, "sender"), tagged_path(log_path, "receiver")];
    let tx_log = open_log(&paths[0], settings.log_format)?;
    let rx_log = open_log(&paths[1], settings.log_format)?;
    let opts = settings.build_options();
    if settings.cycle_time_ms.is_some() || settings.jitter_ms.is_some() || settings.training.is_some() {
        return Err(CliError::InvalidConfig(
            "timing overrides for net-proxy need separate net-proxy-sender/receiver runs".into(),
        ));
    }
    let pair = if settings.virtual_clock {
        net_proxy::run_lockstep(opts, settings.cycles, tx_log, rx_log)
    } else {
        net_proxy::run_threaded(opts, settings.cycles, tx_log, rx_log)
    };
    let pair = pair.map_err(CliError::from)?;
    Ok((vec![pair.sender, pair.receiver], paths))
}

fn run_endpoint(settings: &RunSettings, log_path: &Path) -> Result<RunReport, CliError> {
    let opts = settings.build_options();
    let bad = |e: KernelError| CliError::Setup(e.to_string());
    let mut case = if settings.app == "net-proxy-sender" {
        let peer = settings
            .peer
            .ok_or_else(|| CliError::InvalidConfig("net-proxy-sender needs --peer".into()))?;
        let bind = settings.bind.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 0)));
        net_proxy::build_sender(opts, net_proxy::sender_socket(bind, peer).map_err(bad)?)?
    } else {
        let bind = settings
            .bind
            .ok_or_else(|| CliError::InvalidConfig("net-proxy-receiver needs --bind".into()))?;
        let socket = net_proxy::receiver_socket(bind).map_err(bad)?;
        if let Some(peer) = settings.peer {
            socket.connect(peer).map_err(|e| CliError::Setup(e.to_string()))?;
        }
        net_proxy::build_receiver(opts, socket)?
    };
    settings.apply_overrides(&mut case.app)?;
    let anchor = settings.start_ns.map_or(Anchor::Aligned, Anchor::At);
    let log = open_log(log_path, settings.log_format)?;
    let mut exec = Executor::with_options(case.app, clock(settings), log, RunOptions { anchor, trace: false })?;
    exec.run_cycles(settings.cycles);
    Ok(exec.finish().0)
}

/// Mean and median of per-cycle busy time, in ms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimeStats {
    pub mean_ms: f64,
    pub median_ms: f64,
}

impl TimeStats {
    fn of(report: &RunReport) -> TimeStats {
        let s = summarize(&report.busy).unwrap_or(stochastic_contracts::kernel::Summary {
            count: 0,
            mean: 0.0,
            median: 0.0,
            min: 0,
            max: 0,
        });
        TimeStats { mean_ms: s.mean / 1e6, median_ms: s.median / 1e6 }
    }
}

fn pct(with: f64, without: f64) -> f64 {
    if without > 0.0 {
        (with - without) / without * 100.0
    } else {
        0.0
    }
}

/// One row of the overhead table.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub app: String,
    pub cycles: u64,
    pub contracts: usize,
    pub without: TimeStats,
    pub with: TimeStats,
    /// Relative increase of the mean busy time.
    pub overhead_pct: f64,
    pub median_overhead_pct: f64,
    /// Run-to-run noise band from two contracts-off runs, when measured:
    /// the larger of their mean difference and three standard errors of
    /// that difference, relative to the first run.
    pub noise_pct: Option<f64>,
    pub violations: BTreeMap<ContractKind, usize>,
    /// Whether the overhead budget applies to this application.
    pub budgeted: bool,
}

impl BenchRow {
    fn new(app: &str, contracts: usize, off: &RunReport, on: &RunReport, off2: Option<&RunReport>) -> Self {
        let (without, with) = (TimeStats::of(off), TimeStats::of(on));
        BenchRow {
            app: app.to_owned(),
            cycles: on.cycles() as u64,
            contracts,
            without,
            with,
            overhead_pct: pct(with.mean_ms, without.mean_ms),
            median_overhead_pct: pct(with.median_ms, without.median_ms),
            noise_pct: off2.map(|r| noise_band_pct(&off.busy, &r.busy)),
            violations: on.count_by_kind(),
            budgeted: !app.starts_with(net_proxy::NAME),
        }
    }
}

fn mean_var(v: &[u64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, var)
}

/// See [`BenchRow::noise_pct`].
pub fn noise_band_pct(a: &[u64], b: &[u64]) -> f64 {
    let ((ma, va), (mb, vb)) = (mean_var(a), mean_var(b));
    if ma <= 0.0 {
        return 0.0;
    }
    let se = (va / a.len().max(1) as f64 + vb / b.len().max(1) as f64).sqrt();
    (ma - mb).abs().max(3.0 * se) / ma * 100.0
}

/// Overhead budget for the single-host applications, in percent.
pub const OVERHEAD_BUDGET_PCT: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct BenchSettings {
    pub app: String,
    pub cycles: u64,
    pub seed: u64,
    pub fast: bool,
    /// Add a second contracts-off run to estimate run-to-run noise.
    pub noise: bool,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings { app: "all".into(), cycles: 10_000, seed: 1, fast: false, noise: false }
    }
}

fn quiet_log() -> ViolationLog {
    ViolationLog::measured(sink_for(LogFormat::Json, io::sink()), LogFormat::Json)
}

fn timed_single(build: &dyn Fn() -> Result<AppConfig, CliError>, cycles: u64, contracts: bool) -> Result<RunReport, CliError> {
    let mut app = build()?;
    app.contracts_enabled = contracts;
    let mut exec = Executor::new(app, Box::new(MonotonicClock::new()), quiet_log())?;
    exec.run_cycles(cycles);
    Ok(exec.finish().0)
}

fn timed_pair(opts: BuildOptions, cycles: u64, contracts: bool) -> Result<net_proxy::PairReport, CliError> {
    let (mut tx, mut rx) = net_proxy::build_pair(opts)?;
    tx.app.contracts_enabled = contracts;
    rx.app.contracts_enabled = contracts;
    Ok(net_proxy::run_apps_threaded(tx.app, rx.app, cycles, quiet_log(), quiet_log())?)
}

/// Runs one application with contracts off and then on, same seed and cycle
/// count. The net proxy yields a row per endpoint.
pub fn bench_app(name: &str, settings: &BenchSettings) -> Result<Vec<BenchRow>, CliError> {
    let opts = BuildOptions { seed: settings.seed, faults: FaultPlan::none(), fast: settings.fast };
    let cycles = settings.cycles;
    if name == net_proxy::NAME {
        let off = timed_pair(opts, cycles, false)?;
        let on = timed_pair(opts, cycles, true)?;
        let off2 = if settings.noise { Some(timed_pair(opts, cycles, false)?) } else { None };
        return Ok(vec![
            BenchRow::new("net-proxy-sender", 10, &off.sender, &on.sender, off2.as_ref().map(|p| &p.sender)),
            BenchRow::new("net-proxy-receiver", 10, &off.receiver, &on.receiver, off2.as_ref().map(|p| &p.receiver)),
        ]);
    }
    let build = || -> Result<AppConfig, CliError> {
        if name.ends_with(".toml") {
            Ok(config::load(Path::new(name), opts)?)
        } else if apps::CASE_STUDIES.contains(&name) {
            Ok(apps::build(name, opts)?.app)
        } else {
            Err(CliError::UnknownApp(name.to_owned()))
        }
    };
    let contracts = build()?.contract_count();
    let off = timed_single(&build, cycles, false)?;
    let on = timed_single(&build, cycles, true)?;
    let off2 = if settings.noise { Some(timed_single(&build, cycles, false)?) } else { None };
    Ok(vec![BenchRow::new(name, contracts, &off, &on, off2.as_ref())])
}

/// `settings.app` may be `all`.
pub fn bench(settings: &BenchSettings) -> Result<Vec<BenchRow>, CliError> {
    if settings.app != "all" {
        return bench_app(&settings.app, settings);
    }
    let mut rows = Vec::new();
    for name in apps::CASE_STUDIES.iter().copied().chain([net_proxy::NAME]) {
        rows.extend(bench_app(name, settings)?);
    }
    Ok(rows)
}

/// Plain-text table, one line per row.
pub fn format_table(rows: &[BenchRow]) -> String {
    let mut out = format!(
        "{:<20} {:>9} {:>12} {:>12} {:>12} {:>12} {:>10} {:>10}  violations\n",
        "application", "contracts", "off mean ms", "off med ms", "on mean ms", "on med ms", "overhead%", "median%"
    );
    for r in rows {
        let kinds: Vec<String> = r.violations.iter().map(|(k, n)| format!("{k}={n}")).collect();
        let flag = if r.budgeted && r.overhead_pct >= OVERHEAD_BUDGET_PCT { " OVER BUDGET" } else { "" };
        out.push_str(&format!(
            "{:<20} {:>9} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>10.2} {:>10.2}  {}{}\n",
            r.app,
            r.contracts,
            r.without.mean_ms,
            r.without.median_ms,
            r.with.mean_ms,
            r.with.median_ms,
            r.overhead_pct,
            r.median_overhead_pct,
            if kinds.is_empty() { "-".to_owned() } else { kinds.join(" ") },
            flag
        ));
    }
    out
}

/// Runs an application on simulated time and discards the log; handy for
/// quick checks of contract behavior.
pub fn simulate(settings: &RunSettings) -> Result<RunReport, CliError> {
    let app = prepare_app(settings)?;
    let mut exec = Executor::new(app, Box::new(VirtualClock::new()), ViolationLog::new(Box::new(NullSink), 1))?;
    exec.run_cycles(settings.cycles);
    Ok(exec.finish().0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tags_go_before_extension() {
        assert_eq!(tagged_path(Path::new("out/v.jsonl"), "sender"), PathBuf::from("out/v-sender.jsonl"));
        assert_eq!(tagged_path(Path::new("v"), "receiver"), PathBuf::from("v-receiver"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::UnknownApp("x".into()).exit_code(), 2);
        assert_eq!(CliError::InvalidConfig("x".into()).exit_code(), 2);
        assert_eq!(CliError::Setup("x".into()).exit_code(), 3);
    }

    #[test]
    fn unknown_app_is_reported() {
        let err = prepare_app(&RunSettings::new("no-such-app")).unwrap_err();
        assert!(matches!(err, CliError::UnknownApp(_)));
        assert!(err.to_string().contains("simple-counter"));
    }

    #[test]
    fn overrides_are_validated() {
        let mut s = RunSettings::new("simple-counter");
        s.window = Some(0);
        assert!(matches!(prepare_app(&s), Err(CliError::InvalidConfig(_))));
        s.window = Some(3);
        s.pi = Some(0.5);
        let app = prepare_app(&s).unwrap();
        assert_eq!((app.pi, app.window), (0.5, 3));
    }

    #[test]
    fn dump_requires_training() {
        let mut s = RunSettings::new("simple-counter");
        s.cycles = 20;
        s.training = Some(10);
        assert_eq!(dump_models(&[simulate(&s).unwrap()], 10).unwrap().len(), 1);
        s.cycles = 5;
        assert!(matches!(
            dump_models(&[simulate(&s).unwrap()], 10),
            Err(CliError::TrainingIncomplete { .. })
        ));
    }
}
