use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use stochastic_contracts::apps::net_proxy;
use stochastic_contracts::kernel::LogFormat;
use stochastic_contracts::{ContractKind, FaultPlan};
use stocon::{BenchSettings, CliError, RunSettings};

#[derive(Parser)]
#[command(name = "stocon", version, about = "Run block-diagram applications under stochastic contracts")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an application and write its violation log.
    Run(RunCmd),
    /// Measure busy time with contracts off and on.
    Bench(BenchCmd),
    /// List the built-in applications.
    List,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockKind {
    Host,
    Virtual,
}

#[derive(Args)]
struct RunCmd {
    /// Built-in application name or path to a .toml application.
    app: String,
    #[arg(long, default_value_t = 10_000)]
    cycles: u64,
    #[arg(long, value_enum, default_value = "on")]
    contracts: Toggle,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Coverage probability of every execution-time bound.
    #[arg(long)]
    pi: Option<f64>,
    /// Cycles between estimate updates after training.
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    cycle_time_ms: Option<f64>,
    #[arg(long)]
    jitter_ms: Option<f64>,
    /// Training sample size.
    #[arg(long)]
    training: Option<usize>,
    #[arg(long, value_enum, default_value = "json")]
    log: Format,
    /// Violation log path; STOCON_LOG takes precedence.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the trained execution-time models as JSON.
    #[arg(long)]
    dump_models: Option<PathBuf>,
    /// Write per-block durations and cycle periods as CSV.
    #[arg(long)]
    report_csv: Option<PathBuf>,
    /// 1 ms cycles and a tenth of the nominal work.
    #[arg(long)]
    fast: bool,
    #[arg(long, value_enum, default_value = "host")]
    clock: ClockKind,
    /// Inject a fault of this contract kind; repeatable.
    #[arg(long = "fault")]
    faults: Vec<ContractKind>,
    #[arg(long, default_value_t = 100)]
    fault_every: u64,
    #[arg(long, default_value_t = 0)]
    fault_start: u64,
    /// Local address of a net-proxy endpoint.
    #[arg(long)]
    bind: Option<SocketAddr>,
    /// Remote address of a net-proxy endpoint.
    #[arg(long)]
    peer: Option<SocketAddr>,
    /// Host-clock time of the first cycle boundary, in ns.
    #[arg(long)]
    start_ns: Option<u64>,
    /// Run both net-proxy endpoints as threads of this process.
    #[arg(long)]
    threads: bool,
}

#[derive(Args)]
struct BenchCmd {
    /// Application name or `all`.
    #[arg(default_value = "all")]
    app: String,
    #[arg(long, default_value_t = 10_000)]
    cycles: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    fast: bool,
    /// Repeat the contracts-off run to report run-to-run noise.
    #[arg(long)]
    noise: bool,
    /// Print JSON instead of a table.
    #[arg(long)]
    json: bool,
}

impl RunCmd {
    fn settings(&self) -> RunSettings {
        let mut faults = FaultPlan::none().every(self.fault_every).starting_at(self.fault_start);
        for &k in &self.faults {
            faults = faults.with(k);
        }
        RunSettings {
            app: self.app.clone(),
            cycles: self.cycles,
            contracts: matches!(self.contracts, Toggle::On),
            seed: self.seed,
            pi: self.pi,
            window: self.window,
            cycle_time_ms: self.cycle_time_ms,
            jitter_ms: self.jitter_ms,
            training: self.training,
            log_format: match self.log {
                Format::Json => LogFormat::Json,
                Format::Text => LogFormat::Text,
            },
            log_path: self.out.clone(),
            report_csv: self.report_csv.clone(),
            dump_models: self.dump_models.clone(),
            fast: self.fast,
            faults,
            virtual_clock: matches!(self.clock, ClockKind::Virtual),
            bind: self.bind,
            peer: self.peer,
            start_ns: self.start_ns,
        }
    }

    /// Flags forwarded to the endpoint processes.
    fn child_args(&self, settings: &RunSettings, endpoint: &str) -> Vec<String> {
        let mut args = vec![
            "run".to_owned(),
            endpoint.to_owned(),
            format!("--cycles={}", self.cycles),
            format!("--contracts={}", if settings.contracts { "on" } else { "off" }),
            format!("--seed={}", self.seed),
            format!("--log={}", if matches!(self.log, Format::Json) { "json" } else { "text" }),
            format!("--fault-every={}", self.fault_every),
            format!("--fault-start={}", self.fault_start),
        ];
        let tag = endpoint.trim_start_matches("net-proxy-");
        args.push(format!("--out={}", stocon::tagged_path(&settings.resolved_log_path(), tag).display()));
        for (flag, v) in [("pi", self.pi.map(|v| v.to_string())), ("window", self.window.map(|v| v.to_string()))] {
            if let Some(v) = v {
                args.push(format!("--{flag}={v}"));
            }
        }
        if let Some(p) = &self.report_csv {
            args.push(format!("--report-csv={}", stocon::tagged_path(p, tag).display()));
        }
        if let Some(p) = &self.dump_models {
            args.push(format!("--dump-models={}", stocon::tagged_path(p, tag).display()));
        }
        if self.fast {
            args.push("--fast".into());
        }
        for k in &self.faults {
            args.push(format!("--fault={k}"));
        }
        args
    }
}

fn free_loopback_addr() -> Result<SocketAddr, CliError> {
    UdpSocket::bind(("127.0.0.1", 0))
        .and_then(|s| s.local_addr())
        .map_err(|e| CliError::Setup(format!("cannot reserve a UDP port: {e}")))
}

/// Starts receiver and sender as two processes sharing a first cycle
/// boundary.
fn run_net_proxy_processes(cmd: &RunCmd, settings: &RunSettings) -> Result<(), CliError> {
    let exe = std::env::current_exe().map_err(|e| CliError::Setup(e.to_string()))?;
    let (tx_addr, rx_addr) = (free_loopback_addr()?, free_loopback_addr()?);
    let cycle_ns = stochastic_contracts::apps::BuildOptions { fast: cmd.fast, ..Default::default() }.cycle_time_ns(100);
    let start = net_proxy::shared_start(cycle_ns, Duration::from_millis(500));
    let spawn = |endpoint: &str, bind: SocketAddr, peer: SocketAddr| {
        let mut args = cmd.child_args(settings, endpoint);
        args.extend([format!("--bind={bind}"), format!("--peer={peer}"), format!("--start-ns={start}")]);
        Command::new(&exe)
            .args(&args)
            .env_remove(stocon::ENV_LOG)
            .spawn()
            .map_err(|e| CliError::Setup(format!("cannot start {endpoint}: {e}")))
    };
    let mut receiver = spawn("net-proxy-receiver", rx_addr, tx_addr)?;
    let mut sender = spawn("net-proxy-sender", tx_addr, rx_addr)?;
    let mut failed = Vec::new();
    for (name, child) in [("sender", &mut sender), ("receiver", &mut receiver)] {
        match child.wait() {
            Ok(status) if status.success() => {}
            Ok(status) => failed.push(format!("{name} exited with {status}")),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Setup(failed.join("; ")))
    }
}

fn run(cmd: &RunCmd) -> Result<(), CliError> {
    let settings = cmd.settings();
    let multi_process = cmd.app == net_proxy::NAME && !cmd.threads && !settings.virtual_clock;
    if multi_process {
        return run_net_proxy_processes(cmd, &settings);
    }
    let outcome = stocon::run(&settings)?;
    for (report, path) in outcome.reports.iter().zip(&outcome.log_paths) {
        let kinds: Vec<String> = report.count_by_kind().iter().map(|(k, n)| format!("{k}={n}")).collect();
        println!(
            "{}: {} cycles, {} violations{}{} -> {}",
            report.app,
            report.cycles(),
            report.violations.len(),
            if kinds.is_empty() { "" } else { ": " },
            kinds.join(" "),
            path.display()
        );
        if report.sink_errors > 0 {
            eprintln!("warning: {} log write failures", report.sink_errors);
        }
    }
    Ok(())
}

fn bench(cmd: &BenchCmd) -> Result<(), CliError> {
    let settings =
        BenchSettings { app: cmd.app.clone(), cycles: cmd.cycles, seed: cmd.seed, fast: cmd.fast, noise: cmd.noise };
    let rows = stocon::bench(&settings)?;
    if cmd.json {
        println!("{}", serde_json::to_string_pretty(&rows).map_err(|e| CliError::Setup(e.to_string()))?);
    } else {
        print!("{}", stocon::format_table(&rows));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Run(cmd) => run(cmd),
        Cmd::Bench(cmd) => bench(cmd),
        Cmd::List => {
            for name in stocon::known_apps() {
                println!("{name}");
            }
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
