//! Two applications talking over a loopback datagram socket:
//! Sender -> NetProxySend ~~udp~~> NetProxyReceive -> Receiver.
//!
//! Wire format, 16 bytes little-endian: bytes 0..8 the payload as `i64`,
//! bytes 8..16 the sender's step-start time in ns as `u64`. Both ends read
//! the same host monotonic clock, so the receiver can compare the stamp with
//! its own readings.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::time::Duration;

use crate::contracts::ContractKind;
use crate::fault::FaultPlan;
use crate::kernel::{
    AppConfig,
    AnchorSource, Anchor, Block, Clock, Contracts, Executor, KernelError, MonotonicClock, PortSpec, RunOptions,
    RunReport, StepContext, Timestamp, Value, ValueType, ViolationLog, VirtualClock,
};
use crate::rtmon::CompletionContract;

use super::{BuildOptions, CaseStudy};

pub const NAME: &str = "net-proxy";
pub const DATAGRAM_LEN: usize = 16;
/// Sender step start to Receiver step end.
pub const COMPLETION_DEADLINE_NS: u64 = 200_000;
/// How far the receiver's cycle boundaries trail the sender's in lockstep runs.
pub const LOCKSTEP_OFFSET_NS: u64 = 60_000;

pub fn encode(value: i64, stamp_ns: u64) -> [u8; DATAGRAM_LEN] {
    let mut buf = [0u8; DATAGRAM_LEN];
    buf[..8].copy_from_slice(&value.to_le_bytes());
    buf[8..].copy_from_slice(&stamp_ns.to_le_bytes());
    buf
}

pub fn decode(buf: &[u8]) -> Option<(i64, u64)> {
    if buf.len() != DATAGRAM_LEN {
        return None;
    }
    let value = i64::from_le_bytes(buf[..8].try_into().ok()?);
    let stamp = u64::from_le_bytes(buf[8..].try_into().ok()?);
    Some((value, stamp))
}

fn socket_error(e: io::Error) -> KernelError {
    KernelError::SocketUnavailable(e.to_string())
}

/// Two loopback sockets connected to each other: `(sender, receiver)`.
pub fn loopback_pair() -> Result<(UdpSocket, UdpSocket), KernelError> {
    let tx = UdpSocket::bind("127.0.0.1:0").map_err(socket_error)?;
    let rx = UdpSocket::bind("127.0.0.1:0").map_err(socket_error)?;
    tx.connect(rx.local_addr().map_err(socket_error)?).map_err(socket_error)?;
    rx.connect(tx.local_addr().map_err(socket_error)?).map_err(socket_error)?;
    Ok((tx, rx))
}

/// Produces an increasing integer stamped with its own step start.
pub struct Sender {
    pub value: i64,
    work_ns: u64,
}

impl Sender {
    pub fn new(work_ns: u64) -> Self {
        Sender { value: 0, work_ns }
    }
}

impl Block for Sender {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::output("out", ValueType::Stamped)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("value", &self.value);
        let stamp = Timestamp { ns: cx.step_start_ns(), domain: cx.clock_domain() };
        cx.spend(self.work_ns);
        self.value += 1;
        cx.write("out", Value::Stamped { value: self.value, stamp });
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["out"])
            .postcondition("value_incremented", |b, env| env.old::<i64>("value").is_ok_and(|o| b.value == o + 1))
            .invariant("value_nonnegative", |b, _| b.value >= 0);
    }
}

pub struct NetProxySend {
    socket: UdpSocket,
    /// Bytes handed to the socket this cycle; `None` if nothing was sent.
    pub last_sent: Option<usize>,
    deferred: Option<[u8; DATAGRAM_LEN]>,
    work_ns: u64,
    faults: FaultPlan,
}

impl NetProxySend {
    /// `socket` must be connected to the receiving side.
    pub fn new(socket: UdpSocket, work_ns: u64) -> Self {
        NetProxySend { socket, last_sent: None, deferred: None, work_ns, faults: FaultPlan::none() }
    }
}

impl Block for NetProxySend {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("in", ValueType::Stamped)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        let input = cx.read("in");
        let (value, stamp) = (input.as_int().unwrap_or(0), input.stamp().map_or(0, |s| s.ns));
        let datagram = encode(value, stamp);
        self.last_sent = None;
        // the completion fault holds a datagram back and sends it, stale,
        // in place of the next one
        if self.faults.fires(ContractKind::Completion, cx.cycle()) {
            self.deferred = Some(datagram);
            return;
        }
        let datagram = self.deferred.take().unwrap_or(datagram);
        self.last_sent = Some(self.socket.send(&datagram).unwrap_or(0));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["in"])
            .postcondition("sent_full_datagram", |b, _| b.last_sent.is_none_or(|n| n == DATAGRAM_LEN))
            .invariant("socket_bound", |b, _| b.socket.local_addr().is_ok());
    }
}

/// Reads at most one datagram per cycle, oldest first.
pub struct NetProxyReceive {
    socket: UdpSocket,
    /// Size of the datagram read this cycle; `None` if none arrived.
    pub last_len: Option<usize>,
    pub received: u64,
    work_ns: u64,
}

impl NetProxyReceive {
    /// `timeout` bounds how long one step waits for a datagram.
    pub fn new(socket: UdpSocket, timeout: Duration, work_ns: u64) -> Result<Self, KernelError> {
        socket.set_read_timeout(Some(timeout.max(Duration::from_micros(1)))).map_err(socket_error)?;
        Ok(NetProxyReceive { socket, last_len: None, received: 0, work_ns })
    }
}

impl Block for NetProxyReceive {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::output("out", ValueType::Stamped)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        let mut buf = [0u8; 64];
        self.last_len = self.socket.recv(&mut buf).ok();
        if let Some((value, ns)) = self.last_len.and_then(|n| decode(&buf[..n])) {
            self.received += 1;
            let stamp = Timestamp { ns, domain: cx.clock_domain() };
            cx.write("out", Value::Stamped { value, stamp });
        }
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["out"])
            .postcondition("decoded_full_datagram", |b, _| b.last_len.is_none_or(|n| n == DATAGRAM_LEN))
            .invariant("socket_bound", |b, _| b.socket.local_addr().is_ok());
    }
}

pub struct Receiver {
    pub last_value: i64,
    pub updates: u64,
    work_ns: u64,
}

impl Receiver {
    pub fn new(work_ns: u64) -> Self {
        Receiver { last_value: 0, updates: 0, work_ns }
    }
}

impl Block for Receiver {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("in", ValueType::Stamped)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("last_value", &self.last_value);
        cx.spend(self.work_ns);
        if cx.is_fresh("in") {
            self.last_value = cx.read("in").as_int().unwrap_or(self.last_value);
            self.updates += 1;
        }
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["in"]).postcondition("value_monotone", |b, env| {
            env.old::<i64>("last_value").is_ok_and(|o| b.last_value >= o)
        });
    }
}

/// Sender application around a socket connected to the receiver.
pub fn build_sender(opts: BuildOptions, socket: UdpSocket) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("net-proxy-sender", 100, 0.99, 10);
    let sender = app.add_block("Sender", Sender::new(opts.work_ns(40)))?;
    let mut proxy = NetProxySend::new(socket, opts.work_ns(10));
    proxy.faults = opts.faults;
    let proxy = app.add_block("NetProxySend", proxy)?;
    app.connect(app.port(sender, "out")?, app.port(proxy, "in")?)?;
    Ok(CaseStudy { name: "net-proxy-sender", app, expected_contracts: 10 })
}

/// Receiver application; one step waits at most half a cycle for data.
pub fn build_receiver(opts: BuildOptions, socket: UdpSocket) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("net-proxy-receiver", 100, 0.99, 10);
    let timeout = Duration::from_nanos(app.cycle_time_ns / 2);
    let proxy = app.add_block("NetProxyReceive", NetProxyReceive::new(socket, timeout, opts.work_ns(10))?)?;
    let receiver = app.add_block("Receiver", Receiver::new(opts.work_ns(40)))?;
    let input = app.port(receiver, "in")?;
    app.connect(app.port(proxy, "out")?, input)?;
    app.add_completion(
        CompletionContract::new("Sender", "Receiver", COMPLETION_DEADLINE_NS),
        AnchorSource::StampPort(input),
    )?;
    Ok(CaseStudy { name: "net-proxy-receiver", app, expected_contracts: 10 })
}

/// Sender and receiver applications over a fresh loopback socket pair.
pub fn build_pair(opts: BuildOptions) -> Result<(CaseStudy, CaseStudy), KernelError> {
    let (tx, rx) = loopback_pair()?;
    Ok((build_sender(opts, tx)?, build_receiver(opts, rx)?))
}

/// Sender socket bound to `bind` and connected to `peer`.
pub fn sender_socket(bind: SocketAddr, peer: SocketAddr) -> Result<UdpSocket, KernelError> {
    let s = UdpSocket::bind(bind).map_err(socket_error)?;
    s.connect(peer).map_err(socket_error)?;
    Ok(s)
}

pub fn receiver_socket(bind: SocketAddr) -> Result<UdpSocket, KernelError> {
    UdpSocket::bind(bind).map_err(socket_error)
}

#[derive(Debug)]
pub struct PairReport {
    pub sender: RunReport,
    pub receiver: RunReport,
}

/// Runs both applications alternately on one thread with two virtual clocks
/// in one domain; the receiver's boundaries trail the sender's by
/// [`LOCKSTEP_OFFSET_NS`]. Deterministic apart from socket delivery.
pub fn run_lockstep(
    opts: BuildOptions,
    cycles: u64,
    sender_log: ViolationLog,
    receiver_log: ViolationLog,
) -> Result<PairReport, KernelError> {
    let (tx, rx) = build_pair(opts)?;
    let sender_clock = VirtualClock::new();
    let receiver_clock = sender_clock.synchronized_peer(LOCKSTEP_OFFSET_NS);
    let mut sender = Executor::new(tx.app, Box::new(sender_clock), sender_log)?;
    let mut receiver = Executor::new(rx.app, Box::new(receiver_clock), receiver_log)?;
    for _ in 0..cycles {
        sender.step_cycle();
        receiver.step_cycle();
    }
    Ok(PairReport { sender: sender.finish().0, receiver: receiver.finish().0 })
}

/// Cycle-0 start shared by two executors on the host clock: the first cycle
/// boundary at least `lead` from now.
pub fn shared_start(cycle_time_ns: u64, lead: Duration) -> u64 {
    let earliest = MonotonicClock::new().now() + lead.as_nanos() as u64;
    earliest.div_ceil(cycle_time_ns) * cycle_time_ns
}

/// Runs both applications concurrently on the host clock, one thread each,
/// with aligned cycle boundaries.
pub fn run_threaded(
    opts: BuildOptions,
    cycles: u64,
    sender_log: ViolationLog,
    receiver_log: ViolationLog,
) -> Result<PairReport, KernelError> {
    let (tx, rx) = build_pair(opts)?;
    run_apps_threaded(tx.app, rx.app, cycles, sender_log, receiver_log)
}

/// [`run_threaded`] for applications already built, for instance with
/// contracts switched off.
pub fn run_apps_threaded(
    sender_app: AppConfig,
    receiver_app: AppConfig,
    cycles: u64,
    sender_log: ViolationLog,
    receiver_log: ViolationLog,
) -> Result<PairReport, KernelError> {
    let start = shared_start(sender_app.cycle_time_ns, Duration::from_millis(20));
    let options = RunOptions { anchor: Anchor::At(start), trace: false };
    let sender = Executor::with_options(sender_app, Box::new(MonotonicClock::new()), sender_log, options)?;
    let mut receiver = Executor::with_options(receiver_app, Box::new(MonotonicClock::new()), receiver_log, options)?;
    let handle = std::thread::spawn(move || {
        let mut sender = sender;
        sender.run_cycles(cycles);
        sender.finish().0
    });
    receiver.run_cycles(cycles);
    let receiver = receiver.finish().0;
    let sender = handle.join().expect("sender thread panicked");
    Ok(PairReport { sender, receiver })
}
