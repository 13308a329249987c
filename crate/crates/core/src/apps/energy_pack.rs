//! Current controller of an energy pack: a feed-forward (open loop) path and a
//! proportional feedback (closed loop) path acting on a first-order plant.
//!
//! ```text
//! FeedForward --command--> SumAdder --u--> System --y--+
//!      |                      ^                        | (delayed)
//!  setpoint            Feedback <-- ErrorAdder <-- Sensor
//!      +--------------------------------^
//! ```

use crate::contracts::ContractKind;
use crate::fault::FaultPlan;
use crate::kernel::{Block, Contracts, KernelError, PortSpec, StepContext, Value, ValueType};

use super::{BuildOptions, CaseStudy};

pub const ALPHA: f64 = 0.1;
pub const FEED_FORWARD_GAIN: f64 = 1.0;
pub const FEEDBACK_GAIN: f64 = 0.5;
pub const SETPOINT: f64 = 1.0;
/// Plant output the class invariant tolerates.
pub const Y_LIMIT: f64 = 10.0;
/// Plant state injected by the class-invariant fault.
pub const SPIKE: f64 = 100.0;

fn float(v: &Value) -> f64 {
    v.as_float().unwrap_or(f64::NAN)
}

pub struct FeedForward {
    pub setpoint: f64,
    pub gain: f64,
    work_ns: u64,
}

impl FeedForward {
    pub fn new(setpoint: f64, gain: f64, work_ns: u64) -> Self {
        FeedForward { setpoint, gain, work_ns }
    }
}

impl Block for FeedForward {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::output("command", ValueType::Float), PortSpec::output("setpoint", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        cx.write("command", Value::Float(self.gain * self.setpoint));
        cx.write("setpoint", Value::Float(self.setpoint));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["command", "setpoint"])
            .postcondition("command_is_gain_times_setpoint", |b, env| {
                float(env.value("command")) == b.gain * b.setpoint
            })
            .postcondition("setpoint_published", |b, env| float(env.value("setpoint")) == b.setpoint)
            .invariant("setpoint_in_range", |b, _| b.setpoint.abs() <= Y_LIMIT);
    }
}

/// Samples the plant output. `interval` counts the cycles it has run.
pub struct Sensor {
    pub interval: u64,
    pub measured: f64,
    work_ns: u64,
}

impl Sensor {
    pub fn new(work_ns: u64) -> Self {
        Sensor { interval: 0, measured: 0.0, work_ns }
    }
}

impl Block for Sensor {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("y", ValueType::Float), PortSpec::output("measured", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("interval", &self.interval);
        cx.spend(self.work_ns);
        self.measured = float(cx.read("y"));
        self.interval += 1;
        cx.write("measured", Value::Float(self.measured));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["y", "measured"])
            .postcondition("interval_incremented", |b, env| {
                env.old::<u64>("interval").is_ok_and(|old| b.interval == old + 1)
            })
            .postcondition("measured_matches_plant", |b, env| b.measured == float(env.value("y")))
            .invariant("measured_finite", |b, _| b.measured.is_finite());
    }
}

/// `error = reference - measured`.
pub struct ErrorAdder {
    pub error: f64,
    work_ns: u64,
}

impl ErrorAdder {
    pub fn new(work_ns: u64) -> Self {
        ErrorAdder { error: 0.0, work_ns }
    }
}

impl Block for ErrorAdder {
    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("reference", ValueType::Float),
            PortSpec::input("measured", ValueType::Float),
            PortSpec::output("error", ValueType::Float),
        ]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        self.error = float(cx.read("reference")) - float(cx.read("measured"));
        cx.write("error", Value::Float(self.error));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["reference", "measured", "error"])
            .postcondition("error_is_difference", |b, env| {
                b.error == float(env.value("reference")) - float(env.value("measured"))
            })
            .invariant("error_finite", |b, _| b.error.is_finite());
    }
}

pub struct Feedback {
    pub gain: f64,
    pub correction: f64,
    work_ns: u64,
}

impl Feedback {
    pub fn new(gain: f64, work_ns: u64) -> Self {
        Feedback { gain, correction: 0.0, work_ns }
    }
}

impl Block for Feedback {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("error", ValueType::Float), PortSpec::output("correction", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        self.correction = self.gain * float(cx.read("error"));
        cx.write("correction", Value::Float(self.correction));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["error", "correction"])
            .postcondition("correction_is_proportional", |b, env| {
                b.correction == b.gain * float(env.value("error"))
            })
            .invariant("gain_positive", |b, _| b.gain > 0.0);
    }
}

/// `sum = a + b`.
pub struct SumAdder {
    pub sum: f64,
    work_ns: u64,
}

impl SumAdder {
    pub fn new(work_ns: u64) -> Self {
        SumAdder { sum: 0.0, work_ns }
    }
}

impl Block for SumAdder {
    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("a", ValueType::Float),
            PortSpec::input("b", ValueType::Float),
            PortSpec::output("sum", ValueType::Float),
        ]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        self.sum = float(cx.read("a")) + float(cx.read("b"));
        cx.write("sum", Value::Float(self.sum));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["a", "b", "sum"])
            .postcondition("sum_is_total", |b, env| b.sum == float(env.value("a")) + float(env.value("b")))
            .invariant("sum_finite", |b, _| b.sum.is_finite());
    }
}

/// First-order lag `y <- y + alpha (u - y)`.
pub struct System {
    pub y: f64,
    pub alpha: f64,
    work_ns: u64,
    faults: FaultPlan,
}

impl System {
    pub fn new(alpha: f64, work_ns: u64) -> Self {
        System { y: 0.0, alpha, work_ns, faults: FaultPlan::none() }
    }
}

impl Block for System {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("u", ValueType::Float), PortSpec::output("y", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        if self.faults.fires(ContractKind::ClassInvariant, cx.cycle()) {
            self.y = SPIKE;
        }
        let _ = cx.capture_old("y", &self.y);
        cx.spend(self.work_ns);
        self.y += self.alpha * (float(cx.read("u")) - self.y);
        cx.write("y", Value::Float(self.y));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["u", "y"])
            .postcondition("first_order_update", |b, env| {
                env.old::<f64>("y")
                    .is_ok_and(|old| b.y == old + b.alpha * (float(env.value("u")) - old))
            })
            .invariant("output_bounded", |b, _| b.y.abs() <= Y_LIMIT);
    }
}

pub fn build(opts: BuildOptions) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("energy-pack", 10, 0.95, 5);
    let w = |us| opts.work_ns(us);
    let ff = app.add_block("FeedForward", FeedForward::new(SETPOINT, FEED_FORWARD_GAIN, w(250)))?;
    let fb = app.add_block("Feedback", Feedback::new(FEEDBACK_GAIN, w(300)))?;
    let sensor = app.add_block("Sensor", Sensor::new(w(350)))?;
    let err = app.add_block("ErrorAdder", ErrorAdder::new(w(250)))?;
    let sum = app.add_block("SumAdder", SumAdder::new(w(250)))?;
    let mut plant = System::new(ALPHA, w(350));
    plant.faults = opts.faults;
    let system = app.add_block("System", plant)?;

    let p = |app: &crate::kernel::AppConfig, b, n: &str| app.port(b, n);
    app.connect(p(&app, ff, "setpoint")?, p(&app, err, "reference")?)?;
    app.connect(p(&app, sensor, "measured")?, p(&app, err, "measured")?)?;
    app.connect(p(&app, err, "error")?, p(&app, fb, "error")?)?;
    app.connect(p(&app, ff, "command")?, p(&app, sum, "a")?)?;
    app.connect(p(&app, fb, "correction")?, p(&app, sum, "b")?)?;
    app.connect(p(&app, sum, "sum")?, p(&app, system, "u")?)?;
    app.connect_delayed(p(&app, system, "y")?, p(&app, sensor, "y")?)?;
    Ok(CaseStudy { name: "energy-pack", app, expected_contracts: 36 })
}
