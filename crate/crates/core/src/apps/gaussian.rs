//! Standard normal pairs via the Box-Muller transform:
//! Random Generator -> Gaussian Generator -> Range Calculator.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contracts::ContractKind;
use crate::kernel::{Block, Contracts, KernelError, PortSpec, StepContext, Value, ValueType};

use super::{BuildOptions, CaseStudy};

/// `(sqrt(-2 ln u1) cos(2 pi u2), sqrt(-2 ln u1) sin(2 pi u2))`.
pub fn box_muller(u1: f64, u2: f64) -> (f64, f64) {
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Equality up to a few ulps; libm may round `sin`/`cos` differently from the
/// fused `sincos` the optimizer substitutes at some call sites.
fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn float(v: &Value) -> f64 {
    v.as_float().unwrap_or(f64::NAN)
}

pub struct RandomGenerator {
    rng: ChaCha8Rng,
    pub u1: f64,
    pub u2: f64,
    pub draws: u64,
    work_ns: u64,
}

impl RandomGenerator {
    pub fn new(seed: u64, work_ns: u64) -> Self {
        RandomGenerator { rng: ChaCha8Rng::seed_from_u64(seed), u1: 0.5, u2: 0.5, draws: 0, work_ns }
    }
}

impl Block for RandomGenerator {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::output("u1", ValueType::Float), PortSpec::output("u2", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("draws", &self.draws);
        cx.spend(self.work_ns);
        // ln(0) is undefined, so u1 is redrawn until it is positive
        self.u1 = loop {
            let u: f64 = self.rng.random();
            if u > 0.0 {
                break u;
            }
        };
        self.u2 = self.rng.random();
        self.draws += 1;
        cx.write("u1", Value::Float(self.u1));
        cx.write("u2", Value::Float(self.u2));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["u1", "u2"])
            .postcondition("u1_in_open_unit", |_, env| {
                let u = float(env.value("u1"));
                u > 0.0 && u <= 1.0
            })
            .postcondition("u2_in_unit", |_, env| (0.0..=1.0).contains(&float(env.value("u2"))))
            .postcondition("draws_incremented", |b, env| env.old::<u64>("draws").is_ok_and(|o| b.draws == o + 1))
            .invariant("state_in_unit", |b, _| (0.0..=1.0).contains(&b.u1) && (0.0..=1.0).contains(&b.u2));
    }
}

pub struct GaussianGenerator {
    pub z1: f64,
    pub z2: f64,
    work_ns: u64,
}

impl GaussianGenerator {
    pub fn new(work_ns: u64) -> Self {
        GaussianGenerator { z1: 0.0, z2: 0.0, work_ns }
    }
}

impl Block for GaussianGenerator {
    fn ports(&self) -> Vec<PortSpec> {
        vec![
            PortSpec::input("u1", ValueType::Float),
            PortSpec::input("u2", ValueType::Float),
            PortSpec::output("z1", ValueType::Float),
            PortSpec::output("z2", ValueType::Float),
        ]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        let (u1, u2) = (float(cx.read("u1")), float(cx.read("u2")));
        (self.z1, self.z2) = box_muller(u1, u2);
        cx.write("z1", Value::Float(self.z1));
        cx.write("z2", Value::Float(self.z2));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["u1", "u2", "z1", "z2"])
            .precondition("u1_positive", |_, env| float(env.value("u1")) > 0.0)
            .postcondition("z1_box_muller", |b, env| {
                close(b.z1, box_muller(float(env.value("u1")), float(env.value("u2"))).0)
            })
            .postcondition("z2_box_muller", |b, env| {
                close(b.z2, box_muller(float(env.value("u1")), float(env.value("u2"))).1)
            })
            .postcondition("radius_matches_u1", |b, env| {
                let r2 = -2.0 * float(env.value("u1")).ln();
                (b.z1 * b.z1 + b.z2 * b.z2 - r2).abs() <= 1e-9 * (1.0 + r2)
            })
            .invariant("outputs_finite", |b, _| b.z1.is_finite() && b.z2.is_finite());
    }
}

pub struct RangeCalculator {
    pub range: f64,
    pub max_range: f64,
    pub samples: u64,
    work_ns: u64,
}

impl RangeCalculator {
    pub fn new(work_ns: u64) -> Self {
        RangeCalculator { range: 0.0, max_range: 0.0, samples: 0, work_ns }
    }
}

impl Block for RangeCalculator {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("z1", ValueType::Float), PortSpec::input("z2", ValueType::Float)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("samples", &self.samples);
        cx.spend(self.work_ns);
        self.range = (float(cx.read("z1")) - float(cx.read("z2"))).abs();
        self.max_range = self.max_range.max(self.range);
        self.samples += 1;
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["z1", "z2"])
            .postcondition("range_nonnegative", |b, _| b.range >= 0.0)
            .postcondition("range_is_distance", |b, env| {
                b.range == (float(env.value("z1")) - float(env.value("z2"))).abs()
            })
            .postcondition("samples_incremented", |b, env| env.old::<u64>("samples").is_ok_and(|o| b.samples == o + 1))
            .invariant("range_nonnegative", |b, _| b.range >= 0.0)
            .invariant("max_covers_range", |b, _| b.max_range >= b.range);
    }
}

pub fn build(opts: BuildOptions) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("gaussian", 10, 0.97, 10);
    let gen = app.add_block("RandomGenerator", RandomGenerator::new(opts.seed, opts.work_ns(400)))?;
    let gauss = app.add_block("GaussianGenerator", GaussianGenerator::new(opts.work_ns(600)))?;
    let range = app.add_block("RangeCalculator", RangeCalculator::new(opts.work_ns(400)))?;
    app.connect(app.port(gen, "u1")?, app.port(gauss, "u1")?)?;
    app.connect(app.port(gen, "u2")?, app.port(gauss, "u2")?)?;
    app.connect(app.port(gauss, "z1")?, app.port(range, "z1")?)?;
    // the precondition fault is a miswired application: one channel is missing
    if !opts.faults.armed(ContractKind::Precondition) {
        app.connect(app.port(gauss, "z2")?, app.port(range, "z2")?)?;
    }
    Ok(CaseStudy { name: "gaussian", app, expected_contracts: 27 })
}
