use stochastic_contracts::apps::binary_search::ArrayCreator;
use stochastic_contracts::apps::energy_pack::ErrorAdder;
use stochastic_contracts::apps::gaussian::{GaussianGenerator, RandomGenerator};
use stochastic_contracts::apps::simple_counter::Counter;
use stochastic_contracts::apps::{self, net_proxy, BuildOptions, CASE_STUDIES};
use stochastic_contracts::kernel::log::NullSink;
use stochastic_contracts::kernel::{schedule_order, AppConfig, Executor, RunOptions, ViolationLog, VirtualClock};

fn executor(app: AppConfig, trace: bool) -> Executor {
    let log = ViolationLog::new(Box::new(NullSink), 1);
    let options = RunOptions { trace, ..RunOptions::default() };
    Executor::with_options(app, Box::new(VirtualClock::new()), log, options).unwrap()
}

fn app(name: &str) -> AppConfig {
    apps::build(name, BuildOptions::default()).unwrap().app
}

#[test]
fn contract_counts() {
    let counts: Vec<usize> = CASE_STUDIES.iter().map(|n| app(n).contract_count()).collect();
    assert_eq!(counts, [9, 27, 36, 43]);
    for name in CASE_STUDIES {
        let case = apps::build(name, BuildOptions::default()).unwrap();
        assert_eq!(case.app.contract_count(), case.expected_contracts);
    }
    let (tx, rx) = net_proxy::build_pair(BuildOptions::default()).unwrap();
    assert_eq!((tx.app.contract_count(), rx.app.contract_count()), (10, 10));
}

#[test]
fn ten_thousand_nominal_cycles_are_clean() {
    for name in CASE_STUDIES {
        let mut ex = executor(app(name), false);
        ex.run_cycles(10_000);
        let (report, _) = ex.finish();
        assert_eq!(report.cycles(), 10_000);
        assert!(report.violations.is_empty(), "{name}: {:?}", report.count_by_kind());
        assert_eq!(report.models.len(), report.blocks.len());
    }
}

#[test]
fn counter_reaches_ten_every_cycle() {
    let a = app("simple-counter");
    let id = a.block_id("Counter").unwrap();
    let mut ex = executor(a, false);
    for c in 0..50u64 {
        ex.step_cycle();
        let counter = ex.app().block::<Counter>(id).unwrap();
        assert_eq!(counter.counter, 10);
        assert_eq!(counter.cycles_done, c + 1);
    }
}

#[test]
fn array_length_cycles_modulo_ten() {
    let a = app("binary-search");
    let id = a.block_id("ArrayCreator").unwrap();
    let mut ex = executor(a, false);
    for c in 0..45usize {
        ex.step_cycle();
        let creator = ex.app().block::<ArrayCreator>(id).unwrap();
        assert_eq!(creator.array.len(), (c + 1) % 10, "cycle {c}");
        assert_eq!(creator.sent_len, c % 10 + 1);
    }
}

#[test]
fn energy_pack_error_decays_geometrically() {
    // y_k = y_{k-1} + a (g_ff r + g_fb (r - y_{k-1}) - y_{k-1}) with r = 1,
    // a = 0.1, g_ff = 1, g_fb = 0.5 gives 1 - y_k = 0.85 (1 - y_{k-1}); the
    // error read in cycle k is 1 - y_{k-1}.
    let a = app("energy-pack");
    let id = a.block_id("ErrorAdder").unwrap();
    let mut ex = executor(a, false);
    let mut expected = 1.0f64;
    for k in 0..60 {
        ex.step_cycle();
        let e = ex.app().block::<ErrorAdder>(id).unwrap().error;
        assert!((e - expected).abs() <= 1e-12, "cycle {k}: {e} vs {expected}");
        expected *= 0.85;
    }
}

#[test]
fn gaussian_outputs_follow_the_transform() {
    let a = app("gaussian");
    let (r, g) = (a.block_id("RandomGenerator").unwrap(), a.block_id("GaussianGenerator").unwrap());
    let mut ex = executor(a, false);
    for _ in 0..200 {
        ex.step_cycle();
        let u = ex.app().block::<RandomGenerator>(r).unwrap();
        let z = ex.app().block::<GaussianGenerator>(g).unwrap();
        let radius = (-2.0 * u.u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u.u2;
        assert!((z.z1 - radius * angle.cos()).abs() < 1e-12);
        assert!((z.z2 - radius * angle.sin()).abs() < 1e-12);
    }
}

#[test]
fn seeded_runs_replay() {
    let trace = |seed| {
        let mut ex = executor(apps::build("binary-search", BuildOptions::default().with_seed(seed)).unwrap().app, true);
        ex.run_cycles(300);
        ex.finish().0.trace
    };
    let first = trace(7);
    assert!(!first.is_empty());
    assert_eq!(first, trace(7));
    assert_ne!(first, trace(8));
}

#[test]
fn energy_pack_schedule_is_least_topological_order() {
    let a = app("energy-pack");
    let n = a.block_count();
    let edges: Vec<(usize, usize)> =
        a.channels().iter().filter(|c| !c.delayed).map(|c| (c.source.block.0, c.sink.block.0)).collect();

    let mut best: Option<Vec<usize>> = None;
    let mut perm: Vec<usize> = (0..n).collect();
    let mut seen = 0;
    // Heap's algorithm over all 720 orders.
    let mut c = vec![0usize; n];
    let mut consider = |p: &[usize]| {
        seen += 1;
        let pos = |b: usize| p.iter().position(|&x| x == b).unwrap();
        if edges.iter().all(|&(s, t)| pos(s) < pos(t)) && best.as_deref().is_none_or(|b| p < b) {
            best = Some(p.to_vec());
        }
    };
    consider(&perm);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 { perm.swap(0, i) } else { perm.swap(c[i], i) }
            consider(&perm);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    assert_eq!(seen, 720);
    let order: Vec<usize> = schedule_order(&a).unwrap().iter().map(|b| b.0).collect();
    assert_eq!(Some(order.clone()), best);
    let names: Vec<&str> = order.iter().map(|&i| a.block_names()[i]).collect();
    assert_eq!(names, ["FeedForward", "Sensor", "ErrorAdder", "Feedback", "SumAdder", "System"]);
}
