//! Random Integer Generator -> Array Creator -> Sorter -> Binary Search, with
//! the generated integer also fed straight to the search as its key.
//!
//! The creator appends one integer per cycle and sends the array on; once it
//! holds [`MAX_LEN`] elements it is cleared, so after cycle `c` (0-based) it
//! holds `(c + 1) % MAX_LEN` elements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::contracts::LoopMonitor;
use crate::kernel::{Block, Contracts, KernelError, PortSpec, StepContext, Value, ValueType};

use super::{BuildOptions, CaseStudy};

pub const MAX_LEN: usize = 10;
/// Generated integers lie in `0..VALUE_RANGE`.
pub const VALUE_RANGE: i64 = 100;

fn int(v: &Value) -> i64 {
    v.as_int().unwrap_or(-1)
}

fn array(v: &Value) -> &[i64] {
    v.as_array().unwrap_or(&[])
}

fn is_sorted(a: &[i64]) -> bool {
    a.windows(2).all(|w| w[0] <= w[1])
}

fn in_range(v: i64) -> bool {
    (0..VALUE_RANGE).contains(&v)
}

/// Index of `key` in ascending `sorted`, or -1.
pub fn binary_search(sorted: &[i64], key: i64) -> i64 {
    binary_search_with(sorted, key, |_, _, _| {})
}

/// Binary search over `[lo, hi)` calling `on_iter(lo, hi, len)` before every
/// probe.
fn binary_search_with(sorted: &[i64], key: i64, mut on_iter: impl FnMut(usize, usize, usize)) -> i64 {
    let (mut lo, mut hi) = (0usize, sorted.len());
    while lo < hi {
        on_iter(lo, hi, sorted.len());
        let mid = lo + (hi - lo) / 2;
        match sorted[mid].cmp(&key) {
            std::cmp::Ordering::Less => lo = mid + 1,
            std::cmp::Ordering::Greater => hi = mid,
            std::cmp::Ordering::Equal => return mid as i64,
        }
    }
    -1
}

pub struct RandomInt {
    rng: ChaCha8Rng,
    pub value: i64,
    pub draws: u64,
    work_ns: u64,
}

impl RandomInt {
    pub fn new(seed: u64, work_ns: u64) -> Self {
        RandomInt { rng: ChaCha8Rng::seed_from_u64(seed), value: 0, draws: 0, work_ns }
    }
}

impl Block for RandomInt {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::output("value", ValueType::Int)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("draws", &self.draws);
        cx.spend(self.work_ns);
        self.value = self.rng.random_range(0..VALUE_RANGE);
        self.draws += 1;
        cx.write("value", Value::Int(self.value));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["value"])
            .postcondition("value_in_range", |_, env| in_range(int(env.value("value"))))
            .postcondition("value_published", |b, env| {
                env.port("value").is_fresh(env.cycle()) && int(env.value("value")) == b.value
            })
            .postcondition("draws_incremented", |b, env| env.old::<u64>("draws").is_ok_and(|o| b.draws == o + 1))
            .invariant("state_in_range", |b, _| in_range(b.value));
    }
}

pub struct ArrayCreator {
    pub array: Vec<i64>,
    pub sent_len: usize,
    work_ns: u64,
}

impl ArrayCreator {
    pub fn new(work_ns: u64) -> Self {
        ArrayCreator { array: Vec::with_capacity(MAX_LEN), sent_len: 0, work_ns }
    }
}

impl Block for ArrayCreator {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("value", ValueType::Int), PortSpec::output("array", ValueType::IntArray)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("len", &self.array.len());
        cx.spend(self.work_ns);
        self.array.push(int(cx.read("value")));
        let len = self.array.len();
        let mut out = Vec::with_capacity(len);
        let mut copy = LoopMonitor::new("copy");
        for (i, &v) in self.array.iter().enumerate() {
            cx.loop_check(&mut copy, out.len() == i && i < len, (len - i) as i64);
            out.push(v);
        }
        self.sent_len = out.len();
        cx.write("array", Value::IntArray(out));
        if len >= MAX_LEN {
            self.array.clear();
        }
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["value", "array"])
            .precondition("input_in_range", |_, env| in_range(int(env.value("value"))))
            .monitored_loop("copy")
            .postcondition("sent_one_more", |b, env| env.old::<usize>("len").is_ok_and(|old| b.sent_len == old + 1))
            .postcondition("last_is_input", |_, env| {
                array(env.value("array")).last() == Some(&int(env.value("value")))
            })
            .postcondition("cleared_when_full", |b, _| {
                if b.sent_len == MAX_LEN { b.array.is_empty() } else { b.array.len() == b.sent_len }
            })
            .invariant("below_capacity", |b, _| b.array.len() < MAX_LEN)
            .invariant("elements_in_range", |b, _| b.array.iter().all(|&v| in_range(v)));
    }
}

/// Insertion sort.
pub struct Sorter {
    pub sorted: Vec<i64>,
    work_ns: u64,
}

impl Sorter {
    pub fn new(work_ns: u64) -> Self {
        Sorter { sorted: Vec::with_capacity(MAX_LEN), work_ns }
    }
}

impl Block for Sorter {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("array", ValueType::IntArray), PortSpec::output("sorted", ValueType::IntArray)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        cx.spend(self.work_ns);
        let mut a = array(cx.read("array")).to_vec();
        let n = a.len();
        let mut outer = LoopMonitor::new("insert");
        for i in 1..n {
            cx.loop_check(&mut outer, is_sorted(&a[..i]), (n - i) as i64);
            let mut inner = LoopMonitor::new("shift");
            let mut j = i;
            while j > 0 && a[j - 1] > a[j] {
                cx.loop_check(&mut inner, j <= i, j as i64);
                a.swap(j - 1, j);
                j -= 1;
            }
        }
        self.sorted.clone_from(&a);
        cx.write("sorted", Value::IntArray(a));
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["array", "sorted"])
            .precondition("input_fits", |_, env| array(env.value("array")).len() <= MAX_LEN)
            .monitored_loop("insert")
            .monitored_loop("shift")
            .postcondition("output_ascending", |_, env| is_sorted(array(env.value("sorted"))))
            .postcondition("same_length", |_, env| {
                array(env.value("sorted")).len() == array(env.value("array")).len()
            })
            .postcondition("is_permutation", |_, env| {
                let mut input = array(env.value("array")).to_vec();
                input.sort_unstable();
                input == array(env.value("sorted"))
            })
            .invariant("state_ascending", |b, _| is_sorted(&b.sorted))
            .invariant("state_fits", |b, _| b.sorted.len() <= MAX_LEN);
    }
}

pub struct BinarySearch {
    /// Index of the key in the sorted array, or -1.
    pub result: i64,
    pub searches: u64,
    pub hits: u64,
    work_ns: u64,
}

impl BinarySearch {
    pub fn new(work_ns: u64) -> Self {
        BinarySearch { result: -1, searches: 0, hits: 0, work_ns }
    }
}

impl Block for BinarySearch {
    fn ports(&self) -> Vec<PortSpec> {
        vec![PortSpec::input("sorted", ValueType::IntArray), PortSpec::input("key", ValueType::Int)]
    }

    fn step(&mut self, cx: &mut StepContext<'_>) {
        let _ = cx.capture_old("searches", &self.searches);
        cx.spend(self.work_ns);
        let sorted = array(cx.read("sorted")).to_vec();
        let key = int(cx.read("key"));
        let mut monitor = LoopMonitor::new("bisect");
        self.result = binary_search_with(&sorted, key, |lo, hi, len| {
            cx.loop_check(&mut monitor, lo < hi && hi <= len, (hi - lo) as i64)
        });
        self.searches += 1;
        if self.result >= 0 {
            self.hits += 1;
        }
    }

    fn contracts(c: &mut Contracts<Self>) {
        c.require_connected(&["sorted", "key"])
            .precondition("input_ascending", |_, env| is_sorted(array(env.value("sorted"))))
            .monitored_loop("bisect")
            .postcondition("hit_points_at_key", |b, env| {
                b.result < 0 || array(env.value("sorted")).get(b.result as usize) == Some(&int(env.value("key")))
            })
            .postcondition("miss_means_absent", |b, env| {
                b.result >= 0 || !array(env.value("sorted")).contains(&int(env.value("key")))
            })
            .postcondition("searches_incremented", |b, env| {
                env.old::<u64>("searches").is_ok_and(|o| b.searches == o + 1)
            })
            .invariant("result_in_bounds", |b, _| (-1..MAX_LEN as i64).contains(&b.result))
            .invariant("hits_within_searches", |b, _| b.hits <= b.searches);
    }
}

pub fn build(opts: BuildOptions) -> Result<CaseStudy, KernelError> {
    let mut app = opts.base_app("binary-search", 10, 0.98, 5);
    let gen = app.add_block("RandomInt", RandomInt::new(opts.seed, opts.work_ns(300)))?;
    let creator = app.add_block("ArrayCreator", ArrayCreator::new(opts.work_ns(400)))?;
    let sorter = app.add_block("Sorter", Sorter::new(opts.work_ns(450)))?;
    let search = app.add_block("BinarySearch", BinarySearch::new(opts.work_ns(430)))?;
    let value = app.port(gen, "value")?;
    app.connect(value, app.port(creator, "value")?)?;
    app.connect(app.port(creator, "array")?, app.port(sorter, "array")?)?;
    app.connect(app.port(sorter, "sorted")?, app.port(search, "sorted")?)?;
    app.connect(value, app.port(search, "key")?)?;
    Ok(CaseStudy { name: "binary-search", app, expected_contracts: 43 })
}
