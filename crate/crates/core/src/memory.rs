//! Analytic memory model and an allocation-counting harness for comparing
//! the dense and sparse paths.
//!
//! Measurements are of host heap bytes through [`CountingAllocator`], not
//! GPU memory. What carries over is the asymptotic shape: the dense path is
//! `Θ(D·|Π|·|A|)`, the sparse path `Θ(D·|Π| + D·|A|)`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::hint::black_box;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dense::{dense_loss, dense_peak_bytes};
use crate::error::{Error, Result};
use crate::grad::grad_matrix_par;
use crate::matrix::Matrix;
use crate::sparse::{logic_loss, sparse_goal_par, sparse_loss};
use crate::synth;
use crate::tnorm::TNormKind;

pub const GIB: f64 = (1u64 << 30) as f64;
pub const MAX_SPARSE_AUX_FACTOR: u64 = 8;
pub const DEFAULT_SPARSE_AUX_FACTOR: u64 = 4;
pub const DEFAULT_CONSTRAINT_COUNTS: [usize; 6] = [8, 16, 32, 64, 128, 243];
pub const DEFAULT_BENCH_ROWS: usize = 65_536;
pub const DEFAULT_BENCH_LABELS: usize = 41;
/// 24 GiB, the memory of the GPU the reference measurements ran on.
pub const DEFAULT_BUDGET_BYTES: u128 = 24 << 30;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemoryModel {
    #[serde(rename = "D")]
    pub rows: u64,
    pub n_constraints: u64,
    pub n_labels: u64,
    pub elem_bytes: u64,
    pub dense_single_tensor_bytes: u128,
    pub dense_total_bytes: u128,
    pub sparse_goal_bytes: u128,
    pub sparse_aux_factor: u64,
    pub sparse_total_bytes: u128,
    pub dense_single_tensor_gib: f64,
    pub dense_total_gib: f64,
    pub sparse_goal_gib: f64,
    pub sparse_total_gib: f64,
}

pub fn estimate(
    rows: u64,
    n_constraints: u64,
    n_labels: u64,
    elem_bytes: u64,
    sparse_aux_factor: u64,
) -> Result<MemoryModel> {
    if sparse_aux_factor == 0 || sparse_aux_factor > MAX_SPARSE_AUX_FACTOR {
        return Err(Error::InvalidArgument(format!(
            "sparse auxiliary factor must be in 1..={MAX_SPARSE_AUX_FACTOR}"
        )));
    }
    let dense = dense_peak_bytes(rows, n_constraints, n_labels, elem_bytes)?;
    let sparse_goal_bytes = (rows as u128)
        .checked_mul(n_constraints as u128)
        .and_then(|x| x.checked_mul(elem_bytes as u128))
        .ok_or(Error::Overflow("sparse goal size"))?;
    let sparse_total_bytes = sparse_goal_bytes
        .checked_mul(sparse_aux_factor as u128)
        .ok_or(Error::Overflow("sparse total size"))?;
    let gib = |b: u128| b as f64 / GIB;
    Ok(MemoryModel {
        rows,
        n_constraints,
        n_labels,
        elem_bytes,
        dense_single_tensor_bytes: dense.per_tensor_bytes,
        dense_total_bytes: dense.total_bytes,
        sparse_goal_bytes,
        sparse_aux_factor,
        sparse_total_bytes,
        dense_single_tensor_gib: gib(dense.per_tensor_bytes),
        dense_total_gib: gib(dense.total_bytes),
        sparse_goal_gib: gib(sparse_goal_bytes),
        sparse_total_gib: gib(sparse_total_bytes),
    })
}

/// Smallest constraint count whose dense estimate exceeds `budget_bytes`.
pub fn dense_crossover(rows: u64, n_labels: u64, elem_bytes: u64, budget_bytes: u128) -> Result<u64> {
    let per_constraint = dense_peak_bytes(rows, 1, n_labels, elem_bytes)?.total_bytes;
    Ok((budget_bytes / per_constraint + 1) as u64)
}

/// `MemAvailable` from `/proc/meminfo`, when the host exposes it.
pub fn host_available_bytes() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    parse_mem_available(&text)
}

fn parse_mem_available(meminfo: &str) -> Option<u64> {
    let line = meminfo.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let mut parts = line.split_whitespace().skip(1);
    let value: u64 = parts.next()?.parse().ok()?;
    match parts.next() {
        Some("kB") => value.checked_mul(1024),
        None => Some(value),
        Some(_) => None,
    }
}

/// The nominal budget, capped at half of the host's available memory so a
/// sweep never pushes the machine into swap or the OOM killer.
pub fn effective_budget(nominal: u128) -> u128 {
    match host_available_bytes() {
        Some(avail) => nominal.min(avail as u128 / 2),
        None => nominal,
    }
}

/// Something that reports live and peak heap bytes.
pub trait AllocProbe: Sync {
    fn live_bytes(&self) -> usize;
    fn peak_bytes(&self) -> usize;
    /// Restarts peak tracking from the current live count.
    fn reset_peak(&self);
    /// Whether allocations are actually flowing through this probe.
    fn is_active(&self) -> bool;
}

/// A [`GlobalAlloc`] wrapper counting live and peak bytes. Install it with
/// `#[global_allocator]` in a binary or test target.
pub struct CountingAllocator<A = System> {
    inner: A,
    live: AtomicUsize,
    peak: AtomicUsize,
    active: AtomicBool,
}

impl CountingAllocator<System> {
    pub const fn system() -> Self {
        Self::new(System)
    }
}

impl<A> CountingAllocator<A> {
    pub const fn new(inner: A) -> Self {
        CountingAllocator {
            inner,
            live: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            active: AtomicBool::new(false),
        }
    }

    fn grow(&self, bytes: usize) {
        let now = self.live.fetch_add(bytes, Ordering::Relaxed) + bytes;
        self.peak.fetch_max(now, Ordering::Relaxed);
    }

    fn shrink(&self, bytes: usize) {
        self.live.fetch_sub(bytes, Ordering::Relaxed);
    }
}

unsafe impl<A: GlobalAlloc> GlobalAlloc for CountingAllocator<A> {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let ptr = self.inner.alloc(layout);
        if !ptr.is_null() {
            self.grow(layout.size());
            self.active.store(true, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        let ptr = self.inner.alloc_zeroed(layout);
        if !ptr.is_null() {
            self.grow(layout.size());
            self.active.store(true, Ordering::Relaxed);
        }
        ptr
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        self.inner.dealloc(ptr, layout);
        self.shrink(layout.size());
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let out = self.inner.realloc(ptr, layout, new_size);
        if !out.is_null() {
            if new_size >= layout.size() {
                self.grow(new_size - layout.size());
            } else {
                self.shrink(layout.size() - new_size);
            }
        }
        out
    }
}

impl<A: GlobalAlloc + Sync> AllocProbe for CountingAllocator<A> {
    fn live_bytes(&self) -> usize {
        self.live.load(Ordering::Relaxed)
    }

    fn peak_bytes(&self) -> usize {
        self.peak.load(Ordering::Relaxed)
    }

    fn reset_peak(&self) {
        self.peak.store(self.live_bytes(), Ordering::Relaxed);
    }

    fn is_active(&self) -> bool {
        let before = self.live_bytes();
        let probe = black_box(vec![0u8; 4096]);
        let seen = self.live_bytes() >= before + probe.len();
        drop(probe);
        seen && self.active.load(Ordering::Relaxed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchPath {
    Dense,
    Sparse,
}

impl std::fmt::Display for BenchPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BenchPath::Dense => "dense",
            BenchPath::Sparse => "sparse",
        })
    }
}

/// One sweep point. `iterations` is not part of the CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub path: BenchPath,
    pub tnorm: TNormKind,
    pub n_constraints: usize,
    #[serde(rename = "D")]
    pub rows: usize,
    pub n_labels: usize,
    /// Measured peak above the post-input baseline, or the analytic dense
    /// estimate when `estimated` is set.
    pub peak_bytes: u64,
    /// Median seconds per iteration; 0 for estimates.
    pub wall_seconds: f64,
    pub estimated: bool,
    #[serde(skip)]
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SweepConfig {
    pub constraint_counts: Vec<usize>,
    pub rows: usize,
    pub n_labels: usize,
    pub kind: TNormKind,
    pub paths: Vec<BenchPath>,
    pub iterations: usize,
    /// Dense configurations whose estimate exceeds this are not run.
    pub budget_bytes: u128,
    /// Emit over-budget dense points as estimates instead of failing.
    pub estimate_fallback: bool,
    pub seed: u64,
    /// Worker threads for the row-parallel kernels; 1 runs sequentially.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            constraint_counts: DEFAULT_CONSTRAINT_COUNTS.to_vec(),
            rows: DEFAULT_BENCH_ROWS,
            n_labels: DEFAULT_BENCH_LABELS,
            kind: TNormKind::Godel,
            paths: vec![BenchPath::Dense, BenchPath::Sparse],
            iterations: 50,
            budget_bytes: DEFAULT_BUDGET_BYTES,
            estimate_fallback: true,
            seed: 0,
            threads: 1,
        }
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Runs every (path, constraint count) configuration: dense points first,
/// each group in ascending constraint count.
pub fn run_sweep(config: &SweepConfig, probe: &dyn AllocProbe) -> Result<Vec<BenchRecord>> {
    if config.iterations == 0 || config.rows == 0 || config.n_labels == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs positive iterations, rows and labels".into(),
        ));
    }
    if config.constraint_counts.is_empty() || config.constraint_counts.contains(&0) {
        return Err(Error::InvalidArgument("constraint counts must be positive".into()));
    }
    if !probe.is_active() {
        return Err(Error::NoAllocProbe);
    }
    let max_count = *config.constraint_counts.iter().max().unwrap();
    let family = synth::bench_family(config.seed, config.n_labels, max_count)?;
    let p: Matrix<f32> = synth::random_predictions(
        &mut synth::rng(config.seed.wrapping_add(1)),
        config.rows,
        config.n_labels,
    )
    .cast();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let rows_per_task = config.rows.div_ceil(config.threads.max(1)).max(1);

    let mut counts = config.constraint_counts.clone();
    counts.sort_unstable();
    counts.dedup();
    let mut records = Vec::new();
    for &path in &config.paths {
        for &count in &counts {
            let cs = family.truncated(count)?;
            let mut record = BenchRecord {
                path,
                tnorm: config.kind,
                n_constraints: count,
                rows: config.rows,
                n_labels: config.n_labels,
                peak_bytes: 0,
                wall_seconds: 0.0,
                estimated: false,
                iterations: config.iterations,
            };
            if path == BenchPath::Dense {
                let est = dense_peak_bytes(config.rows as u64, count as u64, config.n_labels as u64, 4)?;
                if est.total_bytes > config.budget_bytes {
                    if !config.estimate_fallback {
                        return Err(Error::BudgetExceeded {
                            estimate: est.total_bytes,
                            budget: config.budget_bytes,
                        });
                    }
                    record.peak_bytes = u64::try_from(est.total_bytes).unwrap_or(u64::MAX);
                    record.estimated = true;
                    record.iterations = 0;
                    records.push(record);
                    continue;
                }
            }
            let baseline = probe.live_bytes();
            probe.reset_peak();
            let mut times = Vec::with_capacity(config.iterations);
            for _ in 0..config.iterations {
                let start = Instant::now();
                match path {
                    BenchPath::Dense => {
                        black_box(dense_loss(&cs, &p, config.kind)?);
                    }
                    BenchPath::Sparse if config.threads <= 1 => {
                        black_box(sparse_loss(&cs, &p, config.kind, true)?);
                    }
                    BenchPath::Sparse => pool.install(|| -> Result<()> {
                        let goal = sparse_goal_par(&cs, &p, config.kind, rows_per_task)?;
                        let grad = grad_matrix_par(&cs, &p, config.kind, rows_per_task)?;
                        black_box((logic_loss(&goal), grad));
                        Ok(())
                    })?,
                }
                times.push(start.elapsed().as_secs_f64());
            }
            record.peak_bytes = probe.peak_bytes().saturating_sub(baseline) as u64;
            record.wall_seconds = median(times).max(f64::MIN_POSITIVE);
            records.push(record);
        }
    }
    Ok(records)
}

pub const CSV_HEADER: &str = "path,tnorm,n_constraints,D,n_labels,peak_bytes,wall_seconds,estimated";

pub fn emit_csv(records: &[BenchRecord]) -> Result<String> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to emit".into()));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    for r in records {
        writer.serialize(r)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::InvalidArgument(format!("csv flush: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Parse {
            line: 1,
            msg: format!("unexpected header `{}`", header.join(",")),
        });
    }
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, intercept, r2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn headline_estimates() {
        let m = estimate(550_000, 200, 50, 4, 4).unwrap();
        assert!((19.5..=21.5).contains(&m.dense_single_tensor_gib));
        assert!((97.0..=108.0).contains(&m.dense_total_gib));
        assert_eq!(m.sparse_goal_bytes, 550_000 * 200 * 4);
        assert!((m.sparse_goal_gib - 0.4098).abs() < 1e-3);
        assert!((m.sparse_total_gib - 1.6391).abs() < 1e-3);
    }

    #[test]
    fn tiny_estimate() {
        let m = estimate(1, 1, 1, 1, 1).unwrap();
        assert_eq!((m.dense_total_bytes, m.sparse_total_bytes), (5, 1));
        assert!(estimate(1, 1, 1, 1, 9).is_err());
        assert!(estimate(1, 1, 1, 1, 0).is_err());
        assert!(estimate(0, 1, 1, 1, 1).is_err());
    }

    #[test]
    fn crossover() {
        let c = dense_crossover(67_000, 41, 4, DEFAULT_BUDGET_BYTES).unwrap();
        let over = |n: u64| dense_peak_bytes(67_000, n, 41, 4).unwrap().total_bytes > DEFAULT_BUDGET_BYTES;
        assert!(over(c));
        assert!(!over(c - 1));
    }

    fn record(path: BenchPath, n: usize) -> BenchRecord {
        BenchRecord {
            path,
            tnorm: TNormKind::Product,
            n_constraints: n,
            rows: 16,
            n_labels: 5,
            peak_bytes: 1234 + n as u64,
            wall_seconds: 0.000_123_4,
            estimated: path == BenchPath::Dense,
            iterations: 0,
        }
    }

    #[test]
    fn csv_shape() {
        let one = emit_csv(&[record(BenchPath::Sparse, 8)]).unwrap();
        let lines: Vec<&str> = one.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "sparse,product,8,16,5,1242,0.0001234,false");

        let many: Vec<_> = [BenchPath::Dense, BenchPath::Sparse]
            .iter()
            .flat_map(|&p| DEFAULT_CONSTRAINT_COUNTS.map(|n| record(p, n)))
            .collect();
        let text = emit_csv(&many).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert_eq!(parse_csv(&text).unwrap(), many);
        assert!(emit_csv(&[]).is_err());
        assert!(parse_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn fit() {
        let (s, i, r2) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0], &[1.0]).is_none());
        assert!(linear_fit(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    struct Inert;
    impl AllocProbe for Inert {
        fn live_bytes(&self) -> usize {
            0
        }
        fn peak_bytes(&self) -> usize {
            0
        }
        fn reset_peak(&self) {}
        fn is_active(&self) -> bool {
            false
        }
    }

    #[test]
    fn sweep_requires_probe() {
        let cfg = SweepConfig {
            rows: 4,
            constraint_counts: vec![2],
            iterations: 1,
            ..SweepConfig::default()
        };
        assert!(matches!(run_sweep(&cfg, &Inert), Err(Error::NoAllocProbe)));
        let bad = SweepConfig { iterations: 0, ..cfg };
        assert!(run_sweep(&bad, &Inert).is_err());
    }

    #[test]
    fn meminfo_parsing() {
        let text = "MemTotal:  100 kB\nMemFree: 5 kB\nMemAvailable:    2048 kB\n";
        assert_eq!(parse_mem_available(text), Some(2048 * 1024));
        assert_eq!(parse_mem_available("MemTotal: 1 kB\n"), None);
        assert!(effective_budget(1) <= 1);
    }
}
