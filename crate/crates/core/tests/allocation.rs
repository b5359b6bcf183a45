//! Runs in its own binary so the counting allocator sees every allocation.

use tnorm_loss::memory::{run_sweep, AllocProbe, BenchPath, CountingAllocator, SweepConfig};
use tnorm_loss::synth::{bench_family, random_predictions, rng};
use tnorm_loss::{dense_goal, dense_peak_bytes, Matrix, TNormKind};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator::system();

#[test]
fn probe_sees_allocations() {
    assert!(ALLOC.is_active());
    ALLOC.reset_peak();
    let base = ALLOC.live_bytes();
    let v = vec![0u8; 1 << 20];
    assert!(ALLOC.peak_bytes() >= base + (1 << 20));
    drop(v);
    assert!(ALLOC.live_bytes() < base + (1 << 20));
}

#[test]
fn dense_peak_matches_the_model_and_sparse_is_far_smaller() {
    let (rows, labels, n) = (512, 41, 16);
    let cs = bench_family(1, labels, n).unwrap();
    let p: Matrix<f32> = random_predictions(&mut rng(2), rows, labels).cast();

    ALLOC.reset_peak();
    let base = ALLOC.live_bytes();
    let g = dense_goal(&cs, &p, TNormKind::Godel).unwrap();
    let dense_peak = ALLOC.peak_bytes() - base;
    drop(g);
    let model = dense_peak_bytes(rows as u64, n as u64, labels as u64, 4).unwrap().total_bytes as usize;
    assert!(dense_peak >= model, "{dense_peak} < {model}");
    assert!(dense_peak < model + model / 10);

    let config = SweepConfig {
        constraint_counts: vec![8, 16],
        rows,
        n_labels: labels,
        iterations: 2,
        ..SweepConfig::default()
    };
    let records = run_sweep(&config, &ALLOC).unwrap();
    assert_eq!(records.len(), 4);
    for r in records.iter().filter(|r| r.path == BenchPath::Sparse) {
        assert!(!r.estimated);
        assert!(r.peak_bytes <= 8 * (rows * r.n_constraints * 4) as u64);
        let dense = records
            .iter()
            .find(|d| d.path == BenchPath::Dense && d.n_constraints == r.n_constraints)
            .unwrap();
        assert!(dense.peak_bytes >= 4 * r.peak_bytes);
    }
}

#[test]
fn over_budget_dense_points_become_estimates() {
    let config = SweepConfig {
        constraint_counts: vec![8, 64],
        rows: 256,
        n_labels: 41,
        iterations: 1,
        budget_bytes: dense_peak_bytes(256, 8, 41, 4).unwrap().total_bytes,
        paths: vec![BenchPath::Dense],
        ..SweepConfig::default()
    };
    let records = run_sweep(&config, &ALLOC).unwrap();
    assert!(!records[0].estimated);
    assert!(records[1].estimated);
    assert_eq!(
        records[1].peak_bytes as u128,
        dense_peak_bytes(256, 64, 41, 4).unwrap().total_bytes
    );
    let strict = SweepConfig {
        estimate_fallback: false,
        ..config
    };
    assert!(run_sweep(&strict, &ALLOC).is_err());
}
