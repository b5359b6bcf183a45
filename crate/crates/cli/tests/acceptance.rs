//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fail.

#[path = "../src/check.rs"]
mod check;

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use tnorm_loss::memory::{
    self, dense_crossover, estimate, linear_fit, run_sweep, BenchPath, BenchRecord, CountingAllocator, SweepConfig,
    DEFAULT_BUDGET_BYTES, GIB,
};
use tnorm_loss::synth::{random_instance, rng};
use tnorm_loss::trainer::{make_task, train, TaskSpec, TrainConfig};
use tnorm_loss::{finite_diff_check, io, neg, ConstraintSet, Matrix, SparsePlan, TNormKind};

#[global_allocator]
static ALLOC: CountingAllocator = CountingAllocator::system();

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn load(dir: &str) -> ConstraintSet {
    let d = fixtures().join(dir);
    let labels = io::read_text(&d.join("labels.txt")).unwrap();
    let cnf = io::read_text(&d.join("constraints.cnf")).unwrap();
    ConstraintSet::from_texts(&labels, &cnf).unwrap()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn golden() -> Outcome {
    const TOL: f32 = 1e-7;
    let cs = load("moving_car");
    let p: Matrix<f32> = io::read_predictions(&fixtures().join("moving_car/pred.csv")).unwrap().cast();
    let steps: [[[f32; 2]; 3]; 3] = [
        [[0.1, 0.0], [0.9, 0.0], [0.4, 0.0]],
        [[0.3, 0.3], [0.9, 0.1], [0.4, 0.1]],
        [[0.3, 0.7], [0.9, 0.8], [0.4, 0.1]],
    ];
    let plan = SparsePlan::new(&cs);
    let mut g = Matrix::<f32>::zeros(3, 2);
    let mut worst = 0.0f32;
    for (label, want) in steps.iter().enumerate() {
        plan.apply_label(label, &p, TNormKind::Godel, &mut g).map_err(|e| e.to_string())?;
        worst = worst.max(g.max_abs_diff(&Matrix::from_rows(want).unwrap()).unwrap());
    }
    let direct = tnorm_loss::sparse_goal(&cs, &p, TNormKind::Godel).map_err(|e| e.to_string())?;
    worst = worst.max(direct.max_abs_diff(&g).unwrap());
    ensure(worst <= TOL, format!("max deviation over 3 label steps {worst:e} (tol {TOL:e})"))
}

fn equivalence() -> Outcome {
    let report = check::run_check(1000, 64, 16, 32, 0).map_err(|e| e.to_string())?;
    let single = report.kinds.iter().map(|k| k.max_abs_dev_single).fold(0.0, f64::max);
    let double = report.kinds.iter().map(|k| k.max_abs_dev_double).fold(0.0, f64::max);
    ensure(
        report.pass,
        format!("1000 instances x 3 t-norms, max dev single {single:e}, double {double:e}"),
    )
}

fn axioms() -> Outcome {
    use rand::Rng;
    const TOL: f64 = 1e-12;
    const TRIPLES: usize = 10_000;
    let mut r = rng(3);
    let mut failures = Vec::new();
    for kind in TNormKind::ALL {
        let mut bad = 0usize;
        for _ in 0..TRIPLES {
            let (a, b, c): (f64, f64, f64) = (r.gen(), r.gen(), r.gen());
            let t = |x, y| kind.tnorm(x, y);
            let s = |x, y| kind.tconorm(x, y);
            let (lo, hi) = if b <= c { (b, c) } else { (c, b) };
            let ok = (t(a, b) - t(b, a)).abs() <= TOL
                && (t(a, t(b, c)) - t(t(a, b), c)).abs() <= TOL
                && t(a, lo) <= t(a, hi) + TOL
                && (t(a, 1.0) - a).abs() <= TOL
                && t(a, 0.0).abs() <= TOL
                && (s(a, b) - neg(t(neg(a), neg(b)))).abs() <= TOL
                && (t(a, b) - neg(s(neg(a), neg(b)))).abs() <= TOL;
            bad += usize::from(!ok);
        }
        if bad > 0 {
            failures.push(format!("{kind}: {bad} triples"));
        }
    }
    if failures.is_empty() {
        Ok(format!("{TRIPLES} triples per t-norm, five axioms and De Morgan duality within {TOL:e}"))
    } else {
        Err(failures.join(", "))
    }
}

fn estimator() -> Outcome {
    let m = estimate(550_000, 200, 50, 4, memory::DEFAULT_SPARSE_AUX_FACTOR).map_err(|e| e.to_string())?;
    ensure(
        (19.5..=21.5).contains(&m.dense_single_tensor_gib) && (97.0..=108.0).contains(&m.dense_total_gib),
        format!(
            "single tensor {:.3} GiB (want [19.5, 21.5]), total {:.3} GiB (want [97, 108])",
            m.dense_single_tensor_gib, m.dense_total_gib
        ),
    )
}

fn sweep() -> Outcome {
    let budget = memory::effective_budget(DEFAULT_BUDGET_BYTES);
    let config = SweepConfig {
        budget_bytes: budget,
        ..SweepConfig::default()
    };
    let records = run_sweep(&config, &ALLOC).map_err(|e| e.to_string())?;
    let (d, a) = (config.rows as u64, config.n_labels as u64);
    let find = |path, n| -> &BenchRecord {
        records
            .iter()
            .find(|r| r.path == path && r.n_constraints == n)
            .expect("every configuration is recorded")
    };
    let mut problems = Vec::new();
    let mut min_ratio = f64::INFINITY;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for &n in &config.constraint_counts {
        let pi = n as u64;
        let (dense, sparse) = (find(BenchPath::Dense, n), find(BenchPath::Sparse, n));
        if sparse.estimated || sparse.peak_bytes > 8 * d * pi * 4 {
            problems.push(format!("sparse peak {} above 8*D*|Pi|*4 at |Pi|={n}", sparse.peak_bytes));
        }
        if dense.peak_bytes < d * pi * a * 4 {
            problems.push(format!("dense peak {} below D*|Pi|*|A|*4 at |Pi|={n}", dense.peak_bytes));
        }
        let est = estimate(d, pi, a, 4, memory::DEFAULT_SPARSE_AUX_FACTOR).unwrap();
        if dense.estimated != (est.dense_total_bytes as u128 > budget) {
            problems.push(format!("dense point |Pi|={n} flagged={} against budget", dense.estimated));
        }
        let ratio = dense.peak_bytes as f64 / sparse.peak_bytes as f64;
        min_ratio = min_ratio.min(ratio);
        if ratio < 4.0 {
            problems.push(format!("dense/sparse ratio {ratio:.2} at |Pi|={n}"));
        }
        if !dense.estimated {
            xs.push(n as f64);
            ys.push(dense.peak_bytes as f64);
        }
    }
    let measured = xs.len();
    let r2 = linear_fit(&xs, &ys).map(|(_, _, r2)| r2);
    let crossover = dense_crossover(67_000, 41, 4, DEFAULT_BUDGET_BYTES).map_err(|e| e.to_string())?;
    let at40 = estimate(67_000, 40, 41, 4, 4).unwrap().dense_total_gib;
    let detail = format!(
        "budget {:.2} GiB, {measured} dense points measured, dense R^2 {}, min dense/sparse ratio {min_ratio:.1}; \
         analytic dense crossover at D=67000,|A|=41,24 GiB: {crossover} constraints (40 constraints: {at40:.2} GiB)",
        budget as f64 / GIB,
        r2.map_or("n/a".into(), |r| format!("{r:.6}")),
    );
    for r in &records {
        eprintln!(
            "    {:?} |Pi|={:>3} peak={:>12} B{}",
            r.path,
            r.n_constraints,
            r.peak_bytes,
            if r.estimated { " (estimate)" } else { "" }
        );
    }
    if problems.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; {}", problems.join("; ")))
    }
}

fn gradients() -> Outcome {
    const INSTANCES: usize = 100;
    let mut r = rng(6);
    let (mut prod_rel, mut abs_other, mut skipped, mut checked) = (0.0f64, 0.0f64, 0usize, 0usize);
    for _ in 0..INSTANCES {
        let (cs, p) = random_instance(&mut r, 16, 10, 16).map_err(|e| e.to_string())?;
        let p = p.map(|&x| 0.01 + 0.98 * x);
        for kind in TNormKind::ALL {
            let rep = finite_diff_check(&cs, &p, kind, 1e-4, 1e-3).map_err(|e| e.to_string())?;
            skipped += rep.num_skipped_nonsmooth;
            checked += rep.num_checked;
            match kind {
                TNormKind::Product => prod_rel = prod_rel.max(rep.max_rel_error),
                _ => abs_other = abs_other.max(rep.max_abs_error),
            }
        }
    }
    ensure(
        prod_rel <= 1e-4 && abs_other <= 1e-6,
        format!(
            "{INSTANCES} instances, {checked} coordinates checked, {skipped} skipped near kinks; \
             Product max rel {prod_rel:e} (tol 1e-4), Godel/Lukasiewicz max abs {abs_other:e} (tol 1e-6)"
        ),
    )
}

fn trainer() -> Outcome {
    const SEEDS: u64 = 5;
    let cs = load("toy_road");
    if cs.n_labels() < 8 || cs.n_clauses() < 12 {
        return Err("task too small".into());
    }
    let spec = TaskSpec::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for kind in TNormKind::ALL {
        let mut runs: [Vec<f64>; 4] = Default::default();
        let mut ap: [Vec<f64>; 2] = Default::default();
        for seed in 0..SEEDS {
            let task = make_task(seed, &spec, &cs).map_err(|e| e.to_string())?;
            let base = TrainConfig {
                tnorm: kind,
                seed,
                ..TrainConfig::default()
            };
            let configs = [
                TrainConfig { weight: 0.0, warmup_epochs: 0, use_unlabelled: false, ..base.clone() },
                TrainConfig { warmup_epochs: 0, use_unlabelled: false, ..base.clone() },
                TrainConfig { warmup_epochs: 0, use_unlabelled: true, ..base.clone() },
                TrainConfig { use_unlabelled: true, ..base.clone() },
            ];
            for (i, c) in configs.iter().enumerate() {
                let (_, report) = train(&task, c).map_err(|e| e.to_string())?;
                runs[i].push(report.violation_rate);
                if i >= 2 {
                    ap[i - 2].push(report.mean_ap);
                }
            }
        }
        let [base, logic, nowarm, warm] = runs.map(median);
        let reduced = logic <= 0.8 * base;
        let warm_ok = warm <= nowarm;
        ok &= reduced && warm_ok;
        lines.push(format!(
            "{kind}: w=0 {base:.4} w=10 {logic:.4} [{}], no-warm-up {nowarm:.4} warm-up {warm:.4} [{}] (mAP {:.4} vs {:.4})",
            if reduced { "ok" } else { "not 20% lower" },
            if warm_ok { "ok" } else { "warm-up higher" },
            median(ap[0].clone()),
            median(ap[1].clone()),
        ));
    }
    let detail = format!("median violation rates over {SEEDS} seeds; {}", lines.join("; "));
    ensure(ok, detail)
}

fn cli(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_tnorm-loss"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {}: {}", out.status, String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

/// Bench output minus the wall-clock column.
fn without_timing(csv: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8_lossy(csv)
        .lines()
        .map(|l| {
            l.split(',')
                .enumerate()
                .filter(|&(i, _)| i != 6)
                .map(|(_, f)| f.to_string())
                .collect()
        })
        .collect()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let ex = fixtures().join("moving_car");
    let road = fixtures().join("toy_road");
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let (cnf, labels, pred) = (s(&ex.join("constraints.cnf")), s(&ex.join("labels.txt")), s(&ex.join("pred.csv")));
    let (rcnf, rlabels) = (s(&road.join("constraints.cnf")), s(&road.join("labels.txt")));
    let grad_file = |i: usize| s(&dir.path().join(format!("grad{i}.pmat")));

    let mut checked = Vec::new();
    for tnorm in ["godel", "lukasiewicz", "product"] {
        let base = ["--constraints", &cnf, "--labels", &labels, "--pred", &pred, "--tnorm", tnorm];
        let plain: Vec<Vec<&str>> = vec![
            [&["loss"][..], &base].concat(),
            [&["grad"][..], &base].concat(),
            [&["grad"][..], &base, &["--fd-check"]].concat(),
        ];
        for args in plain {
            if cli(&args)? != cli(&args)? {
                return Err(format!("{args:?} differs between runs"));
            }
            if !checked.contains(&args[0].to_string()) {
                checked.push(args[0].to_string());
            }
        }
        let mut outs = Vec::new();
        for i in 0..2 {
            let g = grad_file(i);
            let args = [&["loss"][..], &base, &["--grad-out", &g]].concat();
            outs.push((cli(&args)?, std::fs::read(&g).map_err(|e| e.to_string())?));
        }
        if outs[0] != outs[1] {
            return Err(format!("loss --grad-out ({tnorm}) differs between runs"));
        }
    }
    let others: [&[&str]; 3] = [
        &["check", "--trials", "100", "--seed", "9"],
        &["estimate", "--d", "67000", "--constraints-n", "40", "--labels-n", "41"],
        &[
            "train-demo", "--constraints", &rcnf, "--labels", &rlabels, "--tnorm", "product", "--epochs", "60",
            "--seed", "4",
        ],
    ];
    for args in others {
        if cli(args)? != cli(args)? {
            return Err(format!("{args:?} differs between runs"));
        }
        checked.push(args[0].to_string());
    }
    let bench = [
        "bench", "--d", "1024", "--constraint-counts", "8,16", "--iters", "2", "--budget-bytes", "1000000000",
    ];
    if without_timing(&cli(&bench)?) != without_timing(&cli(&bench)?) {
        return Err("bench output (excluding wall_seconds) differs between runs".into());
    }
    checked.push("bench".into());
    Ok(format!("byte-identical repeat runs: {}; bench compared without wall_seconds", checked.join(", ")))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("golden example goal and label steps", golden),
        ("dense and sparse agree on random instances", equivalence),
        ("t-norm axioms and duality", axioms),
        ("memory estimator figures", estimator),
        ("memory sweep shape", sweep),
        ("finite-difference gradient agreement", gradients),
        ("trainer violation-rate properties", trainer),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
