//! Randomized agreement check between the dense and sparse goal matrices.

use anyhow::Result;
use serde::Serialize;
use tnorm_loss::synth::{random_instance, rng};
use tnorm_loss::{dense_goal, sparse_goal, TNormKind};

pub const SINGLE_TOL: f64 = 1e-6;
pub const DOUBLE_TOL: f64 = 1e-12;

#[derive(Debug, Serialize)]
pub struct KindReport {
    pub tnorm: TNormKind,
    pub max_abs_dev_single: f64,
    pub max_abs_dev_double: f64,
}

/// Enough to replay a failing instance.
#[derive(Debug, Serialize)]
pub struct Offender {
    pub trial: u64,
    pub tnorm: TNormKind,
    pub labels: String,
    pub cnf: String,
    pub predictions: Vec<Vec<f64>>,
    pub dev_single: f64,
    pub dev_double: f64,
}

#[derive(Debug, Serialize)]
pub struct CheckReport {
    pub trials: u64,
    pub seed: u64,
    pub single_tolerance: f64,
    pub double_tolerance: f64,
    pub kinds: Vec<KindReport>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offender: Option<Offender>,
}

pub fn run_check(trials: u64, max_d: u64, max_labels: u64, max_constraints: u64, seed: u64) -> Result<CheckReport> {
    let mut r = rng(seed);
    let mut kinds: Vec<KindReport> = TNormKind::ALL
        .iter()
        .map(|&tnorm| KindReport {
            tnorm,
            max_abs_dev_single: 0.0,
            max_abs_dev_double: 0.0,
        })
        .collect();
    let mut offender = None;
    for trial in 0..trials {
        let (cs, p) = random_instance(&mut r, max_d as usize, max_labels as usize, max_constraints as usize)?;
        let p32 = p.cast::<f32>();
        for k in kinds.iter_mut() {
            let single = sparse_goal(&cs, &p32, k.tnorm)?
                .max_abs_diff(&dense_goal(&cs, &p32, k.tnorm)?)
                .expect("same shape") as f64;
            let double = sparse_goal(&cs, &p, k.tnorm)?
                .max_abs_diff(&dense_goal(&cs, &p, k.tnorm)?)
                .expect("same shape");
            k.max_abs_dev_single = k.max_abs_dev_single.max(single);
            k.max_abs_dev_double = k.max_abs_dev_double.max(double);
            if offender.is_none() && (single > SINGLE_TOL || double > DOUBLE_TOL) {
                offender = Some(Offender {
                    trial,
                    tnorm: k.tnorm,
                    labels: cs.labels_text(),
                    cnf: cs.to_dimacs(),
                    predictions: p.to_rows(),
                    dev_single: single,
                    dev_double: double,
                });
            }
        }
    }
    Ok(CheckReport {
        trials,
        seed,
        single_tolerance: SINGLE_TOL,
        double_tolerance: DOUBLE_TOL,
        kinds,
        pass: offender.is_none(),
        offender,
    })
}
