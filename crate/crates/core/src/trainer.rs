//! Toy multi-label training with the logic loss as a regulariser.
//!
//! A linear-sigmoid model is fit by full-batch gradient descent on
//! `BCE(labelled) + w · L_logic(labelled) + w · L_logic(unlabelled)`. During
//! the first `warmup_epochs` the logic terms are off and unlabelled data is
//! not used at all.

use std::cell::Cell;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::grad::loss_grad;
use crate::matrix::Matrix;
use crate::synth;
use crate::tnorm::TNormKind;

/// Label draws per example before giving up on the constraints.
pub const MAX_LABEL_RETRIES: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix<f64>,
    pub labels: Matrix<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSpec {
    pub n_features: usize,
    pub labelled: usize,
    pub unlabelled: usize,
    pub eval: usize,
    /// Standard deviation of the additive feature noise.
    pub noise: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            n_features: 12,
            labelled: 200,
            unlabelled: 200,
            eval: 1000,
            noise: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub seed: u64,
    pub constraints: ConstraintSet,
    pub labelled: Dataset,
    pub unlabelled: Dataset,
    pub eval: Dataset,
}

impl SyntheticTask {
    pub fn n_labels(&self) -> usize {
        self.constraints.n_labels()
    }

    pub fn n_features(&self) -> usize {
        self.labelled.features.cols()
    }
}

/// Draws a task: label vectors are rejection-sampled from independent
/// per-label Bernoulli priors until they satisfy every clause, then
/// features are `M (2y − 1) / √K + noise` for a fixed random mixing `M`.
pub fn make_task(seed: u64, spec: &TaskSpec, cs: &ConstraintSet) -> Result<SyntheticTask> {
    if spec.n_features == 0 || spec.labelled == 0 || spec.eval == 0 {
        return Err(Error::InvalidArgument(
            "task needs features, labelled and evaluation examples".into(),
        ));
    }
    let k = cs.n_labels();
    let mut rng = synth::rng(seed);
    let priors: Vec<f64> = (0..k).map(|_| rng.gen_range(0.15..0.5)).collect();
    let mixing = Matrix::from_fn(spec.n_features, k, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z / (k as f64).sqrt()
    });

    let mut draw = |n: usize| -> Result<Dataset> {
        let mut labels = Matrix::filled(n, k, 0u8);
        let mut features = Matrix::zeros(n, spec.n_features);
        let mut bits = vec![false; k];
        for i in 0..n {
            let mut tries = 0;
            loop {
                for (b, &q) in bits.iter_mut().zip(&priors) {
                    *b = rng.gen_bool(q);
                }
                if cs.is_satisfied_by(&bits) {
                    break;
                }
                tries += 1;
                if tries >= MAX_LABEL_RETRIES {
                    return Err(Error::Unsatisfiable { retries: tries });
                }
            }
            for (a, &b) in bits.iter().enumerate() {
                labels.set(i, a, b as u8);
            }
            for f in 0..spec.n_features {
                let signal: f64 = (0..k)
                    .map(|a| mixing.get(f, a) * if bits[a] { 1.0 } else { -1.0 })
                    .sum();
                let noise: f64 = StandardNormal.sample(&mut rng);
                features.set(i, f, signal + spec.noise * noise);
            }
        }
        Ok(Dataset { features, labels })
    };
    let labelled = draw(spec.labelled)?;
    let unlabelled = draw(spec.unlabelled)?;
    let eval = draw(spec.eval)?;
    Ok(SyntheticTask {
        seed,
        constraints: cs.clone(),
        labelled,
        unlabelled,
        eval,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub tnorm: TNormKind,
    pub weight: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Feed unlabelled data to the logic term once it is active.
    pub use_unlabelled: bool,
}

impl TrainConfig {
    pub const DEFAULT_WEIGHT: f64 = 10.0;

    /// Defaults with the warm-up set to a third of `epochs`.
    pub fn with_epochs(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            warmup_epochs: epochs / 3,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if !(self.weight >= 0.0) {
            return bad("logic weight must be non-negative");
        }
        if self.warmup_epochs > self.epochs {
            return bad("warm-up cannot exceed the number of epochs");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie in (0, 1)");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            tnorm: TNormKind::Godel,
            weight: Self::DEFAULT_WEIGHT,
            warmup_epochs: 100,
            epochs: 300,
            learning_rate: 1.0,
            threshold: 0.5,
            seed: 0,
            use_unlabelled: true,
        }
    }
}

pub trait Predictor {
    /// Confidences in `[0, 1]`, one row per feature row.
    fn predict(&self, features: &Matrix<f64>) -> Matrix<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearModel {
    /// `labels × features`.
    pub weights: Matrix<f64>,
    pub bias: Vec<f64>,
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LinearModel {
    pub fn new<R: Rng>(rng: &mut R, n_labels: usize, n_features: usize) -> Self {
        LinearModel {
            weights: Matrix::from_fn(n_labels, n_features, |_, _| {
                let z: f64 = StandardNormal.sample(rng);
                0.01 * z
            }),
            bias: vec![0.0; n_labels],
        }
    }

    pub fn logits(&self, features: &Matrix<f64>) -> Matrix<f64> {
        Matrix::from_fn(features.rows(), self.bias.len(), |i, a| {
            let x = features.row(i);
            self.bias[a] + self.weights.row(a).iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
        })
    }

    fn step(&mut self, grad: &Params, lr: f64) {
        for (w, g) in self.weights.as_mut_slice().iter_mut().zip(grad.weights.as_slice()) {
            *w -= lr * g;
        }
        for (b, g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }
}

impl Predictor for LinearModel {
    fn predict(&self, features: &Matrix<f64>) -> Matrix<f64> {
        self.logits(features).map(|&z| sigmoid(z))
    }
}

/// Gradient with respect to the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub weights: Matrix<f64>,
    pub bias: Vec<f64>,
}

impl Params {
    fn zeros(n_labels: usize, n_features: usize) -> Self {
        Params {
            weights: Matrix::zeros(n_labels, n_features),
            bias: vec![0.0; n_labels],
        }
    }

    /// Adds `Xᵀ · d` where `d` is `∂/∂logits` for the rows of `x`.
    fn accumulate(&mut self, x: &Matrix<f64>, d: &Matrix<f64>) {
        for i in 0..x.rows() {
            let xi = x.row(i);
            for a in 0..d.cols() {
                let g = d.get(i, a);
                if g == 0.0 {
                    continue;
                }
                self.bias[a] += g;
                for (w, &xv) in self.weights.row_mut(a).iter_mut().zip(xi) {
                    *w += g * xv;
                }
            }
        }
    }
}

/// Counts calls into the logic loss.
#[derive(Debug, Default)]
pub struct LogicCounter(Cell<u64>);

impl LogicCounter {
    pub fn get(&self) -> u64 {
        self.0.get()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectiveValue {
    pub bce: f64,
    pub logic_labelled: f64,
    pub logic_unlabelled: f64,
    pub total: f64,
}

/// Terms of the objective and their parameter gradients.
#[derive(Clone, Debug)]
pub struct ObjectiveGrad {
    pub value: ObjectiveValue,
    pub bce: Params,
    /// Gradient of the unweighted logic terms.
    pub logic: Params,
    /// Gradient of `bce + weight · logic`, accumulated in a single pass.
    pub total: Params,
}

/// Evaluates the objective at `model`. `logic_active` switches the logic
/// terms on; unlabelled rows are only used while it is.
pub fn objective_grad(
    model: &LinearModel,
    task: &SyntheticTask,
    kind: TNormKind,
    weight: f64,
    logic_active: bool,
    use_unlabelled: bool,
    counter: &LogicCounter,
) -> Result<ObjectiveGrad> {
    let (k, f) = (task.n_labels(), task.n_features());
    let mut bce_grad = Params::zeros(k, f);
    let mut logic_grad = Params::zeros(k, f);
    let mut total_grad = Params::zeros(k, f);
    let mut value = ObjectiveValue {
        bce: 0.0,
        logic_labelled: 0.0,
        logic_unlabelled: 0.0,
        total: 0.0,
    };

    let lab = &task.labelled;
    let logits = model.logits(&lab.features);
    let p = logits.map(|&z| sigmoid(z));
    let cells = (lab.len() * k).max(1) as f64;
    let mut d_bce = Matrix::zeros(lab.len(), k);
    for i in 0..lab.len() {
        for a in 0..k {
            let z = logits.get(i, a);
            let y = lab.labels.get(i, a) as f64;
            // softplus(z) − y·z, stable for large |z|
            value.bce += (z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z) / cells;
            d_bce.set(i, a, (p.get(i, a) - y) / cells);
        }
    }
    bce_grad.accumulate(&lab.features, &d_bce);

    let mut d_total = d_bce;
    if logic_active && k > 0 {
        let mut logic_term = |x: &Matrix<f64>, p: &Matrix<f64>, d_total: Option<&mut Matrix<f64>>| -> Result<f64> {
            counter.0.set(counter.0.get() + 1);
            let (loss, gp) = loss_grad(&task.constraints, p, kind)?;
            let d = Matrix::from_fn(p.rows(), k, |i, a| {
                let q = p.get(i, a);
                gp.get(i, a) * q * (1.0 - q)
            });
            logic_grad.accumulate(x, &d);
            match d_total {
                Some(t) => {
                    for (t, &g) in t.as_mut_slice().iter_mut().zip(d.as_slice()) {
                        *t += weight * g;
                    }
                }
                None => total_grad.accumulate(x, &d.map(|&g| weight * g)),
            }
            Ok(loss)
        };
        value.logic_labelled = logic_term(&lab.features, &p, Some(&mut d_total))?;
        if use_unlabelled && !task.unlabelled.is_empty() {
            let x = &task.unlabelled.features;
            let pu = model.predict(x);
            value.logic_unlabelled = logic_term(x, &pu, None)?;
        }
    }
    total_grad.accumulate(&lab.features, &d_total);
    value.total = value.bce + weight * (value.logic_labelled + value.logic_unlabelled);
    Ok(ObjectiveGrad {
        value,
        bce: bce_grad,
        logic: logic_grad,
        total: total_grad,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub logic_active: bool,
    #[serde(flatten)]
    pub objective: ObjectiveValue,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    /// Average precision per label on the evaluation set; `None` for labels
    /// without positive examples.
    pub per_label_ap: Vec<Option<f64>>,
    pub mean_ap: f64,
    /// Fraction of (example, clause) pairs falsified after thresholding.
    pub violation_rate: f64,
    /// Logic loss of the raw confidences on the evaluation set.
    pub eval_logic_loss: f64,
    pub curves: Vec<EpochRecord>,
    pub logic_invocations: u64,
}

fn average_precision(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let positives = truth.iter().filter(|&&t| t).count();
    if positives == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if truth[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

/// Fraction of (row, clause) pairs whose thresholded prediction (`p ≥ θ`
/// means the label is on) falsifies the clause.
pub fn violation_rate(p: &Matrix<f64>, cs: &ConstraintSet, threshold: f64) -> f64 {
    let pairs = p.rows() * cs.n_clauses();
    if pairs == 0 {
        return 0.0;
    }
    let mut violated = 0usize;
    let mut bits = vec![false; p.cols()];
    for i in 0..p.rows() {
        for (b, &x) in bits.iter_mut().zip(p.row(i)) {
            *b = x >= threshold;
        }
        violated += cs.clauses().iter().filter(|c| !c.is_satisfied_by(&bits)).count();
    }
    violated as f64 / pairs as f64
}

pub fn evaluate(
    model: &dyn Predictor,
    data: &Dataset,
    cs: &ConstraintSet,
    threshold: f64,
    kind: TNormKind,
) -> Result<EvalReport> {
    let p = model.predict(&data.features);
    if p.shape() != data.labels.shape() {
        return Err(Error::ShapeMismatch(format!(
            "model predicts {:?}, labels are {:?}",
            p.shape(),
            data.labels.shape()
        )));
    }
    let per_label_ap: Vec<Option<f64>> = (0..p.cols())
        .map(|a| {
            let truth: Vec<bool> = (0..p.rows()).map(|i| data.labels.get(i, a) == 1).collect();
            average_precision(&p.column(a), &truth)
        })
        .collect();
    let defined: Vec<f64> = per_label_ap.iter().flatten().copied().collect();
    let mean_ap = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let eval_logic_loss = crate::sparse::logic_loss(&crate::sparse::sparse_goal(cs, &p, kind)?);
    Ok(EvalReport {
        per_label_ap,
        mean_ap,
        violation_rate: violation_rate(&p, cs, threshold),
        eval_logic_loss,
        curves: Vec::new(),
        logic_invocations: 0,
    })
}

/// Trains a linear-sigmoid model and evaluates it on the task's evaluation
/// split.
pub fn train(task: &SyntheticTask, config: &TrainConfig) -> Result<(LinearModel, EvalReport)> {
    config.validate()?;
    let mut model = LinearModel::new(&mut synth::rng(config.seed), task.n_labels(), task.n_features());
    let counter = LogicCounter::default();
    let mut curves = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let logic_active = config.weight > 0.0 && epoch >= config.warmup_epochs;
        let g = objective_grad(
            &model,
            task,
            config.tnorm,
            config.weight,
            logic_active,
            config.use_unlabelled,
            &counter,
        )?;
        if !g.value.total.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.step(&g.total, config.learning_rate);
        curves.push(EpochRecord {
            epoch,
            logic_active,
            objective: g.value,
        });
    }
    if model.weights.as_slice().iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence { epoch: config.epochs });
    }
    let mut report = evaluate(&model, &task.eval, &task.constraints, config.threshold, config.tnorm)?;
    report.curves = curves;
    report.logic_invocations = counter.get();
    Ok((model, report))
}
