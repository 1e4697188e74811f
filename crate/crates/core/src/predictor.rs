//! Low-rank activation predictor.
//!
//! A two-layer network `ŷ = sigmoid(W₂(W₁x + b₁) + b₂)` scores every neuron
//! of an FFN before the FFN runs; neurons the predictor marks inactive can be
//! skipped. The rank `r` of the factorization is chosen so the predictor
//! costs a few percent of the FFN it guards. Labels come from recorded
//! magnitude traces: a neuron counts as active when its output magnitude
//! reaches the layer threshold.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::ffn::sigmoid;
use crate::real::Real;
use crate::rng::DetRng;
use crate::sparsity::MagnitudeTrace;
use crate::tensor::{matvec, matvec_transposed, Matrix, Vector};

/// Parameters of the score network.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams<T> {
    /// `r × d_model`.
    pub w1: Matrix<T>,
    /// `r`.
    pub b1: Vector<T>,
    /// `d_ff × r`.
    pub w2: Matrix<T>,
    /// `d_ff`.
    pub b2: Vector<T>,
}

impl<T: Real> PredictorParams<T> {
    pub fn new(w1: Matrix<T>, b1: Vector<T>, w2: Matrix<T>, b2: Vector<T>) -> Result<Self> {
        let r = w1.rows();
        if b1.len() != r || w2.cols() != r || b2.len() != w2.rows() {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "predictor dims inconsistent: w1 {}x{}, b1 {}, w2 {}x{}, b2 {}",
                w1.rows(),
                w1.cols(),
                b1.len(),
                w2.rows(),
                w2.cols(),
                b2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn rank(&self) -> usize {
        self.w1.rows()
    }

    pub fn d_model(&self) -> usize {
        self.w1.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.w2.rows()
    }

    pub fn param_count(&self) -> usize {
        self.rank() * self.d_model() + self.rank() + self.d_ff() * self.rank() + self.d_ff()
    }

    /// Rank that puts the predictor's matrix parameters at roughly 6% of an
    /// FFN with `matrix_count` weight matrices; at least 1.
    pub fn default_rank(d_model: usize, d_ff: usize, matrix_count: usize) -> usize {
        let ffn_params = (d_model * d_ff * matrix_count) as f64;
        let per_rank = (d_model + d_ff) as f64;
        let r = (0.06 * ffn_params / per_rank) as usize;
        r.max(1)
    }

    /// Gaussian init scaled like the FFN layers; biases start at zero.
    pub fn random(d_model: usize, d_ff: usize, rank: usize, rng: &mut DetRng) -> Self {
        let s1 = T::from_f64(1.0 / libm::sqrt(d_model as f64));
        let s2 = T::from_f64(1.0 / libm::sqrt(rank as f64));
        Self {
            w1: Matrix::from_fn(rank, d_model, |_, _| rng.standard_normal::<T>() * s1),
            b1: Vector::zeros(rank),
            w2: Matrix::from_fn(d_ff, rank, |_, _| rng.standard_normal::<T>() * s2),
            b2: Vector::zeros(d_ff),
        }
    }
}

/// Per-neuron activation scores in (0, 1).
pub fn predict_scores<T: Real>(p: &PredictorParams<T>, x: &Vector<T>) -> Result<Vector<T>> {
    if x.len() != p.d_model() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "input has len {}, predictor expects {}",
            x.len(),
            p.d_model()
        )));
    }
    let logits = logits(p, x)?;
    Ok(Vector::from_raw(
        logits.iter().map(|&z| sigmoid(z)).collect(),
    ))
}

fn logits<T: Real>(p: &PredictorParams<T>, x: &Vector<T>) -> Result<Vector<T>> {
    let mut hidden = matvec(&p.w1, x)?;
    for (h, &b) in hidden.as_mut_slice().iter_mut().zip(p.b1.iter()) {
        *h += b;
    }
    let mut out = matvec(&p.w2, &hidden)?;
    for (o, &b) in out.as_mut_slice().iter_mut().zip(p.b2.iter()) {
        *o += b;
    }
    Ok(out)
}

/// Predicted-active neuron set plus the raw scores it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<T> {
    /// Ascending neuron indices predicted active.
    pub active: Vec<u32>,
    pub scores: Vector<T>,
}

use crate::util::guarded_ceil_fraction;

/// The `⌈fraction · d_ff⌉` highest-scoring neurons; score ties break toward
/// the lower index.
pub fn select_topk<T: Real>(scores: &Vector<T>, fraction: f64) -> Result<SelectionResult<T>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CoreError::InvalidArgument(
            "top-k fraction must lie in (0, 1]".into(),
        ));
    }
    let k = guarded_ceil_fraction(fraction, scores.len()).min(scores.len());
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let sa = scores.as_slice()[a as usize];
        let sb = scores.as_slice()[b as usize];
        sb.total_cmp(&sa).then(a.cmp(&b))
    });
    let mut active: Vec<u32> = order[..k].to_vec();
    active.sort_unstable();
    Ok(SelectionResult {
        active,
        scores: scores.clone(),
    })
}

/// Neurons with score strictly greater than 0.5.
pub fn select_threshold<T: Real>(scores: &Vector<T>) -> SelectionResult<T> {
    let half = T::from_f64(0.5);
    let active = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > half)
        .map(|(i, _)| i as u32)
        .collect();
    SelectionResult {
        active,
        scores: scores.clone(),
    }
}

/// Mean binary cross-entropy, with scores clamped to `[1e-12, 1 − 1e-12]`
/// inside the logarithms.
pub fn bce_loss<T: Real>(scores: &Vector<T>, labels: &[bool]) -> Result<T> {
    if scores.len() != labels.len() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let eps = T::from_f64(1e-12);
    let one_minus_eps = T::ONE - eps;
    let mut total = T::ZERO;
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let s = s.max(eps).min(one_minus_eps);
        total += if y { s.ln() } else { (T::ONE - s).ln() };
    }
    Ok(-total / T::from_usize(labels.len()))
}

/// Training data: FFN inputs paired with boolean activation labels
/// (`label[i] = magnitude_i >= ε`).
#[derive(Debug, Clone)]
pub struct ActivationDataset<T> {
    pub inputs: Vec<Vector<T>>,
    pub labels: Vec<Vec<bool>>,
}

impl<T: Real> ActivationDataset<T> {
    pub fn new(inputs: Vec<Vector<T>>, labels: Vec<Vec<bool>>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(CoreError::EmptyInput("dataset".into()));
        }
        if inputs.len() != labels.len() {
            return Err(CoreError::ShapeMismatch(
                "one label vector per input required".into(),
            ));
        }
        let d_ff = labels[0].len();
        if labels.iter().any(|l| l.len() != d_ff) {
            return Err(CoreError::ShapeMismatch("label lengths differ".into()));
        }
        Ok(Self { inputs, labels })
    }

    /// One sample per token of `layer`, labeled at threshold `eps`.
    pub fn from_trace(trace: &MagnitudeTrace<T>, layer: usize, eps: T) -> Result<Self> {
        let inputs_trace = trace.inputs().ok_or_else(|| {
            CoreError::InvalidArgument("dataset construction needs trace inputs".into())
        })?;
        if layer >= trace.n_layers() {
            return Err(CoreError::IndexOutOfRange {
                index: layer,
                len: trace.n_layers(),
            });
        }
        let mut inputs = Vec::with_capacity(trace.n_tokens());
        let mut labels = Vec::with_capacity(trace.n_tokens());
        for token in 0..trace.n_tokens() {
            inputs.push(Vector::from_raw(inputs_trace.input(token, layer).to_vec()));
            labels.push(
                trace
                    .magnitudes(token, layer)
                    .iter()
                    .map(|&m| m >= eps)
                    .collect(),
            );
        }
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Split off the first `n` samples (e.g. a held-out slice).
    pub fn split_at(mut self, n: usize) -> (Self, Self) {
        let tail_inputs = self.inputs.split_off(n.min(self.inputs.len()));
        let tail_labels = self.labels.split_off(n.min(self.labels.len()));
        (
            Self {
                inputs: self.inputs,
                labels: self.labels,
            },
            Self {
                inputs: tail_inputs,
                labels: tail_labels,
            },
        )
    }
}

/// Optimizer settings for [`train_predictor`].
#[derive(Debug, Clone)]
pub struct PredictorTrainConfig {
    pub rank: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self {
            rank: 1,
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-2,
            momentum: 0.9,
            seed: 0,
        }
    }
}

/// Training result with probe losses measured on the full dataset before
/// and after.
#[derive(Debug, Clone)]
pub struct PredictorTrainOutcome<T> {
    pub params: PredictorParams<T>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Mini-batch gradient descent with momentum on the mean BCE objective.
/// Deterministic for a given config; gradients are the usual closed forms of
/// the sigmoid/BCE composition.
pub fn train_predictor<T: Real>(
    data: &ActivationDataset<T>,
    cfg: &PredictorTrainConfig,
) -> Result<PredictorTrainOutcome<T>> {
    if cfg.batch_size == 0 || cfg.rank == 0 {
        return Err(CoreError::InvalidArgument(
            "batch_size and rank must be >= 1".into(),
        ));
    }
    let d_model = data.inputs[0].len();
    let d_ff = data.labels[0].len();
    let mut rng = DetRng::new(cfg.seed);
    let mut params = PredictorParams::<T>::random(d_model, d_ff, cfg.rank, &mut rng);

    let initial_loss = dataset_loss(&params, data)?;
    let mut grads = GradBuffers::zeros(cfg.rank, d_model, d_ff);
    let mut vel = GradBuffers::zeros(cfg.rank, d_model, d_ff);
    let lr = T::from_f64(cfg.learning_rate);
    let momentum = T::from_f64(cfg.momentum);

    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            let inv = T::from_f64(1.0 / batch.len() as f64);
            for &idx in batch {
                accumulate_sample_grad(
                    &params,
                    &data.inputs[idx],
                    &data.labels[idx],
                    inv,
                    &mut grads,
                )?;
            }
            if !grads.is_finite() {
                return Err(CoreError::Divergence { step: epoch });
            }
            vel.step(&mut params, &grads, lr, momentum);
        }
    }

    let final_loss = dataset_loss(&params, data)?;
    if !final_loss.is_finite() {
        return Err(CoreError::Divergence { step: cfg.epochs });
    }
    Ok(PredictorTrainOutcome {
        params,
        initial_loss,
        final_loss,
    })
}

/// Mean BCE of the predictor over a whole dataset.
pub fn dataset_loss<T: Real>(
    params: &PredictorParams<T>,
    data: &ActivationDataset<T>,
) -> Result<f64> {
    let mut total = 0.0f64;
    for (x, y) in data.inputs.iter().zip(data.labels.iter()) {
        total += bce_loss(&predict_scores(params, x)?, y)?.to_f64();
    }
    Ok(total / data.len() as f64)
}

/// Gradients mirroring the parameter fields.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorGradients<T> {
    pub w1: Matrix<T>,
    pub b1: Vector<T>,
    pub w2: Matrix<T>,
    pub b2: Vector<T>,
}

/// Analytic gradient of the batch objective (mean over samples of the
/// per-sample mean BCE) with respect to every parameter.
pub fn bce_gradients<T: Real>(
    params: &PredictorParams<T>,
    inputs: &[Vector<T>],
    labels: &[Vec<bool>],
) -> Result<PredictorGradients<T>> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(CoreError::ShapeMismatch(
            "need equally many inputs and label vectors".into(),
        ));
    }
    let mut grads = GradBuffers::zeros(params.rank(), params.d_model(), params.d_ff());
    let inv = T::from_f64(1.0 / inputs.len() as f64);
    for (x, y) in inputs.iter().zip(labels.iter()) {
        accumulate_sample_grad(params, x, y, inv, &mut grads)?;
    }
    Ok(PredictorGradients {
        w1: Matrix::from_raw(params.rank(), params.d_model(), grads.w1),
        b1: Vector::from_raw(grads.b1),
        w2: Matrix::from_raw(params.d_ff(), params.rank(), grads.w2),
        b2: Vector::from_raw(grads.b2),
    })
}

/// Gradient of the per-sample mean BCE w.r.t. every parameter, scaled by
/// `scale`, added into `grads`. Uses `d loss / d logit_i = (ŷ_i − y_i)/d_ff`.
fn accumulate_sample_grad<T: Real>(
    params: &PredictorParams<T>,
    x: &Vector<T>,
    labels: &[bool],
    scale: T,
    grads: &mut GradBuffers<T>,
) -> Result<()> {
    if labels.len() != params.d_ff() {
        return Err(CoreError::ShapeMismatch("label length != d_ff".into()));
    }
    let mut hidden = matvec(&params.w1, x)?;
    for (h, &b) in hidden.as_mut_slice().iter_mut().zip(params.b1.iter()) {
        *h += b;
    }
    let mut logit = matvec(&params.w2, &hidden)?;
    for (o, &b) in logit.as_mut_slice().iter_mut().zip(params.b2.iter()) {
        *o += b;
    }
    let inv_dff = T::from_f64(1.0 / params.d_ff() as f64);
    let dlogit = Vector::from_raw(
        logit
            .iter()
            .zip(labels.iter())
            .map(|(&z, &y)| {
                let target = if y { T::ONE } else { T::ZERO };
                (sigmoid(z) - target) * inv_dff * scale
            })
            .collect(),
    );
    // w2 += dlogit ⊗ hidden; b2 += dlogit
    for i in 0..params.d_ff() {
        let d = dlogit.as_slice()[i];
        grads.b2[i] += d;
        let row = &mut grads.w2[i * params.rank()..(i + 1) * params.rank()];
        for (slot, &h) in row.iter_mut().zip(hidden.iter()) {
            *slot += d * h;
        }
    }
    let dhidden = matvec_transposed(&params.w2, &dlogit)?;
    for i in 0..params.rank() {
        let d = dhidden.as_slice()[i];
        grads.b1[i] += d;
        let row = &mut grads.w1[i * params.d_model()..(i + 1) * params.d_model()];
        for (slot, &xv) in row.iter_mut().zip(x.iter()) {
            *slot += d * xv;
        }
    }
    Ok(())
}

struct GradBuffers<T> {
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
}

impl<T: Real> GradBuffers<T> {
    fn zeros(rank: usize, d_model: usize, d_ff: usize) -> Self {
        Self {
            w1: vec![T::ZERO; rank * d_model],
            b1: vec![T::ZERO; rank],
            w2: vec![T::ZERO; d_ff * rank],
            b2: vec![T::ZERO; d_ff],
        }
    }

    fn clear(&mut self) {
        for buf in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            buf.iter_mut().for_each(|v| *v = T::ZERO);
        }
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.b2.iter().all(|v| v.is_finite())
    }

    fn step(
        &mut self,
        params: &mut PredictorParams<T>,
        grads: &GradBuffers<T>,
        lr: T,
        momentum: T,
    ) {
        fn update<T: Real>(vel: &mut [T], param: &mut [T], grad: &[T], lr: T, momentum: T) {
            for ((v, p), &g) in vel.iter_mut().zip(param.iter_mut()).zip(grad.iter()) {
                *v = momentum * *v - lr * g;
                *p += *v;
            }
        }
        update(
            &mut self.w1,
            params.w1.as_mut_slice(),
            &grads.w1,
            lr,
            momentum,
        );
        update(
            &mut self.b1,
            params.b1.as_mut_slice(),
            &grads.b1,
            lr,
            momentum,
        );
        update(
            &mut self.w2,
            params.w2.as_mut_slice(),
            &grads.w2,
            lr,
            momentum,
        );
        update(
            &mut self.b2,
            params.b2.as_mut_slice(),
            &grads.b2,
            lr,
            momentum,
        );
    }
}

/// Recall and prediction sparsity of one prediction against the true active
/// set. Recall is `None` when nothing is truly active (such tokens are
/// skipped in averages).
pub fn predictor_metrics(predicted: &[u32], truth: &[u32], d_ff: usize) -> (Option<f64>, f64) {
    let prediction_sparsity = (d_ff - predicted.len()) as f64 / d_ff as f64;
    if truth.is_empty() {
        return (None, prediction_sparsity);
    }
    // Both sets are ascending index lists; intersect by merge.
    let mut hits = 0usize;
    let mut i = 0;
    let mut j = 0;
    while i < predicted.len() && j < truth.len() {
        match predicted[i].cmp(&truth[j]) {
            core::cmp::Ordering::Less => i += 1,
            core::cmp::Ordering::Greater => j += 1,
            core::cmp::Ordering::Equal => {
                hits += 1;
                i += 1;
                j += 1;
            }
        }
    }
    (Some(hits as f64 / truth.len() as f64), prediction_sparsity)
}
