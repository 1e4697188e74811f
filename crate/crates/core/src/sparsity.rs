//! Output-magnitude activation sparsity.
//!
//! A neuron is inactive for a token when its output magnitude `‖n_i(x)‖₂`
//! falls below a threshold `ε` (strictly; ties stay active). The relative
//! truncation error — the norm of the summed truncated outputs over the norm
//! of the full FFN output — quantifies what skipping those neurons costs, and
//! per-layer thresholds are calibrated so that its mean over a trace stays
//! under a target bound.
//!
//! Summation conventions: truncated/kept subset sums accumulate over neurons
//! in ascending index order, exactly like the column loop of the forward
//! matvec. Consequently `sparse_forward(ε = 0)` is bit-identical to the full
//! forward pass, and the truncation error at `ε = ∞` on a bias-free layer is
//! exactly 1.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::ffn::FfnWeights;
use crate::real::Real;
use crate::tensor::{l2_norm_slice, quantiles, Matrix, Vector};

/// FFN input vectors for every (token, layer) pair, token-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTrace<T> {
    n_tokens: usize,
    n_layers: usize,
    d_model: usize,
    data: Vec<T>,
}

impl<T: Real> InputTrace<T> {
    pub fn new(n_tokens: usize, n_layers: usize, d_model: usize, data: Vec<T>) -> Result<Self> {
        if n_tokens == 0 || n_layers == 0 || d_model == 0 {
            return Err(CoreError::EmptyInput("input trace".into()));
        }
        if data.len() != n_tokens * n_layers * d_model {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "input trace data length {} != {n_tokens}x{n_layers}x{d_model}",
                data.len()
            )));
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(CoreError::NonFinite("input trace".into()));
        }
        Ok(Self {
            n_tokens,
            n_layers,
            d_model,
            data,
        })
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn input(&self, token: usize, layer: usize) -> &[T] {
        let base = (token * self.n_layers + layer) * self.d_model;
        &self.data[base..base + self.d_model]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// Per-token, per-layer neuron output magnitudes, with the inputs that
/// produced them when exact truncation-error recomputation is needed.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeTrace<T> {
    n_tokens: usize,
    n_layers: usize,
    d_ff: usize,
    magnitudes: Vec<T>,
    inputs: Option<InputTrace<T>>,
}

impl<T: Real> MagnitudeTrace<T> {
    pub fn new(
        n_tokens: usize,
        n_layers: usize,
        d_ff: usize,
        magnitudes: Vec<T>,
        inputs: Option<InputTrace<T>>,
    ) -> Result<Self> {
        if n_tokens == 0 || n_layers == 0 || d_ff == 0 {
            return Err(CoreError::EmptyInput("magnitude trace".into()));
        }
        if magnitudes.len() != n_tokens * n_layers * d_ff {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "magnitude trace length {} != {n_tokens}x{n_layers}x{d_ff}",
                magnitudes.len()
            )));
        }
        if !magnitudes.iter().all(|m| m.is_finite() && *m >= T::ZERO) {
            return Err(CoreError::NonFinite("magnitude trace".into()));
        }
        if let Some(inp) = &inputs {
            if inp.n_tokens != n_tokens || inp.n_layers != n_layers {
                return Err(CoreError::ShapeMismatch(
                    "input trace dims do not match magnitude trace".into(),
                ));
            }
        }
        Ok(Self {
            n_tokens,
            n_layers,
            d_ff,
            magnitudes,
            inputs,
        })
    }

    /// Runs every layer's FFN over the recorded inputs and stores the
    /// resulting magnitudes together with the inputs. `weights[l]` is the
    /// FFN of layer `l`.
    pub fn compute(weights: &[FfnWeights<T>], inputs: InputTrace<T>) -> Result<Self> {
        if weights.len() != inputs.n_layers {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "{} weight sets for {} layers",
                weights.len(),
                inputs.n_layers
            )));
        }
        let d_ff = weights
            .first()
            .ok_or_else(|| CoreError::EmptyInput("weights".into()))?
            .d_ff();
        if weights.iter().any(|w| w.d_ff() != d_ff) {
            return Err(CoreError::ShapeMismatch(
                "all layers must share d_ff in one trace".into(),
            ));
        }
        let mut magnitudes = Vec::with_capacity(inputs.n_tokens * inputs.n_layers * d_ff);
        for token in 0..inputs.n_tokens {
            for (layer, w) in weights.iter().enumerate() {
                let x = Vector::from_raw(inputs.input(token, layer).to_vec());
                let eval = w.evaluate(&x)?;
                magnitudes.extend_from_slice(&eval.magnitudes);
            }
        }
        Self::new(
            inputs.n_tokens,
            inputs.n_layers,
            d_ff,
            magnitudes,
            Some(inputs),
        )
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn d_ff(&self) -> usize {
        self.d_ff
    }

    pub fn inputs(&self) -> Option<&InputTrace<T>> {
        self.inputs.as_ref()
    }

    /// Magnitudes of one (token, layer) pair, one entry per neuron.
    pub fn magnitudes(&self, token: usize, layer: usize) -> &[T] {
        let base = (token * self.n_layers + layer) * self.d_ff;
        &self.magnitudes[base..base + self.d_ff]
    }

    pub fn all_magnitudes(&self) -> &[T] {
        &self.magnitudes
    }

    /// All magnitudes of one layer across tokens, in token order.
    pub fn layer_magnitudes(&self, layer: usize) -> Result<Vec<T>> {
        if layer >= self.n_layers {
            return Err(CoreError::IndexOutOfRange {
                index: layer,
                len: self.n_layers,
            });
        }
        let mut out = Vec::with_capacity(self.n_tokens * self.d_ff);
        for token in 0..self.n_tokens {
            out.extend_from_slice(self.magnitudes(token, layer));
        }
        Ok(out)
    }

    fn layer_input(&self, token: usize, layer: usize) -> Result<Vector<T>> {
        let inputs = self.inputs.as_ref().ok_or_else(|| {
            CoreError::InvalidArgument(
                "trace carries no inputs; truncation-error recomputation needs them".into(),
            )
        })?;
        Ok(Vector::from_raw(inputs.input(token, layer).to_vec()))
    }
}

/// How a threshold table was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdProvenance {
    Algorithm1,
    ExactScan,
    Manual,
}

impl ThresholdProvenance {
    pub fn name(self) -> &'static str {
        match self {
            ThresholdProvenance::Algorithm1 => "alg1",
            ThresholdProvenance::ExactScan => "exact",
            ThresholdProvenance::Manual => "manual",
        }
    }
}

/// Per-layer magnitude thresholds calibrated to a common error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable<T> {
    pub epsilons: Vec<T>,
    pub bound: T,
    pub provenance: ThresholdProvenance,
}

impl<T: Real> ThresholdTable<T> {
    pub fn new(epsilons: Vec<T>, bound: T, provenance: ThresholdProvenance) -> Result<Self> {
        if epsilons.iter().any(|e| !e.is_finite() || *e < T::ZERO) {
            return Err(CoreError::InvalidArgument("thresholds must be >= 0".into()));
        }
        if !(T::ZERO..=T::ONE).contains(&bound) {
            return Err(CoreError::InvalidArgument(
                "bound must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            epsilons,
            bound,
            provenance,
        })
    }
}

/// Sum of `W_out[:, j] * coeff[j]` over neurons `j` with `take(j)` true,
/// accumulated in ascending `j` — the same order as the forward matvec.
fn subset_sum<T: Real>(
    w_out: &Matrix<T>,
    coefficients: &[T],
    mut take: impl FnMut(usize) -> bool,
) -> Vec<T> {
    let mut acc = vec![T::ZERO; w_out.rows()];
    for (j, &c) in coefficients.iter().enumerate() {
        if take(j) {
            for (row, slot) in acc.iter_mut().enumerate() {
                *slot += w_out.get(row, j) * c;
            }
        }
    }
    acc
}

fn add_bias<T: Real>(mut v: Vec<T>, bias: Option<&Vector<T>>) -> Vec<T> {
    if let Some(b) = bias {
        for (slot, &bi) in v.iter_mut().zip(b.iter()) {
            *slot += bi;
        }
    }
    v
}

/// Per-token relative truncation error; `None` when `‖FFN(x)‖ = 0`.
fn token_cett<T: Real>(w: &FfnWeights<T>, x: &Vector<T>, eps: T) -> Result<Option<T>> {
    let eval = w.evaluate(x)?;
    let mags = &eval.magnitudes;
    let truncated = subset_sum(w.w_out(), &eval.coefficients, |j| mags[j] < eps);
    let full = subset_sum(w.w_out(), &eval.coefficients, |_| true);
    let denominator = l2_norm_slice(&add_bias(full, w.b_out()));
    if denominator == T::ZERO {
        return Ok(None);
    }
    Ok(Some(l2_norm_slice(&truncated) / denominator))
}

/// Relative error of truncating all neurons with magnitude strictly below
/// `eps`: `‖Σ_{i∈D} n_i(x)‖₂ / ‖FFN(x)‖₂` with `D = {i : ‖n_i(x)‖₂ < ε}`.
/// Returns 0 when the full output is exactly zero.
pub fn cett<T: Real>(w: &FfnWeights<T>, x: &Vector<T>, eps: T) -> Result<T> {
    if eps < T::ZERO {
        return Err(CoreError::InvalidArgument("eps must be >= 0".into()));
    }
    Ok(token_cett(w, x, eps)?.unwrap_or(T::ZERO))
}

/// Fraction of neurons whose magnitude is strictly below `eps`.
pub fn sparsity_ratio<T: Real>(magnitudes: &[T], eps: T) -> T {
    if magnitudes.is_empty() {
        return T::ZERO;
    }
    let below = magnitudes.iter().filter(|&&m| m < eps).count();
    T::from_usize(below) / T::from_usize(magnitudes.len())
}

/// Forward pass skipping every neuron with magnitude strictly below `eps`.
/// At `eps = 0` this is bit-identical to the full forward pass.
pub fn sparse_forward<T: Real>(w: &FfnWeights<T>, x: &Vector<T>, eps: T) -> Result<Vector<T>> {
    if eps < T::ZERO {
        return Err(CoreError::InvalidArgument("eps must be >= 0".into()));
    }
    let eval = w.evaluate(x)?;
    let mags = &eval.magnitudes;
    let kept = subset_sum(w.w_out(), &eval.coefficients, |j| mags[j] >= eps);
    Ok(Vector::from_raw(add_bias(kept, w.b_out())))
}

/// Indices of active neurons (magnitude `>= eps`), ascending.
pub fn active_set<T: Real>(magnitudes: &[T], eps: T) -> Vec<u32> {
    magnitudes
        .iter()
        .enumerate()
        .filter(|(_, &m)| m >= eps)
        .map(|(i, _)| i as u32)
        .collect()
}

/// Fraction of neurons whose activation value is exactly zero — the
/// traditional sparsity notion that magnitude thresholds generalize.
pub fn zero_activation_ratio<T: Real>(w: &FfnWeights<T>, x: &Vector<T>) -> Result<T> {
    let eval = w.evaluate(x)?;
    let zeros = eval.activations.iter().filter(|&&a| a == T::ZERO).count();
    Ok(T::from_usize(zeros) / T::from_usize(w.d_ff()))
}

fn check_layer<T: Real>(trace: &MagnitudeTrace<T>, layer: usize) -> Result<()> {
    if layer >= trace.n_layers() {
        return Err(CoreError::IndexOutOfRange {
            index: layer,
            len: trace.n_layers(),
        });
    }
    Ok(())
}

fn check_bound<T: Real>(bound: T) -> Result<()> {
    if !(T::ZERO..=T::ONE).contains(&bound) {
        return Err(CoreError::InvalidArgument(
            "bound must lie in [0, 1]".into(),
        ));
    }
    Ok(())
}

/// Candidate thresholds for one layer: sample quantiles of all its recorded
/// magnitudes.
pub fn layer_candidates<T: Real>(
    trace: &MagnitudeTrace<T>,
    layer: usize,
    count: usize,
) -> Result<Vec<T>> {
    check_layer(trace, layer)?;
    quantiles(&trace.layer_magnitudes(layer)?, count)
}

/// Mean per-token truncation error of one layer at threshold `eps`. Tokens
/// whose full FFN output is exactly zero are excluded from the mean; if every
/// token is excluded the mean is 0.
pub fn mean_cett_for_threshold<T: Real>(
    w: &FfnWeights<T>,
    trace: &MagnitudeTrace<T>,
    layer: usize,
    eps: T,
) -> Result<T> {
    check_layer(trace, layer)?;
    let mut sum = 0.0f64;
    let mut eligible = 0usize;
    for token in 0..trace.n_tokens() {
        let x = trace.layer_input(token, layer)?;
        if let Some(c) = token_cett(w, &x, eps)? {
            sum += c.to_f64();
            eligible += 1;
        }
    }
    Ok(T::from_f64(if eligible == 0 {
        0.0
    } else {
        sum / eligible as f64
    }))
}

/// Mean truncation error for every candidate threshold, re-using one layer
/// evaluation per token. Produces bit-identical values to calling
/// [`mean_cett_for_threshold`] per candidate.
pub fn candidate_cett_curve<T: Real>(
    w: &FfnWeights<T>,
    trace: &MagnitudeTrace<T>,
    layer: usize,
    candidates: &[T],
) -> Result<Vec<T>> {
    check_layer(trace, layer)?;
    let mut sums = vec![0.0f64; candidates.len()];
    let mut eligible = 0usize;
    for token in 0..trace.n_tokens() {
        let x = trace.layer_input(token, layer)?;
        let eval = w.evaluate(&x)?;
        let mags = &eval.magnitudes;
        let full = subset_sum(w.w_out(), &eval.coefficients, |_| true);
        let denominator = l2_norm_slice(&add_bias(full, w.b_out()));
        if denominator == T::ZERO {
            continue;
        }
        eligible += 1;
        for (slot, &eps) in sums.iter_mut().zip(candidates.iter()) {
            let truncated = subset_sum(w.w_out(), &eval.coefficients, |j| mags[j] < eps);
            *slot += (l2_norm_slice(&truncated) / denominator).to_f64();
        }
    }
    Ok(sums
        .into_iter()
        .map(|s| {
            T::from_f64(if eligible == 0 {
                0.0
            } else {
                s / eligible as f64
            })
        })
        .collect())
}

/// Threshold search by binary search over the candidate quantiles: probe the
/// middle candidate, and on success record it and move up, otherwise move
/// down. Correct whenever the candidate-wise mean error is monotone in the
/// threshold; see [`find_threshold_exact`] for the assumption-free scan.
/// Returns 0 when no candidate is accepted.
pub fn find_threshold_alg1<T: Real>(
    w: &FfnWeights<T>,
    trace: &MagnitudeTrace<T>,
    layer: usize,
    bound: T,
    candidate_count: usize,
) -> Result<T> {
    check_bound(bound)?;
    let candidates = layer_candidates(trace, layer, candidate_count)?;
    let mut low: i64 = 0;
    let mut high: i64 = candidates.len() as i64 - 1;
    let mut best = T::ZERO;
    while low <= high {
        let mid = (low + high) / 2;
        let threshold = candidates[mid as usize];
        let mean = mean_cett_for_threshold(w, trace, layer, threshold)?;
        if mean <= bound {
            best = threshold;
            low = mid + 1;
        } else {
            high = mid - 1;
        }
    }
    Ok(best)
}

/// Linear scan over all candidates: the largest one whose mean truncation
/// error stays within `bound`, or 0 when none qualifies. Costs one full
/// error evaluation per candidate, but needs no monotonicity assumption.
pub fn find_threshold_exact<T: Real>(
    w: &FfnWeights<T>,
    trace: &MagnitudeTrace<T>,
    layer: usize,
    bound: T,
    candidate_count: usize,
) -> Result<T> {
    check_bound(bound)?;
    let candidates = layer_candidates(trace, layer, candidate_count)?;
    let curve = candidate_cett_curve(w, trace, layer, &candidates)?;
    let mut best = T::ZERO;
    for (&threshold, &mean) in candidates.iter().zip(curve.iter()) {
        if mean <= bound {
            best = threshold; // candidates are non-decreasing
        }
    }
    Ok(best)
}

/// Calibrate one threshold per layer.
pub fn calibrate<T: Real>(
    weights: &[FfnWeights<T>],
    trace: &MagnitudeTrace<T>,
    bound: T,
    candidate_count: usize,
    provenance: ThresholdProvenance,
) -> Result<ThresholdTable<T>> {
    if weights.len() != trace.n_layers() {
        return Err(CoreError::ShapeMismatch(alloc::format!(
            "{} weight sets for {} layers",
            weights.len(),
            trace.n_layers()
        )));
    }
    let mut epsilons = Vec::with_capacity(weights.len());
    for (layer, w) in weights.iter().enumerate() {
        let eps = match provenance {
            ThresholdProvenance::Algorithm1 => {
                find_threshold_alg1(w, trace, layer, bound, candidate_count)?
            }
            ThresholdProvenance::ExactScan => {
                find_threshold_exact(w, trace, layer, bound, candidate_count)?
            }
            ThresholdProvenance::Manual => {
                return Err(CoreError::InvalidArgument(
                    "manual tables are built directly, not calibrated".into(),
                ))
            }
        };
        epsilons.push(eps);
    }
    ThresholdTable::new(epsilons, bound, provenance)
}

/// Per-layer and overall sparsity/error summary of a trace under a
/// threshold table.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityReport {
    /// Mean sparsity ratio per layer (averaged over tokens).
    pub per_layer_sparsity: Vec<f64>,
    /// Mean truncation error per layer (averaged over eligible tokens).
    pub per_layer_cett: Vec<f64>,
    /// Mean of the per-layer sparsity means.
    pub overall_sparsity: f64,
    /// Mean of the per-layer error means.
    pub overall_cett: f64,
    pub thresholds: Vec<f64>,
    pub bound: f64,
}

/// Sparsity ratios and mean truncation errors under `table`, averaged per
/// token, then across tokens, then across layers, in that order.
pub fn summarize<T: Real>(
    weights: &[FfnWeights<T>],
    trace: &MagnitudeTrace<T>,
    table: &ThresholdTable<T>,
) -> Result<SparsityReport> {
    if weights.len() != trace.n_layers() || table.epsilons.len() != trace.n_layers() {
        return Err(CoreError::ShapeMismatch(
            "weights/thresholds/trace layer counts differ".into(),
        ));
    }
    let mut per_layer_sparsity = Vec::with_capacity(trace.n_layers());
    let mut per_layer_cett = Vec::with_capacity(trace.n_layers());
    for (layer, w) in weights.iter().enumerate() {
        let eps = table.epsilons[layer];
        let mut ratio_sum = 0.0f64;
        for token in 0..trace.n_tokens() {
            ratio_sum += sparsity_ratio(trace.magnitudes(token, layer), eps).to_f64();
        }
        per_layer_sparsity.push(ratio_sum / trace.n_tokens() as f64);
        per_layer_cett.push(mean_cett_for_threshold(w, trace, layer, eps)?.to_f64());
    }
    let layers = trace.n_layers() as f64;
    let overall_sparsity = per_layer_sparsity.iter().sum::<f64>() / layers;
    let overall_cett = per_layer_cett.iter().sum::<f64>() / layers;
    Ok(SparsityReport {
        per_layer_sparsity,
        per_layer_cett,
        overall_sparsity,
        overall_cett,
        thresholds: table.epsilons.iter().map(|e| e.to_f64()).collect(),
        bound: table.bound.to_f64(),
    })
}
