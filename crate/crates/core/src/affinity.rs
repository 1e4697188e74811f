//! Hardware-affinity analytics over boolean activation traces.
//!
//! Works on the per-token sets of active neurons: how much of the current
//! token's active set was already active in the previous `k` tokens (reuse
//! ratio), which neuron pairs fire together (co-activation matrix and
//! top-average gap), how concentrated activation frequency is (hot-neuron
//! CDF), and how many parameter bytes a sliding-window cache would actually
//! move (I/O simulation).

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::sparsity::{active_set, MagnitudeTrace, ThresholdTable};
use crate::util::guarded_ceil_fraction;

/// Dense co-activation matrices above this width would not fit in memory;
/// use [`coactivation_against_candidates`] instead.
pub const DENSE_COACTIVATION_CAP: usize = 16384;

/// Ordered per-token active-neuron sets for each layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSetTrace {
    n_tokens: usize,
    n_layers: usize,
    d_ff: usize,
    /// `(token * n_layers + layer)` -> ascending neuron indices.
    sets: Vec<Vec<u32>>,
}

impl ActivationSetTrace {
    /// `sets` is token-major, then layer-major. Each set is normalized to
    /// ascending unique indices; indices must be below `d_ff`.
    pub fn new(
        n_tokens: usize,
        n_layers: usize,
        d_ff: usize,
        mut sets: Vec<Vec<u32>>,
    ) -> Result<Self> {
        if n_tokens == 0 || n_layers == 0 || d_ff == 0 {
            return Err(CoreError::EmptyInput("activation-set trace".into()));
        }
        if sets.len() != n_tokens * n_layers {
            return Err(CoreError::ShapeMismatch(alloc::format!(
                "{} sets != {n_tokens} tokens x {n_layers} layers",
                sets.len()
            )));
        }
        for set in &mut sets {
            set.sort_unstable();
            set.dedup();
            if let Some(&max) = set.last() {
                if max as usize >= d_ff {
                    return Err(CoreError::IndexOutOfRange {
                        index: max as usize,
                        len: d_ff,
                    });
                }
            }
        }
        Ok(Self {
            n_tokens,
            n_layers,
            d_ff,
            sets,
        })
    }

    /// Thresholds a magnitude trace into activation sets (`magnitude >= ε`
    /// is active, per layer).
    pub fn from_magnitudes<T: Real>(
        trace: &MagnitudeTrace<T>,
        table: &ThresholdTable<T>,
    ) -> Result<Self> {
        if table.epsilons.len() != trace.n_layers() {
            return Err(CoreError::ShapeMismatch(
                "threshold table layer count != trace layer count".into(),
            ));
        }
        let mut sets = Vec::with_capacity(trace.n_tokens() * trace.n_layers());
        for token in 0..trace.n_tokens() {
            for layer in 0..trace.n_layers() {
                sets.push(active_set(
                    trace.magnitudes(token, layer),
                    table.epsilons[layer],
                ));
            }
        }
        Self::new(trace.n_tokens(), trace.n_layers(), trace.d_ff(), sets)
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

    pub fn set(&self, token: usize, layer: usize) -> &[u32] {
        &self.sets[token * self.n_layers + layer]
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.n_layers {
            return Err(CoreError::IndexOutOfRange {
                index: layer,
                len: self.n_layers,
            });
        }
        Ok(())
    }

    /// Mean activation ratio `|A_i| / d_ff` of one layer over all tokens.
    pub fn activation_ratio(&self, layer: usize) -> Result<f64> {
        self.check_layer(layer)?;
        let total: usize = (0..self.n_tokens).map(|t| self.set(t, layer).len()).sum();
        Ok(total as f64 / (self.n_tokens * self.d_ff) as f64)
    }
}

/// Per-token overlap fraction with the union of the previous `k` active
/// sets; `None` for the first `k` tokens and for tokens with an empty set.
pub fn reuse_overlaps(
    trace: &ActivationSetTrace,
    layer: usize,
    k: usize,
) -> Result<Vec<Option<f64>>> {
    trace.check_layer(layer)?;
    if k == 0 {
        return Err(CoreError::InvalidArgument("window k must be >= 1".into()));
    }
    if trace.n_tokens() < k + 1 {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "trace has {} tokens, need at least {}",
            trace.n_tokens(),
            k + 1
        )));
    }
    let mut in_union = vec![false; trace.d_ff()];
    let mut out = Vec::with_capacity(trace.n_tokens());
    for token in 0..trace.n_tokens() {
        if token < k {
            out.push(None);
        } else {
            for j in 1..=k {
                for &i in trace.set(token - j, layer) {
                    in_union[i as usize] = true;
                }
            }
            let current = trace.set(token, layer);
            if current.is_empty() {
                out.push(None);
            } else {
                let hit = current.iter().filter(|&&i| in_union[i as usize]).count();
                out.push(Some(hit as f64 / current.len() as f64));
            }
            for j in 1..=k {
                for &i in trace.set(token - j, layer) {
                    in_union[i as usize] = false;
                }
            }
        }
    }
    Ok(out)
}

/// Mean reuse overlap of one layer over eligible tokens (0 when no token is
/// eligible).
pub fn reuse_ratio(trace: &ActivationSetTrace, layer: usize, k: usize) -> Result<f64> {
    let overlaps = reuse_overlaps(trace, layer, k)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for o in overlaps.into_iter().flatten() {
        sum += o;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Per-layer reuse ratios and their mean across layers.
pub fn reuse_report(trace: &ActivationSetTrace, k: usize) -> Result<(Vec<f64>, f64)> {
    let per_layer: Vec<f64> = (0..trace.n_layers())
        .map(|l| reuse_ratio(trace, l, k))
        .collect::<Result<_>>()?;
    let overall = per_layer.iter().sum::<f64>() / per_layer.len() as f64;
    Ok((per_layer, overall))
}

/// Row-normalized co-activation frequencies: entry `(i, j)` is the number of
/// tokens where both fired divided by the number where `i` fired. Diagonal
/// is zero; rows of never-activated neurons are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoactivationMatrix {
    d_ff: usize,
    values: Vec<f64>,
    activation_counts: Vec<u64>,
}

impl CoactivationMatrix {
    pub fn d_ff(&self) -> usize {
        self.d_ff
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d_ff + j]
    }

    pub fn activation_counts(&self) -> &[u64] {
        &self.activation_counts
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d_ff..(i + 1) * self.d_ff]
    }
}

/// Dense co-activation matrix of one layer; capped at
/// [`DENSE_COACTIVATION_CAP`] neurons.
pub fn coactivation_matrix(trace: &ActivationSetTrace, layer: usize) -> Result<CoactivationMatrix> {
    trace.check_layer(layer)?;
    let d_ff = trace.d_ff();
    if d_ff > DENSE_COACTIVATION_CAP {
        return Err(CoreError::InvalidArgument(alloc::format!(
            "dense co-activation needs d_ff <= {DENSE_COACTIVATION_CAP}; \
             use coactivation_against_candidates for wider layers"
        )));
    }
    let mut co = vec![0u64; d_ff * d_ff];
    let mut counts = vec![0u64; d_ff];
    for token in 0..trace.n_tokens() {
        let set = trace.set(token, layer);
        for &i in set {
            counts[i as usize] += 1;
            for &j in set {
                if i != j {
                    co[i as usize * d_ff + j as usize] += 1;
                }
            }
        }
    }
    let values = co
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let i = idx / d_ff;
            if counts[i] == 0 {
                0.0
            } else {
                c as f64 / counts[i] as f64
            }
        })
        .collect();
    Ok(CoactivationMatrix {
        d_ff,
        values,
        activation_counts: counts,
    })
}

/// Mean over rows of the row maximum, minus the mean over all entries.
pub fn top_avg_gap(m: &CoactivationMatrix) -> f64 {
    let d = m.d_ff as f64;
    let mut max_sum = 0.0;
    let mut all_sum = 0.0;
    for i in 0..m.d_ff {
        let row = m.row(i);
        let mut row_max = 0.0f64;
        for &v in row {
            all_sum += v;
            row_max = row_max.max(v);
        }
        max_sum += row_max;
    }
    max_sum / d - all_sum / (d * d)
}

/// Most co-activated pairs, strongest first (ties by index pair).
pub fn top_pairs(m: &CoactivationMatrix, limit: usize) -> Vec<(u32, u32, f64)> {
    let mut pairs: Vec<(u32, u32, f64)> = Vec::new();
    for i in 0..m.d_ff {
        for j in 0..m.d_ff {
            if i != j && m.value(i, j) > 0.0 {
                pairs.push((i as u32, j as u32, m.value(i, j)));
            }
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    pairs.truncate(limit);
    pairs
}

/// Streaming fallback for layers too wide for the dense matrix: every
/// neuron's co-activation frequency against the `candidate_count` most
/// frequently activated neurons only. Row maxima taken over candidate
/// columns lower-bound the true row maxima.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCoactivation {
    /// Candidate neuron indices, most frequently activated first.
    pub candidates: Vec<u32>,
    /// `d_ff × candidates.len()`, row-major, same normalization as the
    /// dense matrix.
    pub values: Vec<f64>,
    pub activation_counts: Vec<u64>,
}

pub fn coactivation_against_candidates(
    trace: &ActivationSetTrace,
    layer: usize,
    candidate_count: usize,
) -> Result<CandidateCoactivation> {
    trace.check_layer(layer)?;
    if candidate_count == 0 {
        return Err(CoreError::InvalidArgument(
            "need at least one candidate".into(),
        ));
    }
    let d_ff = trace.d_ff();
    let mut counts = vec![0u64; d_ff];
    for token in 0..trace.n_tokens() {
        for &i in trace.set(token, layer) {
            counts[i as usize] += 1;
        }
    }
    let mut order: Vec<u32> = (0..d_ff as u32).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let candidates: Vec<u32> = order[..candidate_count.min(d_ff)].to_vec();
    let mut candidate_slot = vec![usize::MAX; d_ff];
    for (slot, &c) in candidates.iter().enumerate() {
        candidate_slot[c as usize] = slot;
    }

    let width = candidates.len();
    let mut co = vec![0u64; d_ff * width];
    let mut active_candidates: Vec<usize> = Vec::with_capacity(width);
    for token in 0..trace.n_tokens() {
        let set = trace.set(token, layer);
        active_candidates.clear();
        active_candidates.extend(
            set.iter()
                .map(|&i| candidate_slot[i as usize])
                .filter(|&s| s != usize::MAX),
        );
        for &i in set {
            let row = &mut co[i as usize * width..(i as usize + 1) * width];
            for &slot in &active_candidates {
                if candidates[slot] != i {
                    row[slot] += 1;
                }
            }
        }
    }
    let values = co
        .iter()
        .enumerate()
        .map(|(idx, &c)| {
            let i = idx / width;
            if counts[i] == 0 {
                0.0
            } else {
                c as f64 / counts[i] as f64
            }
        })
        .collect();
    Ok(CandidateCoactivation {
        candidates,
        values,
        activation_counts: counts,
    })
}

/// Activation-frequency CDF curve sampled at each grid probability `p`:
/// fraction of all activations carried by the top `⌈p · d_ff⌉` neurons
/// (sorted by frequency, descending, ties by index).
pub fn hot_cdf(trace: &ActivationSetTrace, layer: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    trace.check_layer(layer)?;
    let d_ff = trace.d_ff();
    let mut counts = vec![0u64; d_ff];
    for token in 0..trace.n_tokens() {
        for &i in trace.set(token, layer) {
            counts[i as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(CoreError::EmptyInput(
            "no activations recorded in this layer".into(),
        ));
    }
    if grid.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
        return Err(CoreError::InvalidArgument(
            "grid probabilities must lie in (0, 1]".into(),
        ));
    }
    let mut order: Vec<u32> = (0..d_ff as u32).collect();
    order.sort_by(|&a, &b| counts[b as usize].cmp(&counts[a as usize]).then(a.cmp(&b)));
    let mut prefix = Vec::with_capacity(d_ff + 1);
    prefix.push(0u64);
    for &i in &order {
        prefix.push(prefix.last().unwrap() + counts[i as usize]);
    }
    Ok(grid
        .iter()
        .map(|&p| {
            let top = guarded_ceil_fraction(p, d_ff).min(d_ff);
            (p, prefix[top] as f64 / total as f64)
        })
        .collect())
}

/// Sliding-window parameter-cache simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IoSimConfig {
    /// Window size `k`; the cache holds the union of the previous `k`
    /// active sets. `k = 0` means no cache at all.
    pub window: usize,
    /// Parameter bytes moved per fetched neuron (its `W_in` row, optional
    /// `V_in` row, and `W_out` column).
    pub bytes_per_neuron: u64,
    /// Clear the cache every `n` tokens (document boundaries). `None`
    /// treats the trace as one contiguous stream.
    pub reset_period: Option<u64>,
}

/// Outcome of the cache simulation for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct IoSimResult {
    /// Bytes actually fetched.
    pub total_bytes: u64,
    /// Dense transfer baseline: every neuron, every token.
    pub baseline_bytes: u64,
    /// `1 − total/baseline`.
    pub reduction: f64,
    /// Neurons fetched at each token.
    pub fetched_per_token: Vec<u64>,
}

/// Replays one layer's trace through a sliding-window cache: before token
/// `i` the cache holds the union of the previous `window` active sets, and
/// the token fetches only its active neurons that are not cached.
pub fn io_simulate(
    trace: &ActivationSetTrace,
    layer: usize,
    cfg: &IoSimConfig,
) -> Result<IoSimResult> {
    trace.check_layer(layer)?;
    if cfg.bytes_per_neuron == 0 {
        return Err(CoreError::InvalidArgument(
            "bytes_per_neuron must be > 0".into(),
        ));
    }
    let d_ff = trace.d_ff();
    let mut multiplicity = vec![0u32; d_ff];
    let mut window: VecDeque<Vec<u32>> = VecDeque::new();
    let mut fetched_per_token = Vec::with_capacity(trace.n_tokens());
    let mut fetched_total: u64 = 0;
    for token in 0..trace.n_tokens() {
        if let Some(period) = cfg.reset_period {
            if period > 0 && token > 0 && (token as u64).is_multiple_of(period) {
                multiplicity.iter_mut().for_each(|m| *m = 0);
                window.clear();
            }
        }
        let set = trace.set(token, layer);
        let fetched = set
            .iter()
            .filter(|&&i| multiplicity[i as usize] == 0)
            .count() as u64;
        fetched_per_token.push(fetched);
        fetched_total += fetched;
        if cfg.window > 0 {
            for &i in set {
                multiplicity[i as usize] += 1;
            }
            window.push_back(set.to_vec());
            if window.len() > cfg.window {
                let evicted = window.pop_front().unwrap();
                for i in evicted {
                    multiplicity[i as usize] -= 1;
                }
            }
        }
    }
    let baseline = (d_ff * trace.n_tokens()) as u64 * cfg.bytes_per_neuron;
    let total = fetched_total * cfg.bytes_per_neuron;
    Ok(IoSimResult {
        total_bytes: total,
        baseline_bytes: baseline,
        reduction: 1.0 - total as f64 / baseline as f64,
        fetched_per_token,
    })
}
