//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them). Tolerances are
//! pinned in constants next to each criterion.

use std::collections::HashSet;
use std::process::Command;
use std::time::Instant;

use tailcut::format::{read_ffw1, read_nat1, write_ffw1, write_nat1, TracePayload, WeightsPayload};
use tailcut_core::affinity::{
    coactivation_matrix, hot_cdf, io_simulate, reuse_ratio, top_avg_gap, ActivationSetTrace,
    IoSimConfig,
};
use tailcut_core::ffn::{train_toy_ffn, ActivationKind, FfnWeights, TrainConfig};
use tailcut_core::predictor::{
    bce_gradients, bce_loss, predict_scores, predictor_metrics, select_threshold, select_topk,
    train_predictor, ActivationDataset, PredictorParams, PredictorTrainConfig,
};
use tailcut_core::sparsity::{
    active_set, candidate_cett_curve, cett, find_threshold_alg1, find_threshold_exact,
    layer_candidates, mean_cett_for_threshold, sparse_forward, sparsity_ratio,
    zero_activation_ratio, InputTrace, MagnitudeTrace,
};
use tailcut_core::tensor::{Matrix, Vector};
use tailcut_core::{DetRng, Real};

fn pass(id: &str, detail: &str) {
    println!("ACCEPTANCE {id}: PASS ({detail})");
}

fn random_dims(rng: &mut DetRng) -> (usize, usize) {
    (2 + rng.uniform_usize(63), 2 + rng.uniform_usize(255))
}

// ---------------------------------------------------------------------------
// C1: decomposition identity
// ---------------------------------------------------------------------------

const C1_FFNS_PER_KIND: usize = 1000;
const C1_INPUTS_PER_FFN: usize = 10;
const C1_TOL_F32: f64 = 1e-6;
const C1_TOL_F64: f64 = 1e-12;
const C1_TIME_LIMIT_S: f64 = 30.0;

fn decomposition_worst_case<T: Real>(seed: u64) -> f64 {
    let mut rng = DetRng::new(seed);
    let mut worst = 0.0f64;
    for kind in ActivationKind::ALL {
        for round in 0..C1_FFNS_PER_KIND {
            let (d_model, d_ff) = random_dims(&mut rng);
            let mut w = FfnWeights::<T>::random(kind, d_model, d_ff, &mut rng);
            if !kind.is_gated() && round % 4 == 3 {
                w = w
                    .with_biases(
                        Vector::new(rng.normal_vec(d_ff)).unwrap(),
                        Vector::new(rng.normal_vec(d_model)).unwrap(),
                    )
                    .unwrap();
            }
            for _ in 0..C1_INPUTS_PER_FFN {
                let x = Vector::new(rng.normal_vec(d_model)).unwrap();
                let neurons = w.all_neurons(&x).unwrap();
                let forward = w.forward(&x).unwrap();
                // Elementwise sum in the path's own precision and neuron
                // index order, i.e. the summation-order contract under test.
                let mut sum = vec![T::ZERO; d_model];
                for n in &neurons {
                    for (s, &o) in sum.iter_mut().zip(n.output.iter()) {
                        *s += o;
                    }
                }
                if let Some(b) = w.b_out() {
                    for (s, &bi) in sum.iter_mut().zip(b.iter()) {
                        *s += bi;
                    }
                }
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for (s, f) in sum.iter().zip(forward.iter()) {
                    num += (s.to_f64() - f.to_f64()).powi(2);
                    den += f.to_f64().powi(2);
                }
                let rel = num.sqrt() / den.sqrt().max(1e-30);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

#[test]
fn c01_decomposition_identity() {
    let start = Instant::now();
    let worst32 = decomposition_worst_case::<f32>(0xC1);
    let worst64 = decomposition_worst_case::<f64>(0xC1F);
    let elapsed = start.elapsed().as_secs_f64();
    assert!(worst32 <= C1_TOL_F32, "f32 worst rel err {worst32}");
    assert!(worst64 <= C1_TOL_F64, "f64 worst rel err {worst64}");
    assert!(elapsed < C1_TIME_LIMIT_S, "took {elapsed}s");
    pass(
        "C1 decomposition-identity",
        &format!("worst f32 {worst32:.2e} <= {C1_TOL_F32:.0e}, worst f64 {worst64:.2e} <= {C1_TOL_F64:.0e}, {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// C2: CETT consistency
// ---------------------------------------------------------------------------

const C2_TRIPLES: usize = 10_000;
const C2_TOL: f64 = 1e-6;

#[test]
fn c02_cett_consistency() {
    let mut rng = DetRng::new(0xC2);
    // A pool of layers; (layer, token, eps) triples sample from it.
    let layers: Vec<FfnWeights<f64>> = ActivationKind::ALL
        .into_iter()
        .flat_map(|kind| {
            let mut out = Vec::new();
            for _ in 0..4 {
                let d_model = 4 + rng.uniform_usize(12);
                let d_ff = 4 + rng.uniform_usize(28);
                out.push(FfnWeights::random(kind, d_model, d_ff, &mut rng));
            }
            out
        })
        .collect();
    let mut worst = 0.0f64;
    for _ in 0..C2_TRIPLES {
        let w = &layers[rng.uniform_usize(layers.len())];
        let x = Vector::new(rng.normal_vec(w.d_model())).unwrap();
        let mags = w.evaluate(&x).unwrap().magnitudes;
        let idx = rng.uniform_usize(mags.len());
        let eps = mags[idx] * (0.5 + rng.uniform_f64());
        let c = cett(w, &x, eps).unwrap();
        let full = w.forward(&x).unwrap();
        let sparse = sparse_forward(w, &x, eps).unwrap();
        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for (f, s) in full.iter().zip(sparse.iter()) {
            diff += (f - s) * (f - s);
            norm += f * f;
        }
        if norm == 0.0 {
            continue;
        }
        worst = worst.max(((diff / norm).sqrt() - c).abs());
    }
    assert!(worst <= C2_TOL, "worst |residual - cett| = {worst}");

    // Exact endpoints on bias-free layers.
    for w in &layers {
        let x = Vector::new(rng.normal_vec(w.d_model())).unwrap();
        assert_eq!(cett(w, &x, 0.0).unwrap(), 0.0);
        assert_eq!(cett(w, &x, f64::INFINITY).unwrap(), 1.0);
    }
    pass(
        "C2 cett-consistency",
        &format!(
            "{C2_TRIPLES} triples, worst divergence {worst:.2e} <= {C2_TOL:.0e}; endpoints exact"
        ),
    );
}

// ---------------------------------------------------------------------------
// C3: threshold search
// ---------------------------------------------------------------------------

const C3_MONOTONE_TRACES: usize = 50;
const C3_CANDIDATES: usize = 150;
const C3_TIME_LIMIT_S: f64 = 60.0;

#[test]
fn c03_threshold_search() {
    let start = Instant::now();
    let mut monotone = 0usize;
    let mut attempts = 0u64;
    let mut checked = 0usize;
    while monotone < C3_MONOTONE_TRACES {
        let kind = ActivationKind::ALL[(attempts % 6) as usize];
        let bound = 0.05 + 0.05 * (attempts % 8) as f64;
        let mut rng = DetRng::new(0xC3000 + attempts);
        attempts += 1;
        assert!(attempts < 400, "not enough monotone traces");
        let d_model = 8;
        let w = FfnWeights::<f64>::random(kind, d_model, 32, &mut rng);
        let inputs = InputTrace::new(32, 1, d_model, rng.normal_vec(32 * d_model)).unwrap();
        let trace = MagnitudeTrace::compute(std::slice::from_ref(&w), inputs).unwrap();

        let candidates = layer_candidates(&trace, 0, C3_CANDIDATES).unwrap();
        let curve = candidate_cett_curve(&w, &trace, 0, &candidates).unwrap();
        let is_monotone = curve.windows(2).all(|p| p[0] <= p[1]);

        let alg1 = find_threshold_alg1(&w, &trace, 0, bound, C3_CANDIDATES).unwrap();
        let exact = find_threshold_exact(&w, &trace, 0, bound, C3_CANDIDATES).unwrap();
        if is_monotone {
            monotone += 1;
            assert_eq!(alg1, exact, "monotone trace, attempt {attempts}");
        }
        for eps in [alg1, exact] {
            let mean = mean_cett_for_threshold(&w, &trace, 0, eps).unwrap();
            assert!(mean <= bound, "mean {mean} > bound {bound}");
        }
        checked += 1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C3_TIME_LIMIT_S, "took {elapsed}s");
    pass(
        "C3 threshold-search",
        &format!("{monotone} verified-monotone traces agree exactly; bound respected on all {checked}; {elapsed:.1}s"),
    );
}

// ---------------------------------------------------------------------------
// C4: sign-symmetry sparsity
// ---------------------------------------------------------------------------

const C4_MIN_SAMPLES: usize = 100_000;
const C4_TOL: f64 = 0.02;

#[test]
fn c04_sign_symmetry() {
    for kind in [ActivationKind::Relu, ActivationKind::Relu2] {
        let mut rng = DetRng::new(0xC4);
        let mut zeros = 0usize;
        let mut total = 0usize;
        while total < C4_MIN_SAMPLES {
            let w = FfnWeights::<f64>::random(kind, 16, 64, &mut rng);
            for _ in 0..25 {
                let x = Vector::new(rng.normal_vec(16)).unwrap();
                let ratio = zero_activation_ratio(&w, &x).unwrap();
                zeros += (ratio * 64.0).round() as usize;
                total += 64;
            }
        }
        let fraction = zeros as f64 / total as f64;
        assert!(
            (fraction - 0.5).abs() <= C4_TOL,
            "{kind:?}: zero fraction {fraction}"
        );
        pass(
            &format!("C4 sign-symmetry [{}]", kind.name()),
            &format!("{total} samples, exact-zero fraction {fraction:.4} within 0.50 +/- {C4_TOL}"),
        );
    }
}

// ---------------------------------------------------------------------------
// C5: magnitude-vs-zero sparsity
// ---------------------------------------------------------------------------

#[test]
fn c05_magnitude_exceeds_zero_sparsity() {
    // Toy-trained relu FFN.
    let mut rng = DetRng::new(0xC5);
    let teacher = FfnWeights::<f64>::random(ActivationKind::Relu, 32, 128, &mut rng);
    let cfg = TrainConfig {
        student_kind: ActivationKind::Relu,
        d_ff: 128,
        steps: 2500,
        batch_size: 16,
        learning_rate: 1e-2,
        momentum: 0.9,
        seed: 0xC5C5,
    };
    let trained = train_toy_ffn(&teacher, &cfg).unwrap().weights;
    let n_tokens = 256;
    let inputs = InputTrace::new(n_tokens, 1, 32, rng.normal_vec(n_tokens * 32)).unwrap();
    let trace = MagnitudeTrace::compute(std::slice::from_ref(&trained), inputs).unwrap();
    let eps = find_threshold_alg1(&trained, &trace, 0, 0.2, 1000).unwrap();
    assert!(eps > 0.0, "calibration found no usable threshold");

    let mut mag_sum = 0.0;
    let mut zero_sum = 0.0;
    for token in 0..n_tokens {
        mag_sum += sparsity_ratio(trace.magnitudes(token, 0), eps);
        let x = Vector::new(trace.inputs().unwrap().input(token, 0).to_vec()).unwrap();
        zero_sum += zero_activation_ratio(&trained, &x).unwrap();
    }
    let mag = mag_sum / n_tokens as f64;
    let zero = zero_sum / n_tokens as f64;
    assert!(
        mag > zero,
        "trained: magnitude sparsity {mag} not strictly above zero sparsity {zero}"
    );

    // Random untrained layers: >= holds for any positive threshold.
    for kind in [ActivationKind::Relu, ActivationKind::Relu2] {
        for round in 0..20 {
            let w = FfnWeights::<f64>::random(kind, 16, 64, &mut rng);
            let x = Vector::new(rng.normal_vec(16)).unwrap();
            let mags = w.evaluate(&x).unwrap().magnitudes;
            let z = zero_activation_ratio(&w, &x).unwrap();
            for eps in [1e-6, 0.01, 0.1] {
                assert!(
                    sparsity_ratio(&mags, eps) >= z,
                    "{kind:?} round {round} eps {eps}"
                );
            }
        }
    }
    pass(
        "C5 magnitude-vs-zero",
        &format!("trained relu: magnitude {mag:.4} > exact-zero {zero:.4} at calibrated eps {eps:.4}; >= on random layers"),
    );
}

// ---------------------------------------------------------------------------
// C6: gradient checks
// ---------------------------------------------------------------------------

const C6_INSTANCES: usize = 100;
const C6_H: f64 = 1e-4;
const C6_TOL: f64 = 1e-4;

fn ffn_flatten(w: &FfnWeights<f64>, x: &Vector<f64>) -> Vec<f64> {
    let mut flat = Vec::new();
    flat.extend_from_slice(w.w_in().as_slice());
    if let Some(v) = w.v_in() {
        flat.extend_from_slice(v.as_slice());
    }
    flat.extend_from_slice(w.w_out().as_slice());
    if let Some(b) = w.b_in() {
        flat.extend_from_slice(b.as_slice());
    }
    if let Some(b) = w.b_out() {
        flat.extend_from_slice(b.as_slice());
    }
    flat.extend_from_slice(x.as_slice());
    flat
}

fn ffn_rebuild(template: &FfnWeights<f64>, flat: &[f64]) -> (FfnWeights<f64>, Vector<f64>) {
    let (d_ff, d_model) = (template.d_ff(), template.d_model());
    let mut pos = 0usize;
    let mut take = |n: usize| {
        let s = flat[pos..pos + n].to_vec();
        pos += n;
        s
    };
    let w_in = Matrix::new(d_ff, d_model, take(d_ff * d_model)).unwrap();
    let v_in = template
        .v_in()
        .map(|_| Matrix::new(d_ff, d_model, take(d_ff * d_model)).unwrap());
    let w_out = Matrix::new(d_model, d_ff, take(d_model * d_ff)).unwrap();
    let b_in = template.b_in().map(|_| Vector::new(take(d_ff)).unwrap());
    let b_out = template
        .b_out()
        .map(|_| Vector::new(take(d_model)).unwrap());
    let x = Vector::new(take(d_model)).unwrap();
    (
        FfnWeights::new(template.kind(), w_in, v_in, w_out, b_in, b_out).unwrap(),
        x,
    )
}

#[test]
fn c06_gradient_checks() {
    let mut worst = 0.0f64;
    for kind in ActivationKind::ALL {
        let mut rng =
            DetRng::new(0xC600 + kind.matrix_count() as u64 * 31 + kind.name().len() as u64);
        for instance in 0..C6_INSTANCES {
            let mut w = FfnWeights::<f64>::random(kind, 5, 9, &mut rng);
            if !kind.is_gated() && instance % 3 == 2 {
                w = w
                    .with_biases(
                        Vector::new(rng.normal_vec(9)).unwrap(),
                        Vector::new(rng.normal_vec(5)).unwrap(),
                    )
                    .unwrap();
            }
            let x = Vector::new(rng.normal_vec(5)).unwrap();
            let upstream = Vector::new(rng.normal_vec(5)).unwrap();
            let g = w.backward(&x, &upstream).unwrap();
            let mut analytic = Vec::new();
            analytic.extend_from_slice(g.w_in.as_slice());
            if let Some(v) = &g.v_in {
                analytic.extend_from_slice(v.as_slice());
            }
            analytic.extend_from_slice(g.w_out.as_slice());
            if let Some(b) = &g.b_in {
                analytic.extend_from_slice(b.as_slice());
            }
            if let Some(b) = &g.b_out {
                analytic.extend_from_slice(b.as_slice());
            }
            analytic.extend_from_slice(g.x.as_slice());

            let mut flat = ffn_flatten(&w, &x);
            for idx in 0..flat.len() {
                let orig = flat[idx];
                flat[idx] = orig + C6_H;
                let (wp, xp) = ffn_rebuild(&w, &flat);
                let up: f64 = wp
                    .forward(&xp)
                    .unwrap()
                    .iter()
                    .zip(upstream.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                flat[idx] = orig - C6_H;
                let (wm, xm) = ffn_rebuild(&w, &flat);
                let down: f64 = wm
                    .forward(&xm)
                    .unwrap()
                    .iter()
                    .zip(upstream.iter())
                    .map(|(a, b)| a * b)
                    .sum();
                flat[idx] = orig;
                let fd = (up - down) / (2.0 * C6_H);
                let rel = (analytic[idx] - fd).abs() / fd.abs().max(1.0);
                worst = worst.max(rel);
                assert!(
                    rel <= C6_TOL,
                    "{kind:?} instance {instance} slot {idx}: rel {rel}"
                );
            }
        }
    }

    // Predictor gradients.
    let mut rng = DetRng::new(0xC6FF);
    for instance in 0..C6_INSTANCES {
        let p = PredictorParams::<f64>::random(4, 7, 2, &mut rng);
        let inputs: Vec<Vector<f64>> = (0..3)
            .map(|_| Vector::new(rng.normal_vec(4)).unwrap())
            .collect();
        let labels: Vec<Vec<bool>> = (0..3)
            .map(|_| (0..7).map(|_| rng.uniform_f64() < 0.5).collect())
            .collect();
        let g = bce_gradients(&p, &inputs, &labels).unwrap();
        let mut analytic = Vec::new();
        analytic.extend_from_slice(g.w1.as_slice());
        analytic.extend_from_slice(g.b1.as_slice());
        analytic.extend_from_slice(g.w2.as_slice());
        analytic.extend_from_slice(g.b2.as_slice());

        let mut flat = Vec::new();
        flat.extend_from_slice(p.w1.as_slice());
        flat.extend_from_slice(p.b1.as_slice());
        flat.extend_from_slice(p.w2.as_slice());
        flat.extend_from_slice(p.b2.as_slice());
        let rebuild = |flat: &[f64]| {
            let mut pos = 0usize;
            let mut take = |n: usize| {
                let s = flat[pos..pos + n].to_vec();
                pos += n;
                s
            };
            PredictorParams::new(
                Matrix::new(2, 4, take(8)).unwrap(),
                Vector::new(take(2)).unwrap(),
                Matrix::new(7, 2, take(14)).unwrap(),
                Vector::new(take(7)).unwrap(),
            )
            .unwrap()
        };
        let objective = |flat: &[f64]| {
            let p = rebuild(flat);
            let mut total = 0.0;
            for (x, y) in inputs.iter().zip(labels.iter()) {
                total += bce_loss(&predict_scores(&p, x).unwrap(), y).unwrap();
            }
            total / inputs.len() as f64
        };
        for idx in 0..flat.len() {
            let orig = flat[idx];
            flat[idx] = orig + C6_H;
            let up = objective(&flat);
            flat[idx] = orig - C6_H;
            let down = objective(&flat);
            flat[idx] = orig;
            let fd = (up - down) / (2.0 * C6_H);
            let rel = (analytic[idx] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
            assert!(
                rel <= C6_TOL,
                "predictor instance {instance} slot {idx}: rel {rel}"
            );
        }
    }
    pass(
        "C6 gradient-checks",
        &format!("6 FFN kinds + predictor, {C6_INSTANCES} instances each, worst rel {worst:.2e} <= {C6_TOL:.0e}"),
    );
}

// ---------------------------------------------------------------------------
// C7: predictor sanity
// ---------------------------------------------------------------------------

const C7_MIN_TOKENS: usize = 1000;
const C7_RECALL_FACTOR: f64 = 1.5;

#[test]
fn c07_predictor_sanity() {
    // Toy-trained relu FFN; d_ff divisible by 5 so the top-20% count is exact.
    let d_model = 32;
    let d_ff = 160;
    let mut rng = DetRng::new(0xC7);
    let teacher = FfnWeights::<f64>::random(ActivationKind::Relu, d_model, d_ff, &mut rng);
    let cfg = TrainConfig {
        student_kind: ActivationKind::Relu,
        d_ff,
        steps: 1500,
        batch_size: 16,
        learning_rate: 1e-2,
        momentum: 0.9,
        seed: 0xC7C7,
    };
    let ffn = train_toy_ffn(&teacher, &cfg).unwrap().weights;

    let n_tokens = 1200;
    assert!(n_tokens >= C7_MIN_TOKENS);
    let inputs = InputTrace::new(n_tokens, 1, d_model, rng.normal_vec(n_tokens * d_model)).unwrap();
    let trace = MagnitudeTrace::compute(std::slice::from_ref(&ffn), inputs).unwrap();
    let eps = find_threshold_alg1(&ffn, &trace, 0, 0.2, 1000).unwrap();

    // (a) oracle top-k recall is exactly 1 once the fraction covers the
    // largest per-token active set.
    let max_truth = (0..n_tokens)
        .map(|t| active_set(trace.magnitudes(t, 0), eps).len())
        .max()
        .unwrap();
    let fraction = ((max_truth as f64 / d_ff as f64) + 0.05).min(1.0);
    let mut oracle_recall_sum = 0.0;
    let mut oracle_tokens = 0usize;
    for token in 0..n_tokens {
        let truth = active_set(trace.magnitudes(token, 0), eps);
        if truth.is_empty() {
            continue;
        }
        let mut scores = vec![0.0f64; d_ff];
        for &i in &truth {
            scores[i as usize] = 1.0;
        }
        let sel = select_topk(&Vector::new(scores).unwrap(), fraction).unwrap();
        let (recall, _) = predictor_metrics(&sel.active, &truth, d_ff);
        oracle_recall_sum += recall.unwrap();
        oracle_tokens += 1;
    }
    let oracle_recall = oracle_recall_sum / oracle_tokens as f64;
    assert_eq!(oracle_recall, 1.0, "oracle top-k recall");

    // (b) trained predictor vs size-matched random selector, paired tokens.
    // Rank 8 instead of the ~6% default (3) so the per-token win-rate check
    // has headroom; the default sizing is exercised by the CLI tests.
    let data = ActivationDataset::from_trace(&trace, 0, eps).unwrap();
    let rank = 8;
    let pcfg = PredictorTrainConfig {
        rank,
        epochs: 60,
        batch_size: 32,
        learning_rate: 1e-1,
        momentum: 0.9,
        seed: 0xC77,
    };
    let predictor = train_predictor(&data, &pcfg).unwrap().params;
    let mut pair_rng = DetRng::new(0xC7AA);
    let mut trained_sum = 0.0;
    let mut random_sum = 0.0;
    let mut paired = 0usize;
    let mut trained_wins_or_ties = 0usize;
    for token in 0..n_tokens {
        let truth = active_set(trace.magnitudes(token, 0), eps);
        if truth.is_empty() {
            continue;
        }
        let x = Vector::new(trace.inputs().unwrap().input(token, 0).to_vec()).unwrap();
        let sel = select_threshold(&predict_scores(&predictor, &x).unwrap());
        let (trained_recall, _) = predictor_metrics(&sel.active, &truth, d_ff);
        let trained_recall = trained_recall.unwrap();
        // Random selector of the same size.
        let mut pool: Vec<u32> = (0..d_ff as u32).collect();
        pair_rng.shuffle(&mut pool);
        let mut random_sel: Vec<u32> = pool[..sel.active.len()].to_vec();
        random_sel.sort_unstable();
        let (random_recall, _) = predictor_metrics(&random_sel, &truth, d_ff);
        let random_recall = random_recall.unwrap();
        trained_sum += trained_recall;
        random_sum += random_recall;
        if trained_recall >= random_recall {
            trained_wins_or_ties += 1;
        }
        paired += 1;
    }
    let trained_mean = trained_sum / paired as f64;
    let random_mean = random_sum / paired as f64;
    assert!(paired >= C7_MIN_TOKENS, "only {paired} paired tokens");
    assert!(
        trained_mean >= C7_RECALL_FACTOR * random_mean,
        "trained {trained_mean} vs random {random_mean}"
    );
    let win_fraction = trained_wins_or_ties as f64 / paired as f64;
    assert!(
        win_fraction >= 0.95,
        "trained beats random on only {win_fraction:.3} of tokens"
    );

    // (c) top-20% prediction sparsity is 0.8 under the recall/inactive-ratio
    // definitions: exactly per token, and to rounding in the mean.
    let mut sparsity_mean = 0.0;
    for token in 0..n_tokens {
        let x = Vector::new(trace.inputs().unwrap().input(token, 0).to_vec()).unwrap();
        let sel = select_topk(&predict_scores(&predictor, &x).unwrap(), 0.2).unwrap();
        let (_, prediction_sparsity) = predictor_metrics(&sel.active, &[], d_ff);
        assert_eq!(prediction_sparsity, 0.8, "token {token}");
        sparsity_mean += prediction_sparsity;
    }
    sparsity_mean /= n_tokens as f64;
    assert!((sparsity_mean - 0.8).abs() < 1e-12);

    pass(
        "C7 predictor-sanity",
        &format!(
            "oracle recall 1.0 (fraction {fraction:.2}); trained {trained_mean:.3} >= {C7_RECALL_FACTOR}x random {random_mean:.3} over {paired} tokens (win rate {win_fraction:.3}); top-20% sparsity 0.8 exact"
        ),
    );
}

// ---------------------------------------------------------------------------
// C8: affinity oracles
// ---------------------------------------------------------------------------

#[test]
fn c08_affinity_oracles() {
    // 10-token, d_ff = 8 synthetic trace, fixed by hand.
    let sets: Vec<Vec<u32>> = vec![
        vec![0, 1, 2],
        vec![1, 2],
        vec![2, 3, 4],
        vec![],
        vec![0, 4, 5],
        vec![5],
        vec![1, 5, 6],
        vec![6, 7],
        vec![0, 6, 7],
        vec![2, 7],
    ];
    let trace = ActivationSetTrace::new(10, 1, 8, sets.clone()).unwrap();

    // reuse ratio oracle: brute-force set algebra.
    for k in 1..=3usize {
        let mut expected_sum = 0.0;
        let mut expected_n = 0usize;
        for (i, set) in sets.iter().enumerate().skip(k) {
            if set.is_empty() {
                continue;
            }
            let mut union = HashSet::new();
            for j in 1..=k {
                union.extend(sets[i - j].iter().copied());
            }
            let hit = set.iter().filter(|i| union.contains(i)).count();
            expected_sum += hit as f64 / set.len() as f64;
            expected_n += 1;
        }
        let expected = expected_sum / expected_n as f64;
        assert_eq!(reuse_ratio(&trace, 0, k).unwrap(), expected, "k={k}");
    }

    // co-activation matrix oracle: raw counting.
    let m = coactivation_matrix(&trace, 0).unwrap();
    for i in 0..8u32 {
        let act = sets.iter().filter(|s| s.contains(&i)).count();
        for j in 0..8u32 {
            let expected = if i == j || act == 0 {
                0.0
            } else {
                let co = sets
                    .iter()
                    .filter(|s| s.contains(&i) && s.contains(&j))
                    .count();
                co as f64 / act as f64
            };
            assert_eq!(m.value(i as usize, j as usize), expected, "M[{i}][{j}]");
        }
    }

    // top-average gap oracle: direct formula evaluation.
    let mut max_sum = 0.0;
    let mut all_sum = 0.0;
    for i in 0..8 {
        let mut row_max = 0.0f64;
        for j in 0..8 {
            all_sum += m.value(i, j);
            row_max = row_max.max(m.value(i, j));
        }
        max_sum += row_max;
    }
    let expected_gap = max_sum / 8.0 - all_sum / 64.0;
    assert_eq!(top_avg_gap(&m), expected_gap);

    // hot CDF oracle: sort + prefix by hand.
    let mut freqs: Vec<(u32, usize)> = (0..8u32)
        .map(|i| (i, sets.iter().filter(|s| s.contains(&i)).count()))
        .collect();
    freqs.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: usize = freqs.iter().map(|f| f.1).sum();
    let grid = [0.125, 0.25, 0.5, 0.75, 1.0];
    let curve = hot_cdf(&trace, 0, &grid).unwrap();
    for (&p, &(gp, got)) in grid.iter().zip(curve.iter()) {
        let top = (p * 8.0).ceil() as usize;
        let expected = freqs[..top].iter().map(|f| f.1).sum::<usize>() as f64 / total as f64;
        assert_eq!(gp, p);
        assert_eq!(got, expected, "cdf at {p}");
    }

    // I/O simulation oracle: step-by-step replay.
    for k in 0..=3usize {
        let cfg = IoSimConfig {
            window: k,
            bytes_per_neuron: 3,
            reset_period: None,
        };
        let sim = io_simulate(&trace, 0, &cfg).unwrap();
        let mut cache: Vec<HashSet<u32>> = Vec::new();
        let mut expected_fetch = 0u64;
        for set in &sets {
            let mut cached = HashSet::new();
            for recent in cache.iter().rev().take(k) {
                cached.extend(recent.iter().copied());
            }
            expected_fetch += set.iter().filter(|i| !cached.contains(i)).count() as u64;
            cache.push(set.iter().copied().collect());
        }
        assert_eq!(sim.total_bytes, expected_fetch * 3, "k={k}");
        assert_eq!(sim.baseline_bytes, 8 * 10 * 3);
        assert_eq!(sim.reduction, 1.0 - (expected_fetch * 3) as f64 / 240.0);
    }

    // Reuse monotone in window size on 100 random traces (long relative to
    // the window so the shrinking eligible set cannot dominate).
    let mut rng = DetRng::new(0xC8);
    for t in 0..100 {
        let sets: Vec<Vec<u32>> = (0..150)
            .map(|_| (0..10u32).filter(|_| rng.uniform_f64() < 0.35).collect())
            .collect();
        let trace = ActivationSetTrace::new(150, 1, 10, sets).unwrap();
        let mut last = 0.0;
        for k in 1..=4 {
            let r = reuse_ratio(&trace, 0, k).unwrap();
            assert!(r >= last, "trace {t} k={k}: {r} < {last}");
            last = r;
        }
    }
    pass(
        "C8 affinity-oracles",
        "reuse/coactivation/gap/cdf/iosim equal brute force exactly; reuse monotone in k on 100 traces",
    );
}

// ---------------------------------------------------------------------------
// C9: qualitative trend (reported, non-gating)
// ---------------------------------------------------------------------------

#[test]
fn c09_relu2_vs_swiglu_trend() {
    // Parameter-matched widths: relu2 has 2 matrices at d_ff=192, swiglu 3 at
    // d_ff=128, both 12288 weights per direction pair.
    let d_model = 32;
    let seeds = [11u64, 22, 33, 44, 55];
    let mut relu2_wins = 0usize;
    let mut rows = Vec::new();
    for &seed in &seeds {
        let sparsity_for = |kind: ActivationKind, d_ff: usize| -> f64 {
            let mut rng = DetRng::new(seed);
            let teacher = FfnWeights::<f64>::random(kind, d_model, d_ff, &mut rng);
            let cfg = TrainConfig {
                student_kind: kind,
                d_ff,
                steps: 1200,
                batch_size: 16,
                learning_rate: 3e-3,
                momentum: 0.9,
                seed: seed ^ 0xC9,
            };
            let w = train_toy_ffn(&teacher, &cfg).unwrap().weights;
            let n_tokens = 128;
            let mut input_rng = DetRng::new(seed ^ 0xABCD);
            let inputs = InputTrace::new(
                n_tokens,
                1,
                d_model,
                input_rng.normal_vec(n_tokens * d_model),
            )
            .unwrap();
            let trace = MagnitudeTrace::compute(std::slice::from_ref(&w), inputs).unwrap();
            let eps = find_threshold_alg1(&w, &trace, 0, 0.2, 500).unwrap();
            let mut sum = 0.0;
            for t in 0..n_tokens {
                sum += sparsity_ratio(trace.magnitudes(t, 0), eps);
            }
            sum / n_tokens as f64
        };
        let relu2 = sparsity_for(ActivationKind::Relu2, 192);
        let swiglu = sparsity_for(ActivationKind::Swiglu, 128);
        if relu2 >= swiglu {
            relu2_wins += 1;
        }
        rows.push(serde_json::json!({
            "seed": seed,
            "relu2_sparsity_at_cett_0.2": relu2,
            "swiglu_sparsity_at_cett_0.2": swiglu,
        }));
    }
    let trend_holds = relu2_wins >= 4;
    let report = serde_json::json!({
        "schema_version": 1,
        "tool": {"name": "tailcut", "version": env!("CARGO_PKG_VERSION")},
        "command": "acceptance-trend",
        "metrics": {
            "criterion": "relu2 sparsity at error bound 0.2 >= swiglu on matched configs",
            "seeds": seeds,
            "relu2_wins": relu2_wins,
            "trend_holds_in_4_of_5": trend_holds,
            "per_seed": rows,
        }
    });
    let out_dir = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&out_dir).unwrap();
    let out_path = out_dir.join("trend_report.json");
    std::fs::write(&out_path, serde_json::to_string_pretty(&report).unwrap()).unwrap();
    // Reported, non-gating: the criterion is the report itself.
    pass(
        "C9 relu2-vs-swiglu-trend [non-gating]",
        &format!(
            "relu2 sparsity >= swiglu in {relu2_wins}/5 seeds (trend {}); logged to {}",
            if trend_holds {
                "holds"
            } else {
                "does not hold"
            },
            out_path.display()
        ),
    );
}

// ---------------------------------------------------------------------------
// C10: format round-trips and pipeline determinism
// ---------------------------------------------------------------------------

const C10_HEADER_CASES: usize = 1000;
const C10_TIME_LIMIT_S: f64 = 300.0;

#[test]
fn c10_format_roundtrip_and_pipeline_determinism() {
    let start = Instant::now();

    // 1000 fuzzed well-formed headers, byte-identical round trips.
    let mut rng = DetRng::new(0xC10);
    for case in 0..C10_HEADER_CASES {
        match case % 5 {
            0 | 1 => {
                let kind = ActivationKind::ALL[rng.uniform_usize(6)];
                let d_model = 1 + rng.uniform_usize(12);
                let d_ff = 1 + rng.uniform_usize(20);
                let mut w = FfnWeights::<f32>::random(kind, d_model, d_ff, &mut rng);
                if !kind.is_gated() && case % 2 == 1 {
                    w = w
                        .with_biases(
                            Vector::new(rng.normal_vec(d_ff)).unwrap(),
                            Vector::new(rng.normal_vec(d_model)).unwrap(),
                        )
                        .unwrap();
                }
                let payload = WeightsPayload::Ffn(w);
                let bytes = write_ffw1(&payload);
                let back = read_ffw1(&bytes).unwrap();
                assert_eq!(back, payload, "case {case}");
                assert_eq!(write_ffw1(&back), bytes, "case {case}");
            }
            2 => {
                let payload = WeightsPayload::Predictor(PredictorParams::<f32>::random(
                    1 + rng.uniform_usize(10),
                    1 + rng.uniform_usize(16),
                    1 + rng.uniform_usize(4),
                    &mut rng,
                ));
                let bytes = write_ffw1(&payload);
                assert_eq!(read_ffw1(&bytes).unwrap(), payload);
                assert_eq!(write_ffw1(&read_ffw1(&bytes).unwrap()), bytes);
            }
            3 => {
                let (t, l, d) = (
                    1 + rng.uniform_usize(6),
                    1 + rng.uniform_usize(3),
                    1 + rng.uniform_usize(17),
                );
                let mags: Vec<f32> = (0..t * l * d).map(|_| rng.uniform_f64() as f32).collect();
                let payload =
                    TracePayload::Magnitudes(MagnitudeTrace::new(t, l, d, mags, None).unwrap());
                let bytes = write_nat1(&payload);
                assert_eq!(read_nat1(&bytes).unwrap(), payload);
                assert_eq!(write_nat1(&read_nat1(&bytes).unwrap()), bytes);
            }
            _ => {
                let (t, l, d) = (
                    1 + rng.uniform_usize(6),
                    1 + rng.uniform_usize(3),
                    1 + rng.uniform_usize(17),
                );
                let sets: Vec<Vec<u32>> = (0..t * l)
                    .map(|_| (0..d as u32).filter(|_| rng.uniform_f64() < 0.4).collect())
                    .collect();
                let payload = TracePayload::Masks(ActivationSetTrace::new(t, l, d, sets).unwrap());
                let bytes = write_nat1(&payload);
                assert_eq!(read_nat1(&bytes).unwrap(), payload);
                assert_eq!(write_nat1(&read_nat1(&bytes).unwrap()), bytes);
            }
        }
    }

    // Full pipeline, twice, identical reports.
    let run_pipeline = |dir: &std::path::Path| -> Vec<Vec<u8>> {
        let run = |args: &[&str]| {
            let out = Command::new(env!("CARGO_BIN_EXE_tailcut"))
                .current_dir(dir)
                .args(args)
                .output()
                .expect("binary runs");
            assert!(
                out.status.success(),
                "tailcut {args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
        };
        run(&[
            "gen",
            "--kind",
            "relu2",
            "--d-model",
            "12",
            "--d-ff",
            "48",
            "--layers",
            "2",
            "--tokens",
            "96",
            "--rho",
            "0.7",
            "--seed",
            "99",
            "--trained",
            "--train-steps",
            "150",
            "--out-dir",
            "work",
            "--out",
            "gen.json",
        ]);
        run(&[
            "trace",
            "--weights",
            "work/weights_l0.ffw1",
            "--weights",
            "work/weights_l1.ffw1",
            "--inputs",
            "work/inputs.nat1",
            "--magnitudes-out",
            "work/mags.nat1",
            "--out",
            "trace.json",
        ]);
        run(&[
            "threshold",
            "--weights",
            "work/weights_l0.ffw1",
            "--weights",
            "work/weights_l1.ffw1",
            "--inputs",
            "work/inputs.nat1",
            "--trace",
            "work/mags.nat1",
            "--bound",
            "0.2",
            "--candidates",
            "300",
            "--table-out",
            "work/thresholds.json",
            "--out",
            "threshold.json",
        ]);
        run(&[
            "trace",
            "--weights",
            "work/weights_l0.ffw1",
            "--weights",
            "work/weights_l1.ffw1",
            "--inputs",
            "work/inputs.nat1",
            "--mask-out",
            "work/mask.nat1",
            "--thresholds",
            "work/thresholds.json",
            "--out",
            "mask.json",
        ]);
        run(&[
            "predictor-train",
            "--weights",
            "work/weights_l0.ffw1",
            "--weights",
            "work/weights_l1.ffw1",
            "--inputs",
            "work/inputs.nat1",
            "--trace",
            "work/mags.nat1",
            "--thresholds",
            "work/thresholds.json",
            "--epochs",
            "4",
            "--seed",
            "3",
            "--out-dir",
            "work",
            "--out",
            "ptrain.json",
        ]);
        run(&[
            "predictor-eval",
            "--predictor",
            "work/predictor_l0.ffw1",
            "--predictor",
            "work/predictor_l1.ffw1",
            "--trace",
            "work/mags.nat1",
            "--inputs",
            "work/inputs.nat1",
            "--thresholds",
            "work/thresholds.json",
            "--strategy",
            "topk",
            "--fraction",
            "0.2",
            "--out",
            "peval.json",
        ]);
        run(&[
            "affinity",
            "--mask",
            "work/mask.nat1",
            "--window",
            "3",
            "--csv",
            "affinity.csv",
            "--cdf-csv",
            "cdf.csv",
            "--out",
            "affinity.json",
        ]);
        run(&[
            "iosim",
            "--mask",
            "work/mask.nat1",
            "--window",
            "3",
            "--weights",
            "work/weights_l0.ffw1",
            "--out",
            "iosim.json",
        ]);
        [
            "gen.json",
            "trace.json",
            "threshold.json",
            "mask.json",
            "ptrain.json",
            "peval.json",
            "affinity.json",
            "iosim.json",
            "affinity.csv",
            "cdf.csv",
            "work/mags.nat1",
            "work/mask.nat1",
            "work/thresholds.json",
            "work/predictor_l0.ffw1",
        ]
        .iter()
        .map(|p| std::fs::read(dir.join(p)).unwrap())
        .collect()
    };
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_pipeline(dir_a.path());
    let b = run_pipeline(dir_b.path());
    assert_eq!(a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(b.iter()).enumerate() {
        assert_eq!(x, y, "pipeline artifact {i} differs between runs");
    }

    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < C10_TIME_LIMIT_S, "took {elapsed}s");
    pass(
        "C10 format-and-pipeline",
        &format!("{C10_HEADER_CASES} fuzzed headers round-trip byte-identical; pipeline deterministic across two runs; {elapsed:.1}s"),
    );
}
