//! Feed-forward network variants and their exact neuron decomposition.
//!
//! Two families are supported:
//!
//! * gated (`reglu`, `swiglu`, bias-free):
//!   `FFN(x) = W_out [act(W_in x) ⊙ (V_in x)]`
//! * two-layer (`relu`, `relu2`, `silu`, `gelu`, optional biases):
//!   `FFN(x) = W_out act(W_in x + b_in) + b_out`
//!
//! Neuron `i` owns row `i` of `W_in` (and `V_in`), and column `i` of `W_out`.
//! Its contribution is `n_i(x) = h_i(x) * W_out[:, i]`, where `h_i` is the
//! activation value times the gate value (gated) or just the activation value
//! (two-layer). Summing `n_i` over all neurons in index order reproduces the
//! forward pass bit for bit, because [`crate::tensor::matvec`] accumulates
//! columns in exactly that order.

mod train;

pub use train::{train_toy_ffn, TrainConfig, TrainOutcome};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::real::Real;
use crate::rng::DetRng;
use crate::tensor::{dot, l2_norm_slice, matvec, matvec_transposed, Matrix, Vector};

/// The six activation-function variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActivationKind {
    Relu,
    Relu2,
    Silu,
    Gelu,
    Reglu,
    Swiglu,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 6] = [
        ActivationKind::Relu,
        ActivationKind::Relu2,
        ActivationKind::Silu,
        ActivationKind::Gelu,
        ActivationKind::Reglu,
        ActivationKind::Swiglu,
    ];

    /// Gated kinds multiply the activation by a linear gate `V_in x`.
    pub fn is_gated(self) -> bool {
        matches!(self, ActivationKind::Reglu | ActivationKind::Swiglu)
    }

    /// Number of weight matrices (3 gated, 2 two-layer); used for
    /// parameter-count bookkeeping such as predictor sizing.
    pub fn matrix_count(self) -> usize {
        if self.is_gated() {
            3
        } else {
            2
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Relu => "relu",
            ActivationKind::Relu2 => "relu2",
            ActivationKind::Silu => "silu",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Reglu => "reglu",
            ActivationKind::Swiglu => "swiglu",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Scalar activation function of this kind. For gated kinds this is the
    /// function applied to `W_in x` before gating (`relu` for reglu, `silu`
    /// for swiglu). GELU uses the erf-exact form, not the tanh approximation.
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            ActivationKind::Relu | ActivationKind::Reglu => z.max(T::ZERO),
            ActivationKind::Relu2 => {
                let r = z.max(T::ZERO);
                r * r
            }
            ActivationKind::Silu | ActivationKind::Swiglu => z * sigmoid(z),
            ActivationKind::Gelu => z * normal_cdf(z),
        }
    }

    /// Derivative of [`apply`](Self::apply); the relu subgradient at 0 is 0.
    pub fn derivative<T: Real>(self, z: T) -> T {
        match self {
            ActivationKind::Relu | ActivationKind::Reglu => {
                if z > T::ZERO {
                    T::ONE
                } else {
                    T::ZERO
                }
            }
            ActivationKind::Relu2 => T::from_f64(2.0) * z.max(T::ZERO),
            ActivationKind::Silu | ActivationKind::Swiglu => {
                let s = sigmoid(z);
                s * (T::ONE + z * (T::ONE - s))
            }
            ActivationKind::Gelu => normal_cdf(z) + z * normal_pdf(z),
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::ZERO {
        T::ONE / (T::ONE + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::ONE + e)
    }
}

fn normal_cdf<T: Real>(z: T) -> T {
    let half = T::from_f64(0.5);
    half * (T::ONE + (z * T::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn normal_pdf<T: Real>(z: T) -> T {
    let half = T::from_f64(0.5);
    T::from_f64(0.3989422804014327) * (-half * z * z).exp()
}

/// Parameters of one FFN layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FfnWeights<T> {
    kind: ActivationKind,
    w_in: Matrix<T>,
    v_in: Option<Matrix<T>>,
    w_out: Matrix<T>,
    b_in: Option<Vector<T>>,
    b_out: Option<Vector<T>>,
}

/// Evaluation of a single neuron at one input.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronEval<T> {
    /// Activation value `a_i(x)`.
    pub activation: T,
    /// Output representation `n_i(x)`, length `d_model`.
    pub output: Vector<T>,
    /// `‖n_i(x)‖₂`.
    pub magnitude: T,
}

/// Per-neuron scalars for one input, without materializing output vectors.
///
/// `coefficients[i]` is the scalar `h_i` with `n_i(x) = h_i * W_out[:, i]`;
/// `magnitudes[i]` is computed with the same products and summation order as
/// `l2_norm(n_i)`, so the two routes agree bit for bit.
#[derive(Debug, Clone)]
pub struct LayerEval<T> {
    pub activations: Vec<T>,
    pub coefficients: Vec<T>,
    pub magnitudes: Vec<T>,
}

impl<T: Real> FfnWeights<T> {
    /// Validates shape consistency and the gated/two-layer field rules:
    /// gated kinds require `v_in` and forbid biases; two-layer kinds forbid
    /// `v_in` and may carry `b_in`/`b_out`.
    pub fn new(
        kind: ActivationKind,
        w_in: Matrix<T>,
        v_in: Option<Matrix<T>>,
        w_out: Matrix<T>,
        b_in: Option<Vector<T>>,
        b_out: Option<Vector<T>>,
    ) -> Result<Self> {
        let d_ff = w_in.rows();
        let d_model = w_in.cols();
        if w_out.rows() != d_model || w_out.cols() != d_ff {
            return Err(CoreError::ShapeMismatch(format!(
                "w_out is {}x{}, expected {d_model}x{d_ff}",
                w_out.rows(),
                w_out.cols()
            )));
        }
        if kind.is_gated() {
            let v = v_in.as_ref().ok_or_else(|| {
                CoreError::InvalidArgument(format!("{} requires a gate matrix", kind.name()))
            })?;
            if v.rows() != d_ff || v.cols() != d_model {
                return Err(CoreError::ShapeMismatch(format!(
                    "v_in is {}x{}, expected {d_ff}x{d_model}",
                    v.rows(),
                    v.cols()
                )));
            }
            if b_in.is_some() || b_out.is_some() {
                return Err(CoreError::InvalidArgument(format!(
                    "{} layers are bias-free",
                    kind.name()
                )));
            }
        } else {
            if v_in.is_some() {
                return Err(CoreError::InvalidArgument(format!(
                    "{} does not take a gate matrix",
                    kind.name()
                )));
            }
            if let Some(b) = &b_in {
                if b.len() != d_ff {
                    return Err(CoreError::ShapeMismatch(format!(
                        "b_in has len {}, expected {d_ff}",
                        b.len()
                    )));
                }
            }
            if let Some(b) = &b_out {
                if b.len() != d_model {
                    return Err(CoreError::ShapeMismatch(format!(
                        "b_out has len {}, expected {d_model}",
                        b.len()
                    )));
                }
            }
        }
        Ok(Self {
            kind,
            w_in,
            v_in,
            w_out,
            b_in,
            b_out,
        })
    }

    /// Gaussian-initialized layer: `W_in`/`V_in` entries have standard
    /// deviation `1/sqrt(d_model)`, `W_out` has `1/sqrt(d_ff)`. Biases are
    /// omitted (pass the result through [`Self::with_biases`] to add them).
    pub fn random(kind: ActivationKind, d_model: usize, d_ff: usize, rng: &mut DetRng) -> Self {
        let in_scale = T::from_f64(1.0 / libm::sqrt(d_model as f64));
        let out_scale = T::from_f64(1.0 / libm::sqrt(d_ff as f64));
        let mut gauss_matrix = |rows: usize, cols: usize, scale: T| {
            Matrix::from_fn(rows, cols, |_, _| rng.standard_normal::<T>() * scale)
        };
        let w_in = gauss_matrix(d_ff, d_model, in_scale);
        let v_in = kind
            .is_gated()
            .then(|| gauss_matrix(d_ff, d_model, in_scale));
        let w_out = gauss_matrix(d_model, d_ff, out_scale);
        Self {
            kind,
            w_in,
            v_in,
            w_out,
            b_in: None,
            b_out: None,
        }
    }

    /// Attach biases to a two-layer kind; errors on gated kinds.
    pub fn with_biases(self, b_in: Vector<T>, b_out: Vector<T>) -> Result<Self> {
        Self::new(
            self.kind,
            self.w_in,
            self.v_in,
            self.w_out,
            Some(b_in),
            Some(b_out),
        )
    }

    pub fn kind(&self) -> ActivationKind {
        self.kind
    }

    pub fn d_model(&self) -> usize {
        self.w_in.cols()
    }

    pub fn d_ff(&self) -> usize {
        self.w_in.rows()
    }

    pub fn w_in(&self) -> &Matrix<T> {
        &self.w_in
    }

    pub fn v_in(&self) -> Option<&Matrix<T>> {
        self.v_in.as_ref()
    }

    pub fn w_out(&self) -> &Matrix<T> {
        &self.w_out
    }

    pub fn b_in(&self) -> Option<&Vector<T>> {
        self.b_in.as_ref()
    }

    pub fn b_out(&self) -> Option<&Vector<T>> {
        self.b_out.as_ref()
    }

    pub(crate) fn w_in_mut(&mut self) -> &mut Matrix<T> {
        &mut self.w_in
    }

    pub(crate) fn v_in_mut(&mut self) -> Option<&mut Matrix<T>> {
        self.v_in.as_mut()
    }

    pub(crate) fn w_out_mut(&mut self) -> &mut Matrix<T> {
        &mut self.w_out
    }

    /// Total parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = self.w_in.rows() * self.w_in.cols() + self.w_out.rows() * self.w_out.cols();
        if let Some(v) = &self.v_in {
            n += v.rows() * v.cols();
        }
        if let Some(b) = &self.b_in {
            n += b.len();
        }
        if let Some(b) = &self.b_out {
            n += b.len();
        }
        n
    }

    fn check_input(&self, x: &Vector<T>) -> Result<()> {
        if x.len() != self.d_model() {
            return Err(CoreError::ShapeMismatch(format!(
                "input has len {}, expected d_model {}",
                x.len(),
                self.d_model()
            )));
        }
        Ok(())
    }

    /// Per-neuron scalar coefficients `h` with `FFN(x) = W_out h (+ b_out)`.
    fn coefficients(&self, x: &Vector<T>) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let pre = matvec(&self.w_in, x)?;
        let mut activations = Vec::with_capacity(self.d_ff());
        let mut coefficients = Vec::with_capacity(self.d_ff());
        match &self.v_in {
            Some(v) => {
                let gate = matvec(v, x)?;
                for (&p, &g) in pre.iter().zip(gate.iter()) {
                    let a = self.kind.apply(p);
                    activations.push(a);
                    coefficients.push(a * g);
                }
            }
            None => {
                for (i, &p) in pre.iter().enumerate() {
                    let z = match &self.b_in {
                        Some(b) => p + b.as_slice()[i],
                        None => p,
                    };
                    let a = self.kind.apply(z);
                    activations.push(a);
                    coefficients.push(a);
                }
            }
        }
        Ok((activations, coefficients))
    }

    /// Full forward pass.
    pub fn forward(&self, x: &Vector<T>) -> Result<Vector<T>> {
        let (_, coeff) = self.coefficients(x)?;
        let h = Vector::from_raw(coeff);
        let mut y = matvec(&self.w_out, &h)?;
        if let Some(b) = &self.b_out {
            for (yi, &bi) in y.as_mut_slice().iter_mut().zip(b.iter()) {
                *yi += bi;
            }
        }
        Ok(y)
    }

    /// Activation, output vector, and magnitude of neuron `i`.
    pub fn neuron_eval(&self, i: usize, x: &Vector<T>) -> Result<NeuronEval<T>> {
        self.check_input(x)?;
        if i >= self.d_ff() {
            return Err(CoreError::IndexOutOfRange {
                index: i,
                len: self.d_ff(),
            });
        }
        let p = dot(self.w_in.row(i), x.as_slice());
        let (activation, coeff) = match &self.v_in {
            Some(v) => {
                let a = self.kind.apply(p);
                (a, a * dot(v.row(i), x.as_slice()))
            }
            None => {
                let z = match &self.b_in {
                    Some(b) => p + b.as_slice()[i],
                    None => p,
                };
                let a = self.kind.apply(z);
                (a, a)
            }
        };
        let output = self.neuron_output(i, coeff);
        let magnitude = l2_norm_slice(output.as_slice());
        Ok(NeuronEval {
            activation,
            output,
            magnitude,
        })
    }

    fn neuron_output(&self, i: usize, coeff: T) -> Vector<T> {
        Vector::from_raw(
            (0..self.d_model())
                .map(|row| self.w_out.get(row, i) * coeff)
                .collect(),
        )
    }

    /// All neurons in index order. Summing the outputs elementwise (plus
    /// `b_out` when present) reproduces [`Self::forward`].
    pub fn all_neurons(&self, x: &Vector<T>) -> Result<Vec<NeuronEval<T>>> {
        let eval = self.evaluate(x)?;
        Ok((0..self.d_ff())
            .map(|i| {
                let output = self.neuron_output(i, eval.coefficients[i]);
                NeuronEval {
                    activation: eval.activations[i],
                    output,
                    magnitude: eval.magnitudes[i],
                }
            })
            .collect())
    }

    /// Activations, coefficients, and magnitudes for every neuron, without
    /// allocating the per-neuron output vectors.
    pub fn evaluate(&self, x: &Vector<T>) -> Result<LayerEval<T>> {
        let (activations, coefficients) = self.coefficients(x)?;
        let magnitudes = coefficients
            .iter()
            .enumerate()
            .map(|(i, &h)| {
                let mut acc = T::ZERO;
                for row in 0..self.d_model() {
                    let p = self.w_out.get(row, i) * h;
                    acc += p * p;
                }
                acc.sqrt()
            })
            .collect();
        Ok(LayerEval {
            activations,
            coefficients,
            magnitudes,
        })
    }

    /// Analytic gradients of `upstream · FFN(x)` with respect to every
    /// parameter and the input.
    pub fn backward(&self, x: &Vector<T>, upstream: &Vector<T>) -> Result<FfnGradients<T>> {
        self.check_input(x)?;
        if upstream.len() != self.d_model() {
            return Err(CoreError::ShapeMismatch(format!(
                "upstream has len {}, expected d_model {}",
                upstream.len(),
                self.d_model()
            )));
        }
        let d_ff = self.d_ff();
        let d_model = self.d_model();
        let pre = matvec(&self.w_in, x)?;

        // dL/dh, one entry per neuron.
        let dh = matvec_transposed(&self.w_out, upstream)?;

        match &self.v_in {
            Some(v) => {
                let gate = matvec(v, x)?;
                let mut h = Vec::with_capacity(d_ff);
                let mut dp = Vec::with_capacity(d_ff);
                let mut dq = Vec::with_capacity(d_ff);
                for i in 0..d_ff {
                    let a = self.kind.apply(pre.as_slice()[i]);
                    let da = self.kind.derivative(pre.as_slice()[i]);
                    let g = gate.as_slice()[i];
                    let d = dh.as_slice()[i];
                    h.push(a * g);
                    dp.push(d * g * da);
                    dq.push(d * a);
                }
                let dp = Vector::from_raw(dp);
                let dq = Vector::from_raw(dq);
                let mut gx = matvec_transposed(&self.w_in, &dp)?;
                let gx_gate = matvec_transposed(v, &dq)?;
                for (a, &b) in gx.as_mut_slice().iter_mut().zip(gx_gate.iter()) {
                    *a += b;
                }
                Ok(FfnGradients {
                    w_in: outer(dp.as_slice(), x.as_slice()),
                    v_in: Some(outer(dq.as_slice(), x.as_slice())),
                    w_out: outer(upstream.as_slice(), &h),
                    b_in: None,
                    b_out: None,
                    x: gx,
                })
            }
            None => {
                let mut h = Vec::with_capacity(d_ff);
                let mut dpre = Vec::with_capacity(d_ff);
                for i in 0..d_ff {
                    let z = match &self.b_in {
                        Some(b) => pre.as_slice()[i] + b.as_slice()[i],
                        None => pre.as_slice()[i],
                    };
                    h.push(self.kind.apply(z));
                    dpre.push(dh.as_slice()[i] * self.kind.derivative(z));
                }
                let dpre = Vector::from_raw(dpre);
                let gx = matvec_transposed(&self.w_in, &dpre)?;
                let g_b_out = self
                    .b_out
                    .as_ref()
                    .map(|_| Vector::from_raw(upstream.as_slice().to_vec()));
                debug_assert_eq!(upstream.len(), d_model);
                Ok(FfnGradients {
                    w_in: outer(dpre.as_slice(), x.as_slice()),
                    v_in: None,
                    w_out: outer(upstream.as_slice(), &h),
                    b_in: self.b_in.as_ref().map(|_| dpre.clone()),
                    b_out: g_b_out,
                    x: gx,
                })
            }
        }
    }
}

/// Gradients mirroring the weight fields, plus the input gradient.
#[derive(Debug, Clone)]
pub struct FfnGradients<T> {
    pub w_in: Matrix<T>,
    pub v_in: Option<Matrix<T>>,
    pub w_out: Matrix<T>,
    pub b_in: Option<Vector<T>>,
    pub b_out: Option<Vector<T>>,
    pub x: Vector<T>,
}

fn outer<T: Real>(col: &[T], row: &[T]) -> Matrix<T> {
    Matrix::from_fn(col.len(), row.len(), |i, j| col[i] * row[j])
}
