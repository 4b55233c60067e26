//! Periodic network ansatz: trigonometric features feeding two disjoint
//! ReLU MLPs — a scalar head for the eigenfunction and a d-vector head for
//! its scaled gradient — plus the trainable eigenvalue scalar.
//!
//! Inputs live on the periodic box `[0, 2pi]^d`. The feature map
//!
//! ```text
//! x -> [sin(1·x), ..., sin(M·x), cos(1·x), ..., cos(M·x)]    (length 2·M·d)
//! ```
//!
//! (each block elementwise over the d coordinates) makes every network
//! output exactly 2pi-periodic by construction, so paths never need to be
//! folded back into the box.
//!
//! Flat parameter layout, used for gradients, optimizer state and
//! checkpoints: eigenfunction-head weights layer by layer (row-major, each
//! row one output unit), then its biases layer by layer, then the gradient
//! head in the same order, then the eigenvalue scalar last.

use crate::autodiff::{Shape, Tape, Var};
use crate::linalg::Mat;
use crate::rng::{RunRng, StreamKind};
use rand::Rng;

/// Architecture of the ansatz.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    /// Spatial dimension d.
    pub dim: usize,
    /// Number of harmonics M in the feature map.
    pub harmonics: usize,
    /// Hidden layer widths shared by both heads.
    pub hidden: Vec<usize>,
    /// Initial value of the eigenvalue scalar.
    pub lambda_init: f64,
}

impl NetworkSpec {
    pub fn feature_len(&self) -> usize {
        2 * self.harmonics * self.dim
    }

    fn layer_dims(&self, out: usize) -> Vec<(usize, usize)> {
        // (out, in) per layer.
        let mut dims = Vec::new();
        let mut prev = self.feature_len();
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((out, prev));
        dims
    }
}

/// One MLP's numeric parameters. `weights[l]` is `(out_l, in_l)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    pub weights: Vec<Mat>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpParams {
    fn init(dims: &[(usize, usize)], rng: &mut impl Rng) -> Self {
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &(out, inp) in dims {
            let bound = (6.0 / inp as f64).sqrt();
            let w = Mat::from_fn(out, inp, |_, _| rng.gen_range(-bound..bound));
            weights.push(w);
            biases.push(vec![0.0; out]);
        }
        MlpParams { weights, biases }
    }

    fn zeros(dims: &[(usize, usize)]) -> Self {
        MlpParams {
            weights: dims.iter().map(|&(o, i)| Mat::zeros(o, i)).collect(),
            biases: dims.iter().map(|&(o, _)| vec![0.0; o]).collect(),
        }
    }

    fn num_params(&self) -> usize {
        let w: usize = self.weights.iter().map(|m| m.rows() * m.cols()).sum();
        let b: usize = self.biases.iter().map(|b| b.len()).sum();
        w + b
    }
}

/// Full parameter set: both heads plus the eigenvalue scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    pub spec: NetworkSpec,
    pub psi: MlpParams,
    pub grad: MlpParams,
    pub lambda: f64,
}

impl Params {
    /// Initialize with uniform He fan-in scaling (`±sqrt(6/fan_in)`), zero
    /// biases, and `lambda = spec.lambda_init`. Deterministic in the seed:
    /// draws happen in flat-layout order from one dedicated stream.
    pub fn init(spec: &NetworkSpec, rng: &RunRng) -> Self {
        let mut stream = rng.stream(StreamKind::Init, 0, 0);
        let psi = MlpParams::init(&spec.layer_dims(1), &mut stream);
        let grad = MlpParams::init(&spec.layer_dims(spec.dim), &mut stream);
        Params { spec: spec.clone(), psi, grad, lambda: spec.lambda_init }
    }

    /// All-zero parameters of the same architecture (useful for optimizer
    /// state and tests).
    pub fn zeros(spec: &NetworkSpec) -> Self {
        Params {
            spec: spec.clone(),
            psi: MlpParams::zeros(&spec.layer_dims(1)),
            grad: MlpParams::zeros(&spec.layer_dims(spec.dim)),
            lambda: 0.0,
        }
    }

    /// Total number of scalar parameters (including lambda).
    pub fn num_params(&self) -> usize {
        self.psi.num_params() + self.grad.num_params() + 1
    }

    /// Serialize into the flat layout.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for head in [&self.psi, &self.grad] {
            for w in &head.weights {
                out.extend_from_slice(w.as_slice());
            }
            for b in &head.biases {
                out.extend_from_slice(b);
            }
        }
        out.push(self.lambda);
        out
    }

    /// Overwrite parameters from the flat layout.
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length mismatch");
        let mut off = 0;
        for head in [&mut self.psi, &mut self.grad] {
            for w in &mut head.weights {
                let n = w.rows() * w.cols();
                w.as_mut_slice().copy_from_slice(&flat[off..off + n]);
                off += n;
            }
            for b in &mut head.biases {
                let n = b.len();
                b.copy_from_slice(&flat[off..off + n]);
                off += n;
            }
        }
        self.lambda = flat[off];
    }

    /// `self += s * v` over the flat layout (test helper for perturbations).
    pub fn axpy_flat(&mut self, s: f64, v: &[f64]) {
        let mut flat = self.to_flat();
        assert_eq!(flat.len(), v.len());
        for (a, b) in flat.iter_mut().zip(v) {
            *a += s * b;
        }
        self.set_flat(&flat);
    }

    /// Record all parameters on `tape` as leaves, in flat-layout order.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.bind_impl(tape, true)
    }

    /// Record all parameters as constants (evaluation only; backward will
    /// not reach them).
    pub fn bind_const(&self, tape: &mut Tape) -> Bound {
        self.bind_impl(tape, false)
    }

    fn bind_impl(&self, tape: &mut Tape, differentiable: bool) -> Bound {
        let push = |tape: &mut Tape, data: &[f64], shape: Shape| -> Var {
            if differentiable {
                tape.leaf(data, shape)
            } else {
                tape.constant(data, shape)
            }
        };
        let mut heads = Vec::new();
        for head in [&self.psi, &self.grad] {
            let w: Vec<Var> = head
                .weights
                .iter()
                .map(|m| push(tape, m.as_slice(), Shape::Mat(m.rows(), m.cols())))
                .collect();
            let b: Vec<Var> = head
                .biases
                .iter()
                .map(|v| push(tape, v, Shape::Vec(v.len())))
                .collect();
            heads.push((w, b));
        }
        let (grad_w, grad_b) = heads.pop().unwrap();
        let (psi_w, psi_b) = heads.pop().unwrap();
        let lambda = push(tape, &[self.lambda], Shape::Scalar);
        Bound {
            harmonics: self.spec.harmonics,
            dim: self.spec.dim,
            psi_w,
            psi_b,
            grad_w,
            grad_b,
            lambda,
        }
    }
}

/// Tape handles for one binding of [`Params`].
pub struct Bound {
    pub harmonics: usize,
    pub dim: usize,
    pub psi_w: Vec<Var>,
    pub psi_b: Vec<Var>,
    pub grad_w: Vec<Var>,
    pub grad_b: Vec<Var>,
    pub lambda: Var,
}

impl Bound {
    /// Eigenfunction head at a `(k, d)` batch of points: `Vec(k)` values.
    pub fn psi(&self, tape: &mut Tape, x: Var) -> Var {
        let feats = features(tape, x, self.harmonics);
        let out = mlp(tape, feats, &self.psi_w, &self.psi_b);
        let (k, _) = match out.shape {
            Shape::Mat(r, c) => (r, c),
            _ => unreachable!(),
        };
        tape.reshape(out, Shape::Vec(k))
    }

    /// Scaled-gradient head at a `(k, d)` batch: `(k, d)` values.
    pub fn scaled_grad(&self, tape: &mut Tape, x: Var) -> Var {
        let feats = features(tape, x, self.harmonics);
        mlp(tape, feats, &self.grad_w, &self.grad_b)
    }

    /// Eigenfunction head values together with the *recorded* gradient of
    /// the head with respect to its input points. `x` must be a leaf.
    ///
    /// Rows of the network are independent, so differentiating the sum over
    /// the batch w.r.t. the input matrix yields exactly the per-point
    /// gradients. Because the gradient is recorded on the tape, anything
    /// computed from it remains differentiable w.r.t. the head parameters.
    pub fn psi_with_input_grad(
        &self,
        tape: &mut Tape,
        x: Var,
    ) -> Result<(Var, Var), crate::autodiff::AutodiffError> {
        let psi = self.psi(tape, x);
        let total = tape.sum(psi);
        let grad = tape.input_gradient(total, x)?;
        Ok((psi, grad))
    }

    /// Collect numeric gradients for all parameters into `out`, flat layout.
    /// Disconnected parameters contribute zeros.
    pub fn collect_gradients(&self, grads: &crate::autodiff::Gradients, out: &mut [f64]) {
        let mut off = 0;
        for (w, b) in [(&self.psi_w, &self.psi_b), (&self.grad_w, &self.grad_b)] {
            for &v in w {
                let n = v.shape.len();
                grads.write(v, &mut out[off..off + n]);
                off += n;
            }
            for &v in b {
                let n = v.shape.len();
                grads.write(v, &mut out[off..off + n]);
                off += n;
            }
        }
        grads.write(self.lambda, &mut out[off..off + 1]);
        assert_eq!(off + 1, out.len(), "gradient buffer length mismatch");
    }
}

/// Trigonometric feature map on a `(k, d)` batch: sine blocks for harmonics
/// `1..=M`, then cosine blocks, `(k, 2·M·d)` total.
pub fn features(tape: &mut Tape, x: Var, harmonics: usize) -> Var {
    assert!(harmonics >= 1, "need at least one harmonic");
    let mut parts = Vec::with_capacity(2 * harmonics);
    for j in 1..=harmonics {
        let s = if j == 1 { x } else { tape.scale(x, j as f64) };
        parts.push(tape.sin(s));
    }
    for j in 1..=harmonics {
        let s = if j == 1 { x } else { tape.scale(x, j as f64) };
        parts.push(tape.cos(s));
    }
    tape.concat_cols(&parts)
}

fn mlp(tape: &mut Tape, feats: Var, w: &[Var], b: &[Var]) -> Var {
    let mut h = feats;
    for l in 0..w.len() {
        h = tape.matmul_nt(h, w[l]);
        h = tape.add_row_vec(h, b[l]);
        if l + 1 < w.len() {
            h = tape.relu(h);
        }
    }
    h
}
