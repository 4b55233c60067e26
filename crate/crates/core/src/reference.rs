//! Spectral reference solver for separable potentials.
//!
//! Each coordinate of a separable problem contributes a 1-d periodic
//! eigenproblem
//!
//! ```text
//! -psi''(x) + c cos(freq x) psi(x) = lambda psi(x)      on [0, 2pi]
//! ```
//!
//! Expanding `psi = sum_{m=-N..N} a_m e^{imx}` turns this into the real
//! symmetric eigenproblem `M a = 2 lambda a` where `M` has diagonal `2 m^2`
//! and constant entries `c` at offset `freq`. Modes couple only within a
//! residue class of `m mod freq`, so `M` splits into `freq` tridiagonal
//! chains; each chain is solved by an implicit-shift QL iteration with
//! accumulated rotations. Eigenvectors of a chain are symmetric or
//! antisymmetric under `m -> -m` (the matrix is unchanged by that flip), so
//! every eigenfunction is realized as a pure cosine or pure sine series —
//! real by construction — then normalized to unit mean square over the box
//! and sign-fixed.
//!
//! d-dimensional eigenpairs of `-Delta + sum_j V_j(x_j)` are products of 1-d
//! eigenfunctions with eigenvalue the sum; the k-th smallest sum over index
//! tuples is found with a heap walk.

use crate::linalg::Mat;
use crate::problems::{Factor1d, Problem, ProblemKind};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("QL iteration failed to converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("eigenpair index {k} out of range 1..={max}")]
    BadIndex { k: usize, max: usize },
    #[error("potential frequency {0} not supported (expected 1 or 2)")]
    BadFrequency(u8),
    #[error("basis truncation must be at least 1")]
    BadTruncation,
    #[error("family with closed-form reference provides only the first eigenpair, requested {0}")]
    AnalyticOnlyFirst(usize),
}

/// One-dimensional spectral problem specification.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FourierProblem1d {
    /// Potential coupling coefficient.
    pub c: f64,
    /// Potential frequency: 1 for `cos x`, 2 for `cos 2x`.
    pub freq: u8,
    /// Truncation: modes `-N..=N`.
    pub nbasis: usize,
}

/// The assembled Galerkin matrix, kept in structured (banded) form.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralMatrix {
    /// `2 m^2` for `m = -N..=N`.
    pub diagonal: Vec<f64>,
    /// Constant off-diagonal value at offset `freq`.
    pub offdiag: f64,
    /// Band offset.
    pub freq: u8,
}

impl SpectralMatrix {
    /// Size of the (square) matrix.
    pub fn size(&self) -> usize {
        self.diagonal.len()
    }

    /// Dense form, for oracles and small checks.
    pub fn dense(&self) -> Mat {
        let n = self.size();
        let f = self.freq as usize;
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, self.diagonal[i]);
            if i + f < n {
                m.set(i, i + f, self.offdiag);
                m.set(i + f, i, self.offdiag);
            }
        }
        m
    }
}

/// Galerkin matrix of a 1-d problem: diagonal `2m^2`, entries `c` at offset
/// `freq`; the eigenproblem is `M a = 2 lambda a`.
pub fn build_matrix(prob: FourierProblem1d) -> SpectralMatrix {
    let n = prob.nbasis as i64;
    let diagonal = (-n..=n).map(|m| 2.0 * (m * m) as f64).collect();
    SpectralMatrix { diagonal, offdiag: prob.c, freq: prob.freq }
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric
/// tridiagonal matrix. `offdiag[i]` couples `i` and `i+1`. Eigenvector `j`
/// is column `j` of the returned matrix.
///
/// Implicit-shift QL with accumulated rotations. Fixed iteration cap per
/// eigenvalue; exceeding it reports non-convergence rather than looping.
pub fn tridiag_eigensolve(
    diag: &[f64],
    offdiag: &[f64],
) -> Result<(Vec<f64>, Mat), ReferenceError> {
    let n = diag.len();
    assert_eq!(offdiag.len() + 1, n.max(1), "offdiag must have n-1 entries");
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(offdiag);
    let mut z = Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 });

    const MAX_SWEEPS: usize = 50;
    for l in 0..n {
        let mut iter = 0;
        loop {
            // Look for a negligible off-diagonal to split at.
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > MAX_SWEEPS {
                return Err(ReferenceError::NoConvergence(MAX_SWEEPS));
            }
            // Implicit shift from the 2x2 at the current corner.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c) = (1.0, 1.0);
            let mut p = 0.0;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    // Deflate: rotation chain vanished early.
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z.get(k, i + 1);
                    z.set(k, i + 1, s * z.get(k, i) + c * f);
                    z.set(k, i, c * z.get(k, i) - s * f);
                }
                if i == l {
                    d[l] -= p;
                    e[l] = g;
                    e[m] = 0.0;
                }
            }
        }
    }

    // Ascending eigenvalue order, columns swapped along.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let evals: Vec<f64> = order.iter().map(|&j| d[j]).collect();
    let evecs = Mat::from_fn(n, n, |i, j| z.get(i, order[j]));
    Ok((evals, evecs))
}

/// A solved 1-d eigenpair, realized as a real trigonometric series.
#[derive(Clone, Debug)]
pub struct Eigenpair1d {
    pub lambda: f64,
    /// Complex Fourier coefficients `a_m` for `m = -N..=N`, `(re, im)`,
    /// consistent with the realized series.
    pub coeffs: Vec<(f64, f64)>,
    series: Series,
}

#[derive(Clone, Debug)]
enum Series {
    /// `v[0] + sum_m v[m] cos(m x)`.
    Cos(Vec<f64>),
    /// `sum_m v[m] sin(m x)` (`v[0]` unused).
    Sin(Vec<f64>),
}

impl Eigenpair1d {
    pub fn eval(&self, x: f64) -> f64 {
        match &self.series {
            Series::Cos(v) => {
                let mut acc = v[0];
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc += vm * (m as f64 * x).cos();
                }
                acc
            }
            Series::Sin(v) => {
                let mut acc = 0.0;
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc += vm * (m as f64 * x).sin();
                }
                acc
            }
        }
    }

    pub fn deriv(&self, x: f64) -> f64 {
        match &self.series {
            Series::Cos(v) => {
                let mut acc = 0.0;
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc -= vm * m as f64 * (m as f64 * x).sin();
                }
                acc
            }
            Series::Sin(v) => {
                let mut acc = 0.0;
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc += vm * m as f64 * (m as f64 * x).cos();
                }
                acc
            }
        }
    }

    pub fn deriv2(&self, x: f64) -> f64 {
        match &self.series {
            Series::Cos(v) => {
                let mut acc = 0.0;
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc -= vm * (m * m) as f64 * (m as f64 * x).cos();
                }
                acc
            }
            Series::Sin(v) => {
                let mut acc = 0.0;
                for (m, &vm) in v.iter().enumerate().skip(1) {
                    acc -= vm * (m * m) as f64 * (m as f64 * x).sin();
                }
                acc
            }
        }
    }
}

/// All eigenpairs of a 1-d problem, ascending by eigenvalue.
pub fn solve_1d_all(prob: FourierProblem1d) -> Result<Vec<Eigenpair1d>, ReferenceError> {
    if prob.nbasis < 1 {
        return Err(ReferenceError::BadTruncation);
    }
    if prob.freq != 1 && prob.freq != 2 {
        return Err(ReferenceError::BadFrequency(prob.freq));
    }
    let n = prob.nbasis as i64;
    let freq = prob.freq as i64;

    // Modes couple only within a residue class of m mod freq; each class,
    // in ascending mode order, forms a tridiagonal chain.
    let mut pairs: Vec<(f64, Vec<i64>, Vec<f64>)> = Vec::new();
    for class in 0..freq {
        let modes: Vec<i64> = (-n..=n).filter(|m| m.rem_euclid(freq) == class).collect();
        if modes.is_empty() {
            continue;
        }
        let diag: Vec<f64> = modes.iter().map(|&m| 2.0 * (m * m) as f64).collect();
        let off = vec![prob.c; modes.len().saturating_sub(1)];
        let (evals, evecs) = tridiag_eigensolve(&diag, &off)?;
        for j in 0..modes.len() {
            let v: Vec<f64> = (0..modes.len()).map(|i| evecs.get(i, j)).collect();
            pairs.push((evals[j] / 2.0, modes.clone(), v));
        }
    }
    // Ascending; ties broken by the realized content deterministically via
    // stable sort on the eigenvalue alone.
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));

    Ok(pairs
        .into_iter()
        .map(|(lambda, modes, v)| realize(prob.nbasis, lambda, &modes, &v))
        .collect())
}

/// `k`-th (1-based) eigenpair of a 1-d problem.
pub fn solve_1d(prob: FourierProblem1d, k: usize) -> Result<Eigenpair1d, ReferenceError> {
    let all = solve_1d_all(prob)?;
    if k == 0 || k > all.len() {
        return Err(ReferenceError::BadIndex { k, max: all.len() });
    }
    Ok(all.into_iter().nth(k - 1).unwrap())
}

/// Turn a chain eigenvector (coefficients on `modes`, a residue class of
/// `m mod freq`) into a real, normalized, sign-fixed trigonometric series.
///
/// The chain matrix is invariant under `m -> -m`, so non-degenerate
/// eigenvectors are symmetric or antisymmetric under that flip and realize
/// as pure cosine or pure sine series. For degenerate eigenvalues (the
/// free spectrum at `c = 0`) the dominant of the two projections is kept —
/// still an exact eigenfunction of the same eigenvalue.
fn realize(nbasis: usize, lambda: f64, modes: &[i64], v: &[f64]) -> Eigenpair1d {
    let coeff_of = |m: i64| -> f64 {
        match modes.binary_search(&m) {
            Ok(i) => v[i],
            Err(_) => 0.0,
        }
    };
    // Symmetric part -> cosine series, antisymmetric -> sine series.
    let mut cos_series = vec![0.0; nbasis + 1];
    let mut sin_series = vec![0.0; nbasis + 1];
    cos_series[0] = coeff_of(0);
    for m in 1..=nbasis as i64 {
        let s = 0.5 * (coeff_of(m) + coeff_of(-m));
        let t = 0.5 * (coeff_of(m) - coeff_of(-m));
        // a_m e^{imx} + a_{-m} e^{-imx} = 2s cos(mx) + 2it sin(mx).
        cos_series[m as usize] = 2.0 * s;
        sin_series[m as usize] = 2.0 * t;
    }
    // Mean squares over the box: cos -> v0^2 + sum vm^2/2, sin -> sum vm^2/2.
    let cos_norm2 = cos_series[0] * cos_series[0]
        + 0.5 * cos_series[1..].iter().map(|x| x * x).sum::<f64>();
    let sin_norm2 = 0.5 * sin_series[1..].iter().map(|x| x * x).sum::<f64>();

    let (mut series, norm2) = if cos_norm2 >= sin_norm2 {
        (Series::Cos(cos_series), cos_norm2)
    } else {
        (Series::Sin(sin_series), sin_norm2)
    };

    // Normalize to unit mean square, then fix the sign: nonnegative mean,
    // with a deterministic tie-break (first nonzero coefficient positive)
    // for mean-zero functions.
    let scale = 1.0 / norm2.sqrt();
    let flip = {
        let v = match &series {
            Series::Cos(v) | Series::Sin(v) => v,
        };
        let mean = if matches!(series, Series::Cos(_)) { v[0] } else { 0.0 };
        if mean.abs() > 1e-12 {
            mean < 0.0
        } else {
            v.iter().find(|x| x.abs() > 1e-12).map_or(false, |&x| x < 0.0)
        }
    };
    let s = if flip { -scale } else { scale };
    match &mut series {
        Series::Cos(v) | Series::Sin(v) => {
            for x in v.iter_mut() {
                *x *= s;
            }
        }
    }

    // Complex exponential coefficients consistent with the realized series:
    // cos(mx) = (e^{imx} + e^{-imx})/2, sin(mx) = (e^{imx} - e^{-imx})/2i.
    let mut coeffs = vec![(0.0, 0.0); 2 * nbasis + 1];
    match &series {
        Series::Cos(v) => {
            coeffs[nbasis] = (v[0], 0.0);
            for m in 1..=nbasis {
                coeffs[nbasis + m] = (v[m] / 2.0, 0.0);
                coeffs[nbasis - m] = (v[m] / 2.0, 0.0);
            }
        }
        Series::Sin(v) => {
            for m in 1..=nbasis {
                coeffs[nbasis + m] = (0.0, -v[m] / 2.0);
                coeffs[nbasis - m] = (0.0, v[m] / 2.0);
            }
        }
    }

    Eigenpair1d { lambda, coeffs, series }
}

/// Product eigenfunction of a separable d-dimensional operator.
#[derive(Clone, Debug)]
pub struct TensorEigenfunction {
    pub lambda: f64,
    factors: Vec<Eigenpair1d>,
}

impl TensorEigenfunction {
    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.factors.len());
        self.factors.iter().zip(x).map(|(f, &xi)| f.eval(xi)).product()
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.factors.len());
        let vals: Vec<f64> = self.factors.iter().zip(x).map(|(f, &xi)| f.eval(xi)).collect();
        (0..x.len())
            .map(|i| {
                let mut g = self.factors[i].deriv(x[i]);
                for (j, &v) in vals.iter().enumerate() {
                    if j != i {
                        g *= v;
                    }
                }
                g
            })
            .collect()
    }
}

/// Tensor eigenpair from one chosen 1-d pair per dimension:
/// `lambda = sum_j lambda_j`, `Psi(x) = prod_j Psi_j(x_j)`.
pub fn assemble_tensor_product(pairs: Vec<Eigenpair1d>) -> TensorEigenfunction {
    assert!(!pairs.is_empty());
    let lambda = pairs.iter().map(|p| p.lambda).sum();
    TensorEigenfunction { lambda, factors: pairs }
}

/// `k`-th (1-based) eigenpair of the d-dimensional operator: the index
/// tuple whose 1-d eigenvalue sum ranks `k`-th. Heap walk over tuples,
/// deterministic tie order.
pub fn kth_tensor_eigenpair(
    per_dim: &[Vec<Eigenpair1d>],
    k: usize,
) -> Result<TensorEigenfunction, ReferenceError> {
    assert!(!per_dim.is_empty());
    let max: usize = per_dim.iter().map(|v| v.len()).product();
    if k == 0 || k > max {
        return Err(ReferenceError::BadIndex { k, max });
    }

    #[derive(PartialEq)]
    struct Entry(f64, Vec<usize>);
    impl Eq for Entry {}
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            // Min-heap via reversed compare; ties broken lexicographically
            // so the walk order never depends on float identity quirks.
            other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }

    let sum_of = |idx: &[usize]| -> f64 {
        idx.iter().enumerate().map(|(d, &i)| per_dim[d][i].lambda).sum()
    };
    let mut heap = std::collections::BinaryHeap::new();
    let mut seen = BTreeSet::new();
    let first = vec![0usize; per_dim.len()];
    heap.push(Entry(sum_of(&first), first.clone()));
    seen.insert(first);

    let mut popped = 0;
    loop {
        let Entry(_, idx) = heap.pop().expect("heap exhausted before k-th tuple");
        popped += 1;
        if popped == k {
            let pairs: Vec<Eigenpair1d> = idx
                .iter()
                .enumerate()
                .map(|(d, &i)| per_dim[d][i].clone())
                .collect();
            return Ok(assemble_tensor_product(pairs));
        }
        for d in 0..per_dim.len() {
            if idx[d] + 1 < per_dim[d].len() {
                let mut next = idx.clone();
                next[d] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Entry(sum_of(&next), next));
                }
            }
        }
    }
}

/// A reference eigenpair for a problem: closed form where one exists,
/// spectral tensor product for the separable families.
#[derive(Clone, Debug)]
pub enum RefPair {
    Analytic(Problem),
    Spectral(TensorEigenfunction),
}

impl RefPair {
    pub fn lambda(&self) -> f64 {
        match self {
            RefPair::Analytic(p) => p.lambda_exact().expect("analytic reference"),
            RefPair::Spectral(t) => t.lambda,
        }
    }

    pub fn psi(&self, x: &[f64]) -> f64 {
        match self {
            RefPair::Analytic(p) => p.psi_exact(x).expect("analytic reference"),
            RefPair::Spectral(t) => t.psi(x),
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        match self {
            RefPair::Analytic(p) => p.grad_psi_exact(x).expect("analytic reference"),
            RefPair::Spectral(t) => t.grad(x),
        }
    }
}

/// Reference for the `k`-th eigenpair of `problem`, if the family supports
/// it: closed-form families provide `k = 1`; separable families use the
/// spectral route for any `k`.
pub fn reference_for(
    problem: &Problem,
    nbasis: usize,
    k: usize,
) -> Result<RefPair, ReferenceError> {
    match problem.kind() {
        ProblemKind::FokkerPlanck | ProblemKind::NonlinearSchrodinger => {
            if k != 1 {
                return Err(ReferenceError::AnalyticOnlyFirst(k));
            }
            Ok(RefPair::Analytic(problem.clone()))
        }
        ProblemKind::LinearSchrodinger | ProblemKind::DoubleWell => {
            let factors: Vec<Factor1d> = problem.spectral_factors().expect("separable family");
            let per_dim: Vec<Vec<Eigenpair1d>> = factors
                .iter()
                .map(|f| {
                    solve_1d_all(FourierProblem1d { c: f.coeff, freq: f.freq, nbasis })
                })
                .collect::<Result<_, _>>()?;
            Ok(RefPair::Spectral(kth_tensor_eigenpair(&per_dim, k)?))
        }
    }
}
