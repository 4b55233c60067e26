//! Evaluation quantities: eigenfunction and gradient errors against a
//! reference, density histograms, and series smoothing.
//!
//! The error formulas compare *normalized* fields so that the arbitrary
//! scale of either side cancels:
//!
//! * eigenfunction: network values divided by the trained normalizer `Z`,
//!   reference values divided by their own batch RMS `sqrt((1/K) sum r_k^2)`;
//! * gradient: each side divided by its own RMS under `(1/(K d)) sum |.|^2`.
//!
//! The eigenfunction sign is a gauge. The normalizer convention usually
//! pins the network's sign, but the reference's sign is arbitrary, so
//! [`evaluate`] flips the reference (values and gradients together) when its
//! correlation with the network is negative. The bare `err_*` functions
//! evaluate the displayed formulas with no alignment.

use crate::linalg::Mat;
use crate::problems::Problem;
use crate::reference::RefPair;
use crate::rng::{RunRng, StreamKind};
use crate::sde::sample_initial;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("value lists must have equal lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least one sample")]
    Empty,
    #[error("field has zero RMS, cannot normalize")]
    ZeroRms,
    #[error("normalizer must be finite and nonzero, got {0}")]
    BadNormalizer(f64),
}

fn rms(values: &[f64]) -> f64 {
    (values.iter().map(|&v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

fn check_pair(net: &[f64], reference: &[f64]) -> Result<f64, MetricsError> {
    if net.len() != reference.len() {
        return Err(MetricsError::LengthMismatch(net.len(), reference.len()));
    }
    if net.is_empty() {
        return Err(MetricsError::Empty);
    }
    let r = rms(reference);
    if r == 0.0 {
        return Err(MetricsError::ZeroRms);
    }
    Ok(r)
}

/// Root mean squared difference between `net/z` and the RMS-normalized
/// reference.
pub fn err_psi_l2(net: &[f64], z: f64, reference: &[f64]) -> Result<f64, MetricsError> {
    if !z.is_finite() || z == 0.0 {
        return Err(MetricsError::BadNormalizer(z));
    }
    let r = check_pair(net, reference)?;
    let k = net.len() as f64;
    let mse = net
        .iter()
        .zip(reference)
        .map(|(&n, &rf)| {
            let d = n / z - rf / r;
            d * d
        })
        .sum::<f64>()
        / k;
    Ok(mse.sqrt())
}

/// Maximum absolute difference between `net/z` and the RMS-normalized
/// reference.
pub fn err_psi_inf(net: &[f64], z: f64, reference: &[f64]) -> Result<f64, MetricsError> {
    if !z.is_finite() || z == 0.0 {
        return Err(MetricsError::BadNormalizer(z));
    }
    let r = check_pair(net, reference)?;
    Ok(net
        .iter()
        .zip(reference)
        .map(|(&n, &rf)| (n / z - rf / r).abs())
        .fold(0.0, f64::max))
}

/// RMS difference between the two gradient fields after each is divided by
/// its own RMS under `(1/(K d)) sum |.|^2`. Positive rescaling of either
/// argument therefore cancels.
pub fn err_grad(net: &Mat, reference: &Mat) -> Result<f64, MetricsError> {
    if net.rows() != reference.rows() || net.cols() != reference.cols() {
        return Err(MetricsError::LengthMismatch(
            net.rows() * net.cols(),
            reference.rows() * reference.cols(),
        ));
    }
    if net.rows() == 0 || net.cols() == 0 {
        return Err(MetricsError::Empty);
    }
    let rn = rms(net.as_slice());
    let rr = rms(reference.as_slice());
    if rn == 0.0 || rr == 0.0 {
        return Err(MetricsError::ZeroRms);
    }
    let kd = net.as_slice().len() as f64;
    let mse = net
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(&n, &rf)| {
            let d = n / rn - rf / rr;
            d * d
        })
        .sum::<f64>()
        / kd;
    Ok(mse.sqrt())
}

/// Sign to apply to the reference so it correlates nonnegatively with the
/// network values: `-1.0` when the inner product is negative, else `1.0`.
pub fn reference_sign(net: &[f64], reference: &[f64]) -> f64 {
    let dot: f64 = net.iter().zip(reference).map(|(&n, &r)| n * r).sum();
    if dot < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Uniform validation points with cached reference values, fixed per
/// address so repeated evaluation sees the same points.
#[derive(Clone, Debug)]
pub struct ValidationSet {
    pub points: Mat,
    /// Reference eigenfunction values (unnormalized, sign as produced).
    pub ref_psi: Vec<f64>,
    /// Reference scaled gradient `sigma * grad psi`.
    pub ref_grad: Mat,
}

impl ValidationSet {
    /// Sample `k` points from the validation stream at `step` (use a fixed
    /// step for a set that never changes, or the training step for a
    /// resampling cadence) and cache the reference pair on them.
    pub fn sample(problem: &Problem, pair: &RefPair, k: usize, rng: &RunRng, step: u64) -> Self {
        let points = sample_initial(k, problem.dim(), rng, StreamKind::Validation, step, 0);
        let sigma = problem.sigma();
        let mut ref_psi = Vec::with_capacity(k);
        let mut ref_grad = Mat::zeros(k, problem.dim());
        for p in 0..k {
            let x = points.row(p);
            ref_psi.push(pair.psi(x));
            for (o, g) in ref_grad.row_mut(p).iter_mut().zip(pair.grad(x)) {
                *o = sigma * g;
            }
        }
        ValidationSet { points, ref_psi, ref_grad }
    }

    pub fn len(&self) -> usize {
        self.ref_psi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ref_psi.is_empty()
    }
}

/// The three §-style error numbers for one evaluation pass.
#[derive(Clone, Copy, Debug)]
pub struct ErrorTriple {
    pub psi_l2: f64,
    pub psi_inf: f64,
    pub grad: f64,
}

/// Evaluate all errors of the network fields against the validation set,
/// flipping the reference sign first if it anticorrelates with the network.
pub fn evaluate(
    net_psi: &[f64],
    z: f64,
    net_grad: &Mat,
    vset: &ValidationSet,
) -> Result<ErrorTriple, MetricsError> {
    let sign = reference_sign(net_psi, &vset.ref_psi);
    let ref_psi: Vec<f64> = vset.ref_psi.iter().map(|&v| sign * v).collect();
    let mut ref_grad = vset.ref_grad.clone();
    for v in ref_grad.as_mut_slice() {
        *v *= sign;
    }
    Ok(ErrorTriple {
        psi_l2: err_psi_l2(net_psi, z, &ref_psi)?,
        psi_inf: err_psi_inf(net_psi, z, &ref_psi)?,
        grad: err_grad(net_grad, &ref_grad)?,
    })
}

/// Normalized, sign-aligned eigenfunction values (network, reference) as
/// they enter the errors — the inputs for density overlays.
pub fn aligned_normalized_psi(
    net_psi: &[f64],
    z: f64,
    ref_psi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), MetricsError> {
    if !z.is_finite() || z == 0.0 {
        return Err(MetricsError::BadNormalizer(z));
    }
    let r = check_pair(net_psi, ref_psi)?;
    let sign = reference_sign(net_psi, ref_psi);
    let net = net_psi.iter().map(|&v| v / z).collect();
    let reference = ref_psi.iter().map(|&v| sign * v / r).collect();
    Ok((net, reference))
}

/// Histogram of sampled values normalized to a probability density.
#[derive(Clone, Debug)]
pub struct DensityHistogram {
    /// `bins + 1` edges, uniform width.
    pub edges: Vec<f64>,
    /// Raw occupancy per bin; sums to the sample count.
    pub counts: Vec<u64>,
    /// `counts / (n * width)`; integrates to 1 over the bins.
    pub density: Vec<f64>,
}

impl DensityHistogram {
    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }
}

fn histogram_over(values: &[f64], lo: f64, hi: f64, bins: usize) -> DensityHistogram {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let mut idx = ((v - lo) / width) as usize;
        if idx >= bins {
            idx = bins - 1;
        }
        counts[idx] += 1;
    }
    let n = values.len() as f64;
    let density = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    DensityHistogram { edges, counts, density }
}

/// Range used for a value sample: the empirical one, widened symmetrically
/// when it degenerates to a point so the histogram keeps a finite bin width.
fn sample_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Monte Carlo density estimate of the sampled values over their empirical
/// range.
pub fn density(values: &[f64], bins: usize) -> Result<DensityHistogram, MetricsError> {
    assert!(bins >= 1, "need at least one bin");
    if values.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (lo, hi) = sample_range(values);
    Ok(histogram_over(values, lo, hi, bins))
}

/// Densities of two value samples over shared bins (the union of their
/// ranges) so the histograms overlay directly.
pub fn density_overlay(
    net: &[f64],
    reference: &[f64],
    bins: usize,
) -> Result<(DensityHistogram, DensityHistogram), MetricsError> {
    assert!(bins >= 1, "need at least one bin");
    if net.is_empty() || reference.is_empty() {
        return Err(MetricsError::Empty);
    }
    let (nlo, nhi) = sample_range(net);
    let (rlo, rhi) = sample_range(reference);
    let (lo, hi) = (nlo.min(rlo), nhi.max(rhi));
    Ok((histogram_over(net, lo, hi, bins), histogram_over(reference, lo, hi, bins)))
}

/// Trailing moving average with the given window; the first entries average
/// over however many points exist so far.
pub fn smooth(history: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    let mut out = Vec::with_capacity(history.len());
    let mut acc = 0.0;
    for i in 0..history.len() {
        acc += history[i];
        if i >= window {
            acc -= history[i - window];
        }
        let n = (i + 1).min(window);
        out.push(acc / n as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::reference_for;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn identical_normalized_fields_have_zero_error() {
        let reference = vec![0.3, -1.2, 0.7, 2.0];
        let z = rms(&reference);
        assert!(err_psi_l2(&reference, z, &reference).unwrap() < 1e-15);
        assert!(err_psi_inf(&reference, z, &reference).unwrap() < 1e-15);
    }

    #[test]
    fn zero_network_leaves_exactly_the_reference_mass() {
        let reference = vec![0.3, -1.2, 0.7, 2.0];
        let net = vec![0.0; 4];
        assert_relative_eq!(err_psi_l2(&net, 1.7, &reference).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sup_error_dominated_by_single_outlier() {
        let reference = vec![1.0, 1.0, 1.0, 1.0];
        // Normalized reference is exactly 1 everywhere; one network value
        // sits delta away from it.
        let delta = 0.37;
        let net = vec![1.0, 1.0, 1.0 + delta, 1.0];
        let e = err_psi_inf(&net, 1.0, &reference).unwrap();
        assert!(e >= delta - 1e-15, "sup error {e} below outlier {delta}");
    }

    #[test]
    fn orthogonal_unit_gradient_fields_differ_by_sqrt_two() {
        let net = Mat::from_vec(2, 1, vec![1.0, -1.0]);
        let reference = Mat::from_vec(2, 1, vec![1.0, 1.0]);
        assert_relative_eq!(
            err_grad(&net, &reference).unwrap(),
            std::f64::consts::SQRT_2,
            epsilon = 1e-14
        );
    }

    #[test]
    fn gradient_error_ignores_positive_scales() {
        let net = Mat::from_vec(2, 2, vec![0.4, -0.3, 1.1, 0.2]);
        let reference = Mat::from_vec(2, 2, vec![0.1, 0.5, -0.2, 0.9]);
        let base = err_grad(&net, &reference).unwrap();
        for alpha in [0.01, 3.0, 250.0] {
            let mut scaled = net.clone();
            for v in scaled.as_mut_slice() {
                *v *= alpha;
            }
            assert_relative_eq!(err_grad(&scaled, &reference).unwrap(), base, epsilon = 1e-12);
            let mut rscaled = reference.clone();
            for v in rscaled.as_mut_slice() {
                *v *= alpha;
            }
            assert_relative_eq!(err_grad(&net, &rscaled).unwrap(), base, epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(matches!(
            err_psi_l2(&[1.0], 1.0, &[1.0, 2.0]),
            Err(MetricsError::LengthMismatch(1, 2))
        ));
        assert!(matches!(err_psi_l2(&[1.0], 0.0, &[1.0]), Err(MetricsError::BadNormalizer(_))));
        assert!(matches!(err_psi_l2(&[1.0], 1.0, &[0.0]), Err(MetricsError::ZeroRms)));
        let zeros = Mat::zeros(2, 2);
        let ones = Mat::from_vec(2, 2, vec![1.0; 4]);
        assert!(matches!(err_grad(&zeros, &ones), Err(MetricsError::ZeroRms)));
        assert!(matches!(err_grad(&ones, &zeros), Err(MetricsError::ZeroRms)));
    }

    #[test]
    fn evaluation_is_invariant_under_reference_sign_and_scale() {
        let problem = Problem::linear_schrodinger(2, None).unwrap();
        let pair = reference_for(&problem, 24, 1).unwrap();
        let rng = RunRng::new(5);
        let vset = ValidationSet::sample(&problem, &pair, 64, &rng, 0);
        // A deliberately imperfect "network": reference plus a bump.
        let net_psi: Vec<f64> =
            vset.ref_psi.iter().zip(0..).map(|(&v, i)| v + 0.05 * (i as f64).sin()).collect();
        let net_grad = vset.ref_grad.clone();
        let base = evaluate(&net_psi, 1.0, &net_grad, &vset).unwrap();
        for factor in [-1.0, 2.5, -0.3] {
            let mut flipped = vset.clone();
            for v in &mut flipped.ref_psi {
                *v *= factor;
            }
            for v in flipped.ref_grad.as_mut_slice() {
                *v *= factor;
            }
            let got = evaluate(&net_psi, 1.0, &net_grad, &flipped).unwrap();
            assert_relative_eq!(got.psi_l2, base.psi_l2, epsilon = 1e-12);
            assert_relative_eq!(got.psi_inf, base.psi_inf, epsilon = 1e-12);
            assert_relative_eq!(got.grad, base.grad, epsilon = 1e-12);
        }
    }

    #[test]
    fn validation_set_caches_exactly_the_reference() {
        let problem = Problem::fokker_planck(3, None).unwrap();
        let pair = reference_for(&problem, 0, 1).unwrap();
        let rng = RunRng::new(9);
        let vset = ValidationSet::sample(&problem, &pair, 32, &rng, 7);
        let sigma = problem.sigma();
        for p in 0..32 {
            let x = vset.points.row(p);
            assert_eq!(vset.ref_psi[p], pair.psi(x));
            for (j, g) in pair.grad(x).into_iter().enumerate() {
                assert_eq!(vset.ref_grad.get(p, j), sigma * g);
            }
        }
        // Same address, same set; a different step resamples.
        let again = ValidationSet::sample(&problem, &pair, 32, &rng, 7);
        assert_eq!(vset.points.as_slice(), again.points.as_slice());
        let moved = ValidationSet::sample(&problem, &pair, 32, &rng, 8);
        assert_ne!(vset.points.as_slice(), moved.points.as_slice());
    }

    #[test]
    fn constant_sample_occupies_one_bin_and_integrates_to_one() {
        let h = density(&[1.0; 500], 100).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.counts.iter().sum::<u64>(), 500);
        let width = h.edges[1] - h.edges[0];
        let mass: f64 = h.density.iter().map(|d| d * width).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn density_mass_is_one_for_generic_samples() {
        let values: Vec<f64> = (0..2000).map(|i| ((i * 37) % 113) as f64 * 0.11 - 3.0).collect();
        let h = density(&values, 100).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 2000);
        let width = h.edges[1] - h.edges[0];
        let mass: f64 = h.density.iter().map(|d| d * width).sum();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlay_histograms_share_edges() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let b: Vec<f64> = (0..100).map(|i| i as f64 * 0.02 - 0.5).collect();
        let (ha, hb) = density_overlay(&a, &b, 50).unwrap();
        assert_eq!(ha.edges, hb.edges);
        assert_eq!(ha.edges[0], -0.5);
        assert_relative_eq!(*ha.edges.last().unwrap(), 1.48, epsilon = 1e-12);
    }

    #[test]
    fn smoothing_window_one_is_identity_and_constants_are_fixed() {
        let h = vec![3.0, -1.0, 2.0, 7.0];
        assert_eq!(smooth(&h, 1), h);
        let c = vec![4.2; 25];
        for v in smooth(&c, 10) {
            assert_relative_eq!(v, 4.2, epsilon = 1e-12);
        }
    }

    #[test]
    fn smoothing_averages_a_step_series_over_the_window() {
        // 0,0,0,0,0,1,1,1,1,1 with window 3: the ramp enters one third at a
        // time.
        let h = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        let s = smooth(&h, 3);
        let expect = [0.0, 0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 1.0, 1.0];
        for (a, b) in s.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        // Short prefix averages over what exists.
        let s2 = smooth(&[2.0, 4.0, 9.0], 10);
        assert_relative_eq!(s2[1], 3.0, epsilon = 1e-12);
        assert_relative_eq!(s2[2], 5.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn psi_errors_ignore_reference_magnitude(
            scale in prop::sample::select(vec![0.037, 0.5, 2.0, 19.0]),
            vals in prop::collection::vec(-10.0f64..10.0, 4..40),
        ) {
            prop_assume!(rms(&vals) > 1e-6);
            let net: Vec<f64> = vals.iter().map(|v| v * 1.1 + 0.2).collect();
            let base = err_psi_l2(&net, 1.3, &vals).unwrap();
            let scaled: Vec<f64> = vals.iter().map(|v| v * scale).collect();
            let got = err_psi_l2(&net, 1.3, &scaled).unwrap();
            prop_assert!((base - got).abs() < 1e-9 * (1.0 + base));
        }

        #[test]
        fn density_mass_always_one(
            vals in prop::collection::vec(-50.0f64..50.0, 1..300),
            bins in 1usize..40,
        ) {
            let h = density(&vals, bins).unwrap();
            let width = h.edges[1] - h.edges[0];
            let mass: f64 = h.density.iter().map(|d| d * width).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9);
            prop_assert_eq!(h.counts.iter().sum::<u64>(), vals.len() as u64);
        }
    }
}
