//! Harmonic lifting: expand period-length segments of sampled functions and
//! paths on the interleaved Fourier basis of `L^2[0, period)` and form the
//! induced coefficient sequences, including the `a -> b` relation and the
//! step-differenced sequence used by the prediction equations.

use nalgebra::DVector;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::increments::{binomial_f64, strided_coeffs_f64, IncrementSpec, SampledFunction};
use crate::C64;

/// Truncated harmonic basis of one period.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicGrid {
    pub period: f64,
    /// Number of retained basis functions (harmonics `n(1..=k)`).
    pub k: usize,
    /// Samples per period.
    pub s: usize,
}

impl HarmonicGrid {
    pub fn new(period: f64, k: usize, s: usize) -> Result<Self> {
        if !(period > 0.0) || k < 1 || s < 1 {
            return Err(Error::Validation("harmonic grid requires period > 0, k >= 1, s >= 1".into()));
        }
        if k > s {
            return Err(Error::Validation(format!(
                "harmonic truncation k = {k} exceeds the sampling rate s = {s} (aliasing)"
            )));
        }
        Ok(Self { period, k, s })
    }

    /// Interleaved frequency map: `n(k) = (-1)^k * floor(k / 2)` for 1-based `k`.
    pub fn n_of_k(k: usize) -> i64 {
        let half = (k / 2) as i64;
        if k % 2 == 0 {
            half
        } else {
            -half
        }
    }
}

/// Finite list of lifted coefficient vectors indexed by period number.
#[derive(Debug, Clone)]
pub struct CoefficientSequence {
    /// Shared harmonic dimension.
    pub dim: usize,
    pub vectors: Vec<DVector<C64>>,
}

impl CoefficientSequence {
    pub fn new(dim: usize, vectors: Vec<DVector<C64>>) -> Result<Self> {
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::Validation("coefficient vectors must share the harmonic dimension".into()));
        }
        Ok(Self { dim, vectors })
    }

    pub fn zeros(dim: usize, len: usize) -> Self {
        Self { dim, vectors: vec![DVector::zeros(dim); len] }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Entry `j`, with zero past the recorded truncation.
    pub fn get(&self, j: usize) -> DVector<C64> {
        if j < self.vectors.len() {
            self.vectors[j].clone()
        } else {
            DVector::zeros(self.dim)
        }
    }

    /// Copy zero-padded (or checked-truncated) to the requested length.
    pub fn padded(&self, len: usize) -> Result<Self> {
        if self.vectors.len() > len {
            let tail: f64 = self.vectors[len..].iter().map(|v| v.norm()).sum();
            if tail > 1e-12 {
                return Err(Error::Domain(format!(
                    "sequence of length {} does not fit the truncation {len}",
                    self.vectors.len()
                )));
            }
        }
        let mut vectors = self.vectors.clone();
        vectors.truncate(len);
        vectors.resize(len, DVector::zeros(self.dim));
        Ok(Self { dim: self.dim, vectors })
    }
}

fn dft_direct(x: &[C64], s: usize) -> Vec<C64> {
    (0..s)
        .map(|n| {
            let mut acc = C64::new(0.0, 0.0);
            for (j, &v) in x.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * (n as f64) * (j as f64) / s as f64;
                acc += v * C64::new(phase.cos(), phase.sin());
            }
            acc
        })
        .collect()
}

fn dft(x: &[C64]) -> Vec<C64> {
    let s = x.len();
    if s.is_power_of_two() {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(s);
        let mut buf = x.to_vec();
        fft.process(&mut buf);
        buf
    } else {
        dft_direct(x, s)
    }
}

/// Coefficients of one period of `x` on the first `k` basis functions:
/// `x_k = (1 / sqrt(period)) * integral_0^period x(v) e^{-2 pi i n(k) v / period} dv`,
/// computed with uniform quadrature weights (the exact discrete transform).
pub fn lift_function(x: &SampledFunction, grid: &HarmonicGrid) -> Result<DVector<C64>> {
    if x.len() != grid.s {
        return Err(Error::Domain(format!(
            "lift_function expects exactly one period of {} samples, got {}",
            grid.s,
            x.len()
        )));
    }
    let spectrum = dft(&x.values);
    let scale = x.dt / grid.period.sqrt();
    let mut out = DVector::zeros(grid.k);
    for k in 1..=grid.k {
        let n = HarmonicGrid::n_of_k(k);
        let idx = n.rem_euclid(grid.s as i64) as usize;
        out[k - 1] = spectrum[idx] * scale;
    }
    Ok(out)
}

/// Evaluate the truncated expansion back on the period sample grid.
pub fn reconstruct_period(coeffs: &DVector<C64>, grid: &HarmonicGrid, t0: f64) -> SampledFunction {
    let dt = grid.period / grid.s as f64;
    let scale = 1.0 / grid.period.sqrt();
    let values = (0..grid.s)
        .map(|j| {
            let mut acc = C64::new(0.0, 0.0);
            for k in 1..=coeffs.len() {
                let n = HarmonicGrid::n_of_k(k) as f64;
                let phase = 2.0 * std::f64::consts::PI * n * j as f64 / grid.s as f64;
                acc += coeffs[k - 1] * C64::new(phase.cos(), phase.sin()) * scale;
            }
            acc
        })
        .collect();
    SampledFunction { t0, dt, values }
}

/// Segment `a` (supported on whole periods starting at 0) and lift each period.
pub fn segment_and_lift(a: &SampledFunction, grid: &HarmonicGrid) -> Result<CoefficientSequence> {
    if a.t0.abs() > 1e-12 * grid.period {
        return Err(Error::Domain("segment_and_lift expects support starting at t = 0".into()));
    }
    let s = a.samples_per_period(grid.period)?;
    if s != grid.s {
        return Err(Error::Domain(format!(
            "sample rate mismatch: function has {s} samples per period, grid has {}",
            grid.s
        )));
    }
    if a.len() % s != 0 {
        return Err(Error::Domain("support must be a whole number of periods".into()));
    }
    let dt = a.dt;
    let vectors = (0..a.len() / s)
        .map(|j| {
            let seg = SampledFunction {
                t0: 0.0,
                dt,
                values: a.values[j * s..(j + 1) * s].to_vec(),
            };
            lift_function(&seg, grid)
        })
        .collect::<Result<Vec<_>>>()?;
    CoefficientSequence::new(grid.k, vectors)
}

/// Lifted form of the `a -> b` transform: `b_j = sum_{m >= j} d_tau(m - j) a_m`
/// (the strided coefficients act as scalars on every harmonic). With a finite
/// horizon `N` the sum stops at `m = N`.
pub fn lifted_b_relation(
    a_seq: &CoefficientSequence,
    spec: &IncrementSpec,
    horizon: Option<usize>,
) -> Result<CoefficientSequence> {
    let len = a_seq.len();
    let dd = strided_coeffs_f64(spec.d, spec.tau, len.max(1))?;
    let m_cap = horizon.map(|n| n + 1).unwrap_or(len).min(len);
    let vectors = (0..len)
        .map(|j| {
            let mut acc: DVector<C64> = DVector::zeros(a_seq.dim);
            for m in j..m_cap {
                let w = dd[m - j];
                if w != 0.0 {
                    acc += a_seq.vectors[m].scale(w);
                }
            }
            acc
        })
        .collect();
    CoefficientSequence::new(a_seq.dim, vectors)
}

/// Step-differenced coefficients.
///
/// Infinite variant (`finite_horizon = None`): length `len(a) + tau * d`,
/// `a^tau_j = sum_{l=0}^{min(floor(j/tau), d)} (-1)^l C(d,l) a_{j - tau l}`.
/// Finite variant `N`: length `N + tau * d + 1`, with the lower summation
/// limit raised to `max(ceil((j - N)/tau), 0)`.
pub fn a_tau_coeffs(
    a_seq: &CoefficientSequence,
    spec: &IncrementSpec,
    finite_horizon: Option<usize>,
) -> Result<CoefficientSequence> {
    let (len_out, j_support) = match finite_horizon {
        None => (a_seq.len() + spec.tau * spec.d, a_seq.len()),
        Some(n) => (n + spec.tau * spec.d + 1, n + 1),
    };
    let vectors = (0..len_out)
        .map(|j| {
            let mut acc: DVector<C64> = DVector::zeros(a_seq.dim);
            let lmax = (j / spec.tau).min(spec.d);
            let lmin = match finite_horizon {
                None => 0,
                Some(n) => {
                    if j > n {
                        (j - n + spec.tau - 1) / spec.tau
                    } else {
                        0
                    }
                }
            };
            for l in lmin..=lmax {
                let idx = j - spec.tau * l;
                if idx < j_support && idx < a_seq.len() {
                    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                    acc += a_seq.vectors[idx].scale(sign * binomial_f64(spec.d, l));
                }
            }
            acc
        })
        .collect();
    CoefficientSequence::new(a_seq.dim, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::{b_from_a, Horizon};
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frequency_map_is_interleaved() {
        let ns: Vec<i64> = (1..=7).map(HarmonicGrid::n_of_k).collect();
        assert_eq!(ns, vec![0, 1, -1, 2, -2, 3, -3]);
    }

    #[test]
    fn lift_constant_and_pure_modes() {
        let t = 2.0;
        let s = 16usize;
        let grid = HarmonicGrid::new(t, 5, s).unwrap();
        let dt = t / s as f64;

        let xc = SampledFunction::new(0.0, dt, vec![C64::new(1.5, 0.0); s]).unwrap();
        let lc = lift_function(&xc, &grid).unwrap();
        assert_relative_eq!(lc[0].re, 1.5 * t.sqrt(), epsilon = 1e-12);
        for k in 1..grid.k {
            assert!(lc[k].norm() < 1e-12);
        }

        for (target_k, n) in [(1usize, 1.0f64), (2, -1.0)] {
            let x = SampledFunction::new(
                0.0,
                dt,
                (0..s)
                    .map(|j| {
                        let ph = 2.0 * std::f64::consts::PI * n * (j as f64 * dt) / t;
                        C64::new(ph.cos(), ph.sin())
                    })
                    .collect(),
            )
            .unwrap();
            let l = lift_function(&x, &grid).unwrap();
            for k in 0..grid.k {
                if k == target_k {
                    assert_relative_eq!(l[k].re, t.sqrt(), epsilon = 1e-10);
                    assert!(l[k].im.abs() < 1e-10);
                } else {
                    assert!(l[k].norm() < 1e-10, "leak at harmonic {k}");
                }
            }
        }
    }

    #[test]
    fn fft_and_direct_paths_agree() {
        let s = 16usize; // power of two -> fft path
        let grid = HarmonicGrid::new(1.0, 7, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<C64> = (0..s)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let x = SampledFunction::new(0.0, 1.0 / s as f64, vals.clone()).unwrap();
        let via_fft = lift_function(&x, &grid).unwrap();
        let direct = dft_direct(&vals, s);
        let scale = x.dt / grid.period.sqrt();
        for k in 1..=grid.k {
            let idx = HarmonicGrid::n_of_k(k).rem_euclid(s as i64) as usize;
            assert!((via_fft[k - 1] - direct[idx] * scale).norm() < 1e-12);
        }
    }

    #[test]
    fn sampled_basis_is_orthonormal() {
        let k = 5usize;
        let s = 4 * k;
        let dt = 1.0 / s as f64;
        // Gram matrix of the sampled basis under uniform quadrature weights.
        for ka in 1..=k {
            for kb in 1..=k {
                let na = HarmonicGrid::n_of_k(ka) as f64;
                let nb = HarmonicGrid::n_of_k(kb) as f64;
                let mut acc = C64::new(0.0, 0.0);
                for j in 0..s {
                    let va = 2.0 * std::f64::consts::PI * na * j as f64 / s as f64;
                    let vb = 2.0 * std::f64::consts::PI * nb * j as f64 / s as f64;
                    acc += C64::new(va.cos(), va.sin()) * C64::new(vb.cos(), -vb.sin());
                }
                acc *= dt; // basis normalization 1/sqrt(period) twice times dt
                let expect = if ka == kb { 1.0 } else { 0.0 };
                assert!((acc - C64::new(expect, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn segment_round_trip_energy() {
        let s = 32usize;
        let grid = HarmonicGrid::new(1.0, 9, s).unwrap();
        let dt = 1.0 / s as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vals: Vec<C64> = (0..3 * s)
            .map(|_| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let a = SampledFunction::new(0.0, dt, vals).unwrap();
        let seq = segment_and_lift(&a, &grid).unwrap();
        assert_eq!(seq.len(), 3);
        // Parseval accounting: lifted energy never exceeds sample energy.
        for j in 0..3 {
            let seg_energy: f64 = a.values[j * s..(j + 1) * s].iter().map(|v| v.norm_sqr() * dt).sum();
            let lift_energy: f64 = seq.vectors[j].iter().map(|v| v.norm_sqr()).sum();
            assert!(lift_energy <= seg_energy + 1e-9);
            // reconstruction error is bounded by the truncated energy
            let rec = reconstruct_period(&seq.vectors[j], &grid, 0.0);
            let err: f64 = rec
                .values
                .iter()
                .zip(&a.values[j * s..(j + 1) * s])
                .map(|(r, o)| (r - o).norm_sqr() * dt)
                .sum();
            assert!(err <= seg_energy - lift_energy + 1e-9);
        }
    }

    #[test]
    fn lifted_b_relation_trivial_cases() {
        let spec = IncrementSpec::new(1, 1, 1.0).unwrap();
        let u = DVector::from_vec(vec![C64::new(2.0, 1.0)]);
        // single entry: b_0 = a_0
        let seq = CoefficientSequence::new(1, vec![u.clone()]).unwrap();
        let b = lifted_b_relation(&seq, &spec, None).unwrap();
        assert!((b.vectors[0][0] - u[0]).norm() < 1e-15);

        // delta at j = 2 with all d(k) = 1: b_0 = b_1 = b_2 = u
        let mut vecs = vec![DVector::zeros(1); 4];
        vecs[2] = u.clone();
        let seq = CoefficientSequence::new(1, vecs).unwrap();
        let b = lifted_b_relation(&seq, &spec, None).unwrap();
        for j in 0..3 {
            assert!((b.vectors[j][0] - u[0]).norm() < 1e-15);
        }
        assert!(b.vectors[3].norm() < 1e-15);
    }

    #[test]
    fn lifted_relation_matches_time_domain() {
        // lift(b_from_a(a)) == lifted_b_relation(lift(a)) within 1e-8
        let spec = IncrementSpec::new(2, 2, 1.0).unwrap();
        let s = 16usize;
        let grid = HarmonicGrid::new(1.0, 5, s).unwrap();
        let dt = 1.0 / s as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n_periods = 24usize;
        let vals: Vec<C64> = (0..n_periods * s)
            .map(|i| {
                C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                    * 0.3f64.powi((i / s) as i32)
            })
            .collect();
        let a = SampledFunction::new(0.0, dt, vals).unwrap();
        let b_time = b_from_a(&a, &spec, Horizon::Infinite).unwrap();
        let lift_b = segment_and_lift(&b_time, &grid).unwrap();
        let lift_a = segment_and_lift(&a, &grid).unwrap();
        let b_lifted = lifted_b_relation(&lift_a, &spec, None).unwrap();
        for j in 0..n_periods {
            let diff = (&lift_b.vectors[j] - &b_lifted.vectors[j]).norm();
            assert!(diff < 1e-8, "period {j}: diff {diff}");
        }
    }

    #[test]
    fn a_tau_first_difference() {
        let spec = IncrementSpec::new(1, 1, 1.0).unwrap();
        let a: Vec<DVector<C64>> =
            [1.0, 0.5, 0.25].iter().map(|&v| DVector::from_vec(vec![C64::new(v, 0.0)])).collect();
        let seq = CoefficientSequence::new(1, a).unwrap();
        let at = a_tau_coeffs(&seq, &spec, None).unwrap();
        let expect = [1.0, -0.5, -0.25, -0.25];
        assert_eq!(at.len(), 4);
        for (j, e) in expect.iter().enumerate() {
            assert_relative_eq!(at.vectors[j][0].re, e, epsilon = 1e-14);
        }
    }

    #[test]
    fn a_tau_constant_stride_two() {
        let spec = IncrementSpec::new(1, 2, 1.0).unwrap();
        let u = C64::new(0.7, -0.2);
        let seq =
            CoefficientSequence::new(1, vec![DVector::from_vec(vec![u]); 5]).unwrap();
        let at = a_tau_coeffs(&seq, &spec, None).unwrap();
        assert!((at.vectors[0][0] - u).norm() < 1e-15);
        assert!((at.vectors[1][0] - u).norm() < 1e-15);
        for j in 2..5 {
            assert!(at.vectors[j][0].norm() < 1e-15, "j = {j}");
        }
    }

    #[test]
    fn a_tau_polynomial_identity() {
        // A_tau(e^{i lam}) = (1 - e^{i lam tau})^d A(e^{i lam}) pointwise
        let spec = IncrementSpec::new(2, 2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<DVector<C64>> = (0..6)
            .map(|_| {
                DVector::from_vec(vec![C64::new(
                    rng.random::<f64>() - 0.5,
                    rng.random::<f64>() - 0.5,
                )])
            })
            .collect();
        let seq = CoefficientSequence::new(1, a).unwrap();
        let at = a_tau_coeffs(&seq, &spec, None).unwrap();
        for m in 0..32 {
            let lam = -3.0 + 0.19 * m as f64;
            let e = C64::new(0.0, lam).exp();
            let pa: C64 = (0..seq.len()).map(|j| seq.vectors[j][0] * e.powu(j as u32)).sum();
            let pat: C64 = (0..at.len()).map(|j| at.vectors[j][0] * e.powu(j as u32)).sum();
            let factor = (C64::new(1.0, 0.0) - e.powu(spec.tau as u32)).powu(spec.d as u32);
            assert!((pat - factor * pa).norm() < 1e-12);
        }
    }

    #[test]
    fn finite_horizon_a_tau_limits() {
        // N = 0: length tau*d + 1
        let spec = IncrementSpec::new(2, 2, 1.0).unwrap();
        let seq = CoefficientSequence::new(1, vec![DVector::from_vec(vec![C64::new(1.0, 0.0)])])
            .unwrap();
        let at = a_tau_coeffs(&seq, &spec, Some(0)).unwrap();
        assert_eq!(at.len(), spec.tau * spec.d + 1);
        // entries are (-1)^l C(d,l) at j = tau*l
        assert_relative_eq!(at.vectors[0][0].re, 1.0, epsilon = 1e-14);
        assert_relative_eq!(at.vectors[2][0].re, -2.0, epsilon = 1e-14);
        assert_relative_eq!(at.vectors[4][0].re, 1.0, epsilon = 1e-14);
        assert!(at.vectors[1].norm() < 1e-15 && at.vectors[3].norm() < 1e-15);
    }
}
