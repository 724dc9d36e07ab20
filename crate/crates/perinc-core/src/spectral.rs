//! Frequency-domain layer: the midpoint grid on `[-pi, pi)`, matrix spectral
//! density models and their grid evaluation, the increment kernel, and the
//! minimality (integrability) heuristic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::increments::IncrementSpec;
use crate::C64;

/// Midpoint discretization of `[-pi, pi)` with `m` points; never contains
/// `lambda = 0` nor any of the singular frequencies `2 pi q / tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaGrid {
    pub m: usize,
}

impl LambdaGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 || m % 2 != 0 {
            return Err(Error::Validation(format!("lambda grid size must be even and >= 2, got {m}")));
        }
        Ok(Self { m })
    }

    pub fn points(&self) -> Vec<f64> {
        let m = self.m as f64;
        (0..self.m)
            .map(|i| -std::f64::consts::PI + (i as f64 + 0.5) * 2.0 * std::f64::consts::PI / m)
            .collect()
    }

    /// Distance from every grid point to every singular frequency
    /// `2 pi q / tau` inside `[-pi, pi]` must exceed 1e-12.
    pub fn check_clearance(&self, tau: usize) -> Result<()> {
        let pts = self.points();
        let qmax = tau as i64 / 2 + 1;
        for q in -qmax..=qmax {
            let sf = 2.0 * std::f64::consts::PI * q as f64 / tau as f64;
            if sf.abs() > std::f64::consts::PI + 1e-9 {
                continue;
            }
            for &p in &pts {
                if (p - sf).abs() <= 1e-12 {
                    return Err(Error::Validation(format!(
                        "grid point {p} coincides with singular frequency {sf}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Hermitian PSD matrix values of a spectral density on the grid.
#[derive(Debug, Clone)]
pub struct SpectralDensityGrid {
    pub grid: LambdaGrid,
    pub k: usize,
    pub values: Vec<DMatrix<C64>>,
}

impl SpectralDensityGrid {
    pub fn new(grid: LambdaGrid, k: usize, values: Vec<DMatrix<C64>>) -> Result<Self> {
        if values.len() != grid.m {
            return Err(Error::Validation("density grid length must match the lambda grid".into()));
        }
        if values.iter().any(|v| v.nrows() != k || v.ncols() != k) {
            return Err(Error::Validation("density matrices must be k x k".into()));
        }
        Ok(Self { grid, k, values })
    }

    pub fn zeros(grid: LambdaGrid, k: usize) -> Self {
        Self { grid, k, values: vec![DMatrix::zeros(k, k); grid.m] }
    }

    /// Check the Hermitian and positive-semidefinite invariants pointwise.
    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.values.iter().enumerate() {
            let herm_defect = (v - v.adjoint()).norm();
            if herm_defect > 1e-12 * (1.0 + v.norm()) {
                return Err(Error::Validation(format!(
                    "density is not Hermitian at grid index {i} (defect {herm_defect:.3e})"
                )));
            }
            let sym = (v + v.adjoint()).scale(0.5);
            let eig = sym.symmetric_eigenvalues();
            let min_eig = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_eig < -1e-10 * (1.0 + v.norm()) {
                return Err(Error::Validation(format!(
                    "density has negative eigenvalue {min_eig:.3e} at grid index {i}"
                )));
            }
        }
        Ok(())
    }

    /// Mean of the matrix trace over the grid (the normalized integral).
    pub fn mean_trace(&self) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.trace().re).sum();
        s / self.grid.m as f64
    }
}

/// Parametric density families.
#[derive(Debug, Clone)]
pub enum DensityModel {
    /// `F(lambda) = Phi(e^{-i lambda}) Phi(e^{-i lambda})^*` with
    /// `Phi(z) = sum_k phi(k) z^k`.
    MovingAverage(Vec<DMatrix<C64>>),
    /// Independent per-harmonic first-order autoregressive spectra
    /// `F_kk = sigma_k^2 / |1 - rho_k e^{-i lambda}|^2`.
    DiagonalAr1 { rho: Vec<f64>, sigma: Vec<f64> },
    /// Raw values (validated on evaluation).
    GridLiteral(SpectralDensityGrid),
}

impl DensityModel {
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::MovingAverage(c) => c.first().map(|m| m.nrows()).unwrap_or(0),
            DensityModel::DiagonalAr1 { rho, .. } => rho.len(),
            DensityModel::GridLiteral(g) => g.k,
        }
    }
}

/// Evaluate the matrix polynomial `sum_k coeffs[k] z^k`.
pub fn eval_matrix_poly(coeffs: &[DMatrix<C64>], z: C64) -> DMatrix<C64> {
    let k = coeffs[0].nrows();
    let mut acc = DMatrix::zeros(k, k);
    let mut zp = C64::new(1.0, 0.0);
    for c in coeffs {
        acc += c.map(|v| v * zp);
        zp *= z;
    }
    acc
}

/// Evaluate a density model on the grid.
pub fn eval_density(model: &DensityModel, grid: &LambdaGrid) -> Result<SpectralDensityGrid> {
    let k = model.dim();
    if k == 0 {
        return Err(Error::Validation("density model has dimension zero".into()));
    }
    match model {
        DensityModel::MovingAverage(coeffs) => {
            if coeffs.iter().any(|c| c.nrows() != k || c.ncols() != k) {
                return Err(Error::Validation("moving-average coefficients must share shape".into()));
            }
            let values = grid
                .points()
                .iter()
                .map(|&lam| {
                    let z = C64::new(0.0, -lam).exp();
                    let phi = eval_matrix_poly(coeffs, z);
                    &phi * phi.adjoint()
                })
                .collect();
            SpectralDensityGrid::new(*grid, k, values)
        }
        DensityModel::DiagonalAr1 { rho, sigma } => {
            if sigma.len() != k {
                return Err(Error::Validation("rho and sigma must have equal length".into()));
            }
            if rho.iter().any(|r| r.abs() >= 1.0) || sigma.iter().any(|s| *s <= 0.0) {
                return Err(Error::Validation("diagonal AR(1) requires |rho| < 1 and sigma > 0".into()));
            }
            let values = grid
                .points()
                .iter()
                .map(|&lam| {
                    let mut m = DMatrix::zeros(k, k);
                    for i in 0..k {
                        let den = (C64::new(1.0, 0.0)
                            - C64::new(rho[i], 0.0) * C64::new(0.0, -lam).exp())
                        .norm_sqr();
                        m[(i, i)] = C64::new(sigma[i] * sigma[i] / den, 0.0);
                    }
                    m
                })
                .collect();
            SpectralDensityGrid::new(*grid, k, values)
        }
        DensityModel::GridLiteral(g) => {
            if g.grid.m != grid.m {
                return Err(Error::Validation("grid literal resolution mismatch".into()));
            }
            g.validate()?;
            Ok(g.clone())
        }
    }
}

/// Kernel direction selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelDirection {
    /// `lambda^{2d} / |1 - e^{i lambda tau}|^{2d}`.
    Forward,
    /// The reciprocal.
    Inverse,
}

/// Stable evaluation of `u(lambda) = 2 sin(lambda tau / 2) / lambda`, whose
/// powers build both kernel directions; uses the series of `sin(x)/x` near 0.
fn kernel_base(lam: f64, tau: usize) -> f64 {
    let x = lam * tau as f64 / 2.0;
    if x.abs() < 1e-4 {
        // tau * (1 - x^2/6 + x^4/120)
        tau as f64 * (1.0 - x * x / 6.0 + x.powi(4) / 120.0)
    } else {
        2.0 * x.sin() / lam
    }
}

/// Evaluate the increment kernel on the grid.
pub fn kernel_eval(spec: &IncrementSpec, grid: &LambdaGrid, direction: KernelDirection) -> Result<Vec<f64>> {
    grid.check_clearance(spec.tau)?;
    let pow = 2 * spec.d as i32;
    Ok(grid
        .points()
        .iter()
        .map(|&lam| {
            let u = kernel_base(lam, spec.tau);
            match direction {
                KernelDirection::Inverse => u.powi(pow),
                KernelDirection::Forward => u.powi(-pow),
            }
        })
        .collect())
}

/// The complex ratio `r(lambda) = ((1 - e^{-i lambda tau}) / (i lambda))^d`
/// evaluated in the cancellation-free polar form.
pub fn ratio_grid(spec: &IncrementSpec, grid: &LambdaGrid) -> Vec<C64> {
    grid.points()
        .iter()
        .map(|&lam| {
            let u = kernel_base(lam, spec.tau);
            let phase = -lam * (spec.tau * spec.d) as f64 / 2.0;
            C64::new(phase.cos(), phase.sin()) * u.powi(spec.d as i32)
        })
        .collect()
}

/// `p(lambda) = f(lambda) + lambda^{2d} g(lambda)` pointwise.
pub fn combine_p(f: &SpectralDensityGrid, g: &SpectralDensityGrid, spec: &IncrementSpec) -> Result<SpectralDensityGrid> {
    if f.k != g.k || f.grid.m != g.grid.m {
        return Err(Error::Validation("f and g must share dimension and grid".into()));
    }
    let pts = f.grid.points();
    let values = f
        .values
        .iter()
        .zip(&g.values)
        .zip(&pts)
        .map(|((fv, gv), &lam)| fv + gv.scale(lam.powi(2 * f_i32(spec.d))))
        .collect();
    SpectralDensityGrid::new(f.grid, f.k, values)
}

fn f_i32(u: usize) -> i32 {
    u as i32
}

/// Pointwise inverses of `p` with a condition guard; returns the inverse grid.
pub fn invert_grid(p: &SpectralDensityGrid) -> Result<Vec<DMatrix<C64>>> {
    let pts = p.grid.points();
    p.values
        .iter()
        .zip(&pts)
        .map(|(v, &lam)| {
            let sym = (v + v.adjoint()).scale(0.5);
            let eig = sym.symmetric_eigenvalues();
            let max_e = eig.iter().cloned().fold(0.0f64, f64::max);
            let min_e = eig.iter().cloned().fold(f64::INFINITY, f64::min);
            if !(min_e > 0.0) || max_e / min_e > 1e12 {
                return Err(Error::Singularity {
                    lambda: lam,
                    detail: format!("combined density has eigenvalue range [{min_e:.3e}, {max_e:.3e}]"),
                });
            }
            v.clone()
                .try_inverse()
                .ok_or(Error::Singularity { lambda: lam, detail: "inversion failed".into() })
        })
        .collect()
}

/// Report of the integrability heuristic for the kernel-weighted inverse.
#[derive(Debug, Clone)]
pub struct MinimalityReport {
    pub value_m: f64,
    pub value_2m: f64,
    /// True when refinement growth suggests a divergent integral.
    pub flag_suspect: bool,
}

/// Heuristic minimality check: compares the grid mean of
/// `Tr[forward_kernel * (f + lambda^{2d} g)^{-1}]` at resolution `m` against
/// resolution `2m` (densities linearly interpolated, kernel exact); flags
/// growth beyond the 1.5 ratio. Advisory only.
pub fn minimality_check(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<MinimalityReport> {
    let p = combine_p(f, g, spec)?;
    let fwd = kernel_eval(spec, &f.grid, KernelDirection::Forward)?;
    let pinv = invert_grid(&p)?;
    let w_orig: Vec<f64> = pinv
        .iter()
        .zip(&fwd)
        .map(|(v, &w)| (w * v.trace().re).max(1e-300))
        .collect();
    let m = f.grid.m;
    let value_m = w_orig.iter().sum::<f64>() / m as f64;

    // Refined grid evaluation of the same integrand. Between symmetric
    // neighbors around a kernel zero, interpolation cannot reveal a peak, so
    // within a window of each singular frequency the integrand is
    // extrapolated by a one-sided power law fitted to the two nearest grid
    // points on that side; elsewhere it is interpolated linearly.
    let pts = f.grid.points();
    let dlam = 2.0 * std::f64::consts::PI / m as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let singular: Vec<f64> = (-(spec.tau as i64)..=spec.tau as i64)
        .map(|q| two_pi * q as f64 / spec.tau as f64)
        .filter(|l| l.abs() <= std::f64::consts::PI + 1e-12)
        .collect();
    let wrap = |x: f64| -> f64 {
        let mut y = x;
        while y > std::f64::consts::PI {
            y -= two_pi;
        }
        while y <= -std::f64::consts::PI {
            y += two_pi;
        }
        y
    };
    let at = |k: i64| -> f64 { w_orig[k.rem_euclid(m as i64) as usize] };
    let grid2 = LambdaGrid::new(2 * m)?;
    let mut acc2 = 0.0;
    for &lam in &grid2.points() {
        let (ls, dist) = singular
            .iter()
            .map(|&s| (s, wrap(lam - s)))
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        let w = if dist.abs() < 3.0 * dlam {
            // two nearest original points on the same side of the zero
            let side = dist.signum();
            let mut cands: Vec<(f64, f64)> = (-6i64..=6)
                .map(|off| {
                    let k = ((ls - pts[0]) / dlam).round() as i64 + off;
                    let lk = pts[0] + k as f64 * dlam;
                    (wrap(lk - ls), at(k))
                })
                .filter(|(d, _)| d.signum() == side && d.abs() > 1e-12)
                .collect();
            cands.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
            let (d1, w1) = cands[0];
            let (d2, w2) = cands[1];
            let slope = (w2.ln() - w1.ln()) / (d2.abs().ln() - d1.abs().ln());
            w1 * (dist.abs() / d1.abs()).powf(slope)
        } else {
            let pos = (lam - pts[0]) / dlam;
            let i0 = pos.floor();
            let t = pos - i0;
            (1.0 - t) * at(i0 as i64) + t * at(i0 as i64 + 1)
        };
        acc2 += w;
    }
    let value_2m = acc2 / (2 * m) as f64;
    Ok(MinimalityReport {
        value_m,
        value_2m,
        flag_suspect: value_2m / value_m.max(1e-300) > 1.5,
    })
}

/// Autocovariance `R(lag) = sum_n phi(n + lag) phi(n)^*` of a moving-average
/// density (exact, finitely supported).
pub fn ma_autocovariance(coeffs: &[DMatrix<C64>], lag: i64) -> DMatrix<C64> {
    let k = coeffs[0].nrows();
    let q = coeffs.len() as i64 - 1;
    let mut acc = DMatrix::zeros(k, k);
    for n in 0..=q {
        let m = n + lag;
        if (0..=q).contains(&m) {
            acc += &coeffs[m as usize] * coeffs[n as usize].adjoint();
        }
    }
    acc
}

/// Scalar complex helpers for building K-vectors of polynomial values.
pub fn poly_row(seq: &[DVector<C64>], z: C64) -> DVector<C64> {
    let k = seq[0].len();
    let mut acc = DVector::zeros(k);
    let mut zp = C64::new(1.0, 0.0);
    for v in seq {
        acc += v.map(|x| x * zp);
        zp *= z;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(d: usize, tau: usize) -> IncrementSpec {
        IncrementSpec::new(d, tau, 1.0).unwrap()
    }

    #[test]
    fn grid_is_midpoint_and_clear() {
        let g = LambdaGrid::new(64).unwrap();
        let pts = g.points();
        assert_eq!(pts.len(), 64);
        assert!(pts.iter().all(|p| p.abs() > 1e-12));
        g.check_clearance(1).unwrap();
        g.check_clearance(2).unwrap();
        g.check_clearance(3).unwrap();
    }

    #[test]
    fn ma_scalar_unit_density() {
        let g = LambdaGrid::new(32).unwrap();
        let model = DensityModel::MovingAverage(vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0))]);
        let d = eval_density(&model, &g).unwrap();
        for v in &d.values {
            assert_relative_eq!(v[(0, 0)].re, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn ar1_scalar_values() {
        let g = LambdaGrid::new(4096).unwrap();
        let model = DensityModel::DiagonalAr1 { rho: vec![0.5], sigma: vec![1.0] };
        let d = eval_density(&model, &g).unwrap();
        let pts = g.points();
        // near lambda = 0: 1/(1-rho)^2 = 4; at the edges: 1/(1+rho)^2
        let mid = g.m / 2;
        assert_relative_eq!(d.values[mid][(0, 0)].re, 4.0, epsilon = 1e-2);
        assert_relative_eq!(d.values[0][(0, 0)].re, 1.0 / 2.25, epsilon = 1e-2);
        // closed form pointwise
        for (i, &lam) in pts.iter().enumerate().step_by(97) {
            let expect = 1.0 / (C64::new(1.0, 0.0) - 0.5 * C64::new(0.0, -lam).exp()).norm_sqr();
            assert_relative_eq!(d.values[i][(0, 0)].re, expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn ma_identity_pair_closed_form() {
        let g = LambdaGrid::new(128).unwrap();
        let eye = DMatrix::identity(2, 2);
        let model = DensityModel::MovingAverage(vec![eye.clone(), eye.scale(0.5)]);
        let d = eval_density(&model, &g).unwrap();
        for (v, &lam) in d.values.iter().zip(&g.points()) {
            let expect = 1.25 + lam.cos();
            assert_relative_eq!(v[(0, 0)].re, expect, epsilon = 1e-12);
            assert_relative_eq!(v[(1, 1)].re, expect, epsilon = 1e-12);
            assert!(v[(0, 1)].norm() < 1e-13);
        }
    }

    #[test]
    fn ma_density_matches_autocovariance_series() {
        let g = LambdaGrid::new(256).unwrap();
        let phi = vec![
            DMatrix::from_row_slice(2, 2, &[
                C64::new(1.0, 0.0), C64::new(0.2, 0.1),
                C64::new(0.0, 0.0), C64::new(0.9, 0.0),
            ]),
            DMatrix::from_row_slice(2, 2, &[
                C64::new(0.25, 0.0), C64::new(-0.15, 0.0),
                C64::new(0.1, 0.05), C64::new(0.35, 0.0),
            ]),
        ];
        let model = DensityModel::MovingAverage(phi.clone());
        let d = eval_density(&model, &g).unwrap();
        for (v, &lam) in d.values.iter().zip(&g.points()) {
            let mut rec: DMatrix<C64> = DMatrix::zeros(2, 2);
            for lag in -1i64..=1 {
                let z = C64::new(0.0, -lam * lag as f64).exp();
                rec += ma_autocovariance(&phi, lag).map(|x| x * z);
            }
            assert!((v - rec).norm() < 1e-10);
        }
        d.validate().unwrap();
    }

    #[test]
    fn kernel_limits_and_reciprocity() {
        let g = LambdaGrid::new(4096).unwrap();
        let s = spec(1, 2);
        let inv = kernel_eval(&s, &g, KernelDirection::Inverse).unwrap();
        let fwd = kernel_eval(&s, &g, KernelDirection::Forward).unwrap();
        let mid = g.m / 2; // closest point to lambda = 0
        assert_relative_eq!(inv[mid], 4.0, epsilon = 1e-4);
        for i in (0..g.m).step_by(131) {
            assert_relative_eq!(fwd[i] * inv[i], 1.0, epsilon = 1e-12);
        }
        // evenness up to grid symmetry
        for i in 0..g.m / 2 {
            assert_relative_eq!(inv[i], inv[g.m - 1 - i], epsilon = 1e-12);
        }
        // forward kernel near the edge for tau = 1, d = 1: ~ pi^2 / 4
        let s1 = spec(1, 1);
        let fwd1 = kernel_eval(&s1, &g, KernelDirection::Forward).unwrap();
        assert_relative_eq!(fwd1[0], std::f64::consts::PI.powi(2) / 4.0, epsilon = 1e-2);
    }

    #[test]
    fn ratio_modulus_matches_inverse_kernel() {
        let g = LambdaGrid::new(512).unwrap();
        let s = spec(2, 2);
        let r = ratio_grid(&s, &g);
        let inv = kernel_eval(&s, &g, KernelDirection::Inverse).unwrap();
        for i in 0..g.m {
            assert_relative_eq!(r[i].norm_sqr(), inv[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn minimality_flags_divergent_integrand() {
        let g = LambdaGrid::new(512).unwrap();
        let s = spec(1, 1);
        // healthy: f == 1
        let one = eval_density(
            &DensityModel::MovingAverage(vec![DMatrix::from_element(1, 1, C64::new(1.0, 0.0))]),
            &g,
        )
        .unwrap();
        let zero = SpectralDensityGrid::zeros(g, 1);
        let rep = minimality_check(&one, &zero, &s).unwrap();
        assert!(!rep.flag_suspect, "{rep:?}");

        // divergent: f vanishing like |1 - e^{i lambda}|^2 at 0 makes the
        // kernel-weighted inverse non-integrable
        let vals: Vec<DMatrix<C64>> = g
            .points()
            .iter()
            .map(|&lam| {
                let v = (C64::new(1.0, 0.0) - C64::new(0.0, lam).exp()).norm_sqr()
                    * (C64::new(1.0, 0.0) - C64::new(0.0, lam).exp()).norm_sqr();
                DMatrix::from_element(1, 1, C64::new(v.max(1e-300), 0.0))
            })
            .collect();
        let f_bad = SpectralDensityGrid::new(g, 1, vals).unwrap();
        let rep = minimality_check(&f_bad, &zero, &s).unwrap();
        assert!(rep.flag_suspect, "{rep:?}");
    }

    #[test]
    fn zero_densities_are_singular() {
        let g = LambdaGrid::new(64).unwrap();
        let z1 = SpectralDensityGrid::zeros(g, 1);
        let z2 = SpectralDensityGrid::zeros(g, 1);
        assert!(minimality_check(&z1, &z2, &spec(1, 1)).is_err());
    }
}
