//! Reusable analytically-controlled test configurations.
//!
//! The kernel moving-average families are built so that the kernel-weighted
//! combined density is an exact matrix trigonometric polynomial: the signal
//! density is defined as `forward_kernel * Theta Theta^* - lambda^{2d} g`,
//! which makes spectral factorization, autocovariances, and path synthesis
//! exact and keeps every truncation error far below test tolerances.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::harmonic::CoefficientSequence;
use crate::increments::IncrementSpec;
use crate::spectral::{
    eval_density, eval_matrix_poly, kernel_eval, DensityModel, KernelDirection, LambdaGrid,
    SpectralDensityGrid,
};
use crate::C64;

/// A density pair with known exact factorizations plus a decaying target.
#[derive(Debug, Clone)]
pub struct KernelMaFixture {
    pub spec: IncrementSpec,
    pub grid: LambdaGrid,
    pub f: SpectralDensityGrid,
    pub g: SpectralDensityGrid,
    /// Moving-average coefficients of the noise density.
    pub g_ma: Vec<DMatrix<C64>>,
    /// Exact factor of `inverse_kernel * (f + lambda^{2d} g)`.
    pub theta: Vec<DMatrix<C64>>,
    /// Target weights decaying like `0.25^j`.
    pub a: CoefficientSequence,
}

fn build_kernel_ma(
    spec: IncrementSpec,
    grid: LambdaGrid,
    theta: Vec<DMatrix<C64>>,
    g_ma: Vec<DMatrix<C64>>,
    a: CoefficientSequence,
) -> Result<KernelMaFixture> {
    let k = theta[0].nrows();
    let fwd = kernel_eval(&spec, &grid, KernelDirection::Forward)?;
    let g = eval_density(&DensityModel::MovingAverage(g_ma.clone()), &grid)?;
    let points = grid.points();
    let f_vals: Vec<DMatrix<C64>> = points
        .iter()
        .enumerate()
        .map(|(m, &lam)| {
            let z = C64::new(0.0, -lam).exp();
            let th = eval_matrix_poly(&theta, z);
            let target = &th * th.adjoint();
            target.scale(fwd[m]) - g.values[m].scale(lam.powi(2 * spec.d as i32))
        })
        .collect();
    let f = SpectralDensityGrid::new(grid, k, f_vals)?;
    f.validate()?;
    Ok(KernelMaFixture { spec, grid, f, g, g_ma, theta, a })
}

/// Scalar fixture with fast-decaying target weights.
pub fn scalar_kernel_ma(grid: LambdaGrid, spec: IncrementSpec) -> Result<KernelMaFixture> {
    let th = vec![
        DMatrix::from_element(1, 1, C64::new(1.2, 0.0)),
        DMatrix::from_element(1, 1, C64::new(0.18, 0.0)),
    ];
    let s = 0.05f64.sqrt();
    let g_ma = vec![
        DMatrix::from_element(1, 1, C64::new(s, 0.0)),
        DMatrix::from_element(1, 1, C64::new(0.15 * s, 0.0)),
    ];
    let a = CoefficientSequence::new(
        1,
        (0..5).map(|j| DVector::from_vec(vec![C64::new(0.25f64.powi(j), 0.0)])).collect(),
    )?;
    build_kernel_ma(spec, grid, th, g_ma, a)
}

/// Two-dimensional fixture with complex cross-coupled factors.
pub fn matrix_kernel_ma(grid: LambdaGrid, spec: IncrementSpec) -> Result<KernelMaFixture> {
    let th = vec![
        DMatrix::from_row_slice(2, 2, &[
            C64::new(1.1, 0.0), C64::new(0.0, 0.0),
            C64::new(0.15, 0.0), C64::new(0.95, 0.0),
        ]),
        DMatrix::from_row_slice(2, 2, &[
            C64::new(0.06, 0.0), C64::new(-0.024, 0.012),
            C64::new(0.012, 0.0), C64::new(0.048, 0.0),
        ]),
    ];
    let g_ma = vec![
        DMatrix::identity(2, 2).map(|v: f64| C64::new(0.15 * v, 0.0)),
        DMatrix::from_row_slice(2, 2, &[
            C64::new(0.012, 0.0), C64::new(0.0, 0.003),
            C64::new(0.0, 0.0), C64::new(0.009, 0.0),
        ]),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let a = CoefficientSequence::new(
        2,
        (0..5)
            .map(|j| {
                DVector::from_fn(2, |_, _| {
                    C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
                        * 0.25f64.powi(j)
                })
            })
            .collect(),
    )?;
    build_kernel_ma(spec, grid, th, g_ma, a)
}

/// Exact moving-average factor of the kernel-weighted signal density
/// `forward_kernel^{-1} * f`, which for these fixtures is a trigonometric
/// polynomial and therefore factors to machine precision.
pub fn signal_factor(fx: &KernelMaFixture) -> Result<Vec<DMatrix<C64>>> {
    let invk = kernel_eval(&fx.spec, &fx.grid, KernelDirection::Inverse)?;
    let vals: Vec<DMatrix<C64>> =
        fx.f.values.iter().zip(&invk).map(|(v, &w)| v.scale(w)).collect();
    let target = SpectralDensityGrid::new(fx.grid, fx.f.k, vals)?;
    let order = fx.theta.len() + fx.spec.tau * fx.spec.d + fx.g_ma.len() + 2;
    let series = crate::factorization::factorize_auto(&target, order)?;
    Ok(series.coeffs)
}

/// Scalar first-order autoregressive density.
pub fn scalar_ar1(grid: LambdaGrid, rho: f64, sigma: f64) -> SpectralDensityGrid {
    eval_density(&DensityModel::DiagonalAr1 { rho: vec![rho], sigma: vec![sigma] }, &grid).unwrap()
}

/// Scalar constant (white) density at a given level; zero is allowed.
pub fn scalar_const(grid: LambdaGrid, level: f64) -> SpectralDensityGrid {
    let vals = vec![DMatrix::from_element(1, 1, C64::new(level, 0.0)); grid.m];
    SpectralDensityGrid::new(grid, 1, vals).unwrap()
}

/// Scalar first-order moving-average density `|1 + c e^{-i lambda}|^2`.
pub fn scalar_ma1(grid: LambdaGrid, c: f64) -> SpectralDensityGrid {
    eval_density(
        &DensityModel::MovingAverage(vec![
            DMatrix::from_element(1, 1, C64::new(1.0, 0.0)),
            DMatrix::from_element(1, 1, C64::new(c, 0.0)),
        ]),
        &grid,
    )
    .unwrap()
}

/// Geometric scalar target weights.
pub fn geometric_target(ratio: f64, count: usize) -> CoefficientSequence {
    CoefficientSequence::new(
        1,
        (0..count).map(|j| DVector::from_vec(vec![C64::new(ratio.powi(j as i32), 0.0)])).collect(),
    )
    .unwrap()
}
