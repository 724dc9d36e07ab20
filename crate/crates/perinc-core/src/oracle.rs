//! Independent verification path: second-moment covariances of the observed
//! sequence, a brute-force normal-equations solution of the finite-past
//! prediction problem, and Monte Carlo path synthesis with empirical error
//! estimation. Nothing here shares code with the operator pipeline beyond
//! the density grids themselves.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harmonic::CoefficientSequence;
use crate::increments::{binomial_f64, IncrementSpec};
use crate::operators::fourier_block;
use crate::spectral::{combine_p, kernel_eval, KernelDirection, SpectralDensityGrid};
use crate::C64;

/// Covariances of the observed sequence `z`, the noise sequence, and their
/// cross term, stored for lags `-lmax ..= lmax`.
///
/// With `z_j = xi^{(d)}_j + eta^{(d)}_j` the spectral forms are
/// `R_zz(lag) = (1/2pi) int e^{i lag lambda} |r|^2 (f + lambda^{2d} g)`,
/// `R_ee(lag) = (1/2pi) int e^{i lag lambda} g`, and the cross covariance
/// `E[z_{j+lag} eta_j^*] = (1/2pi) int e^{i lag lambda} (1 - e^{-i lambda tau})^d g`
/// (the differencing filter applied to the noise appears linearly; the raw
/// noise enters the target functional undifferenced).
#[derive(Debug, Clone)]
pub struct CovarianceBundle {
    pub k: usize,
    pub lmax: usize,
    rzz: Vec<DMatrix<C64>>,
    ree: Vec<DMatrix<C64>>,
    rze: Vec<DMatrix<C64>>,
}

impl CovarianceBundle {
    pub fn rzz(&self, lag: i64) -> &DMatrix<C64> {
        &self.rzz[(lag + self.lmax as i64) as usize]
    }
    pub fn ree(&self, lag: i64) -> &DMatrix<C64> {
        &self.ree[(lag + self.lmax as i64) as usize]
    }
    pub fn rze(&self, lag: i64) -> &DMatrix<C64> {
        &self.rze[(lag + self.lmax as i64) as usize]
    }
}

/// Quadrature evaluation of the covariance bundle.
pub fn covariances(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    lmax: usize,
) -> Result<CovarianceBundle> {
    let p = combine_p(f, g, spec)?;
    let invk = kernel_eval(spec, &f.grid, KernelDirection::Inverse)?;
    let points = f.grid.points();
    let wz: Vec<DMatrix<C64>> =
        p.values.iter().zip(&invk).map(|(v, &w)| v.scale(w)).collect();
    let wze: Vec<DMatrix<C64>> = g
        .values
        .iter()
        .zip(&points)
        .map(|(v, &lam)| {
            let dfac = (C64::new(1.0, 0.0) - C64::new(0.0, -lam * spec.tau as f64).exp())
                .powu(spec.d as u32);
            v.map(|x| x * dfac)
        })
        .collect();
    let lags: Vec<i64> = (-(lmax as i64)..=lmax as i64).collect();
    let run = |w: &Vec<DMatrix<C64>>| -> Vec<DMatrix<C64>> {
        lags.par_iter().map(|&lag| fourier_block(w, &points, lag)).collect()
    };
    Ok(CovarianceBundle {
        k: f.k,
        lmax,
        rzz: run(&wz),
        ree: run(&g.values.to_vec()),
        rze: run(&wze),
    })
}

/// Output of the brute-force finite-past solve.
#[derive(Debug, Clone)]
pub struct OracleSolution {
    /// Minimal mean-square error over predictors using `z_{-1} .. z_{-lp}`.
    pub mse: f64,
    /// Variance of the target functional itself.
    pub var_h: f64,
    /// Optimal taps on `z_{-1} .. z_{-lp}` (index `i-1` weights `z_{-i}`).
    pub filter: Vec<DVector<C64>>,
}

/// Solve the finite-past linear prediction problem directly from the
/// covariances: the target is `H = sum_j b_j^T z_j - sum_j a_j^T eta_j`
/// over `j >= 0`, predicted from the observations `z_{-1} .. z_{-lp}`.
pub fn normal_equations_mse(
    a_seq: &CoefficientSequence,
    b_seq: &CoefficientSequence,
    cov: &CovarianceBundle,
    lp: usize,
) -> Result<OracleSolution> {
    let k = cov.k;
    let nb = b_seq.len();
    let na = a_seq.len();
    if lp + nb.max(na) + 1 > cov.lmax {
        return Err(Error::Domain(format!(
            "covariance bundle lmax = {} too small for lp = {lp}",
            cov.lmax
        )));
    }
    let row = |v: &DVector<C64>, m: &DMatrix<C64>| -> DVector<C64> { m.transpose() * v };

    let mut var = C64::new(0.0, 0.0);
    for l in 0..nb {
        for j in 0..nb {
            var += row(&b_seq.vectors[l], cov.rzz(l as i64 - j as i64))
                .dot(&b_seq.vectors[j].conjugate());
        }
    }
    for l in 0..na {
        for j in 0..na {
            var += row(&a_seq.vectors[l], cov.ree(l as i64 - j as i64))
                .dot(&a_seq.vectors[j].conjugate());
        }
    }
    for l in 0..nb {
        for j in 0..na {
            let t = row(&b_seq.vectors[l], cov.rze(l as i64 - j as i64))
                .dot(&a_seq.vectors[j].conjugate());
            var -= t + t.conj();
        }
    }

    let mut cross: Vec<DVector<C64>> = Vec::with_capacity(lp);
    for i in 1..=lp as i64 {
        let mut s: DVector<C64> = DVector::zeros(k);
        for j in 0..nb {
            s += row(&b_seq.vectors[j], cov.rzz(j as i64 + i));
        }
        for j in 0..na {
            // E[eta_j z_{-i}^*] = (E[z_{-i} eta_j^*])^* = conj(R_ze(-i - j)),
            // entering as the row a_j^T conj(R_ze)^T = conj(R_ze) a_j
            let m = cov.rze(-i - j as i64).map(|v| v.conj());
            s -= m * &a_seq.vectors[j];
        }
        cross.push(s);
    }

    let n = lp * k;
    let mut gmat: DMatrix<C64> = DMatrix::zeros(n, n);
    for i in 1..=lp {
        for kk in 1..=lp {
            gmat.view_mut(((i - 1) * k, (kk - 1) * k), (k, k))
                .copy_from(cov.rzz(kk as i64 - i as i64));
        }
    }
    let mut rhs: DVector<C64> = DVector::zeros(n);
    for (i, c) in cross.iter().enumerate() {
        rhs.rows_mut(i * k, k).copy_from(&c.conjugate());
    }
    let w = gmat
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::IllConditioned("observation Gram matrix is singular".into()))?;

    let mut reduction = C64::new(0.0, 0.0);
    for (i, c) in cross.iter().enumerate() {
        for kk in 0..k {
            reduction += c[kk] * w[i * k + kk];
        }
    }
    let var_h = var.re;
    let mse = (var - reduction).re;
    let filter = (0..lp).map(|i| w.rows(i * k, k).map(|v| v.conj())).collect();
    Ok(OracleSolution { mse, var_h, filter })
}

/// One simulated path: the differenced signal sequence and the raw noise
/// sequence, both indexed from `j0`.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub j0: i64,
    pub xi_d: Vec<DVector<C64>>,
    pub eta: Vec<DVector<C64>>,
}

/// Deterministic Monte Carlo ensemble.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub k: usize,
    pub spec: IncrementSpec,
    pub paths: Vec<SimulatedPath>,
}

fn path_rng(seed: u64, path: u64) -> ChaCha8Rng {
    // splitmix-style scramble so neighboring path indices decorrelate
    let mut x = seed ^ path.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    ChaCha8Rng::seed_from_u64(x)
}

fn complex_gaussian(rng: &mut ChaCha8Rng, k: usize) -> DVector<C64> {
    DVector::from_fn(k, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
    })
}

fn ma_filter(
    coeffs: &[DMatrix<C64>],
    innovations: &[DVector<C64>],
    out_len: usize,
    k: usize,
) -> Vec<DVector<C64>> {
    let q = coeffs.len() - 1;
    // innovations[i] corresponds to output index i - q .. i
    (0..out_len)
        .map(|j| {
            let mut acc: DVector<C64> = DVector::zeros(k);
            for (n, c) in coeffs.iter().enumerate() {
                acc += c * &innovations[j + q - n];
            }
            acc
        })
        .collect()
}

/// Generate `n_paths` independent paths of the observation model: the
/// differenced signal is the moving average `xi_ma` driven by standard
/// complex Gaussian innovations, the noise is the moving average `g_ma`
/// driven by an independent stream. Sequences cover `j = j_min ..= j_max`
/// for the signal and start `tau * d` periods earlier for the noise.
pub fn simulate(
    xi_ma: &[DMatrix<C64>],
    g_ma: &[DMatrix<C64>],
    spec: &IncrementSpec,
    j_min: i64,
    j_max: i64,
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    if xi_ma.is_empty() || g_ma.is_empty() || j_max < j_min {
        return Err(Error::Domain("simulate needs nonempty filters and a valid range".into()));
    }
    let k = xi_ma[0].nrows();
    let shift = (spec.tau * spec.d) as i64;
    let j0 = j_min - shift;
    let n_eta = (j_max - j0 + 1) as usize;
    let n_xi = (j_max - j_min + 1) as usize;
    let q_xi = xi_ma.len() - 1;
    let q_g = g_ma.len() - 1;
    let paths: Vec<SimulatedPath> = (0..n_paths as u64)
        .into_par_iter()
        .map(|path| {
            let mut rng = path_rng(seed, path);
            let innov_xi: Vec<DVector<C64>> =
                (0..n_xi + q_xi).map(|_| complex_gaussian(&mut rng, k)).collect();
            let innov_eta: Vec<DVector<C64>> =
                (0..n_eta + q_g).map(|_| complex_gaussian(&mut rng, k)).collect();
            let xi_d = ma_filter(xi_ma, &innov_xi, n_xi, k);
            let eta = ma_filter(g_ma, &innov_eta, n_eta, k);
            SimulatedPath { j0, xi_d, eta }
        })
        .collect();
    Ok(Ensemble { k, spec: *spec, paths })
}

impl SimulatedPath {
    fn eta_at(&self, j: i64) -> &DVector<C64> {
        &self.eta[(j - self.j0) as usize]
    }
    fn xi_d_at(&self, j: i64, shift: i64) -> &DVector<C64> {
        &self.xi_d[(j - self.j0 - shift) as usize]
    }

    /// Observed value `z_j = xi^{(d)}_j + eta^{(d)}_j` with the noise
    /// difference formed in the time domain.
    pub fn z_at(&self, j: i64, spec: &IncrementSpec) -> DVector<C64> {
        let shift = (spec.tau * spec.d) as i64;
        let mut acc = self.xi_d_at(j, shift).clone();
        for l in 0..=spec.d {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            acc += self.eta_at(j - (spec.tau * l) as i64).scale(sign * binomial_f64(spec.d, l));
        }
        acc
    }
}

/// Empirical mean-square error of a filter over the ensemble: for each path
/// the target `H = sum b_j^T z_j - sum a_j^T eta_j` is compared with the
/// filter output on `z_{-1} .. z_{-lp}`. Returns the mean squared error and
/// its standard error.
pub fn empirical_mse(
    ensemble: &Ensemble,
    filter: &[DVector<C64>],
    a_seq: &CoefficientSequence,
    b_seq: &CoefficientSequence,
) -> Result<(f64, f64)> {
    let spec = ensemble.spec;
    let errs: Vec<f64> = ensemble
        .paths
        .par_iter()
        .map(|path| {
            let mut h = C64::new(0.0, 0.0);
            for (j, b) in b_seq.vectors.iter().enumerate() {
                let z = path.z_at(j as i64, &spec);
                for kk in 0..ensemble.k {
                    h += b[kk] * z[kk];
                }
            }
            for (j, a) in a_seq.vectors.iter().enumerate() {
                let e = path.eta_at(j as i64);
                for kk in 0..ensemble.k {
                    h -= a[kk] * e[kk];
                }
            }
            let mut hat = C64::new(0.0, 0.0);
            for (i, tap) in filter.iter().enumerate() {
                let z = path.z_at(-(i as i64 + 1), &spec);
                for kk in 0..ensemble.k {
                    hat += tap[kk] * z[kk];
                }
            }
            (h - hat).norm_sqr()
        })
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}
