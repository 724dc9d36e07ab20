//! Experiment configuration: JSON schema and conversion into core objects.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use perinc_core::harmonic::{CoefficientSequence, HarmonicGrid};
use perinc_core::increments::IncrementSpec;
use perinc_core::minimax::{DensityClass, SearchOptions};
use perinc_core::spectral::{eval_density, DensityModel, LambdaGrid, SpectralDensityGrid};
use perinc_core::C64;

/// Top-level experiment description; unknown keys are rejected.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub densities: DensitiesConfig,
    pub target: TargetConfig,
    pub mode: Mode,
    #[serde(default)]
    pub minimax: Option<MinimaxConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Increment order.
    pub d: usize,
    /// Increment step in periods.
    pub tau: usize,
    /// Period length.
    pub period: f64,
    /// Lifted dimension (number of harmonics).
    pub harmonics: usize,
    /// Time samples per period for reconstruction grids.
    pub samples_per_period: usize,
    /// Frequency grid resolution.
    pub m: usize,
    /// Operator truncation order.
    pub l: usize,
    /// Filter length for tap extraction.
    pub lp: usize,
    /// Factorization order cap for the factorized route.
    #[serde(default = "default_q_max")]
    pub q_max: usize,
}

fn default_q_max() -> usize {
    10
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitiesConfig {
    pub f: DensityModelConfig,
    pub g: DensityModelConfig,
}

/// Complex scalar as a `[re, im]` pair.
pub type CfgComplex = [f64; 2];
/// Complex matrix as nested rows of `[re, im]` pairs.
pub type CfgMatrix = Vec<Vec<CfgComplex>>;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DensityModelConfig {
    /// `F = Phi Phi^*` with `Phi(z) = sum_k coeffs[k] z^k`.
    MovingAverage { coeffs: Vec<CfgMatrix> },
    /// Independent per-harmonic AR(1) spectra.
    DiagonalAr1 { rho: Vec<f64>, sigma: Vec<f64> },
    /// Constant `level * I`.
    White { dim: usize, level: f64 },
    /// Identically zero.
    Zero { dim: usize },
    /// Signal density paired to a noise MA model so that the combined
    /// kernel-weighted density is exactly `Theta Theta^*`:
    /// `F = kernel * Theta Theta^* - lambda^{2d} * (noise MA density)`.
    KernelMa { theta: Vec<CfgMatrix>, noise: Vec<CfgMatrix> },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub a: TargetA,
    #[serde(default)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetA {
    /// `a_j = ratio^j * direction` for `j = 0..count`.
    Geometric {
        ratio: f64,
        count: usize,
        #[serde(default)]
        direction: Option<Vec<CfgComplex>>,
    },
    /// Explicit coefficient vectors per period lag.
    Inline { vectors: Vec<Vec<CfgComplex>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Predict,
    PredictFinite,
    Factorized,
    Verify,
    Minimax,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Predict => "predict",
            Mode::PredictFinite => "predict_finite",
            Mode::Factorized => "factorized",
            Mode::Verify => "verify",
            Mode::Minimax => "minimax",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinimaxConfig {
    #[serde(default)]
    pub class_f: Option<ClassConfig>,
    #[serde(default)]
    pub class_g: Option<ClassConfig>,
    /// Search starting point for f (defaults to densities.f).
    #[serde(default)]
    pub f_init: Option<DensityModelConfig>,
    /// Search starting point for g (defaults to densities.g).
    #[serde(default)]
    pub g_init: Option<DensityModelConfig>,
    #[serde(default)]
    pub options: OptionsConfig,
    /// Sample count for the saddle certificate; 0 skips the check.
    #[serde(default = "default_saddle_samples")]
    pub saddle_samples: usize,
}

fn default_saddle_samples() -> usize {
    50
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsConfig {
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_l_op")]
    pub l_op: usize,
}

fn default_max_iter() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-8
}
fn default_l_op() -> usize {
    16
}

impl Default for OptionsConfig {
    fn default() -> Self {
        Self { max_iter: default_max_iter(), tol: default_tol(), l_op: default_l_op() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassConfig {
    D0Full { p_mat: CfgMatrix },
    D0Trace { p: f64 },
    D0Diag { p_diag: Vec<f64> },
    D0Weighted { b1: CfgMatrix, p: f64 },
    D1Entry { g1: DensityModelConfig, delta: Vec<Vec<f64>> },
    D1Trace { g1: DensityModelConfig, delta: f64 },
    D1Diag { g1: DensityModelConfig, delta: Vec<f64> },
    D1Weighted { g1: DensityModelConfig, b2: CfgMatrix, delta: f64 },
    EpsFull { f1: DensityModelConfig, eps: f64, p_mat: CfgMatrix },
    EpsTrace { f1: DensityModelConfig, eps: f64, p: f64 },
    EpsDiag { f1: DensityModelConfig, eps: f64, p_diag: Vec<f64> },
    EpsWeighted { f1: DensityModelConfig, eps: f64, b1: CfgMatrix, p: f64 },
    BandFull { v: DensityModelConfig, u: DensityModelConfig, q_mat: CfgMatrix },
    BandTrace { v: DensityModelConfig, u: DensityModelConfig, q: f64 },
    BandDiag { v: DensityModelConfig, u: DensityModelConfig, q_diag: Vec<f64> },
    BandWeighted { v: DensityModelConfig, u: DensityModelConfig, b2: CfgMatrix, q: f64 },
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<String>,
    #[serde(default = "default_true")]
    pub characteristic_csv: bool,
    #[serde(default = "default_true")]
    pub filter_csv: bool,
    #[serde(default = "default_true")]
    pub convergence_csv: bool,
    #[serde(default = "default_true")]
    pub summary: bool,
}

fn default_true() -> bool {
    true
}

fn c(v: CfgComplex) -> C64 {
    C64::new(v[0], v[1])
}

pub fn cfg_matrix(m: &CfgMatrix, dim: usize, what: &str) -> Result<DMatrix<C64>, String> {
    if m.len() != dim || m.iter().any(|row| row.len() != dim) {
        return Err(format!("{what}: expected a {dim}x{dim} matrix"));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| c(m[i][j])))
}

/// Build the core density model for a declared density.
pub fn density_model(
    cfg: &DensityModelConfig,
    grid: &LambdaGrid,
    spec: &IncrementSpec,
) -> Result<DensityModel, String> {
    use perinc_core::spectral::{eval_matrix_poly, kernel_eval, KernelDirection};
    match cfg {
        DensityModelConfig::MovingAverage { coeffs } => {
            if coeffs.is_empty() {
                return Err("moving_average: empty coefficient list".into());
            }
            let k = coeffs[0].len();
            let mats = coeffs
                .iter()
                .map(|cm| cfg_matrix(cm, k, "moving_average coefficient"))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(DensityModel::MovingAverage(mats))
        }
        DensityModelConfig::DiagonalAr1 { rho, sigma } => {
            Ok(DensityModel::DiagonalAr1 { rho: rho.clone(), sigma: sigma.clone() })
        }
        DensityModelConfig::White { dim, level } => {
            if *level < 0.0 {
                return Err("white: level must be non-negative".into());
            }
            let phi = DMatrix::from_diagonal_element(*dim, *dim, C64::new(level.sqrt(), 0.0));
            Ok(DensityModel::MovingAverage(vec![phi]))
        }
        DensityModelConfig::Zero { dim } => Ok(DensityModel::GridLiteral(
            SpectralDensityGrid::zeros(*grid, *dim),
        )),
        DensityModelConfig::KernelMa { theta, noise } => {
            if theta.is_empty() {
                return Err("kernel_ma: empty theta coefficient list".into());
            }
            let k = theta[0].len();
            let th = theta
                .iter()
                .map(|cm| cfg_matrix(cm, k, "kernel_ma theta coefficient"))
                .collect::<Result<Vec<_>, _>>()?;
            let noise_model = density_model(
                &DensityModelConfig::MovingAverage { coeffs: noise.clone() },
                grid,
                spec,
            )?;
            let g = eval_density(&noise_model, grid).map_err(|e| format!("kernel_ma noise: {e}"))?;
            if g.k != k {
                return Err("kernel_ma: theta and noise dimensions differ".into());
            }
            let fwd = kernel_eval(spec, grid, KernelDirection::Forward)
                .map_err(|e| format!("kernel_ma: {e}"))?;
            let values: Vec<DMatrix<C64>> = grid
                .points()
                .iter()
                .enumerate()
                .map(|(m, &lam)| {
                    let z = C64::new(0.0, -lam).exp();
                    let t = eval_matrix_poly(&th, z);
                    (&t * t.adjoint()).scale(fwd[m])
                        - g.values[m].scale(lam.powi(2 * spec.d as i32))
                })
                .collect();
            let out = SpectralDensityGrid::new(*grid, k, values)
                .map_err(|e| format!("kernel_ma: {e}"))?;
            out.validate().map_err(|e| format!("kernel_ma: {e}"))?;
            Ok(DensityModel::GridLiteral(out))
        }
    }
}

pub fn density_grid(
    cfg: &DensityModelConfig,
    grid: &LambdaGrid,
    spec: &IncrementSpec,
    dim: usize,
    what: &str,
) -> Result<SpectralDensityGrid, String> {
    let model = density_model(cfg, grid, spec)?;
    let out = eval_density(&model, grid).map_err(|e| format!("{what}: {e}"))?;
    if out.k != dim {
        return Err(format!("{what}: dimension {} does not match problem harmonics {dim}", out.k));
    }
    Ok(out)
}

pub fn target_sequence(cfg: &TargetA, dim: usize) -> Result<CoefficientSequence, String> {
    match cfg {
        TargetA::Geometric { ratio, count, direction } => {
            if !(ratio.abs() < 1.0) {
                return Err("geometric target requires |ratio| < 1".into());
            }
            let dir: DVector<C64> = match direction {
                Some(d) => {
                    if d.len() != dim {
                        return Err(format!(
                            "geometric target direction must have {dim} entries"
                        ));
                    }
                    DVector::from_iterator(dim, d.iter().map(|&v| c(v)))
                }
                None => {
                    if dim != 1 {
                        return Err(
                            "geometric target needs an explicit direction when harmonics > 1"
                                .into(),
                        );
                    }
                    DVector::from_element(1, C64::new(1.0, 0.0))
                }
            };
            let vectors = (0..*count)
                .map(|j| dir.map(|v| v * ratio.powi(j as i32)))
                .collect();
            CoefficientSequence::new(dim, vectors).map_err(|e| e.to_string())
        }
        TargetA::Inline { vectors } => {
            let vs = vectors
                .iter()
                .map(|row| {
                    if row.len() != dim {
                        Err(format!("inline target rows must have {dim} entries"))
                    } else {
                        Ok(DVector::from_iterator(dim, row.iter().map(|&v| c(v))))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            CoefficientSequence::new(dim, vs).map_err(|e| e.to_string())
        }
    }
}

pub fn density_class(
    cfg: &ClassConfig,
    grid: &LambdaGrid,
    spec: &IncrementSpec,
    dim: usize,
) -> Result<DensityClass, String> {
    let dgrid = |m: &DensityModelConfig, what: &str| density_grid(m, grid, spec, dim, what);
    Ok(match cfg {
        ClassConfig::D0Full { p_mat } => {
            DensityClass::D0Full { p_mat: cfg_matrix(p_mat, dim, "d0_full p_mat")? }
        }
        ClassConfig::D0Trace { p } => DensityClass::D0Trace { p: *p },
        ClassConfig::D0Diag { p_diag } => DensityClass::D0Diag { p_diag: p_diag.clone() },
        ClassConfig::D0Weighted { b1, p } => {
            DensityClass::D0Weighted { b1: cfg_matrix(b1, dim, "d0_weighted b1")?, p: *p }
        }
        ClassConfig::D1Entry { g1, delta } => {
            if delta.len() != dim || delta.iter().any(|r| r.len() != dim) {
                return Err(format!("d1_entry delta must be {dim}x{dim}"));
            }
            DensityClass::D1DeltaEntry {
                g1: dgrid(g1, "d1_entry g1")?,
                delta: nalgebra::DMatrix::from_fn(dim, dim, |i, j| delta[i][j]),
            }
        }
        ClassConfig::D1Trace { g1, delta } => {
            DensityClass::D1DeltaTrace { g1: dgrid(g1, "d1_trace g1")?, delta: *delta }
        }
        ClassConfig::D1Diag { g1, delta } => {
            DensityClass::D1DeltaDiag { g1: dgrid(g1, "d1_diag g1")?, delta: delta.clone() }
        }
        ClassConfig::D1Weighted { g1, b2, delta } => DensityClass::D1DeltaWeighted {
            g1: dgrid(g1, "d1_weighted g1")?,
            b2: cfg_matrix(b2, dim, "d1_weighted b2")?,
            delta: *delta,
        },
        ClassConfig::EpsFull { f1, eps, p_mat } => DensityClass::DepsFull {
            f1: dgrid(f1, "eps_full f1")?,
            eps: *eps,
            p_mat: cfg_matrix(p_mat, dim, "eps_full p_mat")?,
        },
        ClassConfig::EpsTrace { f1, eps, p } => {
            DensityClass::DepsTrace { f1: dgrid(f1, "eps_trace f1")?, eps: *eps, p: *p }
        }
        ClassConfig::EpsDiag { f1, eps, p_diag } => DensityClass::DepsDiag {
            f1: dgrid(f1, "eps_diag f1")?,
            eps: *eps,
            p_diag: p_diag.clone(),
        },
        ClassConfig::EpsWeighted { f1, eps, b1, p } => DensityClass::DepsWeighted {
            f1: dgrid(f1, "eps_weighted f1")?,
            eps: *eps,
            b1: cfg_matrix(b1, dim, "eps_weighted b1")?,
            p: *p,
        },
        ClassConfig::BandFull { v, u, q_mat } => DensityClass::DvuFull {
            v: dgrid(v, "band_full v")?,
            u: dgrid(u, "band_full u")?,
            q_mat: cfg_matrix(q_mat, dim, "band_full q_mat")?,
        },
        ClassConfig::BandTrace { v, u, q } => DensityClass::DvuTrace {
            v: dgrid(v, "band_trace v")?,
            u: dgrid(u, "band_trace u")?,
            q: *q,
        },
        ClassConfig::BandDiag { v, u, q_diag } => DensityClass::DvuDiag {
            v: dgrid(v, "band_diag v")?,
            u: dgrid(u, "band_diag u")?,
            q_diag: q_diag.clone(),
        },
        ClassConfig::BandWeighted { v, u, b2, q } => DensityClass::DvuWeighted {
            v: dgrid(v, "band_weighted v")?,
            u: dgrid(u, "band_weighted u")?,
            b2: cfg_matrix(b2, dim, "band_weighted b2")?,
            q: *q,
        },
    })
}

/// Fully validated problem objects ready to run.
pub struct BuiltProblem {
    pub spec: IncrementSpec,
    pub hgrid: HarmonicGrid,
    pub grid: LambdaGrid,
    pub f: SpectralDensityGrid,
    pub g: SpectralDensityGrid,
    pub a: CoefficientSequence,
    pub l: usize,
    pub lp: usize,
    pub q_max: usize,
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<BuiltProblem, String> {
    let p = &cfg.problem;
    let spec = IncrementSpec::new(p.d, p.tau, p.period).map_err(|e| e.to_string())?;
    let hgrid =
        HarmonicGrid::new(p.period, p.harmonics, p.samples_per_period).map_err(|e| e.to_string())?;
    let grid = LambdaGrid::new(p.m).map_err(|e| e.to_string())?;
    grid.check_clearance(p.tau).map_err(|e| e.to_string())?;
    let f = density_grid(&cfg.densities.f, &grid, &spec, p.harmonics, "densities.f")?;
    let g = density_grid(&cfg.densities.g, &grid, &spec, p.harmonics, "densities.g")?;
    let a = target_sequence(&cfg.target.a, p.harmonics)?;
    if a.len() > p.l {
        return Err(format!(
            "target support {} exceeds operator truncation l = {}",
            a.len(),
            p.l
        ));
    }
    Ok(BuiltProblem { spec, hgrid, grid, f, g, a, l: p.l, lp: p.lp, q_max: p.q_max })
}

pub fn search_options(cfg: &OptionsConfig, seed: u64) -> SearchOptions {
    SearchOptions { max_iter: cfg.max_iter, tol: cfg.tol, seed, l_op: cfg.l_op }
}
