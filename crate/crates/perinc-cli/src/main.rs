//! Config-driven experiment runner: validate, solve, verify, and report.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;
use sha2::{Digest, Sha256};

use config::{
    build_problem, density_class, density_grid, search_options, BuiltProblem, DensityModelConfig,
    ExperimentConfig, Mode,
};
use perinc_core::factorization::{operator_factor_checks, predict_factorized};
use perinc_core::minimax::{
    lagrange_residual, least_favorable_search, saddle_check, ResidualStatus,
};
use perinc_core::oracle::{covariances, normal_equations_mse};
use perinc_core::predictor::{
    extract_filter, orthogonality_residuals, predict_finite, predict_seq, PredictionResult,
};
use perinc_core::{C64, Error};
use report::{fmt_float, render_document, Node};

const EXIT_OK: u8 = 0;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_MINIMAX: u8 = 4;

#[derive(Parser)]
#[command(name = "perinc", version, about = "Linear prediction for periodic-increment processes")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a JSON config file.
    Run {
        /// Path to the experiment config.
        config: PathBuf,
        /// Dotted-path config overrides, e.g. `problem.m=2048`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Directory for result artifacts (overrides `output.dir`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Random seed (overrides the config `seed`).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker thread count (overrides the PERINC_THREADS env var).
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { config, overrides, out_dir, seed, threads } => {
            ExitCode::from(run(&config, &overrides, out_dir, seed, threads))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Domain(_) | Error::Validation(_) | Error::Infeasible(_) => EXIT_VALIDATION,
        _ => EXIT_NUMERICAL,
    }
}

fn apply_override(root: &mut Value, spec: &str) -> Result<(), String> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| format!("override `{spec}` is not of the form key=value"))?;
    let parsed: Value = serde_json::from_str(raw).unwrap_or(Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| format!("override `{path}`: `{part}` is not inside an object"))?;
        if last {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        cursor = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

fn configure_threads(flag: Option<usize>) {
    let from_env = std::env::var("PERINC_THREADS").ok().and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = flag.or(from_env) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(
    config_path: &Path,
    overrides: &[String],
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    threads: Option<usize>,
) -> u8 {
    configure_threads(threads);

    let raw = match std::fs::read_to_string(config_path) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot read config {}: {e}", config_path.display());
            return EXIT_VALIDATION;
        }
    };
    let mut value: Value = match serde_json::from_str(&raw) {
        Ok(v) => v,
        Err(e) => {
            eprintln!(
                "error: malformed config {} at line {}, column {}: {e}",
                config_path.display(),
                e.line(),
                e.column()
            );
            return EXIT_VALIDATION;
        }
    };
    for ov in overrides {
        if let Err(msg) = apply_override(&mut value, ov) {
            eprintln!("error: {msg}");
            return EXIT_VALIDATION;
        }
    }
    if let Some(s) = seed {
        if let Some(obj) = value.as_object_mut() {
            obj.insert("seed".into(), Value::from(s));
        }
    }

    // hash of the effective config, canonically rendered
    let mut canonical = String::new();
    report::canonical_value(&value, &mut canonical);
    let config_sha256 = format!("{:x}", Sha256::digest(canonical.as_bytes()));

    let cfg: ExperimentConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: invalid config field: {e}");
            return EXIT_VALIDATION;
        }
    };
    let built = match build_problem(&cfg) {
        Ok(b) => b,
        Err(msg) => {
            eprintln!("error: {msg}");
            return EXIT_VALIDATION;
        }
    };
    let dir = out_dir
        .or_else(|| cfg.output.dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = std::fs::create_dir_all(&dir) {
        eprintln!("error: cannot create output directory {}: {e}", dir.display());
        return EXIT_VALIDATION;
    }

    let mut record = vec![
        ("version", Node::Str(env!("CARGO_PKG_VERSION").into())),
        ("config_sha256", Node::Str(config_sha256)),
        ("mode", Node::Str(cfg.mode.as_str().into())),
        ("seed", Node::Int(cfg.seed as i64)),
        (
            "problem",
            Node::map(vec![
                ("d", Node::Int(cfg.problem.d as i64)),
                ("tau", Node::Int(cfg.problem.tau as i64)),
                ("period", Node::Float(cfg.problem.period)),
                ("harmonics", Node::Int(cfg.problem.harmonics as i64)),
                ("samples_per_period", Node::Int(built.hgrid.s as i64)),
                ("m", Node::Int(cfg.problem.m as i64)),
                ("l", Node::Int(built.l as i64)),
                ("lp", Node::Int(built.lp as i64)),
            ]),
        ),
    ];
    let mut summary = String::new();
    summary.push_str(&format!(
        "mode {} | d={} tau={} period={} harmonics={} M={} L={} Lp={}\n",
        cfg.mode.as_str(),
        cfg.problem.d,
        cfg.problem.tau,
        cfg.problem.period,
        cfg.problem.harmonics,
        cfg.problem.m,
        built.l,
        built.lp
    ));

    let status = match cfg.mode {
        Mode::Predict | Mode::PredictFinite | Mode::Factorized => {
            run_prediction(&cfg, &built, &dir, &mut record, &mut summary)
        }
        Mode::Verify => run_verify(&cfg, &built, &dir, &mut record, &mut summary),
        Mode::Minimax => run_minimax(&cfg, &built, &dir, &mut record, &mut summary),
    };
    let code = match status {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            return exit_code_for(&err);
        }
    };

    if let Err(e) = std::fs::write(dir.join("result.json"), render_document(&Node::Map(
        record.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
    ))) {
        eprintln!("error: cannot write result.json: {e}");
        return EXIT_NUMERICAL;
    }
    if cfg.output.summary {
        if let Err(e) = std::fs::write(dir.join("summary.txt"), summary) {
            eprintln!("error: cannot write summary.txt: {e}");
            return EXIT_NUMERICAL;
        }
    }
    code
}

fn solve(cfg: &ExperimentConfig, built: &BuiltProblem) -> Result<PredictionResult, Error> {
    match cfg.mode {
        Mode::PredictFinite => {
            let n = cfg.target.horizon.ok_or_else(|| {
                Error::Validation("mode predict_finite requires target.horizon".into())
            })?;
            predict_finite(&built.f, &built.g, &built.a, &built.spec, n, built.l)
        }
        Mode::Factorized => {
            let g_ma = noise_ma(&cfg.densities.g)?;
            predict_factorized(
                &built.f,
                &built.g,
                &g_ma,
                &built.a,
                &built.spec,
                built.l,
                built.q_max,
            )
        }
        _ => predict_seq(&built.f, &built.g, &built.a, &built.spec, built.l),
    }
}

/// Moving-average coefficients of the declared noise density, required by
/// the factorized route for exact noise autocovariances.
fn noise_ma(cfg: &DensityModelConfig) -> Result<Vec<nalgebra::DMatrix<C64>>, Error> {
    match cfg {
        DensityModelConfig::MovingAverage { coeffs } => {
            let k = coeffs.first().map(|c| c.len()).unwrap_or(0);
            coeffs
                .iter()
                .map(|cm| config::cfg_matrix(cm, k, "noise coefficient").map_err(Error::Validation))
                .collect()
        }
        DensityModelConfig::White { dim, level } => {
            Ok(vec![nalgebra::DMatrix::from_diagonal_element(
                *dim,
                *dim,
                C64::new(level.sqrt(), 0.0),
            )])
        }
        DensityModelConfig::Zero { dim } => Ok(vec![nalgebra::DMatrix::zeros(*dim, *dim)]),
        DensityModelConfig::DiagonalAr1 { .. } | DensityModelConfig::KernelMa { .. } => {
            Err(Error::Validation(
                "the factorized route needs the noise density in moving-average form".into(),
            ))
        }
    }
}

fn run_prediction(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
    dir: &Path,
    record: &mut Vec<(&'static str, Node)>,
    summary: &mut String,
) -> Result<u8, Error> {
    let res = solve(cfg, built)?;
    let (taps, defect) = extract_filter(&res.characteristic, &built.grid, &built.spec, built.lp)?;

    record.push((
        "prediction",
        Node::map(vec![
            ("mse", Node::Float(res.mse)),
            ("mse_integral", Node::Float(res.mse_integral)),
            (
                "diagnostics",
                Node::map(vec![
                    ("condition", Node::Float(res.diagnostics.condition)),
                    ("truncation_tail", Node::Float(res.diagnostics.truncation_tail)),
                    ("minimality_flagged", Node::Bool(res.diagnostics.minimality_flagged)),
                ]),
            ),
            (
                "filter",
                Node::map(vec![
                    ("length", Node::Int(built.lp as i64)),
                    ("causality_defect", Node::Float(defect)),
                ]),
            ),
        ]),
    ));
    summary.push_str(&format!(
        "mse {:.12e} (integral form {:.12e})\ncondition {:.3e}, truncation tail {:.3e}, minimality flagged: {}\nfilter causality defect {:.3e}\n",
        res.mse,
        res.mse_integral,
        res.diagnostics.condition,
        res.diagnostics.truncation_tail,
        res.diagnostics.minimality_flagged,
        defect
    ));

    if cfg.output.characteristic_csv {
        write_characteristic_csv(dir, &built.grid.points(), &res.characteristic.values)?;
    }
    if cfg.output.filter_csv {
        let mut csv = String::from("lag");
        for kk in 0..built.f.k {
            csv.push_str(&format!(",c{kk}_re,c{kk}_im"));
        }
        csv.push('\n');
        for (i, tap) in taps.iter().enumerate() {
            csv.push_str(&format!("{}", -(i as i64) - 1));
            for kk in 0..built.f.k {
                csv.push_str(&format!(",{},{}", fmt_float(tap[kk].re), fmt_float(tap[kk].im)));
            }
            csv.push('\n');
        }
        std::fs::write(dir.join("filter.csv"), csv)
            .map_err(|e| Error::Validation(format!("cannot write filter.csv: {e}")))?;
    }
    if cfg.output.convergence_csv {
        let mut csv = String::from("l,mse,mse_integral\n");
        let l_min = built.a.len().max(2);
        for l in l_min..=built.l {
            let r = predict_seq(&built.f, &built.g, &built.a, &built.spec, l)?;
            csv.push_str(&format!("{l},{},{}\n", fmt_float(r.mse), fmt_float(r.mse_integral)));
        }
        std::fs::write(dir.join("convergence.csv"), csv)
            .map_err(|e| Error::Validation(format!("cannot write convergence.csv: {e}")))?;
    }
    Ok(EXIT_OK)
}

fn write_characteristic_csv(
    dir: &Path,
    points: &[f64],
    values: &[nalgebra::DVector<C64>],
) -> Result<(), Error> {
    let k = values.first().map(|v| v.len()).unwrap_or(0);
    let mut csv = String::from("lambda");
    for kk in 0..k {
        csv.push_str(&format!(",h{kk}_re,h{kk}_im"));
    }
    csv.push('\n');
    for (m, &lam) in points.iter().enumerate() {
        csv.push_str(&fmt_float(lam));
        for kk in 0..k {
            csv.push_str(&format!(
                ",{},{}",
                fmt_float(values[m][kk].re),
                fmt_float(values[m][kk].im)
            ));
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("characteristic.csv"), csv)
        .map_err(|e| Error::Validation(format!("cannot write characteristic.csv: {e}")))
}

fn run_verify(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
    dir: &Path,
    record: &mut Vec<(&'static str, Node)>,
    summary: &mut String,
) -> Result<u8, Error> {
    let res = predict_seq(&built.f, &built.g, &built.a, &built.spec, built.l)?;
    let cov = covariances(&built.f, &built.g, &built.spec, built.lp + built.l + 3)?;
    let oracle = normal_equations_mse(&res.a, &res.b, &cov, built.lp)?;
    let oracle_rel = (res.mse - oracle.mse).abs() / res.mse.abs().max(1e-300);
    let dual_rel = (res.mse - res.mse_integral).abs() / res.mse.abs().max(1e-300);
    let orth = orthogonality_residuals(
        &res.characteristic,
        &built.f,
        &built.g,
        &res.a,
        &res.b,
        &built.spec,
        16,
    )?;
    let orth_max = orth.iter().cloned().fold(0.0f64, f64::max) / (1.0 + res.mse.abs());

    let mut checks = vec![
        ("oracle_rel", oracle_rel, 1e-4),
        ("dual_rel", dual_rel, 1e-6),
        ("orthogonality_max", orth_max, 1e-6),
    ];
    let factor = match noise_ma(&cfg.densities.g) {
        Ok(g_ma) => Some(operator_factor_checks(
            &built.f,
            &built.g,
            &g_ma,
            &built.spec,
            built.l,
            built.q_max,
        )?),
        Err(_) => None,
    };
    if let Some(fc) = &factor {
        checks.push(("factor_reconstruction", fc.reconstruction_residual, 1e-8));
        checks.push(("factor_pointwise", fc.pointwise_residual, 1e-6));
        checks.push(("factor_p_interior", fc.p_interior_residual, 1e-6));
        checks.push(("factor_t_interior", fc.t_interior_residual, 1e-6));
    }

    let mut all_pass = true;
    let mut nodes = vec![
        ("mse", Node::Float(res.mse)),
        ("oracle_mse", Node::Float(oracle.mse)),
    ];
    for (name, value, tol) in &checks {
        let pass = value <= tol;
        all_pass &= pass;
        nodes.push((
            name,
            Node::map(vec![
                ("residual", Node::Float(*value)),
                ("tolerance", Node::Float(*tol)),
                ("pass", Node::Bool(pass)),
            ]),
        ));
        summary.push_str(&format!(
            "{name}: {value:.3e} (tol {tol:.1e}) {}\n",
            if pass { "pass" } else { "FAIL" }
        ));
    }
    record.push(("verify", Node::map(nodes)));

    if cfg.output.characteristic_csv {
        write_characteristic_csv(dir, &built.grid.points(), &res.characteristic.values)?;
    }
    Ok(if all_pass { EXIT_OK } else { EXIT_NUMERICAL })
}

fn run_minimax(
    cfg: &ExperimentConfig,
    built: &BuiltProblem,
    dir: &Path,
    record: &mut Vec<(&'static str, Node)>,
    summary: &mut String,
) -> Result<u8, Error> {
    let mm = cfg
        .minimax
        .as_ref()
        .ok_or_else(|| Error::Validation("mode minimax requires a `minimax` section".into()))?;
    let class_f = mm
        .class_f
        .as_ref()
        .map(|c| density_class(c, &built.grid, &built.spec, built.f.k).map_err(Error::Validation))
        .transpose()?;
    let class_g = mm
        .class_g
        .as_ref()
        .map(|c| density_class(c, &built.grid, &built.spec, built.g.k).map_err(Error::Validation))
        .transpose()?;
    let f_init = match &mm.f_init {
        Some(m) => density_grid(m, &built.grid, &built.spec, built.f.k, "minimax.f_init")
            .map_err(Error::Validation)?,
        None => built.f.clone(),
    };
    let g_init = match &mm.g_init {
        Some(m) => density_grid(m, &built.grid, &built.spec, built.g.k, "minimax.g_init")
            .map_err(Error::Validation)?,
        None => built.g.clone(),
    };
    let opts = search_options(&mm.options, cfg.seed);
    let report = least_favorable_search(
        class_f.as_ref(),
        &f_init,
        class_g.as_ref(),
        &g_init,
        &built.a,
        &built.spec,
        &opts,
    )?;
    let residuals = lagrange_residual(
        &report,
        class_f.as_ref(),
        class_g.as_ref(),
        &built.a,
        &built.spec,
        opts.l_op,
    )?;
    let margin = if mm.saddle_samples > 0 {
        Some(saddle_check(
            &report,
            class_f.as_ref(),
            class_g.as_ref(),
            &built.a,
            &built.spec,
            opts.l_op,
            mm.saddle_samples,
            cfg.seed,
        )?)
    } else {
        None
    };

    let residual_nodes: Vec<Node> = residuals
        .iter()
        .map(|r| match r {
            ResidualStatus::Checked { equation, residual } => Node::map(vec![
                ("equation", Node::Str(equation.clone())),
                ("residual", Node::Float(*residual)),
            ]),
            ResidualStatus::Unsupported { equation, reason } => Node::map(vec![
                ("equation", Node::Str(equation.clone())),
                ("unsupported", Node::Str(reason.clone())),
            ]),
        })
        .collect();
    record.push((
        "minimax",
        Node::map(vec![
            ("value", Node::Float(report.value)),
            ("iterations", Node::Int(report.iterations as i64)),
            ("converged", Node::Bool(report.converged)),
            (
                "saddle_margin",
                margin.map(Node::Float).unwrap_or(Node::Null),
            ),
            ("lagrange_residuals", Node::List(residual_nodes)),
        ]),
    ));
    summary.push_str(&format!(
        "minimax value {:.12e} after {} iterations (converged: {})\n",
        report.value, report.iterations, report.converged
    ));
    if let Some(m) = margin {
        summary.push_str(&format!("saddle margin {m:.3e}\n"));
    }

    if cfg.output.characteristic_csv {
        write_characteristic_csv(dir, &built.grid.points(), &report.h0.values)?;
    }
    Ok(if report.converged { EXIT_OK } else { EXIT_MINIMAX })
}
