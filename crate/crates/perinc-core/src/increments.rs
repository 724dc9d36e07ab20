//! Temporal layer: increment operators on sampled paths, the generating
//! coefficients `d(k)` and their strided variant, and the transforms between
//! the weight function `a(t)` of the target functional and the pair
//! `(b(t), v(t))` that rewrites it against the increment process.

use crate::error::{Error, Result};
use crate::C64;

/// Parameters of the d-th increment with step `tau * period`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementSpec {
    /// Increment order, `d >= 1`.
    pub d: usize,
    /// Integer step multiplier; the continuous-time step is `tau * period`.
    pub tau: usize,
    /// Period of the correlation structure, in time units.
    pub period: f64,
}

impl IncrementSpec {
    pub fn new(d: usize, tau: usize, period: f64) -> Result<Self> {
        if d < 1 || tau < 1 || !(period > 0.0) {
            return Err(Error::Validation(format!(
                "increment spec requires d >= 1, tau >= 1, period > 0 (got d={d}, tau={tau}, period={period})"
            )));
        }
        Ok(Self { d, tau, period })
    }
}

/// Uniformly sampled complex function of time.
#[derive(Debug, Clone)]
pub struct SampledFunction {
    /// Time of the first sample.
    pub t0: f64,
    /// Sample spacing; must divide the period to relative tolerance 1e-9.
    pub dt: f64,
    pub values: Vec<C64>,
}

impl SampledFunction {
    pub fn new(t0: f64, dt: f64, values: Vec<C64>) -> Result<Self> {
        if values.is_empty() || !(dt > 0.0) {
            return Err(Error::Validation(
                "sampled function needs dt > 0 and at least one sample".into(),
            ));
        }
        Ok(Self { t0, dt, values })
    }

    /// Number of samples per period, validated to be an integer.
    pub fn samples_per_period(&self, period: f64) -> Result<usize> {
        let s = period / self.dt;
        let rounded = s.round();
        if (s - rounded).abs() > 1e-9 * s.max(1.0) || rounded < 1.0 {
            return Err(Error::Validation(format!(
                "dt = {} does not divide the period {} into an integer sample count",
                self.dt, period
            )));
        }
        Ok(rounded as usize)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at an absolute sample index offset from `t0`.
    pub fn value(&self, idx: usize) -> C64 {
        self.values[idx]
    }
}

fn checked_binomial(n: u128, k: u128) -> Result<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .ok_or_else(|| Error::Overflow(format!("binomial({n},{k}) exceeds u128")))?;
        acc /= i + 1;
    }
    Ok(acc)
}

/// Small binomial `C(d, l)` as f64 (d is the increment order, d <= ~60).
pub fn binomial_f64(d: usize, l: usize) -> f64 {
    checked_binomial(d as u128, l as u128).map(|v| v as f64).unwrap_or(f64::INFINITY)
}

/// Coefficients `d(k)` of the expansion `(sum_j x^j)^d = sum_k d(k) x^k`,
/// i.e. `d(k) = C(k + d - 1, d - 1)` in exact integer arithmetic.
pub fn composition_coeffs(d: usize, count: usize) -> Result<Vec<u128>> {
    if d < 1 || count < 1 {
        return Err(Error::Domain("composition_coeffs requires d >= 1, count >= 1".into()));
    }
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        out.push(checked_binomial((k + d - 1) as u128, (d - 1) as u128)?);
    }
    Ok(out)
}

/// Strided coefficients `d_tau(k)` of `(sum_j x^{tau j})^d`: equal to
/// `d(k / tau)` when `tau` divides `k` and zero otherwise.
pub fn strided_coeffs(d: usize, tau: usize, count: usize) -> Result<Vec<u128>> {
    if d < 1 || tau < 1 || count < 1 {
        return Err(Error::Domain("strided_coeffs requires d, tau, count >= 1".into()));
    }
    let base = composition_coeffs(d, count / tau + 1)?;
    Ok((0..count)
        .map(|k| if k % tau == 0 { base[k / tau] } else { 0 })
        .collect())
}

/// `d_tau(k)` converted to f64 for numeric accumulation.
pub fn strided_coeffs_f64(d: usize, tau: usize, count: usize) -> Result<Vec<f64>> {
    Ok(strided_coeffs(d, tau, count)?.into_iter().map(|v| v as f64).collect())
}

/// Apply the d-th backward difference with a step of `step_samples` samples:
/// `out(t) = sum_{l=0}^{d} (-1)^l C(d,l) path(t - l * step_samples * dt)`.
/// The output domain starts `d * step_samples` samples later.
pub fn increment_apply(path: &SampledFunction, d: usize, step_samples: usize) -> Result<SampledFunction> {
    let shift = d * step_samples;
    if path.len() <= shift {
        return Err(Error::Domain(format!(
            "path of length {} is too short for order {d} with step {step_samples}",
            path.len()
        )));
    }
    let n = path.len() - shift;
    let mut values = vec![C64::new(0.0, 0.0); n];
    for (i, v) in values.iter_mut().enumerate() {
        let mut acc = C64::new(0.0, 0.0);
        for l in 0..=d {
            let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
            acc += path.values[i + shift - l * step_samples] * sign * binomial_f64(d, l);
        }
        *v = acc;
    }
    SampledFunction::new(path.t0 + shift as f64 * path.dt, path.dt, values)
}

/// Horizon selector for the `a -> b` transform.
#[derive(Debug, Clone, Copy)]
pub enum Horizon {
    /// `a` decays; the sum over shifted copies runs over all available samples.
    Infinite,
    /// `a` vanishes past `(N + 1) * period`; the shift sum is truncated
    /// at `k <= floor(((N + 1) * period - t) / (tau * period))`.
    Finite(usize),
}

/// `b(t) = sum_k a(t + tau * period * k) d(k)` on the support of `a`.
///
/// For the infinite horizon the caller asserts that `a` decays; a tail check
/// over the last period guards against silently truncating a divergent sum.
pub fn b_from_a(a: &SampledFunction, spec: &IncrementSpec, horizon: Horizon) -> Result<SampledFunction> {
    if a.t0.abs() > 1e-12 * spec.period {
        return Err(Error::Domain("b_from_a expects a to start at t = 0".into()));
    }
    let s = a.samples_per_period(spec.period)?;
    let stride = spec.tau * s;
    let n = a.len();
    let coeffs = composition_coeffs(spec.d, n / stride + 2)?;
    if let Horizon::Infinite = horizon {
        let total: f64 = a.values.iter().map(|v| v.norm()).sum();
        let tail: f64 = a.values[n.saturating_sub(s)..].iter().map(|v| v.norm()).sum();
        let growth = coeffs[n / stride + 1] as f64;
        if tail * growth > 1e-8 * (1.0 + total) {
            return Err(Error::Convergence(format!(
                "weighted tail of a over the last period ({:.3e}) is not negligible; \
                 extend the sampled support or use a finite horizon",
                tail * growth
            )));
        }
    }
    let mut values = vec![C64::new(0.0, 0.0); n];
    for (i, v) in values.iter_mut().enumerate() {
        let kmax_support = (n - 1 - i) / stride;
        let kmax = match horizon {
            Horizon::Infinite => kmax_support,
            Horizon::Finite(nh) => {
                let t = i as f64 * a.dt;
                let bound = (((nh as f64 + 1.0) * spec.period - t) / (spec.tau as f64 * spec.period))
                    .floor();
                kmax_support.min(bound.max(-1.0) as usize)
            }
        };
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=kmax {
            acc += a.values[i + k * stride] * coeffs[k] as f64;
        }
        *v = acc;
    }
    SampledFunction::new(0.0, a.dt, values)
}

/// `v(t) = sum_{l = ceil(-t / (tau * period))}^{d} (-1)^l C(d,l) b(t + l * tau * period)`
/// on `[-tau * period * d, 0)`.
pub fn v_from_b(b: &SampledFunction, spec: &IncrementSpec) -> Result<SampledFunction> {
    let s = b.samples_per_period(spec.period)?;
    let stride = spec.tau * s;
    let n_out = spec.d * stride;
    if b.len() < n_out {
        return Err(Error::Domain(format!(
            "b must cover [0, tau * period * d) = {} samples, got {}",
            n_out,
            b.len()
        )));
    }
    let mut values = vec![C64::new(0.0, 0.0); n_out];
    for (sidx, v) in values.iter_mut().enumerate() {
        // t = -tau*period*d + sidx*dt, so ceil(-t / (tau*period)) = d - sidx / stride
        // (exact also when sidx is a multiple of stride).
        let lmin = spec.d - sidx / stride;
        let mut acc = C64::new(0.0, 0.0);
        for l in lmin..=spec.d {
            let bi = sidx + l * stride;
            let bi = bi - n_out; // index of t + l*tau*period in b (t0 = 0)
            if bi < b.len() {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                acc += b.values[bi] * sign * binomial_f64(spec.d, l);
            }
        }
        *v = acc;
    }
    SampledFunction::new(-(n_out as f64) * b.dt, b.dt, values)
}

/// Rectangle-rule quadrature of `w(t) * z(t)` over the support of `w`.
///
/// Uniform weights are used on the half-open sample windows so that the
/// finite re-summation identities between the `a`, `b`, `v` transforms hold
/// exactly at the sample level.
pub fn quad_product(w: &SampledFunction, z: &SampledFunction) -> Result<C64> {
    if (w.dt - z.dt).abs() > 1e-12 * w.dt {
        return Err(Error::Domain("quad_product requires matching sample spacing".into()));
    }
    let offset = (w.t0 - z.t0) / w.dt;
    let oi = offset.round();
    if (offset - oi).abs() > 1e-6 {
        return Err(Error::Domain("sample grids are not aligned".into()));
    }
    let oi = oi as i64;
    let mut acc = C64::new(0.0, 0.0);
    for (i, wv) in w.values.iter().enumerate() {
        let zi = oi + i as i64;
        if zi < 0 || zi as usize >= z.len() {
            return Err(Error::Domain("z does not cover the support of w".into()));
        }
        acc += wv * z.values[zi as usize];
    }
    Ok(acc * w.dt)
}
