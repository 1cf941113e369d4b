use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower end of the λ search grid.
pub const LAMBDA_MIN: f64 = -2.0;
/// Upper end of the λ search grid.
pub const LAMBDA_MAX: f64 = 2.0;
/// Grid spacing in hundredths; λ candidates are `k / 100`.
const GRID_STEPS_PER_UNIT: i32 = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxCoxError {
    #[error("box-cox input {value} + shift {shift} is not positive")]
    Domain { value: f64, shift: f64 },
    #[error("cannot fit box-cox on an empty sample")]
    EmptySample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCoxParam {
    pub lambda: f64,
    /// Added to inputs before transforming so every value is positive.
    pub shift: f64,
}

impl BoxCoxParam {
    pub fn new(lambda: f64, shift: f64) -> Self {
        BoxCoxParam { lambda, shift }
    }

    pub fn transform(&self, x: f64) -> Result<f64, BoxCoxError> {
        boxcox(x, self)
    }

    pub fn inverse(&self, y: f64) -> f64 {
        inverse_boxcox(y, self)
    }
}

/// `((x+shift)^λ − 1)/λ`, or `ln(x+shift)` at λ = 0.
pub fn boxcox(x: f64, p: &BoxCoxParam) -> Result<f64, BoxCoxError> {
    let v = x + p.shift;
    if !(v > 0.0) {
        return Err(BoxCoxError::Domain { value: x, shift: p.shift });
    }
    Ok(transform_positive(v, p.lambda))
}

fn transform_positive(v: f64, lambda: f64) -> f64 {
    let ln = v.ln();
    if lambda == 0.0 {
        ln
    } else {
        (lambda * ln).exp_m1() / lambda
    }
}

/// Inverse of [`boxcox`]. Values below the transform's range are pinned to
/// its lower boundary.
pub fn inverse_boxcox(y: f64, p: &BoxCoxParam) -> f64 {
    let v = if p.lambda == 0.0 {
        y.exp()
    } else {
        let base = (p.lambda * y).max(-1.0 + f64::EPSILON);
        (base.ln_1p() / p.lambda).exp()
    };
    v - p.shift
}

/// Shift that makes every sample value at least 1 when the minimum is not positive.
pub fn shift_for(sample: &[f64]) -> f64 {
    let min = sample.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        1.0 - min
    } else {
        0.0
    }
}

/// Gaussian profile log-likelihood of the transformed sample, up to a constant.
pub fn log_likelihood(sample: &[f64], lambda: f64, shift: f64) -> f64 {
    let n = sample.len() as f64;
    let mut sum = 0.0;
    let mut sum_log = 0.0;
    let transformed: Vec<f64> = sample
        .iter()
        .map(|&x| {
            let v = x + shift;
            sum_log += v.ln();
            let t = transform_positive(v, lambda);
            sum += t;
            t
        })
        .collect();
    let mean = sum / n;
    let var = transformed.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    if var <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -0.5 * n * var.ln() + (lambda - 1.0) * sum_log
}

/// Maximum-likelihood λ over the grid `[-2, 2]` in steps of 0.01.
pub fn fit_boxcox(sample: &[f64]) -> Result<BoxCoxParam, BoxCoxError> {
    if sample.is_empty() {
        return Err(BoxCoxError::EmptySample);
    }
    let shift = shift_for(sample);
    let lo = (LAMBDA_MIN * GRID_STEPS_PER_UNIT as f64) as i32;
    let hi = (LAMBDA_MAX * GRID_STEPS_PER_UNIT as f64) as i32;
    let mut best = (f64::NEG_INFINITY, 1.0);
    for k in lo..=hi {
        let lambda = k as f64 / GRID_STEPS_PER_UNIT as f64;
        let ll = log_likelihood(sample, lambda, shift);
        if ll > best.0 {
            best = (ll, lambda);
        }
    }
    Ok(BoxCoxParam { lambda: best.1, shift })
}
