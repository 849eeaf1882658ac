//! Log-space densities, divergences and sampling helpers.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Tolerance on the total mass of a probability vector passed to [`jsd`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                got: var.len(),
            });
        }
        if var.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("variances must be positive".into()));
        }
        Ok(DiagGaussian { mean, var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub fn mvn_logpdf(x: &[f64], g: &DiagGaussian) -> Result<f64> {
    check_dim(g.dim(), x.len())?;
    let mut acc = 0.0;
    for ((&xi, &m), &v) in x.iter().zip(&g.mean).zip(&g.var) {
        let d = xi - m;
        acc += -0.5 * (LN_2PI + v.ln() + d * d / v);
    }
    Ok(acc)
}

/// A 2×2 covariance matrix, row-major.
pub type Cov2 = [[f64; 2]; 2];

struct Chol2 {
    inv: Cov2,
    ln_det: f64,
}

fn invert_cov2(cov: &Cov2) -> Result<Chol2> {
    let [[a, b], [c, d]] = *cov;
    let det = a * d - b * c;
    if !(a > 0.0 && d > 0.0 && det > 0.0 && det.is_finite()) || (b - c).abs() > 1e-9 * (a + d) {
        return Err(Error::DegenerateCovariance);
    }
    Ok(Chol2 {
        inv: [[d / det, -b / det], [-c / det, a / det]],
        ln_det: det.ln(),
    })
}

fn mahalanobis2(x: [f64; 2], mean: [f64; 2], inv: &Cov2) -> f64 {
    let dx = x[0] - mean[0];
    let dy = x[1] - mean[1];
    dx * (inv[0][0] * dx + inv[0][1] * dy) + dy * (inv[1][0] * dx + inv[1][1] * dy)
}

/// Bivariate normal log-density with a full covariance.
pub fn mvn2_logpdf(x: [f64; 2], mean: [f64; 2], cov: &Cov2) -> Result<f64> {
    let c = invert_cov2(cov)?;
    Ok(-LN_2PI - 0.5 * c.ln_det - 0.5 * mahalanobis2(x, mean, &c.inv))
}

/// Bivariate Student-t log-density with location `mean`, scale matrix `cov`
/// and `dof` degrees of freedom.
pub fn mvt2_logpdf(x: [f64; 2], mean: [f64; 2], cov: &Cov2, dof: f64) -> Result<f64> {
    if !(dof > 0.0) {
        return Err(Error::InvalidArgument(format!("dof must be positive, got {dof}")));
    }
    let c = invert_cov2(cov)?;
    let q = mahalanobis2(x, mean, &c.inv);
    Ok(ln_gamma((dof + 2.0) / 2.0) - ln_gamma(dof / 2.0) - (dof * PI).ln() - 0.5 * c.ln_det
        - (dof + 2.0) / 2.0 * (q / dof).ln_1p())
}

/// Product of independent location-scale Student-t densities, one per
/// dimension; `scale` holds per-dimension scales (not squared).
pub fn student_t_logpdf(x: &[f64], mean: &[f64], scale: &[f64], dof: f64) -> Result<f64> {
    check_dim(mean.len(), x.len())?;
    check_dim(mean.len(), scale.len())?;
    if !(dof > 0.0) {
        return Err(Error::InvalidArgument(format!("dof must be positive, got {dof}")));
    }
    if scale.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument("scales must be positive".into()));
    }
    let var: Vec<f64> = scale.iter().map(|s| s * s).collect();
    Ok(StudentT::new(mean.to_vec(), &var, dof).ln_pdf(x))
}

/// Diagonal Student-t with its normalizing constant precomputed.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentT {
    mean: Vec<f64>,
    inv_dof_var: Vec<f64>,
    half_dof_plus_one: f64,
    ln_norm: f64,
}

impl StudentT {
    /// `var` holds the squared per-dimension scales.
    pub fn new(mean: Vec<f64>, var: &[f64], dof: f64) -> Self {
        debug_assert_eq!(mean.len(), var.len());
        let d = mean.len() as f64;
        let per_dim = ln_gamma((dof + 1.0) / 2.0) - ln_gamma(dof / 2.0) - 0.5 * (dof * PI).ln();
        let ln_norm = d * per_dim - 0.5 * var.iter().map(|v| v.ln()).sum::<f64>();
        StudentT {
            mean,
            inv_dof_var: var.iter().map(|v| 1.0 / (dof * v)).collect(),
            half_dof_plus_one: 0.5 * (dof + 1.0),
            ln_norm,
        }
    }

    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &m), &s) in x.iter().zip(&self.mean).zip(&self.inv_dof_var) {
            let d = xi - m;
            acc += (d * d * s).ln_1p();
        }
        self.ln_norm - self.half_dof_plus_one * acc
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

fn check_simplex(p: &[f64]) -> bool {
    p.iter().all(|&v| (0.0..=1.0 + SIMPLEX_TOL).contains(&v))
        && (p.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
}

fn half_kl_to_mixture(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&pi, _)| pi > 0.0)
        .map(|(&pi, &mi)| pi * (pi / mi).ln())
        .sum::<f64>()
}

/// Jensen-Shannon divergence in nats; lies in `[0, ln 2]`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64> {
    check_dim(p.len(), q.len())?;
    if !check_simplex(p) || !check_simplex(q) {
        return Err(Error::NotNormalized(p.iter().sum(), q.iter().sum()));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    let v = 0.5 * half_kl_to_mixture(p, &m) + 0.5 * half_kl_to_mixture(q, &m);
    Ok(v.clamp(0.0, LN_2))
}

pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NoFiniteWeight);
    }
    if v.len() == 1 {
        return Ok(max);
    }
    Ok(max + v.iter().map(|&x| (x - max).exp()).sum::<f64>().ln())
}

/// Draws an index with probability proportional to `exp(log_weights[i])`.
pub fn categorical_sample<R: Rng + ?Sized>(log_weights: &[f64], rng: &mut R) -> Result<usize> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NoFiniteWeight);
    }
    let mut total = 0.0;
    let mut last = 0;
    let weights: Vec<f64> = log_weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let e = if w.is_nan() { 0.0 } else { (w - max).exp() };
            if e > 0.0 {
                last = i;
            }
            total += e;
            e
        })
        .collect();
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return Ok(i);
        }
        u -= w;
    }
    Ok(last)
}
