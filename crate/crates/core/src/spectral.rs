//! Spectra of symmetric matrices and comparison with the semicircle law.

use std::f64::consts::PI;

use faer::{Mat, Side};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::SymMatrix;
use crate::stats::ks_statistic;

/// Largest dimension for dense eigensolves; above it only [`largest_eigenvalue`] works.
pub const DENSE_MAX_N: usize = 4096;

const LANCZOS_TOL: f64 = 1e-11;

/// Eigenvalues sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub n: usize,
    pub eigenvalues: Vec<f64>,
}

impl Spectrum {
    pub fn largest(&self) -> f64 {
        self.eigenvalues[0]
    }
}

fn check_input(m: &SymMatrix, operation: &'static str, limit: usize) -> Result<()> {
    if !m.is_finite() {
        return Err(Error::NonFinite);
    }
    if m.n() > limit {
        return Err(Error::TooLarge {
            operation,
            n: m.n(),
            limit,
        });
    }
    Ok(())
}

fn dense_eigenvalues(m: &SymMatrix) -> Result<Vec<f64>> {
    m.to_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))
}

/// Full spectrum of `m`, or of `n^{-1/2} m` when `normalize`.
pub fn eigen_sym(m: &SymMatrix, normalize: bool) -> Result<Spectrum> {
    check_input(m, "eigen_sym", DENSE_MAX_N)?;
    let n = m.n();
    let s = if normalize { 1.0 / (n as f64).sqrt() } else { 1.0 };
    let mut ev = dense_eigenvalues(m)?;
    ev.reverse();
    ev.iter_mut().for_each(|x| *x *= s);
    Ok(Spectrum { n, eigenvalues: ev })
}

/// Top eigenvalue; dense up to [`DENSE_MAX_N`], Lanczos above.
pub fn largest_eigenvalue(m: &SymMatrix, normalize: bool) -> Result<f64> {
    check_input(m, "largest_eigenvalue", usize::MAX)?;
    let n = m.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let s = if normalize { 1.0 / (n as f64).sqrt() } else { 1.0 };
    let top = if n <= DENSE_MAX_N {
        *dense_eigenvalues(m)?.last().expect("nonempty")
    } else {
        lanczos_largest(m)?
    };
    Ok(top * s)
}

/// The two largest eigenvalues (equal when `n = 1`).
pub fn top_two_eigenvalues(m: &SymMatrix) -> Result<(f64, f64)> {
    check_input(m, "top_two_eigenvalues", DENSE_MAX_N)?;
    let ev = dense_eigenvalues(m)?;
    let k = ev.len();
    Ok((ev[k - 1], ev[k.saturating_sub(2)]))
}

/// Top eigenpair plus the second eigenvalue. The vector has unit norm.
pub fn top_eigenpair(m: &SymMatrix) -> Result<(f64, f64, Vec<f64>)> {
    check_input(m, "top_eigenpair", DENSE_MAX_N)?;
    let n = m.n();
    let eig = m
        .to_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let top = s[n - 1];
    let second = s[n.saturating_sub(2)];
    let v = (0..n).map(|i| u[(i, n - 1)]).collect();
    Ok((top, second, v))
}

/// Largest eigenvalue by Lanczos with full reorthogonalization.
pub fn lanczos_largest(m: &SymMatrix) -> Result<f64> {
    let n = m.n();
    let max_steps = n.min(600);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.5 * ((i * 7919) % 13) as f64 / 13.0).collect();
    let nq = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    q.iter_mut().for_each(|x| *x /= nq);
    let mut last = f64::NAN;
    for step in 0..max_steps {
        let mut w = m.matvec(&q);
        let a: f64 = w.iter().zip(&q).map(|(x, y)| x * y).sum();
        alpha.push(a);
        basis.push(q.clone());
        for b in &basis {
            let c: f64 = w.iter().zip(b).map(|(x, y)| x * y).sum();
            w.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
        }
        let bnorm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        let k = alpha.len();
        if step % 10 == 9 || bnorm < 1e-14 || k == max_steps {
            let t = Mat::from_fn(k, k, |i, j| {
                if i == j {
                    alpha[i]
                } else if i + 1 == j {
                    beta[i]
                } else if j + 1 == i {
                    beta[j]
                } else {
                    0.0
                }
            });
            let eig = t.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
            let theta = eig.S().column_vector()[k - 1];
            let resid = (bnorm * eig.U()[(k - 1, k - 1)]).abs();
            if resid <= LANCZOS_TOL * theta.abs().max(1.0) || bnorm < 1e-14 {
                return Ok(theta);
            }
            last = theta;
        }
        beta.push(bnorm);
        q = w.into_iter().map(|x| x / bnorm).collect();
    }
    if last.is_nan() {
        return Err(Error::Eigen("Lanczos did not converge".into()));
    }
    Ok(last)
}

/// Semicircle density `(2π)^{-1} √(4 - x²)` on `[-2, 2]`.
pub fn semicircle_density(x: f64) -> f64 {
    if x.abs() >= 2.0 {
        0.0
    } else {
        (4.0 - x * x).sqrt() / (2.0 * PI)
    }
}

/// Semicircle distribution function.
pub fn semicircle_cdf(x: f64) -> f64 {
    if x <= -2.0 {
        0.0
    } else if x >= 2.0 {
        1.0
    } else {
        (0.5 + x * (4.0 - x * x).sqrt() / (4.0 * PI) + (x / 2.0).asin() / PI).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec {
            bins: 50,
            lo: -2.5,
            hi: 2.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

/// Equal-width bins on `[lo, hi)` (the last bin is closed) plus overflow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bins: Vec<Bin>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.underflow + self.overflow + self.bins.iter().map(|b| b.count).sum::<u64>()
    }
}

pub fn histogram(values: &[f64], spec: HistogramSpec) -> Result<Histogram> {
    if spec.bins == 0 || !(spec.hi > spec.lo) {
        return Err(Error::invalid("histogram", "need bins >= 1 and hi > lo"));
    }
    let width = (spec.hi - spec.lo) / spec.bins as f64;
    let edge = |k: usize| if k == spec.bins { spec.hi } else { spec.lo + k as f64 * width };
    let mut bins: Vec<Bin> = (0..spec.bins)
        .map(|k| Bin {
            bin_left: edge(k),
            bin_right: edge(k + 1),
            count: 0,
        })
        .collect();
    let (mut underflow, mut overflow) = (0, 0);
    for &x in values {
        if x < spec.lo {
            underflow += 1;
        } else if x > spec.hi {
            overflow += 1;
        } else {
            let k = (((x - spec.lo) / width) as usize).min(spec.bins - 1);
            bins[k].count += 1;
        }
    }
    Ok(Histogram {
        bins,
        underflow,
        overflow,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsdReport {
    pub n: usize,
    pub ks_distance: f64,
    pub histogram: Histogram,
}

/// KS distance of the empirical spectral distribution to the semicircle law, and a histogram.
pub fn esd_compare(spectrum: &Spectrum, bins: HistogramSpec) -> Result<EsdReport> {
    Ok(EsdReport {
        n: spectrum.n,
        ks_distance: ks_statistic(&spectrum.eigenvalues, semicircle_cdf),
        histogram: histogram(&spectrum.eigenvalues, bins)?,
    })
}

/// Fraction of samples in the closed interval `[lo, hi]`.
pub fn edge_concentration(samples: &[f64], interval: (f64, f64)) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("edge_concentration needs at least one sample".into()));
    }
    let inside = samples.iter().filter(|&&x| x >= interval.0 && x <= interval.1).count();
    Ok(inside as f64 / samples.len() as f64)
}
