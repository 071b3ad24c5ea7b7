//! Linear ensembles `X(Ψ) = Σ_ℓ ψ_ℓ Q_ℓ` over sparse Rademacher families.
//!
//! A family is a pure function of `(q_seed, ℓ)`: matrix `Q_ℓ` is drawn from the
//! stream `stream(q_seed, "q-family", ℓ)` by skipping over the packed upper
//! triangle with `Geometric(2p)` gaps, each hit getting an independent sign.
//! Nothing requires the family to be held in memory, although
//! [`LinearEnsemble`] keeps a compact copy when it is small enough.

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::budget::Budget;
use crate::ensembles::{Ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::matrix::{packed_index, packed_len, Entry, SymMatrix};
use crate::rng::RngStream;

/// Dimension up to which operator norms use a dense eigensolve.
pub const DENSE_NORM_MAX_N: usize = 512;
const POWER_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 20_000;
/// Cached family size limit, in stored nonzeros.
const CACHE_MAX_NNZ: f64 = 5e7;
/// Packed dimension up to which the full Gram matrix of the family is cached.
const GRAM_MAX_P: usize = 2_000;

/// Distribution of the independent coefficients `ψ_ℓ`, always mean 0 and variance 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsiDist {
    /// `±1` with probability 1/2 each.
    Rademacher,
    /// Uniform on `[-√3, √3]`.
    Uniform,
    /// Standard normal conditioned on `|x| <= cutoff`, rescaled to unit variance.
    TruncatedGaussian { cutoff: f64 },
    /// Standard normal; unbounded.
    Gaussian,
}

impl PsiDist {
    fn validate(&self) -> Result<()> {
        if let PsiDist::TruncatedGaussian { cutoff } = self {
            if !(cutoff.is_finite() && *cutoff > 0.0) {
                return Err(Error::invalid("psi_dist.cutoff", "must be finite and positive"));
            }
        }
        Ok(())
    }

    /// Variance of the standard normal truncated to `[-c, c]`.
    fn truncated_var(c: f64) -> f64 {
        let z = Normal::standard();
        1.0 - 2.0 * c * z.pdf(c) / (2.0 * z.cdf(c) - 1.0)
    }

    /// Almost-sure bound `K` on `|ψ_ℓ|`, or `None` when unbounded.
    pub fn bound(&self) -> Option<f64> {
        match *self {
            PsiDist::Rademacher => Some(1.0),
            PsiDist::Uniform => Some(3f64.sqrt()),
            PsiDist::TruncatedGaussian { cutoff } => Some(cutoff / Self::truncated_var(cutoff).sqrt()),
            PsiDist::Gaussian => None,
        }
    }

    /// Closed-form (mean, variance); both are `(0, 1)` by construction.
    pub fn moments(&self) -> (f64, f64) {
        match *self {
            PsiDist::Rademacher => (0.0, 1.0),
            PsiDist::Uniform => {
                let a = 3f64.sqrt();
                (0.0, (2.0 * a) * (2.0 * a) / 12.0)
            }
            PsiDist::TruncatedGaussian { .. } | PsiDist::Gaussian => (0.0, 1.0),
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            PsiDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            PsiDist::Uniform => {
                let a = 3f64.sqrt();
                rng.random_range(-a..a)
            }
            PsiDist::TruncatedGaussian { cutoff } => {
                let sd = Self::truncated_var(cutoff).sqrt();
                loop {
                    let x: f64 = rng.sample(StandardNormal);
                    if x.abs() <= cutoff {
                        return x / sd;
                    }
                }
            }
            PsiDist::Gaussian => rng.sample(StandardNormal),
        }
    }
}

/// Parameters of a sparse Rademacher linear ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearEnsembleSpec {
    pub n: usize,
    /// Number of base matrices.
    #[serde(rename = "N")]
    pub big_n: usize,
    /// Sparsity: each entry of `Q_ℓ` is nonzero with probability `2p`.
    pub p: f64,
    pub psi_dist: PsiDist,
    pub q_seed: u64,
    /// Declared correlation exponent, used only by conformance checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl LinearEnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if self.big_n == 0 {
            return Err(Error::invalid("N", "must be at least 1"));
        }
        check_p(self.p)?;
        self.psi_dist.validate()?;
        if let Some(e) = self.epsilon {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::invalid("epsilon", "must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    pub fn family(&self) -> QFamily {
        QFamily {
            n: self.n,
            big_n: self.big_n,
            p: self.p,
            q_seed: self.q_seed,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 0.5) {
        return Err(Error::invalid("p", format!("must lie in (0, 1/2], got {p}")));
    }
    Ok(())
}

/// A sparse symmetric matrix stored as its nonzero upper-triangle entries in packed order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    n: usize,
    entries: Vec<(Entry, f64)>,
}

impl SparseSym {
    /// Entries with `i <= j`; duplicates are summed.
    pub fn new(n: usize, mut entries: Vec<(Entry, f64)>) -> Self {
        for (e, _) in &mut entries {
            *e = Entry::new(e.i, e.j);
            assert!(e.j < n, "entry {e:?} out of range for n = {n}");
        }
        entries.sort_by_key(|(e, _)| packed_index(n, *e));
        let mut merged: Vec<(Entry, f64)> = Vec::with_capacity(entries.len());
        for (e, v) in entries {
            match merged.last_mut() {
                Some((last, acc)) if *last == e => *acc += v,
                _ => merged.push((e, v)),
            }
        }
        SparseSym { n, entries: merged }
    }

    pub fn from_dense(m: &SymMatrix) -> Self {
        let n = m.n();
        let entries = crate::matrix::upper_entries(n)
            .filter_map(|e| {
                let v = m.get(e.i, e.j);
                (v != 0.0).then_some((e, v))
            })
            .collect();
        SparseSym { n, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[(Entry, f64)] {
        &self.entries
    }

    pub fn get(&self, e: Entry) -> f64 {
        let key = packed_index(self.n, e);
        self.entries
            .binary_search_by_key(&key, |(x, _)| packed_index(self.n, *x))
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> SymMatrix {
        let mut m = SymMatrix::zeros(self.n);
        for &(e, v) in &self.entries {
            m.set(e.i, e.j, v);
        }
        m
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &(e, v) in &self.entries {
            out[e.i] += v * x[e.j];
            if e.i != e.j {
                out[e.j] += v * x[e.i];
            }
        }
    }

    /// Neighbour lists `(column, value)` of every row of the full symmetric matrix.
    fn rows(&self) -> Vec<Vec<(usize, f64)>> {
        let mut rows = vec![Vec::new(); self.n];
        for &(e, v) in &self.entries {
            rows[e.i].push((e.j, v));
            if e.i != e.j {
                rows[e.j].push((e.i, v));
            }
        }
        rows
    }
}

/// `‖Q‖_op`: dense eigensolve up to [`DENSE_NORM_MAX_N`], power iteration on `Q²` above.
pub fn op_norm(q: &SparseSym) -> Result<f64> {
    let n = q.n();
    if q.nnz() == 0 {
        return Ok(0.0);
    }
    if n <= DENSE_NORM_MAX_N {
        let ev = q
            .to_dense()
            .to_faer()
            .self_adjoint_eigenvalues(faer::Side::Lower)
            .map_err(|e| Error::Eigen(format!("{e:?}")))?;
        return Ok(ev.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i % 7) as f64).collect();
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut prev = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        q.matvec(&x, &mut y);
        q.matvec(&y, &mut z);
        // Rayleigh quotient of Q² at a unit vector
        let rq: f64 = x.iter().zip(&z).map(|(a, b)| a * b).sum();
        let est = rq.max(0.0).sqrt();
        if (est - prev).abs() <= POWER_TOL * est {
            return Ok(est);
        }
        prev = est;
        std::mem::swap(&mut x, &mut z);
    }
    Ok(prev)
}

/// An indexed sequence of symmetric matrices of a common dimension.
pub trait MatrixFamily: Sync {
    fn n(&self) -> usize;
    fn len(&self) -> usize;
    fn matrix(&self, l: usize) -> SparseSym;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The sparse Rademacher family, regenerated on demand.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QFamily {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    pub p: f64,
    pub q_seed: u64,
}

/// Packed positions and signs of `Q_ℓ`: `code = position << 1 | negative`.
fn q_codes(n: usize, p: f64, q_seed: u64, l: usize) -> Vec<u32> {
    let len = packed_len(n) as u64;
    let mut rng = RngStream::derive(q_seed, "q-family", l as u64);
    let geo = Geometric::new(2.0 * p).expect("2p in (0, 1]");
    let mut codes = Vec::with_capacity((len as f64 * 2.0 * p * 1.1) as usize + 4);
    let mut pos = 0u64;
    loop {
        pos += geo.sample(&mut rng);
        if pos >= len {
            break;
        }
        let neg = rng.random::<bool>() as u32;
        codes.push(((pos as u32) << 1) | neg);
        pos += 1;
    }
    codes
}

/// Inverse of the packed index, walking rows forward across sorted positions.
fn decode_entries(n: usize, codes: &[u32], scale: f64) -> Vec<(Entry, f64)> {
    let mut out = Vec::with_capacity(codes.len());
    let (mut i, mut row_start) = (0usize, 0usize);
    for &c in codes {
        let pos = (c >> 1) as usize;
        while pos >= row_start + (n - i) {
            row_start += n - i;
            i += 1;
        }
        let v = if c & 1 == 1 { -scale } else { scale };
        out.push((Entry { i, j: i + pos - row_start }, v));
    }
    out
}

impl QFamily {
    pub fn new(n: usize, big_n: usize, p: f64, q_seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if big_n == 0 {
            return Err(Error::invalid("N", "must be at least 1"));
        }
        check_p(p)?;
        if packed_len(n) >= 1 << 31 {
            return Err(Error::TooLarge {
                operation: "q family",
                n,
                limit: 65_535,
            });
        }
        Ok(QFamily { n, big_n, p, q_seed })
    }

    /// Nonzero magnitude `(2Np)^{-1/2}`.
    pub fn scale(&self) -> f64 {
        1.0 / (2.0 * self.big_n as f64 * self.p).sqrt()
    }

    fn codes(&self, l: usize) -> Vec<u32> {
        q_codes(self.n, self.p, self.q_seed, l)
    }

    fn expected_nnz(&self) -> f64 {
        self.big_n as f64 * 2.0 * self.p * packed_len(self.n) as f64
    }
}

impl MatrixFamily for QFamily {
    fn n(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.big_n
    }

    fn matrix(&self, l: usize) -> SparseSym {
        assert!(l < self.big_n, "index {l} out of range for N = {}", self.big_n);
        SparseSym {
            n: self.n,
            entries: decode_entries(self.n, &self.codes(l), self.scale()),
        }
    }
}

/// A family given explicitly, for synthetic checks.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplicitFamily {
    n: usize,
    mats: Vec<SparseSym>,
}

impl ExplicitFamily {
    pub fn new(mats: Vec<SparseSym>) -> Result<Self> {
        let n = mats.first().map(|m| m.n()).ok_or_else(|| Error::invalid("N", "must be at least 1"))?;
        if mats.iter().any(|m| m.n() != n) {
            return Err(Error::InvalidInput("family matrices differ in dimension".into()));
        }
        Ok(ExplicitFamily { n, mats })
    }
}

impl MatrixFamily for ExplicitFamily {
    fn n(&self) -> usize {
        self.n
    }

    fn len(&self) -> usize {
        self.mats.len()
    }

    fn matrix(&self, l: usize) -> SparseSym {
        self.mats[l].clone()
    }
}

/// `Σ_ℓ ψ_ℓ Q_ℓ` for given coefficients, accumulated one matrix at a time in index order.
pub fn sample_linear_with_psi(family: &dyn MatrixFamily, psi: &[f64]) -> Result<SymMatrix> {
    if psi.len() != family.len() {
        return Err(Error::InvalidInput(format!(
            "{} coefficients for a family of {} matrices",
            psi.len(),
            family.len()
        )));
    }
    let n = family.n();
    let mut packed = vec![0.0; packed_len(n)];
    for (l, &c) in psi.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        for &(e, v) in family.matrix(l).entries() {
            packed[packed_index(n, e)] += c * v;
        }
    }
    Ok(unpack(n, &packed))
}

fn unpack(n: usize, packed: &[f64]) -> SymMatrix {
    let mut k = 0;
    SymMatrix::from_upper_fn(n, |_, _| {
        let v = packed[k];
        k += 1;
        v
    })
}

/// One draw with `ψ_ℓ` taken from `rng` in index order.
pub fn sample_linear(family: &dyn MatrixFamily, psi_dist: PsiDist, rng: &mut RngStream) -> SymMatrix {
    let psi: Vec<f64> = (0..family.len()).map(|_| psi_dist.sample(rng)).collect();
    sample_linear_with_psi(family, &psi).expect("coefficient count matches family")
}

/// Condition report for a family, with the thresholds it was compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QConditionReport {
    pub n: usize,
    #[serde(rename = "N")]
    pub big_n: usize,
    /// `sup_{i<=j} |Σ_ℓ (Q_ℓ)²_ij - 1|`.
    pub max_norm_dev: f64,
    /// `sup` over distinct entries of `|Σ_ℓ (Q_ℓ)_ij (Q_ℓ)_i'j'|`.
    pub max_inner_prod: f64,
    pub max_op_norm: f64,
    /// `c / (ln n)²`.
    pub norm_dev_threshold: f64,
    /// `C n^{-(1+ε)}`.
    pub inner_prod_threshold: f64,
    /// `√n / (ln n)²`, the scale the operator norms must be small against.
    pub op_norm_scale: f64,
    pub norm_ok: bool,
    pub inner_ok: bool,
}

/// Constants the condition report compares against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QThresholds {
    pub epsilon: f64,
    pub norm_dev_const: f64,
    pub inner_prod_const: f64,
}

/// Gram matrix `G(a, b) = Σ_ℓ Q_ℓ(a) Q_ℓ(b)` over packed entries, row-major.
fn gram(family: &dyn MatrixFamily) -> Vec<f64> {
    let n = family.n();
    let p = packed_len(n);
    let mut g = vec![0.0; p * p];
    for l in 0..family.len() {
        let q = family.matrix(l);
        let idx: Vec<(usize, f64)> = q.entries().iter().map(|&(e, v)| (packed_index(n, e), v)).collect();
        for &(a, va) in &idx {
            let row = &mut g[a * p..(a + 1) * p];
            for &(b, vb) in &idx {
                row[b] += va * vb;
            }
        }
    }
    g
}

fn gram_cost(family: &dyn MatrixFamily, mean_nnz: f64) -> f64 {
    let p = packed_len(family.n()) as f64;
    family.len() as f64 * mean_nnz * mean_nnz + p * p
}

fn mean_nnz(family: &dyn MatrixFamily) -> f64 {
    // a few matrices give the scale without a full pass
    let probe = family.len().min(8);
    (0..probe).map(|l| family.matrix(l).nnz() as f64).sum::<f64>() / probe as f64
}

/// Checks the squared-norm, inner-product, and operator-norm conditions on a family.
pub fn check_q_conditions(
    family: &dyn MatrixFamily,
    thresholds: QThresholds,
    budget: &Budget,
) -> Result<QConditionReport> {
    let n = family.n();
    let p = packed_len(n);
    budget.check("check_q_conditions", gram_cost(family, mean_nnz(family)))?;
    let g = gram(family);
    let mut max_norm_dev = 0.0f64;
    let mut max_inner = 0.0f64;
    for a in 0..p {
        max_norm_dev = max_norm_dev.max((g[a * p + a] - 1.0).abs());
        for b in a + 1..p {
            max_inner = max_inner.max(g[a * p + b].abs());
        }
    }
    let mut max_op_norm = 0.0f64;
    for l in 0..family.len() {
        max_op_norm = max_op_norm.max(op_norm(&family.matrix(l))?);
    }
    let ln_n = (n as f64).ln();
    let (norm_dev_threshold, op_norm_scale) = if n > 1 {
        (thresholds.norm_dev_const / (ln_n * ln_n), (n as f64).sqrt() / (ln_n * ln_n))
    } else {
        (f64::INFINITY, f64::INFINITY)
    };
    let inner_prod_threshold = thresholds.inner_prod_const * (n as f64).powf(-(1.0 + thresholds.epsilon));
    Ok(QConditionReport {
        n,
        big_n: family.len(),
        max_norm_dev,
        max_inner_prod: max_inner,
        max_op_norm,
        norm_dev_threshold,
        inner_prod_threshold,
        op_norm_scale,
        norm_ok: max_norm_dev <= norm_dev_threshold,
        inner_ok: max_inner <= inner_prod_threshold,
    })
}

/// Universality parameters of `Z = n^{-1/2} X(Ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BvhParams {
    /// `‖E[Z²]‖_op^{1/2}`.
    pub sigma: f64,
    /// `min(sigma_star_rowsum, sigma)`, an upper bound on the weak variance.
    pub sigma_star_upper: f64,
    /// Square root of the maximum absolute row sum of `Cov(Z)` over ordered entries;
    /// absent when the row sums exceed the budget.
    pub sigma_star_rowsum: Option<f64>,
    /// `n^{-1/2} K max_ℓ ‖Q_ℓ‖_op`.
    pub r_bound: f64,
    pub psi_bound: f64,
    pub varpi: Varpi,
}

/// `ϖ(t) = a t^{1/2} + b t^{2/3} + c t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Varpi {
    pub coef_sqrt: f64,
    pub coef_two_thirds: f64,
    pub coef_linear: f64,
}

impl Varpi {
    pub fn eval(&self, t: f64) -> f64 {
        self.coef_sqrt * t.sqrt() + self.coef_two_thirds * t.powf(2.0 / 3.0) + self.coef_linear * t
    }
}

/// Computes σ, the σ* row-sum bound, and R for a family with coefficients from `psi_dist`.
pub fn compute_bvh_params_family(
    family: &dyn MatrixFamily,
    psi_dist: PsiDist,
    budget: &Budget,
) -> Result<BvhParams> {
    let k = psi_dist.bound().ok_or_else(|| {
        Error::invalid("psi_dist", "unbounded coefficients have no uniform bound K; choose a bounded distribution")
    })?;
    let n = family.n();
    let nf = n as f64;

    let mut e_x2 = vec![0.0; n * n];
    let mut max_op = 0.0f64;
    let mut sq_cost = 0.0;
    for l in 0..family.len() {
        let q = family.matrix(l);
        max_op = max_op.max(op_norm(&q)?);
        for row in q.rows() {
            sq_cost += (row.len() * row.len()) as f64;
            for &(a, va) in &row {
                for &(b, vb) in &row {
                    e_x2[a * n + b] += va * vb;
                }
            }
        }
        if l == 0 {
            budget.check("compute_bvh_params", sq_cost * family.len() as f64)?;
        }
    }
    let m = SymMatrix::from_row_major(n, &e_x2).scaled(1.0 / nf);
    let top = m
        .to_faer()
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?
        .last()
        .copied()
        .unwrap_or(0.0);
    let sigma = top.max(0.0).sqrt();

    let rowsum = if budget.check("sigma_star rowsum", gram_cost(family, mean_nnz(family))).is_ok()
        && packed_len(n) <= 20_000
    {
        let p = packed_len(n);
        let g = gram(family);
        let weight: Vec<f64> = crate::matrix::upper_entries(n)
            .map(|e| if e.is_diagonal() { 1.0 } else { 2.0 })
            .collect();
        let max_row = (0..p)
            .map(|a| (0..p).map(|b| weight[b] * g[a * p + b].abs()).sum::<f64>())
            .fold(0.0f64, f64::max);
        Some((max_row / nf).sqrt())
    } else {
        None
    };
    let sigma_star_upper = rowsum.map_or(sigma, |r| r.min(sigma));
    let r_bound = k * max_op / nf.sqrt();
    Ok(BvhParams {
        sigma,
        sigma_star_upper,
        sigma_star_rowsum: rowsum,
        r_bound,
        psi_bound: k,
        varpi: Varpi {
            coef_sqrt: sigma_star_upper,
            coef_two_thirds: r_bound.cbrt() * sigma.powf(2.0 / 3.0),
            coef_linear: r_bound,
        },
    })
}

pub fn compute_bvh_params(spec: &LinearEnsembleSpec, budget: &Budget) -> Result<BvhParams> {
    spec.validate()?;
    compute_bvh_params_family(&spec.family(), spec.psi_dist, budget)
}

/// Compact copy of a sparse Rademacher family: codes of all matrices, concatenated.
#[derive(Debug)]
struct CompactFamily {
    offsets: Vec<usize>,
    codes: Vec<u32>,
}

/// The linear ensemble as an [`Ensemble`].
#[derive(Debug)]
pub struct LinearEnsemble {
    spec: LinearEnsembleSpec,
    family: QFamily,
    cache: Option<CompactFamily>,
    gram: OnceLock<Vec<f64>>,
}

impl LinearEnsemble {
    pub fn new(spec: LinearEnsembleSpec) -> Result<Self> {
        spec.validate()?;
        let family = QFamily::new(spec.n, spec.big_n, spec.p, spec.q_seed)?;
        Ok(LinearEnsemble {
            spec,
            family,
            cache: None,
            gram: OnceLock::new(),
        }
        .with_cache())
    }

    fn with_cache(mut self) -> Self {
        if self.family.expected_nnz() <= CACHE_MAX_NNZ {
            let mut offsets = Vec::with_capacity(self.family.big_n + 1);
            let mut codes = Vec::new();
            offsets.push(0);
            for l in 0..self.family.big_n {
                codes.extend(self.family.codes(l));
                offsets.push(codes.len());
            }
            self.cache = Some(CompactFamily { offsets, codes });
        }
        self
    }

    pub fn family(&self) -> &QFamily {
        &self.family
    }

    pub fn linear_spec(&self) -> &LinearEnsembleSpec {
        &self.spec
    }

    fn for_each_code(&self, mut f: impl FnMut(usize, &[u32])) {
        match &self.cache {
            Some(c) => {
                for l in 0..self.family.big_n {
                    f(l, &c.codes[c.offsets[l]..c.offsets[l + 1]]);
                }
            }
            None => {
                for l in 0..self.family.big_n {
                    f(l, &self.family.codes(l));
                }
            }
        }
    }
}

fn code_value(codes: &[u32], pos: usize, scale: f64) -> f64 {
    match codes.binary_search_by_key(&pos, |c| (c >> 1) as usize) {
        Ok(k) if codes[k] & 1 == 1 => -scale,
        Ok(_) => scale,
        Err(_) => 0.0,
    }
}

impl Ensemble for LinearEnsemble {
    fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::LinearEnsemble(self.spec.clone())
    }

    fn n(&self) -> usize {
        self.spec.n
    }

    fn sample(&self, rng: &mut RngStream) -> SymMatrix {
        let n = self.spec.n;
        let scale = self.family.scale();
        let psi: Vec<f64> = (0..self.family.big_n).map(|_| self.spec.psi_dist.sample(rng)).collect();
        let mut packed = vec![0.0; packed_len(n)];
        self.for_each_code(|l, codes| {
            let c = psi[l] * scale;
            for &code in codes {
                let v = if code & 1 == 1 { -c } else { c };
                packed[(code >> 1) as usize] += v;
            }
        });
        unpack(n, &packed)
    }

    fn entry_cov(&self, a: Entry, b: Entry) -> f64 {
        let n = self.spec.n;
        let p = packed_len(n);
        let (pa, pb) = (packed_index(n, a), packed_index(n, b));
        if p <= GRAM_MAX_P {
            let g = self.gram.get_or_init(|| gram(&self.family));
            return g[pa * p + pb];
        }
        let scale = self.family.scale();
        let mut acc = 0.0;
        self.for_each_code(|_, codes| {
            let va = code_value(codes, pa, scale);
            if va != 0.0 {
                acc += va * code_value(codes, pb, scale);
            }
        });
        acc
    }

    fn is_gaussian(&self) -> bool {
        self.spec.psi_dist == PsiDist::Gaussian
    }

    fn is_exchangeable(&self) -> bool {
        false
    }
}
