//! The spiked model `Y = X + (λ/√n) 11ᵀ` and the fluctuations of its top eigenvalue.
//!
//! Notation: `μ = λ/√n`, `L = nμ = λ√n`, `S = Y1`, `Z_i = S_i - L = Σ_j X_ij`,
//! and `1 = v + r` with `v` the projection of `1` on the top eigenvector of `Y`.

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::ensembles::{Ensemble, EnsembleSpec};
use crate::error::{Error, Result};
use crate::matrix::{packed_len, upper_entries, Entry, SymMatrix};
use crate::patterns::{exchangeable_sum, naive_sum, pattern_count};
use crate::pool::{map_replicates, Workers};
use crate::rng::RngStream;
use crate::spectral::{top_eigenpair, top_two_eigenvalues};
use crate::stats::{ks_test_normal, mean_var, quantile, KsResult};
use crate::wick::{resolve_method, wick_expectation, MomentMethod};

/// Relative gap `(λ₁ - λ₂)/|λ₁|` below which the top eigenvalue counts as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Degenerate draws tolerated in a row before a replicate gives up.
const MAX_RESAMPLES: u32 = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikedSpec {
    pub base: EnsembleSpec,
    pub lambda: f64,
    /// Optional constant `D` of the standing assumption `λ <= D√n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_const: Option<f64>,
}

impl SpikedSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::invalid("lambda", "must be finite and nonnegative"));
        }
        if let Some(d) = self.d_const {
            if !(d > 0.0) {
                return Err(Error::invalid("d_const", "must be positive"));
            }
            let cap = d * (self.base.n() as f64).sqrt();
            if self.lambda > cap {
                return Err(Error::invalid("lambda", format!("{} exceeds D√n = {cap}", self.lambda)));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.base.n()
    }

    /// `μ = λ/√n`.
    pub fn mu(&self) -> f64 {
        self.lambda / (self.n() as f64).sqrt()
    }
}

/// `X + (λ/√n) 11ᵀ` in place.
pub fn add_spike(x: &mut SymMatrix, lambda: f64) {
    let n = x.n() as f64;
    x.add_constant(lambda / n.sqrt());
}

pub fn sample_spiked(model: &dyn Ensemble, lambda: f64, rng: &mut RngStream) -> SymMatrix {
    let mut x = model.sample(rng);
    add_spike(&mut x, lambda);
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relative_gap(l1: f64, l2: f64) -> f64 {
    (l1 - l2) / l1.abs().max(f64::MIN_POSITIVE)
}

/// Quantities of the von Mises identity for one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VonMisesDecomposition {
    pub n: usize,
    /// Top eigenvalue of `Y` (not normalized).
    pub lambda1: f64,
    pub lambda2: f64,
    pub s: Vec<f64>,
    pub v: Vec<f64>,
    pub r: Vec<f64>,
    pub s_dot_one: f64,
    pub s_norm_sq: f64,
    pub r_y_r: f64,
    pub yr_norm_sq: f64,
    pub r_norm_sq: f64,
    pub v_norm_sq: f64,
    pub v_dot_r: f64,
    /// `SᵀS/Sᵀ1 + (λ₁ rᵀYr - ‖Yr‖²)/Sᵀ1`.
    pub identity_rhs: f64,
    pub identity_residual: f64,
    /// `‖S - L1‖²`.
    pub pythagoras_lhs: f64,
    /// `(λ₁ - L)² ‖v‖² + ‖Yr - Lr‖²`.
    pub pythagoras_rhs: f64,
    pub pythagoras_residual: f64,
}

/// Splits `1 = v + r` along the top eigenvector of `y` and evaluates both identities.
///
/// `lambda` only enters through `L = λ√n` in the Pythagoras check.
pub fn von_mises_decompose(y: &SymMatrix, lambda: f64) -> Result<VonMisesDecomposition> {
    let n = y.n();
    if n == 0 {
        return Err(Error::InvalidInput("empty matrix".into()));
    }
    let (lambda1, lambda2, mut u) = top_eigenpair(y)?;
    if n > 1 {
        let gap = relative_gap(lambda1, lambda2);
        if !(gap >= DEGENERACY_TOL) {
            return Err(Error::DegenerateTop {
                gap,
                tol: DEGENERACY_TOL,
            });
        }
    }
    let mut proj: f64 = u.iter().sum();
    if proj < 0.0 {
        u.iter_mut().for_each(|x| *x = -*x);
        proj = -proj;
    }
    let v: Vec<f64> = u.iter().map(|x| proj * x).collect();
    let r: Vec<f64> = v.iter().map(|x| 1.0 - x).collect();
    let s = y.row_sums();
    let yr = y.matvec(&r);

    let s_dot_one: f64 = s.iter().sum();
    if s_dot_one == 0.0 {
        return Err(Error::InvalidInput("Sᵀ1 = 0: the identity is undefined".into()));
    }
    let s_norm_sq = dot(&s, &s);
    let r_y_r = dot(&r, &yr);
    let yr_norm_sq = dot(&yr, &yr);
    let identity_rhs = s_norm_sq / s_dot_one + (lambda1 * r_y_r - yr_norm_sq) / s_dot_one;

    let big_l = lambda * (n as f64).sqrt();
    let pythagoras_lhs: f64 = s.iter().map(|x| (x - big_l) * (x - big_l)).sum();
    let v_norm_sq = dot(&v, &v);
    let shifted: f64 = yr.iter().zip(&r).map(|(a, b)| (a - big_l * b) * (a - big_l * b)).sum();
    let pythagoras_rhs = (lambda1 - big_l) * (lambda1 - big_l) * v_norm_sq + shifted;

    Ok(VonMisesDecomposition {
        n,
        lambda1,
        lambda2,
        v_dot_r: dot(&v, &r),
        r_norm_sq: dot(&r, &r),
        v_norm_sq,
        s,
        v,
        r,
        s_dot_one,
        s_norm_sq,
        r_y_r,
        yr_norm_sq,
        identity_rhs,
        identity_residual: (lambda1 - identity_rhs).abs(),
        pythagoras_lhs,
        pythagoras_rhs,
        pythagoras_residual: (pythagoras_lhs - pythagoras_rhs).abs(),
    })
}

/// `(‖r‖² λ²/n, ‖Yr‖² λ²/n²)`, both bounded in probability when `λ > 4`.
pub fn remainder_stats(d: &VonMisesDecomposition, lambda: f64) -> (f64, f64) {
    let n = d.n as f64;
    let l2 = lambda * lambda;
    (d.r_norm_sq * l2 / n, d.yr_norm_sq * l2 / (n * n))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeylCheck {
    /// `λ₁(n^{-1/2} Y)`.
    pub spiked: f64,
    /// `λ + λ₁(n^{-1/2} X)`.
    pub bound: f64,
    pub holds: bool,
}

/// Weyl's inequality for the rank-one shift, up to eigensolver rounding.
pub fn weyl_check(x: &SymMatrix, lambda: f64) -> Result<WeylCheck> {
    let n = x.n() as f64;
    let (top_x, _) = top_two_eigenvalues(x)?;
    let mut y = x.clone();
    add_spike(&mut y, lambda);
    let (top_y, _) = top_two_eigenvalues(&y)?;
    let spiked = top_y / n.sqrt();
    let bound = lambda + top_x / n.sqrt();
    // backward-stable eigensolvers are accurate to a few ulps of the norm
    let slack = 64.0 * f64::EPSILON * (y.max_abs() * n).max(1.0) / n.sqrt();
    Ok(WeylCheck {
        spiked,
        bound,
        holds: spiked <= bound + slack,
    })
}

/// `Σ_{t ∈ [n]^free} f(fixed ++ t)` by the chosen route, under the budget.
fn index_sum(
    model: &dyn Ensemble,
    method: MomentMethod,
    fixed: &[usize],
    free: usize,
    budget: &Budget,
    op: &'static str,
    f: impl FnMut(&[usize]) -> f64,
) -> Result<f64> {
    let n = model.n();
    Ok(match method {
        MomentMethod::Reduced => {
            budget.check(op, pattern_count(n, fixed.len(), free) * 8.0)?;
            exchangeable_sum(n, fixed, free, f)
        }
        _ => {
            budget.check(op, (n as f64).powi(free as i32) * 8.0)?;
            naive_sum(n, fixed, free, f)
        }
    })
}

/// `Var(Sᵀ1) = Var(Σ_{i,j} X_ij)`.
///
/// Naive route: `Σ_{a,b} w_a w_b Cov(X_a, X_b)` over packed entries with
/// weight 1 on the diagonal and 2 off it. Reduced route: the ordered four-index sum.
pub fn exact_sum_variance(model: &dyn Ensemble, method: MomentMethod, budget: &Budget) -> Result<f64> {
    let n = model.n();
    match resolve_method(model, method)? {
        MomentMethod::Reduced => {
            budget.check("exact_sum_variance", pattern_count(n, 0, 4) * 8.0)?;
            Ok(exchangeable_sum(n, &[], 4, |t| {
                model.entry_cov(Entry::new(t[0], t[1]), Entry::new(t[2], t[3]))
            }))
        }
        _ => {
            let p = packed_len(n) as f64;
            budget.check("exact_sum_variance", p * p)?;
            let entries: Vec<Entry> = upper_entries(n).collect();
            let w = |e: &Entry| if e.is_diagonal() { 1.0 } else { 2.0 };
            let mut total = 0.0;
            for a in &entries {
                let mut row = 0.0;
                for b in &entries {
                    row += w(b) * model.entry_cov(*a, *b);
                }
                total += w(a) * row;
            }
            Ok(total)
        }
    }
}

/// Terms of `Var(Z_i²) = T1 + 2 T2 + T3 + T4 + T5` (ordered index sums, `c = Cov`):
/// `T1 = Σ_j 2c(ij,ij)²`, `T2 = Σ_{j≠j'} [c(ij,ij)c(ij',ij') + c(ij,ij')²]`,
/// `T3 = Σ_{j≠j'} 2c(ij,ij')²`,
/// `T4 = Σ_{j≠j', k≠k', {j,j'}≠{k,k'}} [c(ij,ik)c(ij',ik') + c(ij,ik')c(ij',ik)]`,
/// `T5 = 2 Σ_{j, k≠k'} 2c(ij,ik)c(ij,ik')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarZSqTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
}

impl VarZSqTerms {
    pub fn total(&self) -> f64 {
        self.t1 + 2.0 * self.t2 + self.t3 + self.t4 + self.t5
    }
}

/// Terms of `Cov(Z_i², Z_{i'}²) = U1 + U2 + U3 + U4`:
/// `U1 = Σ_{j,j'} 2c(ij,i'j')²`, `U2 = Σ_{j, k≠k'} 2c(ij,i'k)c(ij,i'k')`,
/// `U3 = Σ_{j, k≠k'} 2c(i'j,ik)c(i'j,ik')`,
/// `U4 = Σ_{j≠j', k≠k'} [c(ij,i'k)c(ij',i'k') + c(ij,i'k')c(ij',i'k)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovZSqTerms {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

impl CovZSqTerms {
    pub fn total(&self) -> f64 {
        self.u1 + self.u2 + self.u3 + self.u4
    }
}

/// Exact second and fourth order moments of the row sums `Z_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZMoments {
    pub n: usize,
    pub method: MomentMethod,
    /// `Var(Z_i)` for every row `i`.
    pub var_zi: Vec<f64>,
    /// `Cov(Z_0, Z_1)`; absent for `n = 1`.
    pub cov_zi_zj: Option<f64>,
    /// `Var(Z_0²)` assembled from [`VarZSqTerms`].
    pub var_zi_sq: f64,
    pub var_zi_sq_terms: VarZSqTerms,
    /// `Cov(Z_0², Z_1²)` assembled from [`CovZSqTerms`].
    pub cov_zi2_zj2: Option<f64>,
    pub cov_zi2_zj2_terms: Option<CovZSqTerms>,
    /// Gaussian closed forms `2 Var(Z_0)²` and `2 Cov(Z_0, Z_1)²`.
    pub var_zi_sq_closed: f64,
    pub cov_zi2_zj2_closed: Option<f64>,
    pub var_s1: f64,
    /// `Var((1/n) Σ_{i,j} X_ij)`.
    pub var_sum_over_n: f64,
}

pub fn exact_z_moments(model: &dyn Ensemble, method: MomentMethod, budget: &Budget) -> Result<ZMoments> {
    if !model.is_gaussian() {
        return Err(Error::invalid("model", "fourth moments require jointly Gaussian entries"));
    }
    let n = model.n();
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let method = resolve_method(model, method)?;
    let c = |a: usize, b: usize, p: usize, q: usize| model.entry_cov(Entry::new(a, b), Entry::new(p, q));
    let sum = |fixed: &[usize], free: usize, f: &dyn Fn(&[usize]) -> f64| {
        index_sum(model, method, fixed, free, budget, "exact_z_moments", f)
    };

    let mut var_zi = Vec::with_capacity(n);
    for i in 0..n {
        var_zi.push(sum(&[i], 2, &|t| c(t[0], t[1], t[0], t[2]))?);
    }

    let i = 0;
    let t1 = sum(&[i], 1, &|t| 2.0 * c(i, t[1], i, t[1]).powi(2))?;
    let t2 = sum(&[i], 2, &|t| {
        let (j, jp) = (t[1], t[2]);
        if j == jp {
            return 0.0;
        }
        c(i, j, i, j) * c(i, jp, i, jp) + c(i, j, i, jp).powi(2)
    })?;
    let t3 = sum(&[i], 2, &|t| {
        let (j, jp) = (t[1], t[2]);
        if j == jp {
            return 0.0;
        }
        2.0 * c(i, j, i, jp).powi(2)
    })?;
    let t4 = sum(&[i], 4, &|t| {
        let (j, jp, k, kp) = (t[1], t[2], t[3], t[4]);
        if j == jp || k == kp || (j == k && jp == kp) || (j == kp && jp == k) {
            return 0.0;
        }
        c(i, j, i, k) * c(i, jp, i, kp) + c(i, j, i, kp) * c(i, jp, i, k)
    })?;
    let t5 = sum(&[i], 3, &|t| {
        let (j, k, kp) = (t[1], t[2], t[3]);
        if k == kp {
            return 0.0;
        }
        2.0 * 2.0 * c(i, j, i, k) * c(i, j, i, kp)
    })?;
    let var_terms = VarZSqTerms { t1, t2, t3, t4, t5 };

    let (cov_zi_zj, cov_terms) = if n >= 2 {
        let ip = 1;
        let cov = sum(&[i, ip], 2, &|t| c(i, t[2], ip, t[3]))?;
        let u1 = sum(&[i, ip], 2, &|t| 2.0 * c(i, t[2], ip, t[3]).powi(2))?;
        let u2 = sum(&[i, ip], 3, &|t| {
            let (j, k, kp) = (t[2], t[3], t[4]);
            if k == kp {
                return 0.0;
            }
            2.0 * c(i, j, ip, k) * c(i, j, ip, kp)
        })?;
        let u3 = sum(&[i, ip], 3, &|t| {
            let (j, k, kp) = (t[2], t[3], t[4]);
            if k == kp {
                return 0.0;
            }
            2.0 * c(ip, j, i, k) * c(ip, j, i, kp)
        })?;
        let u4 = sum(&[i, ip], 4, &|t| {
            let (j, jp, k, kp) = (t[2], t[3], t[4], t[5]);
            if j == jp || k == kp {
                return 0.0;
            }
            c(i, j, ip, k) * c(i, jp, ip, kp) + c(i, j, ip, kp) * c(i, jp, ip, k)
        })?;
        (Some(cov), Some(CovZSqTerms { u1, u2, u3, u4 }))
    } else {
        (None, None)
    };

    let var_s1 = exact_sum_variance(model, method, budget)?;
    let nf = n as f64;
    Ok(ZMoments {
        n,
        method,
        var_zi_sq: var_terms.total(),
        var_zi_sq_closed: 2.0 * var_zi[0] * var_zi[0],
        var_zi,
        cov_zi_zj,
        var_zi_sq_terms: var_terms,
        cov_zi2_zj2: cov_terms.map(|u| u.total()),
        cov_zi2_zj2_terms: cov_terms,
        cov_zi2_zj2_closed: cov_zi_zj.map(|c| 2.0 * c * c),
        var_s1,
        var_sum_over_n: var_s1 / (nf * nf),
    })
}

/// `Var(Z_0²)` and `Cov(Z_0², Z_1²)` by a direct four-index sum of Wick expansions.
pub fn z_moments_wick(model: &dyn Ensemble, budget: &Budget) -> Result<(f64, Option<f64>)> {
    if !model.is_gaussian() {
        return Err(Error::invalid("model", "fourth moments require jointly Gaussian entries"));
    }
    let n = model.n();
    budget.check("z_moments_wick", (n as f64).powi(4) * 2.0 * 8.0)?;
    let cov = |a: Entry, b: Entry| model.entry_cov(a, b);
    let second = |i: usize, ip: usize| {
        naive_sum(n, &[], 4, |t| {
            let f = [
                Entry::new(i, t[0]),
                Entry::new(i, t[1]),
                Entry::new(ip, t[2]),
                Entry::new(ip, t[3]),
            ];
            wick_expectation(&f, cov) - cov(f[0], f[1]) * cov(f[2], f[3])
        })
    };
    let var = second(0, 0);
    let covar = (n >= 2).then(|| second(0, 1));
    Ok((var, covar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "eps_ge_1")]
    EpsGe1,
    #[serde(rename = "eps_lt_1")]
    EpsLt1,
}

/// Regime and scaling exponent: `1/2` when `ε >= 1` (models without ε count as independent), `ε/2` otherwise.
pub fn regime_for(epsilon: Option<f64>) -> (Regime, f64) {
    match epsilon {
        Some(e) if e < 1.0 => (Regime::EpsLt1, e / 2.0),
        _ => (Regime::EpsGe1, 0.5),
    }
}

/// One replicate of the fluctuation experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctSample {
    pub rep: u64,
    /// `λ₁(n^{-1/2} Y)`.
    pub lambda1: f64,
    /// `n^a (λ₁ - λ - 1/λ)`.
    pub scaled_stat: f64,
    /// `n^{a - 1/2} (1/n) Σ_{i,j} X_ij`.
    pub sum_xij_term: f64,
    pub remainder: f64,
    /// Degenerate draws discarded before this one.
    pub rejections: u32,
}

pub fn fluct_replicate(
    model: &dyn Ensemble,
    lambda: f64,
    exponent: f64,
    rep: u64,
    rng: &mut RngStream,
) -> Result<FluctSample> {
    let n = model.n() as f64;
    let mut rejections = 0;
    loop {
        let mut x = model.sample(rng);
        let total = x.total_sum();
        add_spike(&mut x, lambda);
        let (l1, l2) = top_two_eigenvalues(&x)?;
        let gap = relative_gap(l1, l2);
        if model.n() > 1 && !(gap >= DEGENERACY_TOL) {
            rejections += 1;
            if rejections >= MAX_RESAMPLES {
                return Err(Error::DegenerateTop {
                    gap,
                    tol: DEGENERACY_TOL,
                });
            }
            continue;
        }
        let lambda1 = l1 / n.sqrt();
        let scale = n.powf(exponent);
        let scaled_stat = scale * (lambda1 - lambda - 1.0 / lambda);
        let sum_xij_term = n.powf(exponent - 0.5) * total / n;
        return Ok(FluctSample {
            rep,
            lambda1,
            scaled_stat,
            sum_xij_term,
            remainder: scaled_stat - sum_xij_term,
            rejections,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctResult {
    pub regime: Regime,
    pub exponent: f64,
    pub n: usize,
    pub lambda: f64,
    /// `λ / n^g` for the growth condition `λ ≫ n^g` of the regime.
    pub growth_ratio: f64,
    pub growth_warning: Option<String>,
    /// 2 in the `ε >= 1` regime, the exact finite-n variance otherwise.
    pub sigma2_target: f64,
    /// `n^{2a-1} Var((1/n) Σ X_ij)`, the exact variance of `sum_xij_term`, when affordable.
    pub exact_term_variance: Option<f64>,
    pub samples: Vec<FluctSample>,
    pub rejections: u64,
    pub rejection_rate: f64,
    pub mean: f64,
    pub variance: f64,
    pub ks: KsResult,
}

pub const FLUCT_TAG: &str = "fluct";

pub fn fluctuation_experiment(
    spec: &SpikedSpec,
    reps: usize,
    master_seed: u64,
    workers: Workers,
    budget: &Budget,
) -> Result<FluctResult> {
    spec.validate()?;
    if !(spec.lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be positive"));
    }
    if reps < 2 {
        return Err(Error::invalid("reps", "need at least 2 replicates"));
    }
    let model = spec.base.build()?;
    let n = model.n();
    let nf = n as f64;
    let (regime, exponent) = regime_for(spec.base.epsilon());
    let growth_exp = match regime {
        Regime::EpsGe1 => 0.25,
        Regime::EpsLt1 => exponent / 2.0,
    };
    let growth_ratio = spec.lambda / nf.powf(growth_exp);
    let growth_warning = (growth_ratio < 2.0).then(|| {
        format!("lambda = {} is only {growth_ratio:.2} times n^{growth_exp}; the limit may not be reached", spec.lambda)
    });

    let exact = exact_sum_variance(model.as_ref(), MomentMethod::Auto, budget)
        .map(|v| nf.powf(2.0 * exponent - 1.0) * v / (nf * nf));
    let (sigma2_target, exact_term_variance) = match regime {
        Regime::EpsGe1 => (2.0, exact.ok()),
        Regime::EpsLt1 => {
            let v = exact?;
            (v, Some(v))
        }
    };

    let samples = map_replicates(reps, workers, |r| {
        let mut rng = RngStream::derive(master_seed, FLUCT_TAG, r);
        fluct_replicate(model.as_ref(), spec.lambda, exponent, r, &mut rng)
    })?;
    let stats: Vec<f64> = samples.iter().map(|s| s.scaled_stat).collect();
    let (mean, variance) = mean_var(&stats);
    let rejections: u64 = samples.iter().map(|s| s.rejections as u64).sum();
    Ok(FluctResult {
        regime,
        exponent,
        n,
        lambda: spec.lambda,
        growth_ratio,
        growth_warning,
        sigma2_target,
        exact_term_variance,
        rejection_rate: rejections as f64 / (rejections + reps as u64) as f64,
        rejections,
        mean,
        variance,
        ks: ks_test_normal(&stats, 0.0, sigma2_target),
        samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q50: f64,
    pub q95: f64,
    pub max: f64,
}

impl Quantiles {
    fn of(xs: &[f64]) -> Self {
        Quantiles {
            q50: quantile(xs, 0.5),
            q95: quantile(xs, 0.95),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderRow {
    pub n: usize,
    pub reps: usize,
    /// Quantiles of `‖r‖² λ²/n`.
    pub r_norm_rate: Quantiles,
    /// Quantiles of `‖Yr‖² λ²/n²`, which bounds the quadratic form `|rᵀYr|`.
    pub qform_bound_rate: Quantiles,
    pub max_identity_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub lambda: f64,
    pub rows: Vec<RemainderRow>,
}

/// Remainder sizes across replicates for each dimension in `ns` (the base model is resized).
pub fn remainder_diagnostics(
    spec: &SpikedSpec,
    ns: &[usize],
    reps: usize,
    master_seed: u64,
    workers: Workers,
) -> Result<RemainderReport> {
    spec.validate()?;
    if !(spec.lambda > 4.0) {
        return Err(Error::invalid("lambda", "diagnostics assume lambda > 4"));
    }
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let model = spec.base.with_n(n).build()?;
        let tag = format!("remainder/n={n}");
        let out = map_replicates(reps, workers, |r| {
            let mut rng = RngStream::derive(master_seed, &tag, r);
            let mut rejected = 0;
            loop {
                let y = sample_spiked(model.as_ref(), spec.lambda, &mut rng);
                match von_mises_decompose(&y, spec.lambda) {
                    Ok(d) => {
                        let (a, b) = remainder_stats(&d, spec.lambda);
                        return Ok((a, b, d.identity_residual / d.lambda1.abs()));
                    }
                    Err(Error::DegenerateTop { .. }) if rejected + 1 < MAX_RESAMPLES => rejected += 1,
                    Err(e) => return Err(e),
                }
            }
        })?;
        let a: Vec<f64> = out.iter().map(|x| x.0).collect();
        let b: Vec<f64> = out.iter().map(|x| x.1).collect();
        rows.push(RemainderRow {
            n,
            reps,
            r_norm_rate: Quantiles::of(&a),
            qform_bound_rate: Quantiles::of(&b),
            max_identity_residual: out.iter().map(|x| x.2).fold(0.0, f64::max),
        });
    }
    Ok(RemainderReport {
        lambda: spec.lambda,
        rows,
    })
}
