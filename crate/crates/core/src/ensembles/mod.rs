//! Correlated Gaussian matrix models.
//!
//! Each model is a generative construction (an iid symmetric matrix plus
//! low-rank Gaussian perturbations), so one draw costs `O(n²)` and the exact
//! entry covariance is available in closed form. All models implement
//! [`Ensemble`]; [`EnsembleSpec`] is the serializable description and
//! [`EnsembleSpec::build`] turns it into a boxed model.

mod cholesky;
mod models;
mod registry;

pub use cholesky::CholeskySampler;
pub use models::{IidGaussian, TestModel, ThreeParam};
pub use registry::{ModelArgs, ModelEntry, ModelRegistry};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_ensemble::{LinearEnsemble, LinearEnsembleSpec};
use crate::matrix::{upper_entries, Entry, SymMatrix};
use crate::rng::RngStream;

/// Distribution of the scalar `V` multiplying `11ᵀ` in the test model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VDist {
    Rademacher,
    Gaussian,
}

/// Serializable model description.
///
/// JSON form: `{"variant": "TestModel", "n": 1000, "epsilon": 0.5, "v_dist": "Gaussian"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", deny_unknown_fields)]
pub enum EnsembleSpec {
    /// All upper-triangle entries iid standard normal.
    IidGaussian { n: usize },
    /// `X = W + α_n V 11ᵀ`, `α_n = n^{-(1+ε)/2}`.
    TestModel { n: usize, epsilon: f64, v_dist: VDist },
    /// `X = α_n U 11ᵀ + β_n (1Vᵀ + V1ᵀ) + θ_n Z`.
    ThreeParam { n: usize, epsilon: f64, gamma: f64 },
    /// `X = Σ_ℓ ψ_ℓ Q_ℓ` over a sparse Rademacher family.
    LinearEnsemble(LinearEnsembleSpec),
}

impl EnsembleSpec {
    pub fn n(&self) -> usize {
        match self {
            EnsembleSpec::IidGaussian { n }
            | EnsembleSpec::TestModel { n, .. }
            | EnsembleSpec::ThreeParam { n, .. } => *n,
            EnsembleSpec::LinearEnsemble(s) => s.n,
        }
    }

    pub fn variant_name(&self) -> &'static str {
        match self {
            EnsembleSpec::IidGaussian { .. } => "IidGaussian",
            EnsembleSpec::TestModel { .. } => "TestModel",
            EnsembleSpec::ThreeParam { .. } => "ThreeParam",
            EnsembleSpec::LinearEnsemble(_) => "LinearEnsemble",
        }
    }

    /// Correlation decay exponent ε, when the model declares one.
    pub fn epsilon(&self) -> Option<f64> {
        match self {
            EnsembleSpec::IidGaussian { .. } => None,
            EnsembleSpec::TestModel { epsilon, .. } | EnsembleSpec::ThreeParam { epsilon, .. } => {
                Some(*epsilon)
            }
            EnsembleSpec::LinearEnsemble(s) => s.epsilon,
        }
    }

    /// Same model at a different dimension.
    pub fn with_n(&self, n: usize) -> EnsembleSpec {
        let mut s = self.clone();
        match &mut s {
            EnsembleSpec::IidGaussian { n: m }
            | EnsembleSpec::TestModel { n: m, .. }
            | EnsembleSpec::ThreeParam { n: m, .. } => *m = n,
            EnsembleSpec::LinearEnsemble(l) => l.n = n,
        }
        s
    }

    /// Validates parameters and constructs the model.
    pub fn build(&self) -> Result<Box<dyn Ensemble>> {
        Ok(match self {
            EnsembleSpec::IidGaussian { n } => Box::new(IidGaussian::new(*n)?),
            EnsembleSpec::TestModel { n, epsilon, v_dist } => {
                Box::new(TestModel::new(*n, *epsilon, *v_dist)?)
            }
            EnsembleSpec::ThreeParam { n, epsilon, gamma } => {
                Box::new(ThreeParam::new(*n, *epsilon, *gamma)?)
            }
            EnsembleSpec::LinearEnsemble(s) => Box::new(LinearEnsemble::new(s.clone())?),
        })
    }
}

/// A random symmetric matrix model with an exactly known entry covariance.
pub trait Ensemble: Send + Sync + fmt::Debug {
    fn spec(&self) -> EnsembleSpec;

    fn n(&self) -> usize;

    /// One draw of `X_n`.
    fn sample(&self, rng: &mut RngStream) -> SymMatrix;

    /// `Cov(X_a, X_b)` for canonical entries (`i <= j`, zero-based).
    fn entry_cov(&self, a: Entry, b: Entry) -> f64;

    /// Entries are jointly Gaussian (Wick's formula applies).
    fn is_gaussian(&self) -> bool;

    /// The covariance is invariant under every relabeling of the indices `0..n`.
    /// Enables pattern-reduced exact sums.
    fn is_exchangeable(&self) -> bool;
}

/// Checked entry covariance; indices may be given in either order.
pub fn exact_entry_cov(model: &dyn Ensemble, i: usize, j: usize, i2: usize, j2: usize) -> Result<f64> {
    let n = model.n();
    for (name, v) in [("i", i), ("j", j), ("i2", i2), ("j2", j2)] {
        if v >= n {
            return Err(Error::invalid(name, format!("index {v} out of range for n = {n}")));
        }
    }
    Ok(model.entry_cov(Entry::new(i, j), Entry::new(i2, j2)))
}

/// The `O(n^{-(1+ε)})` correlation condition with an explicit constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSpec {
    pub n: usize,
    pub epsilon: f64,
    pub corr_bound_const: f64,
}

impl CorrelationSpec {
    pub fn new(n: usize, epsilon: f64, corr_bound_const: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "must be at least 1"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon", "must be positive"));
        }
        if !(corr_bound_const >= 0.0) {
            return Err(Error::invalid("corr_bound_const", "must be nonnegative"));
        }
        Ok(CorrelationSpec {
            n,
            epsilon,
            corr_bound_const,
        })
    }

    /// `C n^{-(1+ε)}`.
    pub fn cov_threshold(&self) -> f64 {
        self.corr_bound_const * (self.n as f64).powf(-(1.0 + self.epsilon))
    }
}

/// Outcome of [`verify_correlation_spec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n: usize,
    /// Sup of |Cov| over distinct entry pairs, diagonal entries included.
    pub max_offpair_cov: f64,
    /// Same sup restricted to off-diagonal entries `i < j`.
    pub max_offdiag_offpair_cov: f64,
    /// Sup over entries of |Var(X_ij) - 1|.
    pub max_var_dev: f64,
    /// Exponent `e` with `max_offpair_cov = n^{-e}` (absent when the sup is 0 or n = 1).
    pub observed_exponent: Option<f64>,
    pub cov_threshold: f64,
    pub var_threshold: f64,
    pub conforms: bool,
    /// "full" when every entry pair was visited, "pattern" when exchangeability
    /// reduced the scan to one representative per index-equality pattern.
    pub scan: String,
}

/// Entry pairs above which the full scan is replaced by the pattern scan.
const FULL_SCAN_LIMIT: usize = 20_000_000;

/// Checks the correlation condition and the variance relaxation `c/(log n)²`.
///
/// `model_epsilon` defaults to the model's declared ε; models without one
/// (iid) are checked against ε = 1.
pub fn verify_correlation_spec(
    model: &dyn Ensemble,
    corr_bound_const: f64,
    var_dev_const: f64,
) -> Result<CorrelationReport> {
    let n = model.n();
    let epsilon = model.spec().epsilon().unwrap_or(1.0);
    let cspec = CorrelationSpec::new(n, epsilon, corr_bound_const)?;

    let p = crate::matrix::packed_len(n);
    let pairs = p * p.saturating_sub(1) / 2;
    let (entries, scan): (Vec<Entry>, &str) = if pairs <= FULL_SCAN_LIMIT {
        (upper_entries(n).collect(), "full")
    } else if model.is_exchangeable() {
        // any two entries involve at most four distinct indices
        (upper_entries(4).collect(), "pattern")
    } else {
        return Err(Error::Budget {
            operation: "verify_correlation_spec",
            projected: pairs as f64,
            budget: FULL_SCAN_LIMIT as f64,
        });
    };

    let mut max_off = 0.0f64;
    let mut max_off_offdiag = 0.0f64;
    let mut max_var_dev = 0.0f64;
    for (ai, &a) in entries.iter().enumerate() {
        max_var_dev = max_var_dev.max((model.entry_cov(a, a) - 1.0).abs());
        for &b in &entries[ai + 1..] {
            let c = model.entry_cov(a, b).abs();
            max_off = max_off.max(c);
            if !a.is_diagonal() && !b.is_diagonal() {
                max_off_offdiag = max_off_offdiag.max(c);
            }
        }
    }

    let ln_n = (n as f64).ln();
    let var_threshold = if n > 1 { var_dev_const / (ln_n * ln_n) } else { f64::INFINITY };
    let cov_threshold = cspec.cov_threshold();
    let observed_exponent = (max_off > 0.0 && n > 1).then(|| -max_off.ln() / ln_n);
    // relative slack for rounding in n^{-(1+ε)}
    let conforms = max_off <= cov_threshold * (1.0 + 1e-12) && max_var_dev <= var_threshold;

    Ok(CorrelationReport {
        n,
        max_offpair_cov: max_off,
        max_offdiag_offpair_cov: max_off_offdiag,
        max_var_dev,
        observed_exponent,
        cov_threshold,
        var_threshold,
        conforms,
        scan: scan.to_string(),
    })
}
