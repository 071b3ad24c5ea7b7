use rand::Rng;
use rand_distr::StandardNormal;

use super::{Ensemble, EnsembleSpec, VDist};
use crate::error::{Error, Result};
use crate::matrix::{Entry, SymMatrix};
use crate::rng::RngStream;

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    Ok(())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::invalid("epsilon", format!("must be finite and nonnegative, got {epsilon}")));
    }
    Ok(())
}

#[inline]
fn normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

/// Symmetric matrix with iid standard normal upper triangle (diagonal included),
/// drawn row by row.
pub(crate) fn iid_symmetric(n: usize, rng: &mut RngStream) -> SymMatrix {
    SymMatrix::from_upper_fn(n, |_, _| normal(rng))
}

/// Independent standard normal upper triangle.
#[derive(Debug, Clone)]
pub struct IidGaussian {
    n: usize,
}

impl IidGaussian {
    pub fn new(n: usize) -> Result<Self> {
        check_n(n)?;
        Ok(IidGaussian { n })
    }
}

impl Ensemble for IidGaussian {
    fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::IidGaussian { n: self.n }
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut RngStream) -> SymMatrix {
        iid_symmetric(self.n, rng)
    }

    fn entry_cov(&self, a: Entry, b: Entry) -> f64 {
        if a == b {
            1.0
        } else {
            0.0
        }
    }

    fn is_gaussian(&self) -> bool {
        true
    }

    fn is_exchangeable(&self) -> bool {
        true
    }
}

/// `X = W + α_n V 11ᵀ` with `W` iid standard normal (unit diagonal variance) and
/// `α_n = n^{-(1+ε)/2}`.
///
/// Every pair of distinct entries has covariance `α_n²`; every variance is `1 + α_n²`.
#[derive(Debug, Clone)]
pub struct TestModel {
    n: usize,
    epsilon: f64,
    v_dist: VDist,
    alpha: f64,
}

impl TestModel {
    pub fn new(n: usize, epsilon: f64, v_dist: VDist) -> Result<Self> {
        check_n(n)?;
        check_epsilon(epsilon)?;
        let alpha = (n as f64).powf(-(1.0 + epsilon) / 2.0);
        Ok(TestModel {
            n,
            epsilon,
            v_dist,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

impl Ensemble for TestModel {
    fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::TestModel {
            n: self.n,
            epsilon: self.epsilon,
            v_dist: self.v_dist,
        }
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut RngStream) -> SymMatrix {
        let mut x = iid_symmetric(self.n, rng);
        let v = match self.v_dist {
            VDist::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            VDist::Gaussian => normal(rng),
        };
        x.add_constant(self.alpha * v);
        x
    }

    fn entry_cov(&self, a: Entry, b: Entry) -> f64 {
        let a2 = self.alpha * self.alpha;
        if a == b {
            1.0 + a2
        } else {
            a2
        }
    }

    fn is_gaussian(&self) -> bool {
        self.v_dist == VDist::Gaussian
    }

    fn is_exchangeable(&self) -> bool {
        true
    }
}

/// `X = α_n U 11ᵀ + β_n (1Vᵀ + V1ᵀ) + θ_n Z` with
/// `α_n² = n^{-(1+ε)}`, `β_n² = n^{-γ} - n^{-(1+ε)}`, `θ_n² = 1 - α_n² - 2β_n²`.
///
/// Entry `(i, j)` equals `α U + β (V_i + V_j) + θ Z_ij`, so
/// `Cov(X_ij, X_kl) = α² + β² ⟨e_i + e_j, e_k + e_l⟩ + θ² [ij = kl]`.
#[derive(Debug, Clone)]
pub struct ThreeParam {
    n: usize,
    epsilon: f64,
    gamma: f64,
    alpha: f64,
    beta: f64,
    theta: f64,
}

impl ThreeParam {
    pub fn new(n: usize, epsilon: f64, gamma: f64) -> Result<Self> {
        check_n(n)?;
        check_epsilon(epsilon)?;
        if !gamma.is_finite() || gamma >= 1.0 + epsilon {
            return Err(Error::invalid(
                "gamma",
                format!("requires gamma < 1 + epsilon = {}, got {gamma}", 1.0 + epsilon),
            ));
        }
        let nf = n as f64;
        let alpha2 = nf.powf(-(1.0 + epsilon));
        let beta2 = (nf.powf(-gamma) - alpha2).max(0.0);
        let theta2 = 1.0 - alpha2 - 2.0 * beta2;
        if theta2 < 0.0 {
            return Err(Error::invalid(
                "theta",
                format!("theta_n^2 = 1 - alpha_n^2 - 2 beta_n^2 = {theta2:.6e} < 0 at n = {n}"),
            ));
        }
        Ok(ThreeParam {
            n,
            epsilon,
            gamma,
            alpha: alpha2.sqrt(),
            beta: beta2.sqrt(),
            theta: theta2.sqrt(),
        })
    }

    /// `(α_n, β_n, θ_n)`.
    pub fn coefficients(&self) -> (f64, f64, f64) {
        (self.alpha, self.beta, self.theta)
    }
}

impl Ensemble for ThreeParam {
    fn spec(&self) -> EnsembleSpec {
        EnsembleSpec::ThreeParam {
            n: self.n,
            epsilon: self.epsilon,
            gamma: self.gamma,
        }
    }

    fn n(&self) -> usize {
        self.n
    }

    fn sample(&self, rng: &mut RngStream) -> SymMatrix {
        let n = self.n;
        let u = normal(rng);
        let v: Vec<f64> = (0..n).map(|_| normal(rng)).collect();
        let (a, b, t) = (self.alpha, self.beta, self.theta);
        SymMatrix::from_upper_fn(n, |i, j| a * u + b * (v[i] + v[j]) + t * normal(rng))
    }

    fn entry_cov(&self, a: Entry, b: Entry) -> f64 {
        let shared = [(a.i, b.i), (a.i, b.j), (a.j, b.i), (a.j, b.j)]
            .iter()
            .filter(|(x, y)| x == y)
            .count() as f64;
        let mut c = self.alpha * self.alpha + self.beta * self.beta * shared;
        if a == b {
            c += self.theta * self.theta;
        }
        c
    }

    fn is_gaussian(&self) -> bool {
        true
    }

    fn is_exchangeable(&self) -> bool {
        true
    }
}
