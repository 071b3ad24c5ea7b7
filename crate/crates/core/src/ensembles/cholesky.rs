//! Dense-covariance sampler used as a test oracle for the generative samplers.

use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use super::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::{packed_len, upper_entries, Entry, SymMatrix};
use crate::rng::RngStream;

/// Largest dimension accepted: the covariance has `n(n+1)/2` rows.
pub const CHOLESKY_MAX_N: usize = 60;

/// Samples `vec(X) = L z` with `L Lᵀ` the exact packed entry covariance.
///
/// Positive semidefinite covariances (e.g. low-rank linear ensembles) fall back
/// to the symmetric square root.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    n: usize,
    factor: Mat<f64>,
}

impl CholeskySampler {
    pub fn new(model: &dyn Ensemble) -> Result<Self> {
        let n = model.n();
        if n > CHOLESKY_MAX_N {
            return Err(Error::TooLarge {
                operation: "cholesky sampler",
                n,
                limit: CHOLESKY_MAX_N,
            });
        }
        let entries: Vec<Entry> = upper_entries(n).collect();
        let p = entries.len();
        let cov = Mat::from_fn(p, p, |a, b| model.entry_cov(entries[a], entries[b]));
        let factor = match cov.llt(Side::Lower) {
            Ok(llt) => llt.L().to_owned(),
            Err(_) => {
                let eig = cov
                    .self_adjoint_eigen(Side::Lower)
                    .map_err(|e| Error::Eigen(format!("{e:?}")))?;
                let u = eig.U();
                let s = eig.S().column_vector();
                Mat::from_fn(p, p, |a, b| u[(a, b)] * s[b].max(0.0).sqrt())
            }
        };
        Ok(CholeskySampler { n, factor })
    }

    pub fn sample(&self, rng: &mut RngStream) -> SymMatrix {
        let p = packed_len(self.n);
        let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let mut packed = vec![0.0; p];
        for (a, out) in packed.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (b, zb) in z.iter().enumerate() {
                acc += self.factor[(a, b)] * zb;
            }
            *out = acc;
        }
        let mut k = 0;
        SymMatrix::from_upper_fn(self.n, |_, _| {
            let v = packed[k];
            k += 1;
            v
        })
    }
}
