//! Runtime lookup of model constructors by short name.

use std::collections::BTreeMap;

use super::{EnsembleSpec, VDist};
use crate::error::{Error, Result};
use crate::linear_ensemble::{LinearEnsembleSpec, PsiDist};

/// Loose, CLI-shaped parameters. Each registered model picks what it needs and
/// rejects missing required fields by name.
#[derive(Debug, Clone, Default)]
pub struct ModelArgs {
    pub n: usize,
    pub epsilon: Option<f64>,
    pub gamma: Option<f64>,
    pub v_dist: Option<VDist>,
    pub big_n: Option<usize>,
    pub p: Option<f64>,
    pub psi_dist: Option<PsiDist>,
    pub q_seed: Option<u64>,
}

fn required<T: Copy>(v: Option<T>, field: &'static str, model: &str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(field, format!("required by model {model}")))
}

pub type SpecBuilder = fn(&ModelArgs) -> Result<EnsembleSpec>;

#[derive(Debug, Clone)]
pub struct ModelEntry {
    pub name: &'static str,
    pub variant: &'static str,
    pub summary: &'static str,
    pub build: SpecBuilder,
}

/// Name → model constructor.
#[derive(Debug, Clone, Default)]
pub struct ModelRegistry {
    entries: BTreeMap<&'static str, ModelEntry>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry holding the four built-in models.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(ModelEntry {
            name: "iid",
            variant: "IidGaussian",
            summary: "iid standard normal upper triangle",
            build: |a| Ok(EnsembleSpec::IidGaussian { n: a.n }),
        });
        r.register(ModelEntry {
            name: "test-model",
            variant: "TestModel",
            summary: "W + n^{-(1+eps)/2} V 11^T",
            build: |a| {
                Ok(EnsembleSpec::TestModel {
                    n: a.n,
                    epsilon: required(a.epsilon, "epsilon", "test-model")?,
                    v_dist: a.v_dist.unwrap_or(VDist::Rademacher),
                })
            },
        });
        r.register(ModelEntry {
            name: "three-param",
            variant: "ThreeParam",
            summary: "alpha U 11^T + beta (1V^T + V1^T) + theta Z",
            build: |a| {
                Ok(EnsembleSpec::ThreeParam {
                    n: a.n,
                    epsilon: required(a.epsilon, "epsilon", "three-param")?,
                    gamma: required(a.gamma, "gamma", "three-param")?,
                })
            },
        });
        r.register(ModelEntry {
            name: "linear",
            variant: "LinearEnsemble",
            summary: "sum of psi_l Q_l over sparse Rademacher Q_l",
            build: |a| {
                Ok(EnsembleSpec::LinearEnsemble(LinearEnsembleSpec {
                    n: a.n,
                    big_n: required(a.big_n, "N", "linear")?,
                    p: required(a.p, "p", "linear")?,
                    psi_dist: a.psi_dist.unwrap_or(PsiDist::Rademacher),
                    q_seed: a.q_seed.unwrap_or(0),
                    epsilon: a.epsilon,
                }))
            },
        });
        r
    }

    pub fn register(&mut self, entry: ModelEntry) {
        self.entries.insert(entry.name, entry);
    }

    /// Looks up by short name or by variant name.
    pub fn get(&self, name: &str) -> Option<&ModelEntry> {
        self.entries
            .get(name)
            .or_else(|| self.entries.values().find(|e| e.variant == name))
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }

    pub fn spec(&self, name: &str, args: &ModelArgs) -> Result<EnsembleSpec> {
        let entry = self.get(name).ok_or_else(|| {
            let known: Vec<_> = self.names().collect();
            Error::invalid("model", format!("unknown model {name:?}; known: {}", known.join(", ")))
        })?;
        let spec = (entry.build)(args)?;
        spec.build()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_by_name_and_variant() {
        let r = ModelRegistry::with_defaults();
        assert_eq!(r.get("three-param").unwrap().variant, "ThreeParam");
        assert_eq!(r.get("TestModel").unwrap().name, "test-model");
        assert!(r.get("goe").is_none());
    }

    #[test]
    fn missing_parameter_is_named() {
        let r = ModelRegistry::with_defaults();
        let args = ModelArgs {
            n: 10,
            epsilon: Some(0.5),
            ..Default::default()
        };
        let err = r.spec("three-param", &args).unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn builds_validate() {
        let r = ModelRegistry::with_defaults();
        let args = ModelArgs {
            n: 10,
            epsilon: Some(0.5),
            gamma: Some(2.0),
            ..Default::default()
        };
        assert!(r.spec("three-param", &args).is_err());
    }
}
