//! Work budgets for the exhaustive enumerations.
//!
//! Costs are projected in multiply-adds before any work starts. The default
//! ceiling is `1e9`; the `CORRSPEC_BUDGET` environment variable overrides it.

use crate::error::{Error, Result};

pub const BUDGET_ENV: &str = "CORRSPEC_BUDGET";
pub const DEFAULT_BUDGET: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    limit: f64,
}

impl Budget {
    pub fn new(limit: f64) -> Self {
        Budget { limit }
    }

    /// Budget from `CORRSPEC_BUDGET`, falling back to the default when unset or unparsable.
    pub fn from_env() -> Self {
        let limit = std::env::var(BUDGET_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|v| v.is_finite() && *v > 0.0)
            .unwrap_or(DEFAULT_BUDGET);
        Budget { limit }
    }

    pub fn limit(&self) -> f64 {
        self.limit
    }

    pub fn check(&self, operation: &'static str, projected: f64) -> Result<()> {
        if projected > self.limit {
            Err(Error::Budget {
                operation,
                projected,
                budget: self.limit,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for Budget {
    fn default() -> Self {
        Budget::from_env()
    }
}
