//! Loopy belief propagation over lifted factor graphs.
//!
//! Two message representations are supported. In [`Mode::ExactDelta`] upward
//! messages are point masses and downward messages are carried only by their
//! log-slope at the anchor, which is all that adjoint recovery needs. In
//! [`Mode::GridNumeric`] deltas are replaced by Gaussians of width `sigma`:
//! upward messages are Gaussians and downward messages are log-densities
//! tabulated on a uniform grid around each variable's forward value.

mod message;
mod quadrature;
mod schedule;
mod store;
mod update;

use serde::Serialize;
use thiserror::Error;

use crate::netir::DomainError;

pub use message::{Grid, MessageValue, LOG_FLOOR};
pub use quadrature::GaussHermite;
pub use schedule::{
    downward_sweep, flooding_round, initialize_messages, run_bp, upward_sweep, BpRun,
};
pub use store::{Direction, MessageRecord, MessageStore, MessageView};
pub use update::{compute_posterior, Engine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    ExactDelta,
    GridNumeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// One upward sweep in topological order, then one downward sweep in reverse.
    TwoPass,
    /// Synchronous rounds until the largest message change drops below `tol`.
    Flooding { max_iters: usize, tol: f64 },
}

impl Schedule {
    pub fn flooding() -> Self {
        Schedule::Flooding {
            max_iters: 200,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpConfig {
    /// Temperature of the Boltzmann factor `exp(z / kT)`.
    pub kt: f64,
    /// Width of the Gaussians standing in for deltas in grid mode.
    pub sigma: f64,
    /// Points per grid; odd, at least 33.
    pub grid_points: usize,
    /// Grid half-width in units of the local message scale.
    pub grid_span: f64,
    /// Gauss-Hermite nodes per marginalized input, 1..=9.
    pub quad_nodes: usize,
    pub schedule: Schedule,
    pub mode: Mode,
    /// Seed for the Monte-Carlo pushforward fallback.
    pub seed: u64,
}

impl Default for BpConfig {
    fn default() -> Self {
        BpConfig {
            kt: 1.0,
            sigma: 1e-3,
            grid_points: 129,
            grid_span: 8.0,
            quad_nodes: 3,
            schedule: Schedule::TwoPass,
            mode: Mode::ExactDelta,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("kT must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("sigma must be positive and finite, got {0}")]
    Sigma(f64),
    #[error("grid points must be odd and at least 33, got {0}")]
    GridPoints(usize),
    #[error("grid span must be positive and finite, got {0}")]
    GridSpan(f64),
    #[error("quadrature nodes must be between 1 and 9, got {0}")]
    QuadNodes(usize),
    #[error("flooding needs max_iters >= 1, got {0}")]
    MaxIters(usize),
    #[error("flooding tolerance must be positive, got {0}")]
    Tolerance(f64),
}

impl BpConfig {
    pub fn exact() -> Self {
        BpConfig::default()
    }

    pub fn grid(sigma: f64) -> Self {
        BpConfig {
            sigma,
            mode: Mode::GridNumeric,
            ..BpConfig::default()
        }
    }

    pub fn with_mode(&self, mode: Mode) -> Self {
        BpConfig {
            mode,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !positive(self.kt) {
            return Err(ConfigError::Temperature(self.kt));
        }
        if !positive(self.sigma) {
            return Err(ConfigError::Sigma(self.sigma));
        }
        if self.grid_points < 33 || self.grid_points.is_multiple_of(2) {
            return Err(ConfigError::GridPoints(self.grid_points));
        }
        if !positive(self.grid_span) {
            return Err(ConfigError::GridSpan(self.grid_span));
        }
        if !(1..=9).contains(&self.quad_nodes) {
            return Err(ConfigError::QuadNodes(self.quad_nodes));
        }
        if let Schedule::Flooding { max_iters, tol } = self.schedule {
            if max_iters < 1 {
                return Err(ConfigError::MaxIters(max_iters));
            }
            if !positive(tol) {
                return Err(ConfigError::Tolerance(tol));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BpError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("anchors disagree at `{var}`: {a} vs {b}")]
    AnchorMismatch { var: String, a: f64, b: f64 },
    #[error("grids for `{var}` do not overlap and cannot be resampled")]
    IncompatibleGrid { var: String },
    #[error("message into factor {factor} needs an anchor for `{var}` that is not available yet")]
    MissingAnchor { var: String, factor: usize },
    #[error("every quadrature contribution vanished for the message to `{var}`")]
    GridUnderflow { var: String },
    #[error("factor {factor} evaluated outside its domain: {source}")]
    Domain {
        factor: usize,
        #[source]
        source: DomainError,
    },
    #[error("unexpected {found} message on edge {edge}")]
    Representation { edge: usize, found: &'static str },
}

#[cfg(test)]
mod tests;
