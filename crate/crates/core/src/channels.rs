//! Measurement-dependent observation channels.
//!
//! A query of size `q` (the measure of the probed region) produces a clean
//! bit `x` (target inside the region or not) which is observed through a
//! binary-input channel `P_q(y|x)` whose quality depends on `q`. All
//! log-likelihoods and divergences are in bits.

use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::infotheory::binary_kl;
use crate::optimize::capacity;

/// Points of the q-grid used for the degradation check.
pub const MONOTONE_GRID: usize = 100;

const MONOTONE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ChannelError {
    #[error("channel parameter {name} = {value} is invalid: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("query size {0} is outside [0, 1]")]
    QuerySize(f64),
    #[error("crossover probability {p} at query size {q} is outside [0, 1/2)")]
    Crossover { q: f64, p: f64 },
    #[error("observation variant does not match the {0} channel")]
    ObservationMismatch(&'static str),
    #[error("channel improves with query size: {quantity} rises from {from} at q={q_from} to {to} at q={q_to}")]
    NotMonotone {
        quantity: &'static str,
        q_from: f64,
        from: f64,
        q_to: f64,
        to: f64,
    },
    #[error("degradation check failed: {0}")]
    Numerics(String),
}

/// Parameterization of a channel family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ChannelKind {
    /// BSC whose crossover grows linearly with the query size, `p(q) = a q + b`.
    LinearBsc { a: f64, b: f64 },
    /// Hit: `N(mu, 1 + a_var q)`; miss: `N(0, 2 + b_var q)`.
    GaussianPair { mu: f64, a_var: f64, b_var: f64 },
}

/// Serialized form of a [`ChannelModel`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    #[serde(flatten)]
    pub kind: ChannelKind,
    /// Reject models whose capacity or divergence grows with the query size.
    #[serde(default = "default_true")]
    pub enforce_monotone: bool,
}

fn default_true() -> bool {
    true
}

/// A validated channel family. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelSpec", into = "ChannelSpec")]
pub struct ChannelModel {
    kind: ChannelKind,
    enforce_monotone: bool,
    monotone: bool,
}

/// Channel output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Observation {
    Bit(bool),
    Real(f64),
}

impl Observation {
    pub fn as_bit(self) -> Option<bool> {
        match self {
            Observation::Bit(b) => Some(b),
            Observation::Real(_) => None,
        }
    }

    pub fn as_real(self) -> Option<f64> {
        match self {
            Observation::Real(v) => Some(v),
            Observation::Bit(_) => None,
        }
    }
}

impl TryFrom<ChannelSpec> for ChannelModel {
    type Error = ChannelError;

    fn try_from(spec: ChannelSpec) -> Result<Self, Self::Error> {
        ChannelModel::from_spec(spec)
    }
}

impl From<ChannelModel> for ChannelSpec {
    fn from(model: ChannelModel) -> Self {
        model.spec()
    }
}

fn check_param(name: &'static str, value: f64, nonneg: bool) -> Result<(), ChannelError> {
    if !value.is_finite() {
        return Err(ChannelError::Parameter {
            name,
            value,
            reason: "must be finite",
        });
    }
    if nonneg && value < 0.0 {
        return Err(ChannelError::Parameter {
            name,
            value,
            reason: "must be non-negative",
        });
    }
    Ok(())
}

fn check_query(q: f64) -> Result<(), ChannelError> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(ChannelError::QuerySize(q))
    }
}

impl ChannelModel {
    /// Linear-noise BSC. Requires `a, b >= 0` and `p(1/2) < 1/2`; above the
    /// point where `a q + b` reaches 1/2 the channel is pure noise.
    pub fn linear_bsc(a: f64, b: f64) -> Result<Self, ChannelError> {
        Self::from_spec(ChannelSpec {
            kind: ChannelKind::LinearBsc { a, b },
            enforce_monotone: true,
        })
    }

    pub fn gaussian_pair(mu: f64, a_var: f64, b_var: f64) -> Result<Self, ChannelError> {
        Self::from_spec(ChannelSpec {
            kind: ChannelKind::GaussianPair { mu, a_var, b_var },
            enforce_monotone: true,
        })
    }

    /// Gaussian pair without rejecting non-monotone degradation. The
    /// check still runs and is reported by [`ChannelModel::is_monotone`].
    pub fn gaussian_pair_unchecked(mu: f64, a_var: f64, b_var: f64) -> Result<Self, ChannelError> {
        Self::from_spec(ChannelSpec {
            kind: ChannelKind::GaussianPair { mu, a_var, b_var },
            enforce_monotone: false,
        })
    }

    pub fn from_spec(spec: ChannelSpec) -> Result<Self, ChannelError> {
        match spec.kind {
            ChannelKind::LinearBsc { a, b } => {
                check_param("a", a, true)?;
                check_param("b", b, true)?;
                if b >= 0.5 {
                    return Err(ChannelError::Crossover { q: 0.0, p: b });
                }
                if 0.5 * a + b >= 0.5 {
                    return Err(ChannelError::Crossover {
                        q: 0.5,
                        p: 0.5 * a + b,
                    });
                }
            }
            ChannelKind::GaussianPair { mu, a_var, b_var } => {
                check_param("mu", mu, false)?;
                check_param("a_var", a_var, false)?;
                check_param("b_var", b_var, false)?;
                if a_var > b_var {
                    return Err(ChannelError::Parameter {
                        name: "a_var",
                        value: a_var,
                        reason: "must not exceed b_var",
                    });
                }
                // variances are affine in q, so the endpoints decide positivity
                if 1.0 + a_var.min(0.0) <= 0.0 {
                    return Err(ChannelError::Parameter {
                        name: "a_var",
                        value: a_var,
                        reason: "hit variance 1 + a_var q must stay positive on [0, 1]",
                    });
                }
                if 2.0 + b_var.min(0.0) <= 0.0 {
                    return Err(ChannelError::Parameter {
                        name: "b_var",
                        value: b_var,
                        reason: "miss variance 2 + b_var q must stay positive on [0, 1]",
                    });
                }
            }
        }
        let mut model = ChannelModel {
            kind: spec.kind,
            enforce_monotone: spec.enforce_monotone,
            monotone: true,
        };
        match model.degradation_check() {
            Ok(()) => {}
            Err(e @ ChannelError::NotMonotone { .. }) => {
                if spec.enforce_monotone {
                    return Err(e);
                }
                model.monotone = false;
            }
            Err(e) => return Err(e),
        }
        Ok(model)
    }

    /// Verifies that `C(q)` and `C1(q)` are non-increasing on a uniform grid
    /// over [0, 1].
    fn degradation_check(&self) -> Result<(), ChannelError> {
        let grid: Vec<f64> = (0..MONOTONE_GRID)
            .map(|i| i as f64 / (MONOTONE_GRID - 1) as f64)
            .collect();
        let c1: Vec<f64> = grid.iter().map(|&q| self.divergence_c1(q)).collect();
        first_increase("C1", &grid, &c1)?;
        let cap = grid
            .iter()
            .map(|&q| capacity(self, q).map_err(|e| ChannelError::Numerics(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        first_increase("C", &grid, &cap)
    }

    pub fn kind(&self) -> ChannelKind {
        self.kind
    }

    pub fn spec(&self) -> ChannelSpec {
        ChannelSpec {
            kind: self.kind,
            enforce_monotone: self.enforce_monotone,
        }
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    pub fn is_binary(&self) -> bool {
        matches!(self.kind, ChannelKind::LinearBsc { .. })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ChannelKind::LinearBsc { .. } => "linear_bsc",
            ChannelKind::GaussianPair { .. } => "gaussian_pair",
        }
    }

    /// `a q + b` for the linear BSC; errors outside [0, 1/2).
    pub fn crossover_prob(&self, q: f64) -> Result<f64, ChannelError> {
        check_query(q)?;
        match self.kind {
            ChannelKind::LinearBsc { a, b } => {
                let p = a * q + b;
                if (0.0..0.5).contains(&p) {
                    Ok(p)
                } else {
                    Err(ChannelError::Crossover { q, p })
                }
            }
            ChannelKind::GaussianPair { .. } => Err(ChannelError::ObservationMismatch("gaussian_pair")),
        }
    }

    /// Crossover actually applied at query size `q`: `min(a q + b, 1/2)`.
    /// Returns `None` for the Gaussian family.
    pub fn effective_crossover(&self, q: f64) -> Option<f64> {
        match self.kind {
            ChannelKind::LinearBsc { a, b } => Some((a * q + b).min(0.5)),
            ChannelKind::GaussianPair { .. } => None,
        }
    }

    /// `(mean, variance)` of the output under input `x`.
    pub fn gaussian_params(&self, x: bool, q: f64) -> Option<(f64, f64)> {
        match self.kind {
            ChannelKind::GaussianPair { mu, a_var, b_var } => Some(if x {
                (mu, 1.0 + a_var * q)
            } else {
                (0.0, 2.0 + b_var * q)
            }),
            ChannelKind::LinearBsc { .. } => None,
        }
    }

    pub fn sample_output<R: Rng + ?Sized>(&self, x: bool, q: f64, rng: &mut R) -> Observation {
        match self.kind {
            ChannelKind::LinearBsc { a, b } => {
                let p = (a * q + b).min(0.5);
                let flip = rng.random::<f64>() < p;
                Observation::Bit(x ^ flip)
            }
            ChannelKind::GaussianPair { .. } => {
                let (mean, var) = self.gaussian_params(x, q).unwrap();
                let z: f64 = rng.sample(StandardNormal);
                Observation::Real(mean + var.sqrt() * z)
            }
        }
    }

    /// `log2 P_q(y|x)`; a density for the Gaussian family.
    pub fn log_likelihood(&self, y: Observation, x: bool, q: f64) -> Result<f64, ChannelError> {
        match (self.kind, y) {
            (ChannelKind::LinearBsc { a, b }, Observation::Bit(bit)) => {
                let p = (a * q + b).min(0.5);
                Ok(if bit == x { (1.0 - p).log2() } else { p.log2() })
            }
            (ChannelKind::GaussianPair { .. }, Observation::Real(v)) => Ok(self.ln_density(v, x, q) / LN_2),
            (ChannelKind::LinearBsc { .. }, _) => Err(ChannelError::ObservationMismatch("linear_bsc")),
            (ChannelKind::GaussianPair { .. }, _) => Err(ChannelError::ObservationMismatch("gaussian_pair")),
        }
    }

    /// Natural-log Gaussian density. Panics on the binary family.
    pub(crate) fn ln_density(&self, y: f64, x: bool, q: f64) -> f64 {
        let (mean, var) = self
            .gaussian_params(x, q)
            .expect("ln_density is only defined for the Gaussian family");
        let d = y - mean;
        -0.5 * (2.0 * PI * var).ln() - d * d / (2.0 * var)
    }

    /// `C1(q) = D(P_q(.|1) || P_q(.|0))` in bits. Infinite for a clean channel.
    pub fn divergence_c1(&self, q: f64) -> f64 {
        match self.kind {
            ChannelKind::LinearBsc { a, b } => {
                let p = (a * q + b).min(0.5);
                binary_kl(1.0 - p, p)
            }
            ChannelKind::GaussianPair { .. } => {
                let (m1, v1) = self.gaussian_params(true, q).unwrap();
                let (m0, v0) = self.gaussian_params(false, q).unwrap();
                gaussian_kl(m1, v1, m0, v0)
            }
        }
    }
}

/// `D(N(m1, v1) || N(m0, v0))` in bits.
pub fn gaussian_kl(m1: f64, v1: f64, m0: f64, v0: f64) -> f64 {
    0.5 * ((v0 / v1).ln() + (v1 + (m1 - m0).powi(2)) / v0 - 1.0) / LN_2
}

fn first_increase(quantity: &'static str, grid: &[f64], values: &[f64]) -> Result<(), ChannelError> {
    for i in 1..values.len() {
        let (prev, cur) = (values[i - 1], values[i]);
        if prev.is_infinite() && prev > 0.0 {
            continue;
        }
        if cur > prev + MONOTONE_SLACK * prev.abs().max(1.0) {
            return Err(ChannelError::NotMonotone {
                quantity,
                q_from: grid[i - 1],
                from: prev,
                q_to: grid[i],
                to: cur,
            });
        }
    }
    Ok(())
}
