//! Optimal query size, capacity, and the `I(q, q)` curve.

use serde::{Deserialize, Serialize};

use crate::channels::{ChannelKind, ChannelModel};
use crate::infotheory::{h2, mutual_information, InfoError};
use crate::search::{golden_max, grid, grid_then_golden};

pub const DEFAULT_GRID_STEP: f64 = 1e-3;

/// Largest query size searched by [`optimal_query_size`].
pub const MAX_QUERY: f64 = 0.5;

const PRIOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub q_star: f64,
    pub value: f64,
    pub grid_resolution: f64,
    pub refined: bool,
    /// The maximizer is the right end of the search interval.
    pub boundary_hit: bool,
}

fn check_step(step: f64) -> Result<(), InfoError> {
    if step > 0.0 && step <= 1e-2 {
        Ok(())
    } else {
        Err(InfoError::Domain {
            name: "grid_step",
            value: step,
            domain: "(0, 0.01]",
        })
    }
}

fn maximize_on(
    f: impl Fn(f64) -> Result<f64, InfoError>,
    hi: f64,
    step: f64,
) -> Result<OptimumReport, InfoError> {
    check_step(step)?;
    let m = grid_then_golden(f, step, hi, step)?;
    Ok(OptimumReport {
        q_star: m.arg,
        value: m.value,
        grid_resolution: step,
        refined: m.refined,
        boundary_hit: m.at_upper_edge() && !m.refined,
    })
}

/// Maximizes `I(q, q)` over `q` in `(0, 1/2]`: exhaustive grid with spacing
/// `grid_step`, then golden-section refinement.
pub fn optimal_query_size(model: &ChannelModel, grid_step: f64) -> Result<OptimumReport, InfoError> {
    maximize_on(|q| mutual_information(q, q, model), MAX_QUERY, grid_step)
}

/// Maximizes `I(q, alpha q)` over `q` in `(0, 1]`: the best prior for a
/// search confined to a region of measure `alpha`.
pub fn scaled_optimum(model: &ChannelModel, alpha: f64, grid_step: f64) -> Result<OptimumReport, InfoError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(InfoError::Domain {
            name: "alpha",
            value: alpha,
            domain: "(0, 1]",
        });
    }
    maximize_on(|q| mutual_information(q, alpha * q, model), 1.0, grid_step)
}

/// `C(q) = max_p I(p, q)`.
pub fn capacity(model: &ChannelModel, q: f64) -> Result<f64, InfoError> {
    capacity_achieving_prior(model, q).map(|(_, c)| c)
}

/// Maximizing input prior and the capacity at query size `q`.
pub fn capacity_achieving_prior(model: &ChannelModel, q: f64) -> Result<(f64, f64), InfoError> {
    match model.kind() {
        ChannelKind::LinearBsc { .. } => {
            if !(0.0..=1.0).contains(&q) {
                return Err(InfoError::Domain {
                    name: "q",
                    value: q,
                    domain: "[0, 1]",
                });
            }
            let p = model.effective_crossover(q).unwrap();
            Ok((0.5, 1.0 - h2(p)))
        }
        ChannelKind::GaussianPair { .. } => golden_max(|p| mutual_information(p, q, model), 0.0, 1.0, PRIOR_TOL),
    }
}

/// `(q, I(q, q))` on a uniform grid over [0, 1/2].
pub fn mi_curve(model: &ChannelModel, grid_step: f64) -> Result<Vec<(f64, f64)>, InfoError> {
    mi_curve_range(model, 0.0, MAX_QUERY, grid_step)
}

/// `(q, I(q, q))` on a uniform grid over `[lo, hi]`.
pub fn mi_curve_range(model: &ChannelModel, lo: f64, hi: f64, grid_step: f64) -> Result<Vec<(f64, f64)>, InfoError> {
    if !(0.0 <= lo && lo <= hi && hi <= 1.0 && grid_step > 0.0) {
        return Err(InfoError::Domain {
            name: "grid_step",
            value: grid_step,
            domain: "positive, with 0 <= lo <= hi <= 1",
        });
    }
    grid(lo, hi, grid_step)
        .into_iter()
        .map(|q| mutual_information(q, q, model).map(|v| (q, v)))
        .collect()
}
