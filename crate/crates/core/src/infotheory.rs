//! Entropies, mutual information, Gallager-type functions and the error
//! exponents of the search schemes. Everything is in bits.

use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelKind, ChannelModel};
use crate::fmt::g12;
use crate::optimize::{capacity, optimal_query_size, DEFAULT_GRID_STEP};
use crate::quad::{self, GaussLegendre, QuadratureError};
use crate::search::grid_then_golden;

/// Absolute tolerance (bits) for quadrature-based mutual information.
pub const MI_TOLERANCE: f64 = 1e-8;
/// Half-width of the Gaussian integration window in standard deviations.
pub const GAUSS_WINDOW: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InfoError {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

fn domain(name: &'static str, value: f64, ok: bool, domain: &'static str) -> Result<(), InfoError> {
    if ok {
        Ok(())
    } else {
        Err(InfoError::Domain { name, value, domain })
    }
}

fn check_prob(name: &'static str, p: f64) -> Result<(), InfoError> {
    domain(name, p, (0.0..=1.0).contains(&p), "[0, 1]")
}

/// `h2(p)` with `0 log 0 = 0`.
pub fn binary_entropy(p: f64) -> Result<f64, InfoError> {
    check_prob("p", p)?;
    Ok(h2(p))
}

/// Unchecked binary entropy; callers guarantee `p` in [0, 1].
pub fn h2(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * p.log2() - (1.0 - p) * (1.0 - p).log2()
}

/// `D(Bern(a) || Bern(b))` in bits.
pub fn binary_kl(a: f64, b: f64) -> f64 {
    fn term(x: f64, y: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else if y == 0.0 {
            f64::INFINITY
        } else {
            x * (x / y).log2()
        }
    }
    term(a, b) + term(1.0 - a, 1.0 - b)
}

/// Binary convolution `a(1-b) + (1-a)b`.
pub fn bconv(a: f64, b: f64) -> f64 {
    a * (1.0 - b) + (1.0 - a) * b
}

fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Integration window for the Gaussian pair at query size `q`.
fn gaussian_window(model: &ChannelModel, q: f64) -> (f64, f64, f64, f64) {
    let (m1, v1) = model.gaussian_params(true, q).unwrap();
    let (m0, v0) = model.gaussian_params(false, q).unwrap();
    let smax = v1.max(v0).sqrt();
    let smin = v1.min(v0).sqrt();
    (m1.min(m0) - GAUSS_WINDOW * smax, m1.max(m0) + GAUSS_WINDOW * smax, smin, smax)
}

/// `I(X;Y)` with `X ~ Bern(p_input)` observed through `P_{q_size}`.
pub fn mutual_information(p_input: f64, q_size: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    check_prob("p_input", p_input)?;
    check_prob("q_size", q_size)?;
    if p_input == 0.0 || p_input == 1.0 {
        return Ok(0.0);
    }
    match model.kind() {
        ChannelKind::LinearBsc { .. } => {
            let eps = model.effective_crossover(q_size).unwrap();
            Ok((h2(bconv(p_input, eps)) - h2(eps)).max(0.0))
        }
        ChannelKind::GaussianPair { .. } => {
            let (lo, hi, _, _) = gaussian_window(model, q_size);
            let lp1 = p_input.ln();
            let lp0 = (1.0 - p_input).ln();
            let f = |y: f64| {
                let l1 = model.ln_density(y, true, q_size);
                let l0 = model.ln_density(y, false, q_size);
                let lm = lse2(lp1 + l1, lp0 + l0);
                p_input * l1.exp() * (l1 - lm) + (1.0 - p_input) * l0.exp() * (l0 - lm)
            };
            let nats = quad::integrate(f, lo, hi, MI_TOLERANCE * LN_2)?;
            Ok((nats / LN_2).max(0.0))
        }
    }
}

/// Output alphabet tabulated as `(weight, ln P(y|1), ln P(y|0))` triples:
/// exact for the binary channel, a composite Gauss-Legendre rule for the
/// Gaussian pair.
#[derive(Debug, Clone)]
pub struct OutputTable {
    points: Vec<(f64, f64, f64)>,
}

/// Panel width of the composite rule as a fraction of the narrower standard deviation.
const PANEL_SIGMA: f64 = 0.5;
const PANEL_ORDER: usize = 10;
const MAX_PANELS: usize = 20_000;

impl OutputTable {
    pub fn new(model: &ChannelModel, q: f64) -> Self {
        match model.kind() {
            ChannelKind::LinearBsc { .. } => {
                let p = model.effective_crossover(q).unwrap();
                let (a, b) = ((1.0 - p).ln(), p.ln());
                OutputTable {
                    points: vec![(1.0, a, b), (1.0, b, a)],
                }
            }
            ChannelKind::GaussianPair { .. } => {
                let (lo, hi, smin, _) = gaussian_window(model, q);
                let panels = (((hi - lo) / (PANEL_SIGMA * smin)).ceil() as usize).clamp(1, MAX_PANELS);
                let gl = GaussLegendre::new(PANEL_ORDER);
                let h = (hi - lo) / panels as f64;
                let mut points = Vec::with_capacity(panels * PANEL_ORDER);
                for k in 0..panels {
                    let mid = lo + (k as f64 + 0.5) * h;
                    for (&x, &w) in gl.nodes().iter().zip(gl.weights()) {
                        let y = mid + 0.5 * h * x;
                        points.push((
                            0.5 * h * w,
                            model.ln_density(y, true, q),
                            model.ln_density(y, false, q),
                        ));
                    }
                }
                OutputTable { points }
            }
        }
    }

    /// Gallager function for input prior `prior = P(X = 1)`.
    pub fn gallager_e0(&self, rho: f64, prior: f64) -> f64 {
        let s = 1.0 + rho;
        let (lq1, lq0) = (prior.ln(), (1.0 - prior).ln());
        let total: f64 = self
            .points
            .iter()
            .map(|&(w, l1, l0)| w * (s * lse2(lq1 + l1 / s, lq0 + l0 / s)).exp())
            .sum();
        -total.log2()
    }

    /// Decision-feedback function, with input law `Q(1) = prior`:
    /// `sum_x Q(x) sum_y P(y|x) [log P(y|x) - rho log sum_x' Q(x') P(y|x')^(1/rho)]`.
    pub fn forney_e0(&self, rho: f64, prior: f64) -> f64 {
        let (lq1, lq0) = (prior.ln(), (1.0 - prior).ln());
        let mut total = 0.0;
        for &(w, l1, l0) in &self.points {
            let inner = rho * lse2(lq1 + l1 / rho, lq0 + l0 / rho);
            if prior > 0.0 && l1 > f64::NEG_INFINITY {
                total += w * prior * l1.exp() * (l1 - inner);
            }
            if prior < 1.0 && l0 > f64::NEG_INFINITY {
                total += w * (1.0 - prior) * l0.exp() * (l0 - inner);
            }
        }
        total / LN_2
    }
}

/// Gallager `E0(rho)` for the channel at query size `q` with input prior `prior`.
pub fn gallager_e0(rho: f64, q: f64, prior: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    domain("rho", rho, (0.0..=1.0).contains(&rho), "[0, 1]")?;
    check_prob("q", q)?;
    check_prob("prior", prior)?;
    Ok(OutputTable::new(model, q).gallager_e0(rho, prior))
}

/// Decision-feedback `E0(rho)` used by the erasure exponent; `rho >= 1`.
pub fn forney_e0(rho: f64, q: f64, prior: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    domain("rho", rho, rho >= 1.0 && rho.is_finite(), "[1, inf)")?;
    check_prob("q", q)?;
    check_prob("prior", prior)?;
    Ok(OutputTable::new(model, q).forney_e0(rho, prior))
}

/// Parameters of the rho maximizations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RhoSearch {
    pub grid_step: f64,
    /// Upper end of the decision-feedback rho range.
    pub rho_max: f64,
}

impl Default for RhoSearch {
    fn default() -> Self {
        RhoSearch {
            grid_step: 1e-4,
            rho_max: 20.0,
        }
    }
}

/// A maximized exponent together with its maximizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPoint {
    pub exponent: f64,
    pub rho: f64,
    /// Maximizer sits at the top of the rho range.
    pub boundary_hit: bool,
}

impl ExponentPoint {
    fn zero(rho: f64) -> Self {
        ExponentPoint {
            exponent: 0.0,
            rho,
            boundary_hit: false,
        }
    }
}

/// `max_{0<=rho<=1} E0(rho) - rho R`, clamped at zero.
pub fn random_coding_exponent(
    rate: f64,
    q: f64,
    prior: f64,
    model: &ChannelModel,
    search: &RhoSearch,
) -> Result<ExponentPoint, InfoError> {
    domain("R", rate, rate >= 0.0, "[0, inf)")?;
    check_prob("q", q)?;
    check_prob("prior", prior)?;
    if rate >= mutual_information(prior, q, model)? {
        return Ok(ExponentPoint::zero(0.0));
    }
    let table = OutputTable::new(model, q);
    let m = grid_then_golden(
        |rho| Ok::<_, InfoError>(table.gallager_e0(rho, prior) - rho * rate),
        0.0,
        1.0,
        search.grid_step,
    )?;
    Ok(ExponentPoint {
        exponent: m.value.max(0.0),
        rho: m.arg,
        boundary_hit: m.at_upper_edge() && !m.refined,
    })
}

/// Decision-feedback exponent `max_{1<=rho<=rho_max} E0F(rho) - rho R` at
/// query size and prior `q_star`; zero for `R >= I(q*, q*)`.
pub fn forney_exponent(
    rate: f64,
    q_star: f64,
    model: &ChannelModel,
    search: &RhoSearch,
) -> Result<ExponentPoint, InfoError> {
    domain("R", rate, rate >= 0.0, "[0, inf)")?;
    check_prob("q_star", q_star)?;
    domain("rho_max", search.rho_max, search.rho_max > 1.0, "(1, inf)")?;
    if rate >= mutual_information(q_star, q_star, model)? {
        return Ok(ExponentPoint::zero(1.0));
    }
    let table = OutputTable::new(model, q_star);
    let m = grid_then_golden(
        |rho| Ok::<_, InfoError>(table.forney_e0(rho, q_star) - rho * rate),
        1.0,
        search.rho_max,
        search.grid_step,
    )?;
    Ok(ExponentPoint {
        exponent: m.value.max(0.0),
        rho: m.arg,
        boundary_hit: m.at_upper_edge() && !m.refined,
    })
}

/// Validation exponent `C1(validation_q) (1 - R / I(q*, q*))`, clamped at zero.
pub fn yi_exponent(rate: f64, q_star: f64, validation_q: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    domain("R", rate, rate >= 0.0, "[0, inf)")?;
    check_prob("q_star", q_star)?;
    check_prob("validation_q", validation_q)?;
    let i = mutual_information(q_star, q_star, model)?;
    if rate >= i {
        return Ok(0.0);
    }
    Ok(model.divergence_c1(validation_q) * (1.0 - rate / i))
}

/// Burnashev-type bound `C1(q) (1 - R / C(q))` for the fixed channel `P_q`, clamped at zero.
pub fn burnashev_bound(rate: f64, q: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    domain("R", rate, rate >= 0.0, "[0, inf)")?;
    check_prob("q", q)?;
    let c = capacity(model, q)?;
    if rate >= c {
        return Ok(0.0);
    }
    Ok(model.divergence_c1(q) * (1.0 - rate / c))
}

/// Two-phase tradeoff `C1(0) (1 - R / C(0))`, clamped at zero.
pub fn two_phase_tradeoff(rate: f64, model: &ChannelModel) -> Result<f64, InfoError> {
    burnashev_bound(rate, 0.0, model)
}

/// Moving-target rate bounds `(I(q,q)(1 - 2 v_max) / 2, I(q,q) / 2)`.
pub fn moving_rate_bounds(q: f64, v_max: f64, model: &ChannelModel) -> Result<(f64, f64), InfoError> {
    domain("v_max", v_max, v_max > 0.0 && v_max <= 0.5, "(0, 1/2]")?;
    let i = mutual_information(q, q, model)?;
    Ok((0.5 * i * (1.0 - 2.0 * v_max), 0.5 * i))
}

/// Scheme whose exponent an [`ExponentCurve`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeTag {
    RandomCoding,
    Forney,
    YamamotoItoh,
    TwoPhaseBurnashev,
}

impl fmt::Display for SchemeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeTag::RandomCoding => "random_coding",
            SchemeTag::Forney => "forney",
            SchemeTag::YamamotoItoh => "yamamoto_itoh",
            SchemeTag::TwoPhaseBurnashev => "two_phase_burnashev",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentCurve {
    pub rate_grid: Vec<f64>,
    pub exponent_values: Vec<f64>,
    pub scheme_tag: SchemeTag,
}

impl ExponentCurve {
    /// Evaluates a scheme on `rates`. The random-coding curve uses the
    /// optimal query size as both the channel argument and the prior, and
    /// the validation curve validates at query size zero.
    pub fn evaluate(
        scheme: SchemeTag,
        rates: &[f64],
        model: &ChannelModel,
        search: &RhoSearch,
    ) -> Result<Self, InfoError> {
        let q_star = optimal_query_size(model, DEFAULT_GRID_STEP)?.q_star;
        let exponent_values = rates
            .iter()
            .map(|&r| match scheme {
                SchemeTag::RandomCoding => random_coding_exponent(r, q_star, q_star, model, search).map(|e| e.exponent),
                SchemeTag::Forney => forney_exponent(r, q_star, model, search).map(|e| e.exponent),
                SchemeTag::YamamotoItoh => yi_exponent(r, q_star, 0.0, model),
                SchemeTag::TwoPhaseBurnashev => two_phase_tradeoff(r, model),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ExponentCurve {
            rate_grid: rates.to_vec(),
            exponent_values,
            scheme_tag: scheme,
        })
    }

    /// Long-format CSV with header `rate,exponent,scheme_tag`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rate,exponent,scheme_tag\n");
        for (r, e) in self.rate_grid.iter().zip(&self.exponent_values) {
            out.push_str(&format!("{},{},{}\n", g12(*r), g12(*e), self.scheme_tag));
        }
        out
    }
}
