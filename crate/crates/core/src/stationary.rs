//! Monte Carlo simulation of stationary-target search schemes.
//!
//! Every trial places a target, then runs blocks of queries until the
//! scheme accepts an estimate (or gives up after `max_restarts` blocks).
//! Each (trial, block) pair owns its own random streams, so reports are
//! bit-identical for any number of threads.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channels::{ChannelModel, Observation};
use crate::codebook::{sensor_index, Codebook, CodebookError};
use crate::decode::{
    forney_from_scores, ml_decode, np_threshold, row_log_likelihoods, validation_test, Decision, Validation,
};
use crate::infotheory::{mutual_information, InfoError};
use crate::optimize::{optimal_query_size, scaled_optimum, DEFAULT_GRID_STEP};
use crate::stats::{mean_ci, wilson, Estimate};
use crate::stream::{derive_seed, stream, Purpose};

/// Number of target positions in a sweep; each is also tried at both edges of its bin.
pub const SWEEP_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("rate {rate} bits/query exceeds the scheme maximum {max}")]
    Infeasible { rate: f64, max: f64 },
    #[error(transparent)]
    Info(#[from] InfoError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error("resource guard: {0}")]
    ResourceGuard(String),
}

fn config_err<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Config(msg.into()))
}

/// Block length given directly or through the rate `log2(M) / N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockLength {
    Rate(f64),
    Queries(usize),
}

/// How the target position is chosen for each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Uniform,
    /// Cycles over [`SWEEP_POINTS`] positions, each at its centre and at
    /// both edges of its bin.
    Sweep,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub model: ChannelModel,
    pub delta: f64,
    pub length: BlockLength,
    /// Codebook prior; the optimal query size when absent.
    pub prior: Option<f64>,
    pub placement: Placement,
    pub trials: u64,
    pub seed: u64,
    /// Erasure threshold T in bits per query.
    pub forney_threshold: f64,
    /// Fraction of the block spent on validation.
    pub yi_lambda: f64,
    /// Validation LLR threshold in bits; Neyman-Pearson when absent.
    pub yi_threshold: Option<f64>,
    pub false_erase_target: f64,
    /// Coarse resolution of the two-phase scheme.
    pub alpha: f64,
    pub n1: Option<usize>,
    pub n2: Option<usize>,
    pub n3: Option<usize>,
    /// Prior of the zoom-phase codebook; the maximizer of `I(q, alpha q)` when absent.
    pub zoom_prior: Option<f64>,
    /// Redraw codebook columns whose weight fraction strays further than this from the prior.
    pub column_tolerance: Option<f64>,
    /// Blocks per trial before the trial is abandoned.
    pub max_restarts: u64,
}

impl SearchConfig {
    pub fn new(model: ChannelModel, delta: f64, length: BlockLength) -> Self {
        SearchConfig {
            model,
            delta,
            length,
            prior: None,
            placement: Placement::Uniform,
            trials: 1000,
            seed: 0,
            forney_threshold: 0.05,
            yi_lambda: 0.2,
            yi_threshold: None,
            false_erase_target: 1e-2,
            alpha: 0.1,
            n1: None,
            n2: None,
            n3: None,
            zoom_prior: None,
            column_tolerance: None,
            max_restarts: 1000,
        }
    }

    /// Number of sensors `round(1 / delta)`.
    pub fn sensors(&self) -> Result<usize, SimError> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return config_err(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        let m = (1.0 / self.delta).round() as usize;
        if m < 2 {
            return config_err(format!("delta = {} gives fewer than 2 sensors", self.delta));
        }
        Ok(m)
    }

    pub fn block_length(&self) -> Result<usize, SimError> {
        let m = self.sensors()?;
        match self.length {
            BlockLength::Queries(0) => config_err("block length must be positive"),
            BlockLength::Queries(n) => Ok(n),
            BlockLength::Rate(r) if r > 0.0 && r.is_finite() => Ok(((m as f64).log2() / r - 1e-9).ceil().max(1.0) as usize),
            BlockLength::Rate(r) => config_err(format!("rate {r} must be positive")),
        }
    }

    pub fn resolved_prior(&self) -> Result<f64, SimError> {
        match self.prior {
            Some(q) if q > 0.0 && q < 1.0 => Ok(q),
            Some(q) => config_err(format!("prior {q} must lie in (0, 1)")),
            None => Ok(optimal_query_size(&self.model, DEFAULT_GRID_STEP)?.q_star),
        }
    }

    fn validate_common(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return config_err("trials must be positive");
        }
        if self.max_restarts == 0 {
            return config_err("max_restarts must be positive");
        }
        if let Placement::Fixed(w) = self.placement {
            if !(0.0..1.0).contains(&w) {
                return config_err(format!("fixed position {w} must lie in [0, 1)"));
            }
        }
        if let Some(t) = self.column_tolerance {
            if !(t > 0.0) {
                return config_err(format!("column_tolerance {t} must be positive"));
            }
        }
        if !(self.false_erase_target > 0.0 && self.false_erase_target < 1.0) {
            return config_err(format!("false_erase_target {} must lie in (0, 1)", self.false_erase_target));
        }
        Ok(())
    }

    /// Target position of a trial.
    pub fn position(&self, trial: u64) -> f64 {
        match self.placement {
            Placement::Fixed(w) => w,
            Placement::Uniform => stream(self.seed, trial, 0, Purpose::Placement).random::<f64>(),
            Placement::Sweep => {
                let m = self.sensors().unwrap_or(2);
                sweep_position(trial, m)
            }
        }
    }
}

/// Position visited by trial `trial` of a sweep at resolution `1/m`.
pub fn sweep_position(trial: u64, m: usize) -> f64 {
    let k = (trial % (3 * SWEEP_POINTS as u64)) as usize;
    let centre = (k / 3) as f64 / SWEEP_POINTS as f64 + 0.5 / SWEEP_POINTS as f64;
    let bin = sensor_index(centre, m);
    match k % 3 {
        0 => centre,
        1 => bin as f64 / m as f64,
        _ => ((bin + 1) as f64 / m as f64).next_down(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scheme: String,
    pub trials: u64,
    /// Blocks run over all trials, including erased ones.
    pub blocks: u64,
    pub errors: u64,
    pub error_rate: Estimate,
    /// Erased blocks.
    pub erasures: u64,
    /// Erased blocks over all blocks.
    pub erasure_rate: Estimate,
    /// Queries until an estimate is accepted, averaged over trials.
    pub mean_stopping_time: Estimate,
    /// Queries per block.
    pub block_length: usize,
    /// Trials that hit `max_restarts` without an accepted estimate (counted as errors).
    pub abandoned: u64,
    /// Optional second error criterion (moving target: final position and velocity).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary_error_rate: Option<Estimate>,
    /// Largest realized query size; for the two-phase scheme, over the zoom phase only.
    pub max_query_size: f64,
    pub sensors: usize,
    /// Target resolution.
    pub delta: f64,
    pub prior: f64,
    pub config: serde_json::Value,
}

impl SimReport {
    /// `log2(1/delta) / E[tau]`.
    pub fn targeting_rate(&self) -> f64 {
        -self.delta.log2() / self.mean_stopping_time.value
    }
}

/// Integer tallies merged across trials.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Tally {
    pub trials: u64,
    pub blocks: u64,
    pub errors: u64,
    pub erasures: u64,
    pub abandoned: u64,
    pub secondary_errors: u64,
    pub tau_sum: u64,
    pub tau_sq: u128,
    pub max_q: f64,
}

impl Tally {
    pub(crate) fn merge(mut self, o: Tally) -> Tally {
        self.trials += o.trials;
        self.blocks += o.blocks;
        self.errors += o.errors;
        self.erasures += o.erasures;
        self.abandoned += o.abandoned;
        self.secondary_errors += o.secondary_errors;
        self.tau_sum += o.tau_sum;
        self.tau_sq += o.tau_sq;
        self.max_q = self.max_q.max(o.max_q);
        self
    }

    pub(crate) fn report(
        &self,
        scheme: &str,
        block_length: usize,
        sensors: usize,
        prior: f64,
        config: serde_json::Value,
        secondary: bool,
    ) -> SimReport {
        SimReport {
            scheme: scheme.to_string(),
            trials: self.trials,
            blocks: self.blocks,
            errors: self.errors,
            error_rate: wilson(self.errors, self.trials),
            erasures: self.erasures,
            erasure_rate: wilson(self.erasures, self.blocks),
            mean_stopping_time: mean_ci(self.tau_sum, self.tau_sq, self.trials),
            block_length,
            abandoned: self.abandoned,
            secondary_error_rate: secondary.then(|| wilson(self.secondary_errors, self.trials)),
            max_query_size: self.max_q,
            sensors,
            delta: 1.0 / sensors as f64,
            prior,
            config,
        }
    }
}

/// Outcome of one block.
enum Block {
    Accept { correct: bool },
    Erase,
}

/// Runs blocks until acceptance and tallies one trial.
fn restart_loop(max_restarts: u64, block_len: usize, mut run_block: impl FnMut(u64) -> Block) -> Tally {
    let mut t = Tally {
        trials: 1,
        ..Tally::default()
    };
    for b in 0..max_restarts {
        t.blocks += 1;
        match run_block(b) {
            Block::Accept { correct } => {
                t.errors += (!correct) as u64;
                let tau = t.blocks * block_len as u64;
                t.tau_sum = tau;
                t.tau_sq = tau as u128 * tau as u128;
                return t;
            }
            Block::Erase => t.erasures += 1,
        }
    }
    t.abandoned = 1;
    t.errors = 1;
    let tau = t.blocks * block_len as u64;
    t.tau_sum = tau;
    t.tau_sq = tau as u128 * tau as u128;
    t
}

fn run_trials(trials: u64, f: impl Fn(u64) -> Tally + Sync + Send) -> Tally {
    (0..trials).into_par_iter().map(f).reduce(Tally::default, Tally::merge)
}

fn make_codebook(rows: usize, cols: usize, q: f64, seed: u64, tol: Option<f64>) -> Result<Codebook, CodebookError> {
    match tol {
        Some(t) => Codebook::generate_concentrated(rows, cols, q, seed, t),
        None => Codebook::generate(rows, cols, q, seed),
    }
}

/// Channel outputs for a target answering with row `row`; each query is
/// observed at its realized size `scale * weight / M`.
fn observe<R: Rng>(cb: &Codebook, row: Option<usize>, model: &ChannelModel, scale: f64, rng: &mut R) -> (Vec<Observation>, f64) {
    let mut max_q: f64 = 0.0;
    let y = (0..cb.cols())
        .map(|n| {
            let x = row.is_some_and(|r| cb.bit(r, n));
            let q = scale * cb.query_size(n);
            max_q = max_q.max(q);
            model.sample_output(x, q, rng)
        })
        .collect();
    (y, max_q)
}

/// Validation observations of the probed interval of size `delta`.
fn probe<R: Rng>(model: &ChannelModel, hit: bool, delta: f64, len: usize, rng: &mut R) -> Vec<Observation> {
    (0..len).map(|_| model.sample_output(hit, delta, rng)).collect()
}

/// Search phase shared by the non-adaptive and validation schemes: draws
/// the codebook for (trial, block), observes and decodes. Returns
/// (decoded sensor, true sensor, max query size).
fn search_block(
    cfg: &SearchConfig,
    m: usize,
    n: usize,
    prior: f64,
    w: f64,
    trial: u64,
    block: u64,
) -> Result<(usize, usize, f64, Codebook, Vec<Observation>), CodebookError> {
    let cb = make_codebook(
        m,
        n,
        prior,
        derive_seed(cfg.seed, trial, block, Purpose::Codebook),
        cfg.column_tolerance,
    )?;
    let truth = sensor_index(w, m);
    let mut rng = stream(cfg.seed, trial, block, Purpose::Noise);
    let (y, max_q) = observe(&cb, Some(cb.row_of_sensor(truth)), &cfg.model, 1.0, &mut rng);
    let decoded = cb.sensor_of_row(ml_decode(&cb, &y, &cfg.model, prior));
    Ok((decoded, truth, max_q, cb, y))
}

fn echo(cfg: &SearchConfig) -> serde_json::Value {
    serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null)
}

/// Non-adaptive search: one block of `N` queries, ML decoding.
pub fn run_nonadaptive(cfg: &SearchConfig) -> Result<SimReport, SimError> {
    cfg.validate_common()?;
    let m = cfg.sensors()?;
    let n = cfg.block_length()?;
    let prior = cfg.resolved_prior()?;
    // surface codebook errors before the parallel section
    Codebook::generate(m, n, prior, 0)?;
    let tally = run_trials(cfg.trials, |trial| {
        let w = cfg.position(trial);
        let (decoded, truth, max_q, _, _) = search_block(cfg, m, n, prior, w, trial, 0).expect("validated codebook");
        Tally {
            trials: 1,
            blocks: 1,
            errors: (decoded != truth) as u64,
            tau_sum: n as u64,
            tau_sq: (n * n) as u128,
            max_q,
            ..Tally::default()
        }
    });
    Ok(tally.report("nonadaptive", n, m, prior, echo(cfg), false))
}

/// Erasure decoding with threshold `forney_threshold`; erased blocks restart.
pub fn run_forney(cfg: &SearchConfig) -> Result<SimReport, SimError> {
    cfg.validate_common()?;
    let m = cfg.sensors()?;
    let n = cfg.block_length()?;
    let prior = cfg.resolved_prior()?;
    if !cfg.forney_threshold.is_finite() {
        return config_err("forney_threshold must be finite");
    }
    Codebook::generate(m, n, prior, 0)?;
    let tally = run_trials(cfg.trials, |trial| {
        let w = cfg.position(trial);
        let truth = sensor_index(w, m);
        let mut tq: f64 = 0.0;
        let mut t = restart_loop(cfg.max_restarts, n, |block| {
            let cb = make_codebook(
                m,
                n,
                prior,
                derive_seed(cfg.seed, trial, block, Purpose::Codebook),
                cfg.column_tolerance,
            )
            .expect("validated codebook");
            let mut rng = stream(cfg.seed, trial, block, Purpose::Noise);
            let (y, bq) = observe(&cb, Some(cb.row_of_sensor(truth)), &cfg.model, 1.0, &mut rng);
            tq = tq.max(bq);
            let scores = row_log_likelihoods(&cb, &y, &cfg.model, prior);
            match forney_from_scores(&scores, n, cfg.forney_threshold) {
                Decision::Decoded(r) => Block::Accept {
                    correct: cb.sensor_of_row(r) == truth,
                },
                Decision::Erasure => Block::Erase,
            }
        });
        t.max_q = tq;
        t
    });
    Ok(tally.report("forney", n, m, prior, echo(cfg), false))
}

/// Validation split `(search length, validation length)` of a block of `n`.
pub fn yi_split(n: usize, lambda: f64) -> (usize, usize) {
    let l = ((lambda * n as f64).round() as usize).min(n.saturating_sub(1));
    (n - l, l)
}

/// Search with `(1 - lambda) N` queries, then `lambda N` queries probing
/// the estimated bin; an erased validation restarts the block.
pub fn run_yamamoto_itoh(cfg: &SearchConfig) -> Result<SimReport, SimError> {
    cfg.validate_common()?;
    if !(0.0..1.0).contains(&cfg.yi_lambda) {
        return config_err(format!("yi_lambda {} must lie in [0, 1)", cfg.yi_lambda));
    }
    let m = cfg.sensors()?;
    let n = cfg.block_length()?;
    let prior = cfg.resolved_prior()?;
    let (n_search, n_val) = yi_split(n, cfg.yi_lambda);
    let delta = 1.0 / m as f64;
    let threshold = match cfg.yi_threshold {
        Some(t) => t,
        None => np_threshold(&cfg.model, delta, n_val, cfg.false_erase_target),
    };
    Codebook::generate(m, n_search, prior, 0)?;
    let tally = run_trials(cfg.trials, |trial| {
        let w = cfg.position(trial);
        let mut tq: f64 = 0.0;
        let mut t = restart_loop(cfg.max_restarts, n, |block| {
            let (decoded, truth, bq, _, _) =
                search_block(cfg, m, n_search, prior, w, trial, block).expect("validated codebook");
            tq = tq.max(bq.max(if n_val > 0 { delta } else { 0.0 }));
            let mut rng = stream(cfg.seed, trial, block, Purpose::Validation);
            let y = probe(&cfg.model, decoded == truth, delta, n_val, &mut rng);
            match validation_test(&y, &cfg.model, delta, threshold) {
                Validation::Accept => Block::Accept {
                    correct: decoded == truth,
                },
                Validation::Erase => Block::Erase,
            }
        });
        t.max_q = tq;
        t
    });
    Ok(tally.report("yamamoto-itoh", n, m, prior, echo(cfg), false))
}

/// Resolved parameters of the two-phase scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhasePlan {
    pub coarse_bins: usize,
    pub zoom_bins: usize,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub coarse_prior: f64,
    pub zoom_prior: f64,
    /// `max_q I(q, alpha q)`, the largest usable zoom-phase rate.
    pub zoom_capacity: f64,
    pub threshold: f64,
}

/// Resolves the two-phase parameters, filling unset lengths with rate
/// back-offs from the relevant information quantities.
pub fn plan_two_phase(cfg: &SearchConfig) -> Result<TwoPhasePlan, SimError> {
    let m = cfg.sensors()?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 0.5) {
        return config_err(format!("alpha {} must lie in (0, 1/2)", cfg.alpha));
    }
    let coarse = (1.0 / cfg.alpha).round() as usize;
    if coarse < 2 || m % coarse != 0 {
        return config_err(format!(
            "1/alpha = {coarse} coarse bins must divide the {m} sensors of the target resolution"
        ));
    }
    let zoom = m / coarse;
    if zoom < 2 {
        return config_err("delta must be finer than alpha");
    }
    let coarse_prior = cfg.resolved_prior()?;
    let alpha_eff = 1.0 / coarse as f64;
    let scaled = scaled_optimum(&cfg.model, alpha_eff, DEFAULT_GRID_STEP)?;
    let zoom_prior = match cfg.zoom_prior {
        Some(q) if q > 0.0 && q < 1.0 => q,
        Some(q) => return config_err(format!("zoom_prior {q} must lie in (0, 1)")),
        None => scaled.q_star,
    };
    let i1 = mutual_information(coarse_prior, coarse_prior, &cfg.model)?;
    let i2 = mutual_information(zoom_prior, alpha_eff * zoom_prior, &cfg.model)?;
    let n1 = cfg.n1.unwrap_or(((coarse as f64).log2() / (0.5 * i1)).ceil() as usize);
    let n2 = cfg.n2.unwrap_or(((zoom as f64).log2() / (0.75 * i2)).ceil() as usize);
    let delta = 1.0 / m as f64;
    let n3 = cfg.n3.unwrap_or_else(|| {
        let c1 = cfg.model.divergence_c1(delta);
        if c1.is_finite() && c1 > 0.0 {
            ((1.0 / cfg.false_erase_target).log2() / c1).ceil().max(1.0) as usize
        } else {
            1
        }
    });
    if n1 == 0 || n2 == 0 {
        return config_err("phase lengths n1 and n2 must be positive");
    }
    let rate2 = (zoom as f64).log2() / n2 as f64;
    if rate2 >= scaled.value {
        return Err(SimError::Infeasible {
            rate: rate2,
            max: scaled.value,
        });
    }
    let threshold = match cfg.yi_threshold {
        Some(t) => t,
        None => np_threshold(&cfg.model, delta, n3, cfg.false_erase_target),
    };
    Ok(TwoPhasePlan {
        coarse_bins: coarse,
        zoom_bins: zoom,
        n1,
        n2,
        n3,
        coarse_prior,
        zoom_prior,
        zoom_capacity: scaled.value,
        threshold,
    })
}

/// Coarse search to resolution alpha, zoomed search inside the located
/// alpha-interval, then validation of the final delta-interval; an erased
/// validation restarts all three phases.
pub fn run_two_phase(cfg: &SearchConfig) -> Result<SimReport, SimError> {
    cfg.validate_common()?;
    let plan = plan_two_phase(cfg)?;
    let m = cfg.sensors()?;
    let delta = 1.0 / m as f64;
    let alpha = 1.0 / plan.coarse_bins as f64;
    let block_len = plan.n1 + plan.n2 + plan.n3;
    Codebook::generate(plan.coarse_bins, plan.n1, plan.coarse_prior, 0)?;
    Codebook::generate(plan.zoom_bins, plan.n2, plan.zoom_prior, 0)?;
    let tally = run_trials(cfg.trials, |trial| {
        let w = cfg.position(trial);
        let fine = sensor_index(w, m);
        let coarse_truth = fine / plan.zoom_bins;
        let mut tq: f64 = 0.0;
        let mut t = restart_loop(cfg.max_restarts, block_len, |block| {
            let mut rng = stream(cfg.seed, trial, block, Purpose::Noise);
            let cb1 = make_codebook(
                plan.coarse_bins,
                plan.n1,
                plan.coarse_prior,
                derive_seed(cfg.seed, trial, block, Purpose::Codebook),
                cfg.column_tolerance,
            )
            .expect("validated codebook");
            let (y1, _) = observe(&cb1, Some(cb1.row_of_sensor(coarse_truth)), &cfg.model, 1.0, &mut rng);
            let coarse_hat = cb1.sensor_of_row(ml_decode(&cb1, &y1, &cfg.model, plan.coarse_prior));

            let cb2 = make_codebook(
                plan.zoom_bins,
                plan.n2,
                plan.zoom_prior,
                derive_seed(cfg.seed, trial, block, Purpose::ZoomCodebook),
                cfg.column_tolerance,
            )
            .expect("validated codebook");
            let mut rng2 = stream(cfg.seed, trial, block, Purpose::ZoomNoise);
            // outside the located interval every zoom query misses
            let row = (coarse_hat == coarse_truth).then(|| cb2.row_of_sensor(fine % plan.zoom_bins));
            let (y2, q2) = observe(&cb2, row, &cfg.model, alpha, &mut rng2);
            tq = tq.max(q2);
            let zoom_prior_size = alpha * plan.zoom_prior;
            let sub_hat = cb2.sensor_of_row(ml_decode(&cb2, &y2, &cfg.model, zoom_prior_size));
            let fine_hat = coarse_hat * plan.zoom_bins + sub_hat;

            let mut rng3 = stream(cfg.seed, trial, block, Purpose::Validation);
            let y3 = probe(&cfg.model, fine_hat == fine, delta, plan.n3, &mut rng3);
            match validation_test(&y3, &cfg.model, delta, plan.threshold) {
                Validation::Accept => Block::Accept {
                    correct: fine_hat == fine,
                },
                Validation::Erase => Block::Erase,
            }
        });
        t.max_q = tq;
        t
    });
    let mut report = tally.report("two-phase", block_len, m, plan.coarse_prior, echo(cfg), false);
    if let serde_json::Value::Object(map) = &mut report.config {
        map.insert("plan".into(), serde_json::to_value(plan).unwrap_or_default());
    }
    Ok(report)
}
