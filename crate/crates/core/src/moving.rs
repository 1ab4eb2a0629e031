//! Moving target on the circle: quantized trajectories, their enumeration
//! and intersection counts, ML trajectory decoding and Monte Carlo search.
//!
//! The circle is cut into `M = N / delta` sensors of width `delta / N`.
//! A trajectory starting at the centre of sensor `j` with velocity `v`
//! visits sensor `floor(j + 1/2 + M v n) mod M` at query `n = 0..N`.
//! For fixed `n` the sensor only changes when `M v n + 1/2` crosses an
//! integer, i.e. at the critical velocities `(2c + 1) / (2 M n)`, so the
//! distinct paths are exactly the intervals between consecutive critical
//! velocities. Shifting the start by one sensor shifts every path entry by
//! one, so only paths from sensor 0 are stored.

use std::cmp::Ordering;
use std::fmt::Write as _;

use num_rational::Rational64;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channels::{ChannelKind, ChannelModel, Observation};
use crate::codebook::{sensor_index, Codebook};
use crate::optimize::{optimal_query_size, DEFAULT_GRID_STEP};
use crate::stationary::{sweep_position, Placement, SimError, SimReport, Tally};
use crate::stream::{derive_seed, stream, Purpose};

/// Default cap on start sensors times candidate velocities.
pub const DEFAULT_ENUMERATION_CAP: u64 = 50_000_000;

fn config_err<T>(msg: impl Into<String>) -> Result<T, SimError> {
    Err(SimError::Config(msg.into()))
}

/// `min(|w - w'|, 1 - |w - w'|)` for positions in `[0, 1)`.
pub fn cyclic_distance(w: f64, w2: f64) -> f64 {
    let d = (w - w2).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Cyclic distance between sensor indices, in sensors.
pub fn sensor_distance(a: usize, b: usize, m: usize) -> usize {
    let d = a.abs_diff(b) % m;
    d.min(m - d)
}

/// Exact rational form of a velocity bound such as `0.1` or `0.25`.
pub fn rational_velocity(v: f64) -> Result<Rational64, SimError> {
    if !(0.0..=0.5).contains(&v) {
        return config_err(format!("v_max = {v} must lie in [0, 1/2]"));
    }
    Rational64::approximate_float(v).ok_or_else(|| SimError::Config(format!("v_max = {v} has no rational form")))
}

/// Sensor path of the trajectory from the centre of `start` at velocity `v`.
pub fn quantize(start: usize, v: Rational64, m: usize, n: usize) -> Vec<usize> {
    let (p, q) = (*v.numer() as i128, *v.denom() as i128);
    let (m, j) = (m as i128, start as i128);
    (0..n as i128)
        .map(|t| {
            let num = 2 * q * j + q + 2 * m * p * t;
            num.div_euclid(2 * q).rem_euclid(m) as usize
        })
        .collect()
}

/// Sensor path of an arbitrary (real-valued) trajectory.
pub fn true_path(w0: f64, v: f64, m: usize, n: usize) -> Vec<usize> {
    (0..n).map(|t| sensor_index(w0 + v * t as f64, m)).collect()
}

/// A start sensor and a velocity with the induced sensor path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedTrajectory {
    pub sensors: usize,
    pub start_sensor: usize,
    /// Circle fraction per query.
    pub velocity: Rational64,
    pub path: Vec<usize>,
}

impl QuantizedTrajectory {
    pub fn new(start_sensor: usize, velocity: Rational64, m: usize, n: usize) -> Self {
        QuantizedTrajectory {
            sensors: m,
            start_sensor,
            velocity,
            path: quantize(start_sensor, velocity, m, n),
        }
    }

    /// Centre of the start sensor.
    pub fn start_position(&self) -> f64 {
        (self.start_sensor as f64 + 0.5) / self.sensors as f64
    }

    pub fn velocity_f64(&self) -> f64 {
        self.velocity.to_f64().unwrap_or(f64::NAN)
    }

    /// Ordering used for tie-breaking: start sensor, then velocity.
    pub fn key_cmp(&self, other: &Self) -> Ordering {
        (self.start_sensor, self.velocity).cmp(&(other.start_sensor, other.velocity))
    }
}

/// Closeness of the underlying parameters: `|w0 - w0'|_c <= delta` and `|v - v'| <= delta / N`.
pub fn are_close_params(w0: f64, v: f64, w0b: f64, vb: f64, delta: f64, n: usize) -> bool {
    const SLACK: f64 = 1e-12;
    cyclic_distance(w0.rem_euclid(1.0), w0b.rem_euclid(1.0)) <= delta + SLACK && (v - vb).abs() <= delta / n as f64 + SLACK
}

pub fn are_close(t1: &QuantizedTrajectory, t2: &QuantizedTrajectory, delta: f64, n: usize) -> bool {
    are_close_params(
        t1.start_position(),
        t1.velocity_f64(),
        t2.start_position(),
        t2.velocity_f64(),
        delta,
        n,
    )
}

/// Exact closeness when `delta = N / M`: start sensors at most `N` apart and
/// velocities at most `1 / M` apart.
fn close_exact(d_sensors: usize, dv: Rational64, m: usize, n: usize) -> bool {
    d_sensors <= n && dv.abs() <= Rational64::new(1, m as i64)
}

/// Number of queries at which both trajectories sit in the same sensor.
pub fn count_intersections(t1: &QuantizedTrajectory, t2: &QuantizedTrajectory) -> usize {
    t1.path.iter().zip(&t2.path).filter(|(a, b)| a == b).count()
}

/// Velocities `[lo, hi]` sharing one path from sensor 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VelocityClass {
    pub lo: Rational64,
    /// Exclusive unless it equals `v_max`.
    pub hi: Rational64,
    /// Representative velocity: the midpoint of the class.
    pub velocity: Rational64,
    pub path: Vec<usize>,
}

/// All distinct quantized trajectories of a configuration, stored as
/// velocity classes from sensor 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub sensors: usize,
    pub queries: usize,
    pub v_max: Rational64,
    /// Sorted by velocity.
    pub classes: Vec<VelocityClass>,
    /// Candidate velocities examined per start sensor.
    pub candidates: usize,
}

/// Velocities in `(-v_max, v_max]` at which some path entry changes.
pub fn critical_velocities(m: usize, n: usize, v_max: Rational64) -> Vec<Rational64> {
    let mut out = Vec::new();
    for t in 1..n as i64 {
        let den = 2 * m as i64 * t;
        let reach = (v_max * den).ceil().to_integer() + 1;
        for odd in (-reach..=reach).filter(|k| k.rem_euclid(2) == 1) {
            let v = Rational64::new(odd, den);
            if v > -v_max && v <= v_max {
                out.push(v);
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

fn guard(m: usize, per_start: usize, cap: u64) -> Result<(), SimError> {
    let total = m as u64 * per_start as u64;
    if total > cap {
        return Err(SimError::ResourceGuard(format!(
            "{m} start sensors x {per_start} velocities = {total} exceeds the enumeration cap {cap}"
        )));
    }
    Ok(())
}

impl TrajectorySet {
    /// Exact enumeration over the intervals between critical velocities.
    pub fn exact(m: usize, n: usize, v_max: Rational64, cap: u64) -> Result<Self, SimError> {
        check_shape(m, n, v_max)?;
        let crit = critical_velocities(m, n, v_max);
        guard(m, crit.len() + 1, cap)?;
        let mut bounds = Vec::with_capacity(crit.len() + 2);
        if crit.first() != Some(&-v_max) {
            bounds.push(-v_max);
        }
        bounds.extend(crit.iter().copied());
        let mut classes: Vec<VelocityClass> = Vec::with_capacity(bounds.len());
        let mut seen = std::collections::HashSet::new();
        for (i, &lo) in bounds.iter().enumerate() {
            let hi = bounds.get(i + 1).copied().unwrap_or(v_max);
            let path = quantize(0, lo, m, n);
            if seen.insert(path.clone()) {
                let two = Rational64::from_integer(2);
                classes.push(VelocityClass {
                    lo,
                    hi,
                    velocity: (lo + hi) / two,
                    path,
                });
            }
        }
        Ok(TrajectorySet {
            sensors: m,
            queries: n,
            v_max,
            classes,
            candidates: bounds.len(),
        })
    }

    /// Enumeration over the velocity grid `-v_max + k * step`, `v_max` included.
    /// The representative of each path is its smallest grid velocity.
    pub fn on_grid(m: usize, n: usize, v_max: Rational64, step: Rational64, cap: u64) -> Result<Self, SimError> {
        check_shape(m, n, v_max)?;
        if step <= Rational64::zero() {
            return config_err("velocity grid step must be positive");
        }
        let steps = ((v_max * 2) / step).floor().to_integer() as usize;
        guard(m, steps + 2, cap)?;
        let mut vs: Vec<Rational64> = (0..=steps as i64).map(|k| -v_max + step * k).collect();
        if vs.last() != Some(&v_max) {
            vs.push(v_max);
        }
        let candidates = vs.len();
        let mut seen = std::collections::HashSet::new();
        let classes = vs
            .into_iter()
            .filter_map(|v| {
                let path = quantize(0, v, m, n);
                seen.insert(path.clone()).then_some(VelocityClass {
                    lo: v,
                    hi: v,
                    velocity: v,
                    path,
                })
            })
            .collect();
        Ok(TrajectorySet {
            sensors: m,
            queries: n,
            v_max,
            classes,
            candidates,
        })
    }

    /// Grid step `delta / (2 N^2) = 1 / (2 M N)`.
    pub fn default_grid_step(m: usize, n: usize) -> Rational64 {
        Rational64::new(1, 2 * (m * n) as i64)
    }

    /// Number of distinct trajectories.
    pub fn len(&self) -> usize {
        self.sensors * self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn trajectory(&self, start: usize, class: usize) -> QuantizedTrajectory {
        let c = &self.classes[class];
        QuantizedTrajectory {
            sensors: self.sensors,
            start_sensor: start,
            velocity: c.velocity,
            path: c.path.iter().map(|&s| (s + start) % self.sensors).collect(),
        }
    }

    /// All trajectories in (start sensor, velocity) order.
    pub fn trajectories(&self) -> Vec<QuantizedTrajectory> {
        (0..self.sensors)
            .flat_map(|j| (0..self.classes.len()).map(move |c| (j, c)))
            .map(|(j, c)| self.trajectory(j, c))
            .collect()
    }

    /// `(2 N v_max + 3) N^2 M^2`.
    pub fn count_bound(&self) -> f64 {
        count_bound(self.sensors, self.queries, self.v_max.to_f64().unwrap_or(f64::NAN))
    }
}

/// `(2 N v_max + 3) N^2 M^2`.
pub fn count_bound(m: usize, n: usize, v_max: f64) -> f64 {
    let (m, n) = (m as f64, n as f64);
    (2.0 * n * v_max + 3.0) * n * n * m * m
}

/// `ceil(2 N v_max)`.
pub fn intersection_bound(n: usize, v_max: Rational64) -> usize {
    (v_max * (2 * n as i64)).ceil().to_integer() as usize
}

fn check_shape(m: usize, n: usize, v_max: Rational64) -> Result<(), SimError> {
    if m < 2 || n < 1 {
        return config_err(format!("need at least 2 sensors and 1 query, got M = {m}, N = {n}"));
    }
    if v_max < Rational64::zero() || v_max > Rational64::new(1, 2) {
        return config_err(format!("v_max = {v_max} must lie in [0, 1/2]"));
    }
    Ok(())
}

/// Exhaustive enumeration of distinct trajectories, ordered by (start sensor, velocity).
pub fn enumerate_trajectories(cfg: &MovingConfig) -> Result<Vec<QuantizedTrajectory>, SimError> {
    Ok(cfg.trajectory_set()?.trajectories())
}

/// CSV with columns `start_sensor,velocity,path_hash`; velocity is an exact fraction.
pub fn trajectories_csv(ts: &[QuantizedTrajectory]) -> String {
    let mut out = String::from("start_sensor,velocity,path_hash\n");
    for t in ts {
        let _ = writeln!(out, "{},{},{:016x}", t.start_sensor, t.velocity, path_hash(&t.path));
    }
    out
}

/// 64-bit FNV-1a over the path entries.
pub fn path_hash(path: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &s in path {
        for b in (s as u64).to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Outcome of the counting and intersection checks for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub queries: usize,
    pub sensors: usize,
    pub v_max: f64,
    pub distinct: usize,
    pub count_bound: f64,
    pub count_ok: bool,
    /// Largest intersection count over far pairs (0 if there are none).
    pub max_far_intersections: usize,
    pub intersection_bound: usize,
    /// Unordered far pairs intersecting more than the bound.
    pub intersection_violations: u64,
    /// The same count when velocities are compared by the gap between
    /// their classes instead of the class midpoints.
    pub interval_violations: u64,
    pub far_pairs: u64,
    /// Widest velocity class, against `1/M + delta/N = 2/M`.
    pub max_class_width: f64,
    pub width_ok: bool,
}

impl AuditRow {
    pub fn ok(&self) -> bool {
        self.count_ok && self.intersection_violations == 0
    }
}

/// Exhaustive audit of one configuration.
///
/// A pair `(j1, a), (j2, b)` meets at query `t` iff
/// `p_b[t] - p_a[t] = j1 - j2 (mod M)`, so a per-class-pair histogram of
/// path differences gives every intersection count at once.
pub fn audit_config(m: usize, n: usize, v_max: Rational64, cap: u64) -> Result<AuditRow, SimError> {
    let set = TrajectorySet::exact(m, n, v_max, cap)?;
    let bound = intersection_bound(n, v_max);
    let cl = &set.classes;
    let (viol, far, worst, gap_viol) = (0..cl.len())
        .into_par_iter()
        .map(|a| {
            let mut hist = vec![0usize; m];
            let (mut viol, mut far, mut worst, mut gap_viol) = (0u64, 0u64, 0usize, 0u64);
            for b in 0..cl.len() {
                hist.iter_mut().for_each(|h| *h = 0);
                for (pa, pb) in cl[a].path.iter().zip(&cl[b].path) {
                    hist[(pb + m - pa) % m] += 1;
                }
                let dv = cl[a].velocity - cl[b].velocity;
                let gap = (cl[b].lo - cl[a].hi).max(cl[a].lo - cl[b].hi).max(Rational64::zero());
                for (d, &h) in hist.iter().enumerate() {
                    let ds = sensor_distance(d, 0, m);
                    if !close_exact(ds, dv, m, n) {
                        far += 1;
                        worst = worst.max(h);
                        viol += (h > bound) as u64;
                    }
                    if !close_exact(ds, gap, m, n) {
                        gap_viol += (h > bound) as u64;
                    }
                }
            }
            (viol, far, worst, gap_viol)
        })
        .reduce(|| (0, 0, 0, 0), |x, y| (x.0 + y.0, x.1 + y.1, x.2.max(y.2), x.3 + y.3));
    // ordered (a, b, d) triples count each unordered pair of trajectories
    // M times over start sensors and twice over order
    let width = cl.iter().map(|c| (c.hi - c.lo).to_f64().unwrap_or(0.0)).fold(0.0, f64::max);
    let v = v_max.to_f64().unwrap_or(f64::NAN);
    let cb = count_bound(m, n, v);
    Ok(AuditRow {
        queries: n,
        sensors: m,
        v_max: v,
        distinct: set.len(),
        count_bound: cb,
        count_ok: set.len() as f64 <= cb,
        max_far_intersections: worst,
        intersection_bound: bound,
        intersection_violations: viol * m as u64 / 2,
        interval_violations: gap_viol * m as u64 / 2,
        far_pairs: far * m as u64 / 2,
        max_class_width: width,
        width_ok: width <= 2.0 / m as f64 + 1e-15,
    })
}

/// Audits every `(N, M)` with `1 <= N <= n_max`, `2 <= M <= m_max` for each velocity bound.
pub fn audit_bounds(n_max: usize, m_max: usize, v_maxes: &[f64], cap: u64) -> Result<Vec<AuditRow>, SimError> {
    let mut rows = Vec::new();
    for &v in v_maxes {
        let vr = rational_velocity(v)?;
        for n in 1..=n_max {
            for m in 2..=m_max {
                rows.push(audit_config(m, n, vr, cap)?);
            }
        }
    }
    Ok(rows)
}

pub fn audit_csv(rows: &[AuditRow]) -> String {
    let mut out = String::from(
        "queries,sensors,v_max,distinct,count_bound,count_ok,max_far_intersections,intersection_bound,intersection_violations,interval_violations,far_pairs,max_class_width,width_ok\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.queries,
            r.sensors,
            r.v_max,
            r.distinct,
            r.count_bound,
            r.count_ok,
            r.max_far_intersections,
            r.intersection_bound,
            r.intersection_violations,
            r.interval_violations,
            r.far_pairs,
            r.max_class_width,
            r.width_ok
        );
    }
    out
}

enum Scores {
    Count(Vec<Vec<u16>>),
    Real(Vec<Vec<f64>>),
}

/// Per-query score of every sensor, laid out twice so that a start offset
/// never needs a modulo.
fn score_table(cb: &Codebook, y: &[Observation], model: &ChannelModel, q_decode: f64) -> Option<Scores> {
    let m = cb.rows();
    let bit = |s: usize, t: usize| cb.bit(cb.row_of_sensor(s % m), t);
    match (model.kind(), y.iter().all(|o| o.as_bit().is_some())) {
        (ChannelKind::LinearBsc { .. }, true) => {
            let p = model.effective_crossover(q_decode).unwrap_or(0.5);
            if p >= 0.5 {
                return None;
            }
            Some(Scores::Count(
                (0..y.len())
                    .map(|t| {
                        let yt = y[t].as_bit().unwrap();
                        (0..2 * m).map(|s| (bit(s, t) != yt) as u16).collect()
                    })
                    .collect(),
            ))
        }
        _ => Some(Scores::Real(
            (0..y.len())
                .map(|t| {
                    let l1 = model.log_likelihood(y[t], true, q_decode).unwrap_or(f64::NEG_INFINITY);
                    let l0 = model.log_likelihood(y[t], false, q_decode).unwrap_or(f64::NEG_INFINITY);
                    (0..2 * m).map(|s| if bit(s, t) { l1 } else { l0 }).collect()
                })
                .collect(),
        )),
    }
}

/// ML trajectory: maximizes `sum_n log P(y_n | B[path[n], n])` over the
/// set, ties to the smallest (start sensor, velocity). For the BSC the
/// score is the mismatch count, so ties are exact.
pub fn ml_decode_trajectory(
    cb: &Codebook,
    y: &[Observation],
    model: &ChannelModel,
    q_decode: f64,
    set: &TrajectorySet,
) -> QuantizedTrajectory {
    let (start, class) = ml_decode_indices(cb, y, model, q_decode, set);
    set.trajectory(start, class)
}

/// `(start sensor, class index)` of the ML trajectory.
pub fn ml_decode_indices(
    cb: &Codebook,
    y: &[Observation],
    model: &ChannelModel,
    q_decode: f64,
    set: &TrajectorySet,
) -> (usize, usize) {
    let m = set.sensors;
    assert_eq!(cb.rows(), m, "codebook rows must equal the sensor count");
    assert_eq!(y.len(), set.queries, "observation length must equal the trajectory length");
    assert!(y.len() <= cb.cols());
    let mut best = (0usize, 0usize);
    match score_table(cb, y, model, q_decode) {
        None => {}
        Some(Scores::Count(tab)) => {
            let mut acc = vec![0u16; m];
            let mut best_score = u16::MAX;
            for (c, class) in set.classes.iter().enumerate() {
                acc.iter_mut().for_each(|a| *a = 0);
                for (t, &p) in class.path.iter().enumerate() {
                    acc.iter_mut().zip(&tab[t][p..p + m]).for_each(|(a, &d)| *a += d);
                }
                for (j, &s) in acc.iter().enumerate() {
                    if s < best_score || (s == best_score && j < best.0) {
                        best_score = s;
                        best = (j, c);
                    }
                }
            }
        }
        Some(Scores::Real(tab)) => {
            let mut acc = vec![0f64; m];
            let mut best_score = f64::NEG_INFINITY;
            let mut found = false;
            for (c, class) in set.classes.iter().enumerate() {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for (t, &p) in class.path.iter().enumerate() {
                    acc.iter_mut().zip(&tab[t][p..p + m]).for_each(|(a, &d)| *a += d);
                }
                for (j, &s) in acc.iter().enumerate() {
                    if !found || s > best_score || (s == best_score && j < best.0) {
                        found = true;
                        best_score = s;
                        best = (j, c);
                    }
                }
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovingConfig {
    pub model: ChannelModel,
    pub delta: f64,
    pub queries: usize,
    pub v_max: f64,
    /// Codebook prior; the optimal query size when absent.
    pub prior: Option<f64>,
    pub placement: Placement,
    pub trials: u64,
    pub seed: u64,
    pub enumeration_cap: u64,
}

impl MovingConfig {
    pub fn new(model: ChannelModel, delta: f64, queries: usize, v_max: f64) -> Self {
        MovingConfig {
            model,
            delta,
            queries,
            v_max,
            prior: None,
            placement: Placement::Sweep,
            trials: 1000,
            seed: 0,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }

    /// Resolution `delta = N / M` with `M = round(N 2^{N R})`, so that the
    /// rate `log2(1/delta) / N` is as close to `rate` as an integer `M` allows.
    pub fn from_rate(model: ChannelModel, rate: f64, queries: usize, v_max: f64) -> Result<Self, SimError> {
        if !(rate > 0.0 && rate.is_finite()) || queries == 0 {
            return config_err(format!("rate {rate} and queries {queries} must be positive"));
        }
        let m = (queries as f64 * (queries as f64 * rate).exp2()).round();
        if m > u32::MAX as f64 {
            return Err(SimError::ResourceGuard(format!("rate {rate} at N = {queries} needs {m} sensors")));
        }
        Ok(Self::new(model, queries as f64 / m, queries, v_max))
    }

    /// `M = N / delta`, required to be an integer.
    pub fn sensors(&self) -> Result<usize, SimError> {
        if self.queries == 0 {
            return config_err("queries must be positive");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return config_err(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        let exact = self.queries as f64 / self.delta;
        let m = exact.round();
        if (exact - m).abs() > 1e-9 * m.max(1.0) {
            return config_err(format!("N / delta = {exact} is not an integer"));
        }
        if m < 2.0 {
            return config_err(format!("N / delta = {m} gives fewer than 2 sensors"));
        }
        Ok(m as usize)
    }

    /// `log2(1/delta) / N`.
    pub fn rate(&self) -> f64 {
        -self.delta.log2() / self.queries as f64
    }

    pub fn resolved_prior(&self) -> Result<f64, SimError> {
        match self.prior {
            Some(q) if q > 0.0 && q < 1.0 => Ok(q),
            Some(q) => config_err(format!("prior {q} must lie in (0, 1)")),
            None => Ok(optimal_query_size(&self.model, DEFAULT_GRID_STEP)?.q_star),
        }
    }

    pub fn trajectory_set(&self) -> Result<TrajectorySet, SimError> {
        TrajectorySet::exact(self.sensors()?, self.queries, rational_velocity(self.v_max)?, self.enumeration_cap)
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.trials == 0 {
            return config_err("trials must be positive");
        }
        if let Placement::Fixed(w) = self.placement {
            if !(0.0..1.0).contains(&w) {
                return config_err(format!("fixed position {w} must lie in [0, 1)"));
            }
        }
        rational_velocity(self.v_max)?;
        self.sensors()?;
        Ok(())
    }

    /// Start position of a trial.
    pub fn position(&self, trial: u64) -> f64 {
        match self.placement {
            Placement::Fixed(w) => w,
            Placement::Uniform => rand::Rng::random::<f64>(&mut stream(self.seed, trial, 0, Purpose::Placement)),
            Placement::Sweep => sweep_position(trial, self.sensors().unwrap_or(2)),
        }
    }

    /// Velocity of a trial, uniform on `[-v_max, v_max]`.
    pub fn velocity(&self, trial: u64) -> f64 {
        let u: f64 = rand::Rng::random(&mut stream(self.seed, trial, 0, Purpose::Velocity));
        self.v_max * (2.0 * u - 1.0)
    }
}

/// Outcome of one moving-target trial.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingTrial {
    pub w0: f64,
    pub velocity: f64,
    pub decoded: QuantizedTrajectory,
    /// Decoded trajectory far from the truth.
    pub far: bool,
    /// `max(|W^_N - W_N|_c, |V^ - V|) > delta`.
    pub secondary_error: bool,
    /// `|W^_N - W_N|_c` at `N`.
    pub final_position_error: f64,
    pub max_query_size: f64,
}

/// Runs a single trial with fresh codebook bits and noise.
pub fn moving_trial(cfg: &MovingConfig, set: &TrajectorySet, prior: f64, trial: u64) -> Result<MovingTrial, SimError> {
    let (m, n) = (set.sensors, set.queries);
    let cb = Codebook::generate(m, n, prior, derive_seed(cfg.seed, trial, 0, Purpose::Codebook))?.without_dither();
    let w0 = cfg.position(trial);
    let v = cfg.velocity(trial);
    let path = true_path(w0, v, m, n);
    let mut rng = stream(cfg.seed, trial, 0, Purpose::Noise);
    let mut max_q: f64 = 0.0;
    let y: Vec<Observation> = path
        .iter()
        .enumerate()
        .map(|(t, &s)| {
            let q = cb.query_size(t);
            max_q = max_q.max(q);
            cfg.model.sample_output(cb.bit(s, t), q, &mut rng)
        })
        .collect();
    let decoded = ml_decode_trajectory(&cb, &y, &cfg.model, prior, set);
    let (wh, vh) = (decoded.start_position(), decoded.velocity_f64());
    let far = !are_close_params(wh, vh, w0, v, cfg.delta, n);
    let nf = n as f64;
    let final_err = cyclic_distance((wh + vh * nf).rem_euclid(1.0), (w0 + v * nf).rem_euclid(1.0));
    let secondary_error = final_err.max((vh - v).abs()) > cfg.delta;
    Ok(MovingTrial {
        w0,
        velocity: v,
        decoded,
        far,
        secondary_error,
        final_position_error: final_err,
        max_query_size: max_q,
    })
}

/// Non-adaptive moving-target search: one block of `N` queries per trial,
/// error when the decoded trajectory is far from the truth. The final
/// position and velocity criterion is reported as the secondary error rate.
pub fn run_moving_sim(cfg: &MovingConfig) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let set = cfg.trajectory_set()?;
    let prior = cfg.resolved_prior()?;
    let (m, n) = (set.sensors, set.queries);
    Codebook::generate(m, n, prior, 0)?;
    let tally = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let r = moving_trial(cfg, &set, prior, trial).expect("validated codebook");
            Tally {
                trials: 1,
                blocks: 1,
                errors: r.far as u64,
                secondary_errors: r.secondary_error as u64,
                tau_sum: n as u64,
                tau_sq: (n * n) as u128,
                max_q: r.max_query_size,
                ..Tally::default()
            }
        })
        .reduce(Tally::default, Tally::merge);
    let mut echo = serde_json::to_value(cfg).unwrap_or(serde_json::Value::Null);
    if let serde_json::Value::Object(map) = &mut echo {
        map.insert("trajectories".into(), set.len().into());
        map.insert("rate".into(), cfg.rate().into());
    }
    let mut report = tally.report("moving", n, m, prior, echo, true);
    report.delta = cfg.delta;
    Ok(report)
}
