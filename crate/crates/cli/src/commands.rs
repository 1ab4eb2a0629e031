//! Command implementations. Each returns the data files to write, keyed by
//! file name, so that nothing touches the disk until the run has succeeded.

use mdsearch::fmt::g12;
use mdsearch::infotheory::{burnashev_bound, mutual_information, ExponentCurve, RhoSearch, SchemeTag};
use mdsearch::moving::{audit_bounds, audit_csv, enumerate_trajectories, run_moving_sim, trajectories_csv};
use mdsearch::optimize::{capacity, mi_curve, optimal_query_size, scaled_optimum, DEFAULT_GRID_STEP};
use mdsearch::stationary::{
    run_forney, run_nonadaptive, run_two_phase, run_yamamoto_itoh, SearchConfig, SimError, SimReport,
};
use serde_json::json;

use crate::config::{Config, Loaded, Scheme};
use crate::error::CliError;

pub type Outputs = Vec<(String, String)>;

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Other(e.to_string()))
}

fn grid_step(l: &Loaded, c: &Config) -> Result<f64, CliError> {
    let step = c.sim.grid_step.unwrap_or(DEFAULT_GRID_STEP);
    if step > 0.0 && step <= 1e-2 {
        Ok(step)
    } else {
        Err(l.err_at("grid_step", format!("{step} must lie in (0, 0.01]")))
    }
}

pub fn mi_curve_cmd(l: &Loaded, c: &Config) -> Result<Outputs, CliError> {
    let model = l.channel(c)?;
    let mut csv = String::from("q,mi\n");
    for (q, i) in mi_curve(&model, grid_step(l, c)?)? {
        csv.push_str(&format!("{},{}\n", g12(q), g12(i)));
    }
    Ok(vec![("mi_curve.csv".into(), csv)])
}

pub fn optimize_cmd(l: &Loaded, c: &Config) -> Result<Outputs, CliError> {
    let model = l.channel(c)?;
    let step = grid_step(l, c)?;
    let alpha = c.scheme.alpha.unwrap_or(0.1);
    let best = optimal_query_size(&model, step)?;
    let zoom = scaled_optimum(&model, alpha, step).map_err(|e| l.err_at("alpha", e))?;
    let report = json!({
        "optimum": best,
        "targeting_rate_max": best.value,
        "capacity_at_q_star": capacity(&model, best.q_star)?,
        "capacity_at_zero": capacity(&model, 0.0)?,
        "c1_at_zero": model.divergence_c1(0.0),
        "c1_at_q_star": model.divergence_c1(best.q_star),
        "alpha": alpha,
        "scaled_optimum": zoom,
    });
    Ok(vec![("optimize.json".into(), to_json(&report)?)])
}

pub fn exponents_cmd(l: &Loaded, c: &Config) -> Result<Outputs, CliError> {
    let model = l.channel(c)?;
    let points = c.sim.rate_points.unwrap_or(50);
    if points < 2 {
        return Err(l.err_at("rate_points", "need at least 2 rate points"));
    }
    let c0 = capacity(&model, 0.0)?;
    let rates: Vec<f64> = (0..points).map(|k| c0 * k as f64 / (points - 1) as f64).collect();
    let search = RhoSearch::default();
    let q_star = optimal_query_size(&model, DEFAULT_GRID_STEP)?.q_star;
    let curve = |tag| ExponentCurve::evaluate(tag, &rates, &model, &search).map(|e| e.exponent_values);
    let a = curve(SchemeTag::RandomCoding)?;
    let b = curve(SchemeTag::Forney)?;
    let bound = rates
        .iter()
        .map(|&r| burnashev_bound(r, q_star, &model))
        .collect::<Result<Vec<_>, _>>()?;
    let d = curve(SchemeTag::YamamotoItoh)?;
    let e = curve(SchemeTag::TwoPhaseBurnashev)?;
    let mut csv = String::from("rate,random_coding,forney,burnashev_q_star,yamamoto_itoh,two_phase_burnashev\n");
    for k in 0..points {
        let row = [rates[k], a[k], b[k], bound[k], d[k], e[k]].map(g12);
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    Ok(vec![("exponents.csv".into(), csv)])
}

/// Largest rate the scheme can run at for the given configuration.
fn stationary_max_rate(scheme: Scheme, cfg: &SearchConfig) -> Result<f64, CliError> {
    let q = cfg.resolved_prior()?;
    let i = mutual_information(q, q, &cfg.model)?;
    Ok(match scheme {
        Scheme::YamamotoItoh => (1.0 - cfg.yi_lambda) * i,
        _ => i,
    })
}

fn run_stationary(scheme: Scheme, cfg: &SearchConfig) -> Result<SimReport, CliError> {
    if scheme != Scheme::TwoPhase {
        let m = cfg.sensors()?;
        let rate = (m as f64).log2() / cfg.block_length()? as f64;
        let max = stationary_max_rate(scheme, cfg)?;
        if rate >= max {
            return Err(SimError::Infeasible { rate, max }.into());
        }
    }
    Ok(match scheme {
        Scheme::Nonadaptive => run_nonadaptive(cfg)?,
        Scheme::Forney => run_forney(cfg)?,
        Scheme::YamamotoItoh => run_yamamoto_itoh(cfg)?,
        Scheme::TwoPhase => run_two_phase(cfg)?,
        Scheme::Moving => unreachable!("moving target handled separately"),
    })
}

fn run_moving(l: &Loaded, c: &Config, queries: usize) -> Result<SimReport, CliError> {
    let cfg = l.moving_config(c, queries)?;
    let q = cfg.resolved_prior()?;
    let i = mutual_information(q, q, &cfg.model)?;
    let max = if cfg.v_max > 0.0 { 0.5 * i * (1.0 - 2.0 * cfg.v_max) } else { i };
    cfg.sensors()?;
    let rate = cfg.rate();
    if rate >= max {
        return Err(SimError::Infeasible { rate, max }.into());
    }
    Ok(run_moving_sim(&cfg)?)
}

fn moving_queries(l: &Loaded, c: &Config) -> Result<usize, CliError> {
    c.sim
        .queries
        .ok_or_else(|| l.err_at("queries", "the moving scheme needs `queries`"))
}

fn simulate_one(l: &Loaded, c: &Config, scheme: Scheme, queries: Option<usize>) -> Result<SimReport, CliError> {
    if scheme == Scheme::Moving {
        let n = match queries {
            Some(n) => n,
            None => moving_queries(l, c)?,
        };
        return run_moving(l, c, n);
    }
    let mut c = c.clone();
    if let Some(n) = queries {
        c.sim.queries = Some(n);
    }
    run_stationary(scheme, &l.search_config(&c)?)
}

pub fn simulate_cmd(l: &Loaded, c: &Config) -> Result<Outputs, CliError> {
    let scheme = l.scheme(c)?;
    let report = simulate_one(l, c, scheme, None)?;
    let mut out = vec![("simulate.json".to_string(), to_json(&report)?)];
    if let Some(sweep) = &c.sim.sweep {
        if sweep.is_empty() || sweep.contains(&0) {
            return Err(l.err_at("sweep", "sweep needs positive block lengths"));
        }
        let mut csv = String::from(
            "queries,sensors,delta,rate,trials,errors,error_rate,error_lo,error_hi,erasure_rate,mean_stopping_time,secondary_error_rate\n",
        );
        for &n in sweep {
            let r = simulate_one(l, c, scheme, Some(n))?;
            let rate = -r.delta.log2() / r.block_length as f64;
            let secondary = r.secondary_error_rate.map(|e| g12(e.value)).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                n,
                r.sensors,
                g12(r.delta),
                g12(rate),
                r.trials,
                r.errors,
                g12(r.error_rate.value),
                g12(r.error_rate.ci_low),
                g12(r.error_rate.ci_high),
                g12(r.erasure_rate.value),
                g12(r.mean_stopping_time.value),
                secondary,
            ));
        }
        out.push(("simulate_sweep.csv".into(), csv));
    }
    Ok(out)
}

pub fn bounds_audit_cmd(l: &Loaded, c: &Config) -> Result<Outputs, CliError> {
    let n_max = c.sim.n_max.unwrap_or(12);
    let m_max = c.sim.m_max.unwrap_or(24);
    if n_max == 0 {
        return Err(l.err_at("n_max", "must be positive"));
    }
    if m_max < 2 {
        return Err(l.err_at("m_max", "must be at least 2"));
    }
    let v_maxes = c.sim.v_maxes.clone().unwrap_or_else(|| vec![0.1, 0.25]);
    let cap = c.sim.enumeration_cap.unwrap_or(mdsearch::moving::DEFAULT_ENUMERATION_CAP);
    let rows = audit_bounds(n_max, m_max, &v_maxes, cap)?;
    let failed = rows.iter().filter(|r| !r.ok()).count();
    eprintln!("bounds-audit: {} configurations, {} with violations", rows.len(), failed);
    let mut out = vec![("bounds_audit.csv".to_string(), audit_csv(&rows))];
    if c.sim.export_trajectories.unwrap_or(false) {
        let n = moving_queries(l, c)?;
        let ts = enumerate_trajectories(&l.moving_config(c, n)?)?;
        out.push(("trajectories.csv".into(), trajectories_csv(&ts)));
    }
    Ok(out)
}
