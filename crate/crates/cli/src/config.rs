//! Run configuration: a TOML file with `[channel]`, `[scheme]` and `[sim]`
//! sections whose keys are unique across sections, so that each key can be
//! overridden on the command line as `--key value`.

use std::collections::BTreeMap;

use mdsearch::channels::{ChannelKind, ChannelModel, ChannelSpec};
use mdsearch::moving::{MovingConfig, DEFAULT_ENUMERATION_CAP};
use mdsearch::stationary::{BlockLength, Placement, SearchConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_var: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enforce_monotone: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scheme: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub forney_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yi_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yi_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub false_erase_target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n3: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zoom_prior: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub column_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_restarts: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub queries: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub placement: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub position: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_maxes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub enumeration_cap: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub export_trajectories: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub scheme: SchemeSection,
    #[serde(default)]
    pub sim: SimSection,
}

pub const CHANNEL_KEYS: &[&str] = &["model", "a", "b", "mu", "a_var", "b_var", "enforce_monotone"];
pub const SCHEME_KEYS: &[&str] = &[
    "scheme",
    "forney_threshold",
    "yi_lambda",
    "yi_threshold",
    "false_erase_target",
    "alpha",
    "n1",
    "n2",
    "n3",
    "zoom_prior",
    "column_tolerance",
    "max_restarts",
    "v_max",
];
pub const SIM_KEYS: &[&str] = &[
    "delta",
    "rate",
    "queries",
    "prior",
    "placement",
    "position",
    "trials",
    "seed",
    "grid_step",
    "rate_points",
    "sweep",
    "n_max",
    "m_max",
    "v_maxes",
    "enumeration_cap",
    "export_trajectories",
];

/// Section holding `key`, if any.
pub fn section_of(key: &str) -> Option<&'static str> {
    if CHANNEL_KEYS.contains(&key) {
        Some("channel")
    } else if SCHEME_KEYS.contains(&key) {
        Some("scheme")
    } else if SIM_KEYS.contains(&key) {
        Some("sim")
    } else {
        None
    }
}

pub const DEFAULT_GRID_STEP: f64 = 1e-3;
pub const DEFAULT_RATE_POINTS: usize = 50;

/// Where a key's value came from, for error messages.
#[derive(Debug, Clone, PartialEq)]
enum Origin {
    Line(usize),
    Flag,
}

/// A parsed configuration together with the provenance of each key.
#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub config: Config,
    origins: BTreeMap<String, Origin>,
}

/// Line of each `key = ...` assignment, tracking `[section]` headers.
fn key_lines(text: &str) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') || t.starts_with('#') {
            continue;
        }
        if let Some((k, _)) = t.split_once('=') {
            out.insert(k.trim().trim_matches('"').to_string(), i + 1);
        }
    }
    out
}

/// Parses a command-line value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl Loaded {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Config(format!("config {e}").trim_end().to_string()))?;
        let origins = key_lines(text).into_iter().map(|(k, l)| (k, Origin::Line(l))).collect();
        Ok(Loaded { config, origins })
    }

    /// Applies `--key value` overrides on top of the file.
    pub fn apply_overrides(&mut self, overrides: &[(String, String)]) -> Result<(), CliError> {
        if overrides.is_empty() {
            return Ok(());
        }
        let mut table = toml::Table::try_from(&self.config).map_err(|e| CliError::Other(e.to_string()))?;
        for (key, raw) in overrides {
            let section = section_of(key).ok_or_else(|| CliError::Config(format!("unknown option --{key}")))?;
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if let toml::Value::Table(t) = entry {
                t.insert(key.clone(), parse_value(raw));
            }
            self.origins.insert(key.clone(), Origin::Flag);
        }
        self.config = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let keys: Vec<String> = overrides.iter().map(|(k, _)| format!("--{k}")).collect();
            CliError::Config(format!("invalid override ({}): {}", keys.join(", "), e.message()))
        })?;
        Ok(())
    }

    /// Config error attributed to the line or flag that set `key`.
    pub fn err_at(&self, key: &str, msg: impl std::fmt::Display) -> CliError {
        match self.origins.get(key) {
            Some(Origin::Line(l)) => CliError::Config(format!("config line {l} (`{key}`): {msg}")),
            Some(Origin::Flag) => CliError::Config(format!("option --{key}: {msg}")),
            None => CliError::Config(format!("`{key}`: {msg}")),
        }
    }

    /// Fills unset keys with their defaults, keeping only keys that apply
    /// to the chosen channel model.
    pub fn resolved(&self) -> Result<Config, CliError> {
        let mut c = self.config.clone();
        let ch = &mut c.channel;
        let model = ch.model.get_or_insert_with(|| "linear_bsc".into()).clone();
        match model.as_str() {
            "linear_bsc" => {
                for (k, v) in [("mu", ch.mu), ("a_var", ch.a_var), ("b_var", ch.b_var)] {
                    if v.is_some() {
                        return Err(self.err_at(k, "not a parameter of linear_bsc"));
                    }
                }
                ch.a.get_or_insert(0.7);
                ch.b.get_or_insert(0.1);
            }
            "gaussian_pair" => {
                for (k, v) in [("a", ch.a), ("b", ch.b)] {
                    if v.is_some() {
                        return Err(self.err_at(k, "not a parameter of gaussian_pair"));
                    }
                }
                ch.mu.get_or_insert(1.0);
                ch.a_var.get_or_insert(0.5);
                ch.b_var.get_or_insert(2.0);
            }
            other => {
                return Err(self.err_at(
                    "model",
                    format!("unknown channel model `{other}` (expected linear_bsc or gaussian_pair)"),
                ))
            }
        }
        ch.enforce_monotone.get_or_insert(true);
        let s = &mut c.scheme;
        s.scheme.get_or_insert_with(|| "nonadaptive".into());
        s.forney_threshold.get_or_insert(0.05);
        s.yi_lambda.get_or_insert(0.2);
        s.false_erase_target.get_or_insert(1e-2);
        s.alpha.get_or_insert(0.1);
        s.max_restarts.get_or_insert(1000);
        s.v_max.get_or_insert(0.1);
        let m = &mut c.sim;
        m.delta.get_or_insert(1.0 / 64.0);
        if m.rate.is_none() && m.queries.is_none() {
            m.rate = Some(0.1);
        }
        m.placement.get_or_insert_with(|| "uniform".into());
        m.trials.get_or_insert(1000);
        m.seed.get_or_insert(0);
        m.grid_step.get_or_insert(DEFAULT_GRID_STEP);
        m.rate_points.get_or_insert(DEFAULT_RATE_POINTS);
        m.n_max.get_or_insert(12);
        m.m_max.get_or_insert(24);
        m.v_maxes.get_or_insert_with(|| vec![0.1, 0.25]);
        m.enumeration_cap.get_or_insert(DEFAULT_ENUMERATION_CAP);
        m.export_trajectories.get_or_insert(false);
        Ok(c)
    }

    pub fn channel(&self, c: &Config) -> Result<ChannelModel, CliError> {
        let ch = &c.channel;
        let kind = match ch.model.as_deref() {
            Some("gaussian_pair") => ChannelKind::GaussianPair {
                mu: ch.mu.unwrap_or_default(),
                a_var: ch.a_var.unwrap_or_default(),
                b_var: ch.b_var.unwrap_or_default(),
            },
            _ => ChannelKind::LinearBsc {
                a: ch.a.unwrap_or_default(),
                b: ch.b.unwrap_or_default(),
            },
        };
        let spec = ChannelSpec {
            kind,
            enforce_monotone: ch.enforce_monotone.unwrap_or(true),
        };
        ChannelModel::from_spec(spec).map_err(|e| {
            let key = match kind {
                ChannelKind::LinearBsc { .. } => "b",
                ChannelKind::GaussianPair { .. } => "b_var",
            };
            self.err_at(key, format!("invalid channel: {e}"))
        })
    }

    fn placement(&self, c: &Config) -> Result<Placement, CliError> {
        match (c.sim.placement.as_deref(), c.sim.position) {
            (Some("uniform"), None) => Ok(Placement::Uniform),
            (Some("sweep"), None) => Ok(Placement::Sweep),
            (Some("fixed"), Some(w)) => Ok(Placement::Fixed(w)),
            (Some("fixed"), None) => Err(self.err_at("placement", "fixed placement needs `position`")),
            (_, Some(_)) => Err(self.err_at("position", "`position` needs placement = \"fixed\"")),
            (other, _) => Err(self.err_at(
                "placement",
                format!("unknown placement `{}` (expected uniform, sweep or fixed)", other.unwrap_or("")),
            )),
        }
    }

    pub fn search_config(&self, c: &Config) -> Result<SearchConfig, CliError> {
        let length = match (c.sim.queries, c.sim.rate) {
            (Some(n), _) => BlockLength::Queries(n),
            (None, Some(r)) => BlockLength::Rate(r),
            (None, None) => BlockLength::Rate(0.1),
        };
        let mut s = SearchConfig::new(self.channel(c)?, c.sim.delta.unwrap_or(1.0 / 64.0), length);
        s.prior = c.sim.prior;
        s.placement = self.placement(c)?;
        s.trials = c.sim.trials.unwrap_or(1000);
        s.seed = c.sim.seed.unwrap_or(0);
        let sc = &c.scheme;
        s.forney_threshold = sc.forney_threshold.unwrap_or(s.forney_threshold);
        s.yi_lambda = sc.yi_lambda.unwrap_or(s.yi_lambda);
        s.yi_threshold = sc.yi_threshold;
        s.false_erase_target = sc.false_erase_target.unwrap_or(s.false_erase_target);
        s.alpha = sc.alpha.unwrap_or(s.alpha);
        s.n1 = sc.n1;
        s.n2 = sc.n2;
        s.n3 = sc.n3;
        s.zoom_prior = sc.zoom_prior;
        s.column_tolerance = sc.column_tolerance;
        s.max_restarts = sc.max_restarts.unwrap_or(s.max_restarts);
        Ok(s)
    }

    /// Moving-target settings; with `queries` and `rate` both set the
    /// resolution follows from the rate, otherwise `delta` is used as given.
    pub fn moving_config(&self, c: &Config, queries: usize) -> Result<MovingConfig, CliError> {
        let model = self.channel(c)?;
        let v_max = c.scheme.v_max.unwrap_or(0.1);
        let mut m = match c.sim.rate {
            Some(r) => MovingConfig::from_rate(model, r, queries, v_max).map_err(|e| self.err_at("rate", e))?,
            None => MovingConfig::new(model, c.sim.delta.unwrap_or(0.5), queries, v_max),
        };
        m.prior = c.sim.prior;
        m.placement = self.placement(c)?;
        m.trials = c.sim.trials.unwrap_or(1000);
        m.seed = c.sim.seed.unwrap_or(0);
        m.enumeration_cap = c.sim.enumeration_cap.unwrap_or(DEFAULT_ENUMERATION_CAP);
        Ok(m)
    }

    pub fn scheme(&self, c: &Config) -> Result<Scheme, CliError> {
        match c.scheme.scheme.as_deref().unwrap_or("nonadaptive") {
            "nonadaptive" => Ok(Scheme::Nonadaptive),
            "forney" => Ok(Scheme::Forney),
            "yamamoto-itoh" => Ok(Scheme::YamamotoItoh),
            "two-phase" => Ok(Scheme::TwoPhase),
            "moving" => Ok(Scheme::Moving),
            other => Err(self.err_at(
                "scheme",
                format!("unknown scheme `{other}` (expected nonadaptive, forney, yamamoto-itoh, two-phase or moving)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Nonadaptive,
    Forney,
    YamamotoItoh,
    TwoPhase,
    Moving,
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn full() -> Config {
        Config {
            channel: ChannelSection {
                model: Some("linear_bsc".into()),
                a: Some(0.7),
                b: Some(0.1),
                mu: Some(1.0),
                a_var: Some(0.5),
                b_var: Some(2.0),
                enforce_monotone: Some(true),
            },
            scheme: SchemeSection {
                scheme: Some("forney".into()),
                forney_threshold: Some(0.05),
                yi_lambda: Some(0.2),
                yi_threshold: Some(1.5),
                false_erase_target: Some(0.01),
                alpha: Some(0.1),
                n1: Some(20),
                n2: Some(22),
                n3: Some(4),
                zoom_prior: Some(0.44),
                column_tolerance: Some(0.05),
                max_restarts: Some(100),
                v_max: Some(0.1),
            },
            sim: SimSection {
                delta: Some(0.015625),
                rate: Some(0.25),
                queries: Some(24),
                prior: Some(0.5),
                placement: Some("fixed".into()),
                position: Some(0.3),
                trials: Some(10),
                seed: Some(3),
                grid_step: Some(1e-3),
                rate_points: Some(50),
                sweep: Some(vec![16, 24, 32]),
                n_max: Some(12),
                m_max: Some(24),
                v_maxes: Some(vec![0.1, 0.25]),
                enumeration_cap: Some(1000),
                export_trajectories: Some(true),
            },
        }
    }

    #[test]
    fn key_tables_match_the_schema_and_are_unique() {
        let t = toml::Table::try_from(full()).unwrap();
        for (section, keys) in [("channel", CHANNEL_KEYS), ("scheme", SCHEME_KEYS), ("sim", SIM_KEYS)] {
            let got: BTreeSet<&str> = t[section].as_table().unwrap().keys().map(|k| k.as_str()).collect();
            let want: BTreeSet<&str> = keys.iter().copied().collect();
            assert_eq!(got, want, "{section}");
        }
        let mut all: Vec<&str> = CHANNEL_KEYS.iter().chain(SCHEME_KEYS).chain(SIM_KEYS).copied().collect();
        let n = all.len();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), n);
    }

    #[test]
    fn round_trip_is_identity() {
        let c = full();
        let text = toml::to_string(&c).unwrap();
        let back: Config = toml::from_str(&text).unwrap();
        assert_eq!(back, c);
        let empty: Config = toml::from_str(&toml::to_string(&Config::default()).unwrap()).unwrap();
        assert_eq!(empty, Config::default());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = Loaded::parse("[channel]\na = 0.7\n\n[sim]\ntrails = 3\n").unwrap_err();
        assert!(e.to_string().contains("line 5"), "{e}");
        let e = Loaded::parse("[sim]\nqueries = -3\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
    }

    #[test]
    fn semantic_errors_point_at_the_key() {
        let l = Loaded::parse("[channel]\nmodel = \"linear_bsc\"\na = 0.7\nb = 0.6\n").unwrap();
        let c = l.resolved().unwrap();
        let e = l.channel(&c).unwrap_err();
        assert!(e.to_string().contains("line 4"), "{e}");
        let l = Loaded::parse("[channel]\nmodel = \"linear_bsc\"\nmu = 1.0\n").unwrap();
        assert!(l.resolved().unwrap_err().to_string().contains("line 3"));
    }

    #[test]
    fn overrides_replace_file_values() {
        let mut l = Loaded::parse("[sim]\nqueries = 10\n").unwrap();
        l.apply_overrides(&[
            ("queries".into(), "24".into()),
            ("model".into(), "gaussian_pair".into()),
            ("a_var".into(), "1".into()),
            ("sweep".into(), "[16, 24]".into()),
        ])
        .unwrap();
        assert_eq!(l.config.sim.queries, Some(24));
        assert_eq!(l.config.channel.model.as_deref(), Some("gaussian_pair"));
        assert_eq!(l.config.channel.a_var, Some(1.0));
        assert_eq!(l.config.sim.sweep, Some(vec![16, 24]));
        let mut l = Loaded::parse("").unwrap();
        assert!(l.apply_overrides(&[("queries".into(), "many".into())]).is_err());
        assert!(l.apply_overrides(&[("nonsense".into(), "1".into())]).is_err());
    }

    #[test]
    fn defaults_are_filled() {
        let l = Loaded::parse("").unwrap();
        let c = l.resolved().unwrap();
        assert_eq!(c.sim.grid_step, Some(1e-3));
        assert_eq!(c.channel.a, Some(0.7));
        assert_eq!(c.scheme.scheme.as_deref(), Some("nonadaptive"));
        assert_eq!(l.resolved().unwrap(), Loaded { config: c.clone(), origins: BTreeMap::new() }.resolved().unwrap());
    }
}
