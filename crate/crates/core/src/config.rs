//! Declarative run configuration.
//!
//! Configurations are TOML documents. Physical quantities are written either
//! as bare numbers (SI: seconds, 1/s, rad/s) or as strings carrying an
//! explicit unit suffix:
//!
//! | suffix    | meaning                          | SI value        |
//! |-----------|----------------------------------|-----------------|
//! | `khz_2pi` | angular frequency 2π × kHz       | `2π · v · 10³`  |
//! | `hz_2pi`  | angular frequency 2π × Hz        | `2π · v`        |
//! | `per_s`   | rate                             | `v`             |
//! | `us_1e`   | rate given by its 1/e time in μs | `1 / (v · 10⁻⁶)`|
//! | `ms_1e`   | rate given by its 1/e time in ms | `1 / (v · 10⁻³)`|
//! | `omega_s` | rate as a multiple of `Ω_s`      | `v · Ω_s`       |
//! | `us`, `ms`, `s` | durations                  |                 |
//!
//! `omega_s` is only meaningful in the scattering table. Unknown keys are
//! rejected, and a parsed configuration serialises back to an equal one.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::operator::Level;
use crate::protocol::{
    ContinuousSchedule, CoolingMode, EnsembleSpec, Schedule, StepwiseSchedule, Truncation, CONTINUOUS_WINDOW,
    STEPWISE_WINDOW,
};
use crate::rates::PrepVariant;
use crate::scheme::{Channels, GammaTable, SchemeParams};

const TAU: f64 = std::f64::consts::TAU;

/// Names of the bundled presets.
pub const PRESETS: [&str; 2] = ["continuous_fig2", "stepwise_fig3"];

fn preset_source(name: &str) -> Option<&'static str> {
    match name {
        "continuous_fig2" => Some(include_str!("../presets/continuous_fig2.toml")),
        "stepwise_fig3" => Some(include_str!("../presets/stepwise_fig3.toml")),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Khz2Pi,
    Hz2Pi,
    PerS,
    Us1e,
    Ms1e,
    OmegaS,
    Us,
    Ms,
    S,
}

impl Unit {
    pub fn name(self) -> &'static str {
        match self {
            Unit::Khz2Pi => "khz_2pi",
            Unit::Hz2Pi => "hz_2pi",
            Unit::PerS => "per_s",
            Unit::Us1e => "us_1e",
            Unit::Ms1e => "ms_1e",
            Unit::OmegaS => "omega_s",
            Unit::Us => "us",
            Unit::Ms => "ms",
            Unit::S => "s",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        [
            Unit::Khz2Pi,
            Unit::Hz2Pi,
            Unit::PerS,
            Unit::Us1e,
            Unit::Ms1e,
            Unit::OmegaS,
            Unit::Us,
            Unit::Ms,
            Unit::S,
        ]
        .into_iter()
        .find(|u| u.name() == s)
    }
}

/// A number with an optional unit suffix, kept exactly as written.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity {
    pub value: f64,
    pub unit: Option<Unit>,
}

impl Quantity {
    pub const fn si(value: f64) -> Self {
        Self { value, unit: None }
    }

    pub const fn new(value: f64, unit: Unit) -> Self {
        Self {
            value,
            unit: Some(unit),
        }
    }

    /// Value in 1/s or rad/s.
    pub fn rate(&self, field: &str) -> Result<f64> {
        self.rate_with(field, None)
    }

    fn rate_with(&self, field: &str, omega_s: Option<f64>) -> Result<f64> {
        let v = self.value;
        Ok(match self.unit {
            None | Some(Unit::PerS) => v,
            Some(Unit::Khz2Pi) => TAU * v * 1e3,
            Some(Unit::Hz2Pi) => TAU * v,
            Some(Unit::Us1e) => 1e6 / v,
            Some(Unit::Ms1e) => 1e3 / v,
            Some(Unit::OmegaS) => match omega_s {
                Some(w) => v * w,
                None => return Err(unit_error(field, Unit::OmegaS, "only allowed in the scattering table")),
            },
            Some(u) => return Err(unit_error(field, u, "is a duration, expected a rate")),
        })
    }

    /// Value in seconds.
    pub fn seconds(&self, field: &str) -> Result<f64> {
        let v = self.value;
        Ok(match self.unit {
            None | Some(Unit::S) => v,
            Some(Unit::Ms) => v / 1e3,
            Some(Unit::Us) => v / 1e6,
            Some(u) => return Err(unit_error(field, u, "is a rate, expected a duration")),
        })
    }
}

fn unit_error(field: &str, unit: Unit, why: &str) -> Error {
    Error::InvalidParameter {
        field: field.to_string(),
        constraint: format!("unit `{}` {why}", unit.name()),
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.unit {
            None => write!(f, "{}", self.value),
            Some(u) => write!(f, "{} {}", self.value, u.name()),
        }
    }
}

impl FromStr for Quantity {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut parts = s.split_whitespace();
        let number = parts.next().ok_or_else(|| "empty quantity".to_string())?;
        let value: f64 = number.parse().map_err(|_| format!("`{number}` is not a number"))?;
        let unit = match parts.next() {
            None => None,
            Some(u) => Some(Unit::parse(u).ok_or_else(|| format!("unknown unit `{u}`"))?),
        };
        if parts.next().is_some() {
            return Err(format!("malformed quantity `{s}`"));
        }
        Ok(Self { value, unit })
    }
}

impl Serialize for Quantity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.unit {
            None => s.serialize_f64(self.value),
            Some(_) => s.serialize_str(&self.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Quantity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Quantity;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or a string such as \"7.8 khz_2pi\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Quantity, E> {
                Ok(Quantity::si(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Quantity, E> {
                Ok(Quantity::si(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Quantity, E> {
                Ok(Quantity::si(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Quantity, E> {
                v.parse().map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Continuous,
    Stepwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub omega_s: Quantity,
    pub omega_c: Quantity,
    #[serde(default)]
    pub r: f64,
    #[serde(default)]
    pub phi: f64,
    /// Depletion rate of `|a⟩`, `γ_↑a + γ_↓a`.
    pub repump: Quantity,
    /// Repump branching `↑ : ↓ : a`.
    pub branching: [f64; 3],
    pub kappa: Quantity,
    pub nbar: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub delta: Quantity,
    pub kappa4: Quantity,
    /// `uniform` sets every default channel; `<from>_to_<to>` entries
    /// override single channels.
    #[serde(default)]
    pub scattering: BTreeMap<String, Quantity>,
}

fn parse_channel_key(key: &str) -> Option<(Level, Level)> {
    let (from, to) = key.split_once("_to_")?;
    Some((Level::parse(from)?, Level::parse(to)?))
}

impl ParamsConfig {
    pub fn to_params(&self) -> Result<SchemeParams> {
        let omega_s = self.omega_s.rate("params.omega_s")?;
        let depletion = self.repump.rate("params.repump")?;
        let [bu, bd, ba] = self.branching;
        if self.branching.iter().any(|b| !b.is_finite() || *b < 0.0) || bu + bd <= 0.0 {
            return Err(Error::param(
                "params.branching",
                "entries must be >= 0 with a positive qubit share",
            ));
        }
        let mut table = GammaTable::new();
        if let Some(u) = self.scattering.get("uniform") {
            table = GammaTable::uniform(u.rate_with("params.scattering.uniform", Some(omega_s))?);
        }
        for (key, q) in &self.scattering {
            if key == "uniform" {
                continue;
            }
            let field = format!("params.scattering.{key}");
            let (from, to) = parse_channel_key(key).ok_or_else(|| {
                Error::Config(format!("unknown scattering channel `{key}`; expected `<from>_to_<to>` or `uniform`"))
            })?;
            table.set(from, to, q.rate_with(&field, Some(omega_s))?);
        }
        let params = SchemeParams {
            omega_s,
            omega_c: self.omega_c.rate("params.omega_c")?,
            r: self.r,
            phi: self.phi,
            gamma_up_a: depletion * bu / (bu + bd),
            gamma_down_a: depletion * bd / (bu + bd),
            gamma_aa: depletion * ba / (bu + bd),
            kappa: self.kappa.rate("params.kappa")?,
            nbar: self.nbar,
            gamma_table: table,
            eta3: self.eta3,
            eta4: self.eta4,
            delta: self.delta.rate("params.delta")?,
            kappa4: self.kappa4.rate("params.kappa4")?,
        };
        params.validate().map_err(|e| match e {
            Error::InvalidParameter { field, constraint } => Error::InvalidParameter {
                field: format!("params.{field}"),
                constraint,
            },
            other => other,
        })?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub mode3: usize,
    pub mode4: usize,
    pub tol: f64,
    pub channels: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let t = Truncation::default();
        Self {
            mode3: t.mode3,
            mode4: t.mode4,
            tol: crate::dynamics::DEFAULT_TOL,
            channels: "all".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    pub duration: Quantity,
    pub sample_interval: Quantity,
    pub window_start: Quantity,
    pub window_end: Quantity,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        Self {
            duration: Quantity::new(12.0, Unit::Ms),
            sample_interval: Quantity::new(0.1, Unit::Ms),
            window_start: Quantity::new(CONTINUOUS_WINDOW.0 * 1e3, Unit::Ms),
            window_end: Quantity::new(CONTINUOUS_WINDOW.1 * 1e3, Unit::Ms),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepwiseConfig {
    pub n_steps: usize,
    pub t_cool: Quantity,
    /// The return period `t_2π` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_coh: Option<Quantity>,
    pub t_repump: Quantity,
    pub cooling_mode: String,
    pub window_first: usize,
    pub window_last: usize,
}

impl Default for StepwiseConfig {
    fn default() -> Self {
        Self {
            n_steps: 60,
            t_cool: Quantity::new(100.0, Unit::Us),
            t_coh: None,
            t_repump: Quantity::new(6.0, Unit::Us),
            cooling_mode: CoolingMode::default().name().into(),
            window_first: STEPWISE_WINDOW.0,
            window_last: STEPWISE_WINDOW.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub r_mean: f64,
    pub r_rms: f64,
    pub nodes: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        let e = EnsembleSpec::default();
        Self {
            r_mean: e.r_mean,
            r_rms: e.r_rms,
            nodes: e.nodes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateModelConfig {
    pub variant: String,
    pub include_leak: bool,
}

impl Default for RateModelConfig {
    fn default() -> Self {
        Self {
            variant: PrepVariant::default().name().into(),
            include_leak: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub csv: String,
    pub manifest: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            csv: "populations.csv".into(),
            manifest: "manifest.txt".into(),
        }
    }
}

/// A complete, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub name: String,
    pub protocol: ProtocolKind,
    /// Reserved; every pipeline stage is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub params: ParamsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub continuous: ContinuousConfig,
    #[serde(default)]
    pub stepwise: StepwiseConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub rate_model: RateModelConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

fn parse_error(e: toml::de::Error) -> Error {
    Error::Config(e.to_string().trim_end().to_string())
}

/// Set `path` (dot separated) in `table` to `raw`, parsed as a TOML value
/// when possible and as a string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let (path, raw) = (path.trim(), raw.trim());
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("override key `{path}` is malformed")));
    }
    let (last, parents) = keys.split_last().expect("nonempty");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{path}`: `{k}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parse and validate a TOML document, applying `key=value` overrides
    /// first.
    pub fn parse_with(source: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = source.parse().map_err(parse_error)?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = if overrides.is_empty() {
            toml::from_str(source).map_err(parse_error)?
        } else {
            RunConfig::deserialize(table).map_err(parse_error)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(source: &str) -> Result<Self> {
        Self::parse_with(source, &[])
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse_with(&text, overrides)
    }

    pub fn preset(name: &str, overrides: &[String]) -> Result<Self> {
        let src = preset_source(name)
            .ok_or_else(|| Error::Config(format!("unknown preset `{name}`; available: {}", PRESETS.join(", "))))?;
        Self::parse_with(src, overrides)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Check every derived quantity.
    pub fn validate(&self) -> Result<()> {
        self.to_params()?;
        self.schedule()?;
        self.ensemble().validate()?;
        self.variant()?;
        Ok(())
    }

    pub fn to_params(&self) -> Result<SchemeParams> {
        self.params.to_params()
    }

    pub fn channels(&self) -> Result<Channels> {
        Channels::parse(&self.model.channels)
    }

    pub fn truncation(&self) -> Result<Truncation> {
        let m = &self.model;
        if m.mode3 < 2 || m.mode4 < 1 {
            return Err(Error::param("model.mode3", "mode3 must be >= 2 and mode4 >= 1"));
        }
        Ok(Truncation {
            mode3: m.mode3,
            mode4: m.mode4,
        })
    }

    pub fn tol(&self) -> Result<f64> {
        if !(1e-12..=1e-4).contains(&self.model.tol) {
            return Err(Error::param("model.tol", format!("must lie in [1e-12, 1e-4], got {}", self.model.tol)));
        }
        Ok(self.model.tol)
    }

    pub fn continuous_schedule(&self) -> Result<ContinuousSchedule> {
        let c = &self.continuous;
        let duration = c.duration.seconds("continuous.duration")?;
        let dt = c.sample_interval.seconds("continuous.sample_interval")?;
        if !(dt > 0.0) || !(duration >= 0.0) {
            return Err(Error::param("continuous.sample_interval", "must be > 0 with duration >= 0"));
        }
        let window = (
            c.window_start.seconds("continuous.window_start")?,
            c.window_end.seconds("continuous.window_end")?,
        );
        if !(window.0 <= window.1 && window.1 <= duration * (1.0 + 1e-12)) {
            return Err(Error::param("continuous.window_end", "window must be ordered and within the duration"));
        }
        let s = ContinuousSchedule {
            channels: self.channels()?,
            window,
            truncation: self.truncation()?,
            tol: self.tol()?,
            ..ContinuousSchedule::uniform(duration, dt)
        };
        s.validate()?;
        Ok(s)
    }

    pub fn stepwise_schedule(&self) -> Result<StepwiseSchedule> {
        let c = &self.stepwise;
        if c.window_first > c.window_last || c.window_last > c.n_steps {
            return Err(Error::param("stepwise.window_last", "window must be ordered and end by n_steps"));
        }
        let s = StepwiseSchedule {
            n_steps: c.n_steps,
            t_cool: c.t_cool.seconds("stepwise.t_cool")?,
            t_coh: c.t_coh.map(|q| q.seconds("stepwise.t_coh")).transpose()?,
            t_repump: c.t_repump.seconds("stepwise.t_repump")?,
            cooling_mode: CoolingMode::parse(&c.cooling_mode)?,
            channels: self.channels()?,
            window: (c.window_first, c.window_last),
            truncation: self.truncation()?,
            tol: self.tol()?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn schedule(&self) -> Result<Schedule> {
        Ok(match self.protocol {
            ProtocolKind::Continuous => Schedule::Continuous(self.continuous_schedule()?),
            ProtocolKind::Stepwise => Schedule::Stepwise(self.stepwise_schedule()?),
        })
    }

    pub fn ensemble(&self) -> EnsembleSpec {
        EnsembleSpec {
            r_mean: self.ensemble.r_mean,
            r_rms: self.ensemble.r_rms,
            nodes: self.ensemble.nodes,
        }
    }

    pub fn variant(&self) -> Result<PrepVariant> {
        PrepVariant::parse(&self.rate_model.variant)
    }

    /// Flat `key = value` record of every resolved input, in SI units.
    pub fn manifest(&self) -> Result<Vec<(String, String)>> {
        let p = self.to_params()?;
        let mut m: Vec<(String, String)> = vec![
            ("code_version".into(), env!("CARGO_PKG_VERSION").into()),
            ("name".into(), self.name.clone()),
            ("protocol".into(), format!("{:?}", self.protocol).to_lowercase()),
            ("seed".into(), self.seed.to_string()),
            ("parallel".into(), crate::parallel::is_parallel().to_string()),
            ("params.omega_s".into(), p.omega_s.to_string()),
            ("params.omega_c".into(), p.omega_c.to_string()),
            ("params.r".into(), p.r.to_string()),
            ("params.phi".into(), p.phi.to_string()),
            ("params.gamma_up_a".into(), p.gamma_up_a.to_string()),
            ("params.gamma_down_a".into(), p.gamma_down_a.to_string()),
            ("params.gamma_aa".into(), p.gamma_aa.to_string()),
            ("params.kappa".into(), p.kappa.to_string()),
            ("params.kappa_h".into(), p.kappa_h().to_string()),
            ("params.nbar".into(), p.nbar.to_string()),
            ("params.eta3".into(), p.eta3.to_string()),
            ("params.eta4".into(), p.eta4.to_string()),
            ("params.delta".into(), p.delta.to_string()),
            ("params.kappa4".into(), p.kappa4.to_string()),
        ];
        for (from, to, g) in p.gamma_table.iter() {
            m.push((format!("params.scattering.{}_to_{}", from.name(), to.name()), g.to_string()));
        }
        m.extend([
            ("model.mode3".into(), self.model.mode3.to_string()),
            ("model.mode4".into(), self.model.mode4.to_string()),
            ("model.tol".into(), self.model.tol.to_string()),
            ("model.channels".into(), self.channels()?.to_string()),
            ("ensemble.r_mean".into(), self.ensemble.r_mean.to_string()),
            ("ensemble.r_rms".into(), self.ensemble.r_rms.to_string()),
            ("ensemble.nodes".into(), self.ensemble.nodes.to_string()),
            ("rate_model.variant".into(), self.rate_model.variant.clone()),
            ("rate_model.include_leak".into(), self.rate_model.include_leak.to_string()),
        ]);
        match self.schedule()? {
            Schedule::Continuous(s) => m.extend([
                ("continuous.duration".into(), s.duration.to_string()),
                ("continuous.samples".into(), s.sample_times.len().to_string()),
                ("continuous.window_start".into(), s.window.0.to_string()),
                ("continuous.window_end".into(), s.window.1.to_string()),
            ]),
            Schedule::Stepwise(s) => m.extend([
                ("stepwise.n_steps".into(), s.n_steps.to_string()),
                ("stepwise.t_cool".into(), s.t_cool.to_string()),
                ("stepwise.t_coh".into(), s.coherent_time(&p)?.to_string()),
                ("stepwise.t_repump".into(), s.t_repump.to_string()),
                ("stepwise.cooling_mode".into(), s.cooling_mode.name().into()),
                ("stepwise.window_first".into(), s.window.0.to_string()),
                ("stepwise.window_last".into(), s.window.1.to_string()),
            ]),
        }
        Ok(m)
    }
}
