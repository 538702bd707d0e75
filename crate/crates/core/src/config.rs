//! JSON run configurations, one schema per command.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::catalog::{black_scholes_model, stein_stein_model, SteinSteinParams};
use crate::error::{Error, Result};
use crate::expansion::ExpansionOptions;
use crate::mc::{McConfig, TailSlopeOptions};
use crate::model::ModelSpec;
use crate::nonfocal::SweepOptions;
use crate::poly::PolynomialModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    SteinStein(SteinSteinParams),
    BlackScholes {
        sigma: f64,
        #[serde(default)]
        y0: f64,
        #[serde(rename = "T")]
        t: f64,
    },
    Polynomial {
        #[serde(rename = "T")]
        t: f64,
        model: PolynomialModel,
    },
}

impl ModelConfig {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelConfig::SteinStein(p) => stein_stein_model(p),
            ModelConfig::BlackScholes { sigma, y0, .. } => black_scholes_model(*sigma, *y0),
            ModelConfig::Polynomial { model, .. } => model.clone().into_spec(),
        }
    }

    pub fn maturity(&self) -> f64 {
        match self {
            ModelConfig::SteinStein(p) => p.t,
            ModelConfig::BlackScholes { t, .. } | ModelConfig::Polynomial { t, .. } => *t,
        }
    }
}

fn unit_target() -> Vec<f64> {
    vec![1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpandConfig {
    pub model: ModelConfig,
    #[serde(default = "unit_target")]
    pub target: Vec<f64>,
    #[serde(default)]
    pub options: ExpansionOptions,
}

/// `points` values evenly spaced on [from, to].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveRange {
    pub from: f64,
    pub to: f64,
    pub points: usize,
}

impl CurveRange {
    pub fn values(&self) -> Result<Vec<f64>> {
        if self.points < 2 || !(self.to > self.from) || !self.from.is_finite() || !self.to.is_finite() {
            return Err(Error::Config("curve needs from < to and at least 2 points".into()));
        }
        let h = (self.to - self.from) / (self.points - 1) as f64;
        Ok((0..self.points).map(|k| self.from + k as f64 * h).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailConfig {
    pub model: ModelConfig,
    pub theta: u8,
    #[serde(default)]
    pub options: ExpansionOptions,
    #[serde(default)]
    pub curve: Option<CurveRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShortTimeConfig {
    pub model: ModelConfig,
    #[serde(default = "unit_target")]
    pub target: Vec<f64>,
    #[serde(default)]
    pub options: ExpansionOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlackScholesConfig {
    pub sigma: f64,
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub y0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleFormat {
    #[default]
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleOutput {
    pub path: String,
    #[serde(default)]
    pub format: SampleFormat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McRunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub mc: McConfig,
    #[serde(default)]
    pub tail: TailSlopeOptions,
    #[serde(default)]
    pub samples: Option<SampleOutput>,
}

/// Either B₁, B₂ directly or a θ = 2 model whose tail constants give them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmileConfig {
    #[serde(default, rename = "B1")]
    pub b1: Option<f64>,
    #[serde(default, rename = "B2")]
    pub b2: Option<f64>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub options: ExpansionOptions,
    #[serde(default)]
    pub curve: Option<CurveRange>,
}

/// Cross product of the listed Stein–Stein parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default = "zero_list")]
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    #[serde(default = "zero_list")]
    pub sigma0: Vec<f64>,
    #[serde(default = "zero_list")]
    pub rho: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<f64>,
}

fn zero_list() -> Vec<f64> {
    vec![0.0]
}

impl SweepGrid {
    pub fn cells(&self) -> Vec<SteinSteinParams> {
        let mut out = Vec::new();
        for &a in &self.a {
            for &b in &self.b {
                for &c in &self.c {
                    for &s in &self.sigma0 {
                        for &rho in &self.rho {
                            for &t in &self.t {
                                out.push(SteinSteinParams::new(a, b, c, s, rho, t));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub grid: SweepGrid,
    #[serde(default)]
    pub options: SweepOptions,
}

/// Applies `key.path=value` overrides. The value is parsed as JSON when
/// possible and taken as a string otherwise; only scalar entries may be
/// replaced.
pub fn apply_overrides(config: &mut Value, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value (got {item:?})")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        if value.is_object() || value.is_array() {
            return Err(Error::Config(format!("--set {path}: only scalar values can be set")));
        }
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("--set: bad key {path:?}")));
        }
        let (last, parents) = keys.split_last().expect("nonempty key");
        let mut node = &mut *config;
        for key in parents {
            node = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("--set {path}: {key:?} is not inside an object")))?
                .entry((*key).to_string())
                .or_insert_with(|| Value::Object(Default::default()));
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("--set {path}: {last:?} is not inside an object")))?;
        if obj.get(*last).is_some_and(|old| old.is_object() || old.is_array()) {
            return Err(Error::Config(format!("--set {path}: entry is not a scalar")));
        }
        obj.insert((*last).to_string(), value);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides() {
        let mut v: Value = serde_json::from_str(r#"{"model": {"kind": "black_scholes", "sigma": 1, "T": 1}}"#).unwrap();
        apply_overrides(&mut v, &["model.sigma=2".into(), "options.gradient=momentum".into()]).unwrap();
        assert_eq!(v["model"]["sigma"], 2);
        assert_eq!(v["options"]["gradient"], "momentum");
        assert!(apply_overrides(&mut v, &["model=3".into()]).is_err());
        assert!(apply_overrides(&mut v, &["nokey".into()]).is_err());
        let c: ExpandConfig = serde_json::from_value(v).unwrap();
        assert_eq!(c.target, vec![1.0]);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"model": {"kind": "black_scholes", "sigma": 1, "T": 1, "oops": 2}}"#;
        assert!(serde_json::from_str::<ExpandConfig>(bad).is_err());
        let bad = r#"{"model": {"kind": "black_scholes", "sigma": 1, "T": 1}, "extra": 0}"#;
        assert!(serde_json::from_str::<ExpandConfig>(bad).is_err());
    }

    #[test]
    fn grid_cells() {
        let g: SweepGrid = serde_json::from_str(r#"{"b": [0, -1], "c": [0.5, 2], "rho": [0, -0.7], "T": [0.5, 1]}"#).unwrap();
        assert_eq!(g.cells().len(), 16);
    }
}
