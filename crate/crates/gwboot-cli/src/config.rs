//! Run configuration: the JSON schema shared by flag and config-file
//! invocation, plus the parameter-map reader that validates, converts,
//! and canonicalizes command parameters.

use std::collections::BTreeMap;

use gwboot::offspring::OffspringDistribution;
use gwboot::ratio_serde::{parse_rat, rat_to_string};
use gwboot::ratpoly::Rat;
use num_bigint::BigInt;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Version tag carried by every JSON artifact.
pub const SCHEMA: &str = "gwboot/1";

/// Environment variable supplying a default working precision.
pub const PRECISION_ENV: &str = "GWBOOT_PRECISION_BITS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    Gk,
    Eval,
    Iterate,
    Qc,
    Classify,
    Design,
    Metastability,
    PhaseDiagram,
    Simulate,
    Prevalence,
    Bifurcation,
    Decay,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub path: String,
    #[serde(default)]
    pub format: Format,
}

/// One run: a command, its parameter map, and artifact routing. Unknown
/// fields anywhere in the tree are rejected.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_bits: Option<u32>,
}

/// Written next to every report; rerunning from it reproduces the run.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema: String,
    pub tool_version: String,
    pub config: RunConfig,
}

/// Parses `"a/b"`, an integer, or a plain decimal, all converted exactly.
pub fn parse_rational_text(s: &str) -> Result<Rat, String> {
    if let Ok(r) = parse_rat(s) {
        return Ok(r);
    }
    let t = s.trim();
    let (sign, body) = match t.strip_prefix('-') {
        Some(rest) => (-1, rest),
        None => (1, t.strip_prefix('+').unwrap_or(t)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    let digits = format!("{int_part}{frac_part}");
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("cannot parse {s:?} as a rational (use a/b or a decimal)"));
    }
    let num: BigInt = digits.parse().map_err(|_| format!("cannot parse {s:?}"))?;
    let den = BigInt::from(10u32).pow(frac_part.len() as u32);
    Ok(Rat::new(num * sign, den))
}

fn rat_from_value(key: &str, v: &Value) -> Result<Rat, String> {
    match v {
        Value::String(s) => parse_rational_text(s),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                Ok(Rat::from_integer(u.into()))
            } else if let Some(i) = n.as_i64() {
                Ok(Rat::from_integer(i.into()))
            } else {
                let f = n.as_f64().ok_or_else(|| format!("{key}: bad number"))?;
                Rat::from_float(f).ok_or_else(|| format!("{key}: non-finite number"))
            }
        }
        other => Err(format!("{key}: expected a rational, got {other}")),
    }
}

fn f64_from_value(key: &str, v: &Value) -> Result<f64, String> {
    let f = match v {
        Value::Number(n) => n
            .as_f64()
            .ok_or_else(|| format!("{key}: bad number"))?,
        Value::String(s) => match s.trim().parse::<f64>() {
            Ok(f) => f,
            Err(_) => parse_rational_text(s)?
                .to_f64()
                .ok_or_else(|| format!("{key}: value out of f64 range"))?,
        },
        other => return Err(format!("{key}: expected a number, got {other}")),
    };
    if !f.is_finite() {
        return Err(format!("{key}: must be finite, got {f}"));
    }
    Ok(f)
}

fn u64_from_value(key: &str, v: &Value) -> Result<u64, String> {
    match v {
        Value::Number(n) => n
            .as_u64()
            .ok_or_else(|| format!("{key}: expected a nonnegative integer, got {n}")),
        Value::String(s) => s
            .trim()
            .parse::<u64>()
            .map_err(|_| format!("{key}: expected a nonnegative integer, got {s:?}")),
        other => Err(format!("{key}: expected an integer, got {other}")),
    }
}

/// Builds an offspring law from a parameter value: a JSON object
/// `{"r": 2, "support": {"2": "3/5", "5": "2/5"}}` or
/// `{"r": 2, "family": "claim39"}`, the same object as embedded JSON
/// text, or the shorthands `δk`/`deltak`/`dk` (point mass at k with
/// r = 2) and `claim39` (r = 2). Returns the law with its canonical
/// object form.
pub fn parse_xi_value(v: &Value) -> Result<(OffspringDistribution, Value), String> {
    match v {
        Value::String(s) => {
            let s = s.trim();
            if s.starts_with('{') {
                let inner: Value = serde_json::from_str(s)
                    .map_err(|e| format!("xi: embedded JSON does not parse: {e}"))?;
                parse_xi_value(&inner)
            } else {
                xi_shorthand(s)
            }
        }
        Value::Object(obj) => {
            for key in obj.keys() {
                if key != "r" && key != "support" && key != "family" {
                    return Err(format!(
                        "xi: unknown key {key:?} (expected r, support, family)"
                    ));
                }
            }
            let r = obj
                .get("r")
                .ok_or_else(|| "xi: missing \"r\"".to_string())
                .and_then(|v| u64_from_value("xi.r", v))?;
            let r = u32::try_from(r).map_err(|_| "xi.r: out of range".to_string())?;
            let xi = match (obj.get("support"), obj.get("family")) {
                (Some(Value::Object(m)), None) => {
                    let mut weights = BTreeMap::new();
                    for (k, w) in m {
                        let k: u32 = k
                            .trim()
                            .parse()
                            .map_err(|_| format!("xi.support: bad child count {k:?}"))?;
                        weights.insert(k, rat_from_value("xi.support", w)?);
                    }
                    OffspringDistribution::finite(r, weights).map_err(|e| e.to_string())?
                }
                (Some(other), None) => {
                    return Err(format!("xi.support: expected a weight map, got {other}"))
                }
                (None, Some(Value::String(f))) if f == "claim39" => {
                    OffspringDistribution::claim39(r).map_err(|e| e.to_string())?
                }
                (None, Some(other)) => {
                    return Err(format!("xi.family: expected \"claim39\", got {other}"))
                }
                _ => {
                    return Err(
                        "xi: exactly one of \"support\" and \"family\" is required".to_string()
                    )
                }
            };
            Ok((xi.clone(), canonical_xi(&xi)))
        }
        other => Err(format!("xi: expected an object or string, got {other}")),
    }
}

fn xi_shorthand(s: &str) -> Result<(OffspringDistribution, Value), String> {
    if s == "claim39" {
        let xi = OffspringDistribution::claim39(2).map_err(|e| e.to_string())?;
        return Ok((xi.clone(), canonical_xi(&xi)));
    }
    for prefix in ["δ", "delta", "d"] {
        if let Some(rest) = s.strip_prefix(prefix) {
            if let Ok(k) = rest.parse::<u32>() {
                let xi = OffspringDistribution::dirac(2, k).map_err(|e| e.to_string())?;
                return Ok((xi.clone(), canonical_xi(&xi)));
            }
        }
    }
    Err(format!(
        "xi: cannot parse {s:?}; use δk, claim39, or a JSON law object"
    ))
}

fn canonical_xi(xi: &OffspringDistribution) -> Value {
    serde_json::to_value(xi).expect("offspring laws serialize")
}

/// Reader over one command's parameter map. Every getter consumes its
/// key and records the resolved value (defaults included), so `finish`
/// yields both an unknown-key check and the canonical map echoed into
/// the manifest.
pub struct Params {
    map: BTreeMap<String, Value>,
    canonical: BTreeMap<String, Value>,
}

impl Params {
    pub fn new(map: &BTreeMap<String, Value>) -> Self {
        Params {
            map: map.clone(),
            canonical: BTreeMap::new(),
        }
    }

    /// Errors on leftover (unknown) keys; returns the canonical map.
    pub fn finish(self) -> Result<BTreeMap<String, Value>, String> {
        if self.map.is_empty() {
            return Ok(self.canonical);
        }
        let keys: Vec<&str> = self.map.keys().map(|s| s.as_str()).collect();
        Err(format!("unknown parameter keys: {}", keys.join(", ")))
    }

    fn record(&mut self, key: &str, v: Value) {
        self.canonical.insert(key.to_string(), v);
    }

    pub fn xi(&mut self) -> Result<OffspringDistribution, String> {
        let v = self
            .map
            .remove("xi")
            .ok_or_else(|| "missing required parameter: xi".to_string())?;
        let (xi, canonical) = parse_xi_value(&v)?;
        self.record("xi", canonical);
        Ok(xi)
    }

    pub fn rat_opt(&mut self, key: &str) -> Result<Option<Rat>, String> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => {
                let r = rat_from_value(key, &v)?;
                self.record(key, Value::String(rat_to_string(&r)));
                Ok(Some(r))
            }
        }
    }

    pub fn rat_required(&mut self, key: &str) -> Result<Rat, String> {
        self.rat_opt(key)?
            .ok_or_else(|| format!("missing required parameter: {key}"))
    }

    pub fn f64_opt(&mut self, key: &str) -> Result<Option<f64>, String> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => {
                let f = f64_from_value(key, &v)?;
                self.record(key, json_f64(f));
                Ok(Some(f))
            }
        }
    }

    pub fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, String> {
        let f = self.f64_opt(key)?.unwrap_or(default);
        self.record(key, json_f64(f));
        Ok(f)
    }

    pub fn f64_required(&mut self, key: &str) -> Result<f64, String> {
        self.f64_opt(key)?
            .ok_or_else(|| format!("missing required parameter: {key}"))
    }

    pub fn u64_opt(&mut self, key: &str) -> Result<Option<u64>, String> {
        match self.map.remove(key) {
            None => Ok(None),
            Some(v) => {
                let u = u64_from_value(key, &v)?;
                self.record(key, Value::from(u));
                Ok(Some(u))
            }
        }
    }

    pub fn u64_or(&mut self, key: &str, default: u64) -> Result<u64, String> {
        let u = self.u64_opt(key)?.unwrap_or(default);
        self.record(key, Value::from(u));
        Ok(u)
    }

    pub fn u32_opt(&mut self, key: &str) -> Result<Option<u32>, String> {
        match self.u64_opt(key)? {
            None => Ok(None),
            Some(u) => u32::try_from(u)
                .map(Some)
                .map_err(|_| format!("{key}: out of range")),
        }
    }

    pub fn u32_required(&mut self, key: &str) -> Result<u32, String> {
        self.u32_opt(key)?
            .ok_or_else(|| format!("missing required parameter: {key}"))
    }

    pub fn u32_or(&mut self, key: &str, default: u32) -> Result<u32, String> {
        Ok(self.u32_opt(key)?.unwrap_or_else(|| {
            self.record(key, Value::from(default));
            default
        }))
    }

    pub fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, String> {
        let b = match self.map.remove(key) {
            None => default,
            Some(Value::Bool(b)) => b,
            Some(Value::String(s)) => s
                .trim()
                .parse::<bool>()
                .map_err(|_| format!("{key}: expected true or false, got {s:?}"))?,
            Some(other) => return Err(format!("{key}: expected a boolean, got {other}")),
        };
        self.record(key, Value::Bool(b));
        Ok(b)
    }

    pub fn string_or(&mut self, key: &str, default: &str) -> Result<String, String> {
        let s = match self.map.remove(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s,
            Some(other) => return Err(format!("{key}: expected a string, got {other}")),
        };
        self.record(key, Value::String(s.clone()));
        Ok(s)
    }

    pub fn f64_list_opt(&mut self, key: &str) -> Result<Option<Vec<f64>>, String> {
        let v = match self.map.remove(key) {
            None => return Ok(None),
            Some(v) => v,
        };
        let items: Vec<f64> = match v {
            Value::Array(items) => items
                .iter()
                .map(|x| f64_from_value(key, x))
                .collect::<Result<_, _>>()?,
            Value::String(s) => s
                .split(',')
                .map(|part| f64_from_value(key, &Value::String(part.trim().into())))
                .collect::<Result<_, _>>()?,
            Value::Number(_) => vec![f64_from_value(key, &v)?],
            other => return Err(format!("{key}: expected a list, got {other}")),
        };
        if items.is_empty() {
            return Err(format!("{key}: list must be nonempty"));
        }
        self.record(key, Value::Array(items.iter().map(|&f| json_f64(f)).collect()));
        Ok(Some(items))
    }

    pub fn f64_list_required(&mut self, key: &str) -> Result<Vec<f64>, String> {
        self.f64_list_opt(key)?
            .ok_or_else(|| format!("missing required parameter: {key}"))
    }

    pub fn rat_list_opt(&mut self, key: &str) -> Result<Option<Vec<Rat>>, String> {
        let v = match self.map.remove(key) {
            None => return Ok(None),
            Some(v) => v,
        };
        let items: Vec<Rat> = match v {
            Value::Array(items) => items
                .iter()
                .map(|x| rat_from_value(key, x))
                .collect::<Result<_, _>>()?,
            Value::String(s) => s
                .split(',')
                .map(parse_rational_text)
                .collect::<Result<_, _>>()?,
            Value::Number(_) => vec![rat_from_value(key, &v)?],
            other => return Err(format!("{key}: expected a list, got {other}")),
        };
        if items.is_empty() {
            return Err(format!("{key}: list must be nonempty"));
        }
        self.record(
            key,
            Value::Array(
                items
                    .iter()
                    .map(|r| Value::String(rat_to_string(r)))
                    .collect(),
            ),
        );
        Ok(Some(items))
    }

    pub fn u32_list_required(&mut self, key: &str) -> Result<Vec<u32>, String> {
        let v = self
            .map
            .remove(key)
            .ok_or_else(|| format!("missing required parameter: {key}"))?;
        let items: Vec<u32> = match v {
            Value::Array(items) => items
                .iter()
                .map(|x| u64_from_value(key, x).and_then(|u| {
                    u32::try_from(u).map_err(|_| format!("{key}: out of range"))
                }))
                .collect::<Result<_, _>>()?,
            Value::String(s) => s
                .split(',')
                .map(|part| {
                    part.trim()
                        .parse::<u32>()
                        .map_err(|_| format!("{key}: bad integer {part:?}"))
                })
                .collect::<Result<_, _>>()?,
            Value::Number(n) => vec![n
                .as_u64()
                .and_then(|u| u32::try_from(u).ok())
                .ok_or_else(|| format!("{key}: bad integer {n}"))?],
            other => return Err(format!("{key}: expected a list, got {other}")),
        };
        if items.is_empty() {
            return Err(format!("{key}: list must be nonempty"));
        }
        self.record(
            key,
            Value::Array(items.iter().map(|&u| Value::from(u)).collect()),
        );
        Ok(items)
    }
}

/// Finite floats only; call sites validate beforehand.
pub fn json_f64(f: f64) -> Value {
    serde_json::Number::from_f64(f).map(Value::Number).unwrap_or(Value::Null)
}
