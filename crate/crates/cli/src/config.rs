//! Flat `key = value` run configuration with command-line overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use macrobell::closed_form::{Branch, CurveModel, Observable};
use macrobell::fitting::Weighting;
use macrobell::modes::{BellStateKind, Efficiencies, SourceParams};

use crate::CliError;

pub const KEYS: &[&str] = &[
    "state",
    "gamma",
    "n_mean",
    "eta",
    "schmidt_modes",
    "n_max",
    "seed",
    "angles",
    "pulses",
    "output",
    "input",
    "model",
    "branch",
    "base_angle",
    "noise_sd",
    "resamples",
    "weights",
    "settings",
    "significance",
    "samples",
    "tolerance",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub state: BellStateKind,
    pub params: SourceParams,
    pub eta: Efficiencies,
    pub n_max: u32,
    pub seed: u64,
    /// Degrees, as given.
    pub angles_deg: Vec<f64>,
    pub pulses: usize,
    pub output: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub observable: Observable,
    pub branch: Branch,
    pub base_angle_deg: f64,
    pub noise_sd: f64,
    pub resamples: usize,
    pub weights: Weighting,
    pub settings: String,
    pub significance: f64,
    pub samples: usize,
    /// Replaces the crosscheck threshold when set.
    pub tolerance: Option<f64>,
}

fn bad(key: &str, value: &str, why: impl std::fmt::Display) -> CliError {
    CliError::Validation(format!("{key}={value}: {why}"))
}

/// Reads `key = value` lines; `#` starts a comment.
pub fn read_file(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
    parse_pairs(&text)
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("config line {}: expected key = value", no + 1)))?;
        out.insert(normalize_key(k), v.trim().to_string());
    }
    Ok(out)
}

pub fn normalize_key(k: &str) -> String {
    k.trim().to_ascii_lowercase().replace('-', "_")
}

fn num<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: std::fmt::Display,
{
    match map.get(key) {
        Some(v) => v.parse().map_err(|e| bad(key, v, e)),
        None => Ok(default),
    }
}

/// `a:b:step` (inclusive) or a comma list, in degrees.
pub fn parse_angles(v: &str) -> Result<Vec<f64>, CliError> {
    let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| bad("angles", v, e));
    let angles: Vec<f64> = if v.contains(':') {
        let parts: Vec<&str> = v.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("angles", v, "range form is start:stop:step"));
        }
        let (a, b, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0) || b < a {
            return Err(bad("angles", v, "need step > 0 and stop >= start"));
        }
        let count = ((b - a) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| a + k as f64 * step).collect()
    } else {
        v.split(',').filter(|s| !s.trim().is_empty()).map(parse).collect::<Result<_, _>>()?
    };
    if angles.is_empty() {
        return Err(bad("angles", v, "empty grid"));
    }
    Ok(angles)
}

fn parse_eta(v: &str) -> Result<Efficiencies, CliError> {
    let vals: Vec<f64> = v
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| bad("eta", v, e)))
        .collect::<Result<_, _>>()?;
    let eff = match vals.as_slice() {
        [e] => Efficiencies::uniform(*e),
        [a, b, c, d] => Efficiencies::per_mode([*a, *b, *c, *d]),
        _ => return Err(bad("eta", v, "give one value or four (AH,AV,BH,BV)")),
    };
    eff.map_err(|e| bad("eta", v, e))
}

impl RunConfig {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self, CliError> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(CliError::Validation(format!("unknown config key `{k}`")));
        }
        let state: BellStateKind = match map.get("state") {
            Some(v) => v.parse().map_err(|e| bad("state", v, e))?,
            None => BellStateKind::PhiMinus,
        };
        let cells: u32 = num(map, "schmidt_modes", 1250)?;
        let params = match (map.get("gamma"), map.get("n_mean")) {
            (Some(_), Some(_)) => {
                return Err(CliError::Validation("give exactly one of gamma and n_mean".into()));
            }
            (Some(g), None) => {
                let g: f64 = g.parse().map_err(|e| bad("gamma", g, e))?;
                SourceParams::new(g, cells)
            }
            (None, n) => {
                let n: f64 = match n {
                    Some(v) => v.parse().map_err(|e| bad("n_mean", v, e))?,
                    None => 0.8,
                };
                SourceParams::from_mean_photons(n, cells)
            }
        }
        .map_err(|e| CliError::Validation(e.to_string()))?;
        let eta = match map.get("eta") {
            Some(v) => parse_eta(v)?,
            None => Efficiencies::uniform(0.4).expect("valid default"),
        };
        let observable = match map.get("model") {
            Some(v) => v.parse().map_err(|e| bad("model", v, e))?,
            None => Observable::NrfHwp,
        };
        let branch = match map.get("branch").map(String::as_str) {
            None | Some("+") | Some("plus") => Branch::Plus,
            Some("-") | Some("minus") => Branch::Minus,
            Some(v) => return Err(bad("branch", v, "expected plus or minus")),
        };
        let weights = match map.get("weights").map(String::as_str) {
            None | Some("inverse-variance") => Weighting::InverseVariance,
            Some("uniform") => Weighting::Uniform,
            Some(v) => return Err(bad("weights", v, "expected inverse-variance or uniform")),
        };
        let angles_deg = match map.get("angles") {
            Some(v) => parse_angles(v)?,
            None => parse_angles("0:90:7.5")?,
        };
        let noise_sd: f64 = num(map, "noise_sd", 0.0)?;
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(bad("noise_sd", &noise_sd.to_string(), "must be >= 0"));
        }
        let config = RunConfig {
            state,
            params,
            eta,
            n_max: num(map, "n_max", 40)?,
            seed: num(map, "seed", 1)?,
            angles_deg,
            pulses: num(map, "pulses", 10_000)?,
            output: map.get("output").map(PathBuf::from),
            input: map.get("input").map(PathBuf::from),
            observable,
            branch,
            base_angle_deg: num(map, "base_angle", 0.0)?,
            noise_sd,
            resamples: num(map, "resamples", 1000)?,
            weights,
            settings: map.get("settings").cloned().unwrap_or_else(|| "witness".into()),
            significance: num(map, "significance", 0.0)?,
            samples: num(map, "samples", 5)?,
            tolerance: map.get("tolerance").map(|v| v.parse().map_err(|e| bad("tolerance", v, e))).transpose()?,
        };
        Ok(config)
    }

    pub fn model(&self) -> Result<CurveModel, CliError> {
        let m = CurveModel::new(self.state, self.observable)
            .with_branch(self.branch)
            .with_base_angle(self.base_angle_deg.to_radians());
        m.validate().map_err(|e| CliError::Validation(format!("model {}: {e}", m.id())))?;
        Ok(m)
    }

    /// Scalar efficiency for the closed forms.
    pub fn uniform_eta(&self) -> Option<f64> {
        self.eta.is_uniform().then_some(self.eta.0[0])
    }

    pub fn single_cell(&self) -> SourceParams {
        self.params.with_schmidt_modes(1).expect("one cell is valid")
    }
}
