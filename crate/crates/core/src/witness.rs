//! Polarization entanglement witnesses for the macroscopic Bell states.
//!
//! For a state whose arm-A and arm-B Stokes operators are pairwise
//! (anti)correlated, the separability condition reads
//! `Σᵢ Var(Sᵢᵃ ∓ Sᵢᵇ) / ⟨S0ᵃ + S0ᵇ⟩ ≥ 2`; a smaller value certifies
//! entanglement.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modes::{AnalyzerPair, BellStateKind, Efficiencies, PlateKind, SourceParams, StokesMoments};
use crate::montecarlo::{CellSampler, PulseRecord};
use crate::stats::{self, bootstrap_std_err_stratified, derive_seed};

pub const THRESHOLD: f64 = 2.0;

/// Setting labels of the three joint measurements, in S1, S2, S3 order.
pub const SETTING_LABELS: [&str; 3] = ["s1", "s2", "s3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Entangled,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessTerm {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub kind: BellStateKind,
    pub terms: Vec<WitnessTerm>,
    pub normalization: f64,
    pub lhs: f64,
    pub threshold: f64,
    pub verdict: Verdict,
    pub std_err: Option<f64>,
}

/// Sign `c_i` in `Var(Sᵢᵃ + c_i·Sᵢᵇ)`: minus where the state correlates the
/// two arms, plus where it anticorrelates them.
pub fn term_signs(kind: BellStateKind) -> [f64; 3] {
    match kind {
        BellStateKind::PhiPlus => [-1.0, -1.0, 1.0],
        BellStateKind::PhiMinus => [-1.0, 1.0, -1.0],
        BellStateKind::PsiPlus => [1.0, -1.0, -1.0],
        BellStateKind::PsiMinus => [1.0, 1.0, 1.0],
    }
}

fn term_name(i: usize, sign: f64) -> String {
    format!("var(s{i}a{}s{i}b)", if sign < 0.0 { '-' } else { '+' })
}

/// Analyzer settings measuring S1, S2 and S3 on both arms.
pub fn witness_settings() -> [AnalyzerPair; 3] {
    [
        AnalyzerPair::identity(),
        AnalyzerPair::global(&[(PlateKind::Half, FRAC_PI_8)]),
        AnalyzerPair::global(&[(PlateKind::Quarter, FRAC_PI_4)]),
    ]
}

fn verdict(lhs: f64, std_err: f64, significance: f64) -> Verdict {
    if lhs + significance * std_err < THRESHOLD {
        Verdict::Entangled
    } else {
        Verdict::Inconclusive
    }
}

/// Witness evaluated on exact Stokes moments (significance 0).
pub fn witness_from_moments(moments: &StokesMoments, kind: BellStateKind) -> Result<WitnessReport> {
    let normalization = moments.normalization();
    if normalization <= 0.0 {
        return Err(Error::ZeroNormalization);
    }
    let signs = term_signs(kind);
    let terms: Vec<WitnessTerm> = (1..=3)
        .map(|i| WitnessTerm {
            name: term_name(i, signs[i - 1]),
            value: moments.var_combination(i, signs[i - 1], i),
        })
        .collect();
    let lhs = terms.iter().map(|t| t.value).sum::<f64>() / normalization;
    Ok(WitnessReport {
        kind,
        terms,
        normalization,
        lhs,
        threshold: THRESHOLD,
        verdict: verdict(lhs, 0.0, 0.0),
        std_err: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessOptions {
    pub resamples: usize,
    pub seed: u64,
    /// `k` in the rule `lhs + k·std_err < 2`.
    pub significance: f64,
}

impl Default for WitnessOptions {
    fn default() -> Self {
        WitnessOptions {
            resamples: stats::DEFAULT_RESAMPLES,
            seed: 0,
            significance: 0.0,
        }
    }
}

struct SettingColumns {
    /// `Sᵢᵃ + c·Sᵢᵇ` per pulse.
    combo: Vec<f64>,
    /// `S0ᵃ + S0ᵇ` per pulse.
    total: Vec<f64>,
}

fn split_settings(records: &[PulseRecord], signs: &[f64; 3]) -> Result<Vec<SettingColumns>> {
    let mut groups: BTreeMap<&str, Vec<&PulseRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.setting_id.as_str()).or_default().push(r);
    }
    let unknown: Vec<&str> = groups.keys().copied().filter(|k| !SETTING_LABELS.contains(k)).collect();
    let missing: Vec<&str> = SETTING_LABELS.iter().copied().filter(|k| !groups.contains_key(k)).collect();
    if !unknown.is_empty() || !missing.is_empty() {
        return Err(Error::SettingMismatch(format!(
            "expected labels {SETTING_LABELS:?}; unknown {unknown:?}, missing {missing:?}"
        )));
    }
    Ok(SETTING_LABELS
        .iter()
        .zip(signs)
        .map(|(label, &c)| {
            let rows = &groups[label];
            let stokes = |t: u64, r: u64| t as f64 - r as f64;
            SettingColumns {
                combo: rows
                    .iter()
                    .map(|r| stokes(r.counts[0], r.counts[1]) + c * stokes(r.counts[2], r.counts[3]))
                    .collect(),
                total: rows.iter().map(|r| r.counts.iter().sum::<u64>() as f64).collect(),
            }
        })
        .collect())
}

fn variance_over(xs: &[f64], idx: &[usize]) -> f64 {
    let n = idx.len() as f64;
    let (s, ss) = idx.iter().fold((0.0, 0.0), |(s, ss), &i| (s + xs[i], ss + xs[i] * xs[i]));
    (ss - s * s / n) / (n - 1.0)
}

fn lhs_over(cols: &[SettingColumns], idx: &[Vec<usize>]) -> (Vec<f64>, f64, f64) {
    let terms: Vec<f64> = cols.iter().zip(idx).map(|(c, i)| variance_over(&c.combo, i)).collect();
    let (tot, cnt) = cols
        .iter()
        .zip(idx)
        .fold((0.0, 0usize), |(t, n), (c, i)| (t + i.iter().map(|&k| c.total[k]).sum::<f64>(), n + i.len()));
    let normalization = tot / cnt as f64;
    let lhs = terms.iter().sum::<f64>() / normalization;
    (terms, normalization, lhs)
}

/// Witness estimated from pulse records labelled with [`SETTING_LABELS`].
/// Each term is the sample variance of its own setting; the normalization
/// pools all pulses. The error is a bootstrap resampling within settings.
pub fn witness_from_records(
    records: &[PulseRecord],
    kind: BellStateKind,
    opts: &WitnessOptions,
) -> Result<WitnessReport> {
    let signs = term_signs(kind);
    let cols = split_settings(records, &signs)?;
    let sizes: Vec<usize> = cols.iter().map(|c| c.combo.len()).collect();
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }
    let full: Vec<Vec<usize>> = sizes.iter().map(|&n| (0..n).collect()).collect();
    let (values, normalization, lhs) = lhs_over(&cols, &full);
    if normalization <= 0.0 {
        return Err(Error::ZeroNormalization);
    }
    let std_err = bootstrap_std_err_stratified(&sizes, opts.resamples, opts.seed, |idx| {
        let (_, norm, l) = lhs_over(&cols, idx);
        if norm > 0.0 {
            l
        } else {
            0.0
        }
    })?;
    let terms = values
        .into_iter()
        .enumerate()
        .map(|(k, value)| WitnessTerm {
            name: term_name(k + 1, signs[k]),
            value,
        })
        .collect();
    Ok(WitnessReport {
        kind,
        terms,
        normalization,
        lhs,
        threshold: THRESHOLD,
        verdict: verdict(lhs, std_err, opts.significance),
        std_err: Some(std_err),
    })
}

/// Simulated records for the three witness settings, `pulses` in total split
/// as evenly as possible.
pub fn sample_witness_records(
    kind: BellStateKind,
    params: &SourceParams,
    eta: &Efficiencies,
    electronic_noise_sd: f64,
    pulses: usize,
    seed: u64,
) -> Result<Vec<PulseRecord>> {
    let mut out = Vec::with_capacity(pulses);
    for (k, (settings, label)) in witness_settings().iter().zip(SETTING_LABELS).enumerate() {
        let share = pulses / 3 + usize::from(k < pulses % 3);
        let sampler = CellSampler::new(kind, params, settings)?;
        out.extend(sampler.sample(eta, electronic_noise_sd, share, derive_seed(seed, k as u64), label)?);
    }
    Ok(out)
}
