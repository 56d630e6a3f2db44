//! Pulse-level detection simulator and estimators.
//!
//! A pulse is `M` independent Schmidt cells, each drawn from the exact
//! single-cell photon-number distribution after the analyzers, summed per
//! mode, thinned binomially at the port efficiencies and optionally blurred
//! by integer electronic noise.

use log::warn;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::{Binomial, Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::closed_form::CurveModel;
use crate::convention::{physical_measurement, Readout};
use crate::error::{invalid, Error, Result};
use crate::fock::{norm_deficit, FockState, Occupation};
use crate::modes::{
    AnalyzerPair, BellStateKind, Efficiencies, Jones, Port, SourceParams, DIFF_A, DIFF_B, SUM_A, SUM_B,
};
use crate::stats::{self, derive_seed, stream_rng};

/// Desk-scale number of Schmidt cells per pulse (about 10³ detected photons
/// at η = 0.4, n̄ = 0.8).
pub const DEFAULT_SCHMIDT_MODES: u32 = 1250;

/// Largest probability mass the cached cell distribution may drop.
pub const SAMPLER_DEFICIT: f64 = 1e-9;

const MAX_SAMPLER_N: u32 = 4000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub setting_id: String,
    /// Port counts in the order a_t, a_r, b_t, b_r.
    pub counts: [u64; 4],
}

impl PulseRecord {
    pub fn port(&self, p: Port) -> u64 {
        self.counts[p.index()]
    }
}

fn sampler_n_max(gamma: f64) -> Result<u32> {
    (0..=MAX_SAMPLER_N)
        .find(|&n| norm_deficit(gamma, n) < SAMPLER_DEFICIT)
        .ok_or_else(|| invalid("gamma", format!("{gamma} needs more than {MAX_SAMPLER_N} photons per mode")))
}

/// Cached single-cell distribution for one analyzer setting.
pub struct CellSampler {
    support: Vec<Occupation>,
    alias: WeightedAliasIndex<f64>,
    cells: u32,
}

impl CellSampler {
    pub fn new(kind: BellStateKind, params: &SourceParams, settings: &AnalyzerPair) -> Result<Self> {
        let (ua, ub) = settings.unitaries()?;
        Self::from_unitaries(kind, params, &ua, &ub)
    }

    pub fn from_unitaries(kind: BellStateKind, params: &SourceParams, ua: &Jones, ub: &Jones) -> Result<Self> {
        let n_max = sampler_n_max(params.gamma())?;
        let state = FockState::build(kind, params, n_max)?
            .apply_arm_unitary(crate::modes::Arm::A, ua)?
            .apply_arm_unitary(crate::modes::Arm::B, ub)?;
        let dist = state.number_distribution();
        let (support, weights): (Vec<Occupation>, Vec<f64>) =
            dist.probs().iter().filter(|(_, &p)| p > 0.0).map(|(o, &p)| (*o, p)).unzip();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| invalid("distribution", e.to_string()))?;
        Ok(CellSampler {
            support,
            alias,
            cells: params.schmidt_modes(),
        })
    }

    pub fn support_len(&self) -> usize {
        self.support.len()
    }

    /// Lossless photon numbers of one pulse.
    fn draw_pulse<R: Rng>(&self, rng: &mut R) -> [u64; 4] {
        let mut sum = [0u64; 4];
        for _ in 0..self.cells {
            let occ = &self.support[self.alias.sample(rng)];
            for k in 0..4 {
                sum[k] += occ[k] as u64;
            }
        }
        sum
    }

    pub fn sample(
        &self,
        eta: &Efficiencies,
        noise_sd: f64,
        pulses: usize,
        seed: u64,
        setting_id: &str,
    ) -> Result<Vec<PulseRecord>> {
        if pulses == 0 {
            return Err(invalid("pulses", "must be at least 1"));
        }
        let noise = electronic_noise(noise_sd)?;
        (0..pulses)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream_rng(seed, p as u64);
                let raw = self.draw_pulse(&mut rng);
                let mut counts = [0u64; 4];
                for k in 0..4 {
                    counts[k] = thin(raw[k], eta.0[k], &mut rng)?;
                }
                if let Some(noise) = &noise {
                    add_noise(&mut counts, noise, &mut rng);
                }
                Ok(PulseRecord {
                    setting_id: setting_id.to_string(),
                    counts,
                })
            })
            .collect()
    }
}

fn thin<R: Rng>(n: u64, eta: f64, rng: &mut R) -> Result<u64> {
    if eta == 1.0 || n == 0 {
        return Ok(n);
    }
    Ok(Binomial::new(n, eta).map_err(|e| invalid("eta", e.to_string()))?.sample(rng))
}

fn electronic_noise(sd: f64) -> Result<Option<Normal<f64>>> {
    if !(sd >= 0.0 && sd.is_finite()) {
        return Err(invalid("electronic_noise_sd", format!("{sd} must be finite and nonnegative")));
    }
    if sd == 0.0 {
        return Ok(None);
    }
    Ok(Some(Normal::new(0.0, sd).map_err(|e| invalid("electronic_noise_sd", e.to_string()))?))
}

fn add_noise<R: Rng>(counts: &mut [u64; 4], noise: &Normal<f64>, rng: &mut R) {
    for c in counts.iter_mut() {
        let v = *c as f64 + noise.sample(rng).round();
        *c = v.max(0.0) as u64;
    }
}

/// Samples `pulses` records of `kind` at one analyzer setting.
#[allow(clippy::too_many_arguments)]
pub fn sample_pulses(
    kind: BellStateKind,
    params: &SourceParams,
    settings: &AnalyzerPair,
    eta: &Efficiencies,
    electronic_noise_sd: f64,
    pulses: usize,
    seed: u64,
    setting_id: &str,
) -> Result<Vec<PulseRecord>> {
    CellSampler::new(kind, params, settings)?.sample(eta, electronic_noise_sd, pulses, seed, setting_id)
}

/// Classical light: independent coherent amplitudes in AH, AV, BH, BV with
/// Poissonian port counts after the analyzers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentSource {
    pub field: [Complex64; 4],
}

impl CoherentSource {
    /// Both arms carry `mean` photons per pulse polarized along H.
    pub fn horizontal(mean: f64) -> Self {
        let a = Complex64::new(mean.sqrt(), 0.0);
        let z = Complex64::new(0.0, 0.0);
        CoherentSource { field: [a, z, a, z] }
    }

    pub fn port_means(&self, ua: &Jones, ub: &Jones) -> [f64; 4] {
        let f = &self.field;
        let a = ua * nalgebra::Vector2::new(f[0], f[1]);
        let b = ub * nalgebra::Vector2::new(f[2], f[3]);
        [a[0].norm_sqr(), a[1].norm_sqr(), b[0].norm_sqr(), b[1].norm_sqr()]
    }

    pub fn sample(
        &self,
        settings: &AnalyzerPair,
        eta: &Efficiencies,
        pulses: usize,
        seed: u64,
        setting_id: &str,
    ) -> Result<Vec<PulseRecord>> {
        if pulses == 0 {
            return Err(invalid("pulses", "must be at least 1"));
        }
        let (ua, ub) = settings.unitaries()?;
        let means = self.port_means(&ua, &ub);
        let dists: Vec<Option<Poisson<f64>>> = (0..4)
            .map(|k| {
                let m = means[k] * eta.0[k];
                if m > 0.0 {
                    Poisson::new(m).map(Some).map_err(|e| invalid("mean", e.to_string()))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok((0..pulses)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream_rng(seed, p as u64);
                let counts = std::array::from_fn(|k| dists[k].as_ref().map_or(0, |d| d.sample(&mut rng) as u64));
                PulseRecord {
                    setting_id: setting_id.to_string(),
                    counts,
                }
            })
            .collect())
    }
}

/// Shot-noise calibration: Poissonian pulses of the given mean split on a
/// balanced port pair; returns `Var(N1 − N2)/⟨N1 + N2⟩` (ideally 1).
pub fn snl_calibrate(mean_photons_per_pulse: f64, pulses: usize, seed: u64) -> Result<f64> {
    if !(mean_photons_per_pulse > 0.0 && mean_photons_per_pulse.is_finite()) {
        return Err(invalid("mean_photons_per_pulse", "must be positive"));
    }
    if pulses < 2 {
        return Err(Error::InsufficientData { needed: 2, got: pulses });
    }
    let port = Poisson::new(mean_photons_per_pulse / 2.0).map_err(|e| invalid("mean", e.to_string()))?;
    let pairs: Vec<(f64, f64)> = (0..pulses)
        .into_par_iter()
        .map(|p| {
            let mut rng = stream_rng(seed, p as u64);
            let n1: f64 = port.sample(&mut rng);
            let n2: f64 = port.sample(&mut rng);
            (n1 - n2, n1 + n2)
        })
        .collect();
    let (d, s): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    Ok(stats::ratio_of_variance(&d, &s, 0..pulses))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NrfEstimate {
    pub value: f64,
    pub std_err: f64,
    pub pulses: usize,
    /// Sample variance was exactly zero.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    /// Shot-noise factor the raw ratio is divided by.
    pub snl_factor: Option<f64>,
    pub resamples: usize,
    pub seed: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            snl_factor: None,
            resamples: stats::DEFAULT_RESAMPLES,
            seed: 0,
        }
    }
}

/// `Var(w·N) / ⟨s·N⟩` over the records with a bootstrap error.
pub fn estimate_ratio(
    records: &[PulseRecord],
    w: &[f64; 4],
    s: &[f64; 4],
    opts: &EstimatorOptions,
) -> Result<NrfEstimate> {
    if records.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: records.len(),
        });
    }
    let dot = |v: &[f64; 4], r: &PulseRecord| (0..4).map(|k| v[k] * r.counts[k] as f64).sum::<f64>();
    let d: Vec<f64> = records.iter().map(|r| dot(w, r)).collect();
    let sums: Vec<f64> = records.iter().map(|r| dot(s, r)).collect();
    if sums.iter().sum::<f64>() <= 0.0 {
        return Err(Error::ZeroNormalization);
    }
    let scale = match opts.snl_factor {
        Some(f) if f > 0.0 => 1.0 / f,
        Some(f) => return Err(invalid("snl_factor", format!("{f} must be positive"))),
        None => 1.0,
    };
    let n = records.len();
    let value = stats::ratio_of_variance(&d, &sums, 0..n) * scale;
    let degenerate = d.iter().all(|&x| x == d[0]);
    if degenerate {
        warn!("all {n} records give the same difference; variance is degenerate");
        return Ok(NrfEstimate {
            value,
            std_err: 0.0,
            pulses: n,
            degenerate,
        });
    }
    let std_err = stats::bootstrap_std_err(n, opts.resamples, opts.seed, |idx| {
        let v = stats::ratio_of_variance(&d, &sums, idx.iter().copied());
        if v.is_finite() {
            v * scale
        } else {
            0.0
        }
    })?;
    Ok(NrfEstimate {
        value,
        std_err,
        pulses: n,
        degenerate,
    })
}

/// Sample `Var(N_i − N_j)/⟨N_i + N_j⟩`.
pub fn estimate_nrf(records: &[PulseRecord], i: Port, j: Port, opts: &EstimatorOptions) -> Result<NrfEstimate> {
    let mut w = [0.0; 4];
    let mut s = [0.0; 4];
    w[i.index()] += 1.0;
    w[j.index()] -= 1.0;
    s[i.index()] += 1.0;
    s[j.index()] += 1.0;
    estimate_ratio(records, &w, &s, opts).map_err(|e| match e {
        Error::ZeroNormalization => Error::UndefinedNrf(i.mode(), j.mode()),
        other => other,
    })
}

/// Estimate of a ledger readout from records.
pub fn estimate_readout(records: &[PulseRecord], readout: &Readout, opts: &EstimatorOptions) -> Result<NrfEstimate> {
    match *readout {
        Readout::Nrf(i, j) => estimate_nrf(records, i, j, opts),
        Readout::StokesVariance { sign } => {
            let w = std::array::from_fn(|k| DIFF_A[k] + sign * DIFF_B[k]);
            let s = std::array::from_fn(|k| SUM_A[k] + SUM_B[k]);
            estimate_ratio(records, &w, &s, opts)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub params: SourceParams,
    pub eta: Efficiencies,
    pub pulses: usize,
    pub seed: u64,
    pub electronic_noise_sd: f64,
    pub resamples: usize,
    pub snl_factor: Option<f64>,
}

impl SweepConfig {
    pub fn new(params: SourceParams, eta: Efficiencies, pulses: usize, seed: u64) -> Self {
        SweepConfig {
            params,
            eta,
            pulses,
            seed,
            electronic_noise_sd: 0.0,
            resamples: stats::DEFAULT_RESAMPLES,
            snl_factor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// Radians.
    pub angle: f64,
    pub estimate: NrfEstimate,
}

/// One simulated estimate of the model's observable per grid angle (radians),
/// measured under the convention-ledger mapping.
pub fn sweep_curve(model: &CurveModel, angles: &[f64], config: &SweepConfig) -> Result<Vec<SweepPoint>> {
    if angles.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    angles
        .iter()
        .enumerate()
        .map(|(k, &angle)| {
            let m = physical_measurement(model, angle)?;
            let point_seed = derive_seed(config.seed, k as u64);
            let records = CellSampler::new(model.kind, &config.params, &m.settings)?.sample(
                &config.eta,
                config.electronic_noise_sd,
                config.pulses,
                point_seed,
                &format!("p{k}"),
            )?;
            let opts = EstimatorOptions {
                snl_factor: config.snl_factor,
                resamples: config.resamples,
                seed: derive_seed(point_seed, u64::MAX),
            };
            let estimate = estimate_readout(&records, &m.readout, &opts)?;
            Ok(SweepPoint { angle, estimate })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modes::{AnalyzerSetting, Arm, PlateKind, WavePlate};
    use BellStateKind::*;

    fn params(n: f64, m: u32) -> SourceParams {
        SourceParams::from_mean_photons(n, m).unwrap()
    }

    #[test]
    fn vacuum_gives_zero_counts() {
        let recs = sample_pulses(
            PhiMinus,
            &SourceParams::new(0.0, 10).unwrap(),
            &AnalyzerPair::identity(),
            &Efficiencies::uniform(0.5).unwrap(),
            0.0,
            50,
            1,
            "hv",
        )
        .unwrap();
        assert!(recs.iter().all(|r| r.counts == [0; 4]));
    }

    #[test]
    fn lossless_triplet_transmit_counts_match() {
        let recs = sample_pulses(
            PhiMinus,
            &params(0.8, 20),
            &AnalyzerPair::identity(),
            &Efficiencies::ideal(),
            0.0,
            200,
            3,
            "hv",
        )
        .unwrap();
        for r in &recs {
            assert_eq!(r.port(Port::ATransmit), r.port(Port::BTransmit));
            assert_eq!(r.port(Port::AReflect), r.port(Port::BReflect));
        }
    }

    #[test]
    fn mean_detected_per_arm() {
        let (n, m, eta) = (0.8, 1250, 0.4);
        let pulses = 400;
        let recs = sample_pulses(
            PhiMinus,
            &params(n, m),
            &AnalyzerPair::identity(),
            &Efficiencies::uniform(eta).unwrap(),
            0.0,
            pulses,
            5,
            "hv",
        )
        .unwrap();
        let arm_a: Vec<f64> = recs.iter().map(|r| (r.counts[0] + r.counts[1]) as f64).collect();
        let mean = stats::mean(&arm_a);
        let expected = 2.0 * m as f64 * n * eta;
        assert!((expected - 800.0).abs() < 1e-9);
        let sigma = (stats::sample_variance(&arm_a) / pulses as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma, "{mean} vs {expected} ± {sigma}");
    }

    #[test]
    fn zero_pulses_and_bad_noise_are_errors() {
        let p = params(0.8, 1);
        let id = AnalyzerPair::identity();
        let eff = Efficiencies::ideal();
        assert!(sample_pulses(PhiMinus, &p, &id, &eff, 0.0, 0, 0, "x").is_err());
        assert!(sample_pulses(PhiMinus, &p, &id, &eff, -1.0, 5, 0, "x").is_err());
    }

    #[test]
    fn zero_noise_is_bit_identical_and_noise_changes_counts() {
        let p = params(0.8, 50);
        let id = AnalyzerPair::identity();
        let eff = Efficiencies::uniform(0.4).unwrap();
        let sampler = CellSampler::new(PsiMinus, &p, &id).unwrap();
        let a = sampler.sample(&eff, 0.0, 100, 9, "hv").unwrap();
        let b = sampler.sample(&eff, 0.0, 100, 9, "hv").unwrap();
        assert_eq!(a, b);
        let c = sampler.sample(&eff, 5.0, 100, 9, "hv").unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn snl_factor_near_one() {
        let f = snl_calibrate(1e4, 100_000, 17).unwrap();
        assert!((f - 1.0).abs() < 0.02, "{f}");
        assert!(snl_calibrate(0.0, 10, 0).is_err());
    }

    #[test]
    fn coherent_nrf_is_shot_noise() {
        let recs = CoherentSource::horizontal(400.0)
            .sample(
                &AnalyzerPair::global(&[(PlateKind::Half, std::f64::consts::FRAC_PI_8)]),
                &Efficiencies::uniform(0.5).unwrap(),
                4000,
                2,
                "d",
            )
            .unwrap();
        let opts = EstimatorOptions {
            resamples: 200,
            ..Default::default()
        };
        let e = estimate_nrf(&recs, Port::ATransmit, Port::BReflect, &opts).unwrap();
        assert!((e.value - 1.0).abs() < 3.0 * e.std_err, "{e:?}");
        assert!(e.std_err > 0.0);
    }

    #[test]
    fn singlet_reflect_port_nrf() {
        let p = params(0.8, 100);
        let settings = AnalyzerPair::new(
            AnalyzerSetting::empty(Arm::A),
            AnalyzerSetting::empty(Arm::B).with_plate(WavePlate::half(Arm::B, 0.0)),
        );
        let recs = sample_pulses(PsiMinus, &p, &settings, &Efficiencies::uniform(0.4).unwrap(), 0.0, 4000, 4, "s")
            .unwrap();
        let opts = EstimatorOptions {
            resamples: 200,
            ..Default::default()
        };
        let e = estimate_nrf(&recs, Port::ATransmit, Port::BReflect, &opts).unwrap();
        assert!((e.value - 0.6).abs() < 3.0 * e.std_err, "{e:?}");
    }

    #[test]
    fn constant_records_are_degenerate() {
        let recs = vec![
            PulseRecord {
                setting_id: "c".into(),
                counts: [3, 1, 3, 1]
            };
            10
        ];
        let e = estimate_nrf(&recs, Port::ATransmit, Port::BTransmit, &EstimatorOptions::default()).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.degenerate);
        assert!(estimate_nrf(&recs[..1], Port::ATransmit, Port::BTransmit, &EstimatorOptions::default()).is_err());
    }

    #[test]
    fn empty_grid_is_an_error() {
        let model = CurveModel::new(PsiMinus, crate::closed_form::Observable::NrfHwp);
        let cfg = SweepConfig::new(params(0.8, 10), Efficiencies::uniform(0.4).unwrap(), 10, 0);
        assert!(sweep_curve(&model, &[], &cfg).is_err());
    }
}
