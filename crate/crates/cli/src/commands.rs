use std::fmt::Write as _;

use macrobell::closed_form::{nrf_table1, nrf_table1_symbol, Observable};
use macrobell::convention::{self, engine_value, physical_measurement, Agreement, LEDGER_ID};
use macrobell::fitting::{fit_curve, fit_report, FitPoint};
use macrobell::fock::{self, truncation_allowance, FockEngine, FockState, DEFICIT_WARN};
use macrobell::gaussian::{self, GaussianEngine, GaussianState};
use macrobell::modes::{
    AnalyzerPair, AnalyzerSetting, Arm, BellStateKind, Efficiencies, ModeId, PlateKind, PortMomentEngine, WavePlate,
};
use macrobell::montecarlo::{sample_pulses, sweep_curve, CellSampler, SweepConfig};
use macrobell::stats::derive_seed;
use macrobell::witness::{sample_witness_records, witness_from_moments, witness_from_records, WitnessOptions};
use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::io::{self, fmt_num, SweepRow};
use crate::CliError;

fn lib(e: macrobell::Error) -> CliError {
    CliError::Validation(e.to_string())
}

fn require_uniform(cfg: &RunConfig, what: &str) -> Result<f64, CliError> {
    cfg.uniform_eta()
        .ok_or_else(|| CliError::Validation(format!("{what} needs a single efficiency value")))
}

fn cell_or_undefined(x: macrobell::Result<f64>) -> Option<f64> {
    x.ok()
}

fn show(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), fmt_num)
}

const PAIRINGS: [(ModeId, ModeId); 4] = [
    (ModeId::AH, ModeId::BH),
    (ModeId::AH, ModeId::BV),
    (ModeId::AV, ModeId::BH),
    (ModeId::AV, ModeId::BV),
];

pub fn table1(cfg: &RunConfig) -> Result<String, CliError> {
    let eta = require_uniform(cfg, "table1")?;
    let n = cfg.params.mean_photons();
    let cell = cfg.single_cell();
    let mut out = String::from("state,mode_a,mode_b,formula,closed_form,fock,gaussian,max_discrepancy\n");
    for kind in BellStateKind::ALL {
        let fock_m = FockState::build(kind, &cell, cfg.n_max)
            .map_err(lib)?
            .number_distribution()
            .apply_loss(&[eta; 4])
            .map_err(lib)?
            .moments();
        let gauss_m = GaussianState::build(kind, &cell).apply_loss(&[eta; 4]).map_err(lib)?.photon_moments();
        for (a, b) in PAIRINGS {
            let c = cell_or_undefined(nrf_table1(kind, (a, b), eta, n));
            let f = cell_or_undefined(fock_m.nrf(a, b));
            let g = cell_or_undefined(gauss_m.nrf(a, b));
            let disc = match (c, f, g) {
                (Some(c), Some(f), Some(g)) => Some((c - f).abs().max((c - g).abs()).max((f - g).abs())),
                _ => None,
            };
            let c = if gauss_m.mean_of(&pair_weights(a, b)) > 0.0 { c } else { None };
            writeln!(
                out,
                "{kind},{a},{b},{},{},{},{},{}",
                nrf_table1_symbol(kind, (a, b)).map_err(lib)?,
                show(c),
                show(f),
                show(g),
                show(disc)
            )
            .expect("write to string");
        }
    }
    Ok(out)
}

fn pair_weights(a: ModeId, b: ModeId) -> [f64; 4] {
    let mut w = [0.0; 4];
    w[a.index()] = 1.0;
    w[b.index()] = 1.0;
    w
}

fn sweep_config(cfg: &RunConfig) -> SweepConfig {
    let mut sc = SweepConfig::new(cfg.params, cfg.eta, cfg.pulses, cfg.seed);
    sc.electronic_noise_sd = cfg.noise_sd;
    sc.resamples = cfg.resamples;
    sc
}

fn check_pulses(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.pulses == 0 {
        return Err(CliError::Validation("pulses must be at least 1".into()));
    }
    Ok(())
}

pub fn curve(cfg: &RunConfig) -> Result<String, CliError> {
    let eta = require_uniform(cfg, "curve")?;
    check_pulses(cfg)?;
    let model = cfg.model()?;
    let n = cfg.params.mean_photons();
    let cell = cfg.single_cell();
    let fock_state = FockState::build(model.kind, &cell, cfg.n_max).map_err(lib)?;
    let gauss_state = GaussianState::build(model.kind, &cell);
    let angles: Vec<f64> = cfg.angles_deg.iter().map(|d| d.to_radians()).collect();
    let mc = sweep_curve(&model, &angles, &sweep_config(cfg)).map_err(lib)?;
    let entry = convention::entry(model.observable);
    let mut out = String::new();
    writeln!(out, "# convention-ledger {LEDGER_ID}").expect("write");
    writeln!(out, "# model {}", model.id()).expect("write");
    writeln!(out, "# mapping {}", entry.mapping).expect("write");
    if entry.agreement == Agreement::ExtremesOnly {
        writeln!(out, "# closed form agrees with the engines at its extremes only").expect("write");
    }
    writeln!(
        out,
        "# eta={} n_mean={} schmidt_modes={} pulses={} seed={}",
        fmt_num(eta),
        fmt_num(n),
        cfg.params.schmidt_modes(),
        cfg.pulses,
        cfg.seed
    )
    .expect("write");
    out.push_str("angle_deg,closed_form,fock,gaussian,montecarlo_value,montecarlo_err\n");
    for ((deg, angle), point) in cfg.angles_deg.iter().zip(&angles).zip(&mc) {
        let c = model.evaluate(*angle, eta, n).map_err(lib)?;
        let f = engine_value(&FockEngine::new(&fock_state), &model, *angle, &cfg.eta).map_err(lib)?;
        let g = engine_value(&GaussianEngine::new(&gauss_state), &model, *angle, &cfg.eta).map_err(lib)?;
        writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt_num(*deg),
            fmt_num(c),
            fmt_num(f),
            fmt_num(g),
            fmt_num(point.estimate.value),
            fmt_num(point.estimate.std_err)
        )
        .expect("write");
    }
    Ok(out)
}

pub fn witness(cfg: &RunConfig) -> Result<String, CliError> {
    let report = match &cfg.input {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
            let records = io::read_records(file)?;
            let opts = WitnessOptions {
                resamples: cfg.resamples,
                seed: cfg.seed,
                significance: cfg.significance,
            };
            witness_from_records(&records, cfg.state, &opts).map_err(lib)?
        }
        None => {
            let state = GaussianState::build(cfg.state, &cfg.single_cell());
            let moments = gaussian::stokes_moments(&state, &AnalyzerPair::identity(), &cfg.eta).map_err(lib)?;
            witness_from_moments(&moments, cfg.state).map_err(lib)?
        }
    };
    Ok(io::to_json(&report))
}

pub fn simulate(cfg: &RunConfig) -> Result<String, CliError> {
    check_pulses(cfg)?;
    let mut buf = Vec::new();
    match cfg.settings.as_str() {
        "witness" => {
            let recs = sample_witness_records(cfg.state, &cfg.params, &cfg.eta, cfg.noise_sd, cfg.pulses, cfg.seed)
                .map_err(lib)?;
            io::write_records(&mut buf, &recs)?;
        }
        "identity" => {
            let recs = sample_pulses(
                cfg.state,
                &cfg.params,
                &AnalyzerPair::identity(),
                &cfg.eta,
                cfg.noise_sd,
                cfg.pulses,
                cfg.seed,
                "hv",
            )
            .map_err(lib)?;
            io::write_records(&mut buf, &recs)?;
        }
        "model" => {
            let model = cfg.model()?;
            let mut recs = Vec::new();
            for (k, deg) in cfg.angles_deg.iter().enumerate() {
                let m = physical_measurement(&model, deg.to_radians()).map_err(lib)?;
                let sampler = CellSampler::new(model.kind, &cfg.params, &m.settings).map_err(lib)?;
                recs.extend(
                    sampler
                        .sample(&cfg.eta, cfg.noise_sd, cfg.pulses, derive_seed(cfg.seed, k as u64), &format!("theta={}", fmt_num(*deg)))
                        .map_err(lib)?,
                );
            }
            io::write_records(&mut buf, &recs)?;
        }
        "sweep" => {
            let model = cfg.model()?;
            let angles: Vec<f64> = cfg.angles_deg.iter().map(|d| d.to_radians()).collect();
            let points = sweep_curve(&model, &angles, &sweep_config(cfg)).map_err(lib)?;
            let rows: Vec<SweepRow> = cfg
                .angles_deg
                .iter()
                .zip(&points)
                .map(|(deg, p)| SweepRow {
                    angle_deg: *deg,
                    value: p.estimate.value,
                    std_err: p.estimate.std_err,
                    pulses: p.estimate.pulses,
                })
                .collect();
            io::write_sweep(&mut buf, &rows)?;
        }
        other => {
            return Err(CliError::Validation(format!(
                "settings={other}: expected witness, identity, model or sweep"
            )))
        }
    }
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

pub fn fit(cfg: &RunConfig) -> Result<String, CliError> {
    let path = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Validation("fit needs input=<sweep csv>".into()))?;
    let file =
        std::fs::File::open(path).map_err(|e| CliError::Validation(format!("cannot open {}: {e}", path.display())))?;
    let rows = io::read_sweep(file)?;
    let points: Vec<FitPoint> = rows
        .iter()
        .map(|r| FitPoint {
            angle: r.angle_deg.to_radians(),
            value: r.value,
            std_err: r.std_err,
        })
        .collect();
    let result = fit_curve(&points, &cfg.model()?, cfg.weights).map_err(lib)?;
    Ok(io::to_json(&fit_report(&result)))
}

#[derive(Debug, Serialize)]
struct ClassReport {
    name: &'static str,
    max_discrepancy: f64,
    threshold: f64,
    pass: bool,
}

#[derive(Debug, Serialize)]
pub struct CrosscheckReport {
    ledger: &'static str,
    gamma: f64,
    n_max: u32,
    norm_deficit: f64,
    truncation_allowance: f64,
    classes: Vec<ClassReport>,
    undefined_nrf: Vec<String>,
    warnings: Vec<String>,
    pub pass: bool,
}

fn random_setting<R: Rng>(rng: &mut R, arm: Arm) -> AnalyzerSetting {
    AnalyzerSetting::empty(arm)
        .with_plate(WavePlate::new(PlateKind::Quarter, arm, rng.random_range(0.0..std::f64::consts::PI)))
        .with_plate(WavePlate::new(PlateKind::Half, arm, rng.random_range(0.0..std::f64::consts::PI)))
}

/// Engine-equivalence suite; the second value is false on any threshold breach.
pub fn crosscheck(cfg: &RunConfig) -> Result<(String, bool), CliError> {
    let cell = cfg.single_cell();
    let gamma = cell.gamma();
    let n = cell.mean_photons();
    let allowance = truncation_allowance(gamma, cfg.n_max);
    let deficit = fock::norm_deficit(gamma, cfg.n_max);
    let threshold = cfg.tolerance.unwrap_or(1e-8 + allowance);
    let mut warnings = Vec::new();
    if deficit > DEFICIT_WARN {
        warnings.push(format!(
            "truncation deficit {} at n_max={} exceeds {}; raise n_max",
            fmt_num(deficit),
            cfg.n_max,
            fmt_num(DEFICIT_WARN)
        ));
    }
    let mut undefined = Vec::new();
    let mut classes = Vec::new();

    // Table 1 cells at the configured efficiency (or skipped for per-mode η).
    if let Some(eta) = cfg.uniform_eta() {
        let mut worst: f64 = 0.0;
        for kind in BellStateKind::ALL {
            let fm = FockState::build(kind, &cell, cfg.n_max)
                .map_err(lib)?
                .number_distribution()
                .apply_loss(&[eta; 4])
                .map_err(lib)?
                .moments();
            let gm = GaussianState::build(kind, &cell).apply_loss(&[eta; 4]).map_err(lib)?.photon_moments();
            for (a, b) in PAIRINGS {
                match (fm.nrf(a, b), gm.nrf(a, b)) {
                    (Ok(f), Ok(g)) => {
                        let c = nrf_table1(kind, (a, b), eta, n).map_err(lib)?;
                        worst = worst.max((c - f).abs()).max((c - g).abs()).max((f - g).abs());
                    }
                    _ => undefined.push(format!("{kind}:{a}/{b}")),
                }
            }
        }
        classes.push(ClassReport {
            name: "table1_nrf",
            max_discrepancy: worst,
            threshold,
            pass: worst <= threshold,
        });
    } else {
        warnings.push("per-mode efficiencies: closed-form classes skipped".into());
    }

    // Stokes moments at seeded random settings and per-mode efficiencies.
    let mut rng = macrobell::stats::stream_rng(cfg.seed, 0);
    let mut worst: f64 = 0.0;
    for kind in BellStateKind::ALL {
        let fs = FockState::build(kind, &cell, cfg.n_max).map_err(lib)?;
        let gs = GaussianState::build(kind, &cell);
        for _ in 0..cfg.samples {
            let settings = AnalyzerPair::new(random_setting(&mut rng, Arm::A), random_setting(&mut rng, Arm::B));
            let eta = Efficiencies::per_mode(std::array::from_fn(|k| cfg.eta.0[k] * rng.random_range(0.5..=1.0)))
                .map_err(lib)?;
            let f = fock::stokes_moments(&fs, &settings, &eta).map_err(lib)?;
            let g = gaussian::stokes_moments(&gs, &settings, &eta).map_err(lib)?;
            worst = worst.max(f.max_abs_diff(&g));
            let (ua, ub) = settings.unitaries().map_err(lib)?;
            let pf = FockEngine::new(&fs).port_moments(&ua, &ub, &eta).map_err(lib)?;
            let pg = GaussianEngine::new(&gs).port_moments(&ua, &ub, &eta).map_err(lib)?;
            worst = worst.max(pf.max_abs_diff(&pg));
        }
    }
    classes.push(ClassReport {
        name: "stokes_moments",
        max_discrepancy: worst,
        threshold,
        pass: worst <= threshold,
    });

    // Exact-agreement curves on the configured grid.
    if let (Some(eta), true) = (cfg.uniform_eta(), gamma > 0.0) {
        let mut worst: f64 = 0.0;
        for model in exact_curve_models() {
            let fs = FockState::build(model.kind, &cell, cfg.n_max).map_err(lib)?;
            let gs = GaussianState::build(model.kind, &cell);
            for deg in &cfg.angles_deg {
                let angle = deg.to_radians();
                let c = model.evaluate(angle, eta, n).map_err(lib)?;
                let f = engine_value(&FockEngine::new(&fs), &model, angle, &cfg.eta).map_err(lib)?;
                let g = engine_value(&GaussianEngine::new(&gs), &model, angle, &cfg.eta).map_err(lib)?;
                worst = worst.max((c - f).abs()).max((c - g).abs()).max((f - g).abs());
            }
        }
        classes.push(ClassReport {
            name: "curves",
            max_discrepancy: worst,
            threshold,
            pass: worst <= threshold,
        });
    }

    let pass = classes.iter().all(|c| c.pass);
    let report = CrosscheckReport {
        ledger: LEDGER_ID,
        gamma,
        n_max: cfg.n_max,
        norm_deficit: deficit,
        truncation_allowance: allowance,
        classes,
        undefined_nrf: undefined,
        warnings,
        pass,
    };
    Ok((io::to_json(&report), pass))
}

fn exact_curve_models() -> Vec<macrobell::closed_form::CurveModel> {
    use macrobell::closed_form::{Branch, CurveModel};
    use BellStateKind::*;
    vec![
        CurveModel::new(PhiMinus, Observable::NrfHwp),
        CurveModel::new(PsiMinus, Observable::NrfHwp),
        CurveModel::new(PhiMinus, Observable::VarHwpPair).with_base_angle(std::f64::consts::FRAC_PI_8),
        CurveModel::new(PsiMinus, Observable::VarHwpPair).with_branch(Branch::Minus),
        CurveModel::new(PsiMinus, Observable::VarGlobalRotation),
    ]
}
