//! Closed-form noise-reduction and Stokes-variance curves at efficiency `eta`
//! and mean photon number per mode `n`.
//!
//! Angles are radians. Every curve is normalized to the shot-noise level, so
//! 1 means shot noise and `1 − η` is the best achievable squeezing.

use serde::{Deserialize, Serialize};

use crate::error::{check_efficiency, invalid, Error, Result};
use crate::modes::{BellStateKind, ModeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Observable {
    /// NRF between arm A's transmit port and an arm-B port behind a rotated HWP.
    NrfHwp,
    /// Normalized `Var(S^a ± S^b)` with a HWP in each arm.
    VarHwpPair,
    /// Normalized `Var(S3^a − S^b(φ))` with a rotated QWP in arm B (triplet).
    VarQwpTriplet,
    /// Normalized `Var(S^a + S^b)` with identical rotated plates in both arms.
    VarGlobalRotation,
}

impl Observable {
    pub fn label(self) -> &'static str {
        match self {
            Observable::NrfHwp => "nrf-hwp",
            Observable::VarHwpPair => "var-hwp-pair",
            Observable::VarQwpTriplet => "var-qwp-triplet",
            Observable::VarGlobalRotation => "var-global-rotation",
        }
    }
}

impl std::str::FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Observable::NrfHwp,
            Observable::VarHwpPair,
            Observable::VarQwpTriplet,
            Observable::VarGlobalRotation,
        ]
        .into_iter()
        .find(|o| o.label().eq_ignore_ascii_case(s))
        .ok_or_else(|| invalid("observable", format!("unknown observable `{s}`")))
    }
}

/// Sign of the Stokes combination, `S^a + S^b` or `S^a − S^b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign(self) -> f64 {
        match self {
            Branch::Plus => 1.0,
            Branch::Minus => -1.0,
        }
    }
}

/// A curve as a function of one swept plate angle.
///
/// For [`Observable::VarHwpPair`] arm A's plate sits at `base_angle` and arm
/// B's at `base_angle + angle`; the other observables ignore `base_angle`.
/// `branch` only matters for `VarHwpPair`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveModel {
    pub kind: BellStateKind,
    pub observable: Observable,
    pub branch: Branch,
    pub base_angle: f64,
}

impl CurveModel {
    pub fn new(kind: BellStateKind, observable: Observable) -> Self {
        CurveModel {
            kind,
            observable,
            branch: Branch::Plus,
            base_angle: 0.0,
        }
    }

    pub fn with_branch(mut self, branch: Branch) -> Self {
        self.branch = branch;
        self
    }

    pub fn with_base_angle(mut self, base_angle: f64) -> Self {
        self.base_angle = base_angle;
        self
    }

    pub fn validate(&self) -> Result<()> {
        use BellStateKind::*;
        let supported = match self.observable {
            Observable::NrfHwp | Observable::VarHwpPair => matches!(self.kind, PhiMinus | PsiMinus),
            Observable::VarQwpTriplet => self.kind == PhiMinus,
            Observable::VarGlobalRotation => self.kind == PsiMinus,
        };
        if supported {
            Ok(())
        } else {
            Err(Error::UnsupportedKind(self.kind))
        }
    }

    pub fn evaluate(&self, angle: f64, eta: f64, n: f64) -> Result<f64> {
        self.validate()?;
        match self.observable {
            Observable::NrfHwp => nrf_hwp(self.kind, angle, eta, n),
            Observable::VarHwpPair => {
                let (ta, tb) = (self.base_angle, self.base_angle + angle);
                if self.kind == BellStateKind::PhiMinus {
                    var_hwp_triplet(ta, tb, self.branch, eta, n)
                } else {
                    var_hwp_singlet(ta, tb, self.branch, eta, n)
                }
            }
            Observable::VarQwpTriplet => var_qwp_triplet(angle, eta, n),
            Observable::VarGlobalRotation => var_hwp_singlet(angle, angle, Branch::Plus, eta, n),
        }
    }

    /// Period in the swept angle.
    pub fn period(&self) -> f64 {
        match self.observable {
            Observable::VarQwpTriplet => std::f64::consts::PI,
            _ => std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn id(&self) -> String {
        let branch = match self.branch {
            Branch::Plus => "+",
            Branch::Minus => "-",
        };
        format!(
            "{}:{}:{}:base={}deg",
            self.kind,
            self.observable.label(),
            branch,
            self.base_angle.to_degrees()
        )
    }
}

fn check_params(eta: f64, n: f64) -> Result<()> {
    check_efficiency("eta", eta)?;
    if !(n.is_finite() && n >= 0.0) {
        return Err(invalid("n", format!("{n} must be >= 0")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Table1Cell {
    /// `1 − η`
    Correlated,
    /// `1 + nη`
    Uncorrelated,
}

/// Rows (AH,BH), (AH,BV), (AV,BH), (AV,BV); columns Φ+, Φ−, Ψ+, Ψ−.
const TABLE1: [[Table1Cell; 4]; 4] = {
    use Table1Cell::*;
    [
        [Correlated, Correlated, Uncorrelated, Uncorrelated],
        [Uncorrelated, Uncorrelated, Correlated, Correlated],
        [Uncorrelated, Uncorrelated, Correlated, Correlated],
        [Correlated, Correlated, Uncorrelated, Uncorrelated],
    ]
};

/// NRF of a cross-arm pair of canonical modes for each state.
pub fn nrf_table1(kind: BellStateKind, pairing: (ModeId, ModeId), eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    let (x, y) = pairing;
    if x.arm == y.arm {
        return Err(Error::SameArmPairing(x, y));
    }
    let (a, b) = if x.arm == crate::modes::Arm::A { (x, y) } else { (y, x) };
    let row = 2 * (a.index()) + (b.index() - 2);
    let col = match kind {
        BellStateKind::PhiPlus => 0,
        BellStateKind::PhiMinus => 1,
        BellStateKind::PsiPlus => 2,
        BellStateKind::PsiMinus => 3,
    };
    Ok(match TABLE1[row][col] {
        Table1Cell::Correlated => 1.0 - eta,
        Table1Cell::Uncorrelated => 1.0 + n * eta,
    })
}

/// Symbolic Table-1 entry, for reports.
pub fn nrf_table1_symbol(kind: BellStateKind, pairing: (ModeId, ModeId)) -> Result<&'static str> {
    // Distinct (eta, n) evaluation recovers the cell type.
    let v = nrf_table1(kind, pairing, 0.5, 1.0)?;
    Ok(if v < 1.0 { "1-eta" } else { "1+n*eta" })
}

/// NRF between `N_aH` and the arm-B port behind a HWP at `theta`:
/// `1 + η[(1+n)cos²2θ − 1]` for Ψ−, sine in place of cosine for Φ−.
pub fn nrf_hwp(kind: BellStateKind, theta: f64, eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    let trig = match kind {
        BellStateKind::PsiMinus => (2.0 * theta).cos().powi(2),
        BellStateKind::PhiMinus => (2.0 * theta).sin().powi(2),
        other => return Err(Error::UnsupportedKind(other)),
    };
    Ok(1.0 + eta * ((1.0 + n) * trig - 1.0))
}

/// Triplet: `1 + η[n ± (1+n)cos4(θa+θb)]`.
pub fn var_hwp_triplet(theta_a: f64, theta_b: f64, branch: Branch, eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    Ok(1.0 + eta * (n + branch.sign() * (1.0 + n) * (4.0 * (theta_a + theta_b)).cos()))
}

/// Triplet, QWP at `phi` in arm B against S3 in arm A:
/// `1 + nη − ((1+n)η/4)[1 − 4cos2φ − cos4φ]`.
pub fn var_qwp_triplet(phi: f64, eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    let bracket = 1.0 - 4.0 * (2.0 * phi).cos() - (4.0 * phi).cos();
    Ok(1.0 + n * eta - (1.0 + n) * eta / 4.0 * bracket)
}

/// Singlet: `1 + η[n ∓ (1+n)cos4(θa−θb)]`.
pub fn var_hwp_singlet(theta_a: f64, theta_b: f64, branch: Branch, eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    Ok(1.0 + eta * (n - branch.sign() * (1.0 + n) * (4.0 * (theta_a - theta_b)).cos()))
}

/// Separability-condition left-hand side at the optimal settings: each of
/// the three variance terms sits at its minimum `1 − η`.
pub fn witness_prediction(kind: BellStateKind, eta: f64, n: f64) -> Result<f64> {
    check_params(eta, n)?;
    match kind {
        BellStateKind::PhiMinus | BellStateKind::PsiMinus => Ok(3.0 * (1.0 - eta)),
        other => Err(Error::UnsupportedKind(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveStats {
    pub min: f64,
    pub argmin: f64,
    pub max: f64,
    pub argmax: f64,
    /// `(max − min)/(max + min)`
    pub visibility: f64,
    /// `−10·log10(min)`
    pub squeezing_db: f64,
}

const STATS_GRID: usize = 2880;

/// Extremes over one period: dense grid followed by golden-section refinement.
pub fn curve_stats(model: &CurveModel, eta: f64, n: f64) -> Result<CurveStats> {
    model.validate()?;
    check_params(eta, n)?;
    let period = model.period();
    let f = |x: f64| model.evaluate(x, eta, n).expect("validated");
    let step = period / STATS_GRID as f64;
    let (mut imin, mut imax) = (0usize, 0usize);
    let (mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..STATS_GRID {
        let v = f(i as f64 * step);
        if v < vmin {
            vmin = v;
            imin = i;
        }
        if v > vmax {
            vmax = v;
            imax = i;
        }
    }
    let (argmin, min) = golden_refine(&f, imin as f64 * step, step, false);
    let (argmax, max) = golden_refine(&f, imax as f64 * step, step, true);
    let (min, argmin) = if min < vmin { (min, argmin) } else { (vmin, imin as f64 * step) };
    let (max, argmax) = if max > vmax { (max, argmax) } else { (vmax, imax as f64 * step) };
    Ok(CurveStats {
        min,
        argmin,
        max,
        argmax,
        visibility: if max + min > 0.0 { (max - min) / (max + min) } else { 0.0 },
        squeezing_db: -10.0 * min.log10(),
    })
}

fn golden_refine(f: &impl Fn(f64) -> f64, center: f64, half_width: f64, maximize: bool) -> (f64, f64) {
    let g = |x: f64| if maximize { -f(x) } else { f(x) };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (center - half_width, center + half_width);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    for _ in 0..100 {
        if g(c) < g(d) {
            b = d;
        } else {
            a = c;
        }
        c = b - ratio * (b - a);
        d = a + ratio * (b - a);
        if (b - a).abs() < 1e-13 {
            break;
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}
