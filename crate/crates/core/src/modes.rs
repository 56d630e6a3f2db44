//! Mode labels, wave-plate conventions and Stokes-operator bookkeeping shared
//! by every engine.
//!
//! Conventions (fixed here, everything downstream depends on them):
//!
//! * A Jones matrix `U` acts on the (H, V) field amplitudes of one arm, i.e.
//!   the detected annihilation operators are `b = U a`.
//! * After the analyzer a polarizing prism sends H to the *transmit* port and
//!   V to the *reflect* port. The Stokes reading of an arm is
//!   `n_transmit - n_reflect`, which measures the operator `a^† (U^† σz U) a`.
//! * Stokes axes map onto Pauli matrices as S1 ↔ σz, S2 ↔ σx, S3 ↔ σy, so a
//!   half-wave plate at 22.5° reads S2 and a quarter-wave plate at 45° reads S3.

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI};
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_efficiency, invalid, Error, Result};

pub type C64 = Complex64;

/// 2×2 complex matrix acting on the (H, V) amplitudes of one arm.
pub type Jones = Matrix2<C64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arm {
    /// 635 nm arm.
    A,
    /// 805 nm arm.
    B,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::A, Arm::B];

    pub fn index(self) -> usize {
        match self {
            Arm::A => 0,
            Arm::B => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pol {
    H,
    V,
}

/// One of the four canonical modes, ordered (A,H), (A,V), (B,H), (B,V).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeId {
    pub arm: Arm,
    pub pol: Pol,
}

impl ModeId {
    pub const AH: ModeId = ModeId::new(Arm::A, Pol::H);
    pub const AV: ModeId = ModeId::new(Arm::A, Pol::V);
    pub const BH: ModeId = ModeId::new(Arm::B, Pol::H);
    pub const BV: ModeId = ModeId::new(Arm::B, Pol::V);
    pub const ALL: [ModeId; 4] = [Self::AH, Self::AV, Self::BH, Self::BV];

    pub const fn new(arm: Arm, pol: Pol) -> Self {
        ModeId { arm, pol }
    }

    pub fn index(self) -> usize {
        let pol = match self.pol {
            Pol::H => 0,
            Pol::V => 1,
        };
        2 * self.arm.index() + pol
    }

    pub fn from_index(i: usize) -> ModeId {
        Self::ALL[i]
    }
}

impl fmt::Display for ModeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}{:?}", self.arm, self.pol)
    }
}

impl FromStr for ModeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AH" => Ok(Self::AH),
            "AV" => Ok(Self::AV),
            "BH" => Ok(Self::BH),
            "BV" => Ok(Self::BV),
            _ => Err(invalid("mode", format!("unknown mode `{s}`"))),
        }
    }
}

/// Parametric gain and number of independent Schmidt cells per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceParams {
    gamma: f64,
    schmidt_modes: u32,
}

impl SourceParams {
    pub fn new(gamma: f64, schmidt_modes: u32) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(invalid("gamma", format!("{gamma} must be finite and >= 0")));
        }
        if schmidt_modes == 0 {
            return Err(invalid("schmidt_modes", "must be >= 1"));
        }
        Ok(SourceParams {
            gamma,
            schmidt_modes,
        })
    }

    /// Builds the source from the mean photon number per mode, `n = sinh²Γ`.
    pub fn from_mean_photons(n_mean: f64, schmidt_modes: u32) -> Result<Self> {
        if !(n_mean.is_finite() && n_mean >= 0.0) {
            return Err(invalid("n_mean", format!("{n_mean} must be finite and >= 0")));
        }
        Self::new(n_mean.sqrt().asinh(), schmidt_modes)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn schmidt_modes(&self) -> u32 {
        self.schmidt_modes
    }

    pub fn mean_photons(&self) -> f64 {
        self.gamma.sinh().powi(2)
    }

    pub fn with_schmidt_modes(self, schmidt_modes: u32) -> Result<Self> {
        Self::new(self.gamma, schmidt_modes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BellStateKind {
    PhiPlus,
    PhiMinus,
    PsiPlus,
    PsiMinus,
}

impl BellStateKind {
    pub const ALL: [BellStateKind; 4] = [
        BellStateKind::PhiPlus,
        BellStateKind::PhiMinus,
        BellStateKind::PsiPlus,
        BellStateKind::PsiMinus,
    ];

    /// Phi states pair like polarizations across the arms.
    pub fn is_phi(self) -> bool {
        matches!(self, BellStateKind::PhiPlus | BellStateKind::PhiMinus)
    }

    /// The `(±1)^m` factor base.
    pub fn sign(self) -> f64 {
        match self {
            BellStateKind::PhiPlus | BellStateKind::PsiPlus => 1.0,
            BellStateKind::PhiMinus | BellStateKind::PsiMinus => -1.0,
        }
    }

    /// The two correlated mode pairs with their relative sign. The pair
    /// containing (A,V) carries the photon count `m`, hence the kind's sign.
    pub fn pairs(self) -> [(ModeId, ModeId, f64); 2] {
        if self.is_phi() {
            [(ModeId::AH, ModeId::BH, 1.0), (ModeId::AV, ModeId::BV, self.sign())]
        } else {
            [(ModeId::AH, ModeId::BV, 1.0), (ModeId::AV, ModeId::BH, self.sign())]
        }
    }

    /// The arm-B mode carrying the same photon number as `mode` (an arm-A mode).
    pub fn partner(self, mode: ModeId) -> ModeId {
        self.pairs()
            .into_iter()
            .find_map(|(a, b, _)| {
                if a == mode {
                    Some(b)
                } else if b == mode {
                    Some(a)
                } else {
                    None
                }
            })
            .expect("every mode belongs to exactly one pair")
    }

    pub fn label(self) -> &'static str {
        match self {
            BellStateKind::PhiPlus => "phi+",
            BellStateKind::PhiMinus => "phi-",
            BellStateKind::PsiPlus => "psi+",
            BellStateKind::PsiMinus => "psi-",
        }
    }
}

impl fmt::Display for BellStateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BellStateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "phi+" | "phiplus" => Ok(BellStateKind::PhiPlus),
            "phi-" | "phiminus" => Ok(BellStateKind::PhiMinus),
            "psi+" | "psiplus" => Ok(BellStateKind::PsiPlus),
            "psi-" | "psiminus" => Ok(BellStateKind::PsiMinus),
            _ => Err(invalid("state", format!("unknown Bell state `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlateKind {
    Half,
    Quarter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WavePlate {
    pub kind: PlateKind,
    /// Fast-axis angle from H in radians, reduced to `[0, π)`.
    pub angle: f64,
    pub arm: Arm,
}

impl WavePlate {
    pub fn new(kind: PlateKind, arm: Arm, angle: f64) -> Self {
        WavePlate {
            kind,
            angle: angle.rem_euclid(PI),
            arm,
        }
    }

    pub fn half(arm: Arm, angle: f64) -> Self {
        Self::new(PlateKind::Half, arm, angle)
    }

    pub fn quarter(arm: Arm, angle: f64) -> Self {
        Self::new(PlateKind::Quarter, arm, angle)
    }
}

fn rotation(angle: f64) -> Jones {
    let (s, c) = angle.sin_cos();
    Jones::new(c.into(), (-s).into(), s.into(), c.into())
}

/// Jones matrix of an ideal wave plate.
///
/// `Half(θ) = [[cos2θ, sin2θ], [sin2θ, −cos2θ]]` and
/// `Quarter(φ) = R(φ)·diag(1, i)·R(−φ)`.
pub fn jones_matrix(plate: &WavePlate) -> Jones {
    match plate.kind {
        PlateKind::Half => {
            let (s, c) = (2.0 * plate.angle).sin_cos();
            Jones::new(c.into(), s.into(), s.into(), (-c).into())
        }
        PlateKind::Quarter => {
            let retarder = Jones::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::i());
            rotation(plate.angle) * retarder * rotation(-plate.angle)
        }
    }
}

/// Ordered plates for one arm, listed in the order light traverses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerSetting {
    pub arm: Arm,
    pub plates: Vec<WavePlate>,
}

impl AnalyzerSetting {
    pub fn empty(arm: Arm) -> Self {
        AnalyzerSetting {
            arm,
            plates: Vec::new(),
        }
    }

    pub fn with_plate(mut self, plate: WavePlate) -> Self {
        self.plates.push(plate);
        self
    }

    /// Half-wave plate at 22.5°: the arm reads S2.
    pub fn s2(arm: Arm) -> Self {
        Self::empty(arm).with_plate(WavePlate::half(arm, FRAC_PI_8))
    }

    /// Quarter-wave plate at 45°: the arm reads S3.
    pub fn s3(arm: Arm) -> Self {
        Self::empty(arm).with_plate(WavePlate::quarter(arm, FRAC_PI_4))
    }
}

/// Product of the plates' Jones matrices in application order.
pub fn compose_analyzer(setting: &AnalyzerSetting) -> Result<Jones> {
    let mut u = Jones::identity();
    for plate in &setting.plates {
        if plate.arm != setting.arm {
            return Err(Error::ArmMismatch {
                setting: setting.arm,
                plate: plate.arm,
            });
        }
        u = jones_matrix(plate) * u;
    }
    Ok(u)
}

/// Analyzer settings for both arms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzerPair {
    pub a: AnalyzerSetting,
    pub b: AnalyzerSetting,
}

impl AnalyzerPair {
    pub fn new(a: AnalyzerSetting, b: AnalyzerSetting) -> Self {
        AnalyzerPair { a, b }
    }

    /// No plates: both arms read S1.
    pub fn identity() -> Self {
        Self::new(AnalyzerSetting::empty(Arm::A), AnalyzerSetting::empty(Arm::B))
    }

    /// The same plate sequence in both arms.
    pub fn global(plates: &[(PlateKind, f64)]) -> Self {
        let arm_setting = |arm| AnalyzerSetting {
            arm,
            plates: plates.iter().map(|&(k, ang)| WavePlate::new(k, arm, ang)).collect(),
        };
        Self::new(arm_setting(Arm::A), arm_setting(Arm::B))
    }

    pub fn unitaries(&self) -> Result<(Jones, Jones)> {
        if self.a.arm != Arm::A {
            return Err(Error::ArmMismatch {
                setting: Arm::A,
                plate: self.a.arm,
            });
        }
        if self.b.arm != Arm::B {
            return Err(Error::ArmMismatch {
                setting: Arm::B,
                plate: self.b.arm,
            });
        }
        Ok((compose_analyzer(&self.a)?, compose_analyzer(&self.b)?))
    }
}

/// Detector ports after the polarizing prisms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Port {
    ATransmit,
    AReflect,
    BTransmit,
    BReflect,
}

impl Port {
    pub const ALL: [Port; 4] = [Port::ATransmit, Port::AReflect, Port::BTransmit, Port::BReflect];

    /// The post-analyzer mode a port detects.
    pub fn mode(self) -> ModeId {
        match self {
            Port::ATransmit => ModeId::AH,
            Port::AReflect => ModeId::AV,
            Port::BTransmit => ModeId::BH,
            Port::BReflect => ModeId::BV,
        }
    }

    pub fn index(self) -> usize {
        self.mode().index()
    }

    pub fn label(self) -> &'static str {
        match self {
            Port::ATransmit => "a_t",
            Port::AReflect => "a_r",
            Port::BTransmit => "b_t",
            Port::BReflect => "b_r",
        }
    }
}

impl FromStr for Port {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Port::ALL
            .into_iter()
            .find(|p| p.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid("port", format!("unknown port `{s}`")))
    }
}

/// Maps Glan-prism port counts to `(S0, S)` where `S` is whichever Stokes
/// component the plates select.
pub fn stokes_from_port_numbers(n_transmit: u64, n_reflect: u64) -> (i64, i64) {
    let (t, r) = (n_transmit as i64, n_reflect as i64);
    (t + r, t - r)
}

/// Largest entry of `|U^†U − I|`.
pub fn unitarity_deviation(u: &Jones) -> f64 {
    (u.adjoint() * u - Jones::identity())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub(crate) fn check_unitary(u: &Jones, tol: f64) -> Result<()> {
    let deviation = unitarity_deviation(u);
    if deviation <= tol {
        Ok(())
    } else {
        Err(Error::NotUnitary { deviation })
    }
}

/// The Hermitian operator `U^† σz U` measured by transmit minus reflect,
/// expressed as a Stokes direction `(s1, s2, s3)`.
pub fn measured_stokes_direction(u: &Jones) -> [f64; 3] {
    let sz = Jones::new(C64::new(1.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(-1.0, 0.0));
    let k = u.adjoint() * sz * u;
    // k = s1 σz + s2 σx + s3 σy
    [k[(0, 0)].re, k[(1, 0)].re, k[(1, 0)].im]
}

/// A unitary whose transmit-minus-reflect reading is the Stokes component
/// along the unit vector `dir = (s1, s2, s3)`.
pub fn analyzer_for_direction(dir: [f64; 3]) -> Result<Jones> {
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(invalid("direction", format!("norm {norm} is not 1")));
    }
    let [s1, s2, s3] = dir;
    let (plus0, plus1) = if 1.0 + s1 > 1e-12 {
        let v = (C64::new(1.0 + s1, 0.0), C64::new(s2, s3));
        let n = (v.0.norm_sqr() + v.1.norm_sqr()).sqrt();
        (v.0 / n, v.1 / n)
    } else {
        (C64::new(0.0, 0.0), C64::new(1.0, 0.0))
    };
    let (minus0, minus1) = (-plus1.conj(), plus0.conj());
    Ok(Jones::new(plus0.conj(), plus1.conj(), minus0.conj(), minus1.conj()))
}

/// Detection efficiency of each of the four ports, in canonical mode order.
/// The efficiency of mode (X,H) applies to the transmit port of arm X.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies(pub [f64; 4]);

impl Efficiencies {
    pub fn uniform(eta: f64) -> Result<Self> {
        Self::per_mode([eta; 4])
    }

    pub fn per_mode(eta: [f64; 4]) -> Result<Self> {
        for &e in &eta {
            check_efficiency("eta", e)?;
        }
        Ok(Efficiencies(eta))
    }

    pub fn ideal() -> Self {
        Efficiencies([1.0; 4])
    }

    pub fn get(&self, mode: ModeId) -> f64 {
        self.0[mode.index()]
    }

    pub fn is_uniform(&self) -> bool {
        self.0.iter().all(|&e| e == self.0[0])
    }
}

/// First and second moments of the four port photon numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonMoments {
    pub mean: [f64; 4],
    pub cov: [[f64; 4]; 4],
}

impl PhotonMoments {
    pub fn zero() -> Self {
        PhotonMoments {
            mean: [0.0; 4],
            cov: [[0.0; 4]; 4],
        }
    }

    /// Moments after independent binomial thinning of every mode.
    pub fn with_loss(&self, eta: &Efficiencies) -> Self {
        let e = eta.0;
        let mut out = *self;
        for i in 0..4 {
            out.mean[i] = e[i] * self.mean[i];
            for j in 0..4 {
                out.cov[i][j] = e[i] * e[j] * self.cov[i][j];
            }
            out.cov[i][i] += e[i] * (1.0 - e[i]) * self.mean[i];
        }
        out
    }

    pub fn mean_of(&self, w: &[f64; 4]) -> f64 {
        (0..4).map(|i| w[i] * self.mean[i]).sum()
    }

    pub fn cov_of(&self, w1: &[f64; 4], w2: &[f64; 4]) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            for j in 0..4 {
                acc += w1[i] * self.cov[i][j] * w2[j];
            }
        }
        acc
    }

    /// `Var(N_i − N_j) / ⟨N_i + N_j⟩`.
    pub fn nrf(&self, i: ModeId, j: ModeId) -> Result<f64> {
        let (a, b) = (i.index(), j.index());
        let sum = self.mean[a] + self.mean[b];
        if sum <= 0.0 {
            return Err(Error::UndefinedNrf(i, j));
        }
        let var = self.cov[a][a] + self.cov[b][b] - 2.0 * self.cov[a][b];
        Ok(var / sum)
    }

    /// Moments of `cells` independent identical copies summed mode by mode.
    pub fn scaled(&self, cells: u32) -> Self {
        let m = cells as f64;
        let mut out = *self;
        out.mean.iter_mut().for_each(|x| *x *= m);
        out.cov.iter_mut().flatten().for_each(|x| *x *= m);
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let means = self.mean.iter().zip(&other.mean).map(|(a, b)| (a - b).abs());
        let covs = self
            .cov
            .iter()
            .flatten()
            .zip(other.cov.iter().flatten())
            .map(|(a, b)| (a - b).abs());
        means.chain(covs).fold(0.0, f64::max)
    }
}

/// Means and covariances of `S0..S3` on both arms.
///
/// Index `4·arm + component`, so `S1^b` is index 5. Same-arm covariances of
/// non-commuting components are the symmetrized ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StokesMoments {
    pub mean: [f64; 8],
    pub cov: [[f64; 8]; 8],
}

pub fn stokes_index(arm: Arm, component: usize) -> usize {
    debug_assert!(component < 4);
    4 * arm.index() + component
}

impl StokesMoments {
    pub fn mean(&self, arm: Arm, component: usize) -> f64 {
        self.mean[stokes_index(arm, component)]
    }

    pub fn cov(&self, x: (Arm, usize), y: (Arm, usize)) -> f64 {
        self.cov[stokes_index(x.0, x.1)][stokes_index(y.0, y.1)]
    }

    /// `Var(S_i^a + sign·S_j^b)`.
    pub fn var_combination(&self, i: usize, sign: f64, j: usize) -> f64 {
        let (a, b) = ((Arm::A, i), (Arm::B, j));
        self.cov(a, a) + self.cov(b, b) + 2.0 * sign * self.cov(a, b)
    }

    /// `⟨S0^a + S0^b⟩`.
    pub fn normalization(&self) -> f64 {
        self.mean(Arm::A, 0) + self.mean(Arm::B, 0)
    }

    /// `Var(S_i^a ± S_j^b) / ⟨S0^a + S0^b⟩`.
    pub fn normalized_variance(&self, i: usize, sign: f64, j: usize) -> Result<f64> {
        let norm = self.normalization();
        if norm <= 0.0 {
            return Err(Error::ZeroNormalization);
        }
        Ok(self.var_combination(i, sign, j) / norm)
    }

    pub fn scaled(&self, cells: u32) -> Self {
        let m = cells as f64;
        let mut out = *self;
        out.mean.iter_mut().for_each(|x| *x *= m);
        out.cov.iter_mut().flatten().for_each(|x| *x *= m);
        out
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        let means = self.mean.iter().zip(&other.mean).map(|(a, b)| (a - b).abs());
        let covs = self
            .cov
            .iter()
            .flatten()
            .zip(other.cov.iter().flatten())
            .map(|(a, b)| (a - b).abs());
        means.chain(covs).fold(0.0, f64::max)
    }
}

/// Stokes directions an arm is measured along to fill a [`StokesMoments`]:
/// the three axes plus the three pairwise bisectors used for same-arm
/// covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MeasurementBasis {
    S1,
    S2,
    S3,
    S12,
    S13,
    S23,
}

impl MeasurementBasis {
    pub fn unitary(self) -> Jones {
        let r = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            MeasurementBasis::S1 => Jones::identity(),
            MeasurementBasis::S2 => jones_matrix(&WavePlate::half(Arm::A, FRAC_PI_8)),
            MeasurementBasis::S3 => jones_matrix(&WavePlate::quarter(Arm::A, FRAC_PI_4)),
            MeasurementBasis::S12 => analyzer_for_direction([r, r, 0.0]).unwrap(),
            MeasurementBasis::S13 => analyzer_for_direction([r, 0.0, r]).unwrap(),
            MeasurementBasis::S23 => analyzer_for_direction([0.0, r, r]).unwrap(),
        }
    }

    fn axis(component: usize) -> MeasurementBasis {
        match component {
            1 => MeasurementBasis::S1,
            2 => MeasurementBasis::S2,
            3 => MeasurementBasis::S3,
            _ => unreachable!("S0 needs no basis"),
        }
    }

    fn bisector(i: usize, j: usize) -> MeasurementBasis {
        match (i.min(j), i.max(j)) {
            (1, 2) => MeasurementBasis::S12,
            (1, 3) => MeasurementBasis::S13,
            (2, 3) => MeasurementBasis::S23,
            _ => unreachable!(),
        }
    }
}

/// Anything that can produce port photon-number moments for given arm
/// unitaries and port efficiencies.
pub trait PortMomentEngine {
    fn port_moments(&self, ua: &Jones, ub: &Jones, eta: &Efficiencies) -> Result<PhotonMoments>;

    /// Batched form; engines that can share work across settings override it.
    fn port_moments_batch(&self, unitaries: &[(Jones, Jones)], eta: &Efficiencies) -> Result<Vec<PhotonMoments>> {
        unitaries
            .iter()
            .map(|(ua, ub)| self.port_moments(ua, ub, eta))
            .collect()
    }
}

pub(crate) const SUM_A: [f64; 4] = [1.0, 1.0, 0.0, 0.0];
pub(crate) const DIFF_A: [f64; 4] = [1.0, -1.0, 0.0, 0.0];
pub(crate) const SUM_B: [f64; 4] = [0.0, 0.0, 1.0, 1.0];
pub(crate) const DIFF_B: [f64; 4] = [0.0, 0.0, 1.0, -1.0];

/// Fills all Stokes moments of the analyzed state from twelve joint
/// photon-number measurements: every cross-arm pair of axes and the three
/// bisector pairs. S0 moments come from the unrotated measurement.
pub fn assemble_stokes_moments<E: PortMomentEngine + ?Sized>(
    engine: &E,
    settings: &AnalyzerPair,
    eta: &Efficiencies,
) -> Result<StokesMoments> {
    let (ua0, ub0) = settings.unitaries()?;
    let mut plan: Vec<(MeasurementBasis, MeasurementBasis)> = Vec::with_capacity(12);
    for i in 1..=3 {
        for j in 1..=3 {
            plan.push((MeasurementBasis::axis(i), MeasurementBasis::axis(j)));
        }
    }
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        let b = MeasurementBasis::bisector(i, j);
        plan.push((b, b));
    }
    let unitaries: Vec<(Jones, Jones)> = plan
        .iter()
        .map(|(ba, bb)| (ba.unitary() * ua0, bb.unitary() * ub0))
        .collect();
    let results = engine.port_moments_batch(&unitaries, eta)?;
    let lookup = |ba: MeasurementBasis, bb: MeasurementBasis| -> &PhotonMoments {
        let pos = plan.iter().position(|&p| p == (ba, bb)).expect("basis pair in plan");
        &results[pos]
    };

    let mut out = StokesMoments {
        mean: [0.0; 8],
        cov: [[0.0; 8]; 8],
    };
    let a0 = stokes_index(Arm::A, 0);
    let b0 = stokes_index(Arm::B, 0);
    fn set_cov(out: &mut StokesMoments, x: usize, y: usize, v: f64) {
        out.cov[x][y] = v;
        out.cov[y][x] = v;
    }
    macro_rules! set {
        ($x:expr, $y:expr, $v:expr) => {{
            let v = $v;
            set_cov(&mut out, $x, $y, v)
        }};
    }

    let canonical = lookup(MeasurementBasis::S1, MeasurementBasis::S1);
    set!(a0, a0, canonical.cov_of(&SUM_A, &SUM_A));
    set!(b0, b0, canonical.cov_of(&SUM_B, &SUM_B));
    set!(a0, b0, canonical.cov_of(&SUM_A, &SUM_B));

    for i in 1..=3 {
        let ai = stokes_index(Arm::A, i);
        let bi = stokes_index(Arm::B, i);
        let pa = lookup(MeasurementBasis::axis(i), MeasurementBasis::S1);
        set!(ai, ai, pa.cov_of(&DIFF_A, &DIFF_A));
        set!(ai, a0, pa.cov_of(&DIFF_A, &SUM_A));
        set!(ai, b0, pa.cov_of(&DIFF_A, &SUM_B));
        let pb = lookup(MeasurementBasis::S1, MeasurementBasis::axis(i));
        set!(bi, bi, pb.cov_of(&DIFF_B, &DIFF_B));
        set!(bi, b0, pb.cov_of(&DIFF_B, &SUM_B));
        set!(bi, a0, pb.cov_of(&DIFF_B, &SUM_A));
        for j in 1..=3 {
            let bj = stokes_index(Arm::B, j);
            let p = lookup(MeasurementBasis::axis(i), MeasurementBasis::axis(j));
            set!(ai, bj, p.cov_of(&DIFF_A, &DIFF_B));
        }
    }
    for (i, j) in [(1, 2), (1, 3), (2, 3)] {
        let p = lookup(MeasurementBasis::bisector(i, j), MeasurementBasis::bisector(i, j));
        for (arm, diff) in [(Arm::A, &DIFF_A), (Arm::B, &DIFF_B)] {
            let (xi, xj) = (stokes_index(arm, i), stokes_index(arm, j));
            // Var(S_i + S_j) = 2 Var(S_bisector)
            let cov = p.cov_of(diff, diff) - 0.5 * (out.cov[xi][xi] + out.cov[xj][xj]);
            set!(xi, xj, cov);
        }
    }

    out.mean[a0] = canonical.mean_of(&SUM_A);
    out.mean[b0] = canonical.mean_of(&SUM_B);
    for i in 1..=3 {
        out.mean[stokes_index(Arm::A, i)] = lookup(MeasurementBasis::axis(i), MeasurementBasis::S1).mean_of(&DIFF_A);
        out.mean[stokes_index(Arm::B, i)] = lookup(MeasurementBasis::S1, MeasurementBasis::axis(i)).mean_of(&DIFF_B);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn assert_jones_eq(u: &Jones, v: &Jones, tol: f64) {
        for (x, y) in u.iter().zip(v.iter()) {
            assert!((x - y).norm() < tol, "{u} != {v}");
        }
    }

    #[test]
    fn mode_ordering_is_canonical() {
        let idx: Vec<usize> = ModeId::ALL.iter().map(|m| m.index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3]);
        assert!(ModeId::AH < ModeId::AV && ModeId::AV < ModeId::BH && ModeId::BH < ModeId::BV);
        assert_eq!("bv".parse::<ModeId>().unwrap(), ModeId::BV);
    }

    #[test]
    fn source_params_mean_photons() {
        let p = SourceParams::from_mean_photons(0.8, 1).unwrap();
        assert_abs_diff_eq!(p.mean_photons(), 0.8, epsilon = 1e-14);
        assert_eq!(SourceParams::new(0.0, 3).unwrap().mean_photons(), 0.0);
        assert!(SourceParams::new(-0.1, 1).is_err());
        assert!(SourceParams::new(0.5, 0).is_err());
    }

    #[test]
    fn kind_pairings() {
        use BellStateKind::*;
        assert_eq!(PhiMinus.partner(ModeId::AH), ModeId::BH);
        assert_eq!(PhiMinus.partner(ModeId::AV), ModeId::BV);
        assert_eq!(PsiPlus.partner(ModeId::AH), ModeId::BV);
        assert_eq!(PsiPlus.partner(ModeId::BH), ModeId::AV);
        assert_eq!(PsiMinus.pairs()[1], (ModeId::AV, ModeId::BH, -1.0));
        assert_eq!("Psi-".parse::<BellStateKind>().unwrap(), PsiMinus);
        assert_eq!("phi_plus".parse::<BellStateKind>().unwrap(), PhiPlus);
    }

    #[test]
    fn jones_reference_values() {
        let one = c(1.0, 0.0);
        let zero = c(0.0, 0.0);
        assert_jones_eq(&jones_matrix(&WavePlate::half(Arm::A, 0.0)), &Jones::new(one, zero, zero, -one), 1e-15);
        assert_jones_eq(
            &jones_matrix(&WavePlate::half(Arm::A, FRAC_PI_4)),
            &Jones::new(zero, one, one, zero),
            1e-15,
        );
        assert_jones_eq(
            &jones_matrix(&WavePlate::quarter(Arm::A, 0.0)),
            &Jones::new(one, zero, zero, C64::i()),
            1e-15,
        );
    }

    #[test]
    fn standard_analyzers_read_expected_stokes_axes() {
        let d = measured_stokes_direction(&Jones::identity());
        assert_abs_diff_eq!(d.as_slice(), [1.0, 0.0, 0.0].as_slice(), epsilon = 1e-14);
        let d = measured_stokes_direction(&compose_analyzer(&AnalyzerSetting::s2(Arm::A)).unwrap());
        assert_abs_diff_eq!(d.as_slice(), [0.0, 1.0, 0.0].as_slice(), epsilon = 1e-14);
        let d = measured_stokes_direction(&compose_analyzer(&AnalyzerSetting::s3(Arm::B)).unwrap());
        assert_abs_diff_eq!(d.as_slice(), [0.0, 0.0, 1.0].as_slice(), epsilon = 1e-14);
    }

    #[test]
    fn quarter_plate_at_45_maps_circular_light_onto_ports() {
        let u = compose_analyzer(&AnalyzerSetting::s3(Arm::A)).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        // (1, i)/√2 leaves entirely through the transmit port.
        let circ = nalgebra::Vector2::new(c(r, 0.0), c(0.0, r));
        let out = u * circ;
        assert_abs_diff_eq!(out[0].norm_sqr(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out[1].norm_sqr(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn empty_analyzer_is_identity() {
        let u = compose_analyzer(&AnalyzerSetting::empty(Arm::B)).unwrap();
        assert_jones_eq(&u, &Jones::identity(), 1e-15);
    }

    #[test]
    fn two_half_plates_rotate_by_twice_the_difference() {
        let (t1, t2) = (0.3, 1.1);
        let setting = AnalyzerSetting::empty(Arm::A)
            .with_plate(WavePlate::half(Arm::A, t1))
            .with_plate(WavePlate::half(Arm::A, t2));
        let u = compose_analyzer(&setting).unwrap();
        // Direct 2×2 product oracle.
        let h = |t: f64| {
            let (s, c) = (2.0 * t).sin_cos();
            [[c, s], [s, -c]]
        };
        let (m1, m2) = (h(t1), h(t2));
        let mut prod = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                prod[i][j] = (0..2).map(|k| m2[i][k] * m1[k][j]).sum();
            }
        }
        let delta = 2.0 * (t2 - t1);
        assert_abs_diff_eq!(prod[0][0], delta.cos(), epsilon = 1e-14);
        assert_abs_diff_eq!(prod[1][0], delta.sin(), epsilon = 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(u[(i, j)].re, prod[i][j], epsilon = 1e-14);
                assert_abs_diff_eq!(u[(i, j)].im, 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn plate_arm_mismatch_is_rejected() {
        let setting = AnalyzerSetting::empty(Arm::A).with_plate(WavePlate::half(Arm::B, 0.1));
        assert_eq!(
            compose_analyzer(&setting),
            Err(Error::ArmMismatch {
                setting: Arm::A,
                plate: Arm::B
            })
        );
    }

    #[test]
    fn port_numbers_to_stokes() {
        assert_eq!(stokes_from_port_numbers(5, 5), (10, 0));
        assert_eq!(stokes_from_port_numbers(3, 0), (3, 3));
        assert_eq!(stokes_from_port_numbers(0, 0), (0, 0));
    }

    #[test]
    fn direction_analyzer_reproduces_direction() {
        for dir in [
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0],
            [0.6, 0.0, 0.8],
            [0.0, 0.6, -0.8],
        ] {
            let u = analyzer_for_direction(dir).unwrap();
            assert!(unitarity_deviation(&u) < 1e-14);
            let got = measured_stokes_direction(&u);
            assert_abs_diff_eq!(got.as_slice(), dir.as_slice(), epsilon = 1e-14);
        }
        assert!(analyzer_for_direction([1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn efficiencies_validated() {
        assert!(Efficiencies::uniform(1.2).is_err());
        assert!(Efficiencies::per_mode([0.5, -0.1, 0.2, 0.3]).is_err());
        assert!(Efficiencies::uniform(0.4).unwrap().is_uniform());
    }

    #[test]
    fn photon_moment_loss_composes() {
        let m = PhotonMoments {
            mean: [1.0, 2.0, 0.5, 3.0],
            cov: [
                [2.0, 0.3, 0.9, 0.1],
                [0.3, 5.0, 0.2, 0.0],
                [0.9, 0.2, 0.8, 0.4],
                [0.1, 0.0, 0.4, 7.0],
            ],
        };
        let e1 = Efficiencies::per_mode([0.9, 0.5, 0.3, 0.7]).unwrap();
        let e2 = Efficiencies::per_mode([0.2, 0.6, 1.0, 0.4]).unwrap();
        let prod = Efficiencies::per_mode([0.18, 0.3, 0.3, 0.28]).unwrap();
        let two_step = m.with_loss(&e1).with_loss(&e2);
        assert!(two_step.max_abs_diff(&m.with_loss(&prod)) < 1e-12);
    }

    proptest! {
        #[test]
        fn plates_are_unitary(angle in -10.0f64..10.0, quarter in any::<bool>()) {
            let plate = if quarter { WavePlate::quarter(Arm::A, angle) } else { WavePlate::half(Arm::A, angle) };
            prop_assert!(unitarity_deviation(&jones_matrix(&plate)) < 1e-12);
        }

        #[test]
        fn half_plate_quarter_turn_flips_sign_only(angle in 0.0f64..3.2) {
            let u = jones_matrix(&WavePlate::half(Arm::B, angle));
            let v = jones_matrix(&WavePlate::half(Arm::B, angle + std::f64::consts::FRAC_PI_2));
            for (x, y) in u.iter().zip(v.iter()) {
                prop_assert!((x + y).norm() < 1e-12);
                prop_assert!((x.norm_sqr() - y.norm_sqr()).abs() < 1e-12);
            }
        }

        #[test]
        fn composed_analyzers_stay_unitary(angles in proptest::collection::vec((any::<bool>(), -4.0f64..4.0), 0..6)) {
            let setting = AnalyzerSetting {
                arm: Arm::B,
                plates: angles.iter().map(|&(q, a)| if q { WavePlate::quarter(Arm::B, a) } else { WavePlate::half(Arm::B, a) }).collect(),
            };
            let u = compose_analyzer(&setting).unwrap();
            prop_assert!(unitarity_deviation(&u) < 1e-12);
        }
    }
}
