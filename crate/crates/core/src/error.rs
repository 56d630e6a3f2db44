use thiserror::Error;

use crate::modes::{Arm, ModeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("matrix is not unitary (deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("wave plate for arm {plate:?} placed in the analyzer of arm {setting:?}")]
    ArmMismatch { setting: Arm, plate: Arm },

    #[error("coefficient index m={m} exceeds n={n}")]
    IndexOutOfRange { n: u32, m: u32 },

    #[error("NRF undefined for modes {0:?}/{1:?}: mean photon-number sum is zero")]
    UndefinedNrf(ModeId, ModeId),

    #[error("pairing {0:?}/{1:?} is not cross-arm")]
    SameArmPairing(ModeId, ModeId),

    #[error("state {0:?} is not supported by this model")]
    UnsupportedKind(crate::modes::BellStateKind),

    #[error("witness normalization <S0a + S0b> is zero")]
    ZeroNormalization,

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("setting labels do not match: {0}")]
    SettingMismatch(String),

    #[error("all data values are equal; the fit is degenerate")]
    DegenerateData,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn check_efficiency(name: &'static str, eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(invalid(name, format!("{eta} outside [0, 1]")))
    }
}
