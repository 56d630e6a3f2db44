//! Zero-mean Gaussian description of one Schmidt cell through its normal
//! (`⟨a†ᵢaⱼ⟩`) and anomalous (`⟨aᵢaⱼ⟩`) correlators.

use nalgebra::{Matrix4, SMatrix};

use crate::error::{check_efficiency, Result};
use crate::modes::{
    assemble_stokes_moments, check_unitary, AnalyzerPair, Arm, BellStateKind, Efficiencies, Jones, PhotonMoments,
    PortMomentEngine, SourceParams, StokesMoments, C64,
};

pub type Mat4 = Matrix4<C64>;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianState {
    /// `N_ij = ⟨a†_i a_j⟩`, Hermitian.
    pub normal: Mat4,
    /// `M_ij = ⟨a_i a_j⟩`, symmetric.
    pub anomalous: Mat4,
}

impl GaussianState {
    pub fn vacuum() -> Self {
        GaussianState {
            normal: Mat4::zeros(),
            anomalous: Mat4::zeros(),
        }
    }

    /// Every mode thermal with `sinh²Γ` photons; each of the kind's mode
    /// pairs carries `⟨a_i a_j⟩ = ±sinhΓ coshΓ`.
    pub fn build(kind: BellStateKind, params: &SourceParams) -> Self {
        let g = params.gamma();
        let occupation = g.sinh().powi(2);
        let pairing = g.sinh() * g.cosh();
        let mut state = Self::vacuum();
        for i in 0..4 {
            state.normal[(i, i)] = C64::new(occupation, 0.0);
        }
        for (x, y, sign) in kind.pairs() {
            let (i, j) = (x.index(), y.index());
            state.anomalous[(i, j)] = C64::new(sign * pairing, 0.0);
            state.anomalous[(j, i)] = C64::new(sign * pairing, 0.0);
        }
        state
    }

    /// Heisenberg transform `a → V a` with `V` the embedding of `u` on `arm`.
    pub fn apply_passive(&self, arm: Arm, u: &Jones) -> Result<GaussianState> {
        check_unitary(u, 1e-10)?;
        let off = 2 * arm.index();
        let mut v = Mat4::identity();
        for r in 0..2 {
            for c in 0..2 {
                v[(off + r, off + c)] = u[(r, c)];
            }
        }
        let vt = v.transpose();
        Ok(GaussianState {
            normal: v.conjugate() * self.normal * vt,
            anomalous: v * self.anomalous * vt,
        })
    }

    /// Pure-loss channel with per-mode transmission `eta`.
    pub fn apply_loss(&self, eta: &[f64; 4]) -> Result<GaussianState> {
        for &e in eta {
            check_efficiency("eta", e)?;
        }
        let mut out = self.clone();
        for i in 0..4 {
            for j in 0..4 {
                let s = (eta[i] * eta[j]).sqrt();
                out.normal[(i, j)] *= s;
                out.anomalous[(i, j)] *= s;
            }
        }
        Ok(out)
    }

    /// Photon-number moments by Gaussian moment factorization.
    pub fn photon_moments(&self) -> PhotonMoments {
        let mut out = PhotonMoments::zero();
        for i in 0..4 {
            let nii = self.normal[(i, i)].re;
            out.mean[i] = nii;
            for j in 0..4 {
                out.cov[i][j] = if i == j {
                    nii * (1.0 + nii) + self.anomalous[(i, i)].norm_sqr()
                } else {
                    self.normal[(i, j)].norm_sqr() + self.anomalous[(i, j)].norm_sqr()
                };
            }
        }
        out
    }

    pub fn total_photons(&self) -> f64 {
        self.normal.trace().re
    }

    /// `[[I + Nᵀ, M], [M*, N]]`, the matrix `⟨ξ ξ†⟩` for `ξ = (a, a†)`.
    pub fn extended_correlation(&self) -> SMatrix<C64, 8, 8> {
        let mut k = SMatrix::<C64, 8, 8>::zeros();
        let nt = self.normal.transpose();
        for i in 0..4 {
            for j in 0..4 {
                let delta = if i == j { 1.0 } else { 0.0 };
                k[(i, j)] = nt[(i, j)] + delta;
                k[(i, j + 4)] = self.anomalous[(i, j)];
                k[(i + 4, j)] = self.anomalous[(i, j)].conj();
                k[(i + 4, j + 4)] = self.normal[(i, j)];
            }
        }
        k
    }

    /// Hermiticity/symmetry of the blocks and positivity of
    /// [`extended_correlation`](Self::extended_correlation).
    pub fn is_physical(&self, tol: f64) -> bool {
        let hermitian = (self.normal - self.normal.adjoint()).iter().all(|z| z.norm() <= tol);
        let symmetric = (self.anomalous - self.anomalous.transpose()).iter().all(|z| z.norm() <= tol);
        let diag_ok = (0..4).all(|i| self.normal[(i, i)].re >= -tol);
        if !(hermitian && symmetric && diag_ok) {
            return false;
        }
        let eig = self.extended_correlation().symmetric_eigenvalues();
        eig.iter().all(|&e| e >= -tol)
    }
}

pub struct GaussianEngine<'a> {
    state: &'a GaussianState,
}

impl<'a> GaussianEngine<'a> {
    pub fn new(state: &'a GaussianState) -> Self {
        GaussianEngine { state }
    }
}

impl PortMomentEngine for GaussianEngine<'_> {
    fn port_moments(&self, ua: &Jones, ub: &Jones, eta: &Efficiencies) -> Result<PhotonMoments> {
        let analyzed = self
            .state
            .apply_passive(Arm::A, ua)?
            .apply_passive(Arm::B, ub)?
            .apply_loss(&eta.0)?;
        Ok(analyzed.photon_moments())
    }
}

/// All single-cell Stokes moments after the analyzer settings and port loss.
pub fn stokes_moments(state: &GaussianState, settings: &AnalyzerPair, eta: &Efficiencies) -> Result<StokesMoments> {
    assemble_stokes_moments(&GaussianEngine::new(state), settings, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{FockState, Occupation};
    use crate::modes::{jones_matrix, ModeId, PlateKind, WavePlate};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_4, FRAC_PI_8};

    fn params(n: f64) -> SourceParams {
        SourceParams::from_mean_photons(n, 1).unwrap()
    }

    /// `⟨a_i a_j⟩` evaluated directly from Fock amplitudes.
    fn fock_anomalous(state: &FockState, i: usize, j: usize) -> C64 {
        let mut acc = C64::default();
        for (occ, amp) in state.amplitudes() {
            if occ[i] == 0 || occ[j] == 0 || (i == j && occ[i] < 2) {
                continue;
            }
            let mut lowered: Occupation = *occ;
            let mut factor = (lowered[i] as f64).sqrt();
            lowered[i] -= 1;
            factor *= (lowered[j] as f64).sqrt();
            lowered[j] -= 1;
            acc += state.amplitude(&lowered).conj() * amp * factor;
        }
        acc
    }

    #[test]
    fn anomalous_signs_match_fock_amplitudes() {
        for kind in BellStateKind::ALL {
            let fock = FockState::build(kind, &params(0.8), 60).unwrap();
            let g = GaussianState::build(kind, &params(0.8));
            for i in 0..4 {
                for j in 0..4 {
                    let expected = fock_anomalous(&fock, i, j);
                    assert!(
                        (expected - g.anomalous[(i, j)]).norm() < 1e-9,
                        "{kind} ({i},{j}): fock {expected} vs gaussian {}",
                        g.anomalous[(i, j)]
                    );
                }
            }
        }
    }

    #[test]
    fn phi_minus_reference_correlators() {
        let g = GaussianState::build(BellStateKind::PhiMinus, &params(0.8));
        let s = (0.8f64 * 1.8).sqrt();
        assert_abs_diff_eq!(g.anomalous[(0, 2)].re, s, epsilon = 1e-14);
        assert_abs_diff_eq!(g.anomalous[(1, 3)].re, -s, epsilon = 1e-14);
        assert!(g.is_physical(1e-10));
    }

    #[test]
    fn zero_gain_is_vacuum() {
        assert_eq!(GaussianState::build(BellStateKind::PsiPlus, &params(0.0)), GaussianState::vacuum());
    }

    #[test]
    fn psi_plus_anomalous_support() {
        let g = GaussianState::build(BellStateKind::PsiPlus, &params(0.3));
        for i in 0..4 {
            for j in 0..4 {
                let on = matches!((i, j), (0, 3) | (3, 0) | (1, 2) | (2, 1));
                assert_eq!(g.anomalous[(i, j)].norm() > 0.0, on, "({i},{j})");
            }
        }
    }

    #[test]
    fn half_plate_at_45_maps_phi_onto_psi_support() {
        let g = GaussianState::build(BellStateKind::PhiMinus, &params(0.8));
        let t = g.apply_passive(Arm::B, &jones_matrix(&WavePlate::half(Arm::B, FRAC_PI_4))).unwrap();
        let psi = GaussianState::build(BellStateKind::PsiMinus, &params(0.8));
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(t.anomalous[(i, j)].norm(), psi.anomalous[(i, j)].norm(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn loss_extremes_and_linearity() {
        let g = GaussianState::build(BellStateKind::PsiMinus, &params(0.8));
        assert_eq!(g.apply_loss(&[1.0; 4]).unwrap(), g);
        let dark = g.apply_loss(&[0.0; 4]).unwrap();
        assert!(dark.normal.iter().chain(dark.anomalous.iter()).all(|z| z.norm() == 0.0));
        let base = g.photon_moments();
        for eta in [0.0, 0.25, 0.5, 1.0] {
            let m = g.apply_loss(&[eta; 4]).unwrap().photon_moments();
            for i in 0..4 {
                assert_abs_diff_eq!(m.mean[i], eta * base.mean[i], epsilon = 1e-14);
            }
        }
        assert!(g.apply_loss(&[0.5, 0.5, 0.5, 1.01]).is_err());
    }

    #[test]
    fn thermal_mode_variance() {
        // Geometric photon-number law oracle.
        let n: f64 = 0.8;
        let (mut mean, mut second) = (0.0, 0.0);
        for k in 0..3000 {
            let p = n.powi(k) / (1.0 + n).powi(k + 1);
            mean += p * k as f64;
            second += p * (k * k) as f64;
        }
        let m = GaussianState::build(BellStateKind::PhiPlus, &params(n)).photon_moments();
        assert_abs_diff_eq!(m.mean[0], mean, epsilon = 1e-10);
        assert_abs_diff_eq!(m.cov[0][0], second - mean * mean, epsilon = 1e-10);
    }

    #[test]
    fn squeezed_pair_difference_is_noiseless() {
        let m = GaussianState::build(BellStateKind::PhiMinus, &params(2.5)).photon_moments();
        assert_abs_diff_eq!(m.nrf(ModeId::AH, ModeId::BH).unwrap(), 0.0, epsilon = 1e-12);
        let lossy = GaussianState::build(BellStateKind::PhiMinus, &params(0.8))
            .apply_loss(&[0.4; 4])
            .unwrap()
            .photon_moments();
        assert_abs_diff_eq!(lossy.nrf(ModeId::AH, ModeId::BH).unwrap(), 0.60, epsilon = 1e-12);
    }

    #[test]
    fn stokes_reference_values() {
        let vac = stokes_moments(&GaussianState::vacuum(), &AnalyzerPair::identity(), &Efficiencies::ideal()).unwrap();
        assert!(vac.mean.iter().chain(vac.cov.iter().flatten()).all(|&x| x == 0.0));
        let g = GaussianState::build(BellStateKind::PhiMinus, &params(0.8));
        let m = stokes_moments(&g, &AnalyzerPair::identity(), &Efficiencies::uniform(0.4).unwrap()).unwrap();
        assert_abs_diff_eq!(m.normalized_variance(2, 1.0, 2).unwrap(), 0.60, epsilon = 1e-12);
    }

    #[test]
    fn fock_and_gaussian_agree_on_fixed_setting() {
        let kind = BellStateKind::PsiPlus;
        let settings = AnalyzerPair::new(
            crate::modes::AnalyzerSetting::empty(Arm::A).with_plate(WavePlate::quarter(Arm::A, 0.3)),
            crate::modes::AnalyzerSetting::empty(Arm::B).with_plate(WavePlate::half(Arm::B, FRAC_PI_8 + 0.1)),
        );
        let eta = Efficiencies::per_mode([0.3, 0.6, 0.8, 0.45]).unwrap();
        let p = params(0.5);
        let f = crate::fock::stokes_moments(&FockState::build(kind, &p, 70).unwrap(), &settings, &eta).unwrap();
        let g = stokes_moments(&GaussianState::build(kind, &p), &settings, &eta).unwrap();
        assert!(f.max_abs_diff(&g) < 1e-9, "{}", f.max_abs_diff(&g));
    }

    proptest! {
        #[test]
        fn passive_transforms_conserve_photon_number(theta in 0.0f64..3.2, phi in 0.0f64..3.2, gamma in 0.0f64..1.5) {
            let g = GaussianState::build(BellStateKind::PsiMinus, &SourceParams::new(gamma, 1).unwrap());
            let u = jones_matrix(&WavePlate::quarter(Arm::A, phi)) * jones_matrix(&WavePlate::half(Arm::A, theta));
            let t = g.apply_passive(Arm::A, &u).unwrap().apply_passive(Arm::B, &u.adjoint()).unwrap();
            prop_assert!((t.total_photons() - g.total_photons()).abs() < 1e-12 * (1.0 + g.total_photons()));
            prop_assert!(t.is_physical(1e-9));
        }

        #[test]
        fn singlet_sum_variances_invariant_under_global_rotation(
            theta in 0.0f64..3.2, phi in 0.0f64..3.2, gamma in 0.0f64..1.2, eta in 0.0f64..1.0,
        ) {
            let g = GaussianState::build(BellStateKind::PsiMinus, &SourceParams::new(gamma, 1).unwrap());
            let eff = Efficiencies::uniform(eta).unwrap();
            let base = stokes_moments(&g, &AnalyzerPair::identity(), &eff).unwrap();
            let rotated = stokes_moments(
                &g,
                &AnalyzerPair::global(&[(PlateKind::Half, theta), (PlateKind::Quarter, phi)]),
                &eff,
            ).unwrap();
            for i in 1..=3 {
                let (a, b) = (base.var_combination(i, 1.0, i), rotated.var_combination(i, 1.0, i));
                prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()), "S{}: {} vs {}", i, a, b);
            }
        }
    }
}
