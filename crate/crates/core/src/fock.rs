//! Exact reference engine over a truncated four-mode Fock basis.
//!
//! States are truncated by the per-arm photon number `n ≤ n_max` (the outer
//! index of the state expansion), so the norm deficit is known in closed form.
//! Passive arm unitaries preserve the per-arm photon number and act on each
//! `n`-photon sector independently through its symmetric-power representation.

use std::collections::BTreeMap;

use log::warn;
use num_complex::Complex64;

use crate::error::{check_efficiency, Error, Result};
use crate::modes::{
    assemble_stokes_moments, check_unitary, AnalyzerPair, Arm, BellStateKind, Efficiencies, Jones, ModeId,
    PhotonMoments, PortMomentEngine, SourceParams, StokesMoments,
};

pub type C64 = Complex64;

/// Photon numbers in canonical mode order (AH, AV, BH, BV).
pub type Occupation = [u32; 4];

pub const DEFAULT_N_MAX: u32 = 40;

/// Deficits above this are reported when moments are taken.
pub const DEFICIT_WARN: f64 = 1e-6;

static DEFICIT_WARNED: std::sync::atomic::AtomicBool = std::sync::atomic::AtomicBool::new(false);

/// Largest occupation grid thinned densely.
const DENSE_LOSS_LIMIT: usize = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct FockState {
    amplitudes: BTreeMap<Occupation, C64>,
    n_max: u32,
    norm_deficit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumberDistribution {
    probs: BTreeMap<Occupation, f64>,
    deficit: f64,
}

/// `A_nm = sinhⁿΓ / cosh^{n+2}Γ · (±1)^m`.
pub fn coefficient(kind: BellStateKind, n: u32, m: u32, gamma: f64) -> Result<C64> {
    if m > n {
        return Err(Error::IndexOutOfRange { n, m });
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(crate::error::invalid("gamma", format!("{gamma} must be >= 0")));
    }
    // tanhⁿ/cosh² avoids overflow of sinhⁿ and coshⁿ separately.
    let magnitude = if n == 0 {
        gamma.cosh().powi(-2)
    } else {
        gamma.tanh().powi(n as i32) / gamma.cosh().powi(2)
    };
    let sign = if m % 2 == 1 { kind.sign() } else { 1.0 };
    Ok(C64::new(sign * magnitude, 0.0))
}

/// Probability mass beyond `n_max`: `1 − Σ_{n≤n_max} (n+1) x^n (1−x)²` with
/// `x = tanh²Γ`, evaluated from the closed-form partial sum.
pub fn norm_deficit(gamma: f64, n_max: u32) -> f64 {
    let x = gamma.tanh().powi(2);
    if x == 0.0 {
        return 0.0;
    }
    let n = n_max as f64;
    let deficit = (n + 2.0) * x.powf(n + 1.0) - (n + 1.0) * x.powf(n + 2.0);
    deficit.max(0.0)
}

/// Upper bound on the absolute error of any single-cell Stokes first or
/// second moment computed from a state truncated at `n_max`.
///
/// Every Stokes component of an arm is bounded by the arm photon number, so
/// the neglected tail enters through its first and second photon-number
/// moments. The factor 8 covers the port-level recombination and loss.
pub fn truncation_allowance(gamma: f64, n_max: u32) -> f64 {
    let x = gamma.tanh().powi(2);
    if x == 0.0 {
        return 0.0;
    }
    let norm = (1.0 - x) * (1.0 - x);
    let mean_total = 2.0 * x / (1.0 - x);
    let (mut tail1, mut tail2) = (0.0, 0.0);
    let mut n = n_max as f64 + 1.0;
    let mut xn = x.powf(n);
    loop {
        let p = (n + 1.0) * xn * norm;
        tail1 += p * n;
        tail2 += p * n * n;
        if p * n * n < 1e-18 * tail2.max(1e-300) || n > n_max as f64 + 20_000.0 {
            break;
        }
        n += 1.0;
        xn *= x;
    }
    8.0 * (tail2 + 2.0 * mean_total * tail1 + tail1)
}

/// Smallest truncation whose [`truncation_allowance`] is below `tol`,
/// never less than `floor`.
pub fn n_max_for_allowance(gamma: f64, tol: f64, floor: u32) -> u32 {
    let mut n = floor;
    while truncation_allowance(gamma, n) > tol && n < 2000 {
        n += 1;
    }
    n
}

impl FockState {
    pub fn vacuum() -> Self {
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert([0; 4], C64::new(1.0, 0.0));
        FockState {
            amplitudes,
            n_max: 0,
            norm_deficit: 0.0,
        }
    }

    /// Builds the macroscopic Bell state of `kind` up to `n_max` photons per arm.
    pub fn build(kind: BellStateKind, params: &SourceParams, n_max: u32) -> Result<Self> {
        let gamma = params.gamma();
        let mut amplitudes = BTreeMap::new();
        for n in 0..=n_max {
            for m in 0..=n {
                let amp = coefficient(kind, n, m, gamma)?;
                if amp.norm_sqr() == 0.0 {
                    continue;
                }
                let occ = if kind.is_phi() {
                    [n - m, m, n - m, m]
                } else {
                    [n - m, m, m, n - m]
                };
                amplitudes.insert(occ, amp);
            }
        }
        Ok(FockState {
            amplitudes,
            n_max,
            norm_deficit: norm_deficit(gamma, n_max),
        })
    }

    pub fn from_amplitudes(amplitudes: BTreeMap<Occupation, C64>, n_max: u32, norm_deficit: f64) -> Self {
        FockState {
            amplitudes,
            n_max,
            norm_deficit,
        }
    }

    pub fn amplitudes(&self) -> &BTreeMap<Occupation, C64> {
        &self.amplitudes
    }

    pub fn amplitude(&self, occ: &Occupation) -> C64 {
        self.amplitudes.get(occ).copied().unwrap_or_default()
    }

    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn norm_deficit(&self) -> f64 {
        self.norm_deficit
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    /// Applies the passive transformation `a†_H → U₁₁b†_H + U₂₁b†_V`,
    /// `a†_V → U₁₂b†_H + U₂₂b†_V` to the modes of `arm`.
    pub fn apply_arm_unitary(&self, arm: Arm, u: &Jones) -> Result<FockState> {
        check_unitary(u, 1e-10)?;
        let (h, v) = match arm {
            Arm::A => (0, 1),
            Arm::B => (2, 3),
        };
        let (oh, ov) = match arm {
            Arm::A => (2, 3),
            Arm::B => (0, 1),
        };
        let max_sector = self
            .amplitudes
            .keys()
            .map(|occ| occ[h] + occ[v])
            .max()
            .unwrap_or(0);
        let transfer = SectorTransfer::new(u, max_sector);

        // Group amplitudes by the untouched arm's configuration and this arm's
        // photon number; within a group the amplitudes form a dense vector
        // indexed by the V occupation.
        let mut groups: BTreeMap<(u32, u32, u32), Vec<C64>> = BTreeMap::new();
        for (occ, &amp) in &self.amplitudes {
            let n = occ[h] + occ[v];
            let slot = groups
                .entry((occ[oh], occ[ov], n))
                .or_insert_with(|| vec![C64::default(); n as usize + 1]);
            slot[occ[v] as usize] += amp;
        }

        let mut amplitudes = BTreeMap::new();
        for ((other_h, other_v, n), input) in groups {
            let columns = &transfer.sectors[n as usize];
            let mut output = vec![C64::default(); n as usize + 1];
            for (k_in, &a) in input.iter().enumerate() {
                if a == C64::default() {
                    continue;
                }
                for (o, &t) in output.iter_mut().zip(&columns[k_in]) {
                    *o += a * t;
                }
            }
            for (k_out, amp) in output.into_iter().enumerate() {
                if amp.norm_sqr() == 0.0 {
                    continue;
                }
                let mut occ = [0u32; 4];
                occ[h] = n - k_out as u32;
                occ[v] = k_out as u32;
                occ[oh] = other_h;
                occ[ov] = other_v;
                amplitudes.insert(occ, amp);
            }
        }
        Ok(FockState {
            amplitudes,
            n_max: self.n_max,
            norm_deficit: self.norm_deficit,
        })
    }

    pub fn number_distribution(&self) -> NumberDistribution {
        let probs = self
            .amplitudes
            .iter()
            .filter_map(|(occ, a)| {
                let p = a.norm_sqr();
                (p > 0.0).then_some((*occ, p))
            })
            .collect();
        NumberDistribution {
            probs,
            deficit: self.norm_deficit,
        }
    }
}

/// Action of a 2×2 unitary on every photon-number sector of one arm:
/// `sectors[n][k_in][k_out]` maps `|n−k_in, k_in⟩` to `|n−k_out, k_out⟩`.
struct SectorTransfer {
    sectors: Vec<Vec<Vec<C64>>>,
}

impl SectorTransfer {
    fn new(u: &Jones, max_sector: u32) -> Self {
        // Images of the input creation operators as (b†_H, b†_V) coefficients.
        let create_h = (u[(0, 0)], u[(1, 0)]);
        let create_v = (u[(0, 1)], u[(1, 1)]);
        let mut sectors: Vec<Vec<Vec<C64>>> = vec![vec![vec![C64::new(1.0, 0.0)]]];
        for n in 1..=max_sector as usize {
            let prev = &sectors[n - 1];
            let mut cols = Vec::with_capacity(n + 1);
            for k_in in 0..=n {
                let p = n - k_in;
                let col = if p > 0 {
                    raise(&prev[k_in], create_h, (p as f64).sqrt())
                } else {
                    raise(&prev[n - 1], create_v, (n as f64).sqrt())
                };
                cols.push(col);
            }
            sectors.push(cols);
        }
        SectorTransfer { sectors }
    }
}

/// Applies `α b†_H + β b†_V` to an (n−1)-photon vector and divides by `norm`.
fn raise(prev: &[C64], (alpha, beta): (C64, C64), norm: f64) -> Vec<C64> {
    let n = prev.len();
    let mut out = vec![C64::default(); n + 1];
    for (k, &c) in prev.iter().enumerate() {
        out[k] += alpha * c * (((n - k) as f64).sqrt() / norm);
        out[k + 1] += beta * c * (((k + 1) as f64).sqrt() / norm);
    }
    out
}

fn ln_factorial(n: u32) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

fn binomial_pmf_row(n: u32, eta: f64) -> Vec<f64> {
    if eta == 1.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[n as usize] = 1.0;
        return row;
    }
    if eta == 0.0 {
        let mut row = vec![0.0; n as usize + 1];
        row[0] = 1.0;
        return row;
    }
    let ln_n = ln_factorial(n);
    let (le, lq) = (eta.ln(), (1.0 - eta).ln());
    (0..=n)
        .map(|k| (ln_n - ln_factorial(k) - ln_factorial(n - k) + k as f64 * le + (n - k) as f64 * lq).exp())
        .collect()
}

impl NumberDistribution {
    pub fn new(probs: BTreeMap<Occupation, f64>, deficit: f64) -> Self {
        NumberDistribution { probs, deficit }
    }

    pub fn probs(&self) -> &BTreeMap<Occupation, f64> {
        &self.probs
    }

    pub fn prob(&self, occ: &Occupation) -> f64 {
        self.probs.get(occ).copied().unwrap_or(0.0)
    }

    pub fn deficit(&self) -> f64 {
        self.deficit
    }

    pub fn total(&self) -> f64 {
        self.probs.values().sum()
    }

    /// Independent binomial thinning of every mode.
    pub fn apply_loss(&self, eta: &[f64; 4]) -> Result<NumberDistribution> {
        for &e in eta {
            check_efficiency("eta", e)?;
        }
        Ok(match self.apply_loss_dense(eta) {
            Some(dense) => dense,
            None => self.apply_loss_sparse(eta),
        })
    }

    fn apply_loss_sparse(&self, eta: &[f64; 4]) -> NumberDistribution {
        let mut current = self.probs.clone();
        for (mode, &e) in eta.iter().enumerate() {
            if e == 1.0 {
                continue;
            }
            let mut rows: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
            let mut next: BTreeMap<Occupation, f64> = BTreeMap::new();
            for (occ, p) in current {
                let n = occ[mode];
                let row = rows.entry(n).or_insert_with(|| binomial_pmf_row(n, e));
                for (k, &w) in row.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let mut out = occ;
                    out[mode] = k as u32;
                    *next.entry(out).or_insert(0.0) += p * w;
                }
            }
            current = next;
        }
        NumberDistribution {
            probs: current,
            deficit: self.deficit,
        }
    }

    /// Same thinning on a dense occupation grid; `None` when the grid would
    /// exceed [`DENSE_LOSS_LIMIT`] cells.
    fn apply_loss_dense(&self, eta: &[f64; 4]) -> Option<NumberDistribution> {
        let mut dims = [1usize; 4];
        for occ in self.probs.keys() {
            for k in 0..4 {
                dims[k] = dims[k].max(occ[k] as usize + 1);
            }
        }
        let cells = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))?;
        if cells > DENSE_LOSS_LIMIT {
            return None;
        }
        let strides = [dims[1] * dims[2] * dims[3], dims[2] * dims[3], dims[3], 1];
        let flat = |o: &Occupation| (0..4).map(|k| o[k] as usize * strides[k]).sum::<usize>();
        let mut grid = vec![0.0; cells];
        for (occ, &p) in &self.probs {
            grid[flat(occ)] += p;
        }
        for (mode, &e) in eta.iter().enumerate() {
            if e == 1.0 {
                continue;
            }
            let rows: Vec<Vec<f64>> = (0..dims[mode] as u32).map(|n| binomial_pmf_row(n, e)).collect();
            let mut next = vec![0.0; cells];
            for (i, &p) in grid.iter().enumerate() {
                if p == 0.0 {
                    continue;
                }
                let n = (i / strides[mode]) % dims[mode];
                let base = i - n * strides[mode];
                for (k, &w) in rows[n].iter().enumerate() {
                    next[base + k * strides[mode]] += p * w;
                }
            }
            grid = next;
        }
        let mut probs = BTreeMap::new();
        for (i, &p) in grid.iter().enumerate() {
            if p != 0.0 {
                let occ: Occupation = std::array::from_fn(|k| ((i / strides[k]) % dims[k]) as u32);
                probs.insert(occ, p);
            }
        }
        Some(NumberDistribution {
            probs,
            deficit: self.deficit,
        })
    }

    /// Exact first and second moments of the four mode numbers (not
    /// renormalized for the truncation deficit).
    pub fn moments(&self) -> PhotonMoments {
        if self.deficit > DEFICIT_WARN && !DEFICIT_WARNED.swap(true, std::sync::atomic::Ordering::Relaxed) {
            warn!("truncation deficit {:.3e} exceeds {:.0e}; moments are approximate", self.deficit, DEFICIT_WARN);
        }
        let total: f64 = self.probs.values().sum();
        let mut mean = [0.0; 4];
        for (occ, &p) in &self.probs {
            for i in 0..4 {
                mean[i] += p * occ[i] as f64;
            }
        }
        let mut cov = [[0.0; 4]; 4];
        for (occ, &p) in &self.probs {
            let d: [f64; 4] = std::array::from_fn(|i| occ[i] as f64 - mean[i]);
            for i in 0..4 {
                for j in i..4 {
                    cov[i][j] += p * d[i] * d[j];
                }
            }
        }
        // Missing mass counts as vacuum: cov = E[xy] − E[x]E[y] over the kept
        // support, which the centered sum undershoots by (1 − total)·μxμy.
        let shortfall = 1.0 - total;
        for i in 0..4 {
            for j in i..4 {
                cov[i][j] += shortfall * mean[i] * mean[j];
                cov[j][i] = cov[i][j];
            }
        }
        PhotonMoments { mean, cov }
    }

    pub fn nrf(&self, i: ModeId, j: ModeId) -> Result<f64> {
        self.moments().nrf(i, j)
    }
}

/// Port-moment engine backed by an exact Fock state. Loss is applied to the
/// photon-number moments, which is exact for binomial thinning.
pub struct FockEngine<'a> {
    state: &'a FockState,
}

impl<'a> FockEngine<'a> {
    pub fn new(state: &'a FockState) -> Self {
        FockEngine { state }
    }
}

impl PortMomentEngine for FockEngine<'_> {
    fn port_moments(&self, ua: &Jones, ub: &Jones, eta: &Efficiencies) -> Result<PhotonMoments> {
        let analyzed = self.state.apply_arm_unitary(Arm::A, ua)?.apply_arm_unitary(Arm::B, ub)?;
        Ok(analyzed.number_distribution().moments().with_loss(eta))
    }

    fn port_moments_batch(&self, unitaries: &[(Jones, Jones)], eta: &Efficiencies) -> Result<Vec<PhotonMoments>> {
        let mut cache: Vec<(Jones, FockState)> = Vec::new();
        let mut out = Vec::with_capacity(unitaries.len());
        for (ua, ub) in unitaries {
            let idx = match cache.iter().position(|(u, _)| u == ua) {
                Some(i) => i,
                None => {
                    cache.push((*ua, self.state.apply_arm_unitary(Arm::A, ua)?));
                    cache.len() - 1
                }
            };
            let analyzed = cache[idx].1.apply_arm_unitary(Arm::B, ub)?;
            out.push(analyzed.number_distribution().moments().with_loss(eta));
        }
        Ok(out)
    }
}

/// All single-cell Stokes moments after the analyzer settings and port loss.
pub fn stokes_moments(state: &FockState, settings: &AnalyzerPair, eta: &Efficiencies) -> Result<StokesMoments> {
    assemble_stokes_moments(&FockEngine::new(state), settings, eta)
}
