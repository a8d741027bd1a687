//! Qubit ensembles coupled to one cavity mode: collective modes, the 4-mode
//! ring Hamiltonian, exact single-excitation spectra and transfer fidelity.
//!
//! Single-excitation vectors are indexed by qubit; the `N_ex ≤ 1` space used for
//! full matrices is ordered `|G0⟩, |G1⟩, |e_1 0⟩, …, |e_N 0⟩`.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::magnus::squadd_terms_ensemble;
use crate::pulses::Parity;
use crate::quantum::{c, expm_hermitian_mat, CMat, IM};

/// Per-qubit couplings `g_i` and detunings `ξ_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    couplings: Vec<f64>,
    detunings: Vec<f64>,
}

impl EnsembleSpec {
    pub fn new(couplings: Vec<f64>, detunings: Vec<f64>) -> Result<Self> {
        if couplings.is_empty() {
            return invalid("empty ensemble");
        }
        if couplings.len() != detunings.len() {
            return invalid("couplings and detunings differ in length");
        }
        if couplings.iter().any(|g| !(*g > 0.0) || !g.is_finite()) || detunings.iter().any(|x| !x.is_finite()) {
            return invalid("couplings must be positive and all values finite");
        }
        Ok(Self { couplings, detunings })
    }

    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn detunings(&self) -> &[f64] {
        &self.detunings
    }

    fn rms(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        let s: f64 = self.couplings.iter().zip(&self.detunings).map(|(&g, &x)| f(g, x)).sum();
        (s / self.len() as f64).sqrt()
    }

    /// `√(Σg_i²/N)`.
    pub fn g_av(&self) -> f64 {
        self.rms(|g, _| g * g)
    }

    /// `√N g_av`.
    pub fn g_ens(&self) -> f64 {
        (self.len() as f64).sqrt() * self.g_av()
    }

    /// `√(Σg_i²ξ_i²/N)`.
    pub fn gxi_av(&self) -> f64 {
        self.rms(|g, x| g * g * x * x)
    }

    /// `√(Σg_i²ξ_i⁴/N)`.
    pub fn gxi2_av(&self) -> f64 {
        self.rms(|g, x| g * g * x.powi(4))
    }

    /// Sample standard deviation about zero, `√(Σξ_i²/N)`.
    pub fn xi_rms(&self) -> f64 {
        self.rms(|_, x| x * x)
    }

    /// True when every `ξ_i` vanishes and the modes `c`, `d` are undefined.
    pub fn is_degenerate(&self) -> bool {
        self.detunings.iter().all(|&x| x == 0.0)
    }

    /// Normalized amplitudes of the modes `b`, `c`, `d` on `|e_i⟩`.
    /// For a degenerate ensemble `c` and `d` are returned equal to `b`.
    pub fn mode_vectors(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let sn = (self.len() as f64).sqrt();
        let ga = self.g_av();
        let b: Vec<f64> = self.couplings.iter().map(|g| g / (sn * ga)).collect();
        if self.is_degenerate() {
            return (b.clone(), b.clone(), b);
        }
        let (a1, a2) = (self.gxi_av(), self.gxi2_av());
        let z = self.couplings.iter().zip(&self.detunings);
        let cv = z.clone().map(|(g, x)| g * x / (sn * a1)).collect();
        let dv = z.map(|(g, x)| g * x * x / (sn * a2)).collect();
        (b, cv, dv)
    }

    /// One qubit per line: `g_i ξ_i`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# g_i xi_i\n");
        for (g, x) in self.couplings.iter().zip(&self.detunings) {
            s.push_str(&format!("{g:e} {x:e}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut g = Vec::new();
        let mut x = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split(|ch: char| ch.is_whitespace() || ch == ',').filter(|s| !s.is_empty()).collect();
            if f.len() != 2 {
                return Err(Error::Schema(format!("line {}: expected two numbers", ln + 1)));
            }
            let p = |s: &str| s.parse::<f64>().map_err(|e| Error::Schema(format!("line {}: {e}", ln + 1)));
            g.push(p(f[0])?);
            x.push(p(f[1])?);
        }
        Self::new(g, x)
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_text(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Draws `ξ_i ~ N(0, Δξ²)` and positive `g_i` from a Gaussian of mean `g_av_target` and
/// standard deviation `coupling_spread · g_av_target`, truncated to `g > 0`.
/// Couplings and detunings come from independent ChaCha streams of the same seed.
pub fn sample_ensemble(n: usize, g_av_target: f64, delta_xi: f64, coupling_spread: f64, seed: u64) -> Result<EnsembleSpec> {
    if n == 0 {
        return invalid("n must be at least 1");
    }
    if !(g_av_target > 0.0) || !(delta_xi >= 0.0) || !(coupling_spread >= 0.0) {
        return invalid("need g_av_target > 0, delta_xi >= 0, coupling_spread >= 0");
    }
    let mut rg = ChaCha8Rng::seed_from_u64(seed);
    rg.set_stream(1);
    let mut rx = ChaCha8Rng::seed_from_u64(seed);
    rx.set_stream(2);
    let couplings = if coupling_spread == 0.0 {
        vec![g_av_target; n]
    } else {
        let d = Normal::new(g_av_target, coupling_spread * g_av_target).map_err(|e| Error::InvalidInput(e.to_string()))?;
        (0..n)
            .map(|_| loop {
                let v = d.sample(&mut rg);
                if v > 0.0 {
                    break v;
                }
            })
            .collect()
    };
    let detunings = if delta_xi == 0.0 {
        vec![0.0; n]
    } else {
        let d = Normal::new(0.0, delta_xi).map_err(|e| Error::InvalidInput(e.to_string()))?;
        (0..n).map(|_| d.sample(&mut rx)).collect()
    };
    EnsembleSpec::new(couplings, detunings)
}

/// Inner products of the normalized collective modes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectiveOverlaps {
    /// `s = ⟨b|d⟩`.
    pub s: f64,
    pub bc: f64,
    pub cd: f64,
    /// Largest `|⟨m|m⟩ - 1|` over `m ∈ {b, c, d}`.
    pub norm_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn collective_overlaps(ens: &EnsembleSpec) -> Result<CollectiveOverlaps> {
    if ens.is_degenerate() {
        return Err(Error::NumericalConsistency("modes c and d have zero norm when every detuning vanishes".into()));
    }
    let (b, cv, d) = ens.mode_vectors();
    let norm_residual = [&b, &cv, &d].iter().map(|v| (dot(v, v) - 1.0).abs()).fold(0.0, f64::max);
    Ok(CollectiveOverlaps { s: dot(&b, &d), bc: dot(&b, &cv), cd: dot(&cv, &d), norm_residual })
}

/// Choice of the detuning moments `ξ_av` and `(ξ²)_av` in the ring couplings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiAvConvention {
    /// Realized moments `ξ_av = (gξ)_av/g_av`, `(ξ²)_av = (gξ²)_av/g_av` and realized `s`.
    #[default]
    Rms,
    /// Realized signed mean `ξ_av = Σg_i²ξ_i / Σg_i²`, otherwise as `Rms`.
    Signed,
    /// Gaussian large-`N` values `ξ_av = Δξ`, `(ξ²)_av = √3 Δξ²`, `s = 1/√3`.
    Nominal,
}

impl std::str::FromStr for XiAvConvention {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rms" => Ok(Self::Rms),
            "signed" => Ok(Self::Signed),
            "nominal" => Ok(Self::Nominal),
            _ => invalid(format!("unknown xi_av convention '{s}'")),
        }
    }
}

/// Ring Hamiltonian in the orthonormal basis `(ã, b̃, c̃, d̃)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourModeModel {
    pub matrix: Matrix4<f64>,
    pub omega_plus: f64,
    pub omega_minus: f64,
    pub omega_p_plus: f64,
    pub omega_p_minus: f64,
    pub s: f64,
    pub g_ens: f64,
    pub tau: f64,
}

impl FourModeModel {
    pub fn from_moments(g_ens: f64, s: f64, xi_av: f64, xi2_av: f64, tau: f64) -> Result<Self> {
        if !(s > -1.0 && s < 1.0) {
            return Err(Error::NumericalConsistency(format!("overlap s = {s} outside (-1, 1)")));
        }
        let t2 = tau * tau / 48.0;
        let (rp, rm) = (((1.0 + s) / 2.0).sqrt(), ((1.0 - s) / 2.0).sqrt());
        let wp = rp * (0.5 * g_ens - g_ens * xi2_av * t2);
        let wm = -rm * (0.5 * g_ens + g_ens * xi2_av * t2);
        let wpp = rm * g_ens * g_ens * xi_av * t2;
        let wpm = -rp * g_ens * g_ens * xi_av * t2;
        #[rustfmt::skip]
        let matrix = Matrix4::new(
            0.0, wm, 0.0, wp,
            wm, 0.0, wpp, 0.0,
            0.0, wpp, 0.0, wpm,
            wp, 0.0, wpm, 0.0,
        );
        Ok(Self { matrix, omega_plus: wp, omega_minus: wm, omega_p_plus: wpp, omega_p_minus: wpm, s, g_ens, tau })
    }

    /// `|b⟩` in the ring basis: `[√(2(1+s)) d̃ - √(2(1-s)) b̃]/2`.
    pub fn bright_mode(&self) -> Vector4<f64> {
        Vector4::new(0.0, -(2.0 * (1.0 - self.s)).sqrt() / 2.0, 0.0, (2.0 * (1.0 + self.s)).sqrt() / 2.0)
    }
}

/// Large-`N` model for Gaussian detunings of width `Δξ`.
pub fn four_mode_model(g_ens: f64, delta_xi: f64, tau: f64) -> Result<FourModeModel> {
    if !(g_ens > 0.0) || !(delta_xi >= 0.0) || !(tau >= 0.0) {
        return invalid("need g_ens > 0, delta_xi >= 0, tau >= 0");
    }
    FourModeModel::from_moments(g_ens, 1.0 / 3f64.sqrt(), delta_xi, 3f64.sqrt() * delta_xi * delta_xi, tau)
}

/// Model with moments taken from a realized ensemble.
pub fn four_mode_model_for(ens: &EnsembleSpec, tau: f64, conv: XiAvConvention) -> Result<FourModeModel> {
    if !(tau >= 0.0) {
        return invalid("tau must be non-negative");
    }
    let g_ens = ens.g_ens();
    if ens.is_degenerate() {
        return FourModeModel::from_moments(g_ens, 1.0 / 3f64.sqrt(), 0.0, 0.0, tau);
    }
    let ga = ens.g_av();
    match conv {
        XiAvConvention::Nominal => four_mode_model(g_ens, ens.xi_rms(), tau),
        XiAvConvention::Rms | XiAvConvention::Signed => {
            let s = collective_overlaps(ens)?.s;
            let xi_av = if conv == XiAvConvention::Rms {
                ens.gxi_av() / ga
            } else {
                let g2: f64 = ens.couplings().iter().map(|g| g * g).sum();
                ens.couplings().iter().zip(ens.detunings()).map(|(g, x)| g * g * x).sum::<f64>() / g2
            };
            FourModeModel::from_moments(g_ens, s, xi_av, ens.gxi2_av() / ga, tau)
        }
    }
}

/// `E±⁽ⁱ⁾` and `E±⁽ⁱⁱ⁾` as `[E₊⁽ⁱ⁾, E₋⁽ⁱ⁾, E₊⁽ⁱⁱ⁾, E₋⁽ⁱⁱ⁾]`.
pub fn doublet_energies(model: &FourModeModel) -> Result<[f64; 4]> {
    let (wp, wm, wpp, wpm) = (model.omega_plus, model.omega_minus, model.omega_p_plus, model.omega_p_minus);
    let tot = wp * wp + wm * wm + wpp * wpp + wpm * wpm;
    let sig = (((wp + wpp).powi(2) + (wm - wpm).powi(2)) * ((wp - wpp).powi(2) + (wm + wpm).powi(2))).sqrt();
    let mut lo = tot - sig;
    if lo < 0.0 {
        if lo < -1e-12 * tot.max(1.0) {
            return Err(Error::NumericalConsistency(format!("Σ² exceeds ω_tot² by {:e}", -lo)));
        }
        lo = 0.0;
    }
    let e1 = (0.5 * (tot + sig)).sqrt();
    let e2 = (0.5 * lo).sqrt();
    Ok([e1, -e1, e2, -e2])
}

/// `H̄⁽⁰⁾ + H̄⁽²⁾` on the `N + 1` single-excitation states `|G1⟩, |e_j 0⟩`.
pub fn single_excitation_hamiltonian(ens: &EnsembleSpec, tau: f64) -> Result<DMatrix<f64>> {
    let t = squadd_terms_ensemble(ens, tau)?;
    let h = &t.h0 + &t.h2;
    let d = ens.len() + 1;
    Ok(DMatrix::from_fn(d, d, |i, j| h[(i + 1, j + 1)].re))
}

/// Sorted eigenvalues of [`single_excitation_hamiltonian`].
pub fn exact_spectrum(ens: &EnsembleSpec, tau: f64) -> Result<Vec<f64>> {
    let h = single_excitation_hamiltonian(ens, tau)?;
    let ev = crate::quantum::symmetric_eigenvalues(&h);
    if ev.iter().any(|x| x.is_nan()) {
        return Err(Error::NonConvergence("eigensolver failed on the single-excitation Hamiltonian".into()));
    }
    Ok(ev)
}

/// Splits a spectrum into the four largest-magnitude levels (sorted ascending) and the rest.
pub fn split_bright_dark(spectrum: &[f64]) -> ([f64; 4], Vec<f64>) {
    let mut idx: Vec<usize> = (0..spectrum.len()).collect();
    idx.sort_by(|&a, &b| spectrum[b].abs().total_cmp(&spectrum[a].abs()));
    let mut bright = [0.0; 4];
    for (k, &i) in idx.iter().take(4).enumerate() {
        bright[k] = spectrum[i];
    }
    bright.sort_by(|a, b| a.total_cmp(b));
    let dark = idx.iter().skip(4).map(|&i| spectrum[i]).collect();
    (bright, dark)
}

/// Projection of ensemble SQUADD onto `N_ex ≤ 1` for one window parity:
/// `±Σ ξ_jσ_z^j/2` plus `Σ g_j(a†σ_j + h.c.)` on even windows.
pub fn ensemble_window_hamiltonian(ens: &EnsembleSpec, parity: Parity) -> CMat {
    let n = ens.len();
    let d = n + 2;
    let sgn = if parity == Parity::Even { 1.0 } else { -1.0 };
    let base = -0.5 * ens.detunings().iter().sum::<f64>();
    let mut h = CMat::zeros(d, d);
    h[(0, 0)] = c(sgn * base);
    h[(1, 1)] = c(sgn * base);
    for (j, (&g, &x)) in ens.couplings().iter().zip(ens.detunings()).enumerate() {
        h[(2 + j, 2 + j)] = c(sgn * (base + x));
        if parity == Parity::Even {
            h[(1, 2 + j)] = c(g);
            h[(2 + j, 1)] = c(g);
        }
    }
    h
}

/// Closed-form error `[(8+π²)/18 r⁴ + r²/18](π/2n_p)⁴` with `r = Δξ/2g_ens`.
pub fn ensemble_transfer_error(g_ens: f64, delta_xi: f64, n_p: usize) -> f64 {
    let r = delta_xi / (2.0 * g_ens);
    let x = PI / (2.0 * n_p as f64);
    ((8.0 + PI * PI) / 18.0 * r.powi(4) + r * r / 18.0) * x.powi(4)
}

/// Six-state average fidelity of `exp(-iH n_pτ)` against `U₀ = -i b†a` on the cavity qubit.
pub fn ensemble_transfer_fidelity_numeric(model: &FourModeModel, n_p: usize) -> Result<f64> {
    if n_p == 0 {
        return invalid("n_p must be positive");
    }
    let h = CMat::from_fn(4, 4, |i, j| c(model.matrix[(i, j)]));
    let u = expm_hermitian_mat(&h, n_p as f64 * model.tau);
    let b = model.bright_mode();
    let amp: crate::quantum::C64 = (0..4).map(|k| u[(k, 0)] * b[k]).sum();
    let x = IM * amp;
    Ok((1.0 + x.norm_sqr() + x.re) / 3.0)
}

/// Model at the transfer-optimal `τ = π/(g_ens n_p)`.
pub fn transfer_model(g_ens: f64, delta_xi: f64, n_p: usize) -> Result<FourModeModel> {
    if n_p == 0 {
        return invalid("n_p must be positive");
    }
    four_mode_model(g_ens, delta_xi, PI / (g_ens * n_p as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::magnus::{squadd_ensemble_windows, squadd_terms_single, window_sum_terms, MagnusKind};
    use crate::quantum::HilbertSpec;
    use crate::transfer::SystemParams;

    fn small() -> EnsembleSpec {
        EnsembleSpec::new(vec![0.7, 1.1, 1.3, 0.9, 1.0], vec![1.5, -0.4, 2.2, -1.9, 0.3]).unwrap()
    }

    #[test]
    fn derived_averages() {
        let e = small();
        let g2: f64 = e.couplings().iter().map(|g| g * g).sum();
        assert!((e.g_av().powi(2) - g2 / 5.0).abs() < 1e-14);
        assert!((e.g_ens() - 5f64.sqrt() * e.g_av()).abs() < 1e-14);
        let o = collective_overlaps(&e).unwrap();
        assert!(o.norm_residual < 1e-14);
        assert!(EnsembleSpec::new(vec![], vec![]).is_err());
        assert!(EnsembleSpec::new(vec![1.0], vec![]).is_err());
    }

    #[test]
    fn sampling() {
        let e = sample_ensemble(100, 2.0, 1.0, 0.0, 7).unwrap();
        assert!(e.couplings().iter().all(|&g| g == 2.0));
        let e2 = sample_ensemble(100, 2.0, 1.0, 0.0, 7).unwrap();
        assert_eq!(e, e2);
        let e3 = sample_ensemble(100, 2.0, 1.0, 0.3, 7).unwrap();
        assert_eq!(e.detunings(), e3.detunings());
        assert!(e3.couplings().iter().all(|&g| g > 0.0));
        let n = 100_000;
        let big = sample_ensemble(n, 1.0, 1.0, 0.0, 11).unwrap();
        let mean: f64 = big.detunings().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn single_qubit_overlaps() {
        let e = EnsembleSpec::new(vec![1.0], vec![-0.8]).unwrap();
        let o = collective_overlaps(&e).unwrap();
        assert!((o.s - 1.0).abs() < 1e-15 && (o.cd.abs() - 1.0).abs() < 1e-15 && (o.bc.abs() - 1.0).abs() < 1e-15);
        let z = EnsembleSpec::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(collective_overlaps(&z).is_err());
    }

    #[test]
    fn gaussian_overlap_statistics() {
        // E[ξ²]/√E[ξ⁴] for N(0,1) by Monte Carlo.
        let e = sample_ensemble(200_000, 1.0, 1.0, 0.0, 5).unwrap();
        let m2: f64 = e.detunings().iter().map(|x| x * x).sum::<f64>() / 2e5;
        let m4: f64 = e.detunings().iter().map(|x| x.powi(4)).sum::<f64>() / 2e5;
        assert!((m2 / m4.sqrt() - 1.0 / 3f64.sqrt()).abs() < 0.01);
        let mut s_sum = 0.0;
        for seed in 0..100 {
            let e = sample_ensemble(1000, 1.0, 1.0, 0.1, seed).unwrap();
            let o = collective_overlaps(&e).unwrap();
            assert!(o.bc.abs() < 5.0 / 1000f64.sqrt() && o.cd.abs() < 5.0 / 1000f64.sqrt());
            s_sum += o.s;
        }
        assert!((s_sum / 100.0 - 1.0 / 3f64.sqrt()).abs() < 0.05);
    }

    #[test]
    fn degenerate_terms_vanish() {
        let e = EnsembleSpec::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let t = squadd_terms_ensemble(&e, 0.1).unwrap();
        assert_eq!(t.h2.norm(), 0.0);
        assert_eq!((t.omega1, t.omega2, t.chi), (0.0, 0.0, 0.0));
    }

    #[test]
    fn one_qubit_reduces_to_single() {
        let (g, xi, tau) = (1.3, -2.0, 0.15);
        let e = EnsembleSpec::new(vec![g], vec![xi]).unwrap();
        let t = squadd_terms_ensemble(&e, tau).unwrap();
        let fock = 4;
        let s = squadd_terms_single(&SystemParams::new(g, 0.0, 0.0).unwrap(), xi, tau, HilbertSpec::single(fock).unwrap()).unwrap();
        let idx = [0, 1, fock];
        for i in 0..3 {
            for j in 0..3 {
                assert!((t.h0[(i, j)] - s.order0[(idx[i], idx[j])]).norm() < 1e-15);
                assert!((t.h2[(i, j)] - s.order2[(idx[i], idx[j])]).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn closed_form_matches_window_sums() {
        let e = small();
        let tau = 0.1;
        let t = squadd_terms_ensemble(&e, tau).unwrap();
        let w = window_sum_terms(MagnusKind::Hamiltonian, &squadd_ensemble_windows(&e, tau));
        let tot = &t.h0 + &t.h2;
        let ex = &w.order0 + &w.order2;
        assert!((&tot - &ex).norm() < 1e-13 * ex.norm());
        for k in 1..e.len() + 2 {
            assert_eq!(tot[(0, k)].norm(), 0.0);
        }
    }

    #[test]
    fn ring_structure_and_limits() {
        let m = four_mode_model(1.0, 0.0, 0.3).unwrap();
        assert_eq!((m.omega_p_plus, m.omega_p_minus), (0.0, -0.0));
        let e = doublet_energies(&m).unwrap();
        assert!((e[0] - 0.5).abs() < 1e-15 && e[2].abs() < 1e-7);
        assert!((m.omega_plus.powi(2) + m.omega_minus.powi(2) - 0.25).abs() < 1e-15);
        let m = four_mode_model(1.0, 1.0, 0.3).unwrap();
        for (i, j) in [(0, 0), (1, 1), (2, 2), (3, 3), (0, 2), (2, 0), (1, 3), (3, 1)] {
            assert_eq!(m.matrix[(i, j)], 0.0);
        }
        assert_eq!(m.matrix, m.matrix.transpose());
    }

    #[test]
    fn doublets_match_dense_eigenvalues() {
        let m = four_mode_model(1.0, 1.0, 0.3).unwrap();
        let ev = crate::quantum::symmetric_eigenvalues(&DMatrix::from_fn(4, 4, |i, j| m.matrix[(i, j)]));
        let mut d = doublet_energies(&m).unwrap().to_vec();
        d.sort_by(|a, b| a.total_cmp(b));
        for (a, b) in ev.iter().zip(&d) {
            assert!((a - b).abs() < 1e-10);
        }
        assert!((ev[0] + ev[3]).abs() < 1e-14 && (ev[1] + ev[2]).abs() < 1e-14);
    }

    #[test]
    fn tilde_basis_orthonormal() {
        let s = 1.0 / 3f64.sqrt();
        let b = Vector4::new(1.0, 0.0, 0.0, 0.0);
        let d = Vector4::new(s, (1.0 - s * s).sqrt(), 0.0, 0.0);
        let bt = (d - b) / (2.0 * (1.0 - s)).sqrt();
        let dt = (b + d) / (2.0 * (1.0 + s)).sqrt();
        assert!(bt.dot(&dt).abs() < 1e-15 && (bt.norm() - 1.0).abs() < 1e-15 && (dt.norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exact_spectrum_degenerate_and_trace() {
        let e = EnsembleSpec::new(vec![1.0; 9], vec![0.0; 9]).unwrap();
        let ev = exact_spectrum(&e, 0.2).unwrap();
        assert!((ev[0] + 1.5).abs() < 1e-13 && (ev[9] - 1.5).abs() < 1e-13);
        assert!(ev[1..9].iter().all(|x| x.abs() < 1e-13));
        let e = sample_ensemble(40, 1.0, 1.0, 0.2, 3).unwrap();
        let t = squadd_terms_ensemble(&e, 0.3).unwrap();
        let o = collective_overlaps(&e).unwrap();
        let ev = exact_spectrum(&e, 0.3).unwrap();
        let tr = t.chi + 2.0 * t.omega1 * o.bc;
        assert!((ev.iter().sum::<f64>() - tr).abs() < 1e-9);
    }

    #[test]
    fn error_law_and_numeric_fidelity() {
        assert_eq!(ensemble_transfer_error(1.0, 0.0, 10), 0.0);
        let m = transfer_model(1.0, 0.0, 20).unwrap();
        assert!((ensemble_transfer_fidelity_numeric(&m, 20).unwrap() - 1.0).abs() < 1e-13);
        // Propagation oracle for the closed form once n_p ≫ max(π, Δξ/g_ens).
        for (dxi, n_p) in [(1.0, 64), (2.0, 100), (2.0, 256)] {
            let m = transfer_model(1.0, dxi, n_p).unwrap();
            let num = 1.0 - ensemble_transfer_fidelity_numeric(&m, n_p).unwrap();
            let cf = ensemble_transfer_error(1.0, dxi, n_p);
            assert!((num / cf - 1.0).abs() < 0.1, "{dxi} {n_p}: {num} vs {cf}");
        }
        let r: f64 = 1.0;
        assert!((8.0 + PI * PI) / 18.0 * r.powi(4) > 10.0 * r * r / 18.0);
    }

    #[test]
    fn text_round_trip() {
        let e = sample_ensemble(17, 1.0, 2.0, 0.2, 9).unwrap();
        let back = EnsembleSpec::from_text(&e.to_text()).unwrap();
        assert_eq!(e, back);
        assert!(EnsembleSpec::from_text("1.0\n").is_err());
    }
}
