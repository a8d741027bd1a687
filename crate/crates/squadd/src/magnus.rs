//! Average Hamiltonian / average Liouvillian terms.
//!
//! For a generator `A(t)` over one period `T` the Magnus series is
//! `Ω₁ = ∫A`, `Ω₂ = ½∫∫_{t₂<t₁}[A₁,A₂]`,
//! `Ω₃ = (1/6)∫∫∫_{t₃<t₂<t₁}([A₁,[A₂,A₃]] + [[A₁,A₂],A₃])`.
//! Hamiltonian kind uses `A = -iH` and reports `H̄ᵏ = iΩ_{k+1}/T`;
//! Liouvillian kind uses `A = ℒ` and reports `L̄ᵏ = Ω_{k+1}/T`.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_window_hamiltonian, EnsembleSpec};
use crate::error::{invalid, Error, Result};
use crate::pulses::{even_hamiltonian, odd_hamiltonian, Parity, TimeDependentHamiltonian};
use crate::quadrature::{gauss_legendre, legendre_integration_matrix};
use crate::quantum::{c, commutator, dissipator, hamiltonian_super, CMat, HilbertSpec, SingleQubitOps, IM};
use crate::transfer::SystemParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnusKind {
    Hamiltonian,
    Liouvillian,
}

/// Time-independent effective generators through second order.
#[derive(Clone, Debug, PartialEq)]
pub struct MagnusTerms {
    pub order0: CMat,
    pub order1: CMat,
    pub order2: CMat,
    pub period: f64,
    pub kind: MagnusKind,
}

impl MagnusTerms {
    pub fn order(&self, k: usize) -> &CMat {
        match k {
            0 => &self.order0,
            1 => &self.order1,
            _ => &self.order2,
        }
    }

    fn from_omegas(o1: CMat, o2: CMat, o3: CMat, period: f64, kind: MagnusKind) -> Self {
        let s = match kind {
            MagnusKind::Hamiltonian => IM / period,
            MagnusKind::Liouvillian => c(1.0 / period),
        };
        Self { order0: o1 * s, order1: o2 * s, order2: o3 * s, period, kind }
    }
}

/// Periodic generator evaluated by the numeric route.
pub struct Generator<'a> {
    pub kind: MagnusKind,
    pub dim: usize,
    /// `H(t)` for the Hamiltonian kind, `ℒ(t)` for the Liouvillian kind.
    pub eval: Box<dyn Fn(f64) -> CMat + Sync + 'a>,
    /// Discontinuities inside `(0, period)`.
    pub breakpoints: Vec<f64>,
    pub piecewise_constant: bool,
}

impl<'a> Generator<'a> {
    /// Piecewise-constant generator from consecutive `(matrix, duration)` windows.
    pub fn piecewise(kind: MagnusKind, windows: Vec<(CMat, f64)>) -> Self {
        let dim = windows[0].0.nrows();
        let mut edges = Vec::with_capacity(windows.len());
        let mut t = 0.0;
        for (_, h) in &windows {
            t += h;
            edges.push(t);
        }
        let breakpoints = edges[..edges.len() - 1].to_vec();
        let eval = move |s: f64| -> CMat {
            let k = edges.iter().position(|&e| s < e).unwrap_or(windows.len() - 1);
            windows[k].0.clone()
        };
        Self { kind, dim, eval: Box::new(eval), breakpoints, piecewise_constant: true }
    }

    /// Wraps a Hamiltonian over `[0, period]`.
    pub fn from_hamiltonian(h: &'a dyn TimeDependentHamiltonian, period: f64) -> Self {
        Self {
            kind: MagnusKind::Hamiltonian,
            dim: h.dim(),
            eval: Box::new(move |t| h.at(t)),
            breakpoints: h.breakpoints(0.0, period),
            piecewise_constant: h.piecewise_constant(),
        }
    }

    fn a(&self, t: f64) -> CMat {
        let m = (self.eval)(t);
        match self.kind {
            MagnusKind::Hamiltonian => m * (-IM),
            MagnusKind::Liouvillian => m,
        }
    }
}

/// Closed-form Magnus terms for piecewise-constant windows `(matrix, duration)`.
pub fn window_sum_terms(kind: MagnusKind, windows: &[(CMat, f64)]) -> MagnusTerms {
    let to_a = |m: &CMat| match kind {
        MagnusKind::Hamiltonian => m * (-IM),
        MagnusKind::Liouvillian => m.clone(),
    };
    let a: Vec<CMat> = windows.iter().map(|(m, _)| to_a(m)).collect();
    let h: Vec<f64> = windows.iter().map(|(_, h)| *h).collect();
    let d = a[0].nrows();
    let period: f64 = h.iter().sum();
    let mut o1 = CMat::zeros(d, d);
    let mut o2 = CMat::zeros(d, d);
    let mut o3 = CMat::zeros(d, d);
    for k in 0..a.len() {
        o1 += &a[k] * c(h[k]);
        for l in 0..k {
            o2 += commutator(&a[k], &a[l]) * c(0.5 * h[k] * h[l]);
        }
    }
    for k in 0..a.len() {
        for l in 0..=k {
            let ckl = commutator(&a[k], &a[l]);
            for m in 0..=l {
                let w = if k > l && l > m {
                    h[k] * h[l] * h[m]
                } else if k == l && l > m {
                    0.5 * h[k] * h[k] * h[m]
                } else if k > l && l == m {
                    0.5 * h[k] * h[l] * h[l]
                } else {
                    continue;
                };
                let t = commutator(&a[k], &commutator(&a[l], &a[m])) + commutator(&ckl, &a[m]);
                o3 += t * c(w / 6.0);
            }
        }
    }
    MagnusTerms::from_omegas(o1, o2, o3, period, kind)
}

/// Controls of the numeric nested-integral route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NumericControl {
    /// Gauss–Legendre nodes per panel.
    pub nodes: usize,
    /// Initial panels per smooth segment.
    pub panels: usize,
    /// Relative tolerance of successive panel doublings.
    pub tol: f64,
    pub max_doublings: usize,
}

impl Default for NumericControl {
    fn default() -> Self {
        Self { nodes: 12, panels: 4, tol: 1e-11, max_doublings: 10 }
    }
}

fn panel_pass(gen: &Generator, period: f64, panels: usize, q: usize, x_end: Option<&CMat>) -> [CMat; 4] {
    let rule = gauss_legendre(q);
    let s = legendre_integration_matrix(q);
    let d = gen.dim;
    let mut edges = vec![0.0];
    edges.extend(gen.breakpoints.iter().cloned().filter(|&b| b > 0.0 && b < period));
    edges.push(period);
    let mut i1 = CMat::zeros(d, d);
    let mut j = CMat::zeros(d, d);
    let mut qacc = CMat::zeros(d, d);
    let mut racc = CMat::zeros(d, d);
    let per_segment = if gen.piecewise_constant { 1 } else { panels };
    for seg in edges.windows(2) {
        let (s0, s1) = (seg[0], seg[1]);
        for p in 0..per_segment {
            let a0 = s0 + (s1 - s0) * p as f64 / per_segment as f64;
            let b0 = s0 + (s1 - s0) * (p + 1) as f64 / per_segment as f64;
            let hh = 0.5 * (b0 - a0);
            let at: Vec<CMat> = rule.nodes.iter().map(|&x| gen.a(a0 + (x + 1.0) * hh)).collect();
            let i1n: Vec<CMat> = (0..q)
                .map(|i| {
                    let mut m = i1.clone();
                    for jj in 0..q {
                        m += &at[jj] * c(hh * s[i][jj]);
                    }
                    m
                })
                .collect();
            let bn: Vec<CMat> = (0..q).map(|i| commutator(&at[i], &i1n[i])).collect();
            let jn: Vec<CMat> = (0..q)
                .map(|i| {
                    let mut m = j.clone();
                    for jj in 0..q {
                        m += &bn[jj] * c(hh * s[i][jj]);
                    }
                    m
                })
                .collect();
            for i in 0..q {
                let w = c(hh * rule.weights[i]);
                qacc += commutator(&at[i], &jn[i]) * w;
                if let Some(x) = x_end {
                    racc += commutator(&at[i], &commutator(&i1n[i], x)) * w;
                }
                i1 += &at[i] * w;
                j += &bn[i] * w;
            }
        }
    }
    [i1, j, qacc, racc]
}

fn numeric_omegas(gen: &Generator, period: f64, panels: usize, q: usize) -> [CMat; 3] {
    let first = panel_pass(gen, period, panels, q, None);
    let x = first[0].clone();
    let [i1, j, qacc, racc] = panel_pass(gen, period, panels, q, Some(&x));
    [i1, j * c(0.5), (qacc * c(2.0) + racc) * c(1.0 / 6.0)]
}

/// Magnus terms by nested Gauss–Legendre quadrature with panel doubling.
/// Piecewise-constant generators are integrated exactly in a single pass.
pub fn magnus_terms_numeric(gen: &Generator, period: f64, ctl: NumericControl) -> Result<MagnusTerms> {
    if !(period > 0.0) {
        return invalid("period must be positive");
    }
    let q = ctl.nodes.max(2);
    let mut panels = ctl.panels.max(1);
    let mut cur = numeric_omegas(gen, period, panels, q);
    if !gen.piecewise_constant {
        let mut ok = false;
        for _ in 0..ctl.max_doublings {
            panels *= 2;
            let next = numeric_omegas(gen, period, panels, q);
            let diff: f64 = (0..3).map(|k| (&next[k] - &cur[k]).norm()).sum();
            let size: f64 = (0..3).map(|k| next[k].norm()).sum();
            cur = next;
            if diff <= ctl.tol * size.max(f64::MIN_POSITIVE) {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(Error::NonConvergence(format!(
                "Magnus quadrature not converged with {panels} panels per segment"
            )));
        }
    }
    let [o1, o2, o3] = cur;
    Ok(MagnusTerms::from_omegas(o1, o2, o3, period, gen.kind))
}

/// Single Magnus term of order `k ∈ {0, 1, 2}`.
pub fn magnus_term_numeric(gen: &Generator, k: usize, period: f64) -> Result<CMat> {
    if k > 2 {
        return invalid("only orders 0, 1, 2 are available");
    }
    Ok(magnus_terms_numeric(gen, period, NumericControl::default())?.order(k).clone())
}

/// `∫₀ᵀ ‖H(t)‖ dt` with the spectral norm on the generator's own truncation.
pub fn convergence_bound(gen: &Generator, period: f64) -> f64 {
    let norm = |m: &CMat| m.clone().singular_values().max();
    let mut edges = vec![0.0];
    edges.extend(gen.breakpoints.iter().cloned().filter(|&b| b > 0.0 && b < period));
    edges.push(period);
    let mut acc = 0.0;
    for seg in edges.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if gen.piecewise_constant {
            acc += (b - a) * norm(&(gen.eval)(0.5 * (a + b)));
        } else {
            let rule = gauss_legendre(32);
            let hh = 0.5 * (b - a);
            for (x, w) in rule.nodes.iter().zip(&rule.weights) {
                acc += hh * w * norm(&(gen.eval)(a + (x + 1.0) * hh));
            }
        }
    }
    acc
}

/// Closed-form terms for single-qubit SQUADD at detuning `ξ`.
///
/// `H̄⁽²⁾` carries the constant `-(g²ξτ²/48)𝟙` produced by the exact commutators on top of the
/// `(a†σ₋+aσ₊)` and `(a†a+½)σ_z` terms; it is a global phase and is kept so that the matrices
/// agree with the direct evaluation.
pub fn squadd_terms_single(params: &SystemParams, xi: f64, tau: f64, space: HilbertSpec) -> Result<MagnusTerms> {
    if space.n_qubits() != 1 {
        return invalid("single-qubit terms need a one-qubit space");
    }
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    let o = SingleQubitOps::new(space.fock_dim())?;
    let g = params.g;
    let ex = o.exchange();
    let order0 = &ex * c(0.5 * g);
    let n = &o.ad * &o.a;
    let t2 = tau * tau;
    let order2 = &ex * c(-g * xi * xi * t2 / 48.0)
        - (n + &o.id * c(0.5)) * &o.sz * c(g * g * xi * t2 / 24.0)
        - &o.id * c(g * g * xi * t2 / 48.0);
    let d = space.dim();
    Ok(MagnusTerms { order0, order1: CMat::zeros(d, d), order2, period: 2.0 * tau, kind: MagnusKind::Hamiltonian })
}

/// One symmetric period of single-qubit SQUADD as windows.
pub fn squadd_single_windows(g: f64, g_off: f64, xi: f64, tau: f64, ops: &SingleQubitOps) -> Vec<(CMat, f64)> {
    let he = even_hamiltonian(ops, g, xi);
    let ho = odd_hamiltonian(ops, g_off, xi);
    vec![(he.clone(), 0.5 * tau), (ho, tau), (he, 0.5 * tau)]
}

/// Effective ensemble operators on `span{|G0⟩, |G1⟩, |e_j 0⟩}` (in that order).
#[derive(Clone, Debug)]
pub struct EnsembleTerms {
    pub h0: CMat,
    pub h2: CMat,
    pub omega1: f64,
    pub omega2: f64,
    pub chi: f64,
}

pub fn squadd_terms_ensemble(ens: &EnsembleSpec, tau: f64) -> Result<EnsembleTerms> {
    let n = ens.len();
    if n == 0 {
        return invalid("empty ensemble");
    }
    let d = n + 2;
    let g = ens.couplings();
    let xi = ens.detunings();
    let mut h0 = CMat::zeros(d, d);
    for j in 0..n {
        h0[(1, 2 + j)] = c(0.5 * g[j]);
        h0[(2 + j, 1)] = c(0.5 * g[j]);
    }
    let mut h2 = CMat::zeros(d, d);
    if ens.is_degenerate() {
        return Ok(EnsembleTerms { h0, h2, omega1: 0.0, omega2: 0.0, chi: 0.0 });
    }
    let nf = n as f64;
    let t2 = tau * tau;
    let (gav, gxav, gx2av) = (ens.g_av(), ens.gxi_av(), ens.gxi2_av());
    let omega1 = -nf * t2 / 48.0 * gav * gxav;
    let omega2 = -nf.sqrt() * t2 / 48.0 * gx2av;
    let chi = t2 / 24.0 * g.iter().zip(xi).map(|(g, x)| g * g * x).sum::<f64>();
    let (b, cc, dd) = ens.mode_vectors();
    for i in 0..n {
        for j in 0..n {
            h2[(2 + i, 2 + j)] = c(omega1 * (b[i] * cc[j] + cc[i] * b[j]));
        }
        h2[(1, 2 + i)] = c(omega2 * dd[i]);
        h2[(2 + i, 1)] = c(omega2 * dd[i]);
    }
    h2[(1, 1)] = c(chi);
    Ok(EnsembleTerms { h0, h2, omega1, omega2, chi })
}

/// One symmetric period of ensemble SQUADD on the `N_ex ≤ 1` space.
pub fn squadd_ensemble_windows(ens: &EnsembleSpec, tau: f64) -> Vec<(CMat, f64)> {
    let he = ensemble_window_hamiltonian(ens, Parity::Even);
    let ho = ensemble_window_hamiltonian(ens, Parity::Odd);
    vec![(he.clone(), 0.5 * tau), (ho, tau), (he, 0.5 * tau)]
}

/// Readout Liouvillian windows: `ξ = 0`, constant coupling `g`, damping `κ`.
pub fn readout_windows(params: &SystemParams, tau: f64, space: HilbertSpec) -> Result<Vec<(CMat, f64)>> {
    if space.n_qubits() != 1 {
        return invalid("readout terms need a one-qubit space");
    }
    let o = SingleQubitOps::new(space.fock_dim())?;
    let damp = dissipator(&o.a) * c(params.kappa);
    let le = hamiltonian_super(&(o.exchange() * c(params.g))) + &damp;
    let lo = hamiltonian_super(&(o.counter_exchange() * c(params.g))) + &damp;
    Ok(vec![(le.clone(), 0.5 * tau), (lo, tau), (le, 0.5 * tau)])
}

/// Average Liouvillian terms of the Carr-Purcell readout sequence.
pub fn readout_liouvillian_terms(params: &SystemParams, tau: f64, space: HilbertSpec) -> Result<MagnusTerms> {
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    Ok(window_sum_terms(MagnusKind::Liouvillian, &readout_windows(params, tau, space)?))
}
