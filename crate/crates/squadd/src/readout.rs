//! Longitudinal readout by a Carr-Purcell train at fixed coupling: switching rate,
//! signal and noise of the integrated homodyne record, and single-shot fidelity.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::magnus::{window_sum_terms, MagnusKind};
use crate::quantum::{
    c, coherent_state, dissipator, expm, hamiltonian_super, identity, kron, partial_trace_qubits, trace_functional,
    vectorize, CMat, CVec, SingleQubitOps, C64, IM,
};

/// Readout configuration. Rates in rad/s, times in s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutConfig {
    pub g: f64,
    pub kappa: f64,
    /// Carr-Purcell pulse interval.
    pub tau: f64,
    /// Measurement time.
    pub t_f: f64,
    #[serde(default = "default_fock")]
    pub fock_dim: usize,
}

fn default_fock() -> usize {
    3
}

impl ReadoutConfig {
    pub fn new(g: f64, kappa: f64, tau: f64, t_f: f64) -> Result<Self> {
        let cfg = Self { g, kappa, tau, t_f, fock_dim: default_fock() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_fock(mut self, fock_dim: usize) -> Self {
        self.fock_dim = fock_dim;
        self
    }

    pub fn with_t_f(mut self, t_f: f64) -> Self {
        self.t_f = t_f;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !ok(self.g) || !ok(self.kappa) || !ok(self.tau) || !ok(self.t_f) {
            return invalid("readout rates and times must be finite and non-negative");
        }
        if self.fock_dim < 2 {
            return invalid("fock_dim must be at least 2");
        }
        Ok(())
    }

    /// `κτ < π/2`, where the average Liouvillian series is expected to converge.
    pub fn in_convergence_domain(&self) -> bool {
        self.kappa * self.tau < PI / 2.0
    }

    /// Whole Carr-Purcell periods `2τ` closest to `t`.
    pub fn periods_in(&self, t: f64) -> Result<usize> {
        if !(self.tau > 0.0) {
            return invalid("tau must be positive for a pulsed simulation");
        }
        Ok((t / (2.0 * self.tau)).round() as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutMethod {
    Analytic,
    Simplified,
    Numeric,
    MonteCarlo,
}

impl fmt::Display for ReadoutMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Analytic => "analytic",
            Self::Simplified => "simplified",
            Self::Numeric => "numeric",
            Self::MonteCarlo => "monte_carlo",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutResult {
    pub x: f64,
    pub xi: f64,
    pub snr: f64,
    /// Measurement time the values refer to.
    pub t_f: f64,
    /// Closed-form optimal time for this `Γ` (infinite when `Γ = 0`).
    pub t_opt: f64,
    pub gamma: f64,
    pub method: ReadoutMethod,
}

impl ReadoutResult {
    fn new(x: f64, xi: f64, t_f: f64, cfg: &ReadoutConfig, gamma: f64, method: ReadoutMethod) -> Self {
        let snr = if xi > 0.0 { x / xi } else { 0.0 };
        Self { x, xi, snr, t_f, t_opt: optimal_time(cfg, gamma), gamma, method }
    }
}

/// `Γ = g²τ²κ/24`. The linear short-time law holds for `κt < 256/[3(κτ)²]`.
pub fn gamma_switching(cfg: &ReadoutConfig) -> f64 {
    cfg.g * cfg.g * cfg.tau * cfg.tau * cfg.kappa / 24.0
}

/// Upper end `t = 256/[3κ(κτ)²]` of the linear short-time regime.
pub fn gamma_validity_time(cfg: &ReadoutConfig) -> f64 {
    let kt = cfg.kappa * cfg.tau;
    256.0 / (3.0 * kt * kt * cfg.kappa)
}

fn optimal_time(cfg: &ReadoutConfig, gamma: f64) -> f64 {
    if gamma > 0.0 && cfg.g > 0.0 {
        (3.0 * cfg.kappa / 8.0).sqrt() / (cfg.g * gamma.sqrt())
    } else {
        f64::INFINITY
    }
}

/// `1 - e^{-x t}` over `x`, with the `x → 0` limit `t`.
fn one_minus_exp_over(x: f64, t: f64) -> f64 {
    if x == 0.0 {
        t
    } else {
        -(-x * t).exp_m1() / x
    }
}

/// `f(t)/Γ²` of the telegraph-noise contribution to `Ξ²`.
fn f_over_gamma2(gamma: f64, kappa: f64, t: f64) -> f64 {
    let e = (-0.5 * kappa * t).exp();
    let w = t - 2.0 * (1.0 - e) / kappa;
    if gamma * t < 1e-7 {
        return 0.5 * w * w;
    }
    let (gm, k) = (gamma, kappa);
    let one_m_u = -(-gm * t).exp_m1();
    let u = 1.0 - one_m_u;
    let r = 2.0 * gm / k;
    // Group the O(Γ) pieces so the leading cancellations happen in exact arithmetic.
    let t13 = (gm * t - one_m_u) + r * e * one_m_u;
    let t2 = -r * (1.0 - e * u);
    let t4 = r * (1.0 - e) * (u + gm / k * (1.0 - e));
    let t5 = -(4.0 * gm * gm / (k * k)) * (gm * t - gm / k * (3.0 - 4.0 * e + e * e));
    (t13 + t2 + t4 + t5) / (gm * gm)
}

/// Closed-form `X` and `Ξ` for telegraph switching at rate `Γ` (requires `Γ < κ/2`).
pub fn signal_noise_analytic(cfg: &ReadoutConfig, gamma: f64) -> Result<ReadoutResult> {
    cfg.validate()?;
    let k = cfg.kappa;
    if !(gamma >= 0.0) || gamma >= 0.5 * k {
        return invalid(format!("closed form needs 0 <= Γ < κ/2 (Γ = {gamma:e}, κ = {k:e})"));
    }
    let t = cfg.t_f;
    let x = 2.0 * cfg.g * k / (0.5 * k - gamma) * (one_minus_exp_over(gamma, t) - one_minus_exp_over(0.5 * k, t));
    let xi2 = 2.0 * k * t + 4.0 * cfg.g * cfg.g * k * k / (0.25 * k * k - gamma * gamma) * f_over_gamma2(gamma, k, t)
        - 0.5 * x * x;
    Ok(ReadoutResult::new(x.abs(), xi2.max(0.0).sqrt(), t, cfg, gamma, ReadoutMethod::Analytic))
}

/// `X ≃ 4gt_f`, `Ξ ≃ √(2κt_f + (16/3)g²Γt_f³)`; meant for `Γt_f ≪ 1 ≪ κt_f`.
pub fn signal_noise_simplified(cfg: &ReadoutConfig, gamma: f64) -> ReadoutResult {
    let t = cfg.t_f;
    let x = 4.0 * cfg.g * t;
    let xi = (2.0 * cfg.kappa * t + 16.0 / 3.0 * cfg.g * cfg.g * gamma * t.powi(3)).sqrt();
    ReadoutResult::new(x, xi, t, cfg, gamma, ReadoutMethod::Simplified)
}

/// Time at which the shot-noise and switching terms of the simplified `Ξ²` are equal.
pub fn noise_crossover_time(cfg: &ReadoutConfig, gamma: f64) -> f64 {
    (3.0 * cfg.kappa / (8.0 * cfg.g * cfg.g * gamma)).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimalSnr {
    /// Closed form `Γt_opt = ½√(3/2)√(κΓ)/g`.
    pub t_opt: f64,
    /// Closed form `(6g²/κΓ)^{1/4}`.
    pub snr: f64,
    /// Maximizer of the full closed-form `X/Ξ` (golden-section search).
    pub t_opt_search: f64,
    pub snr_search: f64,
}

/// Optimal measurement time and SNR for switching rate `Γ > 0`.
pub fn optimal_snr(cfg: &ReadoutConfig, gamma: f64) -> Result<OptimalSnr> {
    if !(gamma > 0.0) || !(cfg.g > 0.0) || !(cfg.kappa > 0.0) {
        return invalid("optimal SNR needs g, κ, Γ > 0");
    }
    let t_opt = optimal_time(cfg, gamma);
    let snr = (6.0 * cfg.g * cfg.g / (cfg.kappa * gamma)).powf(0.25);
    let neg = |lt: f64| -> f64 {
        match signal_noise_analytic(&cfg.with_t_f(lt.exp()), gamma) {
            Ok(r) => -r.snr,
            Err(_) => f64::INFINITY,
        }
    };
    let (lt, v) = golden_min(neg, (t_opt / 30.0).ln(), (t_opt * 30.0).ln(), 1e-10);
    Ok(OptimalSnr { t_opt, snr, t_opt_search: lt.exp(), snr_search: -v })
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while (b - a).abs() > tol * (1.0 + a.abs() + b.abs()) {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

/// Generator used by the numeric readout routes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReadoutGenerator {
    /// Exact piecewise-constant Liouvillian of the pulse train.
    #[default]
    Piecewise,
    /// Time-independent `L̄⁽⁰⁾ + L̄⁽²⁾`.
    Averaged,
}

fn window_liouvillians(cfg: &ReadoutConfig, o: &SingleQubitOps) -> (CMat, CMat) {
    let damp = dissipator(&o.a) * c(cfg.kappa);
    let le = hamiltonian_super(&(o.exchange() * c(cfg.g))) + &damp;
    let lo = hamiltonian_super(&(o.counter_exchange() * c(cfg.g))) + &damp;
    (le, lo)
}

fn averaged_liouvillian(cfg: &ReadoutConfig, o: &SingleQubitOps) -> CMat {
    let (le, lo) = window_liouvillians(cfg, o);
    let t = window_sum_terms(MagnusKind::Liouvillian, &[(le.clone(), 0.5 * cfg.tau), (lo, cfg.tau), (le, 0.5 * cfg.tau)]);
    &t.order0 + &t.order2
}

/// Per-period map `exp` of a block generator built from per-window Liouvillians.
fn period_map<F: Fn(&CMat) -> CMat>(cfg: &ReadoutConfig, o: &SingleQubitOps, gen: ReadoutGenerator, lift: F) -> CMat {
    match gen {
        ReadoutGenerator::Piecewise => {
            let (le, lo) = window_liouvillians(cfg, o);
            let eh = expm(&(lift(&le) * c(0.5 * cfg.tau)));
            let eo = expm(&(lift(&lo) * c(cfg.tau)));
            &eh * eo * &eh
        }
        ReadoutGenerator::Averaged => expm(&(lift(&averaged_liouvillian(cfg, o)) * c(2.0 * cfg.tau))),
    }
}

/// `|±⟩_q|0⟩_c` as a ket.
fn plus_minus_vacuum(o: &SingleQubitOps, sign: f64) -> CVec {
    let s = o.space;
    (s.basis_ket(0, 0) + s.basis_ket(1, 0) * c(sign)) * c(std::f64::consts::FRAC_1_SQRT_2)
}

/// Stroboscopic `⟨σ_x⟩₊` at `t = 2τk`, `k = 0..=n_periods`, starting from `|+⟩|0⟩`.
pub fn sigma_x_trace(cfg: &ReadoutConfig, gen: ReadoutGenerator, n_periods: usize) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    cfg.periods_in(0.0)?;
    let o = SingleQubitOps::new(cfg.fock_dim)?;
    let p = period_map(cfg, &o, gen, |l| l.clone());
    let psi = plus_minus_vacuum(&o, 1.0);
    let mut v = vectorize(&(&psi * psi.adjoint()));
    let sx = trace_functional(&o.sx);
    let mut out = Vec::with_capacity(n_periods + 1);
    for k in 0..=n_periods {
        if k > 0 {
            v = &p * v;
        }
        out.push((2.0 * cfg.tau * k as f64, sx.dot(&v).re));
    }
    Ok(out)
}

/// Switching rate read off a simulation as `-Δ⟨σ_x⟩/Δt` between `t1` and `t2`
/// (both rounded to whole periods; take `κt1 ≫ 1` so the cavity transient is gone).
pub fn switching_rate_numeric(cfg: &ReadoutConfig, gen: ReadoutGenerator, t1: f64, t2: f64) -> Result<f64> {
    let (k1, k2) = (cfg.periods_in(t1)?, cfg.periods_in(t2)?);
    if k2 <= k1 {
        return invalid("need t2 > t1 by at least one period");
    }
    let tr = sigma_x_trace(cfg, gen, k2)?;
    Ok(-(tr[k2].1 - tr[k1].1) / (tr[k2].0 - tr[k1].0))
}

/// Signal and noise accumulated over whole periods.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReadoutCurve {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
    pub m_plus: Vec<f64>,
    pub m_minus: Vec<f64>,
    pub fock_dim: usize,
}

impl ReadoutCurve {
    pub fn snr(&self) -> Vec<f64> {
        self.x.iter().zip(&self.xi).map(|(x, xi)| x / xi).collect()
    }

    /// `(t, SNR)` at the largest SNR on the grid.
    pub fn max_snr(&self) -> Option<(f64, f64)> {
        let s = self.snr();
        let mut best: Option<(f64, f64)> = None;
        for (i, v) in s.iter().enumerate() {
            if v.is_finite() && best.is_none_or(|b| *v > b.1) {
                best = Some((self.t[i], *v));
            }
        }
        best
    }
}

/// Moments of `M` after each period for one preparation.
///
/// The state `[ρ; Y; m₂; m₁]` obeys `ρ' = ℒρ`, `Y' = ℒY + aρ`, `m₂' = tr(AY)`, `m₁' = tr(Aρ)`
/// with `A = a† - a`, so that `m₁ = ∫⟨A⟩` and `m₂ = ∫∫⟨A(t₁+t₂)a(t₁)⟩`.
fn moment_trajectory(cfg: &ReadoutConfig, o: &SingleQubitOps, gen: ReadoutGenerator, sign: f64, n: usize) -> Vec<(f64, f64)> {
    let d = o.space.dim();
    let n2 = d * d;
    let big = 2 * n2 + 2;
    let ins = kron(&identity(d), &o.a);
    let ta = trace_functional(&(&o.ad - &o.a));
    let lift = |l: &CMat| {
        let mut g = CMat::zeros(big, big);
        g.view_mut((0, 0), (n2, n2)).copy_from(l);
        g.view_mut((n2, n2), (n2, n2)).copy_from(l);
        g.view_mut((n2, 0), (n2, n2)).copy_from(&ins);
        for j in 0..n2 {
            g[(2 * n2, n2 + j)] = ta[j];
            g[(2 * n2 + 1, j)] = ta[j];
        }
        g
    };
    let p = period_map(cfg, o, gen, lift);
    let psi = plus_minus_vacuum(o, sign);
    let mut v = CVec::zeros(big);
    v.rows_mut(0, n2).copy_from(&vectorize(&(&psi * psi.adjoint())));
    let k = cfg.kappa;
    let mut out = Vec::with_capacity(n);
    for i in 1..=n {
        v = &p * v;
        let t = 2.0 * cfg.tau * i as f64;
        let m1 = (IM * k * v[2 * n2 + 1]).re;
        let m2 = k * t + 4.0 * k * k * v[2 * n2].re;
        out.push((m1, m2));
    }
    out
}

/// `X` and `Ξ` after each of `n_periods` periods.
pub fn signal_noise_curve(cfg: &ReadoutConfig, gen: ReadoutGenerator, n_periods: usize) -> Result<ReadoutCurve> {
    cfg.validate()?;
    cfg.periods_in(0.0)?;
    let o = SingleQubitOps::new(cfg.fock_dim)?;
    let (plus, minus) = rayon::join(
        || moment_trajectory(cfg, &o, gen, 1.0, n_periods),
        || moment_trajectory(cfg, &o, gen, -1.0, n_periods),
    );
    let mut curve = ReadoutCurve {
        t: Vec::with_capacity(n_periods),
        x: Vec::with_capacity(n_periods),
        xi: Vec::with_capacity(n_periods),
        m_plus: Vec::with_capacity(n_periods),
        m_minus: Vec::with_capacity(n_periods),
        fock_dim: cfg.fock_dim,
    };
    for (i, ((p1, p2), (q1, q2))) in plus.into_iter().zip(minus).enumerate() {
        let var = (p2 - p1 * p1) + (q2 - q1 * q1);
        if !(var > 0.0) {
            return Err(Error::NumericalConsistency(format!("non-positive noise variance {var:e}")));
        }
        curve.t.push(2.0 * cfg.tau * (i + 1) as f64);
        curve.x.push((p1 - q1).abs());
        curve.xi.push(var.sqrt());
        curve.m_plus.push(p1);
        curve.m_minus.push(q1);
    }
    Ok(curve)
}

/// `X`, `Ξ` at `t_f` (rounded to whole periods) from the master equation.
pub fn signal_noise_numeric(cfg: &ReadoutConfig, gen: ReadoutGenerator) -> Result<ReadoutResult> {
    let n = cfg.periods_in(cfg.t_f)?.max(1);
    let curve = signal_noise_curve(cfg, gen, n)?;
    let i = n - 1;
    Ok(ReadoutResult::new(curve.x[i], curve.xi[i], curve.t[i], cfg, gamma_switching(cfg), ReadoutMethod::Numeric))
}

/// Largest numeric SNR over `t_f ≤ t_max`, returned as `(t, snr)`.
pub fn max_snr_numeric(cfg: &ReadoutConfig, gen: ReadoutGenerator, t_max: f64) -> Result<(f64, f64)> {
    let n = cfg.periods_in(t_max)?.max(1);
    signal_noise_curve(cfg, gen, n)?
        .max_snr()
        .ok_or_else(|| Error::NumericalConsistency("empty SNR curve".into()))
}

/// Pure-displacement check at `κ = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementCheck {
    /// `α = -igt_f/2`.
    pub alpha: (f64, f64),
    /// Worst of `⟨±α|ρ_c|±α⟩` under `L̄⁽⁰⁾`.
    pub overlap_average: f64,
    /// Same under the pulse train, at `t_f` rounded to whole periods.
    pub overlap_piecewise: f64,
    pub fock_dim: usize,
}

/// Truncation large enough to hold `|α⟩` to `1e-12` in norm.
fn fock_for_alpha(alpha: C64, start: usize) -> usize {
    let mut f = start.max(4);
    while 1.0 - coherent_state(f, alpha).norm_squared() > 1e-12 {
        f *= 2;
    }
    f
}

/// Propagates `|±⟩|0⟩` and measures the overlap of the cavity state with `|±α⟩`.
pub fn conditional_displacement_check(cfg: &ReadoutConfig) -> Result<DisplacementCheck> {
    cfg.validate()?;
    if cfg.kappa != 0.0 {
        return invalid("the displacement check is defined for κ = 0");
    }
    let alpha = -IM * (0.5 * cfg.g * cfg.t_f);
    let fock = fock_for_alpha(alpha, cfg.fock_dim);
    let o = SingleQubitOps::new(fock)?;
    let space = o.space;
    // L̄⁽⁰⁾ at κ = 0 is generated by H̄⁽⁰⁾ = g(a + a†)σ_x/2.
    let h0 = (&o.a + &o.ad) * &o.sx * c(0.5 * cfg.g);
    let u_avg = expm(&(h0 * (-IM * cfg.t_f)));
    let u_pw = if cfg.tau > 0.0 {
        let k = cfg.periods_in(cfg.t_f)?;
        let eh = expm(&(o.exchange() * (-IM * 0.5 * cfg.tau * cfg.g)));
        let eo = expm(&(o.counter_exchange() * (-IM * cfg.tau * cfg.g)));
        let p = &eh * eo * &eh;
        crate::lindblad::matrix_power(&p, k)
    } else {
        u_avg.clone()
    };
    let overlap = |u: &CMat| -> f64 {
        [1.0, -1.0]
            .iter()
            .map(|&s| {
                let psi = u * plus_minus_vacuum(&o, s);
                let rc = partial_trace_qubits(&space, &(&psi * psi.adjoint()));
                let coh = coherent_state(fock, alpha * c(s));
                (coh.adjoint() * rc * &coh)[(0, 0)].re
            })
            .fold(f64::INFINITY, f64::min)
    };
    Ok(DisplacementCheck {
        alpha: (alpha.re, alpha.im),
        overlap_average: overlap(&u_avg),
        overlap_piecewise: overlap(&u_pw),
        fock_dim: fock,
    })
}

/// `F₁ ≈ 1 - ((κτ)²/192) log(96/(κτ)²)`, the leading asymptotic term (remainder dropped).
pub fn single_shot_fidelity_asymptotic(kappa_tau: f64) -> f64 {
    if kappa_tau == 0.0 {
        return 1.0;
    }
    let x = kappa_tau * kappa_tau;
    1.0 - x / 192.0 * (96.0 / x).ln()
}

/// Outcome histograms of the two preparations on shared bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_center: Vec<f64>,
    pub count_plus: Vec<u64>,
    pub count_minus: Vec<u64>,
}

impl Histogram {
    fn build(plus: &[f64], minus: &[f64], bins: usize) -> Self {
        let lo = plus.iter().chain(minus).cloned().fold(f64::INFINITY, f64::min);
        let hi = plus.iter().chain(minus).cloned().fold(f64::NEG_INFINITY, f64::max);
        let w = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let idx = |x: f64| (((x - lo) / w) as usize).min(bins - 1);
        let mut h = Self {
            bin_center: (0..bins).map(|i| lo + (i as f64 + 0.5) * w).collect(),
            count_plus: vec![0; bins],
            count_minus: vec![0; bins],
        };
        plus.iter().for_each(|&x| h.count_plus[idx(x)] += 1);
        minus.iter().for_each(|&x| h.count_minus[idx(x)] += 1);
        h
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin_center", "count_plus", "count_minus"])?;
        for i in 0..self.bin_center.len() {
            w.write_record(&[
                format!("{:e}", self.bin_center[i]),
                self.count_plus[i].to_string(),
                self.count_minus[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["bin_center", "count_plus", "count_minus"])?;
        for i in 0..self.bin_center.len() {
            w.serialize((self.bin_center[i], self.count_plus[i], self.count_minus[i]))?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloResult {
    pub fidelity: f64,
    /// Binomial standard error of the misassignment estimate.
    pub std_error: f64,
    /// Outcomes below the threshold are assigned to `|+⟩`.
    pub threshold: f64,
    pub t_f: f64,
    pub gamma: f64,
    pub n_traj: usize,
    pub seed: u64,
    pub histogram: Histogram,
}

const CHUNK: usize = 4096;
const HIST_BINS: usize = 200;

/// Switching-free conditional mean of `M` from one telegraph trajectory of `σ_x`
/// together with the number of switches.
fn telegraph_record<R: Rng>(rng: &mut R, wait: &Exp<f64>, s0: f64, g: f64, kappa: f64, t_f: f64) -> (f64, u32) {
    let (mut t, mut s, mut acc, mut flips) = (0.0, s0, 0.0, 0u32);
    // ∫ σ(t')(1 - e^{-κ(t_f-t')/2}) dt' over each constant stretch.
    let tail = |x: f64| if kappa > 0.0 { (-0.5 * kappa * (t_f - x)).exp() * 2.0 / kappa } else { x };
    loop {
        let t1 = (t + wait.sample(rng)).min(t_f);
        acc += s * ((t1 - t) - (tail(t1) - tail(t)));
        if t1 >= t_f {
            break;
        }
        t = t1;
        s = -s;
        flips += 1;
    }
    (-2.0 * g * acc, flips)
}

/// Outcomes `M` for `n` trajectories of one preparation (`s0 = ±1`), in chunk order.
fn sample_outcomes(cfg: &ReadoutConfig, gamma: f64, s0: f64, n: usize, seed: u64) -> (Vec<f64>, u64) {
    let noise_sd = (cfg.kappa * cfg.t_f).sqrt();
    let wait = if gamma > 0.0 { Exp::new(0.5 * gamma).ok() } else { None };
    let stream_base = if s0 > 0.0 { 0 } else { 1 };
    let chunks: Vec<(Vec<f64>, u64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(2 * ci as u64 + stream_base);
            let len = CHUNK.min(n - ci * CHUNK);
            let mut out = Vec::with_capacity(len);
            let mut flips = 0u64;
            for _ in 0..len {
                let (m, f) = match &wait {
                    Some(w) => telegraph_record(&mut rng, w, s0, cfg.g, cfg.kappa, cfg.t_f),
                    None => (telegraph_mean(cfg, s0), 0),
                };
                let z: f64 = StandardNormal.sample(&mut rng);
                out.push(m + noise_sd * z);
                flips += (f > 0) as u64;
            }
            (out, flips)
        })
        .collect();
    let mut all = Vec::with_capacity(n);
    let mut switched = 0;
    for (v, f) in chunks {
        all.extend(v);
        switched += f;
    }
    (all, switched)
}

/// Outcome mean without switching, `-2g s₀[t_f - 2(1 - e^{-κt_f/2})/κ]`.
fn telegraph_mean(cfg: &ReadoutConfig, s0: f64) -> f64 {
    -2.0 * cfg.g * s0 * (cfg.t_f - one_minus_exp_over(0.5 * cfg.kappa, cfg.t_f))
}

/// `1 - min_θ ½[P(M ≥ θ | +) + P(M < θ | -)]` and the minimizing threshold.
fn best_threshold(plus: &mut [f64], minus: &mut [f64]) -> (f64, f64, f64, f64) {
    plus.sort_by(f64::total_cmp);
    minus.sort_by(f64::total_cmp);
    let (np, nm) = (plus.len() as f64, minus.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    // θ = -∞: every outcome is assigned to `-`.
    let (mut best, mut th, mut bp, mut bm) = (0.5, f64::NEG_INFINITY, 1.0, 0.0);
    while i < plus.len() || j < minus.len() {
        let x = match (plus.get(i), minus.get(j)) {
            (Some(a), Some(b)) => a.min(*b),
            (Some(a), None) => *a,
            (None, Some(b)) => *b,
            (None, None) => unreachable!(),
        };
        while i < plus.len() && plus[i] <= x {
            i += 1;
        }
        while j < minus.len() && minus[j] <= x {
            j += 1;
        }
        let ep = 1.0 - i as f64 / np;
        let em = j as f64 / nm;
        let e = 0.5 * (ep + em);
        if e < best {
            best = e;
            th = x;
            bp = ep;
            bm = em;
        }
    }
    (1.0 - best, th, bp, bm)
}

/// Telegraph Monte Carlo of single-shot readout: `σ_x` flips at rate `Γ/2` each way,
/// the conditional mean of `M` is integrated exactly between flips and Gaussian shot noise
/// of variance `κt_f` is added. Deterministic for a given seed at any thread count.
pub fn single_shot_fidelity_monte_carlo(cfg: &ReadoutConfig, n_traj: usize, seed: u64) -> Result<MonteCarloResult> {
    single_shot_with_gamma(cfg, gamma_switching(cfg), n_traj, seed)
}

/// As [`single_shot_fidelity_monte_carlo`] with an explicit switching rate.
pub fn single_shot_with_gamma(cfg: &ReadoutConfig, gamma: f64, n_traj: usize, seed: u64) -> Result<MonteCarloResult> {
    cfg.validate()?;
    if n_traj == 0 || !(cfg.t_f > 0.0) {
        return invalid("need n_traj > 0 and t_f > 0");
    }
    if !(gamma >= 0.0) {
        return invalid("switching rate must be non-negative");
    }
    let (mut plus, _) = sample_outcomes(cfg, gamma, 1.0, n_traj, seed);
    let (mut minus, _) = sample_outcomes(cfg, gamma, -1.0, n_traj, seed);
    let histogram = Histogram::build(&plus, &minus, HIST_BINS);
    let (fidelity, threshold, ep, em) = best_threshold(&mut plus, &mut minus);
    let n = n_traj as f64;
    let std_error = 0.5 * ((ep * (1.0 - ep) + em * (1.0 - em)) / n).sqrt();
    Ok(MonteCarloResult { fidelity, std_error, threshold, t_f: cfg.t_f, gamma, n_traj, seed, histogram })
}

/// Monte Carlo fidelity at each `t_f` of a grid; returns the best grid point.
pub fn single_shot_best_time(cfg: &ReadoutConfig, t_grid: &[f64], n_traj: usize, seed: u64) -> Result<MonteCarloResult> {
    let mut best: Option<MonteCarloResult> = None;
    for &t in t_grid {
        let r = single_shot_fidelity_monte_carlo(&cfg.with_t_f(t), n_traj, seed)?;
        if best.as_ref().is_none_or(|b| r.fidelity > b.fidelity) {
            best = Some(r);
        }
    }
    best.ok_or_else(|| Error::InvalidInput("empty t_f grid".into()))
}

/// Fraction of `|+⟩` trajectories with at least one switch before `t_f`.
pub fn switched_fraction(cfg: &ReadoutConfig, n_traj: usize, seed: u64) -> f64 {
    let (_, s) = sample_outcomes(cfg, gamma_switching(cfg), 1.0, n_traj, seed);
    s as f64 / n_traj as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::correlation;
    use crate::quantum::DensityMatrix;
    use statrs::function::erf::erfc;

    fn fig5(kt: f64, kap_tf: f64) -> ReadoutConfig {
        ReadoutConfig::new(0.1, 1.0, kt, kap_tf).unwrap()
    }

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_switching(&fig5(0.0, 1.0)), 0.0);
        let g = gamma_switching(&fig5(0.2, 1.0));
        assert!((g - 0.01 * 0.04 / 24.0).abs() < 1e-18);
        assert!((g - 1.6667e-5).abs() < 1e-9);
        assert!((gamma_validity_time(&fig5(0.1, 1.0)) - 256.0 / 0.03).abs() < 1e-9);
    }

    #[test]
    fn switching_slope_from_simulations() {
        for kt in [0.1, 0.2, 0.3] {
            let cfg = fig5(kt, 0.0).with_fock(4);
            let gm = gamma_switching(&cfg);
            let pw = switching_rate_numeric(&cfg, ReadoutGenerator::Piecewise, 50.0, 150.0).unwrap();
            let av = switching_rate_numeric(&cfg, ReadoutGenerator::Averaged, 50.0, 150.0).unwrap();
            assert!((pw / gm - 1.0).abs() < 0.1, "piecewise κτ={kt}: {}", pw / gm);
            assert!((av / gm - 1.0).abs() < 0.1, "averaged κτ={kt}: {}", av / gm);
        }
    }

    #[test]
    fn analytic_limits() {
        let cfg = fig5(0.2, 400.0);
        let r = signal_noise_analytic(&cfg, 0.0).unwrap();
        let w = 400.0 - 2.0 * (1.0 - (-200f64).exp());
        assert!((r.x - 0.4 * w).abs() < 1e-9);
        assert!((r.xi - 800f64.sqrt()).abs() < 1e-9);
        // Γ → 0 continuity of the closed form.
        let r2 = signal_noise_analytic(&cfg, 1e-12).unwrap();
        assert!((r2.xi / r.xi - 1.0).abs() < 1e-6 && (r2.x / r.x - 1.0).abs() < 1e-9);
        for gm in [1e-6, 1e-3, 0.1] {
            assert!(f_over_gamma2(gm, 1.0, 0.0).abs() < 1e-12);
        }
        assert!(signal_noise_analytic(&cfg, 0.5).is_err());
        let r0 = signal_noise_analytic(&cfg.with_t_f(0.0), 1e-4).unwrap();
        assert!(r0.x.abs() < 1e-15 && r0.xi.abs() < 1e-6);
    }

    #[test]
    fn f_matches_quadrature() {
        // Oracle: Ξ² - 2κt from the telegraph correlation double integral, by tensor Gauss-Legendre.
        let (g, k, gm, t) = (0.1, 1.0, 0.02, 30.0);
        let rule = crate::quadrature::gauss_legendre(200);
        let kern = |s: f64| 1.0 - (-0.5 * k * (t - s)).exp();
        let mut dbl = 0.0;
        let mut single = 0.0;
        for (x1, w1) in rule.nodes.iter().zip(&rule.weights) {
            let s1 = 0.5 * t * (x1 + 1.0);
            single += 0.5 * t * w1 * kern(s1) * (-gm * s1).exp();
            for (x2, w2) in rule.nodes.iter().zip(&rule.weights) {
                let s2 = 0.5 * t * (x2 + 1.0);
                dbl += 0.25 * t * t * w1 * w2 * kern(s1) * kern(s2) * (-gm * (s1 - s2).abs()).exp();
            }
        }
        // Var(M±) = 4g²(∫∫ K K e^{-Γ|Δ|} - (∫ K e^{-Γs})²) + κt.
        let var = 4.0 * g * g * (dbl - single * single) + k * t;
        let cfg = ReadoutConfig::new(g, k, 0.1, t).unwrap();
        let r = signal_noise_analytic(&cfg, gm).unwrap();
        assert!((r.x - 4.0 * g * single).abs() < 1e-9 * r.x);
        // The closed form drops O(Γ²/κ²) pieces.
        assert!((r.xi * r.xi / (2.0 * var) - 1.0).abs() < 2e-3, "{} vs {}", r.xi * r.xi, 2.0 * var);
    }

    #[test]
    fn simplified_and_crossover() {
        let cfg = fig5(0.2, 100.0);
        let gm = gamma_switching(&cfg);
        let s = signal_noise_simplified(&cfg.with_t_f(0.0), 0.0);
        assert_eq!(s.x, 0.0);
        let s = signal_noise_simplified(&cfg, 0.0);
        let s4 = signal_noise_simplified(&cfg.with_t_f(400.0), 0.0);
        assert!((s4.snr / s.snr - 2.0).abs() < 1e-12);
        for t in [20.0, 25.0, 50.0, 100.0, 500.0, 1000.0] {
            let c2 = cfg.with_t_f(t);
            assert!(gm * t < 0.05);
            let a = signal_noise_analytic(&c2, gm).unwrap();
            let b = signal_noise_simplified(&c2, gm);
            assert!((a.xi / b.xi - 1.0).abs() < 0.03, "t={t}: {} vs {}", a.xi, b.xi);
            // The simplified signal drops the cavity fill-up offset 8g/κ.
            assert!((a.x + 8.0 * cfg.g / cfg.kappa - b.x).abs() < 0.03 * b.x, "t={t}: {} vs {}", a.x, b.x);
            if t >= 100.0 {
                assert!((a.snr / b.snr - 1.0).abs() < 0.03);
            }
        }
        let tx = noise_crossover_time(&cfg, gm);
        let g = cfg.g;
        assert!((2.0 * tx - 16.0 / 3.0 * g * g * gm * tx.powi(3)).abs() < 1e-9 * tx);
    }

    #[test]
    fn optimal_snr_values() {
        for kt in [0.05f64, 0.2, 0.5] {
            let cfg = fig5(kt, 1.0);
            let o = optimal_snr(&cfg, gamma_switching(&cfg)).unwrap();
            assert!((o.snr - 2.0 * 3f64.sqrt() / kt.sqrt()).abs() < 1e-9 * o.snr);
        }
        let cfg = fig5(0.2, 1.0);
        let o = optimal_snr(&cfg, gamma_switching(&cfg)).unwrap();
        assert!((o.snr - 7.745966692414834).abs() < 1e-9);
        assert!((o.t_opt_search / o.t_opt - 1.0).abs() < 0.1, "{} vs {}", o.t_opt_search, o.t_opt);
        assert!((o.t_opt - noise_crossover_time(&cfg, gamma_switching(&cfg))).abs() < 1e-9 * o.t_opt);
    }

    #[test]
    fn numeric_vacuum_and_symmetry() {
        let cfg = ReadoutConfig::new(0.0, 1.0, 0.2, 40.0).unwrap();
        let r = signal_noise_numeric(&cfg, ReadoutGenerator::Piecewise).unwrap();
        assert!(r.x.abs() < 1e-12);
        assert!((r.xi - (2.0 * 40.0f64).sqrt()).abs() < 1e-9);
        let cfg = fig5(0.2, 60.0);
        for gen in [ReadoutGenerator::Piecewise, ReadoutGenerator::Averaged] {
            let c = signal_noise_curve(&cfg, gen, 150).unwrap();
            for i in 0..c.t.len() {
                assert!((c.m_plus[i] + c.m_minus[i]).abs() < 1e-9 * (1.0 + c.m_plus[i].abs()));
                assert!(c.xi[i] * c.xi[i] >= cfg.kappa * c.t[i]);
            }
        }
    }

    #[test]
    fn numeric_matches_analytic() {
        let cfg = fig5(0.2, 50.0);
        let n = signal_noise_numeric(&cfg, ReadoutGenerator::Piecewise).unwrap();
        let a = signal_noise_analytic(&cfg, gamma_switching(&cfg)).unwrap();
        assert!((n.x / a.x - 1.0).abs() < 0.05, "{} vs {}", n.x, a.x);
        assert!((n.xi / a.xi - 1.0).abs() < 0.05, "{} vs {}", n.xi, a.xi);
    }

    #[test]
    fn noise_integral_matches_regression_quadrature() {
        // Dual route: second moment from the regression correlator on a tensor Gauss-Legendre grid.
        let cfg = fig5(0.2, 6.0).with_fock(4);
        let o = SingleQubitOps::new(4).unwrap();
        let l = averaged_liouvillian(&cfg, &o);
        let rho = DensityMatrix::from_ket(o.space, &plus_minus_vacuum(&o, 1.0)).unwrap();
        let a_op = &o.ad - &o.a;
        let t = 6.0;
        let rule = crate::quadrature::gauss_legendre(24);
        let mut m2 = C64::new(0.0, 0.0);
        let mut m1 = C64::new(0.0, 0.0);
        for (x1, w1) in rule.nodes.iter().zip(&rule.weights) {
            let t1 = 0.5 * t * (x1 + 1.0);
            m1 += correlation(&l, &a_op, &o.id, &rho, t1, 0.0).unwrap() * (0.5 * t * w1);
            // ∫₀^{t-t1} dt2 ⟨A(t1+t2) a(t1)⟩
            let span = t - t1;
            for (x2, w2) in rule.nodes.iter().zip(&rule.weights) {
                let t2 = 0.5 * span * (x2 + 1.0);
                m2 += correlation(&l, &a_op, &o.a, &rho, t1, t2).unwrap() * (0.25 * t * span * w1 * w2);
            }
        }
        let k = cfg.kappa;
        let mean = (IM * k * m1).re;
        let second = k * t + 4.0 * k * k * m2.re;
        let tr = moment_trajectory(&cfg, &o, ReadoutGenerator::Averaged, 1.0, cfg.periods_in(t).unwrap());
        let (p1, p2) = *tr.last().unwrap();
        assert!((p1 - mean).abs() < 1e-8 * p1.abs(), "{p1} vs {mean}");
        assert!((p2 - second).abs() < 1e-8 * p2, "{p2} vs {second}");
    }

    #[test]
    fn displacement_check() {
        let cfg = ReadoutConfig::new(1.0, 0.0, 0.05, 0.0).unwrap();
        let d = conditional_displacement_check(&cfg).unwrap();
        assert!((d.overlap_average - 1.0).abs() < 1e-12 && (d.overlap_piecewise - 1.0).abs() < 1e-12);
        let d = conditional_displacement_check(&cfg.with_t_f(1.0)).unwrap();
        assert_eq!(d.alpha, (0.0, -0.5));
        assert!((d.overlap_average - 1.0).abs() < 1e-9);
        assert!(conditional_displacement_check(&fig5(0.1, 1.0)).is_err());
        // Deficit of the pulse train at fixed g t_f: amplitude error ∝ τ², so deficit ∝ τ⁴.
        let taus = [0.05, 0.1, 0.2];
        let def: Vec<f64> = taus
            .iter()
            .map(|&tau| {
                let c = ReadoutConfig::new(1.0, 0.0, tau, 2.0).unwrap();
                1.0 - conditional_displacement_check(&c).unwrap().overlap_piecewise
            })
            .collect();
        let slope = (def[2] / def[0]).ln() / (taus[2] / taus[0] as f64).ln();
        assert!((slope - 4.0).abs() < 0.2, "slope {slope}, {def:?}");
        assert!(def[0].sqrt() < 0.01);
    }

    #[test]
    fn asymptotic_fidelity() {
        assert_eq!(single_shot_fidelity_asymptotic(0.0), 1.0);
        assert!((single_shot_fidelity_asymptotic(0.1) - 0.9995).abs() < 1e-4);
        let e = 1.0 - single_shot_fidelity_asymptotic(0.2);
        assert!((e - 0.04 / 192.0 * 2400f64.ln()).abs() < 1e-15);
        assert!((e - 1.62e-3).abs() < 1e-5);
        assert!(1.0 - single_shot_fidelity_asymptotic(1e-4) < 1e-8);
    }

    #[test]
    fn monte_carlo_gaussian_limit() {
        let cfg = ReadoutConfig::new(0.1, 1.0, 0.0, 50.0).unwrap();
        let r = single_shot_fidelity_monte_carlo(&cfg, 200_000, 7).unwrap();
        let mu = telegraph_mean(&cfg, 1.0).abs();
        let sd = (cfg.kappa * cfg.t_f).sqrt();
        let snr = signal_noise_analytic(&cfg, 0.0).unwrap().snr;
        let exact = 1.0 - 0.5 * erfc(mu / (sd * std::f64::consts::SQRT_2));
        assert!((exact - (1.0 - 0.5 * erfc(snr / 2.0))).abs() < 1e-12);
        assert!((r.fidelity - exact).abs() < 4.0 * r.std_error + 1e-3 / 200_000f64.sqrt(), "{} vs {exact}", r.fidelity);
        assert!(r.threshold.abs() < 0.1 * sd);
    }

    #[test]
    fn monte_carlo_deterministic_and_bimodal() {
        let cfg = ReadoutConfig::new(0.1, 1.0, 0.3, 3000.0).unwrap();
        let a = single_shot_fidelity_monte_carlo(&cfg, 10_000, 3).unwrap();
        let b = single_shot_fidelity_monte_carlo(&cfg, 10_000, 3).unwrap();
        assert_eq!(a, b);
        let gm = gamma_switching(&cfg);
        let frac = switched_fraction(&cfg, 50_000, 11);
        let expect = 1.0 - (-0.5 * gm * cfg.t_f).exp();
        assert!((frac - expect).abs() < 5.0 * (expect * (1.0 - expect) / 50_000.0).sqrt() + 1e-3, "{frac} vs {expect}");
        // A switched |+⟩ shot lands on the |-⟩ side more often as Γt_f grows.
        let far = ReadoutConfig::new(0.1, 1.0, 1.0, 6000.0).unwrap();
        let h = single_shot_fidelity_monte_carlo(&far, 20_000, 5).unwrap().histogram;
        let wrong_side: u64 =
            h.bin_center.iter().zip(&h.count_plus).filter(|(x, _)| **x > 0.0).map(|(_, n)| *n).sum();
        assert!(wrong_side as f64 / 20_000.0 > 0.05);
    }

    #[test]
    fn threshold_search() {
        let mut p = vec![-3.0, -2.0, -1.0, 0.5];
        let mut m = vec![0.0, 1.0, 2.0, 3.0];
        let (f, th, ep, em) = best_threshold(&mut p, &mut m);
        assert!((f - 0.875).abs() < 1e-15, "{f}");
        assert!(th >= -1.0 && th < 0.5);
        assert!((ep - 0.25).abs() < 1e-15 && em == 0.0);
    }
}
