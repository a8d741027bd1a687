//! Pulse schedules, coupling waveforms and toggling-frame Hamiltonians.
//!
//! π-pulses sit at `(m + ½)τ`, `m = 0..n_p`. Between pulses the toggling frame
//! alternates parity: even after an even number of pulses, odd otherwise.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{adaptive_simpson, bisect};
use crate::quantum::{c, CMat, SingleQubitOps, C64, IM};
use crate::transfer::SystemParams;

/// Sign pattern of the π-pulse drive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhasePattern {
    Fixed,
    AlternateEach,
    AlternatePairs,
}

impl PhasePattern {
    /// Sign of pulse `m`: `+ + + +`, `+ - + -` or `+ + - -`.
    pub fn sign(self, m: usize) -> f64 {
        match self {
            PhasePattern::Fixed => 1.0,
            PhasePattern::AlternateEach => {
                if m % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            PhasePattern::AlternatePairs => {
                if (m / 2) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PhasePattern::Fixed => "fixed",
            PhasePattern::AlternateEach => "alternate_each",
            PhasePattern::AlternatePairs => "alternate_pairs",
        }
    }
}

impl std::str::FromStr for PhasePattern {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(PhasePattern::Fixed),
            "alternate_each" => Ok(PhasePattern::AlternateEach),
            "alternate_pairs" => Ok(PhasePattern::AlternatePairs),
            _ => invalid(format!("unknown phase pattern '{s}'")),
        }
    }
}

/// Timing and shape of one SQUADD or Carr-Purcell run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub tau: f64,
    pub n_p: usize,
    /// Width of each coupling pulse (`τ′ ≤ τ`).
    pub tau_prime: f64,
    /// Gaussian filter width; `None` is an ideal square wave.
    pub sigma_f: Option<f64>,
    /// π-pulse duration; 0 is instantaneous.
    pub t_p: f64,
    /// Residual coupling during odd windows (square coupling only).
    pub g_off: f64,
    pub phase_pattern: PhasePattern,
}

impl PulseSchedule {
    /// Ideal square-wave SQUADD with instantaneous pulses.
    pub fn ideal(tau: f64, n_p: usize) -> Result<Self> {
        let s = Self {
            tau,
            n_p,
            tau_prime: tau,
            sigma_f: None,
            t_p: 0.0,
            g_off: 0.0,
            phase_pattern: PhasePattern::Fixed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return invalid("tau must be positive");
        }
        if self.n_p == 0 || self.n_p % 2 != 0 {
            return invalid(format!("n_p must be positive and even, got {}", self.n_p));
        }
        if !(self.t_p >= 0.0) || self.t_p >= self.tau {
            return invalid("need 0 <= t_p < tau");
        }
        if !(self.tau_prime > 0.0) || self.tau_prime > self.tau * (1.0 + 1e-12) {
            return invalid("need 0 < tau_prime <= tau");
        }
        if let Some(s) = self.sigma_f {
            if !(s > 0.0) {
                return invalid("sigma_f must be positive");
            }
        }
        if !(self.g_off >= 0.0) {
            return invalid("g_off must be non-negative");
        }
        Ok(())
    }

    pub fn t_f(&self) -> f64 {
        self.n_p as f64 * self.tau
    }

    pub fn pulse_center(&self, m: usize) -> f64 {
        (m as f64 + 0.5) * self.tau
    }

    /// Number of pulse centres at or before `t`.
    pub fn pulses_before(&self, t: f64) -> usize {
        let k = (t / self.tau + 0.5).floor();
        k.clamp(0.0, self.n_p as f64) as usize
    }

    /// Cosine and sine of the drive rotation angle `θ(t)`, exact at completed pulses.
    pub fn rotation(&self, t: f64) -> (f64, f64, f64) {
        let mut full = 0i64;
        let mut partial = 0.0;
        for m in 0..self.n_p {
            let c0 = self.pulse_center(m) - 0.5 * self.t_p;
            let sgn = self.phase_pattern.sign(m);
            if t >= c0 + self.t_p {
                full += sgn as i64;
            } else if t > c0 {
                partial = sgn * (t - c0) / self.t_p;
            } else {
                break;
            }
        }
        let theta = PI * (full as f64 + partial);
        if partial == 0.0 {
            let cs = if full.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            (theta, cs, 0.0)
        } else {
            (theta, theta.cos(), theta.sin())
        }
    }

    /// Pulse edges (or centres when instantaneous) strictly inside `(t0, t1)`.
    pub fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for m in 0..self.n_p {
            let cm = self.pulse_center(m);
            let pts: &[f64] = if self.t_p > 0.0 { &[cm - 0.5 * self.t_p, cm + 0.5 * self.t_p] } else { &[cm] };
            for &p in pts {
                if p > t0 && p < t1 {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

/// One constant-Hamiltonian window of ideal SQUADD.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub start: f64,
    pub end: f64,
    pub parity: Parity,
}

impl Window {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Piecewise description of ideal SQUADD: `+ξσz/2 + g(a†σ₋+aσ₊)` on even windows,
/// `-ξσz/2 + g_off(a†σ₊+aσ₋)` on odd windows.
#[derive(Clone, Debug)]
pub struct SquaddDescriptor {
    pub g: f64,
    pub g_off: f64,
    pub tau: f64,
    pub n_p: usize,
    pub windows: Vec<Window>,
}

impl SquaddDescriptor {
    pub fn hamiltonian(&self, parity: Parity, xi: f64, ops: &SingleQubitOps) -> CMat {
        match parity {
            Parity::Even => even_hamiltonian(ops, self.g, xi),
            Parity::Odd => odd_hamiltonian(ops, self.g_off, xi),
        }
    }

    /// One symmetric period `[0, 2τ)`: half even, odd, half even.
    pub fn period(&self) -> [Window; 3] {
        let t = self.tau;
        [
            Window { start: 0.0, end: 0.5 * t, parity: Parity::Even },
            Window { start: 0.5 * t, end: 1.5 * t, parity: Parity::Odd },
            Window { start: 1.5 * t, end: 2.0 * t, parity: Parity::Even },
        ]
    }
}

pub fn even_hamiltonian(ops: &SingleQubitOps, g: f64, xi: f64) -> CMat {
    &ops.sz * c(0.5 * xi) + ops.exchange() * c(g)
}

pub fn odd_hamiltonian(ops: &SingleQubitOps, g_off: f64, xi: f64) -> CMat {
    &ops.sz * c(-0.5 * xi) + ops.counter_exchange() * c(g_off)
}

pub fn squadd_ideal(g: f64, tau: f64, n_p: usize, g_off: f64) -> Result<SquaddDescriptor> {
    if !(g > 0.0) || !(tau > 0.0) {
        return invalid("g and tau must be positive");
    }
    if n_p == 0 || n_p % 2 != 0 {
        return invalid(format!("n_p must be positive and even, got {n_p}"));
    }
    let mut windows = Vec::with_capacity(n_p + 1);
    let mut start = 0.0;
    for k in 0..=n_p {
        let end = if k == n_p { n_p as f64 * tau } else { (k as f64 + 0.5) * tau };
        let parity = if k % 2 == 0 { Parity::Even } else { Parity::Odd };
        windows.push(Window { start, end, parity });
        start = end;
    }
    Ok(SquaddDescriptor { g, g_off, tau, n_p, windows })
}

/// Amplitude as a function of time on a finite support.
pub trait Waveform: Send + Sync {
    fn eval(&self, t: f64) -> f64;
    fn support(&self) -> (f64, f64);
    /// Closed-form integral over `[a, b]` when available.
    fn integral(&self, _a: f64, _b: f64) -> Option<f64> {
        None
    }
}

/// Single filtered square pulse: `(g/2)[erf(σ(t+τ′/2)/√2) - erf(σ(t-τ′/2)/√2)]`.
pub fn g_sq(t: f64, g: f64, sigma_f: f64, tau_prime: f64) -> f64 {
    let k = sigma_f / SQRT_2;
    0.5 * g * (erf(k * (t + 0.5 * tau_prime)) - erf(k * (t - 0.5 * tau_prime)))
}

/// Antiderivative of `erf(k u)`.
fn erf_antiderivative(u: f64, k: f64) -> f64 {
    let x = k * u;
    u * erf(x) + (-x * x).exp() / (k * PI.sqrt())
}

/// Gaussian-filtered square train `Σ_{j=0}^{n_p/2} g_sq(t - 2jτ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilteredSquareTrain {
    pub g: f64,
    pub tau: f64,
    pub tau_prime: f64,
    pub sigma_f: f64,
    pub n_p: usize,
}

impl FilteredSquareTrain {
    pub fn new(g: f64, tau: f64, tau_prime: f64, sigma_f: f64, n_p: usize) -> Result<Self> {
        if !(sigma_f > 0.0) {
            return invalid("sigma_f must be positive");
        }
        if !(g >= 0.0) || !(tau > 0.0) || !(tau_prime > 0.0) || tau_prime > tau * (1.0 + 1e-12) {
            return invalid("need g >= 0, tau > 0 and 0 < tau_prime <= tau");
        }
        Ok(Self { g, tau, tau_prime, sigma_f, n_p })
    }

    fn cutoff(&self) -> f64 {
        10.0 / self.sigma_f + self.tau_prime
    }
}

impl Waveform for FilteredSquareTrain {
    fn eval(&self, t: f64) -> f64 {
        let cut = self.cutoff();
        let mut acc = 0.0;
        for j in 0..=self.n_p / 2 {
            let u = t - 2.0 * j as f64 * self.tau;
            if u.abs() < cut {
                acc += g_sq(u, self.g, self.sigma_f, self.tau_prime);
            }
        }
        acc
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.n_p as f64 * self.tau)
    }

    fn integral(&self, a: f64, b: f64) -> Option<f64> {
        let k = self.sigma_f / SQRT_2;
        let h = 0.5 * self.tau_prime;
        let big = |u: f64| erf_antiderivative(u + h, k) - erf_antiderivative(u - h, k);
        let mut acc = 0.0;
        for j in 0..=self.n_p / 2 {
            let s = 2.0 * j as f64 * self.tau;
            acc += big(b - s) - big(a - s);
        }
        Some(0.5 * self.g * acc)
    }
}

/// Ideal square coupling: `g` on even windows, `g_off` on odd windows.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareTrain {
    pub g: f64,
    pub g_off: f64,
    pub tau: f64,
    pub n_p: usize,
}

impl Waveform for SquareTrain {
    fn eval(&self, t: f64) -> f64 {
        let k = (t / self.tau + 0.5).floor().clamp(0.0, self.n_p as f64) as usize;
        if k % 2 == 0 {
            self.g
        } else {
            self.g_off
        }
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.n_p as f64 * self.tau)
    }
}

/// Rectangular π-pulse drive `w(t)` with amplitude `±π/t_p`.
#[derive(Clone, Debug, PartialEq)]
pub struct RectangularPulseTrain {
    pub schedule: PulseSchedule,
}

impl RectangularPulseTrain {
    pub fn new(schedule: PulseSchedule) -> Result<Self> {
        schedule.validate()?;
        if !(schedule.t_p > 0.0) {
            return invalid("rectangular pulses need t_p > 0");
        }
        Ok(Self { schedule })
    }

    pub fn amplitude(&self) -> f64 {
        PI / self.schedule.t_p
    }
}

impl Waveform for RectangularPulseTrain {
    fn eval(&self, t: f64) -> f64 {
        let s = &self.schedule;
        for m in 0..s.n_p {
            let cm = s.pulse_center(m);
            if (t - cm).abs() < 0.5 * s.t_p {
                return s.phase_pattern.sign(m) * self.amplitude();
            }
        }
        0.0
    }

    fn support(&self) -> (f64, f64) {
        (0.0, self.schedule.t_f())
    }

    fn integral(&self, a: f64, b: f64) -> Option<f64> {
        Some(self.schedule.rotation(b).0 - self.schedule.rotation(a).0)
    }
}

/// 10 % to 90 % rise time of a filtered edge, `2√2 erf⁻¹(4/5)/σ_f`.
pub fn rise_time(sigma_f: f64) -> Result<f64> {
    if !(sigma_f > 0.0) {
        return invalid("sigma_f must be positive");
    }
    Ok(2.0 * SQRT_2 * erf_inv(0.8) / sigma_f)
}

/// `θ(t) = ∫₀ᵗ w`.
pub fn rotation_angle(w: &dyn Waveform, t: f64) -> Result<f64> {
    let (lo, hi) = w.support();
    if t < lo || t > hi {
        return invalid(format!("t = {t} outside waveform support [{lo}, {hi}]"));
    }
    if let Some(v) = w.integral(lo, t) {
        return Ok(v);
    }
    Ok(adaptive_simpson(&|x| w.eval(x), lo, t, 1e-12))
}

/// Time-averaged coupling over one period, `ḡ = (1/2τ)∫₀^{2τ} g(t) dt`.
pub fn mean_coupling(train: &FilteredSquareTrain) -> f64 {
    train.integral(0.0, 2.0 * train.tau).unwrap() / (2.0 * train.tau)
}

/// Timing of a filtered SQUADD run fixed by `ḡ n_p τ = π/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilteredTiming {
    pub tau: f64,
    pub tau_prime: f64,
    pub rise_time: f64,
    pub g_bar: f64,
}

/// Solves `ḡ n_p τ = π/2` for `τ` with `τ′ = τ - t_r - t_p` (bisection, 1e-12 relative).
pub fn solve_filtered_tau(g: f64, n_p: usize, sigma_f: f64, t_p: f64) -> Result<FilteredTiming> {
    if n_p == 0 || n_p % 2 != 0 {
        return invalid("n_p must be positive and even");
    }
    let t_r = rise_time(sigma_f)?;
    let lo = (t_r + t_p) * (1.0 + 1e-12) + 1e-300;
    let hi = 4.0 * PI / (g * n_p as f64);
    if hi <= lo {
        return invalid("filter too slow for the requested n_p");
    }
    let train_at = |tau: f64| FilteredSquareTrain {
        g,
        tau,
        tau_prime: (tau - t_r - t_p).max(1e-300),
        sigma_f,
        n_p,
    };
    let f = |tau: f64| mean_coupling(&train_at(tau)) * n_p as f64 * tau - 0.5 * PI;
    let tau = bisect(f, lo, hi, 1e-12)?;
    let train = train_at(tau);
    Ok(FilteredTiming { tau, tau_prime: train.tau_prime, rise_time: t_r, g_bar: mean_coupling(&train) })
}

/// Toggling-frame Hamiltonian flavours.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Instantaneous pulses, rotating-wave coupling.
    Ideal,
    /// Instantaneous pulses, coupling keeps the terms oscillating at `2ω_q`.
    CounterRotating,
    /// Rectangular pulses of duration `t_p`.
    FiniteDuration,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ideal" => Ok(Variant::Ideal),
            "counter_rotating" => Ok(Variant::CounterRotating),
            "finite_duration" => Ok(Variant::FiniteDuration),
            _ => invalid(format!("unknown variant '{s}'")),
        }
    }
}

/// Hamiltonian `H(t)` as seen by the propagators.
pub trait TimeDependentHamiltonian: Send + Sync {
    fn dim(&self) -> usize;
    fn at(&self, t: f64) -> CMat;
    /// Constant generator used for one step `[t0, t1]`; the midpoint value by default.
    fn step_generator(&self, t0: f64, t1: f64) -> CMat {
        self.at(0.5 * (t0 + t1))
    }
    /// Points inside `(t0, t1)` where `H` jumps.
    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64>;
    /// True when `H` is constant between breakpoints.
    fn piecewise_constant(&self) -> bool;
    /// True when `step_generator` averages terms too fast to sample pointwise.
    fn averaged_steps(&self) -> bool {
        false
    }
}

/// Time-independent Hamiltonian.
#[derive(Clone, Debug)]
pub struct ConstantHamiltonian(pub CMat);

impl TimeDependentHamiltonian for ConstantHamiltonian {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn at(&self, _t: f64) -> CMat {
        self.0.clone()
    }
    fn breakpoints(&self, _t0: f64, _t1: f64) -> Vec<f64> {
        Vec::new()
    }
    fn piecewise_constant(&self) -> bool {
        true
    }
}

#[derive(Clone, Debug)]
enum Coupling {
    Square(SquareTrain),
    Filtered(FilteredSquareTrain),
}

/// Single-qubit toggling-frame Hamiltonian for one detuning `ξ`.
#[derive(Clone, Debug)]
pub struct TogglingHamiltonian {
    ops: SingleQubitOps,
    co: CMat,
    cr: CMat,
    /// `a†σ₊` and `a†σ₋` (fast parts of the counter-rotating variant).
    ad_sp: CMat,
    ad_sm: CMat,
    disp: CMat,
    xi: f64,
    variant: Variant,
    omega_q: f64,
    sched: PulseSchedule,
    coupling: Coupling,
}

impl TogglingHamiltonian {
    pub fn coupling_at(&self, t: f64) -> f64 {
        match &self.coupling {
            Coupling::Square(s) => {
                if self.variant == Variant::FiniteDuration && self.sched.t_p > 0.0 {
                    let k = self.sched.pulses_before(t);
                    let inside = (0..self.sched.n_p)
                        .any(|m| (t - self.sched.pulse_center(m)).abs() < 0.5 * self.sched.t_p);
                    if inside {
                        return 0.0;
                    }
                    return if k % 2 == 0 { s.g } else { s.g_off };
                }
                s.eval(t)
            }
            Coupling::Filtered(f) => f.eval(t),
        }
    }

    pub fn ops(&self) -> &SingleQubitOps {
        &self.ops
    }

    pub fn schedule(&self) -> &PulseSchedule {
        &self.sched
    }

    fn build(&self, t: f64, fast: C64) -> CMat {
        let o = &self.ops;
        let gt = self.coupling_at(t);
        match self.variant {
            Variant::Ideal | Variant::CounterRotating => {
                let even = self.sched.pulses_before(t) % 2 == 0;
                let s = if even { 1.0 } else { -1.0 };
                let mut h = &o.sz * c(0.5 * s * self.xi);
                let slow = if even { &self.co } else { &self.cr };
                h += slow * c(gt);
                if self.variant == Variant::CounterRotating {
                    let f = if even { &self.ad_sp } else { &self.ad_sm };
                    let term = f * (fast * gt);
                    h += &term + term.adjoint();
                }
                h
            }
            Variant::FiniteDuration => {
                let (_, ct, st) = self.sched.rotation(t);
                let mut h = (&o.sz * c(ct) + &o.sy * c(st)) * c(0.5 * self.xi);
                h += &self.co * c(gt * 0.5 * (1.0 + ct));
                h += &self.cr * c(gt * 0.5 * (1.0 - ct));
                if st != 0.0 {
                    h += &self.disp * c(gt * st);
                }
                h
            }
        }
    }
}

impl TimeDependentHamiltonian for TogglingHamiltonian {
    fn dim(&self) -> usize {
        self.ops.space.dim()
    }

    fn at(&self, t: f64) -> CMat {
        self.build(t, C64::from_polar(1.0, 2.0 * self.omega_q * t))
    }

    /// Counter-rotating terms use their exact step average `e^{2iω t_m} sinc(ω h)`.
    fn step_generator(&self, t0: f64, t1: f64) -> CMat {
        let tm = 0.5 * (t0 + t1);
        if self.variant != Variant::CounterRotating {
            return self.at(tm);
        }
        let x = self.omega_q * (t1 - t0);
        let sinc = if x.abs() < 1e-8 { 1.0 - x * x / 6.0 } else { x.sin() / x };
        self.build(tm, C64::from_polar(sinc, 2.0 * self.omega_q * tm))
    }

    fn breakpoints(&self, t0: f64, t1: f64) -> Vec<f64> {
        self.sched.breakpoints(t0, t1)
    }

    fn averaged_steps(&self) -> bool {
        self.variant == Variant::CounterRotating
    }

    fn piecewise_constant(&self) -> bool {
        matches!(self.coupling, Coupling::Square(_))
            && (self.variant == Variant::Ideal || (self.variant == Variant::FiniteDuration && self.sched.t_p == 0.0))
    }
}

/// Builds `H_T(t)` for one detuning `ξ` on a single-qubit space truncated at `fock_dim`.
pub fn toggling_hamiltonian(
    params: &SystemParams,
    sched: &PulseSchedule,
    variant: Variant,
    xi: f64,
    fock_dim: usize,
) -> Result<TogglingHamiltonian> {
    sched.validate()?;
    let omega_q = match variant {
        Variant::Ideal => {
            if sched.t_p > 0.0 {
                return invalid("ideal variant requires instantaneous pulses (t_p = 0)");
            }
            0.0
        }
        Variant::CounterRotating => {
            if sched.t_p > 0.0 {
                return invalid("counter-rotating variant requires instantaneous pulses (t_p = 0)");
            }
            match params.omega_q {
                Some(w) if w > 0.0 && w.is_finite() => w,
                _ => return invalid("counter-rotating variant requires a finite qubit frequency omega_q"),
            }
        }
        Variant::FiniteDuration => 0.0,
    };
    let ops = SingleQubitOps::new(fock_dim)?;
    let coupling = match sched.sigma_f {
        None => Coupling::Square(SquareTrain { g: params.g, g_off: sched.g_off, tau: sched.tau, n_p: sched.n_p }),
        Some(sf) => Coupling::Filtered(FilteredSquareTrain::new(params.g, sched.tau, sched.tau_prime, sf, sched.n_p)?),
    };
    let co = ops.exchange();
    let cr = ops.counter_exchange();
    let ad_sp = &ops.ad * &ops.sp;
    let ad_sm = &ops.ad * &ops.sm;
    let disp = (&ops.ad - &ops.a) * &ops.sz * (IM * 0.5);
    Ok(TogglingHamiltonian {
        ops,
        co,
        cr,
        ad_sp,
        ad_sm,
        disp,
        xi,
        variant,
        omega_q,
        sched: sched.clone(),
        coupling,
    })
}
