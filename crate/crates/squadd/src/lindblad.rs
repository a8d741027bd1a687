//! Master-equation propagation, channel fidelities and regression correlators.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::pulses::{toggling_hamiltonian, PulseSchedule, TimeDependentHamiltonian, Variant};
use crate::quadrature::{gaussian_expectation_converged, GaussControl};
use crate::quantum::{
    c, converge_fock, dissipator, expm, expm_hermitian_mat, hamiltonian_super, identity, spre, trace_functional,
    unvectorize, vectorize, CMat, CVec, DensityMatrix, HilbertSpec, C64, IM,
};
use crate::transfer::SystemParams;

/// `ℒ(t)X = -i[H(t), X] + κ D[a] X`.
pub struct Liouvillian<'a> {
    pub hamiltonian: &'a dyn TimeDependentHamiltonian,
    pub kappa: f64,
    damping: CMat,
}

impl<'a> Liouvillian<'a> {
    /// `collapse` is the cavity annihilation operator on the Hamiltonian's space.
    pub fn new(hamiltonian: &'a dyn TimeDependentHamiltonian, kappa: f64, collapse: &CMat) -> Result<Self> {
        if !(kappa >= 0.0) {
            return invalid("kappa must be non-negative");
        }
        if collapse.nrows() != hamiltonian.dim() {
            return invalid("collapse operator and Hamiltonian dimensions differ");
        }
        Ok(Self { hamiltonian, kappa, damping: dissipator(collapse) * c(kappa) })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn at(&self, t: f64) -> CMat {
        hamiltonian_super(&self.hamiltonian.at(t)) + &self.damping
    }

    fn step(&self, method: StepMethod, t0: f64, t1: f64) -> CMat {
        step_factor(
            method,
            t0,
            t1,
            |t| self.at(t),
            || hamiltonian_super(&self.hamiltonian.step_generator(t0, t1)) + &self.damping,
            expm,
        )
    }

    /// `‖vec(𝟙)ᵀ ℒ(t)‖`, zero for a trace-preserving generator.
    pub fn trace_residual(&self, t: f64) -> f64 {
        (trace_functional(&identity(self.dim())).transpose() * self.at(t)).norm()
    }
}

/// Linear map on column-stacked density matrices over `[t0, t1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub matrix: CMat,
    pub t0: f64,
    pub t1: f64,
}

impl Channel {
    pub fn dim(&self) -> usize {
        (self.matrix.nrows() as f64).sqrt().round() as usize
    }

    /// Unitary conjugation `X ↦ U X U†`.
    pub fn from_unitary(u: &CMat, t0: f64, t1: f64) -> Self {
        Self { matrix: crate::quantum::kron(&u.conjugate(), u), t0, t1 }
    }

    pub fn apply(&self, rho: &CMat) -> CMat {
        unvectorize(&(&self.matrix * vectorize(rho)))
    }

    /// `later ∘ self`.
    pub fn then(&self, later: &Channel) -> Channel {
        Channel { matrix: &later.matrix * &self.matrix, t0: self.t0, t1: later.t1 }
    }

    /// `‖vec(𝟙)ᵀ M - vec(𝟙)ᵀ‖`.
    pub fn trace_residual(&self) -> f64 {
        let t = trace_functional(&identity(self.dim())).transpose();
        (&t * &self.matrix - &t).norm()
    }

    /// Choi matrix `Σ |i⟩⟨j| ⊗ M(|i⟩⟨j|)`.
    pub fn choi(&self) -> CMat {
        let d = self.dim();
        CMat::from_fn(d * d, d * d, |r, s| {
            let (i, k) = (r / d, r % d);
            let (j, l) = (s / d, s % d);
            self.matrix[(l * d + k, j * d + i)]
        })
    }

    pub fn choi_min_eigenvalue(&self) -> f64 {
        let ch = self.choi();
        let h = (&ch + ch.adjoint()) * c(0.5);
        crate::quantum::hermitian_eigenvalues(&h)[0]
    }

    /// Trace preservation within `1e-9`, Choi eigenvalues above `-1e-7`.
    pub fn validate(&self) -> Result<()> {
        let tr = self.trace_residual();
        if tr > 1e-9 {
            return Err(Error::NumericalConsistency(format!("channel trace residual {tr:e}")));
        }
        let m = self.choi_min_eigenvalue();
        if m < -1e-7 {
            return Err(Error::NumericalConsistency(format!("Choi eigenvalue {m:e}")));
        }
        Ok(())
    }
}

/// One-step rule for smooth generators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMethod {
    /// Midpoint rule unless the Hamiltonian asks for averaged steps.
    #[default]
    Auto,
    /// `exp(h A(t_m))` with `A` from `step_generator`; second order.
    Midpoint,
    /// Two-exponential commutator-free Magnus rule at the Gauss points; fourth order.
    Magnus4,
}

/// Step control for smooth generators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub method: StepMethod,
    /// Initial steps per smooth segment.
    pub initial_steps: usize,
    /// Accept when successive halvings change the result by less than this (Frobenius).
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { method: StepMethod::Auto, initial_steps: 4, tol: 1e-8, max_halvings: 12 }
    }
}

const CF4_NODE: f64 = 0.288_675_134_594_812_9; // √3/6
const CF4_HI: f64 = 0.25 + CF4_NODE;
const CF4_LO: f64 = 0.25 - CF4_NODE;

/// Resolves `Auto` for a given Hamiltonian.
fn resolve(method: StepMethod, h: &dyn TimeDependentHamiltonian) -> StepMethod {
    match method {
        StepMethod::Auto if h.averaged_steps() => StepMethod::Midpoint,
        StepMethod::Auto => StepMethod::Magnus4,
        m => m,
    }
}

/// One step of `Ẏ = A(t)Y` given `A` as a function of time.
fn step_factor<A, E>(method: StepMethod, t0: f64, t1: f64, a: A, mid: impl Fn() -> CMat, exp: E) -> CMat
where
    A: Fn(f64) -> CMat,
    E: Fn(&CMat) -> CMat,
{
    let h = t1 - t0;
    match method {
        StepMethod::Magnus4 => {
            let a1 = a(t0 + (0.5 - CF4_NODE) * h);
            let a2 = a(t0 + (0.5 + CF4_NODE) * h);
            let first = exp(&((&a1 * c(CF4_HI) + &a2 * c(CF4_LO)) * c(h)));
            let second = exp(&((&a1 * c(CF4_LO) + &a2 * c(CF4_HI)) * c(h)));
            second * first
        }
        _ => exp(&(mid() * c(h))),
    }
}

/// `exp(M)` for anti-Hermitian `M = -iHh`.
fn expm_anti_hermitian(m: &CMat) -> CMat {
    expm_hermitian_mat(&(m * IM), 1.0)
}

fn segment_edges(h: &dyn TimeDependentHamiltonian, t0: f64, t1: f64) -> Vec<f64> {
    let mut e = vec![t0];
    e.extend(h.breakpoints(t0, t1));
    e.push(t1);
    e
}

/// Ordered product of step factors, `n` equal steps per segment.
fn product<F: Fn(f64, f64) -> CMat>(edges: &[f64], n: usize, dim: usize, step: &F) -> CMat {
    let mut out = identity(dim);
    for w in edges.windows(2) {
        let h = (w[1] - w[0]) / n as f64;
        for k in 0..n {
            let a = w[0] + k as f64 * h;
            let b = if k + 1 == n { w[1] } else { a + h };
            out = step(a, b) * out;
        }
    }
    out
}

/// Propagator built from `step`, halving the step until converged. Returns `(matrix, halvings)`.
fn adaptive<F, G>(edges: &[f64], exact: bool, dim: usize, policy: StepPolicy, step: F, change: G) -> Result<(CMat, usize)>
where
    F: Fn(f64, f64) -> CMat,
    G: Fn(&CMat, &CMat) -> f64,
{
    if exact {
        return Ok((product(edges, 1, dim, &step), 0));
    }
    let mut n = policy.initial_steps.max(1);
    let mut cur = product(edges, n, dim, &step);
    for k in 1..=policy.max_halvings {
        n *= 2;
        let next = product(edges, n, dim, &step);
        let d = change(&next, &cur);
        cur = next;
        if d < policy.tol {
            return Ok((cur, k));
        }
    }
    Err(Error::NonConvergence(format!(
        "step halving not converged to {:e} after {} halvings",
        policy.tol, policy.max_halvings
    )))
}

/// Time-ordered solution of `V̇ = ℒ(t)V` on `[t0, t1]`.
pub fn propagate(l: &Liouvillian, t0: f64, t1: f64, policy: StepPolicy) -> Result<Channel> {
    if !(t1 > t0) {
        return invalid("need t1 > t0");
    }
    let edges = segment_edges(l.hamiltonian, t0, t1);
    let d = l.dim();
    let method = resolve(policy.method, l.hamiltonian);
    let (m, _) = adaptive(
        &edges,
        l.hamiltonian.piecewise_constant(),
        d * d,
        policy,
        |a, b| l.step(method, a, b),
        |x, y| (x - y).norm(),
    )?;
    Ok(Channel { matrix: m, t0, t1 })
}

/// `U(t1, t0)` for a closed system, same stepping as [`propagate`].
pub fn propagate_unitary(h: &dyn TimeDependentHamiltonian, t0: f64, t1: f64, policy: StepPolicy) -> Result<CMat> {
    propagate_unitary_by(h, t0, t1, policy, |x, y| (x - y).norm()).map(|(u, _)| u)
}

fn propagate_unitary_by<G: Fn(&CMat, &CMat) -> f64>(
    h: &dyn TimeDependentHamiltonian,
    t0: f64,
    t1: f64,
    policy: StepPolicy,
    change: G,
) -> Result<(CMat, usize)> {
    if !(t1 > t0) {
        return invalid("need t1 > t0");
    }
    let edges = segment_edges(h, t0, t1);
    let method = resolve(policy.method, h);
    adaptive(
        &edges,
        h.piecewise_constant(),
        h.dim(),
        policy,
        |a, b| step_factor(method, a, b, |t| h.at(t) * (-IM), || h.step_generator(a, b) * (-IM), expm_anti_hermitian),
        change,
    )
}

/// The six axial states of the logical Bloch sphere spanned by `basis`.
fn axial_states(basis: [&CVec; 2]) -> [CVec; 6] {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let (z0, z1) = (basis[0], basis[1]);
    [
        z0.clone(),
        z1.clone(),
        (z0 + z1) * c(s),
        (z0 - z1) * c(s),
        (z0 + z1 * IM) * c(s),
        (z0 - z1 * IM) * c(s),
    ]
}

fn check_basis(basis: [&CVec; 2]) -> Result<()> {
    let g = |a: &CVec, b: &CVec| a.dotc(b);
    if (g(basis[0], basis[0]).re - 1.0).abs() > 1e-10
        || (g(basis[1], basis[1]).re - 1.0).abs() > 1e-10
        || g(basis[0], basis[1]).norm() > 1e-10
    {
        return invalid("logical basis states must be orthonormal");
    }
    Ok(())
}

/// Average of `⟨ψ|U₀† M(|ψ⟩⟨ψ|) U₀|ψ⟩` over the six axial logical states.
pub fn channel_average_fidelity(m: &Channel, u0: &CMat, basis: [&CVec; 2]) -> Result<f64> {
    check_basis(basis)?;
    let mut f = 0.0;
    for psi in axial_states(basis) {
        let out = m.apply(&(&psi * psi.adjoint()));
        let phi = u0 * &psi;
        f += (phi.adjoint() * out * &phi)[(0, 0)].re;
    }
    Ok(f / 6.0)
}

/// Closed-system version of [`channel_average_fidelity`].
pub fn unitary_average_fidelity(u: &CMat, u0: &CMat, basis: [&CVec; 2]) -> Result<f64> {
    check_basis(basis)?;
    Ok(axial_states(basis).iter().map(|psi| (u0 * psi).dotc(&(u * psi)).norm_sqr()).sum::<f64>() / 6.0)
}

/// Logical states `|g0⟩, |e0⟩` and the target map `|g0⟩ ↦ |g0⟩`, `|e0⟩ ↦ -i|g1⟩`.
pub fn transfer_target(space: HilbertSpec) -> (CVec, CVec, CMat) {
    let g0 = space.basis_ket(0, 0);
    let e0 = space.basis_ket(1, 0);
    let g1 = space.basis_ket(0, 1);
    let mut u0 = CMat::zeros(space.dim(), space.dim());
    u0.set_column(space.index(0, 0), &g0);
    u0.set_column(space.index(1, 0), &(g1 * (-IM)));
    (g0, e0, u0)
}

/// Options of [`transfer_fidelity_master_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterOptions {
    pub gauss: GaussControl,
    pub step: StepPolicy,
    /// Fixed truncation; `None` chooses automatically.
    pub fock_dim: Option<usize>,
    pub fock_max: usize,
    pub fock_tol: f64,
}

impl Default for MasterOptions {
    fn default() -> Self {
        Self {
            gauss: GaussControl::default(),
            step: StepPolicy { tol: 1e-9, ..StepPolicy::default() },
            fock_dim: None,
            fock_max: 16,
            fock_tol: 1e-7,
        }
    }
}

/// Result of a master-equation transfer run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MasterResult {
    pub fidelity: f64,
    pub gauss_nodes: usize,
    pub fock_dim: usize,
}

/// Whether the dynamics leave the `N_ex ≤ 1` sector, requiring a truncation check.
pub fn leaves_single_excitation(sched: &PulseSchedule, variant: Variant) -> bool {
    variant == Variant::CounterRotating
        || sched.g_off > 0.0
        || (variant == Variant::FiniteDuration && sched.t_p > 0.0 && sched.sigma_f.is_some())
}

pub fn matrix_power(m: &CMat, mut k: usize) -> CMat {
    let mut base = m.clone();
    let mut acc = identity(m.nrows());
    while k > 0 {
        if k & 1 == 1 {
            acc = &base * &acc;
        }
        base = &base * &base;
        k >>= 1;
    }
    acc
}

/// Fidelity at one detuning `ξ` on a fixed truncation.
pub fn transfer_fidelity_master_at(
    params: &SystemParams,
    sched: &PulseSchedule,
    variant: Variant,
    xi: f64,
    fock_dim: usize,
    step: StepPolicy,
) -> Result<f64> {
    let h = toggling_hamiltonian(params, sched, variant, xi, fock_dim)?;
    let space = h.ops().space;
    let (g0, e0, u0) = transfer_target(space);
    let basis = [&g0, &e0];
    let t_f = sched.t_f();
    let ideal_square = variant == Variant::Ideal && sched.sigma_f.is_none();
    if params.kappa == 0.0 {
        let u = if ideal_square {
            let tau = sched.tau;
            let he = h.at(0.25 * tau);
            let ho = h.at(tau);
            let half = expm_hermitian_mat(&he, 0.5 * tau);
            let period = &half * expm_hermitian_mat(&ho, tau) * &half;
            matrix_power(&period, sched.n_p / 2)
        } else {
            propagate_unitary_by(&h, 0.0, t_f, step, |x, y| {
                (unitary_average_fidelity(x, &u0, basis).unwrap_or(0.0)
                    - unitary_average_fidelity(y, &u0, basis).unwrap_or(0.0))
                .abs()
            })?
            .0
        };
        return unitary_average_fidelity(&u, &u0, basis);
    }
    let l = Liouvillian::new(&h, params.kappa, &h.ops().a)?;
    let ch = if ideal_square {
        let tau = sched.tau;
        let half = expm(&(l.at(0.25 * tau) * c(0.5 * tau)));
        let period = &half * expm(&(l.at(tau) * c(tau))) * &half;
        Channel { matrix: matrix_power(&period, sched.n_p / 2), t0: 0.0, t1: t_f }
    } else {
        let edges = segment_edges(&h, 0.0, t_f);
        let d = space.dim();
        let fid = |m: &CMat| {
            channel_average_fidelity(&Channel { matrix: m.clone(), t0: 0.0, t1: t_f }, &u0, basis).unwrap_or(0.0)
        };
        let method = resolve(step.method, &h);
        let (m, _) = adaptive(&edges, h.piecewise_constant(), d * d, step, |a, b| l.step(method, a, b), |x, y| {
            (fid(x) - fid(y)).abs()
        })?;
        Channel { matrix: m, t0: 0.0, t1: t_f }
    };
    channel_average_fidelity(&ch, &u0, basis)
}

/// Gaussian-averaged transfer fidelity from the master equation.
pub fn transfer_fidelity_master(params: &SystemParams, sched: &PulseSchedule, variant: Variant) -> Result<f64> {
    transfer_fidelity_master_with(params, sched, variant, MasterOptions::default()).map(|r| r.fidelity)
}

pub fn transfer_fidelity_master_with(
    params: &SystemParams,
    sched: &PulseSchedule,
    variant: Variant,
    opts: MasterOptions,
) -> Result<MasterResult> {
    sched.validate()?;
    let avg = |fock: usize| -> Result<(f64, usize)> {
        gaussian_expectation_converged(params.delta_xi, opts.gauss, |xi| {
            transfer_fidelity_master_at(params, sched, variant, xi, fock, opts.step)
        })
    };
    if let Some(f) = opts.fock_dim {
        let (fidelity, gauss_nodes) = avg(f)?;
        return Ok(MasterResult { fidelity, gauss_nodes, fock_dim: f });
    }
    if !leaves_single_excitation(sched, variant) {
        let (fidelity, gauss_nodes) = avg(2)?;
        return Ok(MasterResult { fidelity, gauss_nodes, fock_dim: 2 });
    }
    let start = if variant == Variant::CounterRotating { 4 } else { 3 };
    let nodes = std::cell::Cell::new(0);
    let (fidelity, fock_dim) = converge_fock(start, opts.fock_max, opts.fock_tol, |f| {
        let (v, n) = avg(f)?;
        nodes.set(n);
        Ok(v)
    })?;
    Ok(MasterResult { fidelity, gauss_nodes: nodes.get(), fock_dim })
}

/// Transfer fidelity without pulses: constant coupling `g` for a time `t`, averaged over `ξ`.
pub fn transfer_fidelity_free(params: &SystemParams, t: f64, gauss: GaussControl) -> Result<f64> {
    if !(t >= 0.0) {
        return invalid("t must be non-negative");
    }
    let space = HilbertSpec::single(2)?;
    let o = crate::quantum::SingleQubitOps::new(2)?;
    let (g0, e0, u0) = transfer_target(space);
    let kappa = params.kappa;
    let (f, _) = gaussian_expectation_converged(params.delta_xi, gauss, |xi| {
        let h = crate::pulses::even_hamiltonian(&o, params.g, xi);
        if kappa == 0.0 {
            unitary_average_fidelity(&expm_hermitian_mat(&h, t), &u0, [&g0, &e0])
        } else {
            let l = hamiltonian_super(&h) + dissipator(&o.a) * c(kappa);
            let ch = Channel { matrix: expm(&(l * c(t))), t0: 0.0, t1: t };
            channel_average_fidelity(&ch, &u0, [&g0, &e0])
        }
    })?;
    Ok(f)
}

/// `⟨A(t1+t2) B(t1)⟩ = tr[A V(t2)(B V(t1)ρ₀)]` for a time-independent generator.
pub fn correlation(l: &CMat, a: &CMat, b: &CMat, rho0: &DensityMatrix, t1: f64, t2: f64) -> Result<C64> {
    if !(t1 >= 0.0) || !(t2 >= 0.0) {
        return invalid("times must be non-negative");
    }
    let d = rho0.matrix.nrows();
    if l.nrows() != d * d || a.nrows() != d || b.nrows() != d {
        return invalid("dimension mismatch");
    }
    let v1 = expm(&(l * c(t1)));
    let v2 = expm(&(l * c(t2)));
    let x = &v2 * (spre(b) * (&v1 * vectorize(&rho0.matrix)));
    Ok((trace_functional(a).transpose() * x)[(0, 0)])
}
