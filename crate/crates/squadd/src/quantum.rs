//! Dense complex-matrix primitives on truncated qubits ⊗ cavity spaces.
//!
//! Basis ordering is fixed: qubits first (qubit 0 is the most significant bit,
//! `|g⟩ = 0`, `|e⟩ = 1`), cavity Fock index fastest. For one qubit the index of
//! `|q, n⟩` is `q * fock_dim + n`.
//!
//! Superoperators act on column-stacked density matrices:
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::evd;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = nalgebra::DVector<C64>;

pub const IM: C64 = C64::new(0.0, 1.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const ZERO: C64 = C64::new(0.0, 0.0);

#[inline]
pub fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Truncated Hilbert space `(C²)^{⊗n_qubits} ⊗ C^{fock_dim}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HilbertSpec {
    n_qubits: usize,
    fock_dim: usize,
}

impl HilbertSpec {
    pub fn new(n_qubits: usize, fock_dim: usize) -> Result<Self> {
        if n_qubits == 0 {
            return invalid("n_qubits must be positive");
        }
        if fock_dim < 2 {
            return invalid(format!("fock_dim must be >= 2, got {fock_dim}"));
        }
        if n_qubits > 16 {
            return invalid("dense representation limited to 16 qubits");
        }
        Ok(Self { n_qubits, fock_dim })
    }

    /// One qubit coupled to a cavity truncated at `fock_dim`.
    pub fn single(fock_dim: usize) -> Result<Self> {
        Self::new(1, fock_dim)
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn qubit_dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.qubit_dim() * self.fock_dim
    }

    /// Basis index of `|qubits⟩|n⟩`, `qubits` read as a bit string with qubit 0 most significant.
    pub fn index(&self, qubits: usize, n: usize) -> usize {
        debug_assert!(qubits < self.qubit_dim() && n < self.fock_dim);
        qubits * self.fock_dim + n
    }

    pub fn basis_ket(&self, qubits: usize, n: usize) -> CVec {
        let mut v = CVec::zeros(self.dim());
        v[self.index(qubits, n)] = ONE;
        v
    }
}

/// Names accepted by [`build_canonical`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpName {
    A,
    ADagger,
    SigmaMinus(usize),
    SigmaPlus(usize),
    SigmaX(usize),
    SigmaY(usize),
    SigmaZ(usize),
    Identity,
    NEx,
}

impl std::str::FromStr for OpName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let simple = match s {
            "a" => Some(OpName::A),
            "a_dagger" => Some(OpName::ADagger),
            "identity" => Some(OpName::Identity),
            "n_ex" => Some(OpName::NEx),
            _ => None,
        };
        if let Some(op) = simple {
            return Ok(op);
        }
        let (head, idx) = match s.find('(') {
            Some(p) if s.ends_with(')') => {
                let idx: usize = s[p + 1..s.len() - 1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidInput(format!("bad qubit index in '{s}'")))?;
                (&s[..p], idx)
            }
            _ => (s, 0),
        };
        match head {
            "sigma_minus" => Ok(OpName::SigmaMinus(idx)),
            "sigma_plus" => Ok(OpName::SigmaPlus(idx)),
            "sigma_x" => Ok(OpName::SigmaX(idx)),
            "sigma_y" => Ok(OpName::SigmaY(idx)),
            "sigma_z" => Ok(OpName::SigmaZ(idx)),
            _ => invalid(format!("unknown operator name '{s}'")),
        }
    }
}

/// Dense operator bound to a Hilbert space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    pub space: HilbertSpec,
    pub matrix: CMat,
}

impl Operator {
    pub fn new(space: HilbertSpec, matrix: CMat) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return invalid(format!(
                "matrix is {}x{}, space dimension is {d}",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        Ok(Self { space, matrix })
    }

    pub fn zeros(space: HilbertSpec) -> Self {
        Self { space, matrix: CMat::zeros(space.dim(), space.dim()) }
    }

    pub fn dagger(&self) -> Self {
        Self { space: self.space, matrix: self.matrix.adjoint() }
    }

    pub fn commutator(&self, other: &Operator) -> CMat {
        commutator(&self.matrix, &other.matrix)
    }

    pub fn is_hermitian(&self, rel_tol: f64) -> bool {
        is_hermitian(&self.matrix, rel_tol)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { space: self.space, matrix: self.matrix.map(|z| z * s) }
    }
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn identity(d: usize) -> CMat {
    CMat::identity(d, d)
}

/// Relative Frobenius Hermiticity test; the zero matrix is Hermitian.
pub fn is_hermitian(m: &CMat, rel_tol: f64) -> bool {
    if m.nrows() != m.ncols() {
        return false;
    }
    let n = m.norm();
    let dev = (m - m.adjoint()).norm();
    dev <= rel_tol * n.max(f64::MIN_POSITIVE)
}

/// Cavity annihilation operator truncated at `fock_dim`.
pub fn annihilation(fock_dim: usize) -> CMat {
    let mut a = CMat::zeros(fock_dim, fock_dim);
    for n in 1..fock_dim {
        a[(n - 1, n)] = c((n as f64).sqrt());
    }
    a
}

/// `σ₋ = |g⟩⟨e|` on one qubit.
pub fn sigma_minus_2() -> CMat {
    let mut m = CMat::zeros(2, 2);
    m[(0, 1)] = ONE;
    m
}

pub fn sigma_z_2() -> CMat {
    let mut m = CMat::zeros(2, 2);
    m[(0, 0)] = c(-1.0);
    m[(1, 1)] = ONE;
    m
}

fn embed_qubit(space: &HilbertSpec, q: usize, op2: &CMat) -> CMat {
    let left = identity(1 << q);
    let right = identity(1 << (space.n_qubits - 1 - q));
    kron(&kron(&kron(&left, op2), &right), &identity(space.fock_dim))
}

fn embed_cavity(space: &HilbertSpec, op: &CMat) -> CMat {
    kron(&identity(space.qubit_dim()), op)
}

/// Builds a named operator in the fixed tensor ordering.
pub fn build_canonical(space: HilbertSpec, which: OpName) -> Result<Operator> {
    let check = |q: usize| -> Result<()> {
        if q >= space.n_qubits {
            invalid(format!("qubit index {q} out of range for {} qubits", space.n_qubits))
        } else {
            Ok(())
        }
    };
    let sm = sigma_minus_2();
    let sp = sm.adjoint();
    let m = match which {
        OpName::A => embed_cavity(&space, &annihilation(space.fock_dim)),
        OpName::ADagger => embed_cavity(&space, &annihilation(space.fock_dim).adjoint()),
        OpName::SigmaMinus(q) => {
            check(q)?;
            embed_qubit(&space, q, &sm)
        }
        OpName::SigmaPlus(q) => {
            check(q)?;
            embed_qubit(&space, q, &sp)
        }
        OpName::SigmaX(q) => {
            check(q)?;
            embed_qubit(&space, q, &(&sp + &sm))
        }
        OpName::SigmaY(q) => {
            check(q)?;
            embed_qubit(&space, q, &((&sp - &sm) * (-IM)))
        }
        OpName::SigmaZ(q) => {
            check(q)?;
            embed_qubit(&space, q, &sigma_z_2())
        }
        OpName::Identity => identity(space.dim()),
        OpName::NEx => {
            let a = annihilation(space.fock_dim);
            let mut n = embed_cavity(&space, &(a.adjoint() * &a));
            let pe = &sp * &sm;
            for q in 0..space.n_qubits {
                n += embed_qubit(&space, q, &pe);
            }
            n
        }
    };
    Operator::new(space, m)
}

/// Shorthand for the operators of a single-qubit space, all as plain matrices.
#[derive(Clone, Debug)]
pub struct SingleQubitOps {
    pub space: HilbertSpec,
    pub a: CMat,
    pub ad: CMat,
    pub sm: CMat,
    pub sp: CMat,
    pub sx: CMat,
    pub sy: CMat,
    pub sz: CMat,
    pub id: CMat,
}

impl SingleQubitOps {
    pub fn new(fock_dim: usize) -> Result<Self> {
        let space = HilbertSpec::single(fock_dim)?;
        let get = |w| build_canonical(space, w).map(|o| o.matrix);
        Ok(Self {
            space,
            a: get(OpName::A)?,
            ad: get(OpName::ADagger)?,
            sm: get(OpName::SigmaMinus(0))?,
            sp: get(OpName::SigmaPlus(0))?,
            sx: get(OpName::SigmaX(0))?,
            sy: get(OpName::SigmaY(0))?,
            sz: get(OpName::SigmaZ(0))?,
            id: identity(space.dim()),
        })
    }

    /// Co-rotating exchange `a†σ₋ + aσ₊`.
    pub fn exchange(&self) -> CMat {
        &self.ad * &self.sm + &self.a * &self.sp
    }

    /// Counter-rotating exchange `a†σ₊ + aσ₋`.
    pub fn counter_exchange(&self) -> CMat {
        &self.ad * &self.sp + &self.a * &self.sm
    }
}

/// `exp(-i H t)` for Hermitian `H` via eigendecomposition.
pub fn expm_hermitian(h: &Operator, t: f64) -> Result<Operator> {
    if !h.is_hermitian(1e-10) {
        return invalid("expm_hermitian requires a Hermitian operator");
    }
    Ok(Operator { space: h.space, matrix: expm_hermitian_mat(&h.matrix, t) })
}

/// Eigenvalues (ascending) and eigenvectors of the Hermitian part of `h`.
///
/// Uses faer: nalgebra 0.33's symmetric eigensolver returns wrong eigenvectors when the
/// tridiagonal form has zero off-diagonal entries. `None` if the solver fails.
pub fn hermitian_eigen(h: &CMat) -> Option<(Vec<f64>, CMat)> {
    let n = h.nrows();
    let a = faer::Mat::<C64>::from_fn(n, n, |i, j| 0.5 * (h[(i, j)] + h[(j, i)].conj()));
    let mut u = faer::Mat::<C64>::zeros(n, n);
    let mut d = faer::diag::Diag::<C64>::zeros(n);
    let par = faer::Par::Seq;
    let req = evd::self_adjoint_evd_scratch::<C64>(n, evd::ComputeEigenvectors::Yes, par, Default::default());
    let mut buf = MemBuffer::new(req);
    evd::self_adjoint_evd(a.as_ref(), d.as_mut(), Some(u.as_mut()), par, MemStack::new(&mut buf), Default::default())
        .ok()?;
    let vals = d.column_vector().iter().map(|x| x.re).collect();
    Some((vals, CMat::from_fn(n, n, |i, j| u[(i, j)])))
}

/// Eigenvalues of the Hermitian part of `h`, ascending; `-∞` entries if the solver fails.
pub fn hermitian_eigenvalues(h: &CMat) -> Vec<f64> {
    match hermitian_eigen(h) {
        Some((v, _)) => v,
        None => vec![f64::NEG_INFINITY; h.nrows()],
    }
}

/// Eigenvalues of a real symmetric matrix, ascending.
pub fn symmetric_eigenvalues(h: &DMatrix<f64>) -> Vec<f64> {
    let n = h.nrows();
    let a = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
    a.self_adjoint_eigenvalues(faer::Side::Lower).unwrap_or_else(|_| vec![f64::NAN; n])
}

/// Unchecked `exp(-i H t)` for a Hermitian matrix.
pub fn expm_hermitian_mat(h: &CMat, t: f64) -> CMat {
    let n = h.nrows();
    if n == 0 {
        return h.clone();
    }
    let Some((vals, v)) = hermitian_eigen(h) else {
        return expm(&(h * C64::new(0.0, -t)));
    };
    let mut vd = v.clone();
    for (j, lam) in vals.iter().enumerate() {
        let mut col = vd.column_mut(j);
        col *= C64::from_polar(1.0, -lam * t);
    }
    vd * v.adjoint()
}

/// General matrix exponential (scaling and squaring with Padé approximants).
pub fn expm(m: &CMat) -> CMat {
    m.exp()
}

/// `exp(L t)` for a superoperator acting on column-stacked `d × d` matrices.
pub fn expm_superoperator(l: &CMat, t: f64) -> Result<CMat> {
    if l.nrows() != l.ncols() {
        return invalid("superoperator must be square");
    }
    let d = (l.nrows() as f64).sqrt().round() as usize;
    if d * d != l.nrows() {
        return invalid(format!("superoperator dimension {} is not a square", l.nrows()));
    }
    Ok(expm(&(l * c(t))))
}

/// Column-stacking vectorization.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

pub fn unvectorize(v: &CVec) -> CMat {
    let d = (v.len() as f64).sqrt().round() as usize;
    CMat::from_column_slice(d, d, v.as_slice())
}

/// Row vector `t` with `t · vec(X) = tr(A X)`.
pub fn trace_functional(a: &CMat) -> CVec {
    vectorize(&a.transpose())
}

/// `X ↦ A X` as a superoperator.
pub fn spre(a: &CMat) -> CMat {
    kron(&identity(a.nrows()), a)
}

/// `X ↦ X B` as a superoperator.
pub fn spost(b: &CMat) -> CMat {
    kron(&b.transpose(), &identity(b.nrows()))
}

/// `X ↦ -i[H, X]`.
pub fn hamiltonian_super(h: &CMat) -> CMat {
    (spre(h) - spost(h)) * (-IM)
}

/// `D[c] X = c X c† - ½{c†c, X}`.
pub fn dissipator(cop: &CMat) -> CMat {
    let d = cop.nrows();
    let n = cop.adjoint() * cop;
    kron(&cop.conjugate(), cop) - (kron(&identity(d), &n) + kron(&n.transpose(), &identity(d))) * c(0.5)
}

/// Density matrix on a declared space; construction validates trace, Hermiticity and positivity.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    pub space: HilbertSpec,
    pub matrix: CMat,
}

pub const TRACE_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = -1e-8;

impl DensityMatrix {
    pub fn new(space: HilbertSpec, matrix: CMat) -> Result<Self> {
        Operator::new(space, matrix.clone())?;
        let dm = Self { space, matrix };
        dm.validate(TRACE_TOL, HERMITIAN_TOL, POSITIVITY_TOL)?;
        Ok(dm)
    }

    pub fn from_ket(space: HilbertSpec, psi: &CVec) -> Result<Self> {
        let n = psi.norm();
        if n == 0.0 || psi.len() != space.dim() {
            return invalid("ket must be nonzero with the space dimension");
        }
        let p = psi / c(n);
        Self::new(space, &p * p.adjoint())
    }

    /// Checks trace, Hermiticity (absolute Frobenius) and smallest eigenvalue.
    pub fn validate(&self, trace_tol: f64, herm_tol: f64, pos_tol: f64) -> Result<()> {
        let tr = self.matrix.trace();
        if (tr - ONE).norm() > trace_tol {
            return Err(Error::NumericalConsistency(format!("trace {tr} differs from 1")));
        }
        let dev = (&self.matrix - self.matrix.adjoint()).norm();
        if dev > herm_tol {
            return Err(Error::NumericalConsistency(format!("non-Hermitian density matrix ({dev:e})")));
        }
        let min = self.min_eigenvalue();
        if min < pos_tol {
            return Err(Error::NumericalConsistency(format!("negative eigenvalue {min:e}")));
        }
        Ok(())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let h = (&self.matrix + self.matrix.adjoint()) * c(0.5);
        hermitian_eigenvalues(&h)[0]
    }

    pub fn expectation(&self, op: &CMat) -> C64 {
        (op * &self.matrix).trace()
    }

    /// Reduced cavity state (partial trace over all qubits).
    pub fn cavity_state(&self) -> CMat {
        partial_trace_qubits(&self.space, &self.matrix)
    }
}

pub fn partial_trace_qubits(space: &HilbertSpec, rho: &CMat) -> CMat {
    let f = space.fock_dim;
    let mut out = CMat::zeros(f, f);
    for q in 0..space.qubit_dim() {
        out += rho.view((q * f, q * f), (f, f));
    }
    out
}

/// Truncated coherent state `|α⟩` (not renormalized).
pub fn coherent_state(fock_dim: usize, alpha: C64) -> CVec {
    let mut v = CVec::zeros(fock_dim);
    let mut term = C64::from_polar((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..fock_dim {
        v[n] = term;
        term = term * alpha / c(((n + 1) as f64).sqrt());
    }
    v
}

/// Raises the Fock truncation by one from `start` until the observable changes by less than `tol`.
/// Returns the value at the accepted truncation together with that truncation.
pub fn converge_fock<F>(start: usize, max: usize, tol: f64, mut f: F) -> Result<(f64, usize)>
where
    F: FnMut(usize) -> Result<f64>,
{
    let mut fd = start.max(2);
    let mut prev = f(fd)?;
    while fd < max {
        let next = f(fd + 1)?;
        if (next - prev).abs() < tol {
            return Ok((prev, fd));
        }
        fd += 1;
        prev = next;
    }
    Err(Error::NonConvergence(format!(
        "Fock truncation not converged to {tol:e} up to fock_dim = {fd}"
    )))
}
