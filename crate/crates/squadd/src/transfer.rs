//! Single-qubit state transfer under ideal SQUADD: the one-period rotation,
//! the exact Gaussian-averaged fidelity and closed-form error laws.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{gaussian_expectation_converged, GaussControl};
use crate::quantum::{c, C64, IM};

/// Physical constants of one qubit–cavity instance (rad/s).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub g: f64,
    /// Standard deviation of the static Gaussian detuning.
    pub delta_xi: f64,
    pub kappa: f64,
    /// Qubit frequency; only the counter-rotating variant needs it.
    pub omega_q: Option<f64>,
}

impl SystemParams {
    pub fn new(g: f64, delta_xi: f64, kappa: f64) -> Result<Self> {
        if !(g > 0.0) || !g.is_finite() {
            return invalid("g must be positive");
        }
        if !(delta_xi >= 0.0) || !(kappa >= 0.0) {
            return invalid("delta_xi and kappa must be non-negative");
        }
        Ok(Self { g, delta_xi, kappa, omega_q: None })
    }

    /// Uses the dimensionless product `g T₂*`, with `Δξ = √2/T₂*`.
    pub fn from_g_t2_star(g: f64, g_t2_star: f64, kappa: f64) -> Result<Self> {
        if !(g_t2_star > 0.0) {
            return invalid("g T2* must be positive");
        }
        Self::new(g, SQRT_2 * g / g_t2_star, kappa)
    }

    pub fn with_omega_q(mut self, omega_q: f64) -> Self {
        self.omega_q = Some(omega_q);
        self
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn with_delta_xi(mut self, delta_xi: f64) -> Self {
        self.delta_xi = delta_xi;
        self
    }

    pub fn t2_star(&self) -> Option<f64> {
        (self.delta_xi > 0.0).then(|| SQRT_2 / self.delta_xi)
    }
}

/// One period `U₁ = cos(ϑ/2) - i sin(ϑ/2) v̂·σ` in the `{|e0⟩, |g1⟩}` pseudospin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodRotation {
    pub theta: f64,
    pub v_x: f64,
    pub v_z: f64,
}

impl PeriodRotation {
    /// 2×2 matrix in the ordered basis `(|e0⟩, |g1⟩)`.
    pub fn su2(&self) -> Matrix2<C64> {
        let (s, co) = (0.5 * self.theta).sin_cos();
        Matrix2::new(
            c(co) - IM * (s * self.v_z),
            -IM * (s * self.v_x),
            -IM * (s * self.v_x),
            c(co) + IM * (s * self.v_z),
        )
    }

    /// Rotation by `k ϑ` about the same axis.
    pub fn power(&self, k: f64) -> Self {
        Self { theta: k * self.theta, ..*self }
    }
}

/// The components `A = sin(ϑ/2) v_x` and `B = sin(ϑ/2) v_z` of one period.
pub fn period_components(g: f64, xi: f64, tau: f64) -> (f64, f64) {
    let om = (g * g + 0.25 * xi * xi).sqrt();
    let (so, co) = (0.5 * om * tau).sin_cos();
    let (sx, cx) = (0.5 * xi * tau).sin_cos();
    let a = 2.0 * g / om * (co * cx + xi / (2.0 * om) * so * sx) * so;
    let b = (xi / om * so * cx - co * sx) * co + (xi * xi - 4.0 * g * g) / (4.0 * om * om) * so * so * sx;
    (a, b)
}

pub fn single_period_rotation(g: f64, xi: f64, tau: f64) -> Result<PeriodRotation> {
    if !(tau > 0.0) {
        return invalid("tau must be positive");
    }
    let (a, b) = period_components(g, xi, tau);
    let s2 = a * a + b * b;
    let mut c2 = 1.0 - s2;
    if c2 < 0.0 {
        if c2 < -1e-9 {
            return Err(Error::NumericalConsistency(format!("1 - A² - B² = {c2:e}")));
        }
        c2 = 0.0;
    }
    let s = s2.sqrt();
    let theta = 2.0 * s.atan2(c2.sqrt());
    let (v_x, v_z) = if s > 0.0 { (a / s, b / s) } else { (1.0, 0.0) };
    Ok(PeriodRotation { theta, v_x, v_z })
}

/// Transfer fidelity at one detuning, `(1 + v_x² sin²(n_pϑ/4) + v_x sin(n_pϑ/4))/3`.
pub fn transfer_fidelity_at(g: f64, xi: f64, tau: f64, n_p: usize) -> Result<f64> {
    let r = single_period_rotation(g, xi, tau)?;
    let s = (n_p as f64 * r.theta / 4.0).sin();
    Ok((1.0 + r.v_x * r.v_x * s * s + r.v_x * s) / 3.0)
}

fn check_even(n_p: usize) -> Result<()> {
    if n_p == 0 || n_p % 2 != 0 {
        return invalid(format!("n_p must be positive and even, got {n_p}"));
    }
    Ok(())
}

/// Exact fidelity averaged over `ξ ~ N(0, Δξ²)` (κ ignored).
pub fn transfer_fidelity_exact(params: &SystemParams, n_p: usize, tau: f64) -> Result<f64> {
    transfer_fidelity_exact_with(params, n_p, tau, GaussControl::default()).map(|(f, _)| f)
}

/// As [`transfer_fidelity_exact`], returning the accepted node count as well.
pub fn transfer_fidelity_exact_with(
    params: &SystemParams,
    n_p: usize,
    tau: f64,
    ctl: GaussControl,
) -> Result<(f64, usize)> {
    check_even(n_p)?;
    let g = params.g;
    gaussian_expectation_converged(params.delta_xi, ctl, |xi| transfer_fidelity_at(g, xi, tau, n_p))
}

/// Large-`n_p` error `(1/6)[(π/4)²(Δξ/g)⁴ + (1/3)(Δξ/g)²](π/2n_p)⁴`.
pub fn transfer_error_asymptotic(params: &SystemParams, n_p: usize) -> f64 {
    let r = params.delta_xi / params.g;
    let x = PI / (2.0 * n_p as f64);
    ((PI / 4.0).powi(2) * r.powi(4) + r * r / 3.0) * x.powi(4) / 6.0
}

/// Error floor from cavity damping, `πκ/6g`.
pub fn saturation_error(params: &SystemParams) -> f64 {
    PI * params.kappa / (6.0 * params.g)
}

/// `½(4/3 - sin(π/√2)/√2) ≈ 0.3853`.
pub fn pulse_error_constant() -> f64 {
    0.5 * (4.0 / 3.0 - (PI / SQRT_2).sin() / SQRT_2)
}

/// Leading fidelity change from a deterministic over-rotation `ε` in a phase-alternated sequence.
pub fn pulse_error_correction(epsilon: f64, params: &SystemParams) -> f64 {
    let x = epsilon * params.delta_xi / params.g;
    -pulse_error_constant() * x * x
}

/// `τ = π/(g n_p)`, so that `t_f = π/g`.
pub fn optimal_tau(g: f64, n_p: usize) -> Result<f64> {
    check_even(n_p)?;
    if !(g > 0.0) {
        return invalid("g must be positive");
    }
    Ok(PI / (g * n_p as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::expm_hermitian_mat;
    use crate::quantum::CMat;

    fn block(h: [[f64; 2]; 2], t: f64) -> Matrix2<C64> {
        let m = CMat::from_row_slice(2, 2, &[c(h[0][0]), c(h[0][1]), c(h[1][0]), c(h[1][1])]);
        let u = expm_hermitian_mat(&m, t);
        Matrix2::new(u[(0, 0)], u[(0, 1)], u[(1, 0)], u[(1, 1)])
    }

    #[test]
    fn zero_detuning_rotation() {
        let r = single_period_rotation(1.0, 0.0, 0.4).unwrap();
        let (a, b) = period_components(1.0, 0.0, 0.4);
        assert!((a - 0.4f64.sin()).abs() < 1e-15 && b.abs() < 1e-15);
        assert!((r.theta - 0.8).abs() < 1e-14);
        assert_eq!(r.v_x, 1.0);
    }

    #[test]
    fn no_coupling_is_z_rotation() {
        let r = single_period_rotation(1e-300, 1.3, 0.4).unwrap();
        assert!(r.v_x.abs() < 1e-12);
    }

    #[test]
    fn period_matches_matrix_product() {
        // Oracle: half even window, odd window, half even window as 2×2 exponentials
        // in the (|e0⟩, |g1⟩) block.
        let (g, xi, tau) = (1.0, 2.0, 0.3);
        let he = [[xi / 2.0, g], [g, -xi / 2.0]];
        let ho = [[-xi / 2.0, 0.0], [0.0, xi / 2.0]];
        let u = block(he, tau / 2.0) * block(ho, tau) * block(he, tau / 2.0);
        let r = single_period_rotation(g, xi, tau).unwrap();
        assert!((u - r.su2()).norm() < 1e-13);
    }

    #[test]
    fn perfect_transfer_without_broadening() {
        let p = SystemParams::new(1.0, 0.0, 0.0).unwrap();
        for n_p in [2, 8, 40] {
            let tau = optimal_tau(1.0, n_p).unwrap();
            assert!((transfer_fidelity_exact(&p, n_p, tau).unwrap() - 1.0).abs() < 1e-14);
            let r = single_period_rotation(1.0, 0.0, tau).unwrap();
            assert!((r.theta * n_p as f64 / 2.0 - PI).abs() < 1e-13);
        }
        assert!(transfer_fidelity_exact(&p, 3, 0.1).is_err());
    }

    #[test]
    fn optimal_tau_values() {
        assert!((optimal_tau(PI, 2).unwrap() - 0.5).abs() < 1e-15);
        for n in [2, 10, 100] {
            assert!((n as f64 * optimal_tau(2.0, n).unwrap() - PI / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_forms() {
        let p = SystemParams::new(1.0, 0.0, 0.0).unwrap();
        assert_eq!(transfer_error_asymptotic(&p, 10), 0.0);
        assert_eq!(saturation_error(&p), 0.0);
        let p = SystemParams::from_g_t2_star(1.0, 0.1, 0.01).unwrap();
        assert!((p.delta_xi - 10.0 * SQRT_2).abs() < 1e-12);
        assert!((saturation_error(&p) - 5.235987755982988e-3).abs() < 1e-15);
        let r = transfer_error_asymptotic(&p, 100) / transfer_error_asymptotic(&p, 200);
        assert!((r - 16.0).abs() < 1e-10);
        assert_eq!(pulse_error_correction(0.0, &p), 0.0);
        let eps = 0.003;
        let x = eps * p.delta_xi;
        assert!((pulse_error_correction(eps, &p) / (x * x) + pulse_error_constant()).abs() < 1e-15);
        assert!((pulse_error_constant() - 0.385_346_637_380_466_5).abs() < 1e-6);
    }
}
