//! Gauss rules (Golub–Welsch), Gaussian expectations and small 1-D solvers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Nodes and weights of a Gauss rule.
#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Eigenvalues and squared first eigenvector components of a symmetric
/// tridiagonal matrix (implicit QL with Wilkinson shifts).
fn tridiagonal_first_components(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(&off[..n - 1]);
    let mut z = vec![0.0; n];
    z[0] = 1.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter < 200, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                let fz = z[i + 1];
                z[i + 1] = s * z[i] + c * fz;
                z[i] = c * z[i] - s * fz;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    (idx.iter().map(|&i| d[i]).collect(), idx.iter().map(|&i| z[i] * z[i]).collect())
}

fn cached(kind: u8, n: usize, build: impl FnOnce() -> Rule) -> Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<(u8, usize), Arc<Rule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(r) = cache.lock().unwrap().get(&(kind, n)) {
        return r.clone();
    }
    let r = Arc::new(build());
    cache.lock().unwrap().insert((kind, n), r.clone());
    r
}

/// Gauss–Hermite rule for the standard normal: `E[f(z)] ≈ Σ wᵢ f(zᵢ)`, `Σ wᵢ = 1`.
pub fn gauss_hermite(n: usize) -> Arc<Rule> {
    assert!(n >= 1);
    cached(0, n, || {
        if n == 1 {
            return Rule { nodes: vec![0.0], weights: vec![1.0] };
        }
        let diag = vec![0.0; n];
        let off: Vec<f64> = (1..n).map(|k| (k as f64).sqrt()).collect();
        let (mut nodes, weights) = tridiagonal_first_components(&diag, &off);
        // Exact symmetry of the rule.
        for i in 0..n / 2 {
            let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        let s: f64 = weights.iter().sum();
        let mut w: Vec<f64> = weights.iter().map(|x| x / s).collect();
        for i in 0..n / 2 {
            let m = 0.5 * (w[i] + w[n - 1 - i]);
            w[i] = m;
            w[n - 1 - i] = m;
        }
        Rule { nodes, weights: w }
    })
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<Rule> {
    assert!(n >= 1);
    cached(1, n, || {
        if n == 1 {
            return Rule { nodes: vec![0.0], weights: vec![2.0] };
        }
        let diag = vec![0.0; n];
        let off: Vec<f64> = (1..n)
            .map(|k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            })
            .collect();
        let (nodes, weights) = tridiagonal_first_components(&diag, &off);
        Rule { nodes, weights: weights.iter().map(|w| 2.0 * w).collect() }
    })
}

/// Legendre polynomials `P_0..=P_kmax` at `x`.
pub fn legendre_values(kmax: usize, x: f64) -> Vec<f64> {
    let mut p = vec![0.0; kmax + 1];
    p[0] = 1.0;
    if kmax >= 1 {
        p[1] = x;
    }
    for k in 1..kmax {
        let kf = k as f64;
        p[k + 1] = ((2.0 * kf + 1.0) * x * p[k] - kf * p[k - 1]) / (kf + 1.0);
    }
    p
}

/// Spectral integration matrix on Gauss–Legendre nodes:
/// `S[i][j] = ∫_{-1}^{xᵢ} ℓⱼ(x) dx` with `ℓⱼ` the Lagrange basis.
pub fn legendre_integration_matrix(n: usize) -> Vec<Vec<f64>> {
    let rule = gauss_legendre(n);
    let pn: Vec<Vec<f64>> = rule.nodes.iter().map(|&x| legendre_values(n, x)).collect();
    // ∫_{-1}^{x} P_k = (P_{k+1} - P_{k-1}) / (2k+1), and x + 1 for k = 0.
    let ints: Vec<Vec<f64>> = rule
        .nodes
        .iter()
        .zip(&pn)
        .map(|(&x, p)| {
            (0..n)
                .map(|k| if k == 0 { x + 1.0 } else { (p[k + 1] - p[k - 1]) / (2.0 * k as f64 + 1.0) })
                .collect()
        })
        .collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += (2.0 * k as f64 + 1.0) / 2.0 * rule.weights[j] * pn[j][k] * ints[i][k];
            }
            s[i][j] = acc;
        }
    }
    s
}

/// Controls for Gaussian averages over the detuning.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GaussControl {
    pub nodes: usize,
    pub tol: f64,
    pub max_nodes: usize,
}

impl Default for GaussControl {
    fn default() -> Self {
        Self { nodes: 64, tol: 1e-9, max_nodes: 1024 }
    }
}

/// `E[f(ξ)]` for `ξ ~ N(0, σ²)` with a fixed node count. Reduction order is fixed.
pub fn gaussian_expectation<F>(sigma: f64, nodes: usize, f: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if sigma == 0.0 {
        return f(0.0);
    }
    let rule = gauss_hermite(nodes);
    let vals: Vec<Result<f64>> = rule.nodes.par_iter().map(|&z| f(sigma * z)).collect();
    let mut acc = 0.0;
    for (w, v) in rule.weights.iter().zip(vals) {
        acc += w * v?;
    }
    Ok(acc)
}

/// Gaussian expectation with node doubling until successive values differ by less than `tol`.
/// Returns `(value, nodes used)`.
pub fn gaussian_expectation_converged<F>(sigma: f64, ctl: GaussControl, f: F) -> Result<(f64, usize)>
where
    F: Fn(f64) -> Result<f64> + Sync,
{
    if sigma == 0.0 {
        return Ok((f(0.0)?, 1));
    }
    let mut n = ctl.nodes;
    let mut prev = gaussian_expectation(sigma, n, &f)?;
    while n * 2 <= ctl.max_nodes {
        let next = gaussian_expectation(sigma, 2 * n, &f)?;
        if (next - prev).abs() < ctl.tol {
            return Ok((prev, n));
        }
        n *= 2;
        prev = next;
    }
    Err(Error::NonConvergence(format!(
        "Gauss-Hermite average not converged to {:e} with {} nodes",
        ctl.tol, n
    )))
}

/// Bisection for a sign change of `f` on `[lo, hi]` to relative tolerance `rtol`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, rtol: f64) -> Result<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::NonConvergence(format!("no sign change on [{lo}, {hi}]")));
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if (hi - lo).abs() <= rtol * mid.abs() {
            return Ok(0.5 * (lo + hi));
        }
    }
    Err(Error::NonConvergence("bisection iteration limit".into()))
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`; returns `(x, f(x))`.
pub fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, rtol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - r * (b - a);
    let mut x2 = a + r * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..300 {
        if (b - a).abs() <= rtol * (a.abs() + b.abs()) {
            break;
        }
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + r * (b - a);
            f2 = f(x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - r * (b - a);
            f1 = f(x1);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Adaptive Simpson integration of `f` on `[a, b]`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        for n in [8, 64, 129] {
            let r = gauss_hermite(n);
            let m = |k: i32| -> f64 { r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(k)).sum() };
            assert!((m(0) - 1.0).abs() < 1e-13);
            assert!(m(1).abs() < 1e-13);
            assert!((m(2) - 1.0).abs() < 1e-12);
            assert!((m(4) - 3.0).abs() < 1e-11);
            assert!((m(6) - 15.0).abs() < 1e-10);
        }
    }

    #[test]
    fn hermite_gaussian_characteristic_function() {
        // E[cos(k z)] = exp(-k²/2)
        let r = gauss_hermite(64);
        let v: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * (3.0 * x).cos()).sum();
        assert!((v - (-4.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn legendre_rule_and_integration_matrix() {
        let r = gauss_legendre(7);
        let int: f64 = r.nodes.iter().zip(&r.weights).map(|(x, w)| w * x.powi(12)).sum();
        assert!((int - 2.0 / 13.0).abs() < 1e-14);
        let s = legendre_integration_matrix(7);
        // ∫_{-1}^{x} t^5 dt = (x^6 - 1)/6 exactly for degree < 7
        for i in 0..7 {
            let v: f64 = (0..7).map(|j| s[i][j] * r.nodes[j].powi(5)).sum();
            assert!((v - (r.nodes[i].powi(6) - 1.0) / 6.0).abs() < 1e-14);
        }
    }

    #[test]
    fn doubling_and_solvers() {
        let (v, n) = gaussian_expectation_converged(2.0, GaussControl::default(), |x| Ok(x * x)).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        assert_eq!(n, 64);
        let root = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((root - 2f64.sqrt()).abs() < 1e-13);
        let (x, fx) = golden_max(|x| -(x - 0.3) * (x - 0.3) + 1.0, -1.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6 && (fx - 1.0).abs() < 1e-12);
        let s = adaptive_simpson(&|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12);
        assert!((s - 2.0).abs() < 1e-10);
    }
}
