//! TOML run configuration, unit handling and flag overrides.

use std::collections::BTreeMap;
use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Problems with the configuration; the binary exits with code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type CResult<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> CResult<T> {
    Err(ConfigError(msg.into()))
}

/// A number, or a string with a unit suffix such as `"1.3 MHz"` or `"60 ns"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Num(f64),
    Text(String),
}

impl From<f64> for Quantity {
    fn from(v: f64) -> Self {
        Quantity::Num(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dim {
    Rate,
    Time,
}

/// Splits `"1.3 MHz"` into `(1.3, Some("MHz"))`.
fn split_unit(s: &str) -> CResult<(f64, Option<String>)> {
    let s = s.trim();
    let cut = s
        .char_indices()
        .find(|(i, ch)| ch.is_ascii_alphabetic() && !is_exponent(s, *i))
        .map(|(i, _)| i)
        .unwrap_or(s.len());
    let (num, unit) = s.split_at(cut);
    let v: f64 = num.trim().parse().map_err(|_| ConfigError(format!("cannot parse number in '{s}'")))?;
    let unit = unit.trim();
    Ok((v, (!unit.is_empty()).then(|| unit.to_string())))
}

/// `e`/`E` inside a float literal such as `1e-3`.
fn is_exponent(s: &str, i: usize) -> bool {
    let b = s.as_bytes();
    (b[i] == b'e' || b[i] == b'E')
        && i > 0
        && b[i - 1].is_ascii_digit()
        && b.get(i + 1).is_some_and(|c| c.is_ascii_digit() || *c == b'-' || *c == b'+')
}

/// Scale of a unit suffix to rad/s (rates) or s (times).
fn unit_scale(unit: &str, dim: Dim) -> CResult<f64> {
    let cyc = 2.0 * PI;
    let v = match (dim, unit) {
        (Dim::Rate, "Hz") => cyc,
        (Dim::Rate, "kHz") => cyc * 1e3,
        (Dim::Rate, "MHz") => cyc * 1e6,
        (Dim::Rate, "GHz") => cyc * 1e9,
        (Dim::Rate, "rad/s") => 1.0,
        (Dim::Rate, "krad/s") => 1e3,
        (Dim::Rate, "Mrad/s") => 1e6,
        (Dim::Rate, "Grad/s") => 1e9,
        (Dim::Time, "s") => 1.0,
        (Dim::Time, "ms") => 1e-3,
        (Dim::Time, "us") | (Dim::Time, "µs") => 1e-6,
        (Dim::Time, "ns") => 1e-9,
        (Dim::Time, "ps") => 1e-12,
        _ => return err(format!("unit '{unit}' is not a valid {dim:?} unit")),
    };
    Ok(v)
}

impl Quantity {
    /// Plain numbers are multiples of `g` (rates) or `1/g` (times).
    pub fn resolve(&self, key: &str, dim: Dim, g: f64) -> CResult<f64> {
        let (v, unit) = match self {
            Quantity::Num(v) => (*v, None),
            Quantity::Text(s) => split_unit(s).map_err(|e| ConfigError(format!("{key}: {e}")))?,
        };
        let out = match unit {
            None => match dim {
                Dim::Rate => v * g,
                Dim::Time => v / g,
            },
            Some(u) => v * unit_scale(&u, dim).map_err(|e| ConfigError(format!("{key}: {e}")))?,
        };
        if !out.is_finite() {
            return err(format!("{key}: value is not finite"));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    /// Coupling; sets the unit for plain-number rates and times (default 1).
    pub g: Option<Quantity>,
    pub delta_xi: Option<Quantity>,
    pub g_t2_star: Option<f64>,
    pub kappa: Option<Quantity>,
    pub omega_q: Option<Quantity>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub n_p: Option<usize>,
    /// Pulse interval; by default chosen for a complete transfer.
    pub tau: Option<Quantity>,
    pub sigma_f: Option<Quantity>,
    pub t_p: Option<Quantity>,
    pub g_off: Option<Quantity>,
    pub phase_pattern: Option<String>,
    pub variant: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    pub gauss_nodes: Option<usize>,
    pub fock_dim: Option<usize>,
    pub step_tol: Option<f64>,
    pub n_traj: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Readout {
    /// Either `tau` or the product `kappa_tau`.
    pub tau: Option<Quantity>,
    pub kappa_tau: Option<f64>,
    pub t_f: Option<Quantity>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ensemble {
    pub n: Option<usize>,
    /// `g_ens`; defaults to `Δξ`.
    pub g_ens: Option<Quantity>,
    pub coupling_spread: Option<f64>,
    pub dxi_tau: Option<f64>,
    pub convention: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub grids: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

/// Full configuration as written in a TOML file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub physics: Physics,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default)]
    pub numerics: Numerics,
    #[serde(default)]
    pub readout: Readout,
    #[serde(default)]
    pub ensemble: Ensemble,
    #[serde(default)]
    pub sweep: Sweep,
}

impl Config {
    pub fn from_toml(text: &str) -> CResult<Self> {
        toml::from_str(text).map_err(|e| ConfigError(format!("config: {}", e.message())))
    }

    pub fn read(path: &Path) -> CResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Output directory: the config value, then the environment value, then `squadd-out`.
    pub fn output_dir_or(&self, env_output: Option<PathBuf>) -> PathBuf {
        self.output_dir.clone().or(env_output).unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub const DEFAULT_SEED: u64 = 2016;
pub const DEFAULT_N_P: usize = 100;
pub const DEFAULT_OUTPUT: &str = "squadd-out";
pub const OUTPUT_ENV: &str = "SQUADD_OUTPUT_DIR";

/// Values in rad/s and s after units, defaults and the `Δξ`/`gT₂*` rule are applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Resolved {
    pub g: f64,
    pub delta_xi: f64,
    pub kappa: f64,
    pub omega_q: Option<f64>,
    pub n_p: usize,
    pub tau: Option<f64>,
    pub sigma_f: Option<f64>,
    pub t_p: f64,
    pub g_off: f64,
    pub phase_pattern: String,
    pub variant: String,
    pub gauss_nodes: usize,
    pub fock_dim: Option<usize>,
    pub step_tol: Option<f64>,
    pub n_traj: usize,
    pub readout_tau: Option<f64>,
    pub readout_t_f: Option<f64>,
    pub ensemble_n: usize,
    pub g_ens: Option<f64>,
    pub coupling_spread: f64,
    pub dxi_tau: f64,
    pub convention: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Keys filled from defaults, for logging.
    #[serde(skip)]
    pub defaulted: Vec<String>,
}

fn positive(key: &str, v: f64) -> CResult<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        err(format!("{key} must be strictly positive, got {v}"))
    }
}

fn non_negative(key: &str, v: f64) -> CResult<f64> {
    if v >= 0.0 {
        Ok(v)
    } else {
        err(format!("{key} must be non-negative, got {v}"))
    }
}

impl Config {
    /// Applies units and defaults. `env_output` is the value of the output-directory variable.
    /// Readout runs do not need dephasing; pass `require_dephasing = false` there.
    pub fn resolve(&self, env_output: Option<PathBuf>, require_dephasing: bool) -> CResult<Resolved> {
        let mut defaulted = Vec::new();
        let mut dflt = |k: &str| defaulted.push(k.to_string());
        let p = &self.physics;
        let g = match &p.g {
            Some(q) => positive("physics.g", q.resolve("physics.g", Dim::Rate, 1.0)?)?,
            None => {
                dflt("physics.g = 1");
                1.0
            }
        };
        let delta_xi = match (&p.delta_xi, p.g_t2_star) {
            (Some(_), Some(_)) => {
                return err("physics.delta_xi and physics.g_t2_star are both set; give exactly one")
            }
            (Some(q), None) => non_negative("physics.delta_xi", q.resolve("physics.delta_xi", Dim::Rate, g)?)?,
            (None, Some(x)) => SQRT_2 * g / positive("physics.g_t2_star", x)?,
            (None, None) if require_dephasing => {
                return err("one of physics.delta_xi or physics.g_t2_star is required")
            }
            (None, None) => 0.0,
        };
        let kappa = match &p.kappa {
            Some(q) => non_negative("physics.kappa", q.resolve("physics.kappa", Dim::Rate, g)?)?,
            None => {
                dflt("physics.kappa = 0");
                0.0
            }
        };
        let omega_q = p.omega_q.as_ref().map(|q| q.resolve("physics.omega_q", Dim::Rate, g)).transpose()?;
        if let Some(w) = omega_q {
            positive("physics.omega_q", w)?;
        }
        let s = &self.schedule;
        let n_p = s.n_p.unwrap_or_else(|| {
            dflt("schedule.n_p = 100");
            DEFAULT_N_P
        });
        if n_p == 0 || n_p % 2 != 0 {
            return err(format!("schedule.n_p must be positive and even, got {n_p}"));
        }
        let opt_rate = |key: &str, q: &Option<Quantity>| -> CResult<Option<f64>> {
            q.as_ref().map(|q| q.resolve(key, Dim::Rate, g).and_then(|v| positive(key, v))).transpose()
        };
        let opt_time = |key: &str, q: &Option<Quantity>| -> CResult<Option<f64>> {
            q.as_ref().map(|q| q.resolve(key, Dim::Time, g)).transpose()
        };
        let tau = opt_time("schedule.tau", &s.tau)?;
        if let Some(t) = tau {
            positive("schedule.tau", t)?;
        }
        let sigma_f = opt_rate("schedule.sigma_f", &s.sigma_f)?;
        let t_p = non_negative("schedule.t_p", opt_time("schedule.t_p", &s.t_p)?.unwrap_or(0.0))?;
        let g_off = match &s.g_off {
            Some(q) => non_negative("schedule.g_off", q.resolve("schedule.g_off", Dim::Rate, g)?)?,
            None => 0.0,
        };
        let phase_pattern = s.phase_pattern.clone().unwrap_or_else(|| "fixed".into());
        phase_pattern
            .parse::<squadd::pulses::PhasePattern>()
            .map_err(|e| ConfigError(format!("schedule.phase_pattern: {e}")))?;
        let variant = s.variant.clone().unwrap_or_else(|| {
            dflt("schedule.variant = ideal");
            "ideal".into()
        });
        variant.parse::<squadd::pulses::Variant>().map_err(|e| ConfigError(format!("schedule.variant: {e}")))?;
        let nm = &self.numerics;
        let gauss_nodes = nm.gauss_nodes.unwrap_or(64);
        if gauss_nodes == 0 {
            return err("numerics.gauss_nodes must be positive");
        }
        if let Some(f) = nm.fock_dim {
            if f < 2 {
                return err("numerics.fock_dim must be at least 2");
            }
        }
        if let Some(t) = nm.step_tol {
            positive("numerics.step_tol", t)?;
        }
        let n_traj = nm.n_traj.unwrap_or(100_000);
        let r = &self.readout;
        let readout_tau = match (&r.tau, r.kappa_tau) {
            (Some(_), Some(_)) => return err("readout.tau and readout.kappa_tau are both set; give exactly one"),
            (Some(q), None) => Some(positive("readout.tau", q.resolve("readout.tau", Dim::Time, g)?)?),
            (None, Some(kt)) => {
                let kt = positive("readout.kappa_tau", kt)?;
                if !(kappa > 0.0) {
                    return err("readout.kappa_tau needs physics.kappa > 0");
                }
                Some(kt / kappa)
            }
            (None, None) => None,
        };
        let readout_t_f = opt_time("readout.t_f", &r.t_f)?;
        if let Some(t) = readout_t_f {
            positive("readout.t_f", t)?;
        }
        let e = &self.ensemble;
        let ensemble_n = e.n.unwrap_or(1000);
        if ensemble_n == 0 {
            return err("ensemble.n must be positive");
        }
        let g_ens = opt_rate("ensemble.g_ens", &e.g_ens)?;
        let coupling_spread = non_negative("ensemble.coupling_spread", e.coupling_spread.unwrap_or(0.0))?;
        let dxi_tau = non_negative("ensemble.dxi_tau", e.dxi_tau.unwrap_or(0.5))?;
        let convention = e.convention.clone().unwrap_or_else(|| "rms".into());
        convention
            .parse::<squadd::ensemble::XiAvConvention>()
            .map_err(|e| ConfigError(format!("ensemble.convention: {e}")))?;
        let seed = self.seed.unwrap_or_else(|| {
            dflt("seed = 2016");
            DEFAULT_SEED
        });
        if self.output_dir.is_none() && env_output.is_none() {
            dflt("output_dir = squadd-out");
        }
        let output_dir = self.output_dir_or(env_output);
        Ok(Resolved {
            g,
            delta_xi,
            kappa,
            omega_q,
            n_p,
            tau,
            sigma_f,
            t_p,
            g_off,
            phase_pattern,
            variant,
            gauss_nodes,
            fock_dim: nm.fock_dim,
            step_tol: nm.step_tol,
            n_traj,
            readout_tau,
            readout_t_f,
            ensemble_n,
            g_ens,
            coupling_spread,
            dxi_tau,
            convention,
            seed,
            output_dir,
            defaulted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn units() {
        let q = Quantity::Text("1.3 MHz".into());
        assert!((q.resolve("k", Dim::Rate, 1.0).unwrap() - 2.0 * PI * 1.3e6).abs() < 1e-6);
        let q = Quantity::Text("60ns".into());
        assert!((q.resolve("k", Dim::Time, 1.0).unwrap() - 60e-9).abs() < 1e-20);
        let q = Quantity::Text("1e-3 s".into());
        assert_eq!(q.resolve("k", Dim::Time, 1.0).unwrap(), 1e-3);
        assert_eq!(Quantity::Num(0.5).resolve("k", Dim::Rate, 4.0).unwrap(), 2.0);
        assert_eq!(Quantity::Num(0.5).resolve("k", Dim::Time, 4.0).unwrap(), 0.125);
        assert!(Quantity::Text("3 ns".into()).resolve("k", Dim::Rate, 1.0).is_err());
        assert!(Quantity::Text("abc".into()).resolve("k", Dim::Rate, 1.0).is_err());
    }

    #[test]
    fn g_t2_star_conversion() {
        let c = Config::from_toml("[physics]\ng = 1\ng_t2_star = 0.1\n").unwrap();
        let r = c.resolve(None, true).unwrap();
        assert!((r.delta_xi - 10.0 * SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn conflicts_and_unknown_keys() {
        let c = Config::from_toml("[physics]\ndelta_xi = 1\ng_t2_star = 0.1\n").unwrap();
        let e = c.resolve(None, true).unwrap_err().0;
        assert!(e.contains("physics.delta_xi") && e.contains("physics.g_t2_star"));
        assert!(Config::from_toml("[physics]\nbogus = 1\n").is_err());
        assert!(Config::from_toml("colour = 1\n").is_err());
        let c = Config::from_toml("[physics]\ng = -1\ng_t2_star = 1\n").unwrap();
        assert!(c.resolve(None, true).is_err());
    }

    #[test]
    fn round_trip() {
        let text = r#"
experiment = "fig2"
seed = 7
[physics]
g = "1.3 MHz"
kappa = "0.6 MHz"
delta_xi = 0.5
omega_q = 2000.0
[schedule]
n_p = 10
phase_pattern = "alternate_pairs"
[numerics]
fock_dim = 3
[sweep]
grids = { n_p = [2.0, 4.0] }
"#;
        let c = Config::from_toml(text).unwrap();
        let back = Config::from_toml(&c.to_toml()).unwrap();
        assert_eq!(c, back);
        let r = c.resolve(None, true).unwrap();
        assert!((r.kappa / r.g - 0.6 / 1.3).abs() < 1e-12);
        assert!((r.delta_xi - 0.5 * r.g).abs() < 1e-6);
    }

    #[test]
    fn documented_example_parses() {
        let c = Config::from_toml(include_str!("../../../docs/example.toml")).unwrap();
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
        let r = c.resolve(None, true).unwrap();
        assert!((r.g - 2.0 * PI * 1.3e6).abs() < 1e-6);
        assert_eq!(r.n_p, 10);
    }

    #[test]
    fn output_dir_precedence() {
        let c = Config::from_toml("[physics]\ng_t2_star = 1\n").unwrap();
        assert_eq!(c.resolve(Some("env".into()), true).unwrap().output_dir, PathBuf::from("env"));
        assert_eq!(c.resolve(None, true).unwrap().output_dir, PathBuf::from(DEFAULT_OUTPUT));
        let c = Config::from_toml("output_dir = \"x\"\n[physics]\ng_t2_star = 1\n").unwrap();
        assert_eq!(c.resolve(Some("env".into()), true).unwrap().output_dir, PathBuf::from("x"));
    }
}
