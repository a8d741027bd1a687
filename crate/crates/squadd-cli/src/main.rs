//! `squadd` command-line front end.

mod config;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::{json, Value};

use squadd::ensemble::{
    collective_overlaps, doublet_energies, ensemble_transfer_error, ensemble_transfer_fidelity_numeric,
    exact_spectrum, four_mode_model_for, sample_ensemble, split_bright_dark, transfer_model, EnsembleSpec,
    XiAvConvention,
};
use squadd::experiments::{
    self, compare_golden, counter_rotating_options, filtered_schedule, write_outputs, Experiment, ResultTable,
    SweepSpec, Tolerances,
};
use squadd::lindblad::{transfer_fidelity_free, transfer_fidelity_master_with, MasterOptions};
use squadd::pulses::{solve_filtered_tau, PhasePattern, PulseSchedule, Variant};
use squadd::quadrature::GaussControl;
use squadd::readout::{
    gamma_switching, noise_crossover_time, optimal_snr, signal_noise_analytic, signal_noise_curve,
    signal_noise_simplified, single_shot_fidelity_asymptotic, single_shot_fidelity_monte_carlo,
    switching_rate_numeric, ReadoutConfig, ReadoutGenerator,
};
use squadd::transfer::{
    optimal_tau, saturation_error, transfer_error_asymptotic, transfer_fidelity_exact, SystemParams,
};

use config::{Config, ConfigError, Quantity, Resolved, OUTPUT_ENV};

#[derive(Parser, Debug)]
#[command(name = "squadd", version, about = "SQUADD state transfer and readout simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Qubit-to-cavity transfer fidelity for one parameter set.
    Transfer(Common),
    /// Collective-mode analysis of a qubit ensemble.
    Ensemble(Common),
    /// Filtered, finite-duration and counter-rotating control imperfections.
    Controls(Common),
    /// Readout signal, noise and single-shot fidelity.
    Readout(Common),
    /// Runs a named experiment sweep and writes CSV and JSON.
    ReproduceFigure(FigureArgs),
    /// Compares an experiment table with a golden CSV.
    VerifyGolden(GoldenArgs),
}

/// Options shared by all subcommands. Each flag overrides the matching config key.
#[derive(Args, Debug, Default)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Coupling; a plain number or a value with a unit (e.g. "1.3 MHz").
    #[arg(long)]
    g: Option<String>,
    #[arg(long)]
    delta_xi: Option<String>,
    #[arg(long)]
    g_t2_star: Option<f64>,
    #[arg(long)]
    kappa: Option<String>,
    #[arg(long)]
    omega_q: Option<String>,
    #[arg(long)]
    n_p: Option<usize>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    sigma_f: Option<String>,
    #[arg(long)]
    t_p: Option<String>,
    #[arg(long)]
    g_off: Option<String>,
    /// fixed, alternate_each or alternate_pairs.
    #[arg(long)]
    phase_pattern: Option<String>,
    /// ideal, counter_rotating or finite_duration.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    gauss_nodes: Option<usize>,
    #[arg(long)]
    fock_dim: Option<usize>,
    #[arg(long)]
    step_tol: Option<f64>,
    #[arg(long)]
    n_traj: Option<usize>,
    /// Readout pulse interval.
    #[arg(long)]
    readout_tau: Option<String>,
    #[arg(long)]
    kappa_tau: Option<f64>,
    #[arg(long)]
    t_f: Option<String>,
    /// Ensemble size.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    g_ens: Option<String>,
    #[arg(long)]
    coupling_spread: Option<f64>,
    #[arg(long)]
    dxi_tau: Option<f64>,
    /// rms, signed or nominal.
    #[arg(long)]
    convention: Option<String>,
    /// Ensemble text file (`g ξ` per line) used instead of sampling.
    #[arg(long)]
    ensemble_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FigureArgs {
    /// Experiment name, e.g. fig2 or fig2_error_vs_np.
    experiment: Option<String>,
    #[command(flatten)]
    common: Common,
    /// Replaces a grid: `name=v1,v2,...`.
    #[arg(long = "grid", value_name = "NAME=VALUES")]
    grids: Vec<String>,
    /// Sets a scalar parameter: `name=value`.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

#[derive(Args, Debug)]
struct GoldenArgs {
    #[command(flatten)]
    figure: FigureArgs,
    /// Golden CSV to compare against.
    #[arg(long)]
    golden: PathBuf,
    /// Compare this CSV instead of recomputing the experiment.
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-9)]
    rel: f64,
    #[arg(long, default_value_t = 1e-12)]
    abs: f64,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Config(String),
    Lib(squadd::Error),
    Mismatch(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<squadd::Error> for Failure {
    fn from(e: squadd::Error) -> Self {
        match e {
            squadd::Error::InvalidInput(m) => Failure::Config(m),
            other => Failure::Lib(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type Run<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("squadd: config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Lib(e @ squadd::Error::NonConvergence(_))) => {
            eprintln!("squadd: {e}");
            ExitCode::from(3)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("squadd: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Mismatch(m)) => {
            eprintln!("squadd: {m}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> Run<()> {
    match cmd {
        Command::Transfer(c) => physics_command("transfer", &c, run_transfer),
        Command::Ensemble(c) => physics_command("ensemble", &c, run_ensemble),
        Command::Controls(c) => physics_command("controls", &c, run_controls),
        Command::Readout(c) => physics_command("readout", &c, run_readout),
        Command::ReproduceFigure(f) => run_figure(&f),
        Command::VerifyGolden(g) => run_golden(&g),
    }
}

fn env_output() -> Option<PathBuf> {
    std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

fn quantity(s: &str) -> Quantity {
    s.trim().parse::<f64>().map(Quantity::Num).unwrap_or_else(|_| Quantity::Text(s.to_string()))
}

/// Reads the config file (if any) and applies flag overrides.
fn load_config(c: &Common) -> Run<Config> {
    let mut cfg = match &c.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    let q = |s: &Option<String>| s.as_deref().map(quantity);
    macro_rules! set {
        ($dst:expr, $v:expr) => {
            if let Some(v) = $v {
                $dst = Some(v);
            }
        };
    }
    set!(cfg.output_dir, c.output_dir.clone());
    set!(cfg.seed, c.seed);
    set!(cfg.physics.g, q(&c.g));
    // A flag for one of the Δξ/gT₂* pair replaces whichever the file gave.
    if c.delta_xi.is_some() && c.g_t2_star.is_none() {
        cfg.physics.g_t2_star = None;
    }
    if c.g_t2_star.is_some() && c.delta_xi.is_none() {
        cfg.physics.delta_xi = None;
    }
    set!(cfg.physics.delta_xi, q(&c.delta_xi));
    set!(cfg.physics.g_t2_star, c.g_t2_star);
    set!(cfg.physics.kappa, q(&c.kappa));
    set!(cfg.physics.omega_q, q(&c.omega_q));
    set!(cfg.schedule.n_p, c.n_p);
    set!(cfg.schedule.tau, q(&c.tau));
    set!(cfg.schedule.sigma_f, q(&c.sigma_f));
    set!(cfg.schedule.t_p, q(&c.t_p));
    set!(cfg.schedule.g_off, q(&c.g_off));
    set!(cfg.schedule.phase_pattern, c.phase_pattern.clone());
    set!(cfg.schedule.variant, c.variant.clone());
    set!(cfg.numerics.gauss_nodes, c.gauss_nodes);
    set!(cfg.numerics.fock_dim, c.fock_dim);
    set!(cfg.numerics.step_tol, c.step_tol);
    set!(cfg.numerics.n_traj, c.n_traj);
    if c.readout_tau.is_some() && c.kappa_tau.is_none() {
        cfg.readout.kappa_tau = None;
    }
    if c.kappa_tau.is_some() && c.readout_tau.is_none() {
        cfg.readout.tau = None;
    }
    set!(cfg.readout.tau, q(&c.readout_tau));
    set!(cfg.readout.kappa_tau, c.kappa_tau);
    set!(cfg.readout.t_f, q(&c.t_f));
    set!(cfg.ensemble.n, c.n);
    set!(cfg.ensemble.g_ens, q(&c.g_ens));
    set!(cfg.ensemble.coupling_spread, c.coupling_spread);
    set!(cfg.ensemble.dxi_tau, c.dxi_tau);
    set!(cfg.ensemble.convention, c.convention.clone());
    set!(cfg.ensemble.file, c.ensemble_file.clone());
    Ok(cfg)
}

fn log_defaults(r: &Resolved) {
    for d in &r.defaulted {
        eprintln!("squadd: default {d}");
    }
}

fn write_json(path: &Path, v: &Value) -> Run<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

/// Writes `manifest.json` with the full configuration and the tool version.
fn write_manifest(dir: &Path, command: &str, cfg: &Config, resolved: Value, outputs: &[PathBuf]) -> Run<()> {
    let m = json!({
        "tool": "squadd",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "config_toml": cfg.to_toml(),
        "resolved": resolved,
        "outputs": outputs,
    });
    write_json(&dir.join("manifest.json"), &m)
}

type PhysicsRun = fn(&Config, &Resolved) -> Run<(Value, Vec<PathBuf>)>;

fn physics_command(name: &str, c: &Common, f: PhysicsRun) -> Run<()> {
    let cfg = load_config(c)?;
    let r = cfg.resolve(env_output(), name != "readout")?;
    log_defaults(&r);
    std::fs::create_dir_all(&r.output_dir)?;
    let (report, mut outputs) = f(&cfg, &r)?;
    let path = r.output_dir.join(format!("{name}.json"));
    write_json(&path, &report)?;
    outputs.insert(0, path);
    write_manifest(&r.output_dir, name, &cfg, serde_json::to_value(&r)?, &outputs)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn system_params(r: &Resolved) -> Run<SystemParams> {
    let mut p = SystemParams::new(r.g, r.delta_xi, r.kappa)?;
    if let Some(w) = r.omega_q {
        p = p.with_omega_q(w);
    }
    Ok(p)
}

fn variant(r: &Resolved) -> Run<Variant> {
    Ok(r.variant.parse::<Variant>()?)
}

fn phase_pattern(r: &Resolved) -> Run<PhasePattern> {
    Ok(r.phase_pattern.parse::<PhasePattern>()?)
}

/// Schedule from the resolved settings; filtered runs solve for `τ`.
fn schedule(r: &Resolved) -> Run<PulseSchedule> {
    let pattern = phase_pattern(r)?;
    let mut s = match r.sigma_f {
        Some(sf) => {
            if r.tau.is_some() {
                return Err(Failure::Config(
                    "schedule.tau cannot be combined with schedule.sigma_f; the interval is solved".into(),
                ));
            }
            filtered_schedule(r.g, r.n_p, sf, r.t_p, pattern)?
        }
        None => {
            let tau = match r.tau {
                Some(t) => t,
                None => optimal_tau(r.g, r.n_p)?,
            };
            let mut s = PulseSchedule::ideal(tau, r.n_p)?;
            s.t_p = r.t_p;
            s.phase_pattern = pattern;
            s
        }
    };
    s.g_off = r.g_off;
    s.validate()?;
    Ok(s)
}

fn master_options(r: &Resolved, v: Variant) -> MasterOptions {
    let mut o = if v == Variant::CounterRotating {
        counter_rotating_options(r.step_tol.unwrap_or(1e-7))
    } else {
        MasterOptions::default()
    };
    if v != Variant::CounterRotating {
        o.gauss = GaussControl { nodes: r.gauss_nodes, ..GaussControl::default() };
        if let Some(t) = r.step_tol {
            o.step.tol = t;
        }
    }
    if r.fock_dim.is_some() {
        o.fock_dim = r.fock_dim;
    }
    o
}

fn run_transfer(_cfg: &Config, r: &Resolved) -> Run<(Value, Vec<PathBuf>)> {
    let params = system_params(r)?;
    let v = variant(r)?;
    let sched = schedule(r)?;
    let ideal_square = v == Variant::Ideal && sched.sigma_f.is_none() && sched.g_off == 0.0;
    let exact = if ideal_square && r.kappa == 0.0 {
        Some(transfer_fidelity_exact(&params, r.n_p, sched.tau)?)
    } else {
        None
    };
    let master = transfer_fidelity_master_with(&params, &sched, v, master_options(r, v))?;
    let free = transfer_fidelity_free(&params, PI / (2.0 * r.g), GaussControl::default())?;
    let report = json!({
        "tau": sched.tau,
        "t_f": sched.t_f(),
        "variant": r.variant,
        "exact_fidelity": exact,
        "exact_error": exact.map(|f| 1.0 - f),
        "asymptotic_error": transfer_error_asymptotic(&params, r.n_p),
        "saturation_error": saturation_error(&params),
        "master_fidelity": master.fidelity,
        "master_error": 1.0 - master.fidelity,
        "gauss_nodes": master.gauss_nodes,
        "fock_dim": master.fock_dim,
        "no_pulse_error": 1.0 - free,
    });
    Ok((report, vec![]))
}

fn run_ensemble(_cfg: &Config, r: &Resolved) -> Run<(Value, Vec<PathBuf>)> {
    let conv: XiAvConvention = r.convention.parse()?;
    let g_ens = r.g_ens.unwrap_or(r.delta_xi);
    let ens = match &_cfg.ensemble.file {
        Some(p) => EnsembleSpec::read_text(p)?,
        None => {
            let n = r.ensemble_n;
            sample_ensemble(n, g_ens / (n as f64).sqrt(), r.delta_xi, r.coupling_spread, r.seed)?
        }
    };
    let ens_path = r.output_dir.join("ensemble.txt");
    ens.write_text(&ens_path)?;
    let overlaps = collective_overlaps(&ens)?;
    let tau = if r.delta_xi > 0.0 { r.dxi_tau / r.delta_xi } else { 0.0 };
    let model = four_mode_model_for(&ens, tau, conv)?;
    let mut doublets = doublet_energies(&model)?;
    doublets.sort_by(f64::total_cmp);
    let mut report = json!({
        "n": ens.len(),
        "g_ens": ens.g_ens(),
        "g_av": ens.g_av(),
        "xi_rms": ens.xi_rms(),
        "overlaps": overlaps,
        "tau": tau,
        "doublets": doublets,
        "transfer_error_closed_form": ensemble_transfer_error(ens.g_ens(), r.delta_xi, r.n_p),
    });
    let tm = transfer_model(ens.g_ens(), r.delta_xi, r.n_p)?;
    report["transfer_error_four_mode"] = json!(1.0 - ensemble_transfer_fidelity_numeric(&tm, r.n_p)?);
    // Full diagonalization is O(N³); skip it for very large ensembles.
    if ens.len() <= 4000 {
        let spectrum = exact_spectrum(&ens, tau)?;
        let (bright, dark) = split_bright_dark(&spectrum);
        let thr = 10.0 / (ens.len() as f64).sqrt() * ens.g_ens();
        let dev = bright.iter().zip(&doublets).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        report["exact_bright"] = json!(bright);
        report["max_doublet_deviation"] = json!(dev);
        report["max_dark"] = json!(dark.iter().map(|x| x.abs()).fold(0.0, f64::max));
        report["n_dark_below_threshold"] = json!(dark.iter().filter(|x| x.abs() <= thr).count());
    }
    Ok((report, vec![ens_path]))
}

fn run_controls(_cfg: &Config, r: &Resolved) -> Run<(Value, Vec<PathBuf>)> {
    let params = system_params(r)?;
    let v = variant(r)?;
    if v == Variant::CounterRotating && r.omega_q.is_none() {
        return Err(Failure::Config("variant counter_rotating needs physics.omega_q".into()));
    }
    let sched = schedule(r)?;
    let timing = match r.sigma_f {
        Some(sf) => Some(solve_filtered_tau(r.g, r.n_p, sf, r.t_p)?),
        None => None,
    };
    let master = transfer_fidelity_master_with(&params, &sched, v, master_options(r, v))?;
    let square = transfer_fidelity_exact(&params, r.n_p, optimal_tau(r.g, r.n_p)?)?;
    let report = json!({
        "variant": r.variant,
        "phase_pattern": r.phase_pattern,
        "schedule": sched,
        "filtered_timing": timing,
        "error": 1.0 - master.fidelity,
        "error_ideal_square": 1.0 - square,
        "gauss_nodes": master.gauss_nodes,
        "fock_dim": master.fock_dim,
    });
    Ok((report, vec![]))
}

fn run_readout(_cfg: &Config, r: &Resolved) -> Run<(Value, Vec<PathBuf>)> {
    let Some(tau) = r.readout_tau else {
        return Err(Failure::Config("readout needs readout.tau or readout.kappa_tau".into()));
    };
    if !(r.kappa > 0.0) {
        return Err(Failure::Config("readout needs physics.kappa > 0".into()));
    }
    let fock = r.fock_dim.unwrap_or(3);
    let base = ReadoutConfig::new(r.g, r.kappa, tau, 1.0)?.with_fock(fock);
    let kt = r.kappa * tau;
    let in_domain = base.in_convergence_domain();
    let mut report = json!({ "kappa_tau": kt, "in_convergence_domain": in_domain, "fock_dim": fock });
    let mut outputs = vec![];
    let t_f;
    if in_domain {
        let gamma = gamma_switching(&base);
        t_f = r.readout_t_f.unwrap_or_else(|| noise_crossover_time(&base, gamma));
        let cfg = base.with_t_f(t_f);
        report["gamma"] = json!(gamma);
        report["t_f"] = json!(t_f);
        report["analytic"] = json!(signal_noise_analytic(&cfg, gamma)?);
        report["simplified"] = json!(signal_noise_simplified(&cfg, gamma));
        report["optimal"] = json!(optimal_snr(&cfg, gamma)?);
        report["single_shot_asymptotic"] = json!(single_shot_fidelity_asymptotic(kt));
        if r.n_traj > 0 {
            let mc = single_shot_fidelity_monte_carlo(&cfg, r.n_traj, r.seed)?;
            let hist = r.output_dir.join("readout_histogram.csv");
            mc.histogram.write_csv(&hist)?;
            outputs.push(hist);
            report["monte_carlo"] = json!({
                "fidelity": mc.fidelity,
                "std_error": mc.std_error,
                "threshold": mc.threshold,
                "n_traj": mc.n_traj,
                "seed": mc.seed,
            });
        }
    } else {
        eprintln!(
            "squadd: warning: kappa*tau = {kt} exceeds the convergence domain kappa*tau < pi/2; \
             running numeric paths only"
        );
        t_f = r.readout_t_f.unwrap_or(100.0 / r.kappa);
        report["t_f"] = json!(t_f);
        report["warning"] = json!("kappa*tau outside the convergence domain; closed forms skipped");
    }
    let cfg = base.with_t_f(t_f);
    let n_periods = cfg.periods_in(t_f)?.max(1);
    let curve = signal_noise_curve(&cfg, ReadoutGenerator::Piecewise, n_periods)?;
    let snr = curve.snr();
    let mut w = String::from("t,x,xi,snr\n");
    for i in 0..curve.t.len() {
        w.push_str(&format!("{:?},{:?},{:?},{:?}\n", curve.t[i], curve.x[i], curve.xi[i], snr[i]));
    }
    let curve_path = r.output_dir.join("readout_curve.csv");
    std::fs::write(&curve_path, w)?;
    outputs.push(curve_path);
    let last = curve.t.len() - 1;
    report["numeric"] = json!({ "t": curve.t[last], "x": curve.x[last], "xi": curve.xi[last], "snr": snr[last] });
    if let Some((t, s)) = curve.max_snr() {
        report["numeric_max_snr"] = json!({ "t": t, "snr": s });
    }
    let t2 = (n_periods as f64 * 2.0 * tau).min(150.0 / r.kappa).max(4.0 * tau);
    report["switching_rate_numeric"] =
        json!(switching_rate_numeric(&cfg, ReadoutGenerator::Piecewise, 0.5 * t2, t2)?);
    Ok((report, outputs))
}

fn parse_kv(s: &str) -> Run<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(Failure::Config(format!("expected NAME=VALUE, got '{s}'"))),
    }
}

fn parse_f64(key: &str, v: &str) -> Run<f64> {
    v.parse().map_err(|_| Failure::Config(format!("{key}: cannot parse '{v}' as a number")))
}

/// Sweep for a figure command: defaults, then `[sweep]` from the file, then flags.
fn figure_spec(f: &FigureArgs) -> Run<(Config, SweepSpec)> {
    let mut cfg = match &f.common.config {
        Some(p) => Config::read(p)?,
        None => Config::default(),
    };
    if let Some(e) = &f.experiment {
        cfg.experiment = Some(e.clone());
    }
    if let Some(s) = f.common.seed {
        cfg.seed = Some(s);
    }
    if let Some(d) = &f.common.output_dir {
        cfg.output_dir = Some(d.clone());
    }
    for g in &f.grids {
        let (k, v) = parse_kv(g)?;
        let vals = v.split(',').map(|x| parse_f64(&k, x.trim())).collect::<Run<Vec<f64>>>()?;
        cfg.sweep.grids.insert(k, vals);
    }
    for p in &f.params {
        let (k, v) = parse_kv(p)?;
        cfg.sweep.params.insert(k.clone(), parse_f64(&k, &v)?);
    }
    let Some(name) = cfg.experiment.clone() else {
        let mut cmd = Cli::command();
        cmd.build();
        let usage = cmd
            .find_subcommand_mut("reproduce-figure")
            .map(|s| s.render_usage().to_string())
            .unwrap_or_default();
        let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
        return Err(Failure::Config(format!(
            "missing experiment name\n{usage}\n\nexperiments: {}",
            names.join(", ")
        )));
    };
    let exp: Experiment = name.parse().map_err(|e: squadd::Error| Failure::Config(e.to_string()))?;
    let mut spec = SweepSpec::default_for(exp);
    for (k, v) in &cfg.sweep.grids {
        spec.grids.insert(k.clone(), v.clone());
    }
    for (k, v) in &cfg.sweep.params {
        spec.params.insert(k.clone(), *v);
    }
    if let Some(s) = cfg.seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok((cfg, spec))
}

fn unconverged(table: &ResultTable) -> usize {
    table.column("converged").map_or(0, |c| c.iter().filter(|v| **v != 1.0).count())
}

fn run_figure(f: &FigureArgs) -> Run<()> {
    let (cfg, spec) = figure_spec(f)?;
    let dir = cfg.output_dir_or(env_output());
    let table = experiments::run(&spec)?;
    let (csv, js) = write_outputs(&spec, &table, &dir)?;
    write_manifest(&dir, "reproduce-figure", &cfg, serde_json::to_value(&spec)?, &[csv.clone(), js.clone()])?;
    for c in &table.checks {
        println!(
            "{} {}: value {:e}, target {:e} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.target,
            c.tolerance
        );
    }
    println!("wrote {} and {}", csv.display(), js.display());
    let bad = unconverged(&table);
    if bad > 0 {
        return Err(Failure::Lib(squadd::Error::NonConvergence(format!("{bad} rows did not converge"))));
    }
    Ok(())
}

fn run_golden(g: &GoldenArgs) -> Run<()> {
    let (cfg, spec) = figure_spec(&g.figure)?;
    let dir = cfg.output_dir_or(env_output());
    let table = match &g.table {
        Some(p) => ResultTable::from_csv(spec.experiment, &std::fs::read_to_string(p)?)?,
        None => experiments::run(&spec)?,
    };
    if !(g.rel >= 0.0 && g.abs >= 0.0) {
        return Err(Failure::Config("--rel and --abs must be non-negative".into()));
    }
    let tol = Tolerances::new(g.rel, g.abs);
    let report = compare_golden(&table, &g.golden, &tol)?;
    std::fs::create_dir_all(&dir)?;
    let path = dir.join(format!("{}_golden.json", spec.experiment));
    let mut resolved: BTreeMap<&str, Value> = BTreeMap::new();
    resolved.insert("spec", serde_json::to_value(&spec)?);
    resolved.insert("tolerances", serde_json::to_value(&tol)?);
    resolved.insert("golden", json!(g.golden));
    write_json(&path, &serde_json::to_value(&report)?)?;
    write_manifest(&dir, "verify-golden", &cfg, serde_json::to_value(&resolved)?, &[path])?;
    println!("{report}");
    if report.pass {
        Ok(())
    } else {
        Err(Failure::Mismatch(format!("{} does not match the golden table", spec.experiment)))
    }
}
