use std::f64::consts::PI;

use proptest::prelude::*;
use squadd::ensemble::{collective_overlaps, sample_ensemble, EnsembleSpec};
use squadd::experiments::{filtered_schedule, run, Experiment, SweepSpec};
use squadd::lindblad::{propagate, Liouvillian, StepPolicy};
use squadd::magnus::{
    magnus_terms_numeric, squadd_ensemble_windows, squadd_single_windows, window_sum_terms, Generator, MagnusKind,
    NumericControl,
};
use squadd::pulses::{even_hamiltonian, odd_hamiltonian, toggling_hamiltonian, PhasePattern, PulseSchedule, Variant};
use squadd::quantum::{
    build_canonical, c, commutator, expm_hermitian_mat, CMat, CVec, DensityMatrix, HilbertSpec, OpName,
    SingleQubitOps, C64,
};
use squadd::readout::{single_shot_with_gamma, ReadoutConfig};
use squadd::transfer::SystemParams;

fn n_ex(fock: usize) -> CMat {
    build_canonical(HilbertSpec::single(fock).unwrap(), OpName::NEx).unwrap().matrix
}

fn random_hermitian(d: usize, entries: &[f64]) -> CMat {
    let m = CMat::from_fn(d, d, |i, j| C64::new(entries[(i * d + j) % entries.len()], entries[(j * d + i + 7) % entries.len()]));
    (&m + m.adjoint()) * c(0.5)
}

fn random_ket(d: usize, entries: &[f64]) -> CVec {
    let v = CVec::from_fn(d, |i, _| C64::new(entries[2 * i % entries.len()], entries[(2 * i + 1) % entries.len()]));
    let n = v.norm();
    v / c(n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toggling_hamiltonian_commutes_with_excitation_number(
        g in 0.01f64..10.0, xi in -20.0f64..20.0, fock in 2usize..7,
    ) {
        let ops = SingleQubitOps::new(fock).unwrap();
        let n = n_ex(fock);
        for h in [even_hamiltonian(&ops, g, xi), odd_hamiltonian(&ops, 0.0, xi)] {
            prop_assert!(commutator(&h, &n).norm() < 1e-12);
        }
    }

    #[test]
    fn ideal_period_propagator_conserves_excitation_number(
        g in 0.1f64..5.0, xi in -10.0f64..10.0, tau in 0.001f64..1.0, fock in 2usize..6,
    ) {
        let ops = SingleQubitOps::new(fock).unwrap();
        let n = n_ex(fock);
        let mut u = squadd::quantum::identity(ops.space.dim());
        for (h, dt) in squadd_single_windows(g, 0.0, xi, tau, &ops) {
            u = expm_hermitian_mat(&h, dt) * u;
        }
        prop_assert!(commutator(&u, &n).norm() < 1e-11);
    }

    #[test]
    fn symmetric_cycles_have_no_first_order_term(
        d in 2usize..5,
        k in 1usize..4,
        entries in prop::collection::vec(-1.0f64..1.0, 64),
        durations in prop::collection::vec(0.05f64..0.5, 4),
    ) {
        // w_1 ... w_k w_k ... w_1 mirrored about the midpoint of the period.
        let half: Vec<(CMat, f64)> = (0..k)
            .map(|i| (random_hermitian(d, &entries[i * 16..]), durations[i]))
            .collect();
        let mut windows = half.clone();
        windows.extend(half.into_iter().rev());
        let period: f64 = windows.iter().map(|w| w.1).sum();
        let closed = window_sum_terms(MagnusKind::Hamiltonian, &windows);
        prop_assert!(closed.order1.norm() < 1e-10 * closed.order0.norm());
        let gen = Generator::piecewise(MagnusKind::Hamiltonian, windows);
        let numeric = magnus_terms_numeric(&gen, period, NumericControl::default()).unwrap();
        prop_assert!(numeric.order1.norm() < 1e-10 * numeric.order0.norm());
    }

    #[test]
    fn squadd_period_has_no_first_order_term(
        g in 0.1f64..5.0, xi in -5.0f64..5.0, tau in 0.01f64..0.5, g_off in 0.0f64..0.5,
    ) {
        let ops = SingleQubitOps::new(3).unwrap();
        let w = squadd_single_windows(g, g_off, xi, tau, &ops);
        let t = window_sum_terms(MagnusKind::Hamiltonian, &w);
        prop_assert!(t.order1.norm() < 1e-10 * t.order0.norm());
    }

    #[test]
    fn ensemble_period_has_no_first_order_term(n in 2usize..12, seed in 0u64..1000, tau in 0.05f64..1.0) {
        let ens = sample_ensemble(n, 1.0 / (n as f64).sqrt(), 1.0, 0.2, seed).unwrap();
        let t = window_sum_terms(MagnusKind::Hamiltonian, &squadd_ensemble_windows(&ens, tau));
        prop_assert!(t.order1.norm() < 1e-10 * t.order0.norm());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn damped_propagation_keeps_states_physical(
        xi in -3.0f64..3.0,
        kappa in 0.0f64..2.0,
        n_p in prop::sample::select(vec![2usize, 4, 6]),
        filtered in any::<bool>(),
        fock in 2usize..4,
        entries in prop::collection::vec(-1.0f64..1.0, 16),
    ) {
        let params = SystemParams::new(1.0, 1.0, kappa).unwrap();
        let sched = if filtered {
            filtered_schedule(1.0, n_p, 50.0, 0.0, PhasePattern::Fixed).unwrap()
        } else {
            PulseSchedule::ideal(PI / n_p as f64, n_p).unwrap()
        };
        let h = toggling_hamiltonian(&params, &sched, Variant::Ideal, xi, fock).unwrap();
        let space = h.ops().space;
        let l = Liouvillian::new(&h, kappa, &h.ops().a).unwrap();
        for t in [0.0, 0.2, 0.9] {
            prop_assert!(l.trace_residual(t) < 1e-10);
        }
        let rho0 = DensityMatrix::from_ket(space, &random_ket(space.dim(), &entries)).unwrap();
        let t_f = sched.t_f();
        let policy = StepPolicy { tol: 1e-6, ..StepPolicy::default() };
        let mut checkpoints = vec![0.25 * t_f, 0.5 * t_f, t_f];
        if !filtered {
            checkpoints.push(0.5 * sched.tau);
        }
        for t in checkpoints {
            let ch = propagate(&l, 0.0, t, policy).unwrap();
            prop_assert!(ch.validate().is_ok(), "{:?}", ch.validate());
            let rho = DensityMatrix::new(space, ch.apply(&rho0.matrix)).unwrap();
            prop_assert!((rho.matrix.trace().re - 1.0).abs() < 1e-9);
            prop_assert!(rho.validate(1e-9, 1e-10, -1e-8).is_ok(), "{:?}", rho.validate(1e-9, 1e-10, -1e-8));
        }
    }

    #[test]
    fn seeded_ensembles_are_reproducible(n in 1usize..500, seed in any::<u64>(), spread in 0.0f64..0.5) {
        let a = sample_ensemble(n, 0.1, 1.0, spread, seed).unwrap();
        let b = sample_ensemble(n, 0.1, 1.0, spread, seed).unwrap();
        prop_assert_eq!(a.couplings(), b.couplings());
        prop_assert_eq!(a.detunings(), b.detunings());
        let back = EnsembleSpec::from_text(&a.to_text()).unwrap();
        prop_assert_eq!(back.couplings(), a.couplings());
        prop_assert_eq!(collective_overlaps(&a).unwrap().s.to_bits(), collective_overlaps(&b).unwrap().s.to_bits());
    }

    #[test]
    fn seeded_monte_carlo_is_reproducible(seed in any::<u64>(), kappa_tau in 0.05f64..0.5) {
        let cfg = ReadoutConfig::new(0.1, 1.0, kappa_tau, 200.0).unwrap();
        let gamma = squadd::readout::gamma_switching(&cfg);
        let a = single_shot_with_gamma(&cfg, gamma, 2000, seed).unwrap();
        let b = single_shot_with_gamma(&cfg, gamma, 2000, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn seeded_sweeps_are_bit_identical() {
    let mut fig2 = SweepSpec::default_for(Experiment::Fig2ErrorVsNp);
    fig2.grids.insert("n_p".into(), vec![4.0, 16.0]);
    fig2.grids.insert("kappa_over_g".into(), vec![0.0, 0.1]);
    let mut fig3 = SweepSpec::default_for(Experiment::Fig3Spectrum);
    fig3.params.insert("n".into(), 200.0);
    fig3.grids.insert("dxi_tau".into(), vec![0.0, 0.5, 1.0]);
    fig3.seed = 77;
    let mut fig5b = SweepSpec::default_for(Experiment::Fig5bSnrVsKappatau);
    fig5b.grids.insert("kappa_tau".into(), vec![0.2, 0.5]);
    fig5b.params.insert("n_traj".into(), 500.0);
    fig5b.seed = 9;
    for spec in [fig2, fig3, fig5b] {
        let a = run(&spec).unwrap().to_csv().unwrap();
        let b = run(&spec).unwrap().to_csv().unwrap();
        assert_eq!(a, b, "{}", spec.experiment);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| run(&spec).unwrap().to_csv().unwrap());
        assert_eq!(a, c, "{} with 3 threads", spec.experiment);
    }
}
