"""Acceptance suite: one test per release criterion, tolerances pinned.

Each test prints a single PASS line once its assertions hold, so running
`pytest tests/test_acceptance.py -s` gives a per-criterion scoreboard.
"""

import dataclasses
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from qudit_readout import linalg, lindblad, sme
from qudit_readout.ensemble import (EnsembleConfig, cluster_report,
                                    detect_jumps, reference_iq_means,
                                    run_ensemble, sweep)
from qudit_readout.linalg import HilbertLayout
from qudit_readout.model import (DecoherenceSpec, SystemParams,
                                 dephasing_rates, level_pairs,
                                 measurement_rates, steady_state_amplitudes)

TWO_PI = 2 * np.pi

RHO_BENCH = np.array([[0.5, 0.3, 0.36],
                      [0.3, 0.2, 0.24],
                      [0.36, 0.24, 0.3]], dtype=complex)
P_BENCH = np.array([0.5, 0.2, 0.3])
C_BENCH = {(0, 1): 0.3 + 0j, (0, 2): 0.36 + 0j, (1, 2): 0.24 + 0j}

KET_EQUAL = np.ones(3, dtype=complex) / np.sqrt(3)
# 2% depolarization keeps the Ito stepper inside the positivity clamp
RHO_EQUAL_REG = 0.98 * np.outer(KET_EQUAL, KET_EQUAL.conj()) + 0.02 * np.eye(3) / 3


def experiment_params(eta=0.0, epsilon=12.0, gamma1=None, gamma_phi=None,
                      delta_mhz=-0.6, omega_tilde=(0.0, 0.0, 0.0)):
    """Desk-scale configuration built on the measured device rates."""
    return SystemParams.transmon(
        D=3, chi_qr=TWO_PI * 0.6, kappa=TWO_PI * 2.7, epsilon=epsilon,
        delta_rd=TWO_PI * delta_mhz, omega_tilde=omega_tilde,
        decoherence=DecoherenceSpec(gamma1=gamma1 or {},
                                    gamma_phi=gamma_phi or {(0, 2): 1.0 / 3.0}),
        eta=eta)


def report(name, detail):
    print(f"\nACCEPTANCE {name}: PASS ({detail})")


def test_steady_state_identity():
    """Gamma_m(inf) = 2 Gamma_d(inf) to relative 1e-10 over 100 random draws."""
    t0 = time.time()
    rng = np.random.default_rng(2026)
    for _ in range(100):
        d = int(rng.integers(2, 5))
        kappa = rng.uniform(0.1, 10.0)
        spreads = rng.uniform(0.05, 5.0, size=d - 1)
        chi = np.concatenate([[0.0], np.cumsum(spreads)]) + rng.uniform(-2, 2)
        delta = rng.uniform(-10.0, 10.0)
        eps = rng.uniform(0.0, 3.0) * np.exp(2j * np.pi * rng.uniform())
        alpha = steady_state_amplitudes(chi, kappa, eps, delta)
        gm = measurement_rates(alpha, kappa)
        gd = dephasing_rates(alpha, chi)
        for pair in level_pairs(d):
            assert gm[pair] == pytest.approx(2.0 * gd[pair], rel=1e-10, abs=1e-13)
    elapsed = time.time() - t0
    assert elapsed < 1.0
    report("steady-state identity", f"100 draws, {elapsed:.2f} s")


def test_oracle_equivalence_analytic_vs_full_me():
    """Materialized analytic state vs RK4 of the combined equation < 1e-6."""
    t0 = time.time()
    params = experiment_params(epsilon=20.0, omega_tilde=(0.0, 1.0, 2.5))
    lay = HilbertLayout(3, 40)
    dt = lindblad.default_me_dt(params)
    n = int(round(5.0 / params.kappa / dt))
    t_grid = np.arange(n + 1) * dt
    vac = np.zeros((40, 40), dtype=complex)
    vac[0, 0] = 1.0
    gen = lindblad.build_combined_generator(params, lay)
    sol = lindblad.integrate_me(np.kron(RHO_BENCH, vac), gen, t_grid)
    lindblad.check_fock_leakage(sol.states[-1], lay)
    state = lindblad.analytic_combined_state(P_BENCH, C_BENCH, params, t_grid)
    worst = 0.0
    for idx in (0, n // 4, n // 2, 3 * n // 4, n):
        mat = lindblad.materialize_combined_state(state, idx, lay, params)
        worst = max(worst, float(np.max(np.abs(mat - sol.states[idx]))))
    elapsed = time.time() - t0
    assert worst < 1e-6
    assert elapsed < 30.0
    report("oracle equivalence", f"max entrywise err {worst:.2e}, "
           f"n_fock=40, {elapsed:.1f} s")


def test_effective_me_validity():
    """Partial-traced full ME vs effective ME: populations 1e-6 everywhere,
    coherence magnitudes within 2% after 10/kappa."""
    t0 = time.time()
    params = experiment_params(
        epsilon=12.0, omega_tilde=(0.0, 1.0, 2.5),
        gamma1={(0, 1): 1.0 / 35.0, (1, 2): 1.0 / 35.0},
        gamma_phi={(0, 2): 1.0 / 3.0})
    lay = HilbertLayout(3, 25)
    dt = lindblad.default_me_dt(params)
    n = int(round(14.0 / params.kappa / dt))
    t_grid = np.arange(n + 1) * dt
    vac = np.zeros((25, 25), dtype=complex)
    vac[0, 0] = 1.0
    gen = lindblad.build_combined_generator(params, lay)
    sol_full = lindblad.integrate_me(np.kron(RHO_BENCH, vac), gen, t_grid)
    sol_eff = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid)
    i_after = int(round(10.0 / params.kappa / dt))
    worst_pop, worst_coh = 0.0, 0.0
    for i in range(n + 1):
        red = linalg.partial_trace(sol_full.states[i], lay, "qudit")
        eff = sol_eff.states[i]
        worst_pop = max(worst_pop, float(np.max(np.abs(
            np.diag(red).real - np.diag(eff).real))))
        if i >= i_after:
            for (j, k) in params.pairs:
                a, b = abs(red[j, k]), abs(eff[j, k])
                if a > 1e-8:
                    worst_coh = max(worst_coh, abs(a - b) / a)
    elapsed = time.time() - t0
    assert worst_pop < 1e-6
    assert worst_coh < 0.02
    assert elapsed < 60.0
    report("effective-ME validity", f"pop err {worst_pop:.2e}, "
           f"coh rel err {worst_coh:.2e}, {elapsed:.1f} s")


def test_eta_zero_reduction_bitwise():
    """SME stepping at eta = 0 equals deterministic Euler stepping bit-for-bit."""
    t0 = time.time()
    params = experiment_params(eta=0.0, gamma1={(0, 1): 0.05})
    for seed in (1, 99, 123456789):
        stoch = sme.run_effective_sme_batch(params, RHO_BENCH, 400, 1e-3, seed,
                                            np.array([0, 1]), thin=100,
                                            sample_ids={0, 1})
        det = sme.run_effective_sme_batch(params, RHO_BENCH, 400, 1e-3, 0,
                                          np.array([0]), thin=100,
                                          sample_ids={0})
        for tid in (0, 1):
            assert np.array_equal(stoch.sample_rho[tid], det.sample_rho[0])
    # single-step identity with arbitrary increments
    alpha = steady_state_amplitudes(params.chi, params.kappa, params.epsilon,
                                    params.delta_rd)
    ops = sme.build_measurement_operators(alpha, params.phi)
    for dw in ((0.0, 0.0), (0.5, -0.3), (123.0, 456.0)):
        assert np.array_equal(sme.sme_step(RHO_BENCH, ops, params, 1e-3, dw),
                              sme.effective_euler_step(RHO_BENCH, ops, params, 1e-3))
    elapsed = time.time() - t0
    assert elapsed < 1.0
    report("eta=0 reduction", f"bitwise over 3 seeds, {elapsed:.2f} s")


def test_ensemble_convergence():
    """1000-trajectory mean within 3/sqrt(1000) of the effective ME per element
    at every output step; mean populations flat to the same bound."""
    t0 = time.time()
    params = experiment_params(eta=0.25)
    n_traj, t_final, dt = 1000, 6.0, 1e-3
    cfg = EnsembleConfig(params=params, rho0=RHO_BENCH, n_trajectories=n_traj,
                         t_final=t_final, dt=dt, master_seed=20260810, thin=20,
                         sample_trajectories=1)
    res = run_ensemble(cfg)
    assert res.aborted.sum() == 0
    n_steps = cfg.n_steps
    sol = lindblad.integrate_effective_me(RHO_BENCH, params,
                                          np.arange(n_steps + 1) * dt)
    sel = np.rint(res.stats.t / dt).astype(int)
    bound = 3.0 / np.sqrt(n_traj)
    err = float(np.max(np.abs(res.stats.mean_rho - sol.states[sel])))
    assert err <= bound
    pops = np.real(np.einsum("tjj->tj", res.stats.mean_rho))
    flat = float(np.max(np.abs(pops - P_BENCH[None, :])))
    assert flat <= bound
    # single-trajectory entropy rises then collapses
    s_series = np.array([linalg.von_neumann_entropy(r)
                         for r in res.sample_rho[0]])
    assert s_series.max() > s_series[0]
    assert s_series[-1] < 0.05
    elapsed = time.time() - t0
    assert elapsed < 300.0
    report("ensemble convergence", f"mean err {err:.3f} <= {bound:.3f}, "
           f"pop flatness {flat:.3f}, {elapsed:.1f} s")


def test_pointer_state_statistics():
    """With gamma_1 = 0: >= 95% of trajectories purify past 0.99 by
    t = 20 / min Gamma_m, and absorbed-state frequencies match the initial
    populations by chi-square at the 1% level."""
    t0 = time.time()
    params = experiment_params(eta=0.5)
    alpha_ss = steady_state_amplitudes(params.chi, params.kappa, params.epsilon,
                                       params.delta_rd)
    gm = measurement_rates(alpha_ss, params.kappa)
    t_final = 20.0 / min(gm.values())
    dt = min(1e-3, sme.default_sme_dt(params))
    n_traj = 1000
    cfg = EnsembleConfig(params=params, rho0=RHO_BENCH, n_trajectories=n_traj,
                         t_final=t_final, dt=dt, master_seed=7,
                         thin=cfg_steps(t_final, dt))
    res = run_ensemble(cfg)
    assert res.aborted.sum() == 0
    final_pops = res.populations[:, -1, :]
    converged = final_pops.max(axis=1) > 0.99
    frac = converged.mean()
    assert frac >= 0.95
    absorbed = final_pops.argmax(axis=1)
    counts = np.bincount(absorbed, minlength=3)
    stat = chisquare(counts, f_exp=n_traj * P_BENCH)
    assert stat.pvalue >= 0.01
    elapsed = time.time() - t0
    report("pointer-state statistics",
           f"converged {frac:.1%}, counts {counts.tolist()} vs "
           f"{(n_traj * P_BENCH).astype(int).tolist()}, p={stat.pvalue:.3f}, "
           f"{elapsed:.1f} s")


def cfg_steps(t_final, dt):
    return int(round(t_final / dt))


def _settled_timeline(pops, t, t_final):
    """(start_time, level) segments of settled occupation, from jump events."""
    events = detect_jumps(pops, t, threshold=0.6, hold_time=1.0)
    settled = pops.max(axis=1) > 0.9
    if not settled.any():
        return []
    i0 = int(np.argmax(settled))
    timeline = [(t[i0], int(pops[i0].argmax()))]
    timeline += [(e.t, e.target) for e in events if e.t > t[i0]]
    return timeline


def test_jump_physics():
    """40 us measurement with T1 = 35 us: jump hazard consistent with the
    exponential-decay probability within 3 sigma; inter-cluster stream
    points present."""
    t0 = time.time()
    T = 40.0
    params = experiment_params(
        eta=0.04,
        gamma1={(0, 1): 1.0 / 35.0, (1, 2): 1.0 / 35.0, (0, 2): 1.0 / 1000.0})
    n_traj = 1000
    cfg = EnsembleConfig(params=params, rho0=RHO_EQUAL_REG,
                         n_trajectories=n_traj, t_final=T, dt=1e-3,
                         master_seed=20260811, thin=40, window=(0.0, T))
    res = run_ensemble(cfg)
    assert res.aborted.sum() <= 0.01 * n_traj
    t_out = res.stats.t

    # censored hazard estimate over settled segments of |e> and |f>
    def hazard(level, targets):
        exposure, events = 0.0, 0
        for i in np.where(res.kept)[0]:
            timeline = _settled_timeline(res.populations[i], t_out, T)
            for si, (t_i, L_i) in enumerate(timeline):
                t_end = timeline[si + 1][0] if si + 1 < len(timeline) else T
                if L_i == level:
                    exposure += t_end - t_i
                    if si + 1 < len(timeline) and timeline[si + 1][1] in targets:
                        events += 1
        return events / exposure, events

    for label, level, targets, rate in (
            ("e", 1, {0}, 1.0 / 35.0),
            ("f", 2, {0, 1}, 1.0 / 35.0 + 1.0 / 1000.0)):
        gam_hat, n_events = hazard(level, targets)
        p_obs = 1.0 - np.exp(-gam_hat * T)
        p_exp = 1.0 - np.exp(-rate * T)
        sigma_p = (gam_hat / np.sqrt(max(n_events, 1))) * T * np.exp(-rate * T)
        assert abs(p_obs - p_exp) <= 3.0 * sigma_p, (
            f"{label}: {p_obs:.3f} vs {p_exp:.3f} (3sig {3 * sigma_p:.3f})")

    refs = reference_iq_means(params, (0.0, T))
    rep = cluster_report(res.iq_points[res.kept], refs)
    assert rep.stream_count > 0
    elapsed = time.time() - t0
    report("jump physics", f"stream points {rep.stream_count}, "
           f"hazards within 3 sigma, {elapsed:.1f} s")


def test_shot_noise_scaling():
    """Cluster width over T in {0.5, 1, 2, 3} us fits sigma ~ T^-0.5 +- 0.1."""
    t0 = time.time()
    params = experiment_params(eta=0.04)
    T_grid = [0.5, 1.0, 2.0, 3.0]
    sigmas = []
    for T in T_grid:
        cfg = EnsembleConfig(params=params, rho0=RHO_EQUAL_REG,
                             n_trajectories=600, t_final=T, dt=1e-3,
                             master_seed=20260812, thin=cfg_steps(T, 1e-3),
                             window=(0.0, T))
        res = run_ensemble(cfg)
        # group by the trajectory's final dominant level: the physical
        # cluster width without nearest-mean truncation bias
        final = res.populations[:, -1, :].argmax(axis=1)
        widths = []
        for a in range(3):
            pts = res.iq_points[res.kept & (final == a)]
            xy = np.stack([pts.real, pts.imag], axis=1)
            widths.append(np.sqrt(0.5 * np.trace(np.cov(xy.T))))
        sigmas.append(float(np.mean(widths)))
    slope = np.polyfit(np.log(T_grid), np.log(sigmas), 1)[0]
    elapsed = time.time() - t0
    assert -0.6 <= slope <= -0.4
    report("shot-noise scaling", f"sigma(T) = {np.round(sigmas, 3).tolist()}, "
           f"exponent {slope:.3f}, {elapsed:.1f} s")


def test_cluster_geometry():
    """Frequency-sweep cluster centers sit on the detuning circle within
    3 sigma; at Delta_rd = -chi the three clusters are equally spaced."""
    t0 = time.time()
    params = experiment_params(eta=0.3)
    cfg = EnsembleConfig(params=params, rho0=RHO_EQUAL_REG, n_trajectories=500,
                         t_final=3.0, dt=1e-3, master_seed=3,
                         thin=3000, window=(0.3, 3.0))
    offsets_mhz = [-1.2, -0.9, -0.6, -0.3, 0.0, 0.3]
    points = sweep(cfg, "readout_frequency", [TWO_PI * o for o in offsets_mhz])
    center = 1j * 2.0 * np.sqrt(params.eta * params.kappa) \
        * abs(params.epsilon) / params.kappa
    radius = abs(center)
    worst = 0.0
    for pt in points:
        for a in range(3):
            mu = pt.report.means[a]
            n_a = max(int(pt.report.counts[a]), 1)
            sig_center = pt.report.sigma(a) / np.sqrt(n_a)
            dev = abs(abs(mu - center) - radius)
            assert dev <= 3.0 * sig_center, (
                f"offset {pt.value / TWO_PI:.2f} MHz cluster {a}: "
                f"dev {dev:.3f} > 3 sigma {3 * sig_center:.3f}")
            worst = max(worst, dev / (3.0 * sig_center))
    # symmetric point: drive at omega_r + chi, i.e. Delta_rd = -chi
    sym = points[offsets_mhz.index(-0.6)]
    d_ge = abs(sym.report.means[0] - sym.report.means[1])
    d_ef = abs(sym.report.means[1] - sym.report.means[2])
    sig_sep = np.sqrt(sum(
        (sym.report.sigma(a) / np.sqrt(max(int(sym.report.counts[a]), 1))) ** 2
        for a in range(3)))
    assert abs(d_ge - d_ef) <= 3.0 * sig_sep
    elapsed = time.time() - t0
    report("cluster geometry", f"worst circle dev {worst:.2f} of 3 sigma, "
           f"|d_ge - d_ef| = {abs(d_ge - d_ef):.3f} <= {3 * sig_sep:.3f}, "
           f"{elapsed:.1f} s")


def test_numerics():
    """RK4 observed order >= 3.5 on the master equation; Euler-Maruyama
    ensemble means stable under dt halving; invariants hold on every step."""
    t0 = time.time()
    # RK4 order on a small combined system
    params = SystemParams(omega_tilde=(0.0, 1.0), chi=(0.0, 1.2), kappa=2.0,
                          epsilon=0.7, delta_rd=-0.5,
                          decoherence=DecoherenceSpec(gamma_phi={(0, 1): 0.2}))
    lay = HilbertLayout(2, 8)
    vac = np.zeros((8, 8), dtype=complex)
    vac[0, 0] = 1.0
    rho0 = np.kron(np.array([[0.6, 0.3], [0.3, 0.4]], dtype=complex), vac)
    gen = lindblad.build_combined_generator(params, lay)

    def final_state(n):
        sol = lindblad.integrate_me(rho0, gen, np.linspace(0.0, 1.0, n + 1),
                                    check_every=1)
        return sol.states[-1]

    e1 = np.max(np.abs(final_state(128) - final_state(256)))
    e2 = np.max(np.abs(final_state(256) - final_state(512)))
    order = float(np.log2(e1 / e2))
    assert order >= 3.5

    # weak-order consistency: dt halving moves ensemble means < MC error
    p_sme = experiment_params(eta=0.3)
    n_traj = 600
    coarse = sme.run_effective_sme_batch(p_sme, RHO_BENCH, 1000, 2e-3, 31,
                                         np.arange(n_traj), thin=1000)
    fine = sme.run_effective_sme_batch(p_sme, RHO_BENCH, 2000, 1e-3, 32,
                                       np.arange(n_traj), thin=2000)
    m1 = coarse.sum_rho[-1] / coarse.alive_count[-1]
    m2 = fine.sum_rho[-1] / fine.alive_count[-1]
    weak_dev = float(np.max(np.abs(m1 - m2)))
    assert weak_dev < 2.0 * 3.0 / np.sqrt(n_traj)
    assert coarse.aborted.sum() == 0 and fine.aborted.sum() == 0

    # invariants on accepted stochastic steps: final states are physical
    for rho in fine.final_rho[::50]:
        diag = linalg.validate_density(rho)
        assert diag.ok()
    elapsed = time.time() - t0
    report("numerics", f"RK4 order {order:.2f}, weak-order dev {weak_dev:.3f}, "
           f"{elapsed:.1f} s")
