import numpy as np
import pytest

from qudit_readout import linalg, lindblad
from qudit_readout.linalg import HilbertLayout, StateValidationError
from qudit_readout.model import DecoherenceSpec, SystemParams

RHO_BENCH = np.array([[0.5, 0.3, 0.36],
                      [0.3, 0.2, 0.24],
                      [0.36, 0.24, 0.3]], dtype=complex)
P_BENCH = np.array([0.5, 0.2, 0.3])
C_BENCH = {(0, 1): 0.3 + 0j, (0, 2): 0.36 + 0j, (1, 2): 0.24 + 0j}


def bench_params(**kw):
    defaults = dict(D=3, chi_qr=1.5, kappa=2.0, epsilon=0.8, delta_rd=-1.5,
                    omega_tilde=(0.0, 1.0, 2.5))
    defaults.update(kw)
    return SystemParams.transmon(**defaults)


def embed_with_vacuum(rho_q, n_fock):
    vac = np.zeros((n_fock, n_fock), dtype=complex)
    vac[0, 0] = 1.0
    return np.kron(rho_q, vac)


class TestCombinedGenerator:
    def test_diagonal_hamiltonian_fixes_diagonal_states(self):
        params = SystemParams(omega_tilde=(0.0, 1.0), chi=(0.0, 0.5),
                              kappa=1.0, epsilon=0.0, delta_rd=0.3)
        # kappa must be > 0 by contract; kill its effect with the vacuum
        lay = HilbertLayout(2, 3)
        gen = lindblad.build_combined_generator(params, lay)
        rho = embed_with_vacuum(np.diag([0.4, 0.6]).astype(complex), 3)
        np.testing.assert_allclose(gen(0.0, rho), 0.0, atol=1e-14)

    def test_single_photon_decay(self):
        params = SystemParams(omega_tilde=(0.0, 0.0), chi=(0.0, 0.0),
                              kappa=1.3, epsilon=0.0, delta_rd=0.0)
        lay = HilbertLayout(2, 3)
        gen = lindblad.build_combined_generator(params, lay)
        one = np.zeros((3, 3), dtype=complex)
        one[1, 1] = 1.0
        rho = np.kron(np.diag([1.0, 0.0]).astype(complex), one)
        out = gen(0.0, rho)
        red = linalg.partial_trace(out, lay, "resonator")
        np.testing.assert_allclose(red, 1.3 * np.diag([1.0, -1.0, 0.0]), atol=1e-13)

    def test_traceless_hermitian_output(self):
        rng = np.random.default_rng(0)
        params = bench_params(decoherence=DecoherenceSpec(
            gamma1={(0, 1): 0.1}, gamma_phi={(0, 2): 0.2}))
        lay = HilbertLayout(3, 6)
        gen = lindblad.build_combined_generator(params, lay)
        a = rng.normal(size=(18, 18)) + 1j * rng.normal(size=(18, 18))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        out = gen(0.0, rho)
        assert abs(np.trace(out)) < 1e-12
        assert np.max(np.abs(out - out.conj().T)) < 1e-12

    def test_pure_commutator_when_everything_off(self):
        params = SystemParams(omega_tilde=(0.0, 2.0), chi=(0.0, 1.0),
                              kappa=1e-12, epsilon=0.4, delta_rd=0.7)
        lay = HilbertLayout(2, 4)
        gen = lindblad.build_combined_generator(params, lay)
        rng = np.random.default_rng(1)
        a = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        rho = a @ a.conj().T
        rho /= np.trace(rho)
        expected = -1j * (gen.h @ rho - rho @ gen.h)
        np.testing.assert_allclose(gen(0.0, rho), expected, atol=1e-10)


class TestIntegrateME:
    def test_zero_generator_is_constant(self):
        rho0 = np.diag([0.7, 0.3]).astype(complex)
        sol = lindblad.integrate_me(rho0, lambda t, r: np.zeros_like(r),
                                    np.linspace(0, 1, 11))
        np.testing.assert_allclose(sol.states[-1], rho0, atol=1e-15)

    def test_unitary_purity_conserved(self):
        h = np.array([[0.0, 0.9], [0.9, 1.4]], dtype=complex)
        gen = lambda t, r: -1j * (h @ r - r @ h)
        psi = np.array([1.0, 0.0], dtype=complex)
        rho0 = np.outer(psi, psi)
        sol = lindblad.integrate_me(rho0, gen, np.linspace(0, 5, 501))
        purities = [linalg.purity(s) for s in sol.states]
        assert max(abs(p - 1.0) for p in purities) < 1e-8

    def test_rk4_convergence_order(self):
        # Richardson: halving dt should shrink the error ~16x (order >= 3.5)
        params = bench_params(decoherence=DecoherenceSpec(gamma_phi={(0, 1): 0.3}))
        gen = lindblad.EffectiveGenerator(params)
        t_final = 1.0

        def final_state(n):
            sol = lindblad.integrate_me(RHO_BENCH, gen, np.linspace(0, t_final, n + 1))
            return sol.states[-1]

        e1 = np.max(np.abs(final_state(100) - final_state(200)))
        e2 = np.max(np.abs(final_state(200) - final_state(400)))
        order = np.log2(e1 / e2)
        assert order >= 3.5

    def test_positivity_abort(self):
        bad_gen = lambda t, r: np.diag([1.0, -1.0]).astype(complex)
        with pytest.raises(StateValidationError):
            lindblad.integrate_me(np.diag([0.0, 1.0]).astype(complex), bad_gen,
                                  np.linspace(0, 2, 21), check_every=1)

    def test_bad_grid_rejected(self):
        with pytest.raises(ValueError):
            lindblad.integrate_me(np.eye(2, dtype=complex) / 2,
                                  lambda t, r: r, np.array([0.0, 0.0, 1.0]))


class TestAnalyticCombinedState:
    def test_pointer_branch_is_product_state(self):
        params = bench_params()
        lay = HilbertLayout(3, 14)
        t = np.array([0.0, 0.4, 1.2])
        state = lindblad.analytic_combined_state(
            np.array([1.0, 0.0, 0.0]), {}, params, t)
        for idx in range(3):
            rho = lindblad.materialize_combined_state(state, idx, lay, params)
            red_r = linalg.partial_trace(rho, lay, "resonator")
            ket = linalg.coherent_ket(state.alpha[idx, 0], 14)
            np.testing.assert_allclose(red_r, np.outer(ket, ket.conj()), atol=1e-10)
            red_q = linalg.partial_trace(rho, lay, "qudit")
            np.testing.assert_allclose(red_q, np.diag([1.0, 0, 0]), atol=1e-10)

    def test_free_evolution_keeps_coherence_magnitude(self):
        params = SystemParams(omega_tilde=(0.0, 2.2, 4.1), chi=(0.0, 0.0, 0.0),
                              kappa=1.0, epsilon=0.0, delta_rd=0.0)
        t = np.linspace(0, 4, 9)
        state = lindblad.analytic_combined_state(P_BENCH, C_BENCH, params, t)
        c01 = state.coherences[(0, 1)]
        np.testing.assert_allclose(np.abs(c01), 0.3, atol=1e-12)
        # phase advances at the transition frequency
        np.testing.assert_allclose(np.angle(c01[1] / c01[0]),
                                   np.angle(np.exp(1j * 2.2 * t[1])), atol=1e-12)

    def test_finite_t1_rejected(self):
        params = bench_params(decoherence=DecoherenceSpec(gamma1={(0, 1): 0.1}))
        with pytest.raises(ValueError, match="long-T1"):
            lindblad.analytic_combined_state(P_BENCH, C_BENCH, params, np.array([0.0]))

    def test_matches_full_me_integration(self):
        # oracle pairing: closed-form envelopes against RK4 of the combined
        # generator, with pure dephasing on
        params = bench_params(decoherence=DecoherenceSpec(gamma_phi={(0, 2): 0.05}))
        lay = HilbertLayout(3, 18)
        dt = lindblad.default_me_dt(params)
        n = int(round(5.0 / params.kappa / dt))
        t_grid = np.arange(n + 1) * dt
        gen = lindblad.build_combined_generator(params, lay)
        sol = lindblad.integrate_me(embed_with_vacuum(RHO_BENCH, 18), gen, t_grid)
        state = lindblad.analytic_combined_state(P_BENCH, C_BENCH, params, t_grid)
        for idx in (0, n // 3, n):
            mat = lindblad.materialize_combined_state(state, idx, lay, params)
            assert np.max(np.abs(mat - sol.states[idx])) < 1e-6

    def test_reduced_state_accessor(self):
        params = bench_params()
        state = lindblad.analytic_combined_state(P_BENCH, C_BENCH, params,
                                                 np.array([0.0]))
        np.testing.assert_allclose(lindblad.reduced_qudit_state(state, 0),
                                   RHO_BENCH, atol=1e-14)


class TestEffectiveME:
    def test_undriven_reduces_to_t1_t2(self):
        g_gf, g_ef = 0.08, 0.05
        params = SystemParams(
            omega_tilde=(0.0, 0.0, 0.0), chi=(0.0, 1.5, 3.0), kappa=2.0,
            epsilon=0.0, delta_rd=0.0,
            decoherence=DecoherenceSpec(gamma1={(0, 2): g_gf, (1, 2): g_ef}))
        t_grid = np.linspace(0.0, 8.0, 801)
        sol = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid)
        rho_ff = np.array([s[2, 2].real for s in sol.states])
        expected = RHO_BENCH[2, 2].real * np.exp(-(g_gf + g_ef) * t_grid)
        np.testing.assert_allclose(rho_ff, expected, atol=1e-8)

    def test_long_t1_coherence_decay_rate(self):
        # log-linear fit of |rho_ge| at steady-state drive equals
        # gamma_phi + Gamma_d(inf)
        from qudit_readout.model import dephasing_rates, steady_state_amplitudes

        g_phi = 0.12
        params = bench_params(decoherence=DecoherenceSpec(gamma_phi={(0, 1): g_phi}))
        a_ss = steady_state_amplitudes(params.chi, params.kappa, params.epsilon,
                                       params.delta_rd)
        gd_inf = dephasing_rates(a_ss, params.chi)[(0, 1)]
        dt = 2e-3
        t_grid = np.arange(0, 12.0, dt)
        sol = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid,
                                              alpha0=a_ss)
        mags = np.array([abs(s[0, 1]) for s in sol.states])
        slope = np.polyfit(t_grid, np.log(mags), 1)[0]
        assert -slope == pytest.approx(g_phi + gd_inf, rel=1e-4)

    def test_rate_equation_limit(self):
        # no coherences: diagonals must match the matrix exponential of the
        # classical rate equations
        from scipy.linalg import expm

        params = bench_params(decoherence=DecoherenceSpec(
            gamma1={(0, 1): 0.25, (0, 2): 0.1, (1, 2): 0.3}))
        rho0 = np.diag(P_BENCH).astype(complex)
        t_final = 4.0
        t_grid = np.linspace(0, t_final, 2001)
        sol = lindblad.integrate_effective_me(rho0, params, t_grid)
        r = lindblad.rate_equation_matrix(params)
        expected = expm(r * t_final) @ P_BENCH
        np.testing.assert_allclose(np.diag(sol.states[-1]).real, expected,
                                   atol=1e-9)

    def test_qnd_populations_constant(self):
        params = bench_params(decoherence=DecoherenceSpec(gamma_phi={(0, 1): 0.2}))
        t_grid = np.linspace(0, 6.0, 3001)
        sol = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid)
        pops = np.array([np.diag(s).real for s in sol.states])
        assert np.max(np.abs(pops - P_BENCH[None, :])) < 1e-9

    def test_include_shifts_changes_phase_not_magnitude(self):
        params = bench_params()
        t_grid = np.linspace(0, 2.0, 1001)
        plain = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid)
        shifted = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid,
                                                  include_shifts=True)
        m_plain = abs(plain.states[-1][0, 1])
        m_shift = abs(shifted.states[-1][0, 1])
        assert m_plain == pytest.approx(m_shift, rel=1e-7)
        assert abs(np.angle(plain.states[-1][0, 1])
                   - np.angle(shifted.states[-1][0, 1])) > 1e-3

    def test_matches_partial_traced_full_me(self):
        params = bench_params(decoherence=DecoherenceSpec(
            gamma1={(0, 1): 0.02, (1, 2): 0.03}, gamma_phi={(0, 2): 0.05}))
        lay = HilbertLayout(3, 18)
        dt = lindblad.default_me_dt(params)
        n = int(round(12.0 / params.kappa / dt))
        t_grid = np.arange(n + 1) * dt
        gen = lindblad.build_combined_generator(params, lay)
        sol_full = lindblad.integrate_me(embed_with_vacuum(RHO_BENCH, 18), gen, t_grid)
        sol_eff = lindblad.integrate_effective_me(RHO_BENCH, params, t_grid)
        i_after = int(round(10.0 / params.kappa / dt))
        for i in range(0, n + 1, 50):
            red = linalg.partial_trace(sol_full.states[i], lay, "qudit")
            eff = sol_eff.states[i]
            assert np.max(np.abs(np.diag(red).real - np.diag(eff).real)) < 1e-6
            if i >= i_after:
                for (j, k) in params.pairs:
                    a, b = abs(red[j, k]), abs(eff[j, k])
                    if a > 1e-8:
                        assert abs(a - b) / a < 0.02

    def test_trace_preserved_everywhere(self):
        params = bench_params(decoherence=DecoherenceSpec(gamma1={(0, 1): 0.1}))
        sol = lindblad.integrate_effective_me(RHO_BENCH, params,
                                              np.linspace(0, 3, 1501))
        for s in sol.states[::100]:
            assert abs(np.trace(s) - 1.0) < 1e-9


class TestThermal:
    def test_variance_examples(self):
        assert lindblad.thermal_variance(3.0, 1.0, 2.0, 2.0) == pytest.approx(2.0)
        assert lindblad.thermal_variance(1.5, 2.0, 0.0, 1.0) == pytest.approx(np.exp(-3.0))
        assert lindblad.thermal_variance(1.0, 1.0, 2.0, 0.0) == pytest.approx(
            2.0 - 2.0 * np.exp(-1.0), rel=1e-12)

    def test_variance_validates(self):
        with pytest.raises(ValueError):
            lindblad.thermal_variance(1.0, 0.0, 1.0, 0.0)
        with pytest.raises(ValueError):
            lindblad.thermal_variance(1.0, 1.0, -0.5, 0.0)

    def test_thermal_generator_reaches_nbar(self):
        params = SystemParams(omega_tilde=(0.0, 0.0), chi=(0.0, 0.0),
                              kappa=2.0, epsilon=0.0, delta_rd=0.0, N_bar=0.3)
        lay = HilbertLayout(2, 14)
        gen = lindblad.build_combined_generator(params, lay)
        rho0 = embed_with_vacuum(np.diag([1.0, 0.0]).astype(complex), 14)
        t_grid = np.arange(0, 8.0, 2e-3)
        sol = lindblad.integrate_me(rho0, gen, t_grid)
        n_op = linalg.build_operator("number", lay)
        nbar = np.real(np.trace(n_op @ sol.states[-1]))
        assert nbar == pytest.approx(0.3, abs=1e-6)


class TestPhotonBudget:
    def test_hot_drive_warns(self):
        params = SystemParams(omega_tilde=(0.0, 0.0), chi=(0.0, 1.0),
                              kappa=2.0, epsilon=8.0, delta_rd=0.0)
        with pytest.warns(UserWarning, match="n_crit"):
            lindblad.build_combined_generator(params, HilbertLayout(2, 90))
