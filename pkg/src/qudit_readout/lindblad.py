"""Unconditioned dynamics: combined-system and effective qudit master equations.

The combined-system integrator is the numerical oracle; the analytic
coherent-amplitude solution and the effective qudit equation are the fast
paths it certifies.  Pairwise pure-dephasing rates are applied per
coherence block (each (j,k) block decays at exactly gamma_phi_jk), which
is the convention every closed-form expression in this package uses; see
`model.pairwise_from_diagonal_dephasing` for the channel-form equivalent.
"""

from __future__ import annotations

import dataclasses
import logging
import warnings

import numpy as np

from . import linalg
from .linalg import HilbertLayout, StateValidationError
from .model import SystemParams, amplitude_trajectory, dephasing_rates, frequency_shifts, level_pairs

log = logging.getLogger(__name__)

TOP_FOCK_LEAKAGE_TOL = 1e-8


def default_me_dt(params: SystemParams) -> float:
    """Fixed RK4 step: resolve kappa, the largest detuning, and every rate."""
    rates = [params.kappa, abs(params.delta_rd) + max(abs(c) for c in params.chi)]
    rates += list(params.decoherence.gamma1.values())
    rates += list(params.decoherence.gamma_phi.values())
    rates += [abs(params.epsilon)]
    return 0.02 / max(r for r in rates if r > 0)


def _block_damping_matrix(params: SystemParams, gamma_d: dict | None = None,
                          shifts: dict | None = None) -> np.ndarray:
    """Elementwise coefficient matrix Lambda with Lambda_jk acting on rho_jk.

    For j < k: Lambda_jk = -(gamma_phi_jk + Gamma_d_jk) + i * shift_jk, the
    per-block dephasing plus (optionally) the measurement-induced frequency
    shift; the (k, j) entry is the conjugate, diagonals stay zero.
    """
    d = params.D
    lam = np.zeros((d, d), dtype=complex)
    for j, k in params.pairs:
        rate = params.decoherence.gamma_phi_rate(j, k)
        if gamma_d is not None:
            rate += gamma_d[(j, k)]
        val = -rate
        if shifts is not None:
            val = val + 1j * shifts[(j, k)]
        lam[j, k] = val
        lam[k, j] = np.conj(val)
    return lam


# ---------------------------------------------------------------------------
# combined-system generator and RK4 integration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class CombinedGenerator:
    """Right-hand side of the combined qudit+resonator master equation.

    Time-independent in the drive rotating frame: coherent part
    H = sum_j w_j Pi_j + Delta_rd n + sum_j chi_j Pi_j n - (eps a^dag + h.c.),
    resonator decay kappa (thermal when N_bar > 0), qudit decay channels,
    and per-block pure dephasing.
    """

    params: SystemParams
    layout: HilbertLayout

    def __post_init__(self):
        from .model import check_photon_budget, steady_state_amplitudes

        p, lay = self.params, self.layout
        if lay.d_qudit != p.D:
            raise linalg.DimensionError(
                f"layout d_qudit={lay.d_qudit} != params D={p.D}")
        if not lay.has_resonator:
            raise linalg.DimensionError("combined generator needs n_fock >= 1")
        a_ss = steady_state_amplitudes(p.chi, p.kappa, p.epsilon, p.delta_rd)
        check_photon_budget(float(np.max(np.abs(a_ss))), p.n_crit)
        a = linalg.build_operator("annihilation", lay)
        n = a.conj().T @ a
        h = np.zeros((lay.dim, lay.dim), dtype=complex)
        for j in range(p.D):
            pj = linalg.build_operator("projector", lay, j=j)
            h += p.omega_tilde[j] * pj + p.chi[j] * (pj @ n)
        h += p.delta_rd * n
        h -= p.epsilon * a.conj().T + np.conj(p.epsilon) * a
        self.h = h
        self.a = a
        self.decay_channels = [
            (rate, linalg.build_operator("sigma", lay, j=j, k=k))
            for (j, k), rate in p.decoherence.gamma1.items() if rate > 0
        ]
        lam_q = _block_damping_matrix(p)
        self.block_lambda = np.repeat(np.repeat(lam_q, lay.n_fock, axis=0),
                                      lay.n_fock, axis=1)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        p = self.params
        out = -1j * (self.h @ rho - rho @ self.h)
        out += p.kappa * (p.N_bar + 1.0) * linalg.dissipator(self.a, rho)
        if p.N_bar > 0:
            out += p.kappa * p.N_bar * linalg.dissipator(self.a.conj().T, rho)
        for rate, op in self.decay_channels:
            out += rate * linalg.dissipator(op, rho)
        out += self.block_lambda * rho
        return out


def build_combined_generator(params: SystemParams, layout: HilbertLayout) -> CombinedGenerator:
    return CombinedGenerator(params, layout)


@dataclasses.dataclass
class MESolution:
    t: np.ndarray
    states: np.ndarray  # (len(t), dim, dim)
    trace_drift: float  # largest |tr - 1| seen before renormalization


def integrate_me(rho0: np.ndarray, generator, t_grid: np.ndarray, *,
                 method: str = "rk4", check_every: int = 10) -> MESolution:
    """Fixed-step integration of d(rho)/dt = generator(t, rho) on t_grid.

    The grid spacing is the step size.  Trace is renormalized every step
    with the drift logged; a state whose smallest eigenvalue dips below
    the clamp aborts with diagnostics.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 2 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing with >= 2 points")
    linalg.require_valid_density(rho0, "initial state")
    rho = np.array(rho0, dtype=complex)
    out = np.empty((len(t_grid),) + rho.shape, dtype=complex)
    out[0] = rho
    worst_drift = 0.0
    for i in range(len(t_grid) - 1):
        t, dt = t_grid[i], t_grid[i + 1] - t_grid[i]
        if method == "rk4":
            k1 = generator(t, rho)
            k2 = generator(t + 0.5 * dt, rho + 0.5 * dt * k1)
            k3 = generator(t + 0.5 * dt, rho + 0.5 * dt * k2)
            k4 = generator(t + dt, rho + dt * k3)
            rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        elif method == "euler":
            rho = rho + dt * generator(t, rho)
        else:
            raise ValueError(f"unknown method {method!r}")
        tr = np.trace(rho).real
        worst_drift = max(worst_drift, abs(tr - 1.0))
        rho = rho / tr
        if (i + 1) % check_every == 0 or i == len(t_grid) - 2:
            diag = linalg.validate_density(rho)
            if diag.min_eigenvalue < linalg.EIG_CLAMP:
                raise StateValidationError(
                    f"positivity lost at t={t_grid[i + 1]:.6g}: "
                    f"min eigenvalue {diag.min_eigenvalue:.3e}")
        out[i + 1] = rho
    if worst_drift > 1e-6:
        log.warning("trace drift reached %.3e during integration", worst_drift)
    return MESolution(t=t_grid, states=out, trace_drift=worst_drift)


def check_fock_leakage(rho: np.ndarray, layout: HilbertLayout) -> float:
    """Population of the top two Fock levels; errors above the leakage tolerance."""
    res = linalg.partial_trace(rho, layout, keep="resonator")
    leak = float(np.real(res[-1, -1] + res[-2, -2]))
    if leak > TOP_FOCK_LEAKAGE_TOL:
        raise StateValidationError(
            f"Fock truncation too small: top-two-level population {leak:.3e}")
    return leak


# ---------------------------------------------------------------------------
# analytic combined-state solution (long-T1)
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class AnalyticCombinedState:
    """Populations, coherence envelopes and coherent amplitudes vs time."""

    t: np.ndarray
    populations: np.ndarray          # (D,), constant in time
    coherences: dict[tuple[int, int], np.ndarray]  # c_jk(t), j < k
    alpha: np.ndarray                # (len(t), D)


def _coherence_envelope(c0: complex, j: int, k: int, params: SystemParams,
                        t: np.ndarray, alpha0: np.ndarray) -> np.ndarray:
    """Closed-form c_jk(t).

    c_jk obeys dc/dt = [i(w_k - w_j) - gamma2_jk + i(chi_k - chi_j) a_j a_k^*] c,
    and with a_j(t) = A_j + B_j e^{-r_j t} the exponent integrates exactly.
    """
    dec = params.decoherence
    gamma2 = dec.gamma_phi_rate(j, k) + 0.5 * (dec.decay_out_of(j) + dec.decay_out_of(k))
    chi = np.asarray(params.chi, dtype=float)
    r = 1j * (params.delta_rd + chi) + 0.5 * params.kappa
    a_ss = params.epsilon / (params.delta_rd + chi - 0.5j * params.kappa)
    b = np.asarray(alpha0, dtype=complex) - a_ss

    aj, ak = a_ss[j], a_ss[k]
    bj, bk = b[j], b[k]
    rj, rk_c = r[j], np.conj(r[k])

    # integral of a_j(s) conj(a_k(s)) ds from 0 to t, term by term
    def expint(rate, t):
        # int_0^t e^{-rate s} ds, Re(rate) > 0 always holds here
        return (1.0 - np.exp(-rate * t)) / rate

    integral = (aj * np.conj(ak) * t
                + aj * np.conj(bk) * expint(rk_c, t)
                + bj * np.conj(ak) * expint(rj, t)
                + bj * np.conj(bk) * expint(rj + rk_c, t))
    exponent = (1j * (params.omega_tilde[k] - params.omega_tilde[j]) - gamma2) * t
    exponent = exponent + 1j * (chi[k] - chi[j]) * integral
    return c0 * np.exp(exponent)


def analytic_combined_state(p0: np.ndarray, c0: dict[tuple[int, int], complex],
                            params: SystemParams, t: np.ndarray,
                            alpha0: np.ndarray | None = None) -> AnalyticCombinedState:
    """Exact combined-state evolution in the long-T1 limit.

    Populations stay fixed; each coherence envelope and each coherent
    amplitude follows its closed-form exponential.  Finite T1 is not
    representable here and must go through the effective or full solver.
    """
    if not params.decoherence.is_long_t1():
        raise ValueError(
            "analytic combined solution requires gamma1 == 0 (long-T1 limit); "
            "use integrate_effective_me or integrate_me for finite T1")
    p0 = np.asarray(p0, dtype=float)
    if len(p0) != params.D or abs(p0.sum() - 1.0) > 1e-9 or np.any(p0 < -1e-12):
        raise ValueError("populations must be nonnegative and sum to 1")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if alpha0 is None:
        alpha0 = np.zeros(params.D, dtype=complex)
    alpha = amplitude_trajectory(t, params.chi, params.kappa, params.epsilon,
                                 params.delta_rd, alpha0=alpha0)
    coh = {}
    for j, k in params.pairs:
        c = c0.get((j, k), 0.0)
        coh[(j, k)] = (_coherence_envelope(c, j, k, params, t, alpha0)
                       if c != 0 else np.zeros(len(t), dtype=complex))
    return AnalyticCombinedState(t=t, populations=p0, coherences=coh, alpha=alpha)


def _cross_term(coeff_log: complex, alpha_a: complex, alpha_b: complex,
                n_fock: int) -> np.ndarray | None:
    """|alpha_a><alpha_b| scaled by exp(coeff_log), assembled in log space.

    Entry (n, m) = exp[coeff_log - conj(a_b) a_a + n ln a_a + m ln conj(a_b)
    - (ln n! + ln m!)/2]; the Gaussian normalizations cancel against the
    overlap divisor, which keeps far-separated coherent states finite.
    Returns None when even the peak entry overflows.
    """
    from scipy.special import gammaln

    n = np.arange(n_fock)
    log_fact = 0.5 * gammaln(n + 1.0)
    base = coeff_log - np.conj(alpha_b) * alpha_a

    def log_pows(z):
        if z == 0:
            out = np.full(n_fock, -np.inf, dtype=complex)
            out[0] = 0.0
            return out
        return n * np.log(z)

    row = log_pows(alpha_a) - log_fact
    col = log_pows(np.conj(alpha_b)) - log_fact
    expo = base + row[:, None] + col[None, :]
    if np.max(expo.real) > 700.0:
        return None
    return np.exp(expo)


def materialize_combined_state(state: AnalyticCombinedState, idx: int,
                               layout: HilbertLayout,
                               params: SystemParams) -> np.ndarray:
    """Dense density matrix of the analytic solution at time index idx.

    Populations ride on |a><a| x |alpha_a><alpha_a|; each coherence block is
    c_ab / <alpha_b|alpha_a> times |a><b| x |alpha_a><alpha_b|.  A cross term
    whose overlap-compensated coefficient overflows is dropped with a
    warning (its Fock-space representation is negligible).
    """
    d, nf = layout.d_qudit, layout.n_fock
    rho = np.zeros((layout.dim, layout.dim), dtype=complex)
    alpha = state.alpha[idx]
    kets = [linalg.coherent_ket(alpha[a], nf) for a in range(d)]
    for a in range(d):
        blk = np.outer(kets[a], np.conj(kets[a]))
        rho[a * nf:(a + 1) * nf, a * nf:(a + 1) * nf] += state.populations[a] * blk
    for (j, k), c_t in state.coherences.items():
        c = c_t[idx]
        if c == 0:
            continue
        blk = _cross_term(np.log(c), alpha[j], alpha[k], nf)
        if blk is None:
            warnings.warn(
                f"dropping ({j},{k}) cross term: coherent states too far "
                "separated to represent on the truncated Fock space", stacklevel=2)
            continue
        rho[j * nf:(j + 1) * nf, k * nf:(k + 1) * nf] += blk
        rho[k * nf:(k + 1) * nf, j * nf:(j + 1) * nf] += blk.conj().T
    return rho


def reduced_qudit_state(state: AnalyticCombinedState, idx: int) -> np.ndarray:
    """Qudit density matrix implied by the analytic solution at time index idx."""
    d = len(state.populations)
    rho = np.diag(state.populations.astype(complex))
    for (j, k), c_t in state.coherences.items():
        rho[j, k] = c_t[idx]
        rho[k, j] = np.conj(c_t[idx])
    return rho


# ---------------------------------------------------------------------------
# effective qudit master equation
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class EffectiveGenerator:
    """Reduced-qudit generator with time-dependent measurement dephasing.

    Populations follow the classical rate equations through the decay
    channels; each coherence block decays at gamma_phi + Gamma_d(t) and,
    when include_shifts is set, also picks up the measurement-induced
    frequency shift (which cannot be folded into a Hamiltonian for D >= 3).
    """

    params: SystemParams
    include_shifts: bool = False
    alpha0: np.ndarray | None = None
    drive_on: bool = True

    def __post_init__(self):
        p = self.params
        d = p.D
        self.h0 = np.diag(np.asarray(p.omega_tilde, dtype=complex))
        self.decay_channels = [
            (rate, linalg.sigma(j, k, d))
            for (j, k), rate in p.decoherence.gamma1.items() if rate > 0
        ]
        self._warned_negative = False

    def alphas(self, t) -> np.ndarray:
        if not self.drive_on:
            return np.zeros((np.size(t), self.params.D), dtype=complex)
        return amplitude_trajectory(np.atleast_1d(t), self.params.chi,
                                    self.params.kappa, self.params.epsilon,
                                    self.params.delta_rd, alpha0=self.alpha0)

    def damping_matrix(self, t: float) -> np.ndarray:
        p = self.params
        alpha = self.alphas(t)[0]
        gamma_d = dephasing_rates(alpha, p.chi)
        shifts = frequency_shifts(alpha, p.chi) if self.include_shifts else None
        total_min = min(p.decoherence.gamma_phi_rate(j, k) + gamma_d[(j, k)]
                        for j, k in p.pairs) if p.pairs else 0.0
        if total_min < 0 and not self._warned_negative:
            self._warned_negative = True
            log.info("transiently negative total dephasing (%.3e) at t=%.4g",
                     total_min, t)
        return _block_damping_matrix(p, gamma_d=gamma_d, shifts=shifts)

    def __call__(self, t: float, rho: np.ndarray) -> np.ndarray:
        out = -1j * (self.h0 @ rho - rho @ self.h0)
        for rate, op in self.decay_channels:
            out += rate * linalg.dissipator(op, rho)
        out += self.damping_matrix(t) * rho
        return out


def integrate_effective_me(rho0: np.ndarray, params: SystemParams,
                           t_grid: np.ndarray, *, method: str = "rk4",
                           include_shifts: bool = False,
                           alpha0: np.ndarray | None = None,
                           drive_on: bool = True) -> MESolution:
    gen = EffectiveGenerator(params, include_shifts=include_shifts,
                             alpha0=alpha0, drive_on=drive_on)
    return integrate_me(rho0, gen, t_grid, method=method)


def rate_equation_matrix(params: SystemParams) -> np.ndarray:
    """Classical rate matrix R with d(pops)/dt = R @ pops."""
    d = params.D
    r = np.zeros((d, d))
    for (j, k), rate in params.decoherence.gamma1.items():
        r[j, k] += rate
        r[k, k] -= rate
    return r


def thermal_variance(t, kappa: float, N_bar: float, N0: float):
    """N(t) = N_bar + (N0 - N_bar) exp(-kappa t)."""
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    if N_bar < 0:
        raise ValueError("N_bar must be >= 0")
    t = np.asarray(t, dtype=float)
    return N_bar + (N0 - N_bar) * np.exp(-kappa * t)
