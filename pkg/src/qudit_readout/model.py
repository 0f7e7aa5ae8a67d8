"""Physical parameters and closed-form dispersive-readout quantities.

Angular frequencies and rates are rad/us internally; config files speak
ordinary MHz and are converted on parse (see config.py).  Pair keys are
(j, k) with j < k throughout.
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np

RESONANCE_GUARD = 1e-9  # rad/us; closer than this to exact resonance is an error


class ResonanceError(ValueError):
    """A qudit transition is exactly resonant with the resonator."""


def level_pairs(d: int) -> list[tuple[int, int]]:
    return [(j, k) for j in range(d) for k in range(j + 1, d)]


@dataclasses.dataclass(frozen=True)
class QuditSpec:
    """Bare qudit: level frequencies and couplings to the resonator.

    omega[j] is the angular frequency of level j (omega[0] == 0 sets the
    ground-state reference).  g is the Hermitian coupling matrix; use
    `weakly_anharmonic` for the ladder preset built from a scalar g.
    """

    omega: tuple[float, ...]
    g: np.ndarray

    def __post_init__(self):
        if len(self.omega) < 2:
            raise ValueError("need at least two levels")
        if abs(self.omega[0]) > 1e-12:
            raise ValueError("omega[0] must be 0 (ground-state energy reference)")
        g = np.asarray(self.g, dtype=complex)
        if g.shape != (self.D, self.D):
            raise ValueError(f"coupling matrix shape {g.shape} != ({self.D},{self.D})")
        if np.max(np.abs(g - g.conj().T)) > 1e-12:
            raise ValueError("coupling matrix must be Hermitian")
        object.__setattr__(self, "g", g)

    @property
    def D(self) -> int:
        return len(self.omega)

    @staticmethod
    def weakly_anharmonic(D: int, omega_q: float, alpha_q: float, g: complex) -> "QuditSpec":
        """Ladder qudit: omega_j = j*omega_q + j(j-1)/2 * alpha_q, g_{j+1,j} = sqrt(j+1) g."""
        omega = tuple(j * omega_q + 0.5 * j * (j - 1) * alpha_q for j in range(D))
        gm = np.zeros((D, D), dtype=complex)
        for j in range(D - 1):
            gm[j + 1, j] = np.sqrt(j + 1) * g
            gm[j, j + 1] = np.sqrt(j + 1) * np.conj(g)
        return QuditSpec(omega=omega, g=gm)


@dataclasses.dataclass(frozen=True)
class ResonatorSpec:
    """Readout resonator, its ports and the coherent probe."""

    omega_r: float
    kappa_in: float
    kappa_out: float
    kappa_int: float
    a_in_bar: complex
    omega_d: float
    N_bar: float = 0.0

    def __post_init__(self):
        for name in ("kappa_in", "kappa_out", "kappa_int"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.kappa <= 0:
            raise ValueError("total kappa must be > 0")
        if self.N_bar < 0:
            raise ValueError("N_bar must be >= 0")

    @property
    def kappa(self) -> float:
        return self.kappa_in + self.kappa_out + self.kappa_int

    @property
    def epsilon(self) -> complex:
        """Drive amplitude seen by the resonator, eps = sqrt(kappa_in) a_in."""
        return np.sqrt(self.kappa_in) * self.a_in_bar

    @property
    def delta_rd(self) -> float:
        return self.omega_r - self.omega_d


@dataclasses.dataclass(frozen=True)
class DecoherenceSpec:
    """Intrinsic decay and pairwise pure dephasing.

    gamma1[(j, k)] is the decay rate |k> -> |j> for j < k.
    gamma_phi[(j, k)] is the pure-dephasing rate of the (j, k) coherence:
    the rate at which rho_jk decays over and above the T1 contribution.
    """

    gamma1: dict[tuple[int, int], float] = dataclasses.field(default_factory=dict)
    gamma_phi: dict[tuple[int, int], float] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for table, name in ((self.gamma1, "gamma1"), (self.gamma_phi, "gamma_phi")):
            for (j, k), rate in table.items():
                if not j < k:
                    raise ValueError(f"{name} key ({j},{k}) must have j < k")
                if rate < 0:
                    raise ValueError(f"{name}[{(j, k)}] must be >= 0, got {rate}")

    def gamma1_rate(self, j: int, k: int) -> float:
        return self.gamma1.get((j, k), 0.0)

    def gamma_phi_rate(self, j: int, k: int) -> float:
        return self.gamma_phi.get((j, k), 0.0)

    def decay_out_of(self, k: int) -> float:
        """Total decay rate out of level k."""
        return sum(rate for (j, kk), rate in self.gamma1.items() if kk == k)

    def gamma2_rate(self, j: int, k: int) -> float:
        """Overall coherence decay: pure dephasing plus the T1 halves."""
        return self.gamma_phi_rate(j, k) + 0.5 * (self.decay_out_of(j) + self.decay_out_of(k))

    def is_long_t1(self) -> bool:
        return all(rate == 0.0 for rate in self.gamma1.values())


@dataclasses.dataclass(frozen=True)
class SystemParams:
    """Everything the solvers need, in the drive rotating frame.

    omega_tilde[j] are the (Lamb-shift-included) level frequencies,
    chi[j] the per-level dispersive pulls of the resonator.
    """

    omega_tilde: tuple[float, ...]
    chi: tuple[float, ...]
    kappa: float
    epsilon: complex
    delta_rd: float
    decoherence: DecoherenceSpec = dataclasses.field(default_factory=DecoherenceSpec)
    eta: float = 0.0
    phi: float = 0.0
    N_bar: float = 0.0
    n_crit: float = 10.0

    def __post_init__(self):
        if len(self.omega_tilde) != len(self.chi):
            raise ValueError("omega_tilde and chi must have the same length")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")
        if self.eta > 0.5:
            warnings.warn(
                f"eta={self.eta} exceeds the 1/2 heterodyne bound; "
                "treat results as an idealized detector", stacklevel=2)

    @property
    def D(self) -> int:
        return len(self.chi)

    @property
    def pairs(self) -> list[tuple[int, int]]:
        return level_pairs(self.D)

    @staticmethod
    def transmon(D: int, chi_qr: float, kappa: float, epsilon: complex,
                 delta_rd: float, *, omega_tilde: tuple[float, ...] | None = None,
                 decoherence: DecoherenceSpec | None = None,
                 eta: float = 0.0, phi: float = 0.0, N_bar: float = 0.0) -> "SystemParams":
        """Linear dispersive ladder: chi_j = j * chi_qr."""
        return SystemParams(
            omega_tilde=omega_tilde if omega_tilde is not None else (0.0,) * D,
            chi=tuple(j * chi_qr for j in range(D)),
            kappa=kappa, epsilon=epsilon, delta_rd=delta_rd,
            decoherence=decoherence or DecoherenceSpec(),
            eta=eta, phi=phi, N_bar=N_bar)

    @staticmethod
    def from_specs(qudit: QuditSpec, resonator: ResonatorSpec,
                   decoherence: DecoherenceSpec | None = None,
                   eta: float = 0.0, phi: float = 0.0) -> "SystemParams":
        """Microscopic route: derive shifts from couplings."""
        chi, lamb = dispersive_shifts(qudit, resonator)
        omega_tilde = tuple((w + l) - (qudit.omega[0] + lamb[0])
                            for w, l in zip(qudit.omega, lamb))
        return SystemParams(
            omega_tilde=omega_tilde, chi=tuple(chi),
            kappa=resonator.kappa, epsilon=resonator.epsilon,
            delta_rd=resonator.delta_rd,
            decoherence=decoherence or DecoherenceSpec(),
            eta=eta, phi=phi, N_bar=resonator.N_bar)


# ---------------------------------------------------------------------------
# shifts and rates
# ---------------------------------------------------------------------------


def dispersive_shifts(qudit: QuditSpec, resonator: ResonatorSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-level dispersive shift chi_j and Lamb shift Lambda_j.

    chi_jk = |g_jk|^2 / (omega_j - omega_k - omega_r);
    Lambda_j = sum_k chi_jk;  chi_j = sum_k (chi_jk - chi_kj).
    Exact resonance of a coupled pair is an error; a coupling within 10x
    of its detuning only warns (dispersive approximation degrading).
    """
    D = qudit.D
    omega_r = resonator.omega_r
    g = qudit.g
    chi_mat = np.zeros((D, D))
    for j in range(D):
        for k in range(D):
            if j == k or g[j, k] == 0:
                continue
            den = qudit.omega[j] - qudit.omega[k] - omega_r
            if abs(den) < RESONANCE_GUARD:
                raise ResonanceError(
                    f"levels ({j},{k}) are resonant with the resonator: "
                    f"|omega_{j} - omega_{k} - omega_r| = {abs(den):.3e} rad/us")
            ratio = abs(g[j, k]) / abs(den)
            if ratio > 0.1:
                warnings.warn(
                    f"coupling/detuning ratio {ratio:.3f} for pair ({j},{k}) exceeds 0.1; "
                    "dispersive approximation is marginal", stacklevel=2)
            chi_mat[j, k] = abs(g[j, k]) ** 2 / den
    lamb = chi_mat.sum(axis=1)
    chi = np.array([np.sum(chi_mat[j, :] - chi_mat[:, j]) for j in range(D)])
    return chi, lamb


def transmon_chi_qr(qudit_omega_q: float, alpha_q: float, g: complex, omega_r: float) -> float:
    """Second-order cross-Kerr coefficient of the two lowest transmon levels."""
    delta_qr = qudit_omega_q - omega_r
    return 2.0 * alpha_q * abs(g) ** 2 / (delta_qr * (delta_qr + alpha_q))


def amplitude_derivative(alpha: np.ndarray, chi: np.ndarray, kappa: float,
                         epsilon: complex, delta_rd: float) -> np.ndarray:
    """d(alpha_j)/dt = -i (Delta_rd + chi_j - i kappa/2) alpha_j + i eps."""
    alpha = np.asarray(alpha, dtype=complex)
    return -1j * (delta_rd + np.asarray(chi) - 0.5j * kappa) * alpha + 1j * epsilon


def steady_state_amplitudes(chi: np.ndarray, kappa: float, epsilon: complex,
                            delta_rd: float) -> np.ndarray:
    """alpha_j(inf) = eps / (Delta_rd + chi_j - i kappa/2)."""
    return epsilon / (delta_rd + np.asarray(chi, dtype=complex) - 0.5j * kappa)


def amplitude_trajectory(t: np.ndarray, chi: np.ndarray, kappa: float,
                         epsilon: complex, delta_rd: float,
                         alpha0: np.ndarray | None = None) -> np.ndarray:
    """Exact alpha_j(t) for a constant drive.

    The amplitude ODE is linear, so the relaxation to the steady state is
    a single complex exponential per level.  Returns shape (len(t), D).
    """
    chi = np.asarray(chi, dtype=float)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    a_ss = steady_state_amplitudes(chi, kappa, epsilon, delta_rd)
    a0 = np.zeros_like(a_ss) if alpha0 is None else np.asarray(alpha0, dtype=complex)
    rate = -1j * (delta_rd + chi - 0.5j * kappa)
    return a_ss[None, :] + (a0 - a_ss)[None, :] * np.exp(rate[None, :] * t[:, None])


def dephasing_rates(alpha: np.ndarray, chi: np.ndarray) -> dict[tuple[int, int], float]:
    """Measurement-induced dephasing Gamma_d,jk = (chi_k - chi_j) Im(alpha_j alpha_k*)."""
    alpha = np.asarray(alpha, dtype=complex)
    chi = np.asarray(chi, dtype=float)
    return {(j, k): float((chi[k] - chi[j]) * np.imag(alpha[j] * np.conj(alpha[k])))
            for j, k in level_pairs(len(chi))}


def frequency_shifts(alpha: np.ndarray, chi: np.ndarray) -> dict[tuple[int, int], float]:
    """Measurement-induced shift of the (k, j) transition: (chi_k - chi_j) Re(alpha_k alpha_j*)."""
    alpha = np.asarray(alpha, dtype=complex)
    chi = np.asarray(chi, dtype=float)
    return {(j, k): float((chi[k] - chi[j]) * np.real(alpha[k] * np.conj(alpha[j])))
            for j, k in level_pairs(len(chi))}


def shifted_transition_frequencies(alpha: np.ndarray, chi: np.ndarray,
                                   omega_tilde: np.ndarray) -> dict[tuple[int, int], float]:
    """omega_bar_kj = (omega_k - omega_j) + (chi_k - chi_j) Re(alpha_k alpha_j*)."""
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    shifts = frequency_shifts(alpha, chi)
    return {(j, k): float(omega_tilde[k] - omega_tilde[j]) + shifts[(j, k)]
            for j, k in level_pairs(len(chi))}


def measurement_rates(alpha: np.ndarray, kappa: float) -> dict[tuple[int, int], float]:
    """Gamma_m,jk = kappa |alpha_j - alpha_k|^2."""
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    alpha = np.asarray(alpha, dtype=complex)
    return {(j, k): float(kappa * abs(alpha[j] - alpha[k]) ** 2)
            for j, k in level_pairs(len(alpha))}


def triangle_residuals(omega_bar: dict[tuple[int, int], float], d: int) -> dict[tuple[int, int, int], float]:
    """Residual omega_bar_lj - omega_bar_lk - omega_bar_kj per level triple.

    Nonzero residuals are expected: the shifted transition frequencies of a
    D >= 3 system are not mutually consistent, so they are surfaced as a
    diagnostic instead of being forced to close.
    """
    out = {}
    for j in range(d):
        for k in range(j + 1, d):
            for l in range(k + 1, d):
                out[(j, k, l)] = omega_bar[(j, l)] - omega_bar[(k, l)] - omega_bar[(j, k)]
    return out


@dataclasses.dataclass(frozen=True)
class RateTable:
    """Steady-state (or instantaneous) readout rates for every level pair."""

    chi: tuple[float, ...]
    lamb: tuple[float, ...] | None
    alpha: tuple[complex, ...]
    gamma_d: dict[tuple[int, int], float]
    gamma_m: dict[tuple[int, int], float]
    delta_d: dict[tuple[int, int], float]
    omega_bar: dict[tuple[int, int], float]
    triangle: dict[tuple[int, int, int], float]

    @staticmethod
    def at_steady_state(params: SystemParams, lamb=None) -> "RateTable":
        alpha = steady_state_amplitudes(params.chi, params.kappa, params.epsilon,
                                        params.delta_rd)
        return RateTable.at_amplitudes(alpha, params, lamb=lamb)

    @staticmethod
    def at_amplitudes(alpha: np.ndarray, params: SystemParams, lamb=None) -> "RateTable":
        omega_bar = shifted_transition_frequencies(alpha, params.chi, params.omega_tilde)
        return RateTable(
            chi=tuple(params.chi),
            lamb=tuple(lamb) if lamb is not None else None,
            alpha=tuple(np.asarray(alpha, dtype=complex)),
            gamma_d=dephasing_rates(alpha, params.chi),
            gamma_m=measurement_rates(alpha, params.kappa),
            delta_d=frequency_shifts(alpha, params.chi),
            omega_bar=omega_bar,
            triangle=triangle_residuals(omega_bar, params.D),
        )


def check_photon_budget(alpha_max: float, n_crit: float) -> None:
    if alpha_max ** 2 > n_crit:
        warnings.warn(
            f"peak photon number {alpha_max ** 2:.2f} exceeds n_crit={n_crit}; "
            "the dispersive approximation may be breaking down", stacklevel=2)


# ---------------------------------------------------------------------------
# pairwise dephasing decomposition
# ---------------------------------------------------------------------------


def _pair_block_matrix(d: int) -> np.ndarray:
    """M[p, q]: decay induced on coherence pair p by a unit-rate channel
    D[sqrt(1/2) sigma_z_q], for all pairs p, q."""
    pairs = level_pairs(d)
    m = np.zeros((len(pairs), len(pairs)))
    for pi, (j, k) in enumerate(pairs):
        for qi, (a, b) in enumerate(pairs):
            shared = len({j, k} & {a, b})
            if shared == 2:
                m[pi, qi] = 1.0
            elif shared == 1:
                m[pi, qi] = 0.25
    return m


def pairwise_from_diagonal_dephasing(gamma_levels: np.ndarray,
                                     tol: float = 1e-12) -> tuple[dict[tuple[int, int], float], bool]:
    """Pairwise rates {gamma_jk} whose sigma_z channels match D[sum_a sqrt(g_a) Pi_a].

    Solves the linear system equating per-pair coherence decay; the map
    equality always holds, but the solution can contain negative rates
    (non-CP pairwise decomposition), in which case the flag is True.
    """
    gamma_levels = np.asarray(gamma_levels, dtype=float)
    if np.any(gamma_levels < 0):
        raise ValueError("per-level dephasing rates must be >= 0")
    d = len(gamma_levels)
    pairs = level_pairs(d)
    target = np.array([0.5 * (np.sqrt(gamma_levels[j]) - np.sqrt(gamma_levels[k])) ** 2
                       for j, k in pairs])
    m = _pair_block_matrix(d)
    rates = np.linalg.solve(m, target)
    flagged = bool(np.any(rates < -tol))
    if flagged:
        warnings.warn(
            "pairwise dephasing decomposition contains negative rates "
            "(map-equivalent but not CP pairwise)", stacklevel=2)
    return {pair: float(r) for pair, r in zip(pairs, rates)}, flagged


def block_decay_from_pairwise_channels(channel_rates: dict[tuple[int, int], float],
                                       d: int) -> dict[tuple[int, int], float]:
    """Coherence decay per pair induced by channels D[sqrt(r_jk/2) sigma_z_jk].

    A (j,k) channel also dephases pairs sharing one level at a quarter of
    its rate; this is the forward map inverted by
    `pairwise_from_diagonal_dephasing`.
    """
    pairs = level_pairs(d)
    m = _pair_block_matrix(d)
    vec = np.array([channel_rates.get(p, 0.0) for p in pairs])
    out = m @ vec
    return {p: float(v) for p, v in zip(pairs, out)}
