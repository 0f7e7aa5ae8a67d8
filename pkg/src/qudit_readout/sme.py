"""Conditioned dynamics: Ito stochastic master equations and heterodyne records.

Trajectories are advanced with Euler-Maruyama steps.  The same Wiener
increments drive the state update and the synthesized record, and all
noise comes from counter-based Philox streams keyed on
(master_seed, trajectory_id), so any trajectory can be regenerated
bit-for-bit in any execution order.
"""

from __future__ import annotations

import dataclasses
import logging

import numpy as np

from . import linalg
from .linalg import HilbertLayout, StateValidationError
from .model import SystemParams, amplitude_trajectory, dephasing_rates, level_pairs

log = logging.getLogger(__name__)

NORM_COLLAPSE = 1e-12
REPAIR_ABORT = 1e-6  # per-step hermiticity repair larger than this aborts


def default_sme_dt(params: SystemParams, record_dt: float | None = None) -> float:
    """Step bound: resolve kappa, the fastest measurement rate and decay."""
    from .model import measurement_rates, steady_state_amplitudes

    alpha_ss = steady_state_amplitudes(params.chi, params.kappa, params.epsilon,
                                       params.delta_rd)
    gm = measurement_rates(alpha_ss, params.kappa)
    rates = [params.kappa, *gm.values(),
             *params.decoherence.gamma1.values(),
             *params.decoherence.gamma_phi.values()]
    dt = 1.0 / (50.0 * max(r for r in rates if r > 0))
    if record_dt is not None:
        dt = min(dt, record_dt)
    return dt


# ---------------------------------------------------------------------------
# noise
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class NoiseStream:
    """Reproducible Wiener increments for one trajectory.

    Backed by a Philox counter generator keyed on
    (master_seed, trajectory_id); increments are consumed step-major,
    channel-minor, so the same (seed, id, dt, n_steps) always reproduces
    the same sequence regardless of which trajectories run first.
    """

    master_seed: int
    trajectory_id: int

    def generator(self) -> np.random.Generator:
        key = np.array([self.master_seed % (1 << 64), self.trajectory_id % (1 << 64)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def increments(self, n_steps: int, dt: float, n_channels: int = 2) -> np.ndarray:
        """(n_steps, n_channels) array of Normal(0, dt) increments."""
        gen = self.generator()
        return gen.standard_normal((n_steps, n_channels)) * np.sqrt(dt)


@dataclasses.dataclass(frozen=True)
class MeasurementRecord:
    """Discretized heterodyne record of one trajectory.

    v_i[i] and v_q[i] are the rescaled quadrature voltages over
    [t[i], t[i] + dt); at eta = 0 they are pure white noise.
    """

    t: np.ndarray
    v_i: np.ndarray
    v_q: np.ndarray

    def __post_init__(self):
        if not (len(self.t) == len(self.v_i) == len(self.v_q)):
            raise ValueError("record arrays must have equal length")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else 0.0


# ---------------------------------------------------------------------------
# measurement operators
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class MeasurementOperators:
    """Diagonal quadrature operators L_I, L_Q for the current amplitudes.

    Diagonals are Re and Im of alpha_j e^{-i phi}; both operators commute
    exactly.  The amplitudes that built them are kept so steppers can
    derive the matching dephasing rates.
    """

    l_i: np.ndarray
    l_q: np.ndarray
    alpha: np.ndarray
    phi: float

    @property
    def L_I(self) -> np.ndarray:
        return np.diag(self.l_i.astype(complex))

    @property
    def L_Q(self) -> np.ndarray:
        return np.diag(self.l_q.astype(complex))


def build_measurement_operators(alpha: np.ndarray, phi: float = 0.0) -> MeasurementOperators:
    alpha = np.asarray(alpha, dtype=complex)
    rotated = alpha * np.exp(-1j * phi)
    return MeasurementOperators(l_i=rotated.real.copy(), l_q=rotated.imag.copy(),
                                alpha=alpha, phi=phi)


# ---------------------------------------------------------------------------
# single-step API (one state, one step)
# ---------------------------------------------------------------------------


def _effective_drift(rho: np.ndarray, ops: MeasurementOperators,
                     params: SystemParams) -> np.ndarray:
    """Deterministic part of the effective qudit SME at the ops' amplitudes."""
    from .lindblad import _block_damping_matrix

    d = params.D
    h0 = np.asarray(params.omega_tilde, dtype=float)
    phase = -1j * (h0[:, None] - h0[None, :])
    out = phase * rho
    for (j, k), rate in params.decoherence.gamma1.items():
        if rate == 0:
            continue
        out[j, j] += rate * rho[k, k]
        out[k, :] -= 0.5 * rate * rho[k, :]
        out[:, k] -= 0.5 * rate * rho[:, k]
    gamma_d = dephasing_rates(ops.alpha, params.chi)
    out += _block_damping_matrix(params, gamma_d=gamma_d) * rho
    return out


def _repair(rho: np.ndarray) -> tuple[np.ndarray, float]:
    """Symmetrize and renormalize; returns the hermiticity defect removed."""
    defect = float(np.max(np.abs(rho - rho.conj().T)))
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real, defect


def effective_euler_step(rho: np.ndarray, ops: MeasurementOperators,
                         params: SystemParams, dt: float) -> np.ndarray:
    """Deterministic Euler step of the effective master equation, with repair."""
    rho2 = rho + dt * _effective_drift(rho, ops, params)
    rho2, _ = _repair(rho2)
    return rho2


def sme_step(rho: np.ndarray, ops: MeasurementOperators, params: SystemParams,
             dt: float, dW: tuple[float, float]) -> np.ndarray:
    """One Ito Euler-Maruyama step of the effective qudit SME.

    At eta = 0 the stochastic terms are skipped entirely, making the step
    bitwise identical to `effective_euler_step`.
    """
    rho2 = rho + dt * _effective_drift(rho, ops, params)
    if params.eta > 0:
        amp = np.sqrt(params.eta * params.kappa)
        rho2 = rho2 + amp * dW[0] * linalg.measurement_superop(ops.L_I, rho)
        rho2 = rho2 + amp * dW[1] * linalg.measurement_superop(ops.L_Q, rho)
    rho2, defect = _repair(rho2)
    if defect > REPAIR_ABORT:
        raise StateValidationError(f"hermiticity repair {defect:.3e} exceeds bound")
    diag = linalg.validate_density(rho2)
    if diag.min_eigenvalue < linalg.EIG_CLAMP:
        raise StateValidationError(
            f"trajectory positivity lost: min eigenvalue {diag.min_eigenvalue:.3e}")
    return rho2


def synthesize_record(rho: np.ndarray, ops: MeasurementOperators, eta: float,
                      kappa: float, dW: tuple[float, float], dt: float) -> tuple[float, float]:
    """Heterodyne sample pair V = sqrt(eta kappa) <2 L> + dW/dt.

    Must be fed the same increments as the matching sme_step.
    """
    pops = np.real(np.diag(rho))
    amp = np.sqrt(eta * kappa)
    v_i = amp * 2.0 * float(ops.l_i @ pops) + dW[0] / dt
    v_q = amp * 2.0 * float(ops.l_q @ pops) + dW[1] / dt
    return v_i, v_q


def qsd_step(psi: np.ndarray, h: np.ndarray, channels: list[tuple[np.ndarray, float]],
             dt: float, dWs: np.ndarray) -> np.ndarray:
    """Quantum-state-diffusion Euler step for channel list [(L_i, rate_i)].

    Marginalizing the Wiener processes reproduces sum_i rate_i D[L_i] on
    E[|psi><psi|]; that expectation identity fixes the rate-vs-amplitude
    convention (rates enter the drift linearly, their square roots the
    noise).  One real increment per channel.
    """
    if len(dWs) != len(channels):
        raise ValueError("need one Wiener increment per channel")
    dpsi = -1j * dt * (h @ psi)
    for (L, rate), dw in zip(channels, dWs):
        if rate == 0:
            continue
        Lpsi = L @ psi
        expect_l = np.vdot(psi, Lpsi)
        expect_ld = np.vdot(psi, L.conj().T @ psi)
        dpsi += np.sqrt(rate) * (Lpsi - expect_l * psi) * dw
        dpsi += -0.5 * rate * dt * (
            L.conj().T @ Lpsi + expect_l * expect_ld * psi - 2.0 * expect_ld * Lpsi)
    psi2 = psi + dpsi
    nrm = np.linalg.norm(psi2)
    if nrm < NORM_COLLAPSE:
        raise StateValidationError("QSD norm collapsed")
    return psi2 / nrm


def measurement_channels(ops: MeasurementOperators, eta: float,
                         kappa: float) -> list[tuple[np.ndarray, float]]:
    """QSD channel list splitting each quadrature into observed (eta kappa)
    and unobserved ((1-eta) kappa) parts."""
    return [
        (ops.L_I, eta * kappa), (ops.L_I, (1.0 - eta) * kappa),
        (ops.L_Q, eta * kappa), (ops.L_Q, (1.0 - eta) * kappa),
    ]


def run_qsd_batch(psi0: np.ndarray, h: np.ndarray,
                  channels: list[tuple[np.ndarray, float]], n_steps: int,
                  dt: float, master_seed: int,
                  trajectory_ids: np.ndarray, *, thin: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """State-diffusion trajectories in lockstep; same math as `qsd_step`.

    Returns (t_out, psis) with psis of shape (n_out, n_traj, dim).  One
    Wiener increment per channel per step, channel-minor in each stream.
    """
    ids = np.asarray(trajectory_ids, dtype=np.int64)
    n_traj = len(ids)
    dim = len(psi0)
    n_ch = len(channels)
    mats = [np.asarray(L, dtype=complex) for L, _ in channels]
    rates = np.array([r for _, r in channels])
    psi = np.broadcast_to(np.asarray(psi0, dtype=complex), (n_traj, dim)).copy()
    psi /= np.linalg.norm(psi, axis=1, keepdims=True)
    gens = [NoiseStream(master_seed, int(tid)).generator() for tid in ids]
    sqrt_dt = np.sqrt(dt)
    out_steps = sorted(set(range(0, n_steps + 1, thin)) | {n_steps})
    out_index = {s: i for i, s in enumerate(out_steps)}
    out = np.zeros((len(out_steps), n_traj, dim), dtype=complex)
    out[0] = psi
    for i in range(n_steps):
        dws = np.stack([g.standard_normal(n_ch) for g in gens]) * sqrt_dt
        dpsi = -1j * dt * (psi @ h.T)
        for ci, (L, rate) in enumerate(zip(mats, rates)):
            if rate == 0:
                continue
            lpsi = psi @ L.T
            exp_l = np.einsum("nd,nd->n", psi.conj(), lpsi)
            exp_ld = np.conj(exp_l)
            dpsi += np.sqrt(rate) * dws[:, ci, None] * (lpsi - exp_l[:, None] * psi)
            dpsi += (-0.5 * rate * dt) * (
                psi @ (L.conj().T @ L).T
                + (exp_l * exp_ld)[:, None] * psi
                - 2.0 * exp_ld[:, None] * lpsi)
        psi = psi + dpsi
        nrm = np.linalg.norm(psi, axis=1, keepdims=True)
        if np.any(nrm < NORM_COLLAPSE):
            raise StateValidationError("QSD norm collapsed in batch")
        psi /= nrm
        if (i + 1) in out_index:
            out[out_index[i + 1]] = psi
    t_out = np.array(out_steps, dtype=float) * dt
    return t_out, out


# ---------------------------------------------------------------------------
# batched effective-SME engine
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class TrajectoryBatchResult:
    """Everything a block of trajectories produces."""

    trajectory_ids: np.ndarray
    t_out: np.ndarray
    populations: np.ndarray            # (n_traj, n_out, D)
    aborted: np.ndarray                # bool (n_traj,)
    alive_count: np.ndarray            # (n_out,) trajectories contributing per step
    sum_rho: np.ndarray                # (n_out, D, D) over alive trajectories
    sum_rho_sq: np.ndarray             # (n_out, D, D) sum |rho|^2 elementwise
    sum_entropy: np.ndarray            # (n_out,)
    sum_entropy_sq: np.ndarray
    sum_v: np.ndarray                  # (n_out, 2)
    sum_v_sq: np.ndarray
    iq_mean: np.ndarray                # (n_traj,) complex, window-averaged record
    final_rho: np.ndarray              # (n_traj, D, D)
    sample_rho: dict[int, np.ndarray]  # trajectory id -> (n_out, D, D)
    sample_v: dict[int, np.ndarray]    # trajectory id -> (n_out, 2)


def run_effective_sme_batch(params: SystemParams, rho0: np.ndarray,
                            n_steps: int, dt: float, master_seed: int,
                            trajectory_ids: np.ndarray, *, thin: int = 1,
                            window: tuple[float, float] | None = None,
                            sample_ids: set[int] | None = None,
                            check_every: int = 25,
                            rng_chunk: int = 1024) -> TrajectoryBatchResult:
    """Advance a block of trajectories in lockstep.

    All trajectories share the deterministic coefficients of each step
    (the amplitude path is trajectory-independent), so the per-step work is
    elementwise on an (n_traj, D, D) stack.  Output is thinned to every
    `thin`-th step (step 0 and the last step always included).
    """
    from .lindblad import _block_damping_matrix

    d = params.D
    ids = np.asarray(trajectory_ids, dtype=np.int64)
    n_traj = len(ids)
    sample_ids = sample_ids or set()
    eta, kappa = params.eta, params.kappa
    amp = np.sqrt(eta * kappa)

    t_steps = np.arange(n_steps + 1) * dt
    alphas = amplitude_trajectory(t_steps, params.chi, params.kappa,
                                  params.epsilon, params.delta_rd)
    rot = np.exp(-1j * params.phi)
    l_i_all = (alphas * rot).real                    # (n_steps+1, D)
    l_q_all = (alphas * rot).imag
    h0 = np.asarray(params.omega_tilde, dtype=float)
    phase = -1j * (h0[:, None] - h0[None, :])
    lam_all = np.empty((n_steps + 1, d, d), dtype=complex)
    for i in range(n_steps + 1):
        gd = dephasing_rates(alphas[i], params.chi)
        lam_all[i] = phase + _block_damping_matrix(params, gamma_d=gd)
    gamma1 = [(j, k, rate) for (j, k), rate in params.decoherence.gamma1.items()
              if rate > 0]

    out_steps = sorted(set(range(0, n_steps + 1, thin)) | {n_steps})
    out_index = {s: i for i, s in enumerate(out_steps)}
    n_out = len(out_steps)
    t_out = t_steps[out_steps]

    if window is None:
        window = (0.0, n_steps * dt)
    w0 = int(np.floor(window[0] / dt))
    w1 = int(np.ceil(window[1] / dt))
    w0, w1 = max(0, w0), min(n_steps, w1)
    n_window = max(w1 - w0, 1)

    rho = np.broadcast_to(rho0.astype(complex), (n_traj, d, d)).copy()
    alive = np.ones(n_traj, dtype=bool)

    populations = np.zeros((n_traj, n_out, d))
    alive_count = np.zeros(n_out, dtype=np.int64)
    sum_rho = np.zeros((n_out, d, d), dtype=complex)
    sum_rho_sq = np.zeros((n_out, d, d))
    sum_entropy = np.zeros(n_out)
    sum_entropy_sq = np.zeros(n_out)
    sum_v = np.zeros((n_out, 2))
    sum_v_sq = np.zeros((n_out, 2))
    iq_accum = np.zeros(n_traj, dtype=complex)
    sample_rho = {int(i): np.zeros((n_out, d, d), dtype=complex)
                  for i in sample_ids if i in set(ids.tolist())}
    sample_v = {int(i): np.zeros((n_out, 2)) for i in sample_rho}
    id_pos = {int(tid): pos for pos, tid in enumerate(ids.tolist())}

    gens = [NoiseStream(master_seed, int(tid)).generator() for tid in ids]
    sqrt_dt = np.sqrt(dt)

    def record_output(step: int, v_now: np.ndarray | None):
        oi = out_index[step]
        populations[:, oi, :] = np.real(np.einsum("njj->nj", rho))
        alive_count[oi] = int(alive.sum())
        sum_rho[oi] += rho[alive].sum(axis=0)
        sum_rho_sq[oi] += (np.abs(rho[alive]) ** 2).sum(axis=0)
        s = linalg.von_neumann_entropy_batch(rho)
        sum_entropy[oi] += s[alive].sum()
        sum_entropy_sq[oi] += (s[alive] ** 2).sum()
        if v_now is not None:
            sum_v[oi] += v_now[alive].sum(axis=0)
            sum_v_sq[oi] += (v_now[alive] ** 2).sum(axis=0)
        for tid, arr in sample_rho.items():
            arr[oi] = rho[id_pos[tid]]
            if v_now is not None:
                sample_v[tid][oi] = v_now[id_pos[tid]]

    record_output(0, None)

    step = 0
    while step < n_steps:
        chunk = min(rng_chunk, n_steps - step)
        dw = np.stack([g.standard_normal((chunk, 2)) for g in gens]) * sqrt_dt
        for c in range(chunk):
            i = step + c
            lam = lam_all[i]
            l_i, l_q = l_i_all[i], l_q_all[i]
            pops = np.real(np.einsum("njj->nj", rho))
            # deterministic drift: elementwise phases/damping + decay channels
            drift = lam[None, :, :] * rho
            for (j, k, rate) in gamma1:
                drift[:, j, j] += rate * rho[:, k, k]
                drift[:, k, :] -= 0.5 * rate * rho[:, k, :]
                drift[:, :, k] -= 0.5 * rate * rho[:, :, k]
            new = rho + dt * drift
            exp_i = 2.0 * pops @ l_i
            exp_q = 2.0 * pops @ l_q
            if eta > 0:
                li_sum = l_i[:, None] + l_i[None, :]
                lq_sum = l_q[:, None] + l_q[None, :]
                m_i = li_sum[None, :, :] * rho - exp_i[:, None, None] * rho
                m_q = lq_sum[None, :, :] * rho - exp_q[:, None, None] * rho
                new += amp * (dw[:, c, 0, None, None] * m_i + dw[:, c, 1, None, None] * m_q)
            new = 0.5 * (new + np.conj(np.swapaxes(new, -1, -2)))
            tr = np.real(np.einsum("njj->n", new))
            new /= tr[:, None, None]
            rho = np.where(alive[:, None, None], new, rho)
            # record sample for this step interval
            v_i = amp * exp_i + dw[:, c, 0] / dt
            v_q = amp * exp_q + dw[:, c, 1] / dt
            if w0 <= i < w1:
                iq_accum += (v_i + 1j * v_q) / n_window
            if (i + 1) % check_every == 0:
                ev = np.linalg.eigvalsh(rho)
                bad = alive & (ev[:, 0] < linalg.EIG_CLAMP)
                if np.any(bad):
                    log.warning("aborting %d trajectories at step %d (positivity)",
                                int(bad.sum()), i + 1)
                    alive &= ~bad
            if (i + 1) in out_index:
                record_output(i + 1, np.stack([v_i, v_q], axis=1))
        step += chunk

    ev = np.linalg.eigvalsh(rho)
    bad = alive & (ev[:, 0] < linalg.EIG_CLAMP)
    alive &= ~bad
    return TrajectoryBatchResult(
        trajectory_ids=ids, t_out=t_out, populations=populations,
        aborted=~alive, alive_count=alive_count,
        sum_rho=sum_rho, sum_rho_sq=sum_rho_sq,
        sum_entropy=sum_entropy, sum_entropy_sq=sum_entropy_sq,
        sum_v=sum_v, sum_v_sq=sum_v_sq, iq_mean=iq_accum,
        final_rho=rho, sample_rho=sample_rho, sample_v=sample_v)


# ---------------------------------------------------------------------------
# full combined-system SME (oracle)
# ---------------------------------------------------------------------------


class _FockOps:
    """Shift/scale helpers acting on (..., D, nf, D, nf) stacks.

    Fock-ladder products never need matrix multiplies: they are index
    shifts with sqrt weights, so every generator term stays O(dim^2).
    """

    def __init__(self, layout: HilbertLayout):
        self.d, self.nf = layout.d_qudit, layout.n_fock
        self.sq = np.sqrt(np.arange(1, self.nf))          # sqrt(n+1) for n = 0..nf-2
        self.nvec = np.arange(self.nf, dtype=float)

    def view(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[:-2] + (self.d, self.nf, self.d, self.nf))

    def _out(self, v: np.ndarray, out: np.ndarray | None) -> np.ndarray:
        return np.empty_like(v) if out is None else self.view(out)

    def a_left(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        o = self._out(v, out)
        np.multiply(self.sq[None, :, None, None], v[..., :, 1:, :, :],
                    out=o[..., :, :-1, :, :])
        o[..., :, -1, :, :] = 0.0
        return o

    def adag_left(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        o = self._out(v, out)
        np.multiply(self.sq[None, :, None, None], v[..., :, :-1, :, :],
                    out=o[..., :, 1:, :, :])
        o[..., :, 0, :, :] = 0.0
        return o

    def a_right(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        # (rho a)_{.., m} = sqrt(m) rho_{.., m-1}
        o = self._out(v, out)
        np.multiply(v[..., :, :, :, :-1], self.sq[None, None, None, :],
                    out=o[..., :, :, :, 1:])
        o[..., :, :, :, 0] = 0.0
        return o

    def adag_right(self, v: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        # (rho a^dag)_{.., m} = sqrt(m+1) rho_{.., m+1}
        o = self._out(v, out)
        np.multiply(v[..., :, :, :, 1:], self.sq[None, None, None, :],
                    out=o[..., :, :, :, :-1])
        o[..., :, :, :, -1] = 0.0
        return o


@dataclasses.dataclass
class FullSMEResult:
    t: np.ndarray
    states: np.ndarray        # (n_out, n_traj, dim, dim) or (n_out, dim, dim) if single
    v: np.ndarray             # (n_steps, n_traj, 2)
    leakage: float


def run_full_sme(params: SystemParams, layout: HilbertLayout, rho0: np.ndarray,
                 n_steps: int, dt: float, master_seed: int,
                 trajectory_ids: np.ndarray, *, thin: int = 1,
                 store_states: bool = True) -> FullSMEResult:
    """Euler-Maruyama trajectories of the combined qudit+resonator SME.

    The deterministic part is the combined-system generator; the stochastic
    part applies the measurement superoperator with the resonator quadrature
    operators a e^{-i phi} and -i a e^{-i phi}, with records
    V_I = sqrt(eta kappa) <a e^{-i phi} + h.c.> + xi_I and the Q analogue.
    At eta = 0 this is plain Euler integration of the master equation.
    """
    d, nf = layout.d_qudit, layout.n_fock
    dim = layout.dim
    ids = np.asarray(trajectory_ids, dtype=np.int64)
    n_traj = len(ids)
    fops = _FockOps(layout)
    p = params
    eta, kappa = p.eta, p.kappa
    amp = np.sqrt(eta * kappa)
    rot = np.exp(-1j * p.phi)

    # diagonal part of H: omega_j + (Delta + chi_j) n  -> elementwise phase matrix
    hdiag = (np.asarray(p.omega_tilde)[:, None]
             + (p.delta_rd + np.asarray(p.chi))[:, None] * fops.nvec[None, :]).reshape(dim)
    lam_q = np.zeros((d, d), dtype=complex)
    for (j, k) in p.pairs:
        r = p.decoherence.gamma_phi_rate(j, k)
        lam_q[j, k] = -r
        lam_q[k, j] = -r
    block = np.repeat(np.repeat(lam_q, nf, axis=0), nf, axis=1)
    gamma1 = [(j, k, rate) for (j, k), rate in p.decoherence.gamma1.items() if rate > 0]
    eps = p.epsilon

    # every elementwise-diagonal generator term folded into one matrix:
    # -i[H_diag, .], block dephasing and the D[a]/D[a^dag] anticommutators
    nweight = np.tile(fops.nvec, d)
    lin = (-1j * (hdiag[:, None] - hdiag[None, :]) + block
           - 0.5 * kappa * (p.N_bar + 1.0) * (nweight[:, None] + nweight[None, :]))
    if p.N_bar > 0:
        lin = lin - 0.5 * kappa * p.N_bar * ((nweight + 1.0)[:, None]
                                             + (nweight + 1.0)[None, :])

    rho = np.broadcast_to(rho0.astype(complex), (n_traj, dim, dim)).copy()
    gens = [NoiseStream(master_seed, int(tid)).generator() for tid in ids]
    sqrt_dt = np.sqrt(dt)

    out_steps = sorted(set(range(0, n_steps + 1, thin)) | {n_steps})
    out_index = {s: i for i, s in enumerate(out_steps)}
    states = (np.zeros((len(out_steps), n_traj, dim, dim), dtype=complex)
              if store_states else np.zeros((0,)))
    v_all = np.zeros((n_steps, n_traj, 2))
    if store_states:
        states[0] = rho

    # persistent scratch; large buffers are reused because allocator churn
    # (mmap/munmap page faults) dominates at these sizes
    a_rho = np.empty_like(rho)
    rho_adag = np.empty_like(rho)
    acc = np.empty_like(rho)
    tmp = np.empty_like(rho)
    tmp2 = np.empty_like(rho)

    def axpy(coeff, x):
        """acc += coeff * x via the shared scratch, no fresh temporary."""
        np.multiply(x, coeff, out=tmp)
        np.add(acc, tmp, out=acc)

    def drift_into(r_):
        """acc <- generator(r_); expects a_rho = a r_ and rho_adag = r_ a^dag."""
        v = fops.view(r_)
        np.multiply(lin[None], r_, out=acc)
        # H_drive = -(eps a^dag + eps* a); -i[H_drive, .] = i[eps a^dag + eps* a, .]
        fops.adag_left(v, out=tmp2)
        axpy(1j * eps, tmp2)
        axpy(1j * np.conj(eps), a_rho)
        axpy(-1j * eps, rho_adag)
        fops.a_right(v, out=tmp2)
        axpy(-1j * np.conj(eps), tmp2)
        fops.adag_right(fops.view(a_rho), out=tmp2)
        axpy(kappa * (p.N_bar + 1.0), tmp2)
        if p.N_bar > 0:
            fops.adag_left(v, out=tmp2)
            fops.a_right(fops.view(tmp2.copy()), out=tmp2)
            axpy(kappa * p.N_bar, tmp2)
        if gamma1:
            vv = fops.view(acc)
            rv = v
            for (j, k, rate) in gamma1:
                vv[..., j, :, j, :] += rate * rv[..., k, :, k, :]
                vv[..., k, :, :, :] -= 0.5 * rate * rv[..., k, :, :, :]
                vv[..., :, :, k, :] -= 0.5 * rate * rv[..., :, :, k, :]

    rng_chunk = 256
    step = 0
    while step < n_steps:
        chunk = min(rng_chunk, n_steps - step)
        dw_chunk = np.stack([g.standard_normal((chunk, 2)) for g in gens]) * sqrt_dt
        for c in range(chunk):
            i = step + c
            dw = dw_chunk[:, c, :]
            v = fops.view(rho)
            fops.a_left(v, out=a_rho)
            fops.adag_right(v, out=rho_adag)
            exp_a = np.trace(a_rho, axis1=-2, axis2=-1)
            exp_i = 2.0 * np.real(rot * exp_a)
            exp_q = 2.0 * np.imag(rot * exp_a)
            drift_into(rho)
            acc *= dt
            acc += rho
            if eta > 0:
                c_i = amp * dw[:, 0]
                c_q = amp * dw[:, 1]
                axpy(((c_i - 1j * c_q) * rot)[:, None, None], a_rho)
                axpy(((c_i + 1j * c_q) * np.conj(rot))[:, None, None], rho_adag)
                axpy(-(c_i * exp_i + c_q * exp_q)[:, None, None], rho)
            np.conjugate(np.swapaxes(acc, -1, -2), out=tmp)
            acc += tmp
            acc *= 0.5
            tr = np.real(np.einsum("njj->n", acc))
            acc /= tr[:, None, None]
            rho, acc = acc, rho
            v_all[i, :, 0] = amp * exp_i + dw[:, 0] / dt
            v_all[i, :, 1] = amp * exp_q + dw[:, 1] / dt
            if store_states and (i + 1) in out_index:
                states[out_index[i + 1]] = rho
        step += chunk

    # leakage check on the mean final state
    mean_rho = rho.mean(axis=0)
    resv = fops.view(mean_rho[None])[0]
    res_diag = np.einsum("jnjm->nm", resv)
    leak = float(np.real(res_diag[-1, -1] + res_diag[-2, -2]))
    if leak > 1e-8:
        raise StateValidationError(
            f"Fock truncation too small in full SME: leakage {leak:.3e}")
    t = np.array(out_steps, dtype=float) * dt
    return FullSMEResult(t=t, states=states, v=v_all, leakage=leak)
