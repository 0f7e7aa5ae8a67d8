"""Monte-Carlo ensembles and phase-plane analysis.

Trajectory ids are split into fixed-size blocks; each block is advanced by
the batched SME engine and the block results are merged in id order, so
the ensemble statistics are bit-for-bit identical for any worker count.
"""

from __future__ import annotations

import dataclasses
import logging
import multiprocessing

import numpy as np

from . import sme
from .linalg import HilbertLayout
from .model import SystemParams, steady_state_amplitudes
from .sme import MeasurementRecord, TrajectoryBatchResult

log = logging.getLogger(__name__)

BLOCK_SIZE = 128  # fixed: reduction grouping must not depend on worker count


class BudgetExceeded(RuntimeError):
    """Estimated work exceeds the configured budget."""


class TooManyAborts(RuntimeError):
    """More than the tolerated fraction of trajectories failed validation."""


@dataclasses.dataclass
class EnsembleConfig:
    params: SystemParams
    rho0: np.ndarray
    n_trajectories: int
    t_final: float
    dt: float
    master_seed: int
    engine: str = "effective-sme"        # or "full-sme"
    layout: HilbertLayout | None = None  # required for full-sme
    thin: int = 1
    window: tuple[float, float] | None = None
    sample_trajectories: int = 0
    budget: float = 1e9
    threads: int = 1
    abort_tolerance: float = 0.01

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValueError("n_trajectories must be >= 1")
        if self.t_final <= 0 or self.dt <= 0:
            raise ValueError("t_final and dt must be > 0")
        if self.engine not in ("effective-sme", "full-sme"):
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.engine == "full-sme" and self.layout is None:
            raise ValueError("full-sme engine needs a HilbertLayout")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_final / self.dt))

    def estimated_cost(self) -> float:
        dim = self.layout.dim if self.engine == "full-sme" else self.params.D
        return float(self.n_trajectories) * self.n_steps * dim * dim


@dataclasses.dataclass
class EnsembleStats:
    """Per-output-step moments across surviving trajectories."""

    t: np.ndarray
    n_alive: np.ndarray
    mean_rho: np.ndarray      # (n_out, D, D) complex
    var_rho: np.ndarray       # (n_out, D, D) E|x|^2 - |Ex|^2
    mean_entropy: np.ndarray
    var_entropy: np.ndarray
    mean_v: np.ndarray        # (n_out, 2)
    var_v: np.ndarray


@dataclasses.dataclass
class EnsembleResult:
    config: EnsembleConfig
    stats: EnsembleStats
    iq_points: np.ndarray         # (n_traj,) complex window averages
    populations: np.ndarray       # (n_traj, n_out, D) thinned traces
    final_rho: np.ndarray         # (n_traj, D, D)
    aborted: np.ndarray           # bool mask over trajectory ids
    sample_rho: dict[int, np.ndarray]
    sample_v: dict[int, np.ndarray]

    @property
    def kept(self) -> np.ndarray:
        return ~self.aborted

    def record_for(self, trajectory_id: int) -> MeasurementRecord:
        """Thinned record of a persisted sample trajectory."""
        v = self.sample_v[trajectory_id]
        return MeasurementRecord(t=self.stats.t, v_i=v[:, 0], v_q=v[:, 1])


def _trajectory_blocks(n: int) -> list[np.ndarray]:
    ids = np.arange(n, dtype=np.int64)
    return [ids[i:i + BLOCK_SIZE] for i in range(0, n, BLOCK_SIZE)]


def _run_block(cfg: EnsembleConfig, ids: np.ndarray,
               sample_ids: set[int]) -> TrajectoryBatchResult:
    return sme.run_effective_sme_batch(
        cfg.params, cfg.rho0, cfg.n_steps, cfg.dt, cfg.master_seed, ids,
        thin=cfg.thin, window=cfg.window, sample_ids=sample_ids)


def run_ensemble(cfg: EnsembleConfig) -> EnsembleResult:
    """Monte-Carlo ensemble with deterministic block-ordered reduction."""
    cost = cfg.estimated_cost()
    if cost > cfg.budget:
        raise BudgetExceeded(
            f"estimated cost {cost:.3g} scalar-op units exceeds budget {cfg.budget:.3g}")
    if cfg.engine == "full-sme":
        return _run_ensemble_full(cfg)

    sample_ids = set(range(min(cfg.sample_trajectories, cfg.n_trajectories)))
    blocks = _trajectory_blocks(cfg.n_trajectories)
    if cfg.threads > 1 and len(blocks) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=cfg.threads) as pool:
            results = pool.starmap(
                _run_block, [(cfg, ids, sample_ids) for ids in blocks])
    else:
        results = [_run_block(cfg, ids, sample_ids) for ids in blocks]
    return _merge(cfg, results)


def _run_ensemble_full(cfg: EnsembleConfig) -> EnsembleResult:
    """Full combined-system engine; reduced-qudit stats via partial trace."""
    from . import linalg

    lay = cfg.layout
    ids = np.arange(cfg.n_trajectories, dtype=np.int64)
    res = sme.run_full_sme(cfg.params, lay, cfg.rho0, cfg.n_steps, cfg.dt,
                           cfg.master_seed, ids, thin=cfg.thin)
    # states: (n_out, n_traj, dim, dim) -> qudit reduction
    d, nf = lay.d_qudit, lay.n_fock
    states = res.states.reshape(res.states.shape[:2] + (d, nf, d, nf))
    qudit = np.einsum("otjnkn->otjk", states)
    n_out, n_traj = qudit.shape[:2]
    mean_rho = qudit.mean(axis=1)
    var_rho = (np.abs(qudit) ** 2).mean(axis=1) - np.abs(mean_rho) ** 2
    entropy = linalg.von_neumann_entropy_batch(qudit.reshape(-1, d, d)).reshape(n_out, n_traj)
    # record sample preceding each output state; zero row for t = 0
    out_steps = np.rint(res.t / cfg.dt).astype(int)
    v_at_out = np.zeros((n_out, n_traj, 2))
    v_at_out[1:] = res.v[out_steps[1:] - 1]
    stats = EnsembleStats(
        t=res.t, n_alive=np.full(n_out, n_traj),
        mean_rho=mean_rho, var_rho=var_rho,
        mean_entropy=entropy.mean(axis=1), var_entropy=entropy.var(axis=1),
        mean_v=v_at_out.mean(axis=1), var_v=v_at_out.var(axis=1))
    w = cfg.window or (0.0, cfg.t_final)
    i0, i1 = int(w[0] / cfg.dt), min(int(np.ceil(w[1] / cfg.dt)), cfg.n_steps)
    vz = res.v[i0:i1, :, 0] + 1j * res.v[i0:i1, :, 1]
    iq = vz.mean(axis=0)
    pops = np.real(np.einsum("otjnjn->otj", states)).transpose(1, 0, 2)
    return EnsembleResult(
        config=cfg, stats=stats, iq_points=iq, populations=pops,
        final_rho=qudit[-1], aborted=np.zeros(n_traj, dtype=bool),
        sample_rho={}, sample_v={})


def _merge(cfg: EnsembleConfig, blocks: list[TrajectoryBatchResult]) -> EnsembleResult:
    first = blocks[0]
    n_out = len(first.t_out)
    d = cfg.params.D
    sum_rho = np.zeros((n_out, d, d), dtype=complex)
    sum_rho_sq = np.zeros((n_out, d, d))
    sum_s = np.zeros(n_out)
    sum_s_sq = np.zeros(n_out)
    sum_v = np.zeros((n_out, 2))
    sum_v_sq = np.zeros((n_out, 2))
    n_alive = np.zeros(n_out, dtype=np.int64)
    iq = []
    pops = []
    final = []
    aborted = []
    sample_rho: dict[int, np.ndarray] = {}
    sample_v: dict[int, np.ndarray] = {}
    for b in blocks:
        sum_rho += b.sum_rho
        sum_rho_sq += b.sum_rho_sq
        sum_s += b.sum_entropy
        sum_s_sq += b.sum_entropy_sq
        sum_v += b.sum_v
        sum_v_sq += b.sum_v_sq
        n_alive += b.alive_count
        iq.append(b.iq_mean)
        pops.append(b.populations)
        final.append(b.final_rho)
        aborted.append(b.aborted)
        sample_rho.update(b.sample_rho)
        sample_v.update(b.sample_v)
    aborted = np.concatenate(aborted)
    n_bad = int(aborted.sum())
    if n_bad:
        log.warning("%d/%d trajectories aborted and excluded", n_bad, cfg.n_trajectories)
    if n_bad > cfg.abort_tolerance * cfg.n_trajectories:
        raise TooManyAborts(
            f"{n_bad}/{cfg.n_trajectories} trajectories aborted "
            f"(tolerance {cfg.abort_tolerance:.1%})")
    denom = np.maximum(n_alive, 1).astype(float)
    mean_rho = sum_rho / denom[:, None, None]
    var_rho = sum_rho_sq / denom[:, None, None] - np.abs(mean_rho) ** 2
    mean_s = sum_s / denom
    var_s = sum_s_sq / denom - mean_s ** 2
    mean_v = sum_v / denom[:, None]
    var_v = sum_v_sq / denom[:, None] - mean_v ** 2
    stats = EnsembleStats(t=first.t_out, n_alive=n_alive, mean_rho=mean_rho,
                          var_rho=var_rho, mean_entropy=mean_s, var_entropy=var_s,
                          mean_v=mean_v, var_v=var_v)
    return EnsembleResult(
        config=cfg, stats=stats, iq_points=np.concatenate(iq),
        populations=np.concatenate(pops, axis=0),
        final_rho=np.concatenate(final, axis=0), aborted=aborted,
        sample_rho=sample_rho, sample_v=sample_v)


# ---------------------------------------------------------------------------
# IQ-plane analysis
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class IQPoint:
    v_bar: complex
    trajectory_id: int
    window: tuple[float, float]


def integrate_iq(record: MeasurementRecord, window: tuple[float, float],
                 weighting: np.ndarray | None = None,
                 trajectory_id: int = -1) -> IQPoint:
    """Windowed (optionally weighted) time average of V_I + i V_Q."""
    mask = (record.t >= window[0]) & (record.t < window[1])
    if not np.any(mask):
        raise ValueError(f"window {window} contains no record samples")
    z = record.v_i[mask] + 1j * record.v_q[mask]
    if weighting is None:
        v_bar = z.mean()
    else:
        w = np.asarray(weighting, dtype=float)
        if len(w) != len(z):
            raise ValueError("weighting length must match samples in window")
        if w.sum() <= 0:
            raise ValueError("weighting must have positive mass")
        v_bar = np.sum(w * z) / w.sum()
    return IQPoint(v_bar=complex(v_bar), trajectory_id=trajectory_id, window=window)


def reference_iq_means(params: SystemParams, window: tuple[float, float],
                       alpha0: np.ndarray | None = None) -> np.ndarray:
    """Predicted cluster centers: window average of 2 sqrt(eta kappa) alpha_a(t) e^{-i phi}.

    Uses the exact integral of the amplitude relaxation, so transient
    windows are handled without quadrature.
    """
    chi = np.asarray(params.chi, dtype=float)
    a_ss = steady_state_amplitudes(chi, params.kappa, params.epsilon, params.delta_rd)
    a0 = np.zeros_like(a_ss) if alpha0 is None else np.asarray(alpha0, dtype=complex)
    r = 1j * (params.delta_rd + chi) + 0.5 * params.kappa
    t0, t1 = window
    span = t1 - t0
    if span <= 0:
        raise ValueError("window must have positive length")
    integral = a_ss * span + (a0 - a_ss) * (np.exp(-r * t0) - np.exp(-r * t1)) / r
    scale = 2.0 * np.sqrt(params.eta * params.kappa) * np.exp(-1j * params.phi)
    return scale * integral / span


@dataclasses.dataclass
class ClusterReport:
    means: np.ndarray            # (D,) complex, empirical per-cluster center
    covariances: np.ndarray      # (D, 2, 2)
    counts: np.ndarray           # (D,)
    separations: dict[tuple[int, int], float]
    stream_count: int            # points > 3 sigma from every reference mean
    assignments: np.ndarray      # (n_points,) cluster index
    reference_means: np.ndarray

    def sigma(self, a: int) -> float:
        """RMS per-axis spread of cluster a."""
        return float(np.sqrt(0.5 * np.trace(self.covariances[a])))


def cluster_report(points: np.ndarray, reference_means: np.ndarray) -> ClusterReport:
    """Nearest-reference-mean clustering of IQ points.

    Reference means come from theory (steady-state or windowed amplitudes);
    stream points are those farther than 3 of the matching cluster's sigma
    from every reference mean, the signature of mid-measurement decay.
    """
    points = np.asarray(points, dtype=complex)
    refs = np.asarray(reference_means, dtype=complex)
    if len(points) < 10:
        raise ValueError("need at least 10 points to cluster")
    pair_sep = {}
    for a in range(len(refs)):
        for b in range(a + 1, len(refs)):
            sep = abs(refs[a] - refs[b])
            if sep < 1e-9:
                raise ValueError(f"reference means {a} and {b} are degenerate")
            pair_sep[(a, b)] = sep
    dist = np.abs(points[:, None] - refs[None, :])
    assign = np.argmin(dist, axis=1)
    d = len(refs)
    means = np.zeros(d, dtype=complex)
    covs = np.zeros((d, 2, 2))
    counts = np.zeros(d, dtype=np.int64)
    for a in range(d):
        sel = points[assign == a]
        counts[a] = len(sel)
        if len(sel) == 0:
            means[a] = refs[a]
            continue
        means[a] = sel.mean()
        xy = np.stack([sel.real, sel.imag], axis=1)
        covs[a] = np.cov(xy.T) if len(sel) > 1 else np.zeros((2, 2))
    sigmas = np.array([np.sqrt(0.5 * np.trace(covs[a])) if counts[a] > 1 else np.inf
                       for a in range(d)])
    empirical_sep = {(a, b): float(abs(means[a] - means[b])) for (a, b) in pair_sep}
    stream = int(np.sum(np.all(dist > 3.0 * sigmas[None, :], axis=1)))
    return ClusterReport(means=means, covariances=covs, counts=counts,
                         separations=empirical_sep, stream_count=stream,
                         assignments=assign, reference_means=refs)


@dataclasses.dataclass(frozen=True)
class JumpEvent:
    t: float
    source: int
    target: int


def detect_jumps(population_trace: np.ndarray, t: np.ndarray,
                 threshold: float = 0.5, hold_time: float = 0.5) -> list[JumpEvent]:
    """Dominant-level crossings that persist for at least hold_time.

    The dominant level is argmax_j rho_jj with population above threshold;
    ambiguous stretches (below threshold) do not start or end events.
    """
    pops = np.asarray(population_trace, dtype=float)
    t = np.asarray(t, dtype=float)
    if len(pops) != len(t):
        raise ValueError("trace and time grid must have equal length")
    dt = t[1] - t[0] if len(t) > 1 else 0.0
    hold_steps = max(int(np.round(hold_time / dt)), 1) if dt > 0 else 1
    if len(pops) < hold_steps:
        raise ValueError("trace shorter than the hold window")
    dom = np.argmax(pops, axis=1)
    settled = pops[np.arange(len(pops)), dom] >= threshold
    events: list[JumpEvent] = []
    current = dom[0] if settled[0] else -1
    i = 0
    n = len(pops)
    while i < n:
        if settled[i] and dom[i] != current:
            lvl = dom[i]
            j = i
            while j < n and settled[j] and dom[j] == lvl:
                j += 1
            if j - i >= hold_steps:
                if current >= 0:
                    events.append(JumpEvent(t=float(t[i]), source=int(current),
                                            target=int(lvl)))
                current = lvl
                i = j
                continue
            i = j
            continue
        i += 1
    return events


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class SweepPoint:
    value: float
    report: ClusterReport
    rates: "object"
    ensemble: EnsembleResult


def sweep(cfg: EnsembleConfig, axis: str, grid: np.ndarray) -> list[SweepPoint]:
    """Re-run the ensemble across a parameter grid.

    axis: readout_frequency (values are Delta_rd in rad/us),
    measurement_time (t_final in us) or drive_amplitude (|epsilon| scale).
    """
    from .model import RateTable

    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    if len(grid) == 0:
        raise ValueError("sweep grid must be nonempty")
    out = []
    for value in grid:
        params = cfg.params
        t_final = cfg.t_final
        if axis == "readout_frequency":
            params = dataclasses.replace(params, delta_rd=float(value))
        elif axis == "measurement_time":
            t_final = float(value)
        elif axis == "drive_amplitude":
            phase = np.angle(cfg.params.epsilon) if cfg.params.epsilon != 0 else 0.0
            params = dataclasses.replace(params, epsilon=value * np.exp(1j * phase))
        else:
            raise ValueError(f"unknown sweep axis {axis!r}")
        window = cfg.window if axis != "measurement_time" else None
        point_cfg = dataclasses.replace(cfg, params=params, t_final=t_final,
                                        window=window)
        res = run_ensemble(point_cfg)
        w = point_cfg.window or (0.0, point_cfg.t_final)
        refs = reference_iq_means(params, w)
        report = cluster_report(res.iq_points[res.kept], refs)
        rates = RateTable.at_steady_state(params)
        out.append(SweepPoint(value=float(value), report=report, rates=rates,
                              ensemble=res))
    return out
