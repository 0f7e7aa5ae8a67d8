"""Figure builders. Pure presentation: no physics is recomputed here.

All renders are deterministic for identical inputs: fixed figure sizes,
fixed dpi, no timestamps in the output files.
"""

from __future__ import annotations

import pathlib

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import FigureInputError, RunDirectory, columns

SAVE_OPTS = dict(dpi=150, metadata={"Software": "readout-figures"})

LEVEL_NAMES = ("g", "e", "f", "h", "i", "j")
LEVEL_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2")


def _level_count(header: list[str]) -> int:
    d = 0
    while f"rho_{d}{d}_re" in header:
        d += 1
    if d == 0:
        raise FigureInputError("no density-matrix columns found")
    return d


def _save(fig, out_path: str | pathlib.Path) -> pathlib.Path:
    out = pathlib.Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **SAVE_OPTS)
    plt.close(fig)
    return out


def render_trajectories(run: RunDirectory, out_path) -> pathlib.Path:
    """Sample-trajectory panels: populations, coherence magnitudes and entropy
    rows; three sample columns plus the ensemble-mean column."""
    return _save(build_trajectories_figure(run), out_path)


def build_trajectories_figure(run: RunDirectory):
    header, body = run.csv("trajectories.csv")
    d = _level_count(header)
    ens = run.json("ensemble.json", schema_key="ensemble")
    tids = sorted({int(float(row[0])) for row in body})[:3]
    if not tids:
        raise FigureInputError("trajectories.csv holds no sample trajectories")

    fig, axes = plt.subplots(3, len(tids) + 1, figsize=(3.2 * (len(tids) + 1), 7.2),
                             sharex=True, constrained_layout=True)
    pairs = [(j, k) for j in range(d) for k in range(j + 1, d)]

    def plot_series(col, t, pops, cohs, entropy, title):
        ax_p, ax_c, ax_s = axes[0, col], axes[1, col], axes[2, col]
        for j in range(d):
            ax_p.plot(t, pops[j], color=LEVEL_COLORS[j],
                      label=rf"$\rho_{{{LEVEL_NAMES[j]}{LEVEL_NAMES[j]}}}$")
        for i, (j, k) in enumerate(pairs):
            ax_c.plot(t, cohs[i], color=LEVEL_COLORS[i], ls="--",
                      label=rf"$|\rho_{{{LEVEL_NAMES[j]}{LEVEL_NAMES[k]}}}|$")
        ax_s.plot(t, entropy, color="k")
        ax_p.set_title(title)
        ax_p.set_ylim(-0.05, 1.05)
        ax_c.set_ylim(bottom=-0.02)
        ax_s.set_xlabel("t (us)")
        if col == 0:
            ax_p.set_ylabel("populations")
            ax_c.set_ylabel("coherences")
            ax_s.set_ylabel("entropy (nats)")
            ax_p.legend(fontsize=7, loc="upper right")
            ax_c.legend(fontsize=7, loc="upper right")

    id_col = header.index("trajectory_id")
    for col, tid in enumerate(tids):
        rows = [row for row in body if int(float(row[id_col])) == tid]
        names = ["t"] + [f"rho_{j}{j}_re" for j in range(d)]
        names += [f"rho_{j}{k}_re" for j, k in pairs] + [f"rho_{j}{k}_im" for j, k in pairs]
        names += ["entropy"]
        vals = columns(header, rows, names)
        t = vals[0]
        pops = vals[1:1 + d]
        re = vals[1 + d:1 + d + len(pairs)]
        im = vals[1 + d + len(pairs):1 + d + 2 * len(pairs)]
        cohs = [np.hypot(re[i], im[i]) for i in range(len(pairs))]
        entropy = vals[-1]
        plot_series(col, t, pops, cohs, entropy, f"trajectory {tid}")

    t = np.asarray(ens["t"], dtype=float)
    mean_re = np.asarray(ens["mean_rho_re"], dtype=float)
    mean_im = np.asarray(ens["mean_rho_im"], dtype=float)
    pops = [mean_re[:, j, j] for j in range(d)]
    cohs = [np.hypot(mean_re[:, j, k], mean_im[:, j, k]) for j, k in pairs]
    plot_series(len(tids), t, pops, cohs,
                np.asarray(ens["mean_entropy"], dtype=float),
                f"mean of {int(np.max(ens['n_alive']))}")
    return fig


def render_iq_scatter(run: RunDirectory, out_path) -> pathlib.Path:
    """Phase-plane scatter of windowed record averages."""
    header, body = run.csv("iq.csv")
    vre, vim = columns(header, body, ["v_bar_re", "v_bar_im"])
    fig, ax = plt.subplots(figsize=(5.0, 5.0), constrained_layout=True)
    ax.scatter(vre, vim, s=6, alpha=0.5, color="#1f77b4", linewidths=0)
    ax.set_xlabel(r"$\bar{V}_I$")
    ax.set_ylabel(r"$\bar{V}_Q$")
    ax.set_aspect("equal")
    ax.set_title(f"{len(vre)} trajectories")
    return _save(fig, out_path)


def render_rate_compare(run: RunDirectory, out_path) -> pathlib.Path:
    """Measurement rate vs twice the measurement-induced dephasing rate."""
    header, body = run.csv("rates_trace.csv")
    gm_cols = [c for c in header if c.startswith("gamma_m_")]
    if not gm_cols:
        raise FigureInputError("rates_trace.csv has no rate columns")
    fig, axes = plt.subplots(1, len(gm_cols),
                             figsize=(3.4 * len(gm_cols), 3.2),
                             constrained_layout=True, sharex=True)
    axes = np.atleast_1d(axes)
    for ax, gm_col in zip(axes, gm_cols):
        pair = gm_col.removeprefix("gamma_m_")
        names = ["t", gm_col, f"two_gamma_d_{pair}"]
        t, gm, gd2 = columns(header, body, names)
        a, b = LEVEL_NAMES[int(pair[0])], LEVEL_NAMES[int(pair[1])]
        ax.plot(t, gm, color="#d62728", label=rf"$\Gamma_{{m,{a}{b}}}$")
        ax.plot(t, gd2, color="#1f77b4", ls="--", label=rf"$2\Gamma_{{d,{a}{b}}}$")
        ax.set_xlabel("t (us)")
        ax.set_ylabel("rate (1/us)")
        ax.legend(fontsize=8)
    return _save(fig, out_path)


def render_sweep_grid(run: RunDirectory, out_path) -> pathlib.Path:
    """One scatter panel per sweep point, annotated with cluster centers."""
    summary = run.json("sweep.json", schema_key="sweep")
    points = summary["points"]
    if not points:
        raise FigureInputError("sweep.json holds no points")
    n = len(points)
    ncols = min(n, 4)
    nrows = (n + ncols - 1) // ncols
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 3.2 * nrows),
                             constrained_layout=True, squeeze=False)
    for i, pt in enumerate(points):
        ax = axes[i // ncols][i % ncols]
        header, body = run.csv(pt["iq_csv"])
        vre, vim = columns(header, body, ["v_bar_re", "v_bar_im"])
        ax.scatter(vre, vim, s=5, alpha=0.45, color="#1f77b4", linewidths=0)
        for a, (mre, mim) in enumerate(pt["cluster_means"]):
            ax.plot(mre, mim, "x", color=LEVEL_COLORS[a], ms=9, mew=2)
        ax.set_aspect("equal")
        ax.set_title(f"{summary['axis']} = {pt['value']:.4g}", fontsize=9)
    for i in range(n, nrows * ncols):
        axes[i // ncols][i % ncols].axis("off")
    return _save(fig, out_path)


RENDERERS = {
    "trajectories": render_trajectories,
    "iq-scatter": render_iq_scatter,
    "rate-compare": render_rate_compare,
    "sweep-grid": render_sweep_grid,
}


def render(kind: str, in_dir, out_path) -> pathlib.Path:
    if kind not in RENDERERS:
        raise FigureInputError(
            f"unknown figure kind {kind!r}; expected one of {sorted(RENDERERS)}")
    return RENDERERS[kind](RunDirectory(in_dir), out_path)
