"""Command-line entry points.

Commands: rates, solve-me, solve-effective-me, simulate, sweep.
Exit codes: 0 success, 2 config error, 3 numerical abort, 4 budget exceeded.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import os
import pathlib
import sys

import numpy as np

from . import ensemble as ens
from . import lindblad, linalg, sme
from .config import (ConfigError, RunConfig, dump_json, fmt, parse_config,
                     write_manifest)
from .model import RateTable, amplitude_trajectory, level_pairs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_BUDGET = 4


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _pair_name(j: int, k: int) -> str:
    return f"{j}-{k}"


def _rho_columns(d: int) -> list[str]:
    cols = []
    for j in range(d):
        for k in range(d):
            cols += [f"rho_{j}{k}_re", f"rho_{j}{k}_im"]
    return cols


def _rho_values(rho: np.ndarray) -> list[str]:
    vals = []
    for j in range(rho.shape[0]):
        for k in range(rho.shape[1]):
            vals += [fmt(rho[j, k].real), fmt(rho[j, k].imag)]
    return vals


def _write_csv(path: pathlib.Path, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _effective_dt(cfg: RunConfig) -> float:
    return cfg.dt_us if cfg.dt_us is not None else sme.default_sme_dt(cfg.params)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_rates(cfg: RunConfig, out_dir: pathlib.Path) -> None:
    """Steady-state amplitudes and rates; checks Gamma_m = 2 Gamma_d before writing."""
    table = RateTable.at_steady_state(cfg.params, lamb=cfg.lamb)
    for pair, gm in table.gamma_m.items():
        gd2 = 2.0 * table.gamma_d[pair]
        if abs(gm - gd2) > 1e-10 * max(abs(gm), 1.0):
            raise linalg.StateValidationError(
                f"steady-state identity violated for pair {pair}: "
                f"Gamma_m={gm!r}, 2*Gamma_d={gd2!r}")
    p = cfg.params
    payload = {
        "schema": "rates-v1",
        "chi_rad_per_us": list(table.chi),
        "lamb_shift_rad_per_us": list(table.lamb) if table.lamb else None,
        "alpha_steady": [[a.real, a.imag] for a in table.alpha],
        "gamma_d_per_us": {_pair_name(*k): v for k, v in table.gamma_d.items()},
        "gamma_m_per_us": {_pair_name(*k): v for k, v in table.gamma_m.items()},
        "delta_d_rad_per_us": {_pair_name(*k): v for k, v in table.delta_d.items()},
        "omega_bar_rad_per_us": {_pair_name(*k): v for k, v in table.omega_bar.items()},
        "triangle_residual_rad_per_us": {f"{a}-{b}-{c}": v
                                         for (a, b, c), v in table.triangle.items()},
        "separations": {_pair_name(j, k): abs(table.alpha[j] - table.alpha[k])
                        for j, k in p.pairs},
        "iq_scale": 2.0 * np.sqrt(p.eta * p.kappa),
        "circle": {
            "center": [0.0, (2.0 * np.sqrt(p.eta * p.kappa) * abs(p.epsilon) / p.kappa)],
            "radius": 2.0 * np.sqrt(p.eta * p.kappa) * abs(p.epsilon) / p.kappa,
            "note": "cluster centers for real drive at phi=0; rotate by "
                    "arg(epsilon) - phi otherwise",
        },
    }
    dump_json(out_dir / "rates.json", payload)
    if cfg.rates_trace_t_final_us:
        dt = _effective_dt(cfg)
        t = np.arange(0.0, cfg.rates_trace_t_final_us + 0.5 * dt, dt)
        alphas = amplitude_trajectory(t, p.chi, p.kappa, p.epsilon, p.delta_rd)
        header = ["t"]
        for j, k in p.pairs:
            header += [f"gamma_m_{j}{k}", f"two_gamma_d_{j}{k}"]
        rows = []
        from .model import dephasing_rates, measurement_rates

        for i, ti in enumerate(t):
            gm = measurement_rates(alphas[i], p.kappa)
            gd = dephasing_rates(alphas[i], p.chi)
            row = [fmt(ti)]
            for pair in p.pairs:
                row += [fmt(gm[pair]), fmt(2.0 * gd[pair])]
            rows.append(row)
        _write_csv(out_dir / "rates_trace.csv", header, rows)


def cmd_solve_me(cfg: RunConfig, out_dir: pathlib.Path) -> None:
    """Integrate the combined-system master equation; emit reduced-qudit series."""
    layout = cfg.layout()
    p = cfg.params
    dt = cfg.dt_us if cfg.dt_us is not None else lindblad.default_me_dt(p)
    n_steps = int(round(cfg.t_final_us / dt))
    cost = n_steps * layout.dim ** 2
    if cost > cfg.budget:
        raise ens.BudgetExceeded(f"cost {cost:.3g} exceeds budget {cfg.budget:.3g}")
    t_grid = np.arange(n_steps + 1) * dt
    rho_q = cfg.initial_state
    vac = np.zeros((layout.n_fock, layout.n_fock), dtype=complex)
    vac[0, 0] = 1.0
    rho0 = np.kron(rho_q, vac)
    gen = lindblad.build_combined_generator(p, layout)
    sol = lindblad.integrate_me(rho0, gen, t_grid)
    lindblad.check_fock_leakage(sol.states[-1], layout)
    a_full = linalg.build_operator("annihilation", layout)
    header = ["t"] + _rho_columns(p.D) + ["entropy", "mean_photons", "alpha_re", "alpha_im"]
    rows = []
    for i in sorted(set(range(0, len(t_grid), cfg.thin)) | {len(t_grid) - 1}):
        rho = sol.states[i]
        red = linalg.partial_trace(rho, layout, keep="qudit")
        exp_a = np.trace(a_full @ rho)
        nbar = np.real(np.trace(a_full.conj().T @ a_full @ rho))
        rows.append([fmt(t_grid[i])] + _rho_values(red)
                    + [fmt(linalg.von_neumann_entropy(red)), fmt(nbar),
                       fmt(exp_a.real), fmt(exp_a.imag)])
    _write_csv(out_dir / "solve_me.csv", header, rows)


def cmd_solve_effective_me(cfg: RunConfig, out_dir: pathlib.Path) -> None:
    p = cfg.params
    dt = _effective_dt(cfg)
    n_steps = int(round(cfg.t_final_us / dt))
    if cfg.method == "euler":
        # same stepper the SME engine uses, so eta = 0 simulations reduce
        # to this output bit-for-bit
        p0 = dataclasses.replace(p, eta=0.0)
        res = sme.run_effective_sme_batch(p0, cfg.initial_state, n_steps, dt,
                                          cfg.master_seed, np.array([0]),
                                          thin=cfg.thin, sample_ids={0})
        t_out = res.t_out
        series = res.sample_rho[0]
    else:
        t_grid = np.arange(n_steps + 1) * dt
        sol = lindblad.integrate_effective_me(cfg.initial_state, p, t_grid,
                                              include_shifts=cfg.include_shifts)
        idx = sorted(set(range(0, n_steps + 1, cfg.thin)) | {n_steps})
        t_out = t_grid[idx]
        series = sol.states[idx]
    header = ["t"] + _rho_columns(p.D) + ["entropy"]
    rows = []
    for i, t in enumerate(t_out):
        rho = series[i]
        rows.append([fmt(t)] + _rho_values(rho)
                    + [fmt(linalg.von_neumann_entropy(rho))])
    _write_csv(out_dir / "effective_me.csv", header, rows)


def _ensemble_config(cfg: RunConfig, threads: int) -> ens.EnsembleConfig:
    dt = _effective_dt(cfg)
    return ens.EnsembleConfig(
        params=cfg.params, rho0=cfg.initial_state,
        n_trajectories=cfg.n_trajectories, t_final=cfg.t_final_us, dt=dt,
        master_seed=cfg.master_seed, thin=cfg.thin,
        window=cfg.window_us,
        sample_trajectories=cfg.sample_trajectories,
        budget=cfg.budget, threads=threads)


def _write_ensemble_outputs(res: ens.EnsembleResult, out_dir: pathlib.Path,
                            prefix: str = "") -> None:
    d = res.config.params.D
    stats = res.stats
    header = ["trajectory_id", "t"] + _rho_columns(d) + ["entropy", "v_i", "v_q"]
    rows = []
    for tid in sorted(res.sample_rho):
        series = res.sample_rho[tid]
        v = res.sample_v[tid]
        for i, t in enumerate(stats.t):
            rho = series[i]
            rows.append([str(tid), fmt(t)] + _rho_values(rho)
                        + [fmt(linalg.von_neumann_entropy(rho)),
                           fmt(v[i, 0]), fmt(v[i, 1])])
    _write_csv(out_dir / f"{prefix}trajectories.csv", header, rows)

    w = res.config.window or (0.0, res.config.t_final)
    iq_rows = [[str(tid), fmt(z.real), fmt(z.imag), fmt(w[0]), fmt(w[1]),
                str(int(res.aborted[tid]))]
               for tid, z in enumerate(res.iq_points)]
    _write_csv(out_dir / f"{prefix}iq.csv",
               ["trajectory_id", "v_bar_re", "v_bar_im",
                "window_start", "window_end", "aborted"], iq_rows)

    payload = {
        "schema": "ensemble-v1",
        "t": stats.t,
        "n_alive": stats.n_alive,
        "n_aborted": int(res.aborted.sum()),
        "mean_rho_re": stats.mean_rho.real,
        "mean_rho_im": stats.mean_rho.imag,
        "var_rho": stats.var_rho,
        "mean_entropy": stats.mean_entropy,
        "var_entropy": stats.var_entropy,
        "mean_v": stats.mean_v,
        "var_v": stats.var_v,
    }
    dump_json(out_dir / f"{prefix}ensemble.json", payload)


def cmd_simulate(cfg: RunConfig, out_dir: pathlib.Path, threads: int) -> None:
    res = ens.run_ensemble(_ensemble_config(cfg, threads))
    _write_ensemble_outputs(res, out_dir)


def cmd_sweep(cfg: RunConfig, out_dir: pathlib.Path, threads: int) -> None:
    base = _ensemble_config(cfg, threads)
    points = ens.sweep(base, cfg.sweep_axis, np.asarray(cfg.sweep_grid))
    summary = {"schema": "sweep-v1", "axis": cfg.sweep_axis, "points": []}
    for i, pt in enumerate(points):
        iq_rows = [[str(tid), fmt(z.real), fmt(z.imag)]
                   for tid, z in enumerate(pt.ensemble.iq_points)]
        _write_csv(out_dir / f"iq_{i:03d}.csv",
                   ["trajectory_id", "v_bar_re", "v_bar_im"], iq_rows)
        summary["points"].append({
            "value": pt.value,
            "cluster_means": [[m.real, m.imag] for m in pt.report.means],
            "reference_means": [[m.real, m.imag] for m in pt.report.reference_means],
            "covariances": pt.report.covariances,
            "counts": pt.report.counts,
            "sigmas": [pt.report.sigma(a) for a in range(len(pt.report.means))],
            "separations": {_pair_name(*k): v for k, v in pt.report.separations.items()},
            "stream_count": pt.report.stream_count,
            "gamma_m_per_us": {_pair_name(*k): v for k, v in pt.rates.gamma_m.items()},
            "gamma_d_per_us": {_pair_name(*k): v for k, v in pt.rates.gamma_d.items()},
            "iq_csv": f"iq_{i:03d}.csv",
        })
    dump_json(out_dir / "sweep.json", summary)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qudit-readout",
        description="Dispersive qudit readout simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("rates", "solve-me", "solve-effective-me", "simulate", "sweep"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON run configuration")
        sp.add_argument("--out", default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override master seed")
        sp.add_argument("--trajectories", type=int, default=None,
                        help="override trajectory count")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker processes for trajectory blocks")
        sp.add_argument("--thin", type=int, default=None,
                        help="persist every k-th sample")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = _utcnow()
    try:
        cfg = parse_config(args.config)
        if cfg.experiment_kind != args.command:
            raise ConfigError(
                f"config declares kind {cfg.experiment_kind!r} "
                f"but command is {args.command!r}")
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, master_seed=args.seed)
        if args.trajectories is not None:
            cfg = dataclasses.replace(cfg, n_trajectories=args.trajectories)
        if args.thin is not None:
            cfg = dataclasses.replace(cfg, thin=args.thin)
        out_dir = pathlib.Path(
            args.out or os.environ.get("QUDIT_READOUT_OUT") or cfg.out_dir)
        threads = args.threads if args.threads is not None else int(
            os.environ.get("QUDIT_READOUT_THREADS", "1"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if args.command == "rates":
            cmd_rates(cfg, out_dir)
        elif args.command == "solve-me":
            cmd_solve_me(cfg, out_dir)
        elif args.command == "solve-effective-me":
            cmd_solve_effective_me(cfg, out_dir)
        elif args.command == "simulate":
            cmd_simulate(cfg, out_dir, threads)
        elif args.command == "sweep":
            cmd_sweep(cfg, out_dir, threads)
    except ens.BudgetExceeded as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (linalg.StateValidationError, ens.TooManyAborts) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    write_manifest(out_dir, cfg, cfg.master_seed, started, _utcnow())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
