"""Run configuration: strict JSON parsing, unit conversion, manifests.

Config files carry frequencies in ordinary MHz (converted to rad/us by
2 pi), times in us, and rates in 1/us (or as T1/T-phi times in us).
Unknown keys are rejected with path-qualified messages; no physical
quantity is defaulted except phi (0) and the record weighting (flat).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import pathlib

import numpy as np

from .linalg import HilbertLayout, fock_space_for_amplitude
from .model import DecoherenceSpec, QuditSpec, ResonatorSpec, SystemParams, level_pairs

TWO_PI = 2.0 * np.pi

EXPERIMENT_KINDS = ("rates", "solve-me", "solve-effective-me", "simulate", "sweep")
SWEEP_AXES = ("readout_frequency", "measurement_time", "drive_amplitude")


class ConfigError(ValueError):
    """Invalid or unparseable run configuration."""


def _require(mapping: dict, key: str, path: str):
    if key not in mapping:
        raise ConfigError(f"{path}: missing required key {key!r}")
    return mapping[key]


def _check_keys(mapping: dict, allowed: set[str], path: str):
    unknown = set(mapping) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")


def _number(value, path: str, *, minimum=None, positive=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    v = float(value)
    if positive and v <= 0:
        raise ConfigError(f"{path}: must be > 0, got {v}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}: must be >= {minimum}, got {v}")
    return v


def _complex(value, path: str) -> complex:
    if not (isinstance(value, list) and len(value) == 2):
        raise ConfigError(f"{path}: expected [re, im] pair")
    return complex(_number(value[0], path + "[0]"), _number(value[1], path + "[1]"))


def _pair_key(key: str, d: int, path: str) -> tuple[int, int]:
    parts = key.split("-")
    if len(parts) != 2:
        raise ConfigError(f"{path}: pair key must look like 'j-k', got {key!r}")
    try:
        j, k = int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ConfigError(f"{path}: non-integer pair key {key!r}") from exc
    if not (0 <= j < k < d):
        raise ConfigError(f"{path}: pair ({j},{k}) out of range for {d} levels")
    return j, k


def _rate_table(block, d: int, path: str, invert: bool) -> dict[tuple[int, int], float]:
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object of pair rates")
    out = {}
    for key, value in block.items():
        jk = _pair_key(key, d, f"{path}.{key}")
        v = _number(value, f"{path}.{key}", positive=invert, minimum=None if invert else 0.0)
        if v < 0:
            raise ConfigError(f"{path}.{key}: negative rate")
        out[jk] = 1.0 / v if invert else v
    return out


@dataclasses.dataclass
class RunConfig:
    params: SystemParams
    lamb: tuple[float, ...] | None
    experiment_kind: str
    t_final_us: float | None
    n_trajectories: int
    master_seed: int
    initial_state: np.ndarray | None       # density matrix, D x D
    window_us: tuple[float, float] | None
    sweep_axis: str | None
    sweep_grid: list[float] | None
    dt_us: float | None
    n_fock: int | None
    budget: float
    method: str
    out_dir: str
    thin: int
    sample_trajectories: int
    include_shifts: bool
    rates_trace_t_final_us: float | None
    raw: dict

    def resolve_n_fock(self) -> int:
        """Configured value, or the coherent-state leakage rule."""
        if self.n_fock is not None:
            return self.n_fock
        from .model import steady_state_amplitudes

        a_ss = steady_state_amplitudes(self.params.chi, self.params.kappa,
                                       self.params.epsilon, self.params.delta_rd)
        # transient can overshoot the steady value; factor covers ringing
        alpha_max = 1.3 * float(np.max(np.abs(a_ss)))
        return fock_space_for_amplitude(alpha_max)

    def layout(self) -> HilbertLayout:
        return HilbertLayout(self.params.D, self.resolve_n_fock())


def _parse_system(block: dict) -> tuple[SystemParams, tuple[float, ...] | None]:
    path = "system"
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object")
    allowed = {"levels", "omega_mhz", "chi_qr_mhz", "chi_mhz", "coupling",
               "kappa_in_mhz", "kappa_out_mhz", "kappa_int_mhz",
               "omega_r_mhz", "omega_d_mhz", "a_in_bar", "n_bar", "eta",
               "phi_rad", "t1_us", "gamma1_per_us", "gamma_phi_per_us",
               "t_phi_us"}
    _check_keys(block, allowed, path)
    d = int(_number(_require(block, "levels", path), f"{path}.levels", minimum=2))

    kappa_in = TWO_PI * _number(_require(block, "kappa_in_mhz", path), f"{path}.kappa_in_mhz", minimum=0.0)
    kappa_out = TWO_PI * _number(_require(block, "kappa_out_mhz", path), f"{path}.kappa_out_mhz", minimum=0.0)
    kappa_int = TWO_PI * _number(_require(block, "kappa_int_mhz", path), f"{path}.kappa_int_mhz", minimum=0.0)
    if kappa_in + kappa_out + kappa_int <= 0:
        raise ConfigError(f"{path}: total kappa must be > 0")
    omega_r = TWO_PI * _number(_require(block, "omega_r_mhz", path), f"{path}.omega_r_mhz")
    omega_d = TWO_PI * _number(_require(block, "omega_d_mhz", path), f"{path}.omega_d_mhz")
    a_in = _complex(_require(block, "a_in_bar", path), f"{path}.a_in_bar")
    n_bar = _number(block.get("n_bar", 0.0), f"{path}.n_bar", minimum=0.0)
    eta = _number(_require(block, "eta", path), f"{path}.eta", minimum=0.0)
    if eta > 1.0:
        raise ConfigError(f"{path}.eta: must lie in [0, 1]")
    phi = _number(block.get("phi_rad", 0.0), f"{path}.phi_rad")

    resonator = ResonatorSpec(omega_r=omega_r, kappa_in=kappa_in,
                              kappa_out=kappa_out, kappa_int=kappa_int,
                              a_in_bar=a_in, omega_d=omega_d, N_bar=n_bar)

    gamma1 = {}
    if "t1_us" in block and "gamma1_per_us" in block:
        raise ConfigError(f"{path}: give t1_us or gamma1_per_us, not both")
    if "t1_us" in block:
        gamma1 = _rate_table(block["t1_us"], d, f"{path}.t1_us", invert=True)
    elif "gamma1_per_us" in block:
        gamma1 = _rate_table(block["gamma1_per_us"], d, f"{path}.gamma1_per_us", invert=False)
    gamma_phi = {}
    if "t_phi_us" in block and "gamma_phi_per_us" in block:
        raise ConfigError(f"{path}: give t_phi_us or gamma_phi_per_us, not both")
    if "t_phi_us" in block:
        gamma_phi = _rate_table(block["t_phi_us"], d, f"{path}.t_phi_us", invert=True)
    elif "gamma_phi_per_us" in block:
        gamma_phi = _rate_table(block["gamma_phi_per_us"], d, f"{path}.gamma_phi_per_us", invert=False)
    deco = DecoherenceSpec(gamma1=gamma1, gamma_phi=gamma_phi)

    chi_routes = [k for k in ("chi_qr_mhz", "chi_mhz", "coupling") if k in block]
    if len(chi_routes) != 1:
        raise ConfigError(f"{path}: exactly one of chi_qr_mhz / chi_mhz / coupling required")
    lamb = None
    if chi_routes[0] == "coupling":
        cpl = block["coupling"]
        cpath = f"{path}.coupling"
        _check_keys(cpl, {"omega_q_mhz", "alpha_q_mhz", "g_mhz"}, cpath)
        omega_q = TWO_PI * _number(_require(cpl, "omega_q_mhz", cpath), f"{cpath}.omega_q_mhz")
        alpha_q = TWO_PI * _number(_require(cpl, "alpha_q_mhz", cpath), f"{cpath}.alpha_q_mhz")
        g = TWO_PI * _number(_require(cpl, "g_mhz", cpath), f"{cpath}.g_mhz")
        qudit = QuditSpec.weakly_anharmonic(d, omega_q, alpha_q, g)
        params = SystemParams.from_specs(qudit, resonator, deco, eta=eta, phi=phi)
        from .model import dispersive_shifts

        _, lamb_arr = dispersive_shifts(qudit, resonator)
        lamb = tuple(float(x) for x in lamb_arr)
        return params, lamb
    if chi_routes[0] == "chi_qr_mhz":
        chi_qr = TWO_PI * _number(block["chi_qr_mhz"], f"{path}.chi_qr_mhz")
        chi = tuple(j * chi_qr for j in range(d))
    else:
        raw = block["chi_mhz"]
        if not (isinstance(raw, list) and len(raw) == d):
            raise ConfigError(f"{path}.chi_mhz: expected {d} values")
        chi = tuple(TWO_PI * _number(v, f"{path}.chi_mhz[{i}]") for i, v in enumerate(raw))
    omega_raw = block.get("omega_mhz", [0.0] * d)
    if not (isinstance(omega_raw, list) and len(omega_raw) == d):
        raise ConfigError(f"{path}.omega_mhz: expected {d} values")
    omega = tuple(TWO_PI * _number(v, f"{path}.omega_mhz[{i}]") for i, v in enumerate(omega_raw))
    if abs(omega[0]) > 1e-12:
        raise ConfigError(f"{path}.omega_mhz[0]: ground level must sit at 0")
    params = SystemParams(omega_tilde=omega, chi=chi,
                          kappa=resonator.kappa, epsilon=resonator.epsilon,
                          delta_rd=resonator.delta_rd, decoherence=deco,
                          eta=eta, phi=phi, N_bar=n_bar)
    return params, lamb


def _parse_initial_state(block, d: int, path: str) -> np.ndarray:
    if isinstance(block, str):
        if block == "ground":
            rho = np.zeros((d, d), dtype=complex)
            rho[0, 0] = 1.0
            return rho
        if block == "equal-superposition":
            ket = np.ones(d, dtype=complex) / np.sqrt(d)
            return np.outer(ket, ket.conj())
        raise ConfigError(f"{path}: unknown named state {block!r}")
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected a name or an object")
    _check_keys(block, {"ket", "rho"}, path)
    if ("ket" in block) == ("rho" in block):
        raise ConfigError(f"{path}: give exactly one of ket / rho")
    if "ket" in block:
        raw = block["ket"]
        if not (isinstance(raw, list) and len(raw) == d):
            raise ConfigError(f"{path}.ket: expected {d} amplitude pairs")
        ket = np.array([_complex(v, f"{path}.ket[{i}]") for i, v in enumerate(raw)])
        nrm = np.linalg.norm(ket)
        if nrm == 0:
            raise ConfigError(f"{path}.ket: zero vector")
        ket = ket / nrm
        return np.outer(ket, ket.conj())
    raw = block["rho"]
    if not (isinstance(raw, list) and len(raw) == d):
        raise ConfigError(f"{path}.rho: expected a {d}x{d} matrix of [re, im] pairs")
    rho = np.zeros((d, d), dtype=complex)
    for i, row in enumerate(raw):
        if not (isinstance(row, list) and len(row) == d):
            raise ConfigError(f"{path}.rho[{i}]: expected {d} entries")
        for j, v in enumerate(row):
            rho[i, j] = _complex(v, f"{path}.rho[{i}][{j}]")
    from .linalg import require_valid_density

    try:
        require_valid_density(rho, path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rho


def parse_config_dict(data: dict, source: str = "<config>") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    _check_keys(data, {"experiment", "system", "numerics", "output"}, source)
    for key in ("experiment", "system"):
        _require(data, key, source)

    params, lamb = _parse_system(data["system"])
    d = params.D

    exp = data["experiment"]
    epath = "experiment"
    if not isinstance(exp, dict):
        raise ConfigError(f"{epath}: expected an object")
    _check_keys(exp, {"kind", "t_final_us", "n_trajectories", "master_seed",
                      "initial_state", "window_us", "sweep", "include_shifts",
                      "rates_trace_t_final_us"}, epath)
    kind = _require(exp, "kind", epath)
    if kind not in EXPERIMENT_KINDS:
        raise ConfigError(f"{epath}.kind: unknown kind {kind!r}; "
                          f"expected one of {EXPERIMENT_KINDS}")
    t_final = None
    if kind != "rates":
        t_final = _number(_require(exp, "t_final_us", epath), f"{epath}.t_final_us", positive=True)
    n_traj = int(_number(exp.get("n_trajectories", 1), f"{epath}.n_trajectories", minimum=1))
    master_seed = int(_number(exp.get("master_seed", 0), f"{epath}.master_seed", minimum=0))
    initial = None
    if kind in ("solve-me", "solve-effective-me", "simulate", "sweep"):
        initial = _parse_initial_state(_require(exp, "initial_state", epath),
                                       d, f"{epath}.initial_state")
    window = None
    if "window_us" in exp:
        raw = exp["window_us"]
        if not (isinstance(raw, list) and len(raw) == 2):
            raise ConfigError(f"{epath}.window_us: expected [start, end]")
        window = (_number(raw[0], f"{epath}.window_us[0]", minimum=0.0),
                  _number(raw[1], f"{epath}.window_us[1]", positive=True))
        if window[1] <= window[0]:
            raise ConfigError(f"{epath}.window_us: end must exceed start")
    sweep_axis = sweep_grid = None
    if kind == "sweep":
        sw = _require(exp, "sweep", epath)
        _check_keys(sw, {"axis", "grid"}, f"{epath}.sweep")
        sweep_axis = _require(sw, "axis", f"{epath}.sweep")
        if sweep_axis not in SWEEP_AXES:
            raise ConfigError(f"{epath}.sweep.axis: expected one of {SWEEP_AXES}")
        grid_raw = _require(sw, "grid", f"{epath}.sweep")
        if not (isinstance(grid_raw, list) and grid_raw):
            raise ConfigError(f"{epath}.sweep.grid: expected a nonempty list")
        sweep_grid = [_number(v, f"{epath}.sweep.grid[{i}]") for i, v in enumerate(grid_raw)]
        if sweep_axis == "readout_frequency":
            # grid is drive frequency in MHz; store as Delta_rd in rad/us
            omega_r = TWO_PI * _number(data["system"]["omega_r_mhz"], "system.omega_r_mhz")
            sweep_grid = [omega_r - TWO_PI * v for v in sweep_grid]
    include_shifts = bool(exp.get("include_shifts", False))
    trace_t = None
    if "rates_trace_t_final_us" in exp:
        trace_t = _number(exp["rates_trace_t_final_us"], f"{epath}.rates_trace_t_final_us",
                          positive=True)

    num = data.get("numerics", {})
    _check_keys(num, {"dt_us", "n_fock", "budget", "method"}, "numerics")
    dt = _number(num["dt_us"], "numerics.dt_us", positive=True) if "dt_us" in num else None
    n_fock = int(_number(num["n_fock"], "numerics.n_fock", minimum=3)) if "n_fock" in num else None
    budget = _number(num.get("budget", 1e9), "numerics.budget", positive=True)
    method = num.get("method", "rk4")
    if method not in ("rk4", "euler"):
        raise ConfigError("numerics.method: expected 'rk4' or 'euler'")

    out = data.get("output", {})
    _check_keys(out, {"directory", "thin", "sample_trajectories"}, "output")
    out_dir = out.get("directory", "out")
    if not isinstance(out_dir, str):
        raise ConfigError("output.directory: expected a string")
    thin = int(_number(out.get("thin", 1), "output.thin", minimum=1))
    n_sample = int(_number(out.get("sample_trajectories", 8), "output.sample_trajectories",
                           minimum=0))

    return RunConfig(
        params=params, lamb=lamb, experiment_kind=kind, t_final_us=t_final,
        n_trajectories=n_traj, master_seed=master_seed, initial_state=initial,
        window_us=window, sweep_axis=sweep_axis, sweep_grid=sweep_grid,
        dt_us=dt, n_fock=n_fock, budget=budget, method=method,
        out_dir=out_dir, thin=thin,
        sample_trajectories=n_sample, include_shifts=include_shifts,
        rates_trace_t_final_us=trace_t, raw=data)


def parse_config(path: str | pathlib.Path) -> RunConfig:
    p = pathlib.Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    return parse_config_dict(data, source=str(p))


def config_roundtrip(cfg: RunConfig) -> RunConfig:
    """Serialize the raw config and parse it again (identity check)."""
    return parse_config_dict(json.loads(json.dumps(cfg.raw)), source="<roundtrip>")


# ---------------------------------------------------------------------------
# output formatting and manifests
# ---------------------------------------------------------------------------


def fmt(x: float) -> str:
    """17-significant-digit decimal, enough to round-trip a double."""
    return format(float(x), ".17g")


def json_default(obj):
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(f"cannot serialize {type(obj)}")


def dump_json(path: pathlib.Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=json_default))


def sha256_file(path: pathlib.Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(cfg: RunConfig) -> str:
    canon = json.dumps(cfg.raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir: pathlib.Path, cfg: RunConfig, master_seed: int,
                   started: str, finished: str,
                   extra: dict | None = None) -> pathlib.Path:
    """List every file in the output directory with its checksum.

    Written last so a complete manifest implies a complete run.
    """
    from . import __version__

    outputs = {}
    for f in sorted(out_dir.iterdir()):
        if f.name == "manifest.json" or f.is_dir():
            continue
        outputs[f.name] = sha256_file(f)
    payload = {
        "schema": "run-manifest-v1",
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "master_seed": master_seed,
        "started_utc": started,
        "finished_utc": finished,
        "outputs": outputs,
    }
    if extra:
        payload.update(extra)
    path = out_dir / "manifest.json"
    dump_json(path, payload)
    return path
