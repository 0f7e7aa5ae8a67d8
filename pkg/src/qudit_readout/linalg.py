"""Dense operator algebra for qudit and qudit-resonator Hilbert spaces.

Everything here is a pure function on numpy arrays.  Composite-space
operators use the fixed tensor ordering: qudit index slow (outer),
Fock index fast (inner), i.e. basis state |j, n> sits at row
``j * n_fock + n``.  All other modules rely on this ordering.
"""

from __future__ import annotations

import dataclasses

import numpy as np

# Eigenvalues in [EIG_CLAMP, 0) are treated as zero (integrator drift);
# anything below EIG_CLAMP is a genuine positivity failure.
EIG_CLAMP = -1e-6
EIG_ZERO = 1e-14

HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-9
NORM_TOL = 1e-9


class DimensionError(ValueError):
    """Operator/state dimensions do not match."""


class StateValidationError(ValueError):
    """A density matrix or ket failed a physicality check."""


@dataclasses.dataclass(frozen=True)
class HilbertLayout:
    """Shape of the working Hilbert space.

    ``n_fock = 0`` means a bare qudit with no resonator factor.
    """

    d_qudit: int
    n_fock: int = 0

    def __post_init__(self):
        if self.d_qudit < 2:
            raise ValueError(f"d_qudit must be >= 2, got {self.d_qudit}")
        if self.n_fock < 0:
            raise ValueError(f"n_fock must be >= 0, got {self.n_fock}")

    @property
    def has_resonator(self) -> bool:
        return self.n_fock > 0

    @property
    def dim(self) -> int:
        return self.d_qudit * self.n_fock if self.has_resonator else self.d_qudit


def fock_space_for_amplitude(alpha_max: float) -> int:
    """Truncation size holding coherent states up to |alpha_max|.

    Poisson photon statistics put essentially all weight below
    |a|^2 + 6|a| + 10; leakage above this is checked after every run.
    """
    a = abs(alpha_max)
    return int(np.ceil(a * a + 6.0 * a + 10.0))


# ---------------------------------------------------------------------------
# operator constructors
# ---------------------------------------------------------------------------


def annihilation(n_fock: int) -> np.ndarray:
    """Resonator lowering operator on an n_fock-dimensional Fock space."""
    if n_fock < 1:
        raise ValueError("annihilation needs n_fock >= 1")
    a = np.zeros((n_fock, n_fock), dtype=complex)
    ns = np.arange(1, n_fock)
    a[ns - 1, ns] = np.sqrt(ns)
    return a


def number_op(n_fock: int) -> np.ndarray:
    if n_fock < 1:
        raise ValueError("number operator needs n_fock >= 1")
    return np.diag(np.arange(n_fock, dtype=float)).astype(complex)


def displacement(alpha: complex, n_fock: int) -> np.ndarray:
    """Truncated displacement exp(alpha a^dag - alpha* a).

    Errors out when the truncation cannot hold |alpha| per the
    leakage rule, because the matrix exponential is then meaningless.
    """
    from scipy.linalg import expm

    needed = fock_space_for_amplitude(abs(alpha))
    if n_fock < needed:
        raise DimensionError(
            f"n_fock={n_fock} too small for displacement |alpha|={abs(alpha):.3g} "
            f"(needs >= {needed})"
        )
    a = annihilation(n_fock)
    return expm(alpha * a.conj().T - np.conj(alpha) * a)


def coherent_ket(alpha: complex, n_fock: int) -> np.ndarray:
    """Normalized coherent state |alpha> on a truncated Fock space."""
    n = np.arange(n_fock)
    from scipy.special import gammaln

    log_coeff = n * np.log(np.abs(alpha)) - 0.5 * gammaln(n + 1.0) if alpha != 0 else np.where(n == 0, 0.0, -np.inf)
    phase = np.exp(1j * np.angle(alpha) * n) if alpha != 0 else np.ones(n_fock)
    ket = np.exp(log_coeff - 0.5 * abs(alpha) ** 2) * phase
    return ket.astype(complex)


def projector(j: int, d: int) -> np.ndarray:
    if not 0 <= j < d:
        raise ValueError(f"level index {j} out of range for d={d}")
    p = np.zeros((d, d), dtype=complex)
    p[j, j] = 1.0
    return p


def sigma(j: int, k: int, d: int) -> np.ndarray:
    """|j><k| on a d-level system (j != k)."""
    if j == k:
        raise ValueError("sigma needs j != k; use projector for j == k")
    if not (0 <= j < d and 0 <= k < d):
        raise ValueError(f"level indices ({j},{k}) out of range for d={d}")
    s = np.zeros((d, d), dtype=complex)
    s[j, k] = 1.0
    return s


def sigma_z(j: int, k: int, d: int) -> np.ndarray:
    """|j><j| - |k><k| on a d-level system."""
    if j == k:
        raise ValueError("sigma_z needs j != k")
    return projector(j, d) - projector(k, d)


def embed_qudit(op: np.ndarray, layout: HilbertLayout) -> np.ndarray:
    """Lift a qudit operator into the composite space (identity on Fock)."""
    if op.shape != (layout.d_qudit, layout.d_qudit):
        raise DimensionError(f"qudit operator shape {op.shape} != d={layout.d_qudit}")
    if not layout.has_resonator:
        return op
    return np.kron(op, np.eye(layout.n_fock, dtype=complex))


def embed_resonator(op: np.ndarray, layout: HilbertLayout) -> np.ndarray:
    """Lift a resonator operator into the composite space (identity on qudit)."""
    if not layout.has_resonator:
        raise DimensionError("layout has no resonator factor")
    if op.shape != (layout.n_fock, layout.n_fock):
        raise DimensionError(f"resonator operator shape {op.shape} != n_fock={layout.n_fock}")
    return np.kron(np.eye(layout.d_qudit, dtype=complex), op)


def build_operator(kind: str, layout: HilbertLayout, *, j: int = 0, k: int = 0,
                   alpha: complex = 0.0) -> np.ndarray:
    """Named operator embedded in the full composite space.

    kind is one of: annihilation, number, projector, sigma, sigma_z,
    displacement.  Level indices j, k apply to the qudit kinds; alpha
    to displacement.
    """
    if kind in ("annihilation", "number", "displacement"):
        if not layout.has_resonator:
            raise DimensionError(f"{kind} requested but layout has n_fock=0")
        if kind == "annihilation":
            op = annihilation(layout.n_fock)
        elif kind == "number":
            op = number_op(layout.n_fock)
        else:
            op = displacement(alpha, layout.n_fock)
        return embed_resonator(op, layout)
    if kind == "projector":
        return embed_qudit(projector(j, layout.d_qudit), layout)
    if kind == "sigma":
        return embed_qudit(sigma(j, k, layout.d_qudit), layout)
    if kind == "sigma_z":
        return embed_qudit(sigma_z(j, k, layout.d_qudit), layout)
    raise ValueError(f"unknown operator kind {kind!r}")


# ---------------------------------------------------------------------------
# superoperator actions
# ---------------------------------------------------------------------------


def dissipator(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """D[L] rho = L rho L^dag - 1/2 {L^dag L, rho}."""
    if L.shape != rho.shape:
        raise DimensionError(f"operator shape {L.shape} != state shape {rho.shape}")
    Ld = L.conj().T
    LdL = Ld @ L
    return L @ rho @ Ld - 0.5 * (LdL @ rho + rho @ LdL)


def measurement_superop(L: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """M[L] rho = L rho + rho L^dag - <L + L^dag> rho (innovation term)."""
    if L.shape != rho.shape:
        raise DimensionError(f"operator shape {L.shape} != state shape {rho.shape}")
    Ld = L.conj().T
    expval = np.trace((L + Ld) @ rho)
    return L @ rho + rho @ Ld - expval * rho


def partial_trace(rho: np.ndarray, layout: HilbertLayout, keep: str) -> np.ndarray:
    """Trace out one factor of a qudit (x) Fock state; keep is 'qudit' or 'resonator'."""
    if not layout.has_resonator:
        raise DimensionError("partial_trace needs a composite layout")
    if rho.shape != (layout.dim, layout.dim):
        raise DimensionError(f"state shape {rho.shape} != layout dim {layout.dim}")
    r4 = rho.reshape(layout.d_qudit, layout.n_fock, layout.d_qudit, layout.n_fock)
    if keep == "qudit":
        return np.einsum("jnkn->jk", r4)
    if keep == "resonator":
        return np.einsum("jnjm->nm", r4)
    raise ValueError(f"keep must be 'qudit' or 'resonator', got {keep!r}")


# ---------------------------------------------------------------------------
# state checks and functionals
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class DensityDiagnostics:
    hermiticity_defect: float
    trace_defect: float
    min_eigenvalue: float

    def ok(self, hermiticity=HERMITICITY_TOL, trace=TRACE_TOL, eig=EIG_CLAMP) -> bool:
        return (self.hermiticity_defect <= hermiticity
                and self.trace_defect <= trace
                and self.min_eigenvalue >= eig)


def validate_density(rho: np.ndarray) -> DensityDiagnostics:
    """Hermiticity, trace and positivity defects of a candidate state."""
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise DimensionError(f"density matrix must be square, got {rho.shape}")
    herm = float(np.max(np.abs(rho - rho.conj().T)))
    tr = float(abs(np.trace(rho) - 1.0))
    mineig = float(np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))))
    return DensityDiagnostics(herm, tr, mineig)


def require_valid_density(rho: np.ndarray, context: str = "state") -> None:
    diag = validate_density(rho)
    if not diag.ok():
        raise StateValidationError(
            f"{context}: hermiticity defect {diag.hermiticity_defect:.3e}, "
            f"trace defect {diag.trace_defect:.3e}, "
            f"min eigenvalue {diag.min_eigenvalue:.3e}"
        )


def require_valid_ket(psi: np.ndarray, context: str = "ket") -> None:
    nrm = float(np.linalg.norm(psi))
    if abs(nrm - 1.0) > NORM_TOL:
        raise StateValidationError(f"{context}: norm {nrm} deviates from 1")


def von_neumann_entropy(rho: np.ndarray) -> float:
    """S(rho) = -Tr(rho ln rho) in nats.

    Eigenvalues in [EIG_CLAMP, 0) are clamped to zero; below EIG_CLAMP is
    an error; values under EIG_ZERO are excluded from the sum.
    """
    ev = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if ev.min() < EIG_CLAMP:
        raise StateValidationError(f"entropy of non-positive state (min eig {ev.min():.3e})")
    ev = np.clip(ev, 0.0, None)
    ev = ev[ev > EIG_ZERO]
    return float(-np.sum(ev * np.log(ev)))


def von_neumann_entropy_batch(rhos: np.ndarray) -> np.ndarray:
    """Entropy of a (..., d, d) stack of density matrices."""
    ev = np.linalg.eigvalsh(0.5 * (rhos + np.conj(np.swapaxes(rhos, -1, -2))))
    ev = np.clip(ev, 0.0, None)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(ev > EIG_ZERO, -ev * np.log(np.where(ev > EIG_ZERO, ev, 1.0)), 0.0)
    return np.sum(terms, axis=-1)


def purity(rho: np.ndarray) -> float:
    return float(np.real(np.trace(rho @ rho)))
