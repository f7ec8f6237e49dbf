"""Dense complex linear algebra over labeled multi-register Hilbert spaces.

Every state carries a :class:`SystemLayout`, an ordered list of
``(name, dim)`` registers.  Amplitude index order is row-major over the
registers, so the first register is the most significant tensor factor
(the ``np.kron`` convention).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Sequence

import numpy as np

CONSTRUCT_TOL = 1e-12
VERIFY_TOL = 1e-10
PSD_TOL = 1e-10
IMPOSSIBLE_TOL = 1e-14


class LayoutError(ValueError):
    """Register names or dimensions are inconsistent."""


class PartitionError(LayoutError):
    """A bipartition of registers is empty on one side or incomplete."""


class DomainError(ValueError):
    """An argument lies outside the operation's mathematical domain."""


class ImpossibleOutcomeError(DomainError):
    """A post-measurement state was requested for a zero-probability outcome."""


@dataclass(frozen=True)
class SystemLayout:
    registers: tuple[tuple[str, int], ...]

    def __post_init__(self):
        regs = tuple((str(name), int(dim)) for name, dim in self.registers)
        names = [name for name, _ in regs]
        if len(set(names)) != len(names):
            raise LayoutError(f"duplicate register names in {names}")
        for name, dim in regs:
            if dim < 1:
                raise LayoutError(f"register {name!r} has non-positive dimension {dim}")
        object.__setattr__(self, "registers", regs)

    @classmethod
    def of(cls, *registers: tuple[str, int]) -> "SystemLayout":
        return cls(tuple(registers))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.registers)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.registers)

    @property
    def total_dim(self) -> int:
        return int(np.prod(self.dims, dtype=np.int64)) if self.registers else 1

    def __len__(self):
        return len(self.registers)

    def __contains__(self, name):
        return name in self.names

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise LayoutError(f"unknown register {name!r}; have {list(self.names)}") from None

    def dim(self, name: str) -> int:
        return self.dims[self.index(name)]

    def subset(self, names: Iterable[str]) -> "SystemLayout":
        """Sub-layout with the given registers, kept in this layout's order."""
        wanted = set(names)
        for name in wanted:
            self.index(name)
        return SystemLayout(tuple(r for r in self.registers if r[0] in wanted))

    def concat(self, other: "SystemLayout") -> "SystemLayout":
        clash = set(self.names) & set(other.names)
        if clash:
            raise LayoutError(f"register names {sorted(clash)} present on both sides")
        return SystemLayout(self.registers + other.registers)

    def reordered(self, names: Sequence[str]) -> "SystemLayout":
        if sorted(names) != sorted(self.names):
            raise LayoutError(f"{list(names)} is not a permutation of {list(self.names)}")
        return SystemLayout(tuple((n, self.dim(n)) for n in names))


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray
    layout: SystemLayout

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.layout.total_dim:
            raise LayoutError(
                f"amplitude length {amps.size} does not match layout dimension {self.layout.total_dim}"
            )
        norm = np.linalg.norm(amps)
        if abs(norm - 1.0) > CONSTRUCT_TOL * max(1.0, np.sqrt(amps.size)):
            raise DomainError(f"state is not normalized (norm {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def normalized(cls, amplitudes, layout: SystemLayout) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        norm = np.linalg.norm(amps)
        if norm < IMPOSSIBLE_TOL:
            raise DomainError("cannot normalize the zero vector")
        return cls(amps / norm, layout)

    @classmethod
    def basis(cls, index: int, layout: SystemLayout) -> "StateVector":
        amps = np.zeros(layout.total_dim, dtype=complex)
        amps[index] = 1.0
        return cls(amps, layout)

    def tensor_view(self) -> np.ndarray:
        return self.amplitudes.reshape(self.layout.dims)

    def inner(self, other: "StateVector") -> complex:
        """<self|other>, registers matched by name."""
        other = reorder(other, self.layout.names)
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def density(self) -> "DensityOperator":
        return DensityOperator(np.outer(self.amplitudes, self.amplitudes.conj()), self.layout)


@dataclass(frozen=True, eq=False)
class DensityOperator:
    matrix: np.ndarray
    layout: SystemLayout

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=complex)
        d = self.layout.total_dim
        if mat.shape != (d, d):
            raise LayoutError(f"matrix shape {mat.shape} does not match layout dimension {d}")
        if np.max(np.abs(mat - mat.conj().T), initial=0.0) > CONSTRUCT_TOL * max(1, d):
            raise DomainError("density operator is not Hermitian")
        if abs(np.trace(mat) - 1.0) > CONSTRUCT_TOL * max(1, d):
            raise DomainError(f"density operator trace is {np.trace(mat)!r}, expected 1")
        mat = (mat + mat.conj().T) / 2
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    def eigvalsh(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def check_positive(self, tol: float = PSD_TOL) -> None:
        low = self.eigvalsh()[0]
        if low < -tol:
            raise DomainError(f"density operator has negative eigenvalue {low!r}")


@dataclass(frozen=True)
class SchmidtDecomposition:
    coefficients: np.ndarray
    left_basis: np.ndarray
    right_basis: np.ndarray
    left_layout: SystemLayout
    right_layout: SystemLayout
    rank: int

    def reconstruct(self) -> np.ndarray:
        """Amplitudes of sum_i c_i |L_i>|R_i> over left_layout + right_layout."""
        mat = (self.left_basis * self.coefficients) @ self.right_basis.T
        return mat.reshape(-1)


@dataclass(frozen=True)
class Ensemble:
    entries: tuple[tuple[float, StateVector], ...]

    def __post_init__(self):
        entries = tuple((float(p), s) for p, s in self.entries)
        if not entries:
            raise DomainError("ensemble is empty")
        probs = np.array([p for p, _ in entries])
        if np.any(probs < 0) or np.any(probs > 1):
            raise DomainError("ensemble probabilities must lie in [0, 1]")
        if abs(probs.sum() - 1.0) > CONSTRUCT_TOL * max(1, len(entries)):
            raise DomainError(f"ensemble probabilities sum to {probs.sum()!r}")
        layouts = {s.layout for _, s in entries}
        if len(layouts) != 1:
            raise LayoutError("ensemble states must share one layout")
        object.__setattr__(self, "entries", entries)

    @property
    def layout(self) -> SystemLayout:
        return self.entries[0][1].layout

    def average(self) -> DensityOperator:
        mat = sum(p * np.outer(s.amplitudes, s.amplitudes.conj()) for p, s in self.entries)
        return DensityOperator(mat, self.layout)


# ---------------------------------------------------------------------------
# register bookkeeping

def reorder(psi: StateVector, names: Sequence[str]) -> StateVector:
    """Same state with registers permuted into ``names`` order."""
    names = tuple(names)
    if names == psi.layout.names:
        return psi
    new_layout = psi.layout.reordered(names)
    axes = [psi.layout.index(n) for n in names]
    amps = np.transpose(psi.tensor_view(), axes).reshape(-1)
    return StateVector(amps, new_layout)


def rename(psi: StateVector, mapping: dict) -> StateVector:
    regs = tuple((mapping.get(n, n), d) for n, d in psi.layout.registers)
    return StateVector(psi.amplitudes, SystemLayout(regs))


def _bipartite_matrix(psi: StateVector, left: Sequence[str]) -> tuple[np.ndarray, SystemLayout, SystemLayout]:
    left_layout = psi.layout.subset(left)
    right_names = [n for n in psi.layout.names if n not in set(left)]
    right_layout = psi.layout.subset(right_names)
    ordered = reorder(psi, left_layout.names + right_layout.names)
    mat = ordered.amplitudes.reshape(left_layout.total_dim, right_layout.total_dim)
    return mat, left_layout, right_layout


def apply(psi: StateVector, op: np.ndarray, registers: Sequence[str]) -> np.ndarray:
    """Unnormalized amplitudes of ``op`` acting on ``registers`` of psi.

    The result is in psi's register order.  ``op`` is indexed over the
    given registers in the given order.
    """
    registers = list(registers)
    axes = [psi.layout.index(r) for r in registers]
    dims = psi.layout.dims
    sub = int(np.prod([dims[a] for a in axes], dtype=np.int64))
    op = np.asarray(op, dtype=complex)
    if op.shape != (sub, sub):
        raise LayoutError(f"operator shape {op.shape} does not act on registers {registers}")
    t = np.moveaxis(psi.tensor_view(), axes, list(range(len(axes))))
    rest = t.shape[len(axes):]
    t = (op @ t.reshape(sub, -1)).reshape(tuple(dims[a] for a in axes) + rest)
    return np.moveaxis(t, list(range(len(axes))), axes).reshape(-1)


def apply_unitary(psi: StateVector, op: np.ndarray, registers: Sequence[str]) -> StateVector:
    return StateVector(apply(psi, op, registers), psi.layout)


def expectation(psi: StateVector, op: np.ndarray, registers: Sequence[str]) -> float:
    """Real part of <psi| op |psi> for op acting on ``registers``."""
    return float(np.vdot(psi.amplitudes, apply(psi, op, registers)).real)


# ---------------------------------------------------------------------------
# the operations

def tensor(a, b):
    """Tensor product of two states (or two density operators)."""
    layout = a.layout.concat(b.layout)
    if isinstance(a, StateVector) and isinstance(b, StateVector):
        return StateVector(kron2(a.amplitudes, b.amplitudes), layout)
    if isinstance(a, DensityOperator) and isinstance(b, DensityOperator):
        return DensityOperator(kron2(a.matrix, b.matrix), layout)
    raise TypeError("tensor needs two StateVectors or two DensityOperators")


def partial_trace(rho, keep: Iterable[str]) -> DensityOperator:
    """Reduce ``rho`` onto the registers in ``keep``.

    Accepts a StateVector too, in which case the reduction is done on the
    amplitude matrix directly and the full outer product is never formed.
    Keeping nothing returns the 1x1 scalar 1.
    """
    keep = set(keep)
    layout = rho.layout
    for name in keep:
        layout.index(name)
    kept = layout.subset(keep)
    if isinstance(rho, StateVector):
        mat, _, _ = _bipartite_matrix(rho, kept.names)
        return DensityOperator(mat @ mat.conj().T, kept)
    if kept.names == layout.names:
        return rho
    n = len(layout)
    dims = layout.dims
    keep_axes = [layout.index(name) for name in kept.names]
    trace_axes = [i for i in range(n) if i not in keep_axes]
    t = rho.matrix.reshape(dims + dims)
    t = np.transpose(t, keep_axes + trace_axes + [n + i for i in keep_axes] + [n + i for i in trace_axes])
    dk = kept.total_dim
    dt = layout.total_dim // dk
    t = t.reshape(dk, dt, dk, dt)
    return DensityOperator(np.einsum("ajbj->ab", t), kept)


def _as_hermitian(a) -> np.ndarray:
    mat = a.matrix if isinstance(a, DensityOperator) else np.asarray(a, dtype=complex)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DomainError(f"expected a square matrix, got shape {mat.shape}")
    if np.max(np.abs(mat - mat.conj().T), initial=0.0) > VERIFY_TOL:
        raise DomainError("matrix is not Hermitian")
    return (mat + mat.conj().T) / 2


def trace_norm(a) -> float:
    """Sum of absolute eigenvalues of a Hermitian matrix."""
    return float(np.abs(np.linalg.eigvalsh(_as_hermitian(a))).sum())


def psd_sqrt(a) -> np.ndarray:
    w, v = np.linalg.eigh(_as_hermitian(a))
    # eigenvalues at rounding level are zeros; their square roots would not be
    noise = len(w) * np.finfo(float).eps * max(np.abs(w).max(initial=0.0), 1.0)
    w = np.sqrt(np.where(w > noise, w, 0.0))
    return (v * w) @ v.conj().T


def fidelity(rho0: DensityOperator, rho1: DensityOperator) -> float:
    """Root fidelity ||sqrt(rho0) sqrt(rho1)||_1, equal to |<a|b>| for pure states."""
    if rho0.layout.dims != rho1.layout.dims:
        raise LayoutError(f"dimension mismatch: {rho0.layout.dims} vs {rho1.layout.dims}")
    # singular values of sqrt(rho0) sqrt(rho1) rather than sqrt of the
    # eigenvalues of sqrt(rho0) rho1 sqrt(rho0): no sqrt of rounding noise
    s = np.linalg.svd(psd_sqrt(rho0) @ psd_sqrt(rho1), compute_uv=False)
    return float(min(1.0, s.sum()))


def schmidt(psi: StateVector, left: Iterable[str], tol: float = VERIFY_TOL) -> SchmidtDecomposition:
    """Schmidt decomposition across the cut ``left`` | everything else.

    ``left_basis`` and ``right_basis`` hold the Schmidt vectors as columns.
    """
    left = list(left)
    right = [n for n in psi.layout.names if n not in set(left)]
    if not left or not right:
        raise PartitionError("both sides of a Schmidt cut must be nonempty")
    mat, left_layout, right_layout = _bipartite_matrix(psi, left)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    rank = int(np.sum(s > tol))
    return SchmidtDecomposition(s, u, vh.T, left_layout, right_layout, rank)


def schmidt_rank(psi: StateVector, left: Iterable[str], tol: float = 1e-9) -> int:
    return schmidt(psi, left, tol=tol).rank


def circle_state(theta: float) -> np.ndarray:
    """(|0> + e^{i theta}|1>)/sqrt(2): a point on the Bloch equator."""
    return np.array([1.0, np.exp(1j * theta)], dtype=complex) / np.sqrt(2.0)


def rotation(phi: float) -> np.ndarray:
    """diag(1, e^{i phi}), the rotation by phi about the z axis."""
    return np.diag([1.0, np.exp(1j * phi)]).astype(complex)


def rotate_on_circle(psi, phi: float):
    if isinstance(psi, StateVector):
        if psi.layout.total_dim != 2:
            raise LayoutError("rotate_on_circle acts on a single qubit")
        return StateVector(rotation(phi) @ psi.amplitudes, psi.layout)
    return rotation(phi) @ np.asarray(psi, dtype=complex)


def purify(ensemble: Ensemble, register: str = "purifier") -> StateVector:
    """sum_k sqrt(p_k) |k> |psi_k> with |k> a fresh register of len(ensemble) levels."""
    system = ensemble.layout
    layout = SystemLayout(((register, len(ensemble.entries)),)).concat(system)
    amps = np.concatenate([np.sqrt(p) * s.amplitudes for p, s in ensemble.entries])
    return StateVector.normalized(amps, layout)


def is_projector(op: np.ndarray, tol: float = VERIFY_TOL) -> bool:
    op = np.asarray(op, dtype=complex)
    return bool(
        np.max(np.abs(op - op.conj().T), initial=0.0) <= tol
        and np.max(np.abs(op @ op - op), initial=0.0) <= tol
    )


def luders_project(psi: StateVector, projector: np.ndarray, registers: Sequence[str]):
    """Lüders measurement outcome for ``projector`` on ``registers``.

    Returns ``(probability, post_state)``.  Raises ImpossibleOutcomeError when
    the outcome has (numerically) zero probability.
    """
    if not is_projector(projector):
        raise DomainError("operator is not an orthogonal projector")
    projected = apply(psi, projector, registers)
    prob = float(np.vdot(projected, projected).real)
    if prob < IMPOSSIBLE_TOL:
        raise ImpossibleOutcomeError(f"outcome probability {prob!r} is zero")
    return prob, StateVector(projected / np.sqrt(prob), psi.layout)


def ket_projector(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex).reshape(-1)
    return np.outer(vec, vec.conj())


def kron2(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """np.kron for 1-d or 2-d operands, without np.kron's generic overhead."""
    if a.ndim == 1:
        return np.multiply.outer(a, b).reshape(-1)
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1])


def kron_all(mats: Iterable[np.ndarray]) -> np.ndarray:
    return reduce(kron2, (np.asarray(m, dtype=complex) for m in mats))
