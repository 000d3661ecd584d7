"""Exact linear algebra for spin-1/2 registers.

States are plain numpy arrays: a 1-D array of length ``2**n`` is a pure state,
a 2-D ``(2**n, 2**n)`` array is a density matrix. Basis index ``i`` encodes a
bitstring with qubit 0 as the most significant bit, and ``|0>`` is spin-up
(sigma^z = +1).

Hamiltonians are weighted sums of Pauli products. They are never stored as a
dense matrix unless asked for; instead each term is compiled into a bit-flip
mask plus a per-amplitude coefficient vector, so ``H @ psi`` is a handful of
gathers and multiplies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

AXES = ("x", "y", "z", "+", "-")
DENSE_QUBIT_BUDGET = 12
MAX_QUBITS = 16

UNITARY_TOL = 1e-10
NORM_TOL = 1e-9


class BudgetExceededError(ValueError):
    """Raised when a dense operation is requested above the qubit budget."""


def n_qubits_of(state: np.ndarray) -> int:
    dim = state.shape[0]
    n = dim.bit_length() - 1
    if dim != 1 << n or n < 1:
        raise ValueError(f"state dimension {dim} is not a power of two")
    if state.ndim == 2 and state.shape != (dim, dim):
        raise ValueError(f"density matrix must be square, got {state.shape}")
    if state.ndim not in (1, 2):
        raise ValueError("state must be a vector or a square matrix")
    return n


def is_density_matrix(state: np.ndarray) -> bool:
    return state.ndim == 2


# ---------------------------------------------------------------------------
# Pauli terms and Hamiltonians
# ---------------------------------------------------------------------------

_CONJ_AXIS = {"x": "x", "y": "y", "z": "z", "+": "-", "-": "+"}


@dataclass(frozen=True)
class PauliTerm:
    """``coefficient * prod_q sigma_q^{axis}`` over distinct qubits."""

    coefficient: float
    factors: tuple[tuple[int, str], ...]

    def __post_init__(self):
        factors = tuple(sorted((int(q), str(a)) for q, a in self.factors))
        qubits = [q for q, _ in factors]
        if len(set(qubits)) != len(qubits):
            raise ValueError(f"repeated qubit in term {self.factors}")
        for q, a in factors:
            if a not in AXES:
                raise ValueError(f"unknown axis {a!r}")
            if q < 0:
                raise ValueError(f"negative qubit index {q}")
        n_plus = sum(a == "+" for _, a in factors)
        n_minus = sum(a == "-" for _, a in factors)
        if n_plus != n_minus:
            raise ValueError("sigma^+ and sigma^- factors must appear in pairs")
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "coefficient", float(self.coefficient))

    @property
    def is_self_adjoint(self) -> bool:
        return all(a in "xyz" for _, a in self.factors)

    def adjoint(self) -> "PauliTerm":
        return PauliTerm(self.coefficient, tuple((q, _CONJ_AXIS[a]) for q, a in self.factors))

    def scaled(self, c: float) -> "PauliTerm":
        return PauliTerm(self.coefficient * c, self.factors)


def _term_action(term: PauliTerm, n: int) -> tuple[int, np.ndarray]:
    """Return ``(mask, d)`` with ``(T psi)[j] = d[j] * psi[j ^ mask]``."""
    idx = np.arange(1 << n)
    mask = 0
    for q, a in term.factors:
        if a != "z":
            mask |= 1 << (n - 1 - q)
    src = idx ^ mask
    d = np.full(1 << n, term.coefficient, dtype=complex)
    for q, a in term.factors:
        b = (src >> (n - 1 - q)) & 1
        if a == "y":
            d *= np.where(b == 0, 1j, -1j)
        elif a == "z":
            d *= 1 - 2 * b
        elif a == "+":
            d *= b  # |1> -> |0>
        elif a == "-":
            d *= 1 - b  # |0> -> |1>
    return mask, d


@dataclass(frozen=True)
class Hamiltonian:
    """Hermitian sum of :class:`PauliTerm` on ``n_qubits`` spins (hbar = 1)."""

    n_qubits: int
    terms: tuple[PauliTerm, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if not 1 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in 1..{MAX_QUBITS}")
        terms = tuple(self.terms)
        for t in terms:
            for q, _ in t.factors:
                if q >= self.n_qubits:
                    raise ValueError(f"qubit {q} out of range for {self.n_qubits} qubits")
        # sigma^+/- terms need their conjugate partner with the same weight
        pending: dict[tuple, float] = {}
        for t in terms:
            if t.is_self_adjoint:
                continue
            pending[t.factors] = pending.get(t.factors, 0.0) + t.coefficient
        for factors, c in pending.items():
            partner = tuple(sorted((q, _CONJ_AXIS[a]) for q, a in factors))
            if not math.isclose(pending.get(partner, math.nan), c, rel_tol=1e-12, abs_tol=1e-15):
                raise ValueError(f"term {factors} lacks its Hermitian conjugate")
        object.__setattr__(self, "terms", terms)

    @property
    def dim(self) -> int:
        return 1 << self.n_qubits

    def __add__(self, other: "Hamiltonian") -> "Hamiltonian":
        if other.n_qubits != self.n_qubits:
            raise ValueError("qubit count mismatch")
        return Hamiltonian(self.n_qubits, self.terms + other.terms)

    def scaled(self, c: float) -> "Hamiltonian":
        return Hamiltonian(self.n_qubits, tuple(t.scaled(c) for t in self.terms))

    def coefficient_bound(self) -> float:
        """Upper bound on the operator norm: sum of |coefficient| * ||factor||."""
        return float(sum(abs(t.coefficient) for t in self.terms))

    @cached_property
    def compiled(self) -> dict[int, np.ndarray]:
        """Terms merged by bit-flip mask."""
        out: dict[int, np.ndarray] = {}
        for t in self.terms:
            mask, d = _term_action(t, self.n_qubits)
            if mask in out:
                out[mask] = out[mask] + d
            else:
                out[mask] = d
        return out

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """``H @ psi`` for a vector or for the rows of a matrix."""
        if psi.shape[0] != self.dim:
            raise ValueError("dimension mismatch")
        return apply_compiled(self.compiled, psi)

    def to_dense(self) -> np.ndarray:
        if self.n_qubits > DENSE_QUBIT_BUDGET:
            raise BudgetExceededError(
                f"dense matrix for {self.n_qubits} qubits exceeds budget of {DENSE_QUBIT_BUDGET}"
            )
        dim = self.dim
        h = np.zeros((dim, dim), dtype=complex)
        rows = np.arange(dim)
        for mask, d in self.compiled.items():
            h[rows, rows ^ mask] += d
        return h

    def diagonal_commutes(self, diag: np.ndarray, atol: float = 1e-12) -> bool:
        """Whether ``[H, D] = 0`` for the diagonal operator ``D = diag(diag)``."""
        rows = np.arange(self.dim)
        for mask, d in self.compiled.items():
            if np.max(np.abs(d * (diag[rows ^ mask] - diag)), initial=0.0) > atol:
                return False
        return True


def apply_compiled(compiled: dict[int, np.ndarray], psi: np.ndarray) -> np.ndarray:
    rows = np.arange(psi.shape[0])
    out = np.zeros(psi.shape, dtype=complex)
    for mask, d in compiled.items():
        if psi.ndim == 1:
            out += d * (psi[rows ^ mask] if mask else psi)
        else:
            out += d[:, None] * (psi[rows ^ mask] if mask else psi)
    return out


def pauli(n_qubits: int, factors: dict[int, str] | Iterable[tuple[int, str]], coefficient: float = 1.0) -> Hamiltonian:
    """Single Pauli product as a Hamiltonian, e.g. ``pauli(3, {0: "x", 2: "x"})``."""
    items = factors.items() if isinstance(factors, dict) else factors
    return Hamiltonian(n_qubits, (PauliTerm(coefficient, tuple(items)),))


def z_eigenvalues(n_qubits: int, qubit: int) -> np.ndarray:
    """Diagonal of sigma^z on ``qubit``."""
    idx = np.arange(1 << n_qubits)
    return 1 - 2 * ((idx >> (n_qubits - 1 - qubit)) & 1)


def magnetization_diagonal(n_qubits: int) -> np.ndarray:
    """Diagonal of M_z = (1/2) sum sigma^z."""
    return 0.5 * sum(z_eigenvalues(n_qubits, q) for q in range(n_qubits))


def parity_diagonal(n_qubits: int) -> np.ndarray:
    out = np.ones(1 << n_qubits, dtype=int)
    for q in range(n_qubits):
        out *= z_eigenvalues(n_qubits, q)
    return out


# ---------------------------------------------------------------------------
# States and gates
# ---------------------------------------------------------------------------


def state_from_bits(bits: Sequence[str]) -> np.ndarray:
    """Computational basis state; ``"up"`` is ``|0>`` and ``"down"`` is ``|1>``."""
    if len(bits) == 0:
        raise ValueError("empty bit sequence")
    index = 0
    for b in bits:
        if b not in ("up", "down"):
            raise ValueError(f"bits must be 'up' or 'down', got {b!r}")
        index = (index << 1) | (b == "down")
    psi = np.zeros(1 << len(bits), dtype=complex)
    psi[index] = 1.0
    return psi


def density_matrix(psi: np.ndarray) -> np.ndarray:
    return np.outer(psi, psi.conj())


def check_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> None:
    u = np.asarray(u)
    if u.ndim != 2 or u.shape[0] != u.shape[1]:
        raise ValueError("gate matrix must be square")
    if np.max(np.abs(u.conj().T @ u - np.eye(u.shape[0]))) > tol:
        raise ValueError("gate matrix is not unitary")


def _apply_to_axes(t: np.ndarray, axes: Sequence[int], u: np.ndarray) -> np.ndarray:
    k = len(axes)
    moved = np.moveaxis(t, axes, range(k))
    shape = moved.shape
    res = (u @ moved.reshape(1 << k, -1)).reshape(shape)
    return np.moveaxis(res, range(k), axes)


def apply_unitary(state: np.ndarray, targets: Sequence[int], u: np.ndarray) -> np.ndarray:
    """Unchecked gate application; used on hot paths after validation."""
    n = n_qubits_of(state)
    targets = list(targets)
    if state.ndim == 1:
        return _apply_to_axes(state.reshape((2,) * n), targets, u).reshape(-1)
    t = state.reshape((2,) * (2 * n))
    t = _apply_to_axes(t, targets, u)
    t = _apply_to_axes(t, [q + n for q in targets], u.conj())
    return t.reshape(state.shape)


def apply_gate(state: np.ndarray, targets: Sequence[int], u: np.ndarray) -> np.ndarray:
    """Apply a 1- or 2-qubit unitary ``u`` on ``targets`` (pure or mixed state)."""
    n = n_qubits_of(state)
    targets = [int(q) for q in targets]
    u = np.asarray(u, dtype=complex)
    if len(targets) not in (1, 2) or u.shape != (1 << len(targets),) * 2:
        raise ValueError("expected a 2x2 matrix on one target or 4x4 on two")
    if len(set(targets)) != len(targets):
        raise ValueError(f"duplicate targets {targets}")
    if any(not 0 <= q < n for q in targets):
        raise ValueError(f"targets {targets} out of range for {n} qubits")
    check_unitary(u)
    return apply_unitary(state, targets, u)


def apply_kraus(rho: np.ndarray, target: int, kraus: Sequence[np.ndarray]) -> np.ndarray:
    """Single-qubit channel ``rho -> sum K rho K^dagger`` on ``target``."""
    n = n_qubits_of(rho)
    t = rho.reshape((2,) * (2 * n))
    out = np.zeros_like(t)
    for k in kraus:
        s = _apply_to_axes(t, [target], k)
        out += _apply_to_axes(s, [target + n], k.conj())
    return out.reshape(rho.shape)


# ---------------------------------------------------------------------------
# Observables and reduced states
# ---------------------------------------------------------------------------


def expectation(state: np.ndarray, obs: Hamiltonian) -> float:
    if state.shape[0] != obs.dim:
        raise ValueError(f"state has dimension {state.shape[0]}, observable {obs.dim}")
    if state.ndim == 1:
        val = np.vdot(state, obs.apply(state))
    else:
        val = np.trace(obs.apply(state))
    return float(val.real)


def diagonal_expectation(state: np.ndarray, diag: np.ndarray) -> float:
    if state.ndim == 1:
        return float(np.dot(np.abs(state) ** 2, diag))
    return float(np.dot(np.diag(state).real, diag))


def probabilities(state: np.ndarray) -> np.ndarray:
    """Born distribution over computational basis states."""
    p = np.abs(state) ** 2 if state.ndim == 1 else np.clip(np.diag(state).real, 0.0, None)
    return p / p.sum()


def partial_trace(state: np.ndarray, keep: Sequence[int]) -> np.ndarray:
    """Reduced density matrix on ``keep`` (in the given qubit order)."""
    n = n_qubits_of(state)
    keep = [int(q) for q in keep]
    if not keep:
        raise ValueError("keep must be non-empty")
    if len(set(keep)) != len(keep) or any(not 0 <= q < n for q in keep):
        raise ValueError(f"invalid subsystem {keep}")
    rest = [q for q in range(n) if q not in keep]
    da, db = 1 << len(keep), 1 << len(rest)
    if state.ndim == 1:
        m = state.reshape((2,) * n).transpose(keep + rest).reshape(da, db)
        return m @ m.conj().T
    t = state.reshape((2,) * (2 * n))
    perm = keep + rest + [q + n for q in keep] + [q + n for q in rest]
    t = t.transpose(perm).reshape(da, db, da, db)
    return np.einsum("ajbj->ab", t)


def purity(rho: np.ndarray) -> float:
    return float(np.sum(np.abs(rho) ** 2))


def renyi2_exact(rho: np.ndarray) -> float:
    """Second Renyi entropy in bits, ``-log2 Tr rho^2``."""
    if rho.ndim == 1:
        return 0.0
    return -math.log2(purity(rho))


def dense_and_eigensystem(h: Hamiltonian) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense matrix with ascending eigenvalues and eigenvectors (columns)."""
    if h.n_qubits > DENSE_QUBIT_BUDGET:
        raise BudgetExceededError(
            f"{h.n_qubits} qubits exceeds the dense diagonalization budget of {DENSE_QUBIT_BUDGET}"
        )
    mat = h.to_dense()
    evals, evecs = np.linalg.eigh(mat)
    return mat, evals, evecs


# ---------------------------------------------------------------------------
# Matrix-free exponential
# ---------------------------------------------------------------------------


def expm_apply(apply, psi: np.ndarray, t: float, norm_bound: float, tol: float = 1e-15) -> np.ndarray:
    """``exp(-1j * t * H) @ psi`` by a scaled Taylor series.

    ``apply`` computes ``H @ x``; ``norm_bound`` bounds ``||H||``. The interval
    is split so each substep has ``|t| * norm_bound <= 1``.
    """
    steps = max(1, math.ceil(abs(t) * norm_bound))
    dt = t / steps
    out = psi.astype(complex, copy=True)
    for _ in range(steps):
        term = out
        acc = out.copy()
        scale = max(np.linalg.norm(out), 1e-300)
        for k in range(1, 60):
            term = apply(term) * (-1j * dt / k)
            acc += term
            if np.linalg.norm(term) <= tol * scale:
                break
        out = acc
    return out
