"""Gate set, XY-interaction decompositions, block circuits and noisy execution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .annealing import DigitizedPlan
from .core import _apply_to_axes, apply_kraus, apply_unitary, check_unitary, density_matrix, n_qubits_of
from .model import Lattice

_I2 = np.eye(2, dtype=complex)
_PAULI = {
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
CZ = np.diag([1, 1, 1, -1]).astype(complex)
ISWAP = np.array([[1, 0, 0, 0], [0, 0, 1j, 0], [0, 1j, 0, 0], [0, 0, 0, 1]], dtype=complex)

GATE_KINDS = ("rx", "ry", "rz", "cz", "iswap", "raw_unitary")
TWO_QUBIT_BASES = ("cz", "iswap", "xy")


def rotation(axis: str, angle: float) -> np.ndarray:
    """``R_axis(angle) = exp(-i angle sigma_axis / 2)``."""
    return math.cos(angle / 2) * _I2 - 1j * math.sin(angle / 2) * _PAULI[axis]


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None
    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        arity = 1 if self.kind in ("rx", "ry", "rz") else 2
        if self.kind == "raw_unitary":
            if self.matrix is None:
                raise ValueError("raw_unitary needs a matrix")
            arity = self.matrix.shape[0].bit_length() - 1
        if len(self.qubits) != arity or len(set(self.qubits)) != arity:
            raise ValueError(f"{self.kind} needs {arity} distinct qubits, got {self.qubits}")
        if self.kind in ("rx", "ry", "rz") and self.angle is None:
            raise ValueError(f"{self.kind} needs an angle")

    def unitary(self) -> np.ndarray:
        if self.kind in ("rx", "ry", "rz"):
            return rotation(self.kind[1], self.angle)
        if self.kind == "cz":
            return CZ
        if self.kind == "iswap":
            return ISWAP
        return self.matrix


def rx(q, a): return Gate("rx", (q,), float(a))
def ry(q, a): return Gate("ry", (q,), float(a))
def rz(q, a): return Gate("rz", (q,), float(a))
def cz(a, b): return Gate("cz", (a, b))
def iswap(a, b): return Gate("iswap", (a, b))


@dataclass
class Circuit:
    """Gates in application order; ``blocks`` maps block number to first gate index."""

    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    blocks: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for g in self.gates:
            self._check(g)

    def _check(self, g: Gate) -> None:
        if any(not 0 <= q < self.n_qubits for q in g.qubits):
            raise ValueError(f"gate {g.kind} on {g.qubits} out of range for {self.n_qubits} qubits")

    def append(self, g: Gate) -> None:
        self._check(g)
        self.gates.append(g)

    def extend(self, gates: Sequence[Gate]) -> None:
        for g in gates:
            self.append(g)

    def mark_block(self, n: int) -> None:
        self.blocks[n] = len(self.gates)

    def __len__(self) -> int:
        return len(self.gates)

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)

    def block_slices(self) -> list[tuple[int, slice]]:
        starts = sorted(self.blocks.items(), key=lambda kv: kv[1])
        out = []
        for k, (n, start) in enumerate(starts):
            stop = starts[k + 1][1] if k + 1 < len(starts) else len(self.gates)
            out.append((n, slice(start, stop)))
        return out

    def to_text(self) -> str:
        marks: dict[int, list[int]] = {}
        for n, i in self.blocks.items():
            marks.setdefault(i, []).append(n)
        lines = [f"#QUBITS {self.n_qubits}"]
        for i, g in enumerate(self.gates + [None]):
            for n in sorted(marks.get(i, [])):
                lines.append(f"#BLOCK {n}")
            if g is None:
                break
            if g.kind in ("rx", "ry", "rz"):
                lines.append(f"{g.kind.upper()} {g.qubits[0]} {g.angle:.17g}")
            elif g.kind in ("cz", "iswap"):
                lines.append(f"{g.kind.upper()} {g.qubits[0]} {g.qubits[1]}")
            else:
                raise ValueError("raw_unitary gates have no text form")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str, n_qubits: int | None = None) -> "Circuit":
        gates: list[Gate] = []
        blocks: dict[int, int] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            parts = raw.split()
            if not parts:
                continue
            head = parts[0].upper()
            if head == "#QUBITS":
                n_qubits = int(parts[1]) if n_qubits is None else n_qubits
            elif head == "#BLOCK":
                blocks[int(parts[1])] = len(gates)
            elif head.startswith("#"):
                continue
            elif head in ("RX", "RY", "RZ"):
                gates.append(Gate(head.lower(), (int(parts[1]),), float(parts[2])))
            elif head in ("CZ", "ISWAP"):
                gates.append(Gate(head.lower(), (int(parts[1]), int(parts[2]))))
            else:
                raise ValueError(f"line {lineno}: unknown instruction {parts[0]!r}")
        if n_qubits is None:
            n_qubits = 1 + max((q for g in gates for q in g.qubits), default=0)
        return cls(n_qubits, gates, blocks)


def circuit_unitary(gates: Sequence[Gate], n_qubits: int) -> np.ndarray:
    """Dense unitary of a gate list (small registers only)."""
    dim = 1 << n_qubits
    t = np.eye(dim, dtype=complex).reshape((2,) * n_qubits + (dim,))
    for g in gates:
        t = _apply_to_axes(t, list(g.qubits), g.unitary())
    return t.reshape(dim, dim)


def phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``min_phi ||e^{i phi} a - b||_2`` with the phase fixed by the overlap."""
    ov = np.vdot(a.ravel(), b.ravel())
    phase = ov / abs(ov) if abs(ov) > 1e-300 else 1.0
    return float(np.linalg.norm(phase * a - b, 2))


# ---------------------------------------------------------------------------
# XY interaction
# ---------------------------------------------------------------------------


def u_xy(phi: float) -> np.ndarray:
    """``exp(-i phi (s+s- + s-s+))`` on two qubits."""
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[1, 0, 0, 0], [0, c, -1j * s, 0], [0, -1j * s, c, 0], [0, 0, 0, 1]], dtype=complex)


def decompose_xy_cz(phi: float, n: int = 0, k: int = 1) -> list[Gate]:
    """Two-CZ sequence for ``u_xy(phi)`` on qubits ``(n, k)``, application order."""
    h = math.pi / 2
    return [
        rz(n, -h), ry(k, h),
        ry(n, h),
        cz(n, k),
        ry(n, phi), ry(k, -phi),
        cz(n, k),
        ry(n, -h),
        rz(n, h), ry(k, -h),
    ]


def decompose_xy_iswap(phi: float, n: int = 0, k: int = 1) -> list[Gate]:
    """Two-iSWAP sequence for ``u_xy(phi)`` on qubits ``(n, k)``, application order."""
    h = math.pi / 2
    return [
        ry(n, -h), rx(k, -h),
        iswap(n, k),
        ry(n, phi + math.pi), rz(k, h),
        rz(n, h), ry(k, phi + math.pi),
        iswap(n, k),
        rx(n, h), ry(k, -h),
        rz(n, -h), rz(k, -h),
    ]


def xy_gates(phi: float, n: int, k: int, basis: str) -> list[Gate]:
    if basis == "cz":
        return decompose_xy_cz(phi, n, k)
    if basis == "iswap":
        return decompose_xy_iswap(phi, n, k)
    if basis == "xy":
        return [Gate("raw_unitary", (n, k), matrix=u_xy(phi))]
    raise ValueError(f"unknown two-qubit basis {basis!r}")


def build_block_circuit(
    plan: DigitizedPlan,
    n: int,
    lat: Lattice,
    two_qubit_basis: str = "cz",
    edge_substeps: int = 1,
) -> Circuit:
    """Gates for block ``n``: a staggered R_z layer, then one XY gate per edge.

    ``edge_substeps > 1`` splits the coupling angle into that many slices with
    the edge order alternating forward and backward, which converges to the
    exact coupling exponential.
    """
    _, _, phi_z, phi_j = plan.block(n)
    c = Circuit(lat.n_nodes)
    c.mark_block(n)
    for q, l in enumerate(lat.generations):
        c.append(rz(q, (-1) ** l * 2.0 * phi_z))
    edges = lat.ordered_edges()
    for r in range(edge_substeps):
        order = edges if r % 2 == 0 else edges[::-1]
        for a, b in order:
            c.extend(xy_gates(phi_j / edge_substeps, a, b, two_qubit_basis))
    return c


def build_circuit(plan: DigitizedPlan, lat: Lattice, two_qubit_basis: str = "cz",
                  edge_substeps: int = 1) -> Circuit:
    c = Circuit(lat.n_nodes)
    for n in range(1, plan.M + 1):
        block = build_block_circuit(plan, n, lat, two_qubit_basis, edge_substeps)
        c.mark_block(n)
        c.extend(block.gates)
    return c


# ---------------------------------------------------------------------------
# Noise
# ---------------------------------------------------------------------------

DEFAULT_DURATIONS = {"rx": 0.03, "ry": 0.03, "rz": 0.03, "cz": 0.06, "iswap": 0.06, "raw_unitary": 0.06}


@dataclass(frozen=True)
class NoiseModel:
    """Coherent gate error plus per-gate damping/dephasing (times in microseconds).

    ``t1``/``t2`` default to the averages measured on the 7-qubit device; the
    gate durations are assumptions, not device data. Infinite ``t1`` and
    ``t2`` switch decoherence off.
    """

    epsilon: float = 0.0
    t1: float = 51.9
    t2: float = 9.9
    durations: dict = field(default_factory=lambda: dict(DEFAULT_DURATIONS))
    readout: tuple[tuple[float, float], ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.t1 <= 0 or self.t2 <= 0:
            raise ValueError("T1 and T2 must be positive")
        if self.t2 > 2 * self.t1:
            raise ValueError("T2 cannot exceed 2 T1")
        for p in (self.readout or ()):
            if len(p) != 2 or not all(0.0 <= x <= 1.0 for x in p):
                raise ValueError("readout fidelities must be pairs of probabilities")

    @property
    def decoherent(self) -> bool:
        return math.isfinite(self.t1) or math.isfinite(self.t2)

    def dephasing_time(self) -> float:
        rate = 1.0 / self.t2 - 1.0 / (2.0 * self.t1)
        return math.inf if rate <= 0 else 1.0 / rate

    def kraus_for(self, kind: str) -> list[list[np.ndarray]]:
        """Amplitude-damping and dephasing Kraus sets for one gate duration."""
        t = self.durations[kind]
        return [amplitude_damping_kraus(1.0 - math.exp(-t / self.t1)),
                dephasing_kraus(1.0 - math.exp(-2.0 * t / self.dephasing_time()))]

    def confusion_matrices(self) -> list[np.ndarray] | None:
        if self.readout is None:
            return None
        return [np.array([[f0, 1 - f1], [1 - f0, f1]]) for f0, f1 in self.readout]


def amplitude_damping_kraus(gamma: float) -> list[np.ndarray]:
    return [np.array([[1, 0], [0, math.sqrt(1 - gamma)]], dtype=complex),
            np.array([[0, math.sqrt(gamma)], [0, 0]], dtype=complex)]


def dephasing_kraus(lam: float) -> list[np.ndarray]:
    """Phase damping; off-diagonals shrink by ``sqrt(1 - lam)``."""
    return [np.array([[1, 0], [0, math.sqrt(1 - lam)]], dtype=complex),
            np.array([[0, 0], [0, math.sqrt(lam)]], dtype=complex)]


def random_direction(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def error_rotation(epsilon: float, d: np.ndarray) -> np.ndarray:
    """``exp(i epsilon d.sigma)``."""
    ds = d[0] * _PAULI["x"] + d[1] * _PAULI["y"] + d[2] * _PAULI["z"]
    return math.cos(epsilon) * _I2 + 1j * math.sin(epsilon) * ds


def perturb_gate(u: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Conjugate ``u`` by a small rotation about a random axis on each qubit."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    if epsilon == 0:
        return u
    n = u.shape[0].bit_length() - 1
    r = np.array([[1.0 + 0j]])
    for _ in range(n):
        r = np.kron(r, error_rotation(epsilon, random_direction(rng)))
    return r @ u @ r.conj().T


def run_circuit(state: np.ndarray, c: Circuit, noise: NoiseModel | None = None,
                rng: np.random.Generator | None = None) -> np.ndarray:
    """Apply ``c`` to a pure or mixed state, optionally with noise.

    A pure input is promoted to a density matrix when the noise model has
    finite T1/T2. ``rng`` defaults to one seeded from ``noise.seed``.
    """
    if n_qubits_of(state) != c.n_qubits:
        raise ValueError(f"state has {n_qubits_of(state)} qubits, circuit {c.n_qubits}")
    out = state.astype(complex, copy=True)
    if noise is None:
        for g in c.gates:
            out = apply_unitary(out, g.qubits, g.unitary())
        return out
    if rng is None:
        rng = np.random.default_rng(noise.seed)
    if noise.decoherent and out.ndim == 1:
        out = density_matrix(out)
    kraus_cache: dict[str, list] = {}
    for g in c.gates:
        u = perturb_gate(g.unitary(), noise.epsilon, rng)
        out = apply_unitary(out, g.qubits, u)
        if noise.decoherent:
            if g.kind not in kraus_cache:
                kraus_cache[g.kind] = noise.kraus_for(g.kind)
            for q in g.qubits:
                for ks in kraus_cache[g.kind]:
                    out = apply_kraus(out, q, ks)
    return out


def validate_gate(g: Gate) -> None:
    check_unitary(g.unitary())
