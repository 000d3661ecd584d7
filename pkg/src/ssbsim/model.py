"""Lattices, the staggered-field and XY Hamiltonians, Neel states, schedules."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import (
    Hamiltonian,
    PauliTerm,
    magnetization_diagonal,
    parity_diagonal,
    state_from_bits,
)

LATTICE_KINDS = ("cayley_tree", "linear_chain")


@dataclass(frozen=True)
class Lattice:
    kind: str
    generations: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if self.kind not in LATTICE_KINDS:
            raise ValueError(f"unknown lattice kind {self.kind!r}")
        n = len(self.generations)
        for a, b in self.edges:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"bad edge {(a, b)}")

    @property
    def n_nodes(self) -> int:
        return len(self.generations)

    def ordered_edges(self) -> list[tuple[int, int]]:
        """Edges sorted by (generation of first node, first node, second node)."""
        return sorted(self.edges, key=lambda e: (self.generations[e[0]], e[0], e[1]))

    def neighbors(self, node: int) -> list[int]:
        out = []
        for a, b in self.edges:
            if a == node:
                out.append(b)
            elif b == node:
                out.append(a)
        return sorted(out)

    def graph_distances(self, source: int) -> list[int]:
        """Hop counts from ``source``; -1 for unreachable nodes."""
        dist = [-1] * self.n_nodes
        dist[source] = 0
        queue = deque([source])
        while queue:
            u = queue.popleft()
            for v in self.neighbors(u):
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def is_tree(self) -> bool:
        return len(self.edges) == self.n_nodes - 1 and min(self.graph_distances(0)) >= 0

    def to_text(self) -> str:
        lines = [f"# kind: {self.kind}", "# generations: " + " ".join(map(str, self.generations))]
        lines += [f"{a} {b}" for a, b in self.edges]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Lattice":
        kind = "cayley_tree"
        generations = None
        edges = []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                if key.strip() == "generations":
                    generations = tuple(int(x) for x in value.split())
                elif key.strip() == "kind":
                    kind = value.strip()
                continue
            a, b = line.split()
            edges.append((int(a), int(b)))
        if generations is None:
            raise ValueError("missing '# generations:' header")
        return cls(kind, generations, tuple(edges))


def build_cayley_tree(L: int) -> Lattice:
    """Binary Cayley tree with ``L`` generations, nodes in breadth-first order.

    Node ``k`` has children ``2k+1`` and ``2k+2``; generation ``l`` occupies
    indices ``2**l - 1 .. 2**(l+1) - 2``.
    """
    if not 1 <= L <= 4:
        raise ValueError(f"generations must be in 1..4, got {L}")
    n = 2**L - 1
    generations = tuple(int(math.log2(k + 1)) for k in range(n))
    edges = tuple(((k - 1) // 2, k) for k in range(1, n))
    return Lattice("cayley_tree", generations, edges)


def build_linear_chain(N: int) -> Lattice:
    if N < 1:
        raise ValueError("chain needs at least one spin")
    return Lattice("linear_chain", tuple(n % 2 for n in range(N)), tuple((n, n + 1) for n in range(N - 1)))


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


def neel_field_hamiltonian(lat: Lattice, omega0: float = 1.0) -> Hamiltonian:
    """Generation-staggered local fields, ``sum_n (-1)^l(n) omega0 sigma^z_n``."""
    if omega0 <= 0:
        raise ValueError("omega0 must be positive")
    terms = tuple(PauliTerm((-1) ** l * omega0, ((n, "z"),)) for n, l in enumerate(lat.generations))
    return Hamiltonian(lat.n_nodes, terms)


def _flip_flop(i: int, j: int, c: float) -> tuple[PauliTerm, PauliTerm]:
    return PauliTerm(c, ((i, "+"), (j, "-"))), PauliTerm(c, ((i, "-"), (j, "+")))


def _check_conserves_magnetization(h: Hamiltonian) -> None:
    if h.n_qubits <= 12 and not h.diagonal_commutes(magnetization_diagonal(h.n_qubits)):
        raise AssertionError("flip-flop Hamiltonian does not conserve M_z")


def xy_hamiltonian(lat: Lattice, J0: float = 1.0) -> Hamiltonian:
    """Nearest-neighbour flip-flop coupling on every lattice edge."""
    if J0 <= 0:
        raise ValueError("J0 must be positive")
    terms = []
    for a, b in lat.ordered_edges():
        terms.extend(_flip_flop(a, b, J0))
    h = Hamiltonian(lat.n_nodes, tuple(terms))
    _check_conserves_magnetization(h)
    return h


def slowly_decaying_hamiltonian(chain: Lattice, J0: float = 1.0) -> Hamiltonian:
    """All-pairs flip-flop coupling with strength ``J0 / |i - j|`` on a chain."""
    if chain.kind != "linear_chain":
        raise ValueError("slowly decaying coupling is defined on linear chains only")
    if J0 <= 0:
        raise ValueError("J0 must be positive")
    terms = []
    n = chain.n_nodes
    for i in range(n):
        for j in range(i + 1, n):
            terms.extend(_flip_flop(i, j, J0 / (j - i)))
    h = Hamiltonian(n, tuple(terms))
    _check_conserves_magnetization(h)
    return h


def magnetization_operator(n_qubits: int) -> Hamiltonian:
    return Hamiltonian(n_qubits, tuple(PauliTerm(0.5, ((q, "z"),)) for q in range(n_qubits)))


def parity_operator(n_qubits: int) -> Hamiltonian:
    return Hamiltonian(n_qubits, (PauliTerm(1.0, tuple((q, "z") for q in range(n_qubits))),))


def conserves_symmetries(h: Hamiltonian) -> bool:
    n = h.n_qubits
    return h.diagonal_commutes(magnetization_diagonal(n)) and h.diagonal_commutes(parity_diagonal(n))


def neel_bits(lat: Lattice, branch: str) -> list[str]:
    if branch not in ("ground", "excited"):
        raise ValueError(f"branch must be 'ground' or 'excited', got {branch!r}")
    even = "down" if branch == "ground" else "up"
    odd = "up" if branch == "ground" else "down"
    return [even if l % 2 == 0 else odd for l in lat.generations]


def neel_state(lat: Lattice, branch: str) -> np.ndarray:
    """Lowest (``ground``) or highest (``excited``) eigenstate of the staggered field."""
    return state_from_bits(neel_bits(lat, branch))


# ---------------------------------------------------------------------------
# Interpolation schedules
# ---------------------------------------------------------------------------

SCHEDULE_KINDS = ("linear", "brachistochrone", "constant")


@dataclass(frozen=True)
class Schedule:
    """Interpolation ``H(s) = f(s) H_ini + g(s) H_fin``.

    ``constant`` freezes ``(f, g)`` at ``(f0, g0)``; it exists for testing
    stationary evolutions and does not satisfy the endpoint conditions.
    """

    kind: str = "brachistochrone"
    f0: float = 1.0
    g0: float = 0.0

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ValueError(f"unknown schedule {self.kind!r}")

    def __call__(self, s: float) -> tuple[float, float, float, float]:
        return schedule_eval(self, s)


def schedule_eval(sch: Schedule, s: float) -> tuple[float, float, float, float]:
    """Return ``(f, g, df/ds, dg/ds)`` at normalized time ``s``."""
    if not 0.0 <= s <= 1.0:
        raise ValueError(f"s={s} outside [0, 1]")
    if sch.kind == "linear":
        return 1.0 - s, s, -1.0, 1.0
    if sch.kind == "constant":
        return sch.f0, sch.g0, 0.0, 0.0
    u = (1.0 - 2.0 * s) * math.pi / 4.0
    g = 0.5 * (1.0 - math.tan(u))
    dg = (math.pi / 4.0) / math.cos(u) ** 2
    return 1.0 - g, g, -dg, dg
