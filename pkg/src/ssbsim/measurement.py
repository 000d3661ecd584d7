"""Observables and estimators: energy, correlations, parity, Renyi entropy, readout."""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

import numpy as np

from .core import (
    apply_unitary,
    diagonal_expectation,
    expectation,
    n_qubits_of,
    parity_diagonal,
    pauli,
    probabilities,
)
from .model import Lattice

# ---------------------------------------------------------------------------
# Energy and correlations
# ---------------------------------------------------------------------------


def pauli_expectation(state: np.ndarray, factors: dict[int, str]) -> float:
    return expectation(state, pauli(n_qubits_of(state), factors))


def energy_xy(state: np.ndarray, lat: Lattice, J0: float = 1.0) -> tuple[float, float]:
    """Flip-flop energy on the lattice edges in two conventions.

    The first value is the expectation of ``J0 sum (s+s- + s-s+)``. The second
    is ``J0 sum (<XX> + <YY>)``, which is exactly twice the first.
    """
    e_text = 0.0
    for a, b in lat.edges:
        e_text += pauli_expectation(state, {a: "x", b: "x"}) + pauli_expectation(state, {a: "y", b: "y"})
    e_text *= J0
    return 0.5 * e_text, e_text


def _xy_moments(state: np.ndarray, i: int, j: int) -> dict[str, float]:
    m = {}
    for a in "xy":
        m[a + "_"] = pauli_expectation(state, {i: a})
        m["_" + a] = pauli_expectation(state, {j: a})
        for b in "xy":
            m[a + b] = pauli_expectation(state, {i: a, j: b})
    return m


def connected_correlation(state: np.ndarray, i: int, j: int, theta: float = 0.0) -> float:
    """``<s_i s_j> - <s_i><s_j>`` with ``s = cos(theta) X + sin(theta) Y``."""
    if i == j:
        raise ValueError("connected correlation needs two distinct sites")
    c, s = math.cos(theta), math.sin(theta)
    m = _xy_moments(state, i, j)
    two = c * c * m["xx"] + c * s * (m["xy"] + m["yx"]) + s * s * m["yy"]
    return two - (c * m["x_"] + s * m["y_"]) * (c * m["_x"] + s * m["_y"])


def _single_site(state: np.ndarray, q: int, theta: float) -> float:
    return math.cos(theta) * pauli_expectation(state, {q: "x"}) + math.sin(theta) * pauli_expectation(state, {q: "y"})


def correlation_matrix(state: np.ndarray, theta: float = 0.0) -> np.ndarray:
    """Symmetric matrix of connected correlations; the diagonal holds ``1 - <s>^2``."""
    n = n_qubits_of(state)
    c, s = math.cos(theta), math.sin(theta)
    singles = np.array([_single_site(state, q, theta) for q in range(n)])
    out = np.diag(1.0 - singles**2)
    for i, j in combinations(range(n), 2):
        two = c * c * pauli_expectation(state, {i: "x", j: "x"}) + s * s * pauli_expectation(state, {i: "y", j: "y"})
        if c * s != 0:
            two += c * s * (pauli_expectation(state, {i: "x", j: "y"}) + pauli_expectation(state, {i: "y", j: "x"}))
        out[i, j] = out[j, i] = two - singles[i] * singles[j]
    return out


def similarity(c_the: np.ndarray, c_exp: np.ndarray) -> float:
    """``1 - max |C_the - C_exp| / 2`` over off-diagonal entries."""
    c_the, c_exp = np.asarray(c_the), np.asarray(c_exp)
    if c_the.shape != c_exp.shape:
        raise ValueError(f"shape mismatch {c_the.shape} vs {c_exp.shape}")
    off = ~np.eye(c_the.shape[0], dtype=bool)
    if not off.any():
        return 1.0
    return float(1.0 - np.max(np.abs(c_the - c_exp)[off]) / 2.0)


def distance_profile(
    lat: Lattice,
    C: np.ndarray,
    reference: int,
    spacing: float = 1.0,
    distances: Sequence[float] | None = None,
) -> list[tuple[float, float]]:
    """Mean of ``C[reference, j]`` grouped by distance from ``reference``.

    Distances default to graph hop count times ``spacing``; pass
    ``distances`` (one per node) to use another embedding.
    """
    if not 0 <= reference < lat.n_nodes:
        raise ValueError(f"reference {reference} not in lattice")
    if distances is None:
        distances = [spacing * d for d in lat.graph_distances(reference)]
    groups: dict[float, list[float]] = {}
    for j, r in enumerate(distances):
        if j == reference:
            continue
        groups.setdefault(round(float(r), 12), []).append(float(C[reference, j]))
    return [(r, float(np.mean(v))) for r, v in sorted(groups.items())]


def parity_z(state: np.ndarray) -> float:
    return diagonal_expectation(state, parity_diagonal(n_qubits_of(state)))


# ---------------------------------------------------------------------------
# Randomized measurements
# ---------------------------------------------------------------------------


def cue_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-random unitary: QR of a complex Ginibre matrix with phase fix."""
    z = (rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))) / math.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def instance_rng(master_seed: int, index: int) -> np.random.Generator:
    """Generator for measurement instance ``index`` derived from ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(entropy=master_seed, spawn_key=(index,)))


@dataclass(frozen=True)
class RenyiEstimate:
    mask: tuple[int, ...]
    mean_bits: float
    stderr_bits: float
    n_unitaries: int
    shots: int
    purity_raw: float
    purity_stderr: float

    @property
    def n_a(self) -> int:
        return len(self.mask)


def _hamming_kernel(n_a: int, confusion: Sequence[np.ndarray] | None = None) -> np.ndarray:
    """``(-2)^-D`` weights; with ``confusion`` each factor is sandwiched by its inverse.

    The sandwiched kernel applies the linear readout correction to both
    members of every bitstring pair, so the estimator stays unbiased.
    """
    k = np.array([[1.0, -0.5], [-0.5, 1.0]])
    out = np.ones((1, 1))
    for q in range(n_a):
        f = k
        if confusion is not None:
            inv = np.linalg.inv(np.asarray(confusion[q], dtype=float))
            f = inv.T @ k @ inv
        out = np.kron(out, f)
    return out


def marginal_counts(counts: np.ndarray, n: int, subsystem: Sequence[int]) -> np.ndarray:
    t = counts.reshape((2,) * n)
    rest = tuple(q for q in range(n) if q not in subsystem)
    m = t.sum(axis=rest)
    # summed axes leave the kept ones in ascending order
    order = sorted(subsystem)
    return np.transpose(m, [order.index(q) for q in subsystem]).reshape(-1)


def purity_from_counts(counts: np.ndarray, kernel: np.ndarray) -> float:
    """Unbiased ``2^N_A sum (-2)^-D P(s) P(s')`` from one instance's counts."""
    shots = counts.sum()
    n = counts.astype(float)
    pair = n @ kernel @ n - np.dot(np.diag(kernel), n)
    return float(kernel.shape[0] * pair / (shots * (shots - 1)))


def randomized_counts(state: np.ndarray, n_unitaries: int, shots: int, seed: int,
                      confusion: Sequence[np.ndarray] | None = None) -> list[np.ndarray]:
    """Bitstring counts after independent CUE rotations on every qubit, one array per instance.

    ``confusion`` (one 2x2 matrix per qubit) distorts the outcome
    distribution before sampling.
    """
    n = n_qubits_of(state)
    out = []
    for i in range(n_unitaries):
        rng = instance_rng(seed, i)
        rotated = state
        for q in range(n):
            rotated = apply_unitary(rotated, [q], cue_unitary(2, rng))
        p = probabilities(rotated)
        if confusion is not None:
            p = apply_readout_error(p, confusion)
        out.append(rng.multinomial(shots, p / p.sum()))
    return out


def estimate_from_counts(counts: list[np.ndarray], n: int, subsystem: Sequence[int],
                         confusion: Sequence[np.ndarray] | None = None) -> RenyiEstimate:
    """Purity and entropy for ``subsystem``; ``confusion`` undoes readout error."""
    subsystem = tuple(int(q) for q in subsystem)
    if not subsystem:
        raise ValueError("subsystem must be non-empty")
    kernel = _hamming_kernel(len(subsystem), None if confusion is None else [confusion[q] for q in subsystem])
    vals = np.array([purity_from_counts(marginal_counts(c, n, subsystem), kernel) for c in counts])
    shots = int(counts[0].sum())
    mean = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
    if mean > 0:
        bits = -math.log2(mean)
        se_bits = se / (mean * math.log(2))
    else:
        bits, se_bits = math.inf, math.inf
    return RenyiEstimate(subsystem, bits, se_bits, len(vals), shots, mean, se)


def randomized_renyi(state: np.ndarray, subsystem: Sequence[int], n_unitaries: int = 100,
                     shots: int = 10000, seed: int = 0) -> RenyiEstimate:
    """Second Renyi entropy of ``subsystem`` from randomized measurements."""
    if shots < 2:
        raise ValueError("at least two shots per unitary are required")
    counts = randomized_counts(state, n_unitaries, shots, seed)
    return estimate_from_counts(counts, n_qubits_of(state), subsystem)


def randomized_renyi_all(state: np.ndarray, masks: Sequence[Sequence[int]], n_unitaries: int = 100,
                         shots: int = 10000, seed: int = 0,
                         confusion: Sequence[np.ndarray] | None = None,
                         correct_readout: bool = True) -> list[RenyiEstimate]:
    """Estimates for several subsystems sharing one set of measurements.

    With ``confusion`` the samples carry readout error, which is undone in
    the estimator unless ``correct_readout`` is false.
    """
    if shots < 2:
        raise ValueError("at least two shots per unitary are required")
    counts = randomized_counts(state, n_unitaries, shots, seed, confusion)
    n = n_qubits_of(state)
    inverse = confusion if correct_readout else None
    return [estimate_from_counts(counts, n, m, inverse) for m in masks]


def all_masks(n: int, include_full: bool = False) -> list[tuple[int, ...]]:
    top = n if include_full else n - 1
    return [m for k in range(1, top + 1) for m in combinations(range(n), k)]


def corrected_entropy(s_sub: float, s_whole: float, n_a: int, n: int) -> float:
    """Subtract a uniform per-qubit share of the whole-system entropy."""
    if n <= 0 or not 0 <= n_a <= n:
        raise ValueError("need 0 <= N_A <= N and N > 0")
    return s_sub - s_whole * n_a / n


def entanglement_witness(s_sub: float, s_whole: float, stderr: float = 0.0) -> bool:
    """True when the subsystem entropy exceeds the whole by more than ``stderr``."""
    return s_sub - s_whole > stderr


# ---------------------------------------------------------------------------
# Readout correction
# ---------------------------------------------------------------------------


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def _kron_all(mats: Sequence[np.ndarray]) -> np.ndarray:
    out = np.ones((1, 1))
    for m in mats:
        out = np.kron(out, m)
    return out


def readout_correct(p_measured: np.ndarray, confusion: Sequence[np.ndarray], max_iter: int = 20000) -> np.ndarray:
    """Least-squares inversion of a tensor-product readout confusion matrix.

    ``confusion[q][r, t]`` is the probability of reading ``r`` when qubit
    ``q`` is in ``t``. The result is the point of the probability simplex
    minimizing ``||C q - p||``.
    """
    p = np.asarray(p_measured, dtype=float)
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("measured probabilities must sum to 1")
    if p.shape[0] != 1 << len(confusion):
        raise ValueError("one confusion matrix per qubit is required")
    for m in confusion:
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2) or np.any(m < 0) or np.max(np.abs(m.sum(axis=0) - 1)) > 1e-9:
            raise ValueError("confusion matrices must be 2x2 column-stochastic")
        if m[0, 0] <= 0.5 or m[1, 1] <= 0.5:
            raise ValueError("readout fidelity at or below 0.5 makes the confusion matrix unusable")
    inv = _kron_all([np.linalg.inv(m) for m in confusion])
    q = inv @ p
    if np.all(q >= -1e-12):
        q = np.clip(q, 0.0, None)
        return q / q.sum()
    c = _kron_all(confusion)
    step = 1.0 / np.linalg.norm(c, 2) ** 2
    x = _project_simplex(q)
    y, t = x.copy(), 1.0
    for _ in range(max_iter):
        x_new = _project_simplex(y - step * (c.T @ (c @ y - p)))
        t_new = 0.5 * (1 + math.sqrt(1 + 4 * t * t))
        y = x_new + (t - 1) / t_new * (x_new - x)
        if np.max(np.abs(x_new - x)) < 1e-15:
            x = x_new
            break
        x, t = x_new, t_new
    return x / x.sum()


def apply_readout_error(p: np.ndarray, confusion: Sequence[np.ndarray]) -> np.ndarray:
    return _kron_all(confusion) @ np.asarray(p, dtype=float)
