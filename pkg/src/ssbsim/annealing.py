"""Analog adiabatic evolution, gap analysis, Trotter step bound, digitization.

Units: hbar = 1, energies in units of J0 and times in units of 1/J0.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .core import (
    DENSE_QUBIT_BUDGET,
    BudgetExceededError,
    Hamiltonian,
    expm_apply,
    magnetization_diagonal,
    n_qubits_of,
    parity_diagonal,
)
from .model import Schedule

CLUSTER_RTOL = 1e-9
REFERENCE_QUBIT_BUDGET = 10


class ConvergenceError(RuntimeError):
    """The analog integrator did not meet its step-doubling tolerance."""


@dataclass(frozen=True)
class AnnealingProblem:
    h_ini: Hamiltonian
    h_fin: Hamiltonian
    schedule: Schedule
    tau: float

    def __post_init__(self):
        if self.h_ini.n_qubits != self.h_fin.n_qubits:
            raise ValueError("initial and final Hamiltonians act on different registers")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    @property
    def n_qubits(self) -> int:
        return self.h_ini.n_qubits

    def hamiltonian_at(self, s: float) -> Hamiltonian:
        f, g, _, _ = self.schedule(s)
        return self.h_ini.scaled(f) + self.h_fin.scaled(g)

    def derivative_at(self, s: float) -> Hamiltonian:
        _, _, df, dg = self.schedule(s)
        return self.h_ini.scaled(df) + self.h_fin.scaled(dg)


class _Pencil:
    """Matrix-free ``f * H_ini + g * H_fin`` with both compiled once."""

    def __init__(self, h_ini: Hamiltonian, h_fin: Hamiltonian):
        self.masks = sorted(set(h_ini.compiled) | set(h_fin.compiled))
        dim = h_ini.dim
        zero = np.zeros(dim, dtype=complex)
        self.d_ini = np.array([h_ini.compiled.get(m, zero) for m in self.masks])
        self.d_fin = np.array([h_fin.compiled.get(m, zero) for m in self.masks])
        rows = np.arange(dim)
        self.perms = [rows ^ m for m in self.masks]
        self.bound_ini = h_ini.coefficient_bound()
        self.bound_fin = h_fin.coefficient_bound()

    def propagate(self, psi: np.ndarray, f: float, g: float, t: float) -> np.ndarray:
        d = f * self.d_ini + g * self.d_fin
        pairs = list(zip(d, self.perms, self.masks))

        def apply(x):
            out = np.zeros_like(x)
            for dk, perm, m in pairs:
                out += dk * (x[perm] if m else x)
            return out

        bound = abs(f) * self.bound_ini + abs(g) * self.bound_fin
        return expm_apply(apply, psi, t, bound)


def _step_grid(n_steps: int, record_at) -> np.ndarray:
    """Uniform-ish grid on [0, 1] that contains every record point."""
    marks = sorted({0.0, 1.0, *(float(s) for s in record_at)})
    if marks[0] < 0 or marks[-1] > 1:
        raise ValueError("record points must lie in [0, 1]")
    grid = [0.0]
    for a, b in zip(marks[:-1], marks[1:]):
        k = max(1, math.ceil(round((b - a) * n_steps, 9)))
        grid.extend(np.linspace(a, b, k + 1)[1:].tolist())
    return np.array(grid)


def _integrate(prob: AnnealingProblem, pencil: _Pencil, psi0, grid, record_at):
    wanted = {float(s) for s in record_at}
    records = {}
    psi = psi0.astype(complex)
    if 0.0 in wanted:
        records[0.0] = psi.copy()
    for a, b in zip(grid[:-1], grid[1:]):
        mid = 0.5 * (a + b)
        f, g, _, _ = prob.schedule(mid)
        psi = pencil.propagate(psi, f, g, prob.tau * (b - a))
        psi /= np.linalg.norm(psi)
        key = float(b)
        if key in wanted:
            records[key] = psi.copy()
    return psi, [records[float(s)] for s in record_at]


def analog_evolve(
    prob: AnnealingProblem,
    psi0: np.ndarray,
    n_steps: int = 1000,
    record_at=(1.0,),
    check_convergence: bool = True,
    tol: float = 1e-6,
) -> list[np.ndarray]:
    """Midpoint-exponential propagation of ``psi0`` through ``H(s)``.

    Each fine step applies ``exp(-i tau ds H(s_mid))``. With
    ``check_convergence`` the run is repeated at twice the resolution and a
    final-state infidelity above ``tol`` raises :class:`ConvergenceError`.
    Returns the states at ``record_at`` (in the given order).
    """
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    if psi0.ndim != 1 or psi0.shape[0] != prob.h_ini.dim:
        raise ValueError("psi0 must be a state vector on the problem register")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise ValueError("psi0 is not normalized")
    record_at = list(record_at)
    pencil = _Pencil(prob.h_ini, prob.h_fin)
    final, states = _integrate(prob, pencil, psi0, _step_grid(n_steps, record_at), record_at)
    if check_convergence:
        finer, _ = _integrate(prob, pencil, psi0, _step_grid(2 * n_steps, []), [])
        infidelity = 1.0 - abs(np.vdot(final, finer)) ** 2
        if infidelity > tol:
            raise ConvergenceError(
                f"n_steps={n_steps} is too coarse: doubling changes the final state by "
                f"infidelity {infidelity:.3e} > {tol:.0e}"
            )
    return states


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    return float(abs(np.vdot(a, b)) ** 2)


# ---------------------------------------------------------------------------
# Spectral gap analysis
# ---------------------------------------------------------------------------


def cluster_levels(evals: np.ndarray, rtol: float = CLUSTER_RTOL) -> list[np.ndarray]:
    """Group ascending eigenvalues into degenerate clusters (index arrays)."""
    scale = max(1.0, float(np.max(np.abs(evals))))
    clusters = [[0]]
    for i in range(1, len(evals)):
        if evals[i] - evals[i - 1] > rtol * scale:
            clusters.append([i])
        else:
            clusters[-1].append(i)
    return [np.array(c) for c in clusters]


def hs_norm(a: np.ndarray) -> float:
    return float(np.linalg.norm(a, "fro"))


@dataclass
class GapProfile:
    s: np.ndarray
    delta: np.ndarray
    h_norm: np.ndarray
    dh_norm: np.ndarray
    f: np.ndarray
    g: np.ndarray
    eigenvalues: list[np.ndarray] = field(default_factory=list, repr=False)
    eigenvectors: list[np.ndarray] = field(default_factory=list, repr=False)
    dh: list[np.ndarray] = field(default_factory=list, repr=False)
    sector: np.ndarray | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["s", "delta", "h_norm", "dh_norm"])
        for row in zip(self.s, self.delta, self.h_norm, self.dh_norm):
            w.writerow([f"{x:.17g}" for x in row])
        return buf.getvalue()


def _check_dense_budget(prob: AnnealingProblem, budget: int = DENSE_QUBIT_BUDGET) -> None:
    if prob.n_qubits > budget:
        raise BudgetExceededError(f"{prob.n_qubits} qubits exceeds the dense budget of {budget}")


def symmetry_sector(state: np.ndarray) -> np.ndarray:
    """Basis indices sharing the magnetization and z-parity of ``state``.

    ``state`` must have a definite value of both.
    """
    n = n_qubits_of(state)
    weight = np.abs(state) ** 2 if state.ndim == 1 else np.diag(state).real
    support = np.nonzero(weight > 1e-12)[0]
    mz = magnetization_diagonal(n)
    par = parity_diagonal(n)
    if np.ptp(mz[support]) > 1e-12 or np.ptp(par[support]) > 0:
        raise ValueError("state has no definite magnetization and parity")
    return np.nonzero((np.abs(mz - mz[support[0]]) < 1e-12) & (par == par[support[0]]))[0]


def gap_profile(prob: AnnealingProblem, grid: int = 101, sector: np.ndarray | None = None) -> GapProfile:
    """Minimum non-vanishing gap and Hilbert-Schmidt norms on a uniform s-grid.

    ``sector`` (basis indices, see :func:`symmetry_sector`) restricts the
    spectrum and norms to one conserved block of ``H(s)``.
    """
    _check_dense_budget(prob)
    if grid < 21:
        raise ValueError("grid must have at least 21 samples")
    h_ini = prob.h_ini.to_dense()
    h_fin = prob.h_fin.to_dense()
    if sector is not None:
        h_ini = h_ini[np.ix_(sector, sector)]
        h_fin = h_fin[np.ix_(sector, sector)]
    s_vals = np.linspace(0.0, 1.0, grid)
    out = GapProfile(s_vals, *(np.zeros(grid) for _ in range(5)), sector=sector)
    for k, s in enumerate(s_vals):
        f, g, df, dg = prob.schedule(float(s))
        h = f * h_ini + g * h_fin
        dh = df * h_ini + dg * h_fin
        evals, evecs = np.linalg.eigh(h)
        clusters = cluster_levels(evals)
        means = [evals[c].mean() for c in clusters]
        out.delta[k] = min(np.diff(means)) if len(means) > 1 else math.inf
        out.h_norm[k] = hs_norm(h)
        out.dh_norm[k] = hs_norm(dh)
        out.f[k], out.g[k] = f, g
        out.eigenvalues.append(evals)
        out.eigenvectors.append(evecs)
        out.dh.append(dh)
    return out


ESTIMATE_MODES = ("norm_based", "nondegenerate", "degenerate")


def adiabatic_time_estimate(prob: AnnealingProblem, profile: GapProfile, mode: str = "norm_based") -> float:
    """Adiabatic time scale from the gap profile.

    ``norm_based`` uses ``max_s ||d_s H|| / Delta^2``. ``nondegenerate`` uses
    one representative eigenvector per level and the pairwise gap;
    ``degenerate`` maximizes over whole degenerate subspaces, taking the
    spectral norm of the ``d_s H`` block between two levels.
    """
    if mode not in ESTIMATE_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "norm_based":
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(profile.dh_norm == 0, 0.0, profile.dh_norm / profile.delta**2)
        return float(np.max(ratio))
    if not profile.eigenvectors:
        raise ValueError(f"mode {mode!r} needs eigenvectors in the gap profile")
    best = 0.0
    for evals, evecs, dh in zip(profile.eigenvalues, profile.eigenvectors, profile.dh):
        if not np.any(dh):
            continue
        clusters = cluster_levels(evals)
        levels = [evals[c].mean() for c in clusters]
        if mode == "nondegenerate":
            reps = evecs[:, [c[0] for c in clusters]]
            elems = np.abs(reps.conj().T @ dh @ reps)
            gaps = np.subtract.outer(levels, levels)
            np.fill_diagonal(gaps, np.inf)
            best = max(best, float(np.max(elems / gaps**2)))
        else:
            dh_eig = evecs.conj().T @ dh @ evecs
            for a, ca in enumerate(clusters):
                for b in range(a + 1, len(clusters)):
                    cb = clusters[b]
                    block = dh_eig[np.ix_(ca, cb)]
                    val = np.linalg.norm(block, 2) / (levels[b] - levels[a]) ** 2
                    best = max(best, float(val))
    return best


def commutator_norm(prob: AnnealingProblem, sector: np.ndarray | None = None) -> float:
    """Hilbert-Schmidt norm of ``[H_fin, H_ini]``, optionally on one sector."""
    _check_dense_budget(prob)
    a = prob.h_fin.to_dense()
    b = prob.h_ini.to_dense()
    if sector is not None:
        a = a[np.ix_(sector, sector)]
        b = b[np.ix_(sector, sector)]
    return hs_norm(a @ b - b @ a)


def stdat_step_bound(
    prob: AnnealingProblem, profile: GapProfile, tau: float | None = None, return_argmin: bool = False
):
    """Sufficient Trotter step width for a first-order digitized block.

    With ``tau=None`` the adiabatic scale is folded in per sample:
    ``min_s 2 Delta^2 ||H|| / (|f g| ||d_s H|| ||[H_fin, H_ini]||)``.
    With an explicit ``tau`` the bound is ``min_s 2 ||H|| / (tau |f g| ||[H_fin, H_ini]||)``.
    Samples with ``f g = 0`` are skipped. Commuting Hamiltonians give ``inf``.
    """
    comm = commutator_norm(prob, profile.sector)
    if comm == 0.0:
        return (math.inf, math.nan) if return_argmin else math.inf
    fg = np.abs(profile.f * profile.g)
    interior = fg > 0
    if tau is None:
        denom = fg * profile.dh_norm * comm
        num = 2.0 * profile.delta**2 * profile.h_norm
    else:
        denom = tau * fg * comm
        num = 2.0 * profile.h_norm
    interior &= denom > 0
    if not np.any(interior):
        return (math.inf, math.nan) if return_argmin else math.inf
    vals = num[interior] / denom[interior]
    k = int(np.argmin(vals))
    bound = float(vals[k])
    if return_argmin:
        return bound, float(profile.s[interior][k])
    return bound


# ---------------------------------------------------------------------------
# Digitization
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DigitizedPlan:
    """Per-block parameters; block ``n`` runs from ``(n-1)/M`` to ``n/M`` (1-based)."""

    M: int
    s_bar: np.ndarray
    ds: np.ndarray
    phi_z: np.ndarray
    phi_j: np.ndarray
    f: np.ndarray
    g: np.ndarray

    def block(self, n: int) -> tuple[float, float, float, float]:
        if not 1 <= n <= self.M:
            raise ValueError(f"block {n} outside 1..{self.M}")
        i = n - 1
        return float(self.s_bar[i]), float(self.ds[i]), float(self.phi_z[i]), float(self.phi_j[i])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["block", "s_bar", "ds", "phi_z", "phi_j"])
        for n in range(1, self.M + 1):
            w.writerow([n] + [f"{x:.17g}" for x in self.block(n)])
        return buf.getvalue()


def make_plan(prob: AnnealingProblem, M: int, omega0: float = 1.0, J0: float = 1.0) -> DigitizedPlan:
    """Uniform blocks of width ``1/M`` with midpoint circuit angles."""
    if M < 1:
        raise ValueError("M must be at least 1")
    edges = np.arange(M + 1) / M
    s_bar = 0.5 * (edges[:-1] + edges[1:])
    ds = np.diff(edges)
    fg = np.array([prob.schedule(float(s))[:2] for s in s_bar])
    f, g = fg[:, 0], fg[:, 1]
    return DigitizedPlan(
        M=M,
        s_bar=s_bar,
        ds=ds,
        phi_z=omega0 * prob.tau * f * ds,
        phi_j=J0 * prob.tau * g * ds,
        f=f,
        g=g,
    )


def block_reference_unitary(prob: AnnealingProblem, plan: DigitizedPlan, n: int) -> np.ndarray:
    """Dense ``exp(-i tau ds g H_fin) exp(-i tau ds f H_ini)`` for block ``n``."""
    _check_dense_budget(prob, REFERENCE_QUBIT_BUDGET)
    s_bar, ds, _, _ = plan.block(n)
    f, g, _, _ = prob.schedule(s_bar)
    return split_unitary(prob, f, g, prob.tau * ds)


def split_unitary(prob: AnnealingProblem, f: float, g: float, t: float) -> np.ndarray:
    u_ini = scipy.linalg.expm(-1j * t * f * prob.h_ini.to_dense())
    u_fin = scipy.linalg.expm(-1j * t * g * prob.h_fin.to_dense())
    return u_fin @ u_ini


def exact_block_unitary(prob: AnnealingProblem, f: float, g: float, t: float) -> np.ndarray:
    h = f * prob.h_ini.to_dense() + g * prob.h_fin.to_dense()
    return scipy.linalg.expm(-1j * t * h)


def splitting_error(prob: AnnealingProblem, s: float, ds: float) -> float:
    """Spectral-norm distance between the frozen-midpoint and split block unitaries."""
    _check_dense_budget(prob, REFERENCE_QUBIT_BUDGET)
    f, g, _, _ = prob.schedule(s)
    t = prob.tau * ds
    return float(np.linalg.norm(exact_block_unitary(prob, f, g, t) - split_unitary(prob, f, g, t), 2))


def digitized_reference_evolution(prob: AnnealingProblem, plan: DigitizedPlan, psi0: np.ndarray) -> list[np.ndarray]:
    """States after each block using the dense split unitaries (index 0 = input)."""
    states = [psi0.astype(complex)]
    for n in range(1, plan.M + 1):
        states.append(block_reference_unitary(prob, plan, n) @ states[-1])
    return states
