"""Experiment drivers behind the command-line subcommands.

Each ``cmd_*`` function takes a validated :class:`ExperimentConfig` and a
worker count for the parallel sweeps, and returns an ordered mapping of
output file name to file contents. Every table is written as CSV
(17 significant digits) plus a JSON mirror.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import __version__
from .annealing import (
    ESTIMATE_MODES,
    AnnealingProblem,
    adiabatic_time_estimate,
    analog_evolve,
    digitized_reference_evolution,
    fidelity,
    gap_profile,
    make_plan,
    splitting_error,
    stdat_step_bound,
    symmetry_sector,
)
from .circuit import NoiseModel, build_block_circuit, run_circuit
from .config import ConfigError, ExperimentConfig
from .core import (
    DENSE_QUBIT_BUDGET,
    BudgetExceededError,
    density_matrix,
    diagonal_expectation,
    magnetization_diagonal,
    n_qubits_of,
    renyi2_exact,
    partial_trace,
)
from .measurement import (
    all_masks,
    correlation_matrix,
    corrected_entropy,
    distance_profile,
    energy_xy,
    parity_z,
    randomized_renyi_all,
    similarity,
)
from .model import (
    Lattice,
    Schedule,
    build_cayley_tree,
    build_linear_chain,
    neel_field_hamiltonian,
    neel_state,
    slowly_decaying_hamiltonian,
    xy_hamiltonian,
)

Outputs = dict[str, str]


@dataclass
class Table:
    columns: list[str]
    rows: list[list]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return str(x)


def _plain(x):
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        x = float(x)
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


def render(cfg: ExperimentConfig, tables: dict[str, Table]) -> Outputs:
    out: Outputs = {}
    # the output directory is not part of the experiment, so keep it out of the data
    snapshot = {k: v for k, v in cfg.to_dict().items() if k != "output"}
    for stem, t in tables.items():
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(t.columns)
        for row in t.rows:
            w.writerow([_fmt(x) for x in row])
        out[stem + ".csv"] = buf.getvalue()
        doc = {
            "version": __version__,
            "config": snapshot,
            "columns": t.columns,
            "rows": [[_plain(x) for x in row] for row in t.rows],
        }
        out[stem + ".json"] = json.dumps(doc, indent=1) + "\n"
    return out


def derive_seed(master: int, *keys: int) -> int:
    """Independent 63-bit seed for the stream labelled by ``keys``."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def fan_out(fn, items, threads: int) -> list:
    """Map ``fn`` over ``items``; results keep the input order regardless of threads."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# Shared building blocks
# ---------------------------------------------------------------------------


def build_lattice(cfg: ExperimentConfig) -> Lattice:
    if cfg.lattice.kind == "cayley_tree":
        return build_cayley_tree(cfg.lattice.L)
    return build_linear_chain(cfg.lattice.N)


def build_problem(cfg: ExperimentConfig, lat: Lattice | None = None, tau: float | None = None) -> AnnealingProblem:
    lat = lat or build_lattice(cfg)
    h_fin = slowly_decaying_hamiltonian(lat, cfg.J0) if cfg.lattice.interaction == "sd" else xy_hamiltonian(lat, cfg.J0)
    return AnnealingProblem(neel_field_hamiltonian(lat, cfg.omega0), h_fin, Schedule(cfg.schedule),
                            cfg.tau if tau is None else tau)


def noise_model(cfg: ExperimentConfig, epsilon: float | None = None, seed: int = 0) -> NoiseModel:
    nc = cfg.noise
    t1, t2 = (nc.t1, nc.t2) if nc.decoherence else (math.inf, math.inf)
    readout = tuple(tuple(p) for p in nc.readout) if nc.readout else None
    return NoiseModel(nc.epsilon if epsilon is None else epsilon, t1, t2, dict(nc.durations), readout, seed)


def noise_enabled(cfg: ExperimentConfig) -> bool:
    return cfg.noise.epsilon > 0 or cfg.noise.decoherence


def _check_backend(cfg: ExperimentConfig, n: int) -> None:
    if cfg.backend == "density_matrix" and n > DENSE_QUBIT_BUDGET:
        raise BudgetExceededError(f"density-matrix backend refused at {n} qubits (budget {DENSE_QUBIT_BUDGET})")


def digital_states(cfg, lat, plan, branch, noise=None, rng=None) -> list[np.ndarray]:
    """States after blocks 0..M of the gate circuit."""
    _check_backend(cfg, lat.n_nodes)
    psi = neel_state(lat, branch)
    if cfg.backend == "density_matrix":
        psi = density_matrix(psi)
    states = [psi]
    for n in range(1, plan.M + 1):
        c = build_block_circuit(plan, n, lat, cfg.two_qubit_basis, cfg.edge_substeps)
        states.append(run_circuit(states[-1], c, noise, rng))
    return states


def analog_states(cfg, prob, branch, lat, record_at) -> list[np.ndarray]:
    return analog_evolve(prob, neel_state(lat, branch), n_steps=cfg.analog.steps_for(prob.tau),
                         record_at=record_at)


def _block_points(M: int) -> list[float]:
    return [n / M for n in range(M + 1)]


def _magnetization(state) -> float:
    return diagonal_expectation(state, magnetization_diagonal(n_qubits_of(state)))


def _observables(state, lat, J0) -> list[float]:
    e4, et = energy_xy(state, lat, J0)
    return [e4, et, _magnetization(state), parity_z(state)]


def _upper_pairs(n: int):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_energy_split(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, cfg.M, cfg.omega0, cfg.J0)
    points = _block_points(cfg.M)
    cols = ["series", "branch", "block", "s", "energy_pm", "energy_xxyy", "magnetization", "parity"]
    rows = []
    ref_rows = []
    ref_prob = build_problem(cfg, lat, cfg.analog.reference_tau)
    for b, branch in enumerate(cfg.branches):
        series = [("digital", digital_states(cfg, lat, plan, branch))]
        if noise_enabled(cfg):
            nm = noise_model(cfg, seed=derive_seed(cfg.seed, 1, b))
            series.append(("noisy", digital_states(cfg, lat, plan, branch, nm)))
        series.append(("analog", analog_states(cfg, prob, branch, lat, points)))
        for name, states in series:
            for n, st in enumerate(states):
                rows.append([name, branch, n, points[n]] + _observables(st, lat, cfg.J0))
        final = analog_states(cfg, ref_prob, branch, lat, [1.0])[0]
        ref_rows.append([branch, ref_prob.tau] + _observables(final, lat, cfg.J0))
    tables = {
        "energy_split": Table(cols, rows),
        "energy_reference": Table(["branch", "tau", "energy_pm", "energy_xxyy", "magnetization", "parity"], ref_rows),
    }
    return render(cfg, tables)


def cmd_correlations(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, cfg.M, cfg.omega0, cfg.J0)
    points = _block_points(cfg.M)
    if not 0 <= cfg.reference_spin < lat.n_nodes:
        raise ConfigError(f"reference_spin: {cfg.reference_spin} is not a site of the lattice")
    mat_rows, sim_rows, prof_rows = [], [], []
    for b, branch in enumerate(cfg.branches):
        runs = {"digital": digital_states(cfg, lat, plan, branch)}
        if noise_enabled(cfg):
            nm = noise_model(cfg, seed=derive_seed(cfg.seed, 2, b))
            runs["noisy"] = digital_states(cfg, lat, plan, branch, nm)
        runs["analog"] = analog_states(cfg, prob, branch, lat, points)
        mats = {k: [correlation_matrix(s, cfg.theta) for s in v] for k, v in runs.items()}
        for name, ms in mats.items():
            for n, C in enumerate(ms):
                for i, j in _upper_pairs(lat.n_nodes):
                    mat_rows.append([name, branch, n, i, j, C[i, j]])
                sim_rows.append([name, branch, n, similarity(mats["digital"][n], C)])
                for r, c in distance_profile(lat, C, cfg.reference_spin, cfg.spacing):
                    prof_rows.append([name, branch, n, cfg.reference_spin, r, c])
    tables = {
        "correlations": Table(["series", "branch", "block", "i", "j", "c_value"], mat_rows),
        "similarity": Table(["series", "branch", "block", "similarity_to_digital"], sim_rows),
        "distance_profile": Table(["series", "branch", "block", "reference", "distance", "c_mean"], prof_rows),
    }
    return render(cfg, tables)


def cmd_renyi(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    n = lat.n_nodes
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, cfg.M, cfg.omega0, cfg.J0)
    sizes = cfg.renyi.sizes or list(range(1, n + 1))
    masks = [m for m in all_masks(n, include_full=True) if len(m) in sizes or len(m) == n]
    confusion = noise_model(cfg).confusion_matrices()

    jobs = []
    for b, branch in enumerate(cfg.branches):
        if noise_enabled(cfg):
            nm = noise_model(cfg, seed=derive_seed(cfg.seed, 3, b))
            states = digital_states(cfg, lat, plan, branch, nm)
        else:
            states = digital_states(cfg, lat, plan, branch)
        jobs.extend((b, branch, k, st) for k, st in enumerate(states))

    def estimate(job):
        b, branch, k, st = job
        seed = derive_seed(cfg.seed, 4, b, k)
        ests = randomized_renyi_all(st, masks, cfg.renyi.n_unitaries, cfg.renyi.shots, seed, confusion)
        return [(m, renyi2_exact(partial_trace(st, list(m))), e) for m, e in zip(masks, ests)]

    results = fan_out(estimate, jobs, threads)
    mask_rows, cloud_rows = [], []
    for (b, branch, k, _), res in zip(jobs, results):
        whole_exact = next(ex for m, ex, _ in res if len(m) == n)
        whole_rand = next(e.mean_bits for m, _, e in res if len(m) == n)
        by_size: dict[int, list] = {}
        for m, ex, e in res:
            corr = corrected_entropy(e.mean_bits, whole_rand, len(m), n)
            mask_rows.append([branch, k, " ".join(map(str, m)), len(m), e.mean_bits, e.stderr_bits, e.purity_raw,
                              ex, corr, corrected_entropy(ex, whole_exact, len(m), n)])
            if len(m) < n:
                by_size.setdefault(len(m), []).append((ex, e.mean_bits, corr))
        for size, vals in sorted(by_size.items()):
            a = np.array(vals)
            cloud_rows.append([branch, k, size, len(vals), *a.mean(axis=0), *a.std(axis=0, ddof=0)])
    tables = {
        "renyi_masks": Table(["branch", "block", "mask", "n_a", "mean_bits", "stderr_bits", "purity_raw",
                              "exact_bits", "corrected_bits", "exact_corrected_bits"], mask_rows),
        "renyi_clouds": Table(["branch", "block", "n_a", "count", "mean_exact", "mean_randomized",
                               "mean_corrected", "std_exact", "std_randomized", "std_corrected"], cloud_rows),
    }
    return render(cfg, tables) | _analog_reference(cfg, lat, prob)


def cmd_bound(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    if lat.n_nodes > DENSE_QUBIT_BUDGET:
        raise BudgetExceededError(f"gap analysis needs at most {DENSE_QUBIT_BUDGET} qubits, got {lat.n_nodes}")
    prob = build_problem(cfg, lat)
    summary = []
    profiles = {"full": gap_profile(prob, cfg.bound.grid)}
    for branch in cfg.branches:
        profiles[f"sector_{branch}"] = gap_profile(prob, cfg.bound.grid, symmetry_sector(neel_state(lat, branch)))
    prof_rows = []
    for name, prof in profiles.items():
        for row in zip(prof.s, prof.delta, prof.h_norm, prof.dh_norm):
            prof_rows.append([name, *row])
        for mode in ESTIMATE_MODES:
            summary.append([name, f"tau_ad_{mode}", adiabatic_time_estimate(prob, prof, mode)])
        bound, s_arg = stdat_step_bound(prob, prof, return_argmin=True)
        summary.append([name, "ds_max", bound])
        summary.append([name, "ds_max_argmin_s", s_arg])
        summary.append([name, "ds_max_explicit_tau", stdat_step_bound(prob, prof, tau=prob.tau)])
        if math.isfinite(bound):
            at, below = splitting_error(prob, s_arg, bound), splitting_error(prob, s_arg, bound / 10)
            summary.append([name, "splitting_error_at_bound", at])
            summary.append([name, "splitting_error_decade_below", below])

    curve = []
    for b, branch in enumerate(cfg.branches):
        target = analog_states(cfg, prob, branch, lat, [1.0])[0]
        psi0 = neel_state(lat, branch)

        def one(M):
            plan = make_plan(prob, M, cfg.omega0, cfg.J0)
            circ = digital_states(cfg, lat, plan, branch)[-1]
            split = digitized_reference_evolution(prob, plan, psi0)[-1]
            return [branch, M, 1.0 / M, 1.0 - _overlap(circ, target), 1.0 - fidelity(split, target)]

        curve.extend(fan_out(one, cfg.bound.M_values, threads))
    tables = {
        "gap_profile": Table(["profile", "s", "delta", "h_norm", "dh_norm"], prof_rows),
        "bound_summary": Table(["profile", "quantity", "value"], summary),
        "trotter_infidelity": Table(["branch", "M", "ds", "infidelity_circuit", "infidelity_split"], curve),
    }
    return render(cfg, tables)


def _overlap(state, target) -> float:
    if state.ndim == 2:
        return float(np.real(np.vdot(target, state @ target)))
    return fidelity(state, target)


def cmd_noise_sweep(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, cfg.M, cfg.omega0, cfg.J0)
    ref = {br: [correlation_matrix(s, cfg.theta) for s in digital_states(cfg, lat, plan, br)] for br in cfg.branches}
    jobs = [(e, eps, b, br, k) for e, eps in enumerate(cfg.noise.epsilons)
            for b, br in enumerate(cfg.branches) for k in range(cfg.noise.n_seeds)]

    def run(job):
        e, eps, b, br, k = job
        seed = derive_seed(cfg.seed, 5, e, b, k)
        nm = noise_model(cfg, epsilon=eps, seed=seed)
        states = digital_states(cfg, lat, plan, br, nm, np.random.default_rng(seed))
        return [similarity(ref[br][n], correlation_matrix(st, cfg.theta)) for n, st in enumerate(states)]

    sims = fan_out(run, jobs, threads)
    seed_rows, summary_rows = [], []
    grouped: dict[tuple, list] = {}
    for (e, eps, b, br, k), s in zip(jobs, sims):
        for n, v in enumerate(s):
            seed_rows.append([eps, br, k, n, v])
        grouped.setdefault((e, b), []).append(s)
    for (e, b), ss in sorted(grouped.items()):
        a = np.array(ss)
        for n in range(a.shape[1]):
            summary_rows.append([cfg.noise.epsilons[e], cfg.branches[b], n, len(ss), a[:, n].mean(), a[:, n].std(ddof=0)])
    tables = {
        "noise_seeds": Table(["epsilon", "branch", "seed_index", "block", "similarity"], seed_rows),
        "noise_summary": Table(["epsilon", "branch", "block", "n_seeds", "mean_similarity", "std_similarity"],
                               summary_rows),
    }
    return render(cfg, tables) | _analog_reference(cfg, lat, prob)


def cmd_scale15(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    """Fixed 15-spin run: four-generation tree, M = 4, statevector only."""
    lat = build_cayley_tree(4)
    _check_backend(cfg, lat.n_nodes)
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, 4, cfg.omega0, cfg.J0)
    rows, obs_rows = [], []
    for branch in cfg.branches:
        for n, st in enumerate(digital_states(cfg, lat, plan, branch)):
            C = correlation_matrix(st, cfg.theta)
            for i, j in _upper_pairs(lat.n_nodes):
                rows.append([branch, n, i, j, C[i, j], (i, j) in lat.edges])
            obs_rows.append([branch, n] + _observables(st, lat, cfg.J0))
    tables = {
        "scale15_correlations": Table(["branch", "block", "i", "j", "c_value", "edge"], rows),
        "scale15_observables": Table(["branch", "block", "energy_pm", "energy_xxyy", "magnetization", "parity"],
                                     obs_rows),
    }
    return render(cfg, tables) | _analog_reference(cfg, lat, prob, M=4)


def cmd_analog(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    prob = build_problem(cfg, lat)
    points = list(np.linspace(0.0, 1.0, cfg.analog.n_records))
    reference = cfg.reference_spin if cfg.lattice.kind == "cayley_tree" else 0
    if reference >= lat.n_nodes:
        raise ConfigError(f"reference_spin: {reference} is not a site of the lattice")
    traj, corr, prof = [], [], []
    for branch in cfg.branches:
        states = analog_states(cfg, prob, branch, lat, points)
        for s, st in zip(points, states):
            traj.append([branch, s] + _observables(st, lat, cfg.J0))
        for theta in cfg.analog.thetas:
            C = correlation_matrix(states[-1], theta)
            for i, j in _upper_pairs(lat.n_nodes):
                corr.append([branch, theta, i, j, C[i, j]])
            for r, c in distance_profile(lat, C, reference, cfg.spacing):
                prof.append([branch, theta, reference, r, c, abs(c)])
    tables = {
        "analog_trajectory": Table(["branch", "s", "energy_pm", "energy_xxyy", "magnetization", "parity"], traj),
        "analog_correlations": Table(["branch", "theta", "i", "j", "c_value"], corr),
        "analog_profile": Table(["branch", "theta", "reference", "distance", "c_mean", "abs_c_mean"], prof),
    }
    return render(cfg, tables)


def cmd_parity(cfg: ExperimentConfig, threads: int = 1) -> Outputs:
    lat = build_lattice(cfg)
    prob = build_problem(cfg, lat)
    plan = make_plan(prob, cfg.M, cfg.omega0, cfg.J0)
    points = list(np.linspace(0.0, 1.0, cfg.analog.n_records))
    traj, targets = [], []
    for branch in cfg.branches:
        analog = analog_states(cfg, prob, branch, lat, points)
        for s, st in zip(points, analog):
            traj.append(["analog", branch, s, parity_z(st), _magnetization(st)])
        for n, st in enumerate(digital_states(cfg, lat, plan, branch)):
            traj.append(["digital", branch, n / cfg.M, parity_z(st), _magnetization(st)])
        if lat.n_nodes <= DENSE_QUBIT_BUDGET:
            sector = symmetry_sector(neel_state(lat, branch))
            h = prob.h_fin.to_dense()[np.ix_(sector, sector)]
            w, v = np.linalg.eigh(h)
            k = 0 if branch == "ground" else -1
            target = np.zeros(prob.h_fin.dim, dtype=complex)
            target[sector] = v[:, k]
            targets.append([branch, len(sector), w[k], fidelity(analog[-1], target), parity_z(target)])
    tables = {"parity_trajectory": Table(["series", "branch", "s", "parity", "magnetization"], traj)}
    if targets:
        tables["sector_target"] = Table(["branch", "sector_dim", "target_energy", "analog_fidelity", "target_parity"],
                                        targets)
    return render(cfg, tables)


def _analog_reference(cfg, lat, prob, M: int | None = None) -> Outputs:
    """Noiseless analog observables at the block boundaries, shipped with every figure command."""
    M = cfg.M if M is None else M
    points = _block_points(M)
    rows = []
    for branch in cfg.branches:
        for n, st in enumerate(analog_states(cfg, prob, branch, lat, points)):
            rows.append([branch, n, points[n]] + _observables(st, lat, cfg.J0))
    return render(cfg, {"analog_reference": Table(
        ["branch", "block", "s", "energy_pm", "energy_xxyy", "magnetization", "parity"], rows)})


COMMANDS = {
    "energy-split": cmd_energy_split,
    "correlations": cmd_correlations,
    "renyi": cmd_renyi,
    "bound": cmd_bound,
    "noise-sweep": cmd_noise_sweep,
    "scale15": cmd_scale15,
    "analog": cmd_analog,
    "parity": cmd_parity,
}
