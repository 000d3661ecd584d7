import math

import numpy as np
import pytest
import scipy.linalg

from ssbsim.core import (
    BudgetExceededError,
    Hamiltonian,
    PauliTerm,
    diagonal_expectation,
    magnetization_diagonal,
    parity_diagonal,
    pauli,
)
from ssbsim.annealing import (
    AnnealingProblem,
    ConvergenceError,
    ESTIMATE_MODES,
    GapProfile,
    adiabatic_time_estimate,
    analog_evolve,
    block_reference_unitary,
    cluster_levels,
    digitized_reference_evolution,
    fidelity,
    gap_profile,
    make_plan,
    splitting_error,
    stdat_step_bound,
    symmetry_sector,
)
from ssbsim.model import (
    Schedule,
    build_cayley_tree,
    build_linear_chain,
    neel_field_hamiltonian,
    neel_state,
    xy_hamiltonian,
)

TREE = build_cayley_tree(3)


def tree_problem(tau=5.0, kind="brachistochrone"):
    return AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule(kind), tau)


def sector_extreme_state(prob, branch):
    """Lowest (ground) or highest (excited) eigenvector of H_fin inside the Neel state's sector."""
    sector = symmetry_sector(neel_state(TREE, branch))
    h = prob.h_fin.to_dense()[np.ix_(sector, sector)]
    _, v = np.linalg.eigh(h)
    out = np.zeros(prob.h_fin.dim, dtype=complex)
    out[sector] = v[:, 0 if branch == "ground" else -1]
    return out


# --- analog evolution ------------------------------------------------------------------


def test_frozen_eigenstate_is_stationary():
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule("constant", 1.0, 0.0), 3.0)
    psi0 = neel_state(TREE, "excited")
    out = analog_evolve(prob, psi0, n_steps=100)[0]
    assert fidelity(out, psi0) == pytest.approx(1.0, abs=1e-9)


def test_analog_matches_dense_propagator_for_frozen_mix():
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule("constant", 0.3, 0.8), 2.0)
    psi0 = neel_state(TREE, "ground")
    out = analog_evolve(prob, psi0, n_steps=100)[0]
    h = 0.3 * prob.h_ini.to_dense() + 0.8 * prob.h_fin.to_dense()
    assert np.allclose(out, scipy.linalg.expm(-2j * h) @ psi0, atol=1e-10)


def test_input_validation():
    prob = tree_problem()
    with pytest.raises(ValueError):
        analog_evolve(prob, 2 * neel_state(TREE, "ground"))
    with pytest.raises(ValueError):
        analog_evolve(prob, neel_state(TREE, "ground"), n_steps=50)
    with pytest.raises(ValueError):
        analog_evolve(prob, neel_state(build_cayley_tree(2), "ground"))


def test_too_coarse_integration_is_reported():
    with pytest.raises(ConvergenceError):
        analog_evolve(tree_problem(tau=100.0), neel_state(TREE, "ground"), n_steps=100)


def test_trajectory_conserves_symmetries_and_norm():
    prob = tree_problem()
    points = list(np.linspace(0, 1, 11))
    for branch in ("ground", "excited"):
        states = analog_evolve(prob, neel_state(TREE, branch), n_steps=300, record_at=points)
        par0 = diagonal_expectation(states[0], parity_diagonal(7))
        mz0 = diagonal_expectation(states[0], magnetization_diagonal(7))
        for st in states:
            assert abs(np.linalg.norm(st) - 1) < 1e-9
            assert abs(diagonal_expectation(st, parity_diagonal(7)) - par0) < 1e-8
            assert abs(diagonal_expectation(st, magnetization_diagonal(7)) - mz0) < 1e-8


def test_slow_anneal_reaches_sector_ground_state():
    prob = tree_problem(tau=100.0)
    final = analog_evolve(prob, neel_state(TREE, "ground"), n_steps=3000)[0]
    assert fidelity(final, sector_extreme_state(prob, "ground")) >= 0.99


def test_lowest_negative_parity_eigenvector_is_unreachable():
    # the lowest parity -1 eigenvector sits at M_z = +1/2, not the Neel state's -3/2
    prob = tree_problem(tau=100.0)
    h = prob.h_fin.to_dense()
    idx = np.nonzero(parity_diagonal(7) == -1)[0]
    _, v = np.linalg.eigh(h[np.ix_(idx, idx)])
    target = np.zeros(128, dtype=complex)
    target[idx] = v[:, 0]
    assert diagonal_expectation(target, magnetization_diagonal(7)) == pytest.approx(0.5)
    final = analog_evolve(prob, neel_state(TREE, "ground"), n_steps=3000)[0]
    assert fidelity(final, target) < 1e-20


def test_record_points_are_returned_in_order():
    prob = tree_problem()
    psi0 = neel_state(TREE, "ground")
    a, b = analog_evolve(prob, psi0, n_steps=300, record_at=[0.0, 1.0])
    assert np.allclose(a, psi0)
    assert fidelity(b, analog_evolve(prob, psi0, n_steps=300)[0]) == pytest.approx(1.0, abs=1e-12)


# --- gap analysis --------------------------------------------------------------------------


def test_single_qubit_frozen_gap():
    h = pauli(1, {0: "z"}, 1.7)
    prob = AnnealingProblem(h, pauli(1, {0: "x"}), Schedule("constant", 1.0, 0.0), 1.0)
    prof = gap_profile(prob, 21)
    assert np.allclose(prof.delta, 3.4)


def test_cluster_levels_merges_degeneracies():
    clusters = cluster_levels(np.array([-1.0, 0.0, 1e-12, 1.0]))
    assert [list(c) for c in clusters] == [[0], [1, 2], [3]]


def test_degenerate_levels_do_not_produce_zero_gap():
    lat = build_linear_chain(2)
    prob = AnnealingProblem(neel_field_hamiltonian(lat), xy_hamiltonian(lat), Schedule("constant", 0.0, 1.0), 1.0)
    prof = gap_profile(prob, 21)
    # levels -1, 0 (twice), +1
    assert np.allclose(prof.delta, 1.0)


def test_gap_profile_budget_and_grid():
    with pytest.raises(ValueError):
        gap_profile(tree_problem(), grid=10)
    big = build_linear_chain(13)
    prob = AnnealingProblem(neel_field_hamiltonian(big), xy_hamiltonian(big), Schedule(), 1.0)
    with pytest.raises(BudgetExceededError):
        gap_profile(prob)


def test_gap_profile_csv_columns():
    text = gap_profile(tree_problem(), 21).to_csv()
    lines = text.splitlines()
    assert lines[0] == "s,delta,h_norm,dh_norm" and len(lines) == 22


# regression values from dense diagonalization on the 101-point grid
TREE_GAP_REGRESSION = {
    "brachistochrone": dict(min_delta=8.7421426764e-09, norm_based=7.1294729270e17, nondegenerate=5.8695845362e02,
                            degenerate=2.2644229684e03, bound=6.9268813581e-17),
    "linear": dict(min_delta=7.0819065057e-09, norm_based=7.1335318871e17, nondegenerate=1.5456673697e03,
                   degenerate=2.3951527033e03, bound=5.3538050265e-17),
}


@pytest.fixture(scope="module")
def tree_profiles():
    return {kind: (tree_problem(kind=kind), gap_profile(tree_problem(kind=kind), 101)) for kind in TREE_GAP_REGRESSION}


@pytest.mark.parametrize("kind", sorted(TREE_GAP_REGRESSION))
def test_tree_gap_regression(tree_profiles, kind):
    prob, prof = tree_profiles[kind]
    ref = TREE_GAP_REGRESSION[kind]
    assert np.all(prof.delta > 0)
    assert prof.delta.min() == pytest.approx(ref["min_delta"], rel=1e-4)
    for mode in ESTIMATE_MODES:
        assert adiabatic_time_estimate(prob, prof, mode) == pytest.approx(ref[mode], rel=1e-4)
    assert stdat_step_bound(prob, prof) == pytest.approx(ref["bound"], rel=1e-4)


@pytest.mark.parametrize("kind", sorted(TREE_GAP_REGRESSION))
def test_estimate_ordering(tree_profiles, kind):
    prob, prof = tree_profiles[kind]
    nb, nd, dg = (adiabatic_time_estimate(prob, prof, m) for m in ESTIMATE_MODES)
    assert nb >= dg >= 0 and nb >= nd >= 0


def test_frozen_hamiltonian_has_zero_adiabatic_time():
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule("constant", 0.5, 0.5), 1.0)
    prof = gap_profile(prob, 21)
    for mode in ESTIMATE_MODES:
        assert adiabatic_time_estimate(prob, prof, mode) == 0.0


def test_modes_agree_without_degeneracy():
    prob = AnnealingProblem(pauli(1, {0: "z"}), pauli(1, {0: "x"}), Schedule("linear"), 1.0)
    prof = gap_profile(prob, 41)
    assert adiabatic_time_estimate(prob, prof, "degenerate") == pytest.approx(
        adiabatic_time_estimate(prob, prof, "nondegenerate"), rel=1e-12)


def test_unknown_mode_and_missing_eigenvectors():
    prob = tree_problem()
    prof = gap_profile(prob, 21)
    with pytest.raises(ValueError):
        adiabatic_time_estimate(prob, prof, "heuristic")
    bare = GapProfile(prof.s, prof.delta, prof.h_norm, prof.dh_norm, prof.f, prof.g)
    with pytest.raises(ValueError):
        adiabatic_time_estimate(prob, bare, "nondegenerate")


def test_sector_profile_has_larger_gap():
    prob = tree_problem()
    sector = symmetry_sector(neel_state(TREE, "ground"))
    assert len(sector) == 21
    prof = gap_profile(prob, 101, sector)
    assert prof.delta.min() > 1e3 * gap_profile(prob, 101).delta.min()


def test_symmetry_sector_needs_definite_quantum_numbers():
    psi = (neel_state(TREE, "ground") + neel_state(TREE, "excited")) / math.sqrt(2)
    with pytest.raises(ValueError):
        symmetry_sector(psi)


# --- step bound -----------------------------------------------------------------------------


def test_commuting_pair_gives_infinite_bound():
    h_ini = neel_field_hamiltonian(TREE)
    h_fin = Hamiltonian(7, (PauliTerm(1.0, ((0, "z"), (1, "z"))),))
    prob = AnnealingProblem(h_ini, h_fin, Schedule(), 1.0)
    assert stdat_step_bound(prob, gap_profile(prob, 21)) == math.inf


def test_explicit_tau_bound_scales_inversely():
    prob = tree_problem()
    prof = gap_profile(prob, 41)
    assert stdat_step_bound(prob, prof, tau=2.5) == pytest.approx(2 * stdat_step_bound(prob, prof, tau=5.0))


def test_step_decade_below_bound_shrinks_splitting_error(tree_profiles):
    prob, prof = tree_profiles["brachistochrone"]
    bound, s = stdat_step_bound(prob, prof, return_argmin=True)
    assert splitting_error(prob, s, bound / 10) <= 0.1 * splitting_error(prob, s, bound)


def test_explicit_tau_bound_step_reduces_error():
    prob = tree_problem()
    prof = gap_profile(prob, 101)
    bound, s = stdat_step_bound(prob, prof, tau=prob.tau, return_argmin=True)
    assert splitting_error(prob, s, bound / 10) <= 0.1 * splitting_error(prob, s, bound)


# --- digitization ----------------------------------------------------------------------------


def test_middle_block_coupling_angle():
    plan = make_plan(tree_problem(), 5)
    s_bar, ds, _, phi_j = plan.block(3)
    assert s_bar == pytest.approx(0.5) and ds == pytest.approx(0.2)
    assert phi_j == pytest.approx(0.5, abs=1e-12)


def test_single_linear_block():
    plan = make_plan(tree_problem(tau=4.0, kind="linear"), 1, omega0=1.5, J0=0.5)
    s_bar, _, phi_z, phi_j = plan.block(1)
    assert (s_bar, phi_z, phi_j) == pytest.approx((0.5, 1.5 * 4.0 / 2, 0.5 * 4.0 / 2))


@pytest.mark.parametrize("M", [1, 2, 3, 7, 40])
def test_plan_widths_sum_to_one(M):
    plan = make_plan(tree_problem(), M)
    assert plan.ds.sum() == pytest.approx(1.0, abs=1e-12)
    edges = np.arange(M + 1) / M
    assert np.allclose(plan.s_bar, 0.5 * (edges[:-1] + edges[1:]))


def test_plan_rejects_bad_block():
    plan = make_plan(tree_problem(), 5)
    with pytest.raises(ValueError):
        plan.block(0)
    with pytest.raises(ValueError):
        make_plan(tree_problem(), 0)


def test_plan_csv():
    lines = make_plan(tree_problem(), 5).to_csv().splitlines()
    assert lines[0] == "block,s_bar,ds,phi_z,phi_j" and len(lines) == 6


def test_block_unitary_tends_to_identity():
    prob = tree_problem()
    errs = []
    for M in (100, 1000):
        plan = make_plan(prob, M)
        u = block_reference_unitary(prob, plan, M // 2)
        errs.append(np.linalg.norm(u - np.eye(128), 2))
    assert errs[1] < errs[0] / 5


def test_block_without_field_is_pure_interaction():
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule("constant", 0.0, 1.0), 5.0)
    plan = make_plan(prob, 5)
    u = block_reference_unitary(prob, plan, 2)
    assert np.allclose(u, scipy.linalg.expm(-1j * 1.0 * prob.h_fin.to_dense()), atol=1e-12)


def test_block_reference_budget():
    ch = build_linear_chain(11)
    prob = AnnealingProblem(neel_field_hamiltonian(ch), xy_hamiltonian(ch), Schedule(), 1.0)
    with pytest.raises(BudgetExceededError):
        block_reference_unitary(prob, make_plan(prob, 2), 1)


def test_split_evolution_converges_monotonically():
    prob = tree_problem()
    psi0 = neel_state(TREE, "ground")
    target = analog_evolve(prob, psi0, n_steps=400)[0]
    infid = [1 - fidelity(digitized_reference_evolution(prob, make_plan(prob, M), psi0)[-1], target)
             for M in (1, 2, 5, 10, 20)]
    assert all(a > b for a, b in zip(infid, infid[1:]))
