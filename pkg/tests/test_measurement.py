import math
from functools import reduce
from itertools import combinations

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings
from hypothesis import strategies as st

from ssbsim.annealing import AnnealingProblem, analog_evolve, make_plan
from ssbsim.circuit import build_circuit, run_circuit
from ssbsim.core import partial_trace, purity, renyi2_exact, state_from_bits
from ssbsim.measurement import (
    all_masks,
    apply_readout_error,
    connected_correlation,
    corrected_entropy,
    correlation_matrix,
    cue_unitary,
    distance_profile,
    energy_xy,
    entanglement_witness,
    estimate_from_counts,
    instance_rng,
    parity_z,
    randomized_counts,
    randomized_renyi,
    randomized_renyi_all,
    readout_correct,
    similarity,
)
from ssbsim.model import Schedule, build_cayley_tree, neel_field_hamiltonian, neel_state, xy_hamiltonian

TREE = build_cayley_tree(3)
BELL = np.array([1, 0, 0, 1], dtype=complex) / math.sqrt(2)


def random_state(rng, n):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def random_product_state(rng, n):
    return reduce(np.kron, [random_state(rng, 1) for _ in range(n)])


@pytest.fixture(scope="module")
def final_states():
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule(), 5.0)
    c = build_circuit(make_plan(prob, 5), TREE)
    return {b: run_circuit(neel_state(TREE, b), c) for b in ("ground", "excited")}


# --- energy ------------------------------------------------------------------------------


def test_energy_of_neel_states_is_zero():
    for b in ("ground", "excited"):
        assert energy_xy(neel_state(TREE, b), TREE) == (0.0, 0.0)


def test_energy_of_two_spin_singlet():
    from ssbsim.model import build_linear_chain

    singlet = (state_from_bits(["up", "down"]) - state_from_bits(["down", "up"])) / math.sqrt(2)
    e4, et = energy_xy(singlet, build_linear_chain(2), J0=1.0)
    assert e4 == pytest.approx(-1.0) and et == pytest.approx(-2.0)


def test_energy_conventions_differ_by_two():
    rng = np.random.default_rng(11)
    h = xy_hamiltonian(TREE)
    for _ in range(50):
        psi = random_state(rng, 7)
        e4, et = energy_xy(psi, TREE)
        assert et == pytest.approx(2 * e4, abs=1e-12)
        assert e4 == pytest.approx(np.vdot(psi, h.apply(psi)).real, abs=1e-12)


# --- correlations ------------------------------------------------------------------------------


def test_product_state_has_no_connected_correlation():
    psi = random_product_state(np.random.default_rng(1), 4)
    for i, j in combinations(range(4), 2):
        assert connected_correlation(psi, i, j, 0.3) == pytest.approx(0.0, abs=1e-12)


def test_bell_correlation():
    assert connected_correlation(BELL, 0, 1) == pytest.approx(1.0)


def test_same_site_rejected():
    with pytest.raises(ValueError):
        connected_correlation(BELL, 1, 1)


def test_correlation_matrix_agrees_with_pairwise_definition():
    psi = random_state(np.random.default_rng(2), 4)
    for theta in (0.0, 0.7):
        C = correlation_matrix(psi, theta)
        assert np.array_equal(C, C.T)
        assert np.all(np.abs(C) <= 2)
        for i, j in combinations(range(4), 2):
            assert C[i, j] == pytest.approx(connected_correlation(psi, i, j, theta), abs=1e-12)


def test_correlation_rotation_isotropy_on_annealed_states(final_states):
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule(), 5.0)
    analog = analog_evolve(prob, neel_state(TREE, "excited"), n_steps=300)[0]
    for psi in (*final_states.values(), analog):
        mats = [correlation_matrix(psi, t) for t in (0.0, math.pi / 4, math.pi / 2)]
        assert max(np.max(np.abs(m - mats[0])) for m in mats) < 1e-6


def test_final_ferromagnetic_state_is_isotropic(final_states):
    psi = final_states["excited"]
    for i, j in TREE.edges:
        assert connected_correlation(psi, i, j, 0.0) == pytest.approx(connected_correlation(psi, i, j, math.pi / 2),
                                                                      abs=1e-6)


# --- similarity and distance ------------------------------------------------------------------------


def test_similarity_range_endpoints():
    a = np.ones((3, 3))
    assert similarity(a, a) == 1.0
    b = a.copy()
    b[0, 1] = b[1, 0] = -1.0
    assert similarity(a, b) == 0.0


def test_similarity_ignores_diagonal():
    a = np.zeros((3, 3))
    b = np.diag([1.0, 1.0, 1.0])
    assert similarity(a, b) == 1.0


def test_similarity_shape_mismatch():
    with pytest.raises(ValueError):
        similarity(np.zeros((2, 2)), np.zeros((3, 3)))


def test_similarity_of_recomputed_run(final_states):
    prob = AnnealingProblem(neel_field_hamiltonian(TREE), xy_hamiltonian(TREE), Schedule(), 5.0)
    again = run_circuit(neel_state(TREE, "ground"), build_circuit(make_plan(prob, 5), TREE))
    assert similarity(correlation_matrix(final_states["ground"]), correlation_matrix(again)) == pytest.approx(1.0,
                                                                                                           abs=1e-12)


def test_distance_profile_from_generation_two_spin():
    C = np.zeros((7, 7))
    for j, v in zip((1, 0, 4, 2, 5, 6), (10, 20, 30, 40, 50, 60)):
        C[3, j] = v
    prof = distance_profile(TREE, C, 3)
    # distances (1, 2, 2, 3, 4, 4) for nodes (1, 0, 4, 2, 5, 6)
    assert prof == [(1.0, 10.0), (2.0, 25.0), (3.0, 40.0), (4.0, 55.0)]


def test_distance_profile_spacing_and_reference():
    C = correlation_matrix(neel_state(TREE, "ground"))
    prof = distance_profile(TREE, C, 0, spacing=2.0)
    assert [r for r, _ in prof] == [2.0, 4.0]
    assert all(abs(c) < 1e-12 for _, c in prof)
    with pytest.raises(ValueError):
        distance_profile(TREE, C, 9)


# --- parity ------------------------------------------------------------------------------------------


def test_parity_of_neel_states():
    assert parity_z(neel_state(TREE, "ground")) == -1
    assert parity_z(neel_state(TREE, "excited")) == 1


def test_parity_of_uniform_superposition():
    assert parity_z(np.full(128, 1 / math.sqrt(128), dtype=complex)) == pytest.approx(0.0, abs=1e-12)


# --- Haar unitaries ---------------------------------------------------------------------------------------


def test_cue_unitarity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        u = cue_unitary(2, rng)
        assert np.max(np.abs(u.conj().T @ u - np.eye(2))) < 1e-12


def test_cue_second_moment():
    rng = np.random.default_rng(1)
    x = np.array([abs(cue_unitary(2, rng)[0, 0]) ** 2 for _ in range(100_000)])
    # |u00|^2 is uniform on [0, 1] for Haar U(2)
    assert abs(x.mean() - 0.5) < 3 * x.std() / math.sqrt(len(x))


def test_cue_eigenphases_uniform():
    rng = np.random.default_rng(2)
    angles = np.concatenate([np.angle(np.linalg.eigvals(cue_unitary(2, rng))) for _ in range(10_000)])
    assert scipy.stats.kstest((angles + math.pi) / (2 * math.pi), "uniform").pvalue > 0.01


def test_instance_streams_are_reproducible_and_distinct():
    a = instance_rng(7, 3).normal(size=4)
    assert np.array_equal(a, instance_rng(7, 3).normal(size=4))
    assert not np.array_equal(a, instance_rng(7, 4).normal(size=4))


# --- randomized Renyi ---------------------------------------------------------------------------------------


def within(est, exact, k=3.0):
    return abs(est.mean_bits - exact) <= k * est.stderr_bits


def test_single_qubit_pure_state():
    est = randomized_renyi(np.array([1, 0], dtype=complex), [0], 100, 10000, seed=1)
    assert within(est, 0.0)


def test_bell_half_is_one_bit():
    est = randomized_renyi(BELL, [0], 100, 10000, seed=2)
    assert within(est, 1.0)


def test_shots_must_allow_pairs():
    with pytest.raises(ValueError):
        randomized_renyi(BELL, [0], 10, 1, seed=0)
    with pytest.raises(ValueError):
        randomized_renyi(BELL, [], 10, 10, seed=0)


def test_one_subsystem_per_size_matches_exact(final_states):
    psi = final_states["excited"]
    masks = [tuple(range(k)) for k in range(1, 8)]
    for est, m in zip(randomized_renyi_all(psi, masks, 100, 10000, seed=99), masks):
        exact = renyi2_exact(partial_trace(psi, list(m)))
        assert within(est, exact), (m, est.mean_bits, exact, est.stderr_bits)


def test_purity_estimator_is_unbiased():
    psi = random_state(np.random.default_rng(5), 2)
    exact = purity(partial_trace(psi, [0, 1]))
    vals = np.array([randomized_renyi(psi, [0, 1], 20, 200, seed=1000 + r).purity_raw for r in range(200)])
    assert abs(vals.mean() - exact) <= 3 * vals.std(ddof=1) / math.sqrt(len(vals))


def test_shared_measurements_equal_single_estimates():
    psi = random_state(np.random.default_rng(6), 3)
    many = randomized_renyi_all(psi, [(0,), (1, 2)], 10, 100, seed=4)
    assert many[1] == randomized_renyi(psi, (1, 2), 10, 100, seed=4)


def test_mask_order_does_not_change_purity():
    psi = random_state(np.random.default_rng(8), 3)
    counts = randomized_counts(psi, 5, 200, seed=3)
    a = estimate_from_counts(counts, 3, (0, 2))
    b = estimate_from_counts(counts, 3, (2, 0))
    assert a.purity_raw == pytest.approx(b.purity_raw, rel=1e-12)


def test_readout_error_is_undone_in_estimator():
    psi = random_state(np.random.default_rng(9), 2)
    conf = [np.array([[0.95, 0.08], [0.05, 0.92]]), np.array([[0.97, 0.04], [0.03, 0.96]])]
    exact = purity(partial_trace(psi, [0, 1]))
    raw = randomized_renyi_all(psi, [(0, 1)], 200, 2000, seed=5, confusion=conf, correct_readout=False)[0]
    fixed = randomized_renyi_all(psi, [(0, 1)], 200, 2000, seed=5, confusion=conf)[0]
    assert abs(fixed.purity_raw - exact) <= 3 * fixed.purity_stderr
    assert raw.purity_raw < exact - 3 * raw.purity_stderr


def test_mask_enumeration():
    masks = all_masks(7)
    assert len(masks) == 126
    assert sum(len(m) == 3 for m in masks) == 35
    assert len(all_masks(7, include_full=True)) == 127


# --- entropy correction and witness -------------------------------------------------------------------------


def test_corrected_entropy_examples():
    assert corrected_entropy(0.42, 0.0, 3, 7) == 0.42
    assert corrected_entropy(0.9, 0.7, 3, 7) == pytest.approx(0.6)
    assert corrected_entropy(1.3, 1.3, 7, 7) == pytest.approx(0.0)
    with pytest.raises(ValueError):
        corrected_entropy(1.0, 1.0, 8, 7)


def test_witness_on_bell_and_product():
    assert entanglement_witness(renyi2_exact(partial_trace(BELL, [0])), 0.0)
    prod = state_from_bits(["up", "down"])
    assert not entanglement_witness(renyi2_exact(partial_trace(prod, [0])), 0.0)


def test_witness_never_fires_on_product_states():
    rng = np.random.default_rng(12)
    for _ in range(100):
        psi = random_product_state(rng, 4)
        whole = renyi2_exact(np.outer(psi, psi.conj()))
        for m in all_masks(4):
            assert not entanglement_witness(renyi2_exact(partial_trace(psi, list(m))), whole, 1e-9)


def test_witness_on_final_antiferromagnet(final_states):
    psi = final_states["ground"]
    fired = [entanglement_witness(renyi2_exact(partial_trace(psi, list(m))), 0.0, 1e-9)
             for m in all_masks(7) if len(m) == 3]
    assert len(fired) == 35 and sum(fired) > 17


# --- readout correction --------------------------------------------------------------------------------------


def test_perfect_readout_is_identity():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(readout_correct(p, [np.eye(2), np.eye(2)]), p)


def test_single_qubit_recovery():
    c = np.array([[0.99, 0.05], [0.01, 0.95]])
    q = readout_correct(c @ np.array([1.0, 0.0]), [c])
    assert np.allclose(q, [1.0, 0.0], atol=1e-9)


def test_uniform_stays_uniform():
    c = np.array([[0.9, 0.1], [0.1, 0.9]])
    assert np.allclose(readout_correct(np.full(4, 0.25), [c, c]), 0.25)


def test_bad_confusion_rejected():
    with pytest.raises(ValueError):
        readout_correct(np.array([0.5, 0.5]), [np.array([[0.5, 0.5], [0.5, 0.5]])])
    with pytest.raises(ValueError):
        readout_correct(np.array([0.6, 0.6]), [np.eye(2)])


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_readout_correction_left_inverse(n, seed):
    rng = np.random.default_rng(seed)
    conf = []
    for _ in range(n):
        f0, f1 = rng.uniform(0.8, 0.99, size=2)
        conf.append(np.array([[f0, 1 - f1], [1 - f0, f1]]))
    q = rng.dirichlet(np.ones(2**n)) * 0.9 + 0.1 / 2**n
    q /= q.sum()
    assert np.max(np.abs(readout_correct(apply_readout_error(q, conf), conf) - q)) < 1e-8


def test_noisy_input_projects_onto_simplex():
    c = np.array([[0.9, 0.1], [0.1, 0.9]])
    out = readout_correct(np.array([0.97, 0.03, 0.0, 0.0]), [c, c])
    assert np.all(out >= 0) and out.sum() == pytest.approx(1.0, abs=1e-15)
    # the unconstrained inverse would go negative here
    inv = np.kron(np.linalg.inv(c), np.linalg.inv(c)) @ np.array([0.97, 0.03, 0.0, 0.0])
    assert inv.min() < 0
    # and the result is the simplex point nearest in the confusion metric
    big = np.kron(c, c)
    best = np.linalg.norm(big @ out - [0.97, 0.03, 0, 0])
    rng = np.random.default_rng(0)
    for _ in range(500):
        trial = rng.dirichlet(np.ones(4))
        assert np.linalg.norm(big @ trial - [0.97, 0.03, 0, 0]) >= best - 1e-12
