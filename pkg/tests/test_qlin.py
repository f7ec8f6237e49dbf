import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from oracles import naive_fidelity, naive_partial_trace, naive_trace_norm, random_density, random_state
from qbcsim.qlin import (
    DensityOperator,
    DomainError,
    Ensemble,
    ImpossibleOutcomeError,
    LayoutError,
    PartitionError,
    StateVector,
    SystemLayout,
    apply_unitary,
    circle_state,
    fidelity,
    is_projector,
    ket_projector,
    kron_all,
    luders_project,
    partial_trace,
    purify,
    reorder,
    rotate_on_circle,
    rotation,
    schmidt,
    schmidt_rank,
    tensor,
    trace_norm,
)

QUBIT = SystemLayout.of(("q", 2))
TWO = SystemLayout.of(("a", 2), ("b", 2))


def bell():
    return StateVector(np.array([1, 0, 0, 1]) / np.sqrt(2), TWO)


seeds = st.integers(0, 2**32 - 1)


class TestLayout:
    def test_duplicate_names_rejected(self):
        with pytest.raises(LayoutError):
            SystemLayout.of(("a", 2), ("a", 2))

    def test_unknown_register(self):
        with pytest.raises(LayoutError):
            TWO.index("zz")

    def test_concat_and_subset(self):
        lay = TWO.concat(SystemLayout.of(("c", 3)))
        assert lay.total_dim == 12
        assert lay.subset(["c", "a"]).names == ("a", "c")


class TestStateVector:
    def test_unnormalized_rejected(self):
        with pytest.raises(DomainError):
            StateVector(np.array([1.0, 1.0]), QUBIT)

    def test_wrong_length_rejected(self):
        with pytest.raises(LayoutError):
            StateVector(np.array([1.0, 0, 0]), QUBIT)

    def test_amplitudes_read_only(self):
        psi = bell()
        with pytest.raises(ValueError):
            psi.amplitudes[0] = 0

    def test_inner_matches_registers_by_name(self):
        psi = StateVector(np.kron([1, 0], [0, 1]), TWO)
        swapped = reorder(psi, ["b", "a"])
        assert abs(psi.inner(swapped) - 1) < 1e-12


class TestTensorAndTrace:
    def test_tensor_of_basis_states(self):
        a = StateVector.basis(1, SystemLayout.of(("x", 2)))
        b = StateVector.basis(0, SystemLayout.of(("y", 3)))
        assert np.argmax(np.abs(tensor(a, b).amplitudes)) == 3

    def test_bell_reduces_to_maximally_mixed(self):
        rho = partial_trace(bell(), ["a"])
        assert np.allclose(rho.matrix, np.eye(2) / 2)

    def test_product_reduces_to_factor(self):
        a = StateVector(circle_state(0.3), SystemLayout.of(("x", 2)))
        b = StateVector(circle_state(1.1), SystemLayout.of(("y", 2)))
        rho = partial_trace(tensor(a, b).density(), ["y"])
        assert np.allclose(rho.matrix, ket_projector(b.amplitudes))

    @given(seeds)
    def test_partial_trace_matches_naive_loops(self, seed):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("a", 2), ("b", 3), ("c", 2))
        rho = random_density(rng, 12)
        got = partial_trace(DensityOperator(rho, lay), ["a", "c"]).matrix
        assert np.allclose(got, naive_partial_trace(rho, [2, 3, 2], [0, 2]), atol=1e-10)

    @given(seeds)
    def test_state_and_density_paths_agree(self, seed):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("a", 2), ("b", 2), ("c", 3))
        psi = StateVector(random_state(rng, 12), lay)
        assert np.allclose(partial_trace(psi, ["b", "c"]).matrix,
                           partial_trace(psi.density(), ["b", "c"]).matrix, atol=1e-12)

    @given(seeds)
    def test_partial_trace_keeps_trace_and_positivity(self, seed):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("a", 3), ("b", 2))
        red = partial_trace(DensityOperator(random_density(rng, 6), lay), ["b"])
        assert abs(np.trace(red.matrix) - 1) < 1e-12
        red.check_positive()


class TestDistances:
    def test_orthogonal_states_have_distance_two(self):
        assert math.isclose(trace_norm(np.diag([1, -1])), 2.0)

    def test_trace_norm_rejects_non_hermitian(self):
        with pytest.raises(DomainError):
            trace_norm(np.array([[0, 1], [0, 0]]))

    def test_pure_state_fidelity_is_overlap(self):
        a, b = circle_state(0.0), circle_state(np.pi / 2)
        got = fidelity(DensityOperator(ket_projector(a), QUBIT), DensityOperator(ket_projector(b), QUBIT))
        assert math.isclose(got, abs(np.vdot(a, b)), abs_tol=1e-7)

    def test_fidelity_of_identical_states(self):
        rho = DensityOperator(random_density(np.random.default_rng(0), 4), TWO)
        assert math.isclose(fidelity(rho, rho), 1.0, abs_tol=1e-9)

    @given(seeds, st.integers(2, 6))
    def test_trace_norm_matches_singular_values(self, seed, d):
        rng = np.random.default_rng(seed)
        diff = random_density(rng, d) - random_density(rng, d)
        assert math.isclose(trace_norm(diff), naive_trace_norm(diff), abs_tol=1e-10)

    @given(seeds, st.integers(2, 6))
    def test_fuchs_van_de_graaf(self, seed, d):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("x", d))
        r, s = DensityOperator(random_density(rng, d), lay), DensityOperator(random_density(rng, d), lay)
        f = fidelity(r, s)
        half = trace_norm(r.matrix - s.matrix) / 2
        assert 1 - f <= half + 1e-9
        assert half <= math.sqrt(max(0.0, 1 - f * f)) + 1e-9

    @given(seeds, st.integers(2, 5))
    def test_fidelity_symmetric_and_matches_oracle(self, seed, d):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("x", d))
        r, s = random_density(rng, d), random_density(rng, d)
        f = fidelity(DensityOperator(r, lay), DensityOperator(s, lay))
        assert math.isclose(f, fidelity(DensityOperator(s, lay), DensityOperator(r, lay)), abs_tol=1e-9)
        assert math.isclose(f, naive_fidelity(r, s), abs_tol=1e-8)


class TestSchmidt:
    def test_bell_has_rank_two(self):
        assert schmidt_rank(bell(), ["a"]) == 2

    def test_product_has_rank_one(self):
        psi = StateVector(np.kron(circle_state(0.2), circle_state(2.0)), TWO)
        assert schmidt_rank(psi, ["b"]) == 1

    def test_empty_side_rejected(self):
        with pytest.raises(PartitionError):
            schmidt(bell(), [])
        with pytest.raises(PartitionError):
            schmidt(bell(), ["a", "b"])

    @given(seeds)
    def test_reconstructs_and_squares_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        lay = SystemLayout.of(("a", 2), ("b", 3), ("c", 2))
        psi = StateVector(random_state(rng, 12), lay)
        dec = schmidt(psi, ["a", "c"])
        assert math.isclose(float(np.sum(dec.coefficients ** 2)), 1.0, abs_tol=1e-12)
        assert np.all(np.diff(dec.coefficients) <= 1e-15)
        ordered = reorder(psi, dec.left_layout.names + dec.right_layout.names)
        assert np.allclose(dec.reconstruct(), ordered.amplitudes, atol=1e-12)


class TestCircleAndOps:
    def test_rotation_moves_along_circle(self):
        assert np.allclose(rotate_on_circle(circle_state(0.4), 0.5), circle_state(0.9))

    def test_rotation_unitary(self):
        r = rotation(0.7)
        assert np.allclose(r @ r.conj().T, np.eye(2))

    def test_opposite_points_orthogonal(self):
        assert abs(np.vdot(circle_state(1.0), circle_state(1.0 + np.pi))) < 1e-15

    def test_apply_unitary_on_named_register(self):
        psi = StateVector(np.kron([1, 0], [1, 0]), TWO)
        x = np.array([[0, 1], [1, 0]])
        out = apply_unitary(psi, x, ["b"])
        assert np.allclose(out.amplitudes, np.kron([1, 0], [0, 1]))

    def test_kron_all_matches_numpy(self):
        mats = [rotation(0.1), np.eye(3), rotation(1.3)]
        assert np.allclose(kron_all(mats), np.kron(np.kron(mats[0], mats[1]), mats[2]))


class TestPurifyAndLueders:
    def test_purification_reduces_to_ensemble(self):
        ens = Ensemble(((0.25, StateVector(circle_state(0.0), QUBIT)),
                        (0.75, StateVector(circle_state(2.0), QUBIT))))
        pure = purify(ens)
        assert np.allclose(partial_trace(pure, ["q"]).matrix, ens.average().matrix)

    def test_ensemble_probabilities_must_sum_to_one(self):
        with pytest.raises(DomainError):
            Ensemble(((0.5, StateVector(circle_state(0.0), QUBIT)),))

    def test_lueders_on_bell(self):
        prob, post = luders_project(bell(), ket_projector([1, 0]), ["a"])
        assert math.isclose(prob, 0.5)
        assert np.allclose(post.amplitudes, [1, 0, 0, 0])

    def test_impossible_outcome(self):
        psi = StateVector(np.kron([1, 0], [1, 0]), TWO)
        with pytest.raises(ImpossibleOutcomeError):
            luders_project(psi, ket_projector([0, 1]), ["a"])

    def test_non_projector_rejected(self):
        with pytest.raises(DomainError):
            luders_project(bell(), np.diag([1.0, 0.5]), ["a"])

    @given(seeds)
    def test_lueders_outcomes_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        psi = StateVector(random_state(rng, 4), TWO)
        v = random_state(rng, 2)
        p = ket_projector(v)
        assert is_projector(p)
        total = sum(luders_project(psi, q, ["b"])[0] for q in (p, np.eye(2) - p))
        assert math.isclose(total, 1.0, abs_tol=1e-12)
