"""Linear-algebra kernel tests: exponential, rank/kernel, pole placement."""

import numpy as np
import pytest

from rslsgrid import matnum
from rslsgrid.matnum import (MatrixError, PlacementError, Spectrum, eigenvalues,
                             expm, kernel_basis, numerical_rank,
                             place_observer_gain)

from conftest import example1_subsystem


def taylor_expm(A, t, terms=60):
    """Truncated-series oracle, independent of the production routine."""
    X = np.eye(A.shape[0])
    term = np.eye(A.shape[0])
    for k in range(1, terms):
        term = term @ (A * t) / k
        X = X + term
    return X


class TestExpm:
    def test_zero_matrix_gives_identity(self):
        assert np.allclose(expm(np.zeros((2, 2)), 1.0), np.eye(2), atol=1e-15)

    def test_diagonal_case(self):
        E = expm(np.diag([-4.0, -5.0]), 1.0)
        assert np.allclose(E, np.diag([np.exp(-4.0), np.exp(-5.0)]), rtol=1e-12)

    def test_matches_series_oracle(self):
        rng = np.random.default_rng(3)
        A = rng.standard_normal((4, 4))
        assert np.max(np.abs(expm(A, 0.3) - taylor_expm(A, 0.3))) < 1e-10

    def test_expm_at_zero_time_is_identity(self):
        rng = np.random.default_rng(4)
        A = rng.standard_normal((5, 5))
        assert np.allclose(expm(A, 0.0), np.eye(5), atol=1e-15)

    def test_inverse_property(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            A = rng.standard_normal((4, 4))
            t = 20.0 / max(np.linalg.norm(A), 1.0) * rng.uniform(0.1, 1.0)
            P = expm(A, t) @ expm(A, -t)
            assert np.max(np.abs(P - np.eye(4))) < 1e-9

    def test_semigroup_property(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            A = rng.standard_normal((3, 3))
            t1, t2 = rng.uniform(0.0, 1.0, 2)
            lhs = expm(A, t1 + t2)
            rhs = expm(A, t1) @ expm(A, t2)
            assert np.max(np.abs(lhs - rhs)) < 1e-9

    def test_rejects_non_square(self):
        with pytest.raises(MatrixError):
            expm(np.ones((2, 3)), 1.0)

    def test_rejects_non_finite(self):
        with pytest.raises(MatrixError):
            expm(np.array([[np.nan, 0], [0, 1.0]]), 1.0)


class TestEigenvalues:
    def test_diagonal(self):
        spec = eigenvalues(np.diag([1.0, 2.0, 3.0]))
        assert np.allclose(spec.flat(), [1, 2, 3])

    def test_5bus_reference_mode1(self, bank5_ref):
        # reference eigenvalue list of the normal-operation mode
        got = np.sort(eigenvalues(bank5_ref[1].A).flat().real)
        want = np.sort([-5.388, 5.2302, 0.0, -0.1253])
        assert np.max(np.abs(got - want)) < 1e-3

    def test_33bus_reference_mode1(self, bank33_ref):
        got = eigenvalues(bank33_ref[1].A).flat()
        want = np.array([-0.0611 - 1.0602j, -0.0611 + 1.0602j,
                         -0.0667 - 2.1152j, -0.0667 + 2.1152j])
        want = np.array(sorted(want, key=lambda z: (z.real, z.imag)))
        assert np.max(np.abs(got - want)) < 1e-3

    def test_multiplicity_grouping(self):
        spec = Spectrum.from_values([2.0, 2.0, 1.0])
        assert spec.dim == 3
        assert spec.multiplicities == (1, 2)


class TestRankKernel:
    def test_identity_rank(self):
        assert numerical_rank(np.eye(4)) == 4

    def test_outer_product_rank_one(self):
        u = np.array([1.0, -2.0, 3.0])
        v = np.array([0.5, 4.0])
        assert numerical_rank(np.outer(u, v)) == 1

    def test_power_sensor_observability_matrix_rank_3(self):
        # the two-bus power-transfer sensor loses one state direction
        sub = example1_subsystem()
        from rslsgrid.observe import observability_matrix
        W2 = observability_matrix(sub)
        assert numerical_rank(W2) == 3

    def test_kernel_of_full_rank_is_empty(self):
        assert kernel_basis(np.eye(3)).shape == (3, 0)

    def test_one_equation_kernel(self):
        K = kernel_basis(np.array([[1.0, 1.0]]))
        assert K.shape == (2, 1)
        expected = np.array([1.0, -1.0]) / np.sqrt(2.0)
        assert np.allclose(np.abs(K[:, 0]), np.abs(expected), atol=1e-12)

    def test_kernel_residual_of_power_sensor_matrix(self):
        sub = example1_subsystem()
        from rslsgrid.observe import observability_matrix
        W2 = observability_matrix(sub)
        K = kernel_basis(W2)
        assert K.shape[1] == 1
        assert np.max(np.abs(W2 @ K)) < 1e-10

    def test_rank_plus_kernel_width_is_cols(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            m, n = rng.integers(1, 7, 2)
            r = int(rng.integers(0, min(m, n) + 1))
            M = (rng.standard_normal((m, r)) @ rng.standard_normal((r, n))
                 if r else np.zeros((m, n)))
            K = kernel_basis(M)
            assert numerical_rank(M) + K.shape[1] == n
            if K.size:
                assert np.max(np.abs(M @ K)) < 1e-10


class TestPlacement:
    def test_decoupled_diagonal(self):
        A = np.diag([-1.0, -2.0])
        C = np.eye(2)
        L = place_observer_gain(A, C, [-3.0, -4.0])
        got = np.sort(np.linalg.eigvals(A - L @ C).real)
        assert np.max(np.abs(got - [-4.0, -3.0])) < 1e-6
        # the canonical decoupled answer is itself a valid gain
        assert np.allclose(np.sort(np.linalg.eigvals(A - np.diag([2.0, 2.0])).real),
                           [-4.0, -3.0])

    def test_5bus_reference_poles(self, bank5_ref):
        A = bank5_ref[1].A
        C = np.array([[1.0, 0, 0, 0]])
        poles = [-4.8, -3.6, -4.0, -4.4]
        L = place_observer_gain(A, C, poles)
        got = np.sort(np.linalg.eigvals(A - L @ C).real)
        assert np.max(np.abs(got - np.sort(poles))) < 1e-6

    def test_random_observable_pairs_eigen_oracle(self):
        rng = np.random.default_rng(11)
        placed = 0
        for _ in range(20):
            A = rng.standard_normal((4, 4))
            C = rng.standard_normal((1, 4))
            from rslsgrid.observe import observability_matrix
            if numerical_rank(observability_matrix(A, C)) < 4:
                continue
            re = -rng.uniform(0.5, 5.0, 2)
            im = rng.uniform(0.1, 3.0)
            poles = [re[0], re[1], complex(-1.0, im), complex(-1.0, -im)]
            L = place_observer_gain(A, C, poles)
            got = np.sort_complex(np.linalg.eigvals(A - L @ C))
            want = np.sort_complex(np.array(poles, dtype=complex))
            assert np.max(np.abs(got - want)) < 1e-6
            placed += 1
        assert placed >= 15

    def test_multi_output_complex_pair(self):
        rng = np.random.default_rng(12)
        A = rng.standard_normal((4, 4))
        C = rng.standard_normal((2, 4))
        poles = [-2.0 + 1.0j, -2.0 - 1.0j, -3.0, -1.5]
        L = place_observer_gain(A, C, poles)
        got = np.sort_complex(np.linalg.eigvals(A - L @ C))
        assert np.max(np.abs(got - np.sort_complex(np.array(poles)))) < 1e-6

    def test_unobservable_pair_rejected(self):
        A = np.diag([-1.0, -2.0])
        C = np.array([[1.0, 0.0]])  # second state invisible
        with pytest.raises(PlacementError):
            place_observer_gain(A, C, [-3.0, -4.0])

    def test_non_conjugate_poles_rejected(self):
        A = np.diag([-1.0, -2.0])
        C = np.array([[1.0, 1.0]])
        with pytest.raises(PlacementError):
            place_observer_gain(A, C, [-3.0 + 1.0j, -4.0])

    def test_wrong_pole_count_rejected(self):
        with pytest.raises(PlacementError):
            place_observer_gain(np.eye(2), np.array([[1.0, 0.0]]), [-1.0])
