import numpy as np
import pytest

from mfcal import (
    DimensionError,
    MultiFidelityDataSet,
    NumericalSingularityError,
    correlation,
    correlation_matrix,
    emulator_covariance,
    extend_for_prediction,
    field_delta_covariance,
    joint_covariance,
    level_delta_covariance,
)
from mfcal.kernels import emulator_inputs, factorize, level_delta_inputs
from mfcal.params import CalibrationParams

from conftest import random_prior_state, two_level_state


def tiny_two_level(field_x, low, high):
    """Two-level dataset from already-unit inputs; responses are irrelevant."""
    n_f = len(field_x)
    return MultiFidelityDataSet.from_raw(
        field_x=field_x,
        field_y=np.linspace(0.0, 1.0, n_f) if n_f > 1 else [0.0],
        level_runs=[low, high],
    )


class TestCorrelation:
    def test_zero_distance(self):
        assert correlation([0.3, 0.7], [0.3, 0.7], [0.5, 0.9]) == 1.0

    def test_half_unit_distance(self):
        # exponent 4 * 0.25 = 1
        assert correlation([0.0], [0.5], [0.8]) == pytest.approx(0.8, abs=1e-15)

    def test_full_unit_distance(self):
        assert correlation([0.0], [1.0], [0.8]) == pytest.approx(0.4096, abs=1e-15)

    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            u, v = rng.uniform(size=(2, 4))
            rho = rng.uniform(0.05, 0.95, size=4)
            assert correlation(u, v, rho) == correlation(v, u, rho)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            correlation([0.1, 0.2], [0.1], [0.5, 0.5])

    def test_reparameterization_identity(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            u, v = rng.uniform(size=(2, 3))
            rho = rng.uniform(1e-6, 1 - 1e-6, size=3)
            expected = np.exp(-4.0 * np.sum(np.log(1.0 / rho) * (u - v) ** 2))
            assert correlation(u, v, rho) == pytest.approx(expected, abs=1e-12)

    def test_monotone_in_each_distance(self):
        rho = [0.7, 0.4]
        base = correlation([0.2, 0.2], [0.2, 0.2], rho)
        closer = correlation([0.2, 0.2], [0.3, 0.2], rho)
        farther = correlation([0.2, 0.2], [0.5, 0.2], rho)
        assert base > closer > farther

    def test_matrix_matches_pairwise(self):
        rng = np.random.default_rng(2)
        U = rng.uniform(size=(6, 3))
        rho = rng.uniform(0.1, 0.9, size=3)
        R = correlation_matrix(U, rho)
        for i in range(6):
            for j in range(6):
                assert R[i, j] == pytest.approx(correlation(U[i], U[j], rho), abs=1e-12)
        np.testing.assert_array_equal(np.diag(R), 1.0)


class TestAugmentedInputs:
    def setup_method(self):
        self.ds = tiny_two_level(
            field_x=[[0.2, 0.4]],
            low=([[0.15, 0.25]], [[0.35]], [[0.45]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        self.theta = CalibrationParams(
            shared=np.array([0.5]), per_level=(np.array([0.3]), np.array([0.55]))
        )

    def test_field_row_concatenates_thetas(self):
        U = emulator_inputs(self.ds, self.theta)
        np.testing.assert_allclose(U[0], [0.2, 0.4, 0.5, 0.3])

    def test_high_row_substitutes_low_theta_only(self):
        # joint order: field, high, low; t_high never enters the emulator inputs
        U = emulator_inputs(self.ds, self.theta)
        np.testing.assert_allclose(U[1], [0.6, 0.7, 0.9, 0.3])

    def test_low_row_passes_through(self):
        U = emulator_inputs(self.ds, self.theta)
        np.testing.assert_allclose(U[2], [0.15, 0.25, 0.35, 0.45])

    def test_delta_inputs_cover_field_and_high(self):
        U = level_delta_inputs(self.ds, self.theta, 2)
        assert U.shape == (2, 4)
        np.testing.assert_allclose(U[0], [0.2, 0.4, 0.5, 0.55])
        np.testing.assert_allclose(U[1], [0.6, 0.7, 0.9, 0.8])


class TestCovarianceBlocks:
    def test_emulator_diag_is_inverse_precision(self, small_toy):
        ds, _ = small_toy
        state = two_level_state(lam_emulator=2.5)
        S = emulator_covariance(ds, state.theta, state.correlation.emulator, 2.5)
        np.testing.assert_allclose(np.diag(S), 1.0 / 2.5, rtol=1e-15)

    def test_identical_rows_hit_full_covariance(self):
        ds = tiny_two_level(
            field_x=[[0.2, 0.4], [0.2, 0.4]],
            low=([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        state = two_level_state(lam_emulator=4.0)
        S = emulator_covariance(ds, state.theta, state.correlation.emulator, 4.0)
        assert S[0, 1] == pytest.approx(0.25, abs=1e-15)

    def test_distance_one_off_diagonal(self):
        R = correlation_matrix(np.array([[0.0], [1.0]]), np.array([0.8]))
        np.testing.assert_allclose(R[0, 1] / 2.0, 0.2048, atol=1e-12)

    def test_delta_block_identical_after_substitution(self):
        # high run placed exactly at the field row's substituted inputs
        ds = tiny_two_level(
            field_x=[[0.2, 0.4]],
            low=([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
            high=([[0.2, 0.4]], [[0.5]], [[0.55]], [2.0]),
        )
        theta = CalibrationParams(
            shared=np.array([0.5]), per_level=(np.array([0.3]), np.array([0.55]))
        )
        state = two_level_state()
        S = level_delta_covariance(ds, theta, state.correlation.deltas[0], 8.0)
        assert S.shape == (2, 2)
        assert S[0, 1] == pytest.approx(1.0 / 8.0, abs=1e-15)

    def test_empty_high_level_gives_field_only_delta(self):
        ds = MultiFidelityDataSet.from_raw(
            field_x=[[0.2, 0.4], [0.6, 0.1]],
            field_y=[0.0, 1.0],
            level_runs=[
                ([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
                (np.empty((0, 2)), np.empty((0, 1)), np.empty((0, 1)), []),
            ],
        )
        state = two_level_state()
        S = level_delta_covariance(ds, state.theta, state.correlation.deltas[0], 1.0)
        assert S.shape == (2, 2)

    def test_field_delta_example(self):
        ds = tiny_two_level(
            field_x=[[0.0, 0.0], [0.5, 0.5]],
            low=([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        S = field_delta_covariance(ds, np.array([0.9, 0.9]), 1.0)
        assert S[0, 1] == pytest.approx(0.81, abs=1e-12)
        np.testing.assert_allclose(np.diag(S), 1.0, rtol=1e-15)


class TestJointAssembly:
    def test_single_field_row_diagonal_sum(self):
        ds = tiny_two_level(
            field_x=[[0.2, 0.4]],
            low=([[0.9, 0.9]], [[0.9]], [[0.9]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        state = two_level_state(
            lam_emulator=2.0, lam_delta=4.0, lam_field=5.0, lam_noise=10.0
        )
        asm = joint_covariance(ds, state)
        expected = 1 / 2.0 + 1 / 4.0 + 1 / 5.0 + 1 / 10.0
        assert asm.sigma[0, 0] == pytest.approx(expected, abs=1e-15)
        # the factorized matrix carries the jitter on top
        assert asm.jitter == 1e-8

    def test_field_low_entry_is_emulator_only(self, small_toy):
        ds, _ = small_toy
        state = two_level_state(rho=0.4)
        asm = joint_covariance(ds, state)
        R = emulator_covariance(
            ds, state.theta, state.correlation.emulator, state.precision.emulator
        )
        low = ds.block_slices()["level1"]
        np.testing.assert_allclose(
            asm.sigma[: ds.n_field, low], R[: ds.n_field, low], rtol=1e-14
        )

    def test_symmetry(self, small_toy):
        ds, _ = small_toy
        asm = joint_covariance(ds, two_level_state(rho=0.3))
        assert np.abs(asm.sigma - asm.sigma.T).max() < 1e-12

    def test_diagonal_at_least_emulator_variance(self, small_toy):
        ds, _ = small_toy
        state = two_level_state(lam_emulator=0.7)
        asm = joint_covariance(ds, state)
        assert (np.diag(asm.sigma) >= 1.0 / 0.7 - 1e-15).all()

    def test_positive_definite_for_prior_draws(self, paper_toy):
        ds, _ = paper_toy
        rng = np.random.default_rng(99)
        m_own = [lvl.m_own for lvl in ds.levels]
        for _ in range(1000):
            state = random_prior_state(rng, ds.p, ds.m_shared, m_own)
            asm = joint_covariance(ds, state)  # raises on failure
            assert asm.jitter <= 1e-4

    def test_field_precision_reaches_field_rows_only(self, small_toy):
        ds, _ = small_toy
        base = two_level_state(lam_field=5.0)
        bumped = two_level_state(lam_field=5.0 + 1e-3)
        s0 = joint_covariance(ds, base).sigma
        s1 = joint_covariance(ds, bumped).sigma
        diff = s1 - s0
        nf = ds.n_field
        assert np.abs(diff[nf:, :]).max() == 0.0
        assert np.abs(diff[:, nf:]).max() == 0.0
        assert np.abs(diff[:nf, :nf]).max() > 0.0


class TestPredictionExtension:
    def test_no_new_points_matches_training_assembly(self, small_toy):
        ds, _ = small_toy
        state = two_level_state()
        a = joint_covariance(ds, state)
        b = extend_for_prediction(ds, state, np.empty((0, 2)))
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_coincident_point_without_noise(self):
        ds = tiny_two_level(
            field_x=[[0.2, 0.4], [0.7, 0.1]],
            low=([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        state = two_level_state(lam_noise=8.0)
        asm = extend_for_prediction(ds, state, ds.field.x[:1], include_noise=False)
        n = asm.n_train
        new_row = asm.sigma[n, :n]
        field_row = asm.sigma[0, :n].copy()
        field_row[0] -= 1.0 / 8.0  # the training row keeps its noise on the diagonal
        np.testing.assert_allclose(new_row, field_row, atol=1e-14)

    def test_coincident_point_with_noise_matches_diagonal(self):
        ds = tiny_two_level(
            field_x=[[0.2, 0.4], [0.7, 0.1]],
            low=([[0.5, 0.5]], [[0.5]], [[0.5]], [1.0]),
            high=([[0.6, 0.7]], [[0.9]], [[0.8]], [2.0]),
        )
        state = two_level_state()
        asm = extend_for_prediction(ds, state, ds.field.x[:1], include_noise=True)
        assert asm.sigma_22[0, 0] == pytest.approx(asm.sigma[0, 0], abs=1e-12)

    def test_vanishing_correlation_limit(self):
        ds = tiny_two_level(
            field_x=[[0.05, 0.05]],
            low=([[0.1, 0.1]], [[0.1]], [[0.1]], [1.0]),
            high=([[0.1, 0.05]], [[0.05]], [[0.1]], [2.0]),
        )
        state = two_level_state(
            rho=1e-9, lam_emulator=2.0, lam_delta=4.0, lam_field=5.0, lam_noise=10.0
        )
        for noise, extra in ((False, 0.0), (True, 0.1)):
            asm = extend_for_prediction(ds, state, [[0.95, 0.95]], include_noise=noise)
            assert np.abs(asm.sigma_12).max() < 1e-8
            expected = 1 / 2.0 + 1 / 4.0 + 1 / 5.0 + extra
            assert asm.sigma_22[0, 0] == pytest.approx(expected, abs=1e-12)

    def test_block_rows_map(self, small_toy):
        ds, _ = small_toy
        asm = extend_for_prediction(ds, two_level_state(), [[0.5, 0.5], [0.2, 0.9]])
        assert asm.block_rows["new"] == slice(ds.n_total, ds.n_total + 2)
        assert asm.n_new == 2


def three_level_dataset():
    return MultiFidelityDataSet.from_raw(
        field_x=[[0.2, 0.3], [0.8, 0.6]],
        field_y=[0.0, 1.0],
        level_runs=[
            ([[0.1, 0.2], [0.4, 0.9]], [[0.3], [0.7]], [[0.2], [0.6]], [1.0, 2.0]),
            ([[0.5, 0.5]], [[0.4]], [[0.9]], [1.5]),
            ([[0.6, 0.1]], [[0.8]], [[0.3]], [2.5]),
        ],
    )


def three_level_state(lam_delta3=7.0):
    from mfcal.params import (
        CalibrationParams,
        CorrelationParams,
        ParameterState,
        PrecisionParams,
    )

    return ParameterState(
        theta=CalibrationParams(
            shared=np.array([0.5]),
            per_level=(np.array([0.3]), np.array([0.6]), np.array([0.2])),
        ),
        precision=PrecisionParams(
            emulator=2.0, deltas=(4.0, lam_delta3), field_delta=5.0, noise=10.0
        ),
        correlation=CorrelationParams(
            emulator=np.full(4, 0.5),
            deltas=(np.full(4, 0.5), np.full(4, 0.5)),
            field_delta=np.full(2, 0.5),
        ),
    )


class TestMultilevel:
    def test_two_level_general_path_matches_eq8_composition(self, small_toy):
        ds, _ = small_toy
        state = two_level_state(
            rho=0.4, lam_emulator=2.0, lam_delta=4.0, lam_field=5.0, lam_noise=10.0
        )
        asm = joint_covariance(ds, state)
        manual = emulator_covariance(ds, state.theta, state.correlation.emulator, 2.0)
        k = ds.delta_rows(2)
        manual[:k, :k] += level_delta_covariance(
            ds, state.theta, state.correlation.deltas[0], 4.0
        )
        nf = ds.n_field
        manual[:nf, :nf] += field_delta_covariance(
            ds, state.correlation.field_delta, 5.0
        )
        manual[np.arange(nf), np.arange(nf)] += 1.0 / 10.0
        np.testing.assert_array_equal(asm.sigma, manual)

    def test_level1_vs_field_reaches_through_emulator_only(self):
        ds = three_level_dataset()
        state = three_level_state()
        asm = joint_covariance(ds, state)
        R = emulator_covariance(
            ds, state.theta, state.correlation.emulator, state.precision.emulator
        )
        sl = ds.block_slices()["level1"]
        np.testing.assert_allclose(asm.sigma[:2, sl], R[:2, sl], rtol=1e-14)

    def test_huge_top_precision_reduces_to_two_levels(self):
        ds = three_level_dataset()
        tight = joint_covariance(ds, three_level_state(lam_delta3=1e12)).sigma
        state = three_level_state()
        manual = emulator_covariance(ds, state.theta, state.correlation.emulator, 2.0)
        k2 = ds.delta_rows(2)
        manual[:k2, :k2] += level_delta_covariance(
            ds, state.theta, state.correlation.deltas[0], 4.0, level=2
        )
        nf = ds.n_field
        manual[:nf, :nf] += field_delta_covariance(ds, state.correlation.field_delta, 5.0)
        manual[np.arange(nf), np.arange(nf)] += 1.0 / 10.0
        assert np.abs(tight - manual).max() < 1e-8

    def test_delta_level_bounds_checked(self):
        ds = three_level_dataset()
        state = three_level_state()
        with pytest.raises(DimensionError):
            level_delta_inputs(ds, state.theta, 4)


class TestFactorize:
    def test_indefinite_matrix_raises_after_escalation(self):
        with pytest.raises(NumericalSingularityError):
            factorize(np.array([[1.0, 2.0], [2.0, 1.0]]))

    def test_escalation_recovers_slightly_indefinite(self):
        chol, jitter = factorize(np.diag([1.0, -1e-6]))
        assert jitter == pytest.approx(1e-5)
        assert chol.shape == (2, 2)

    def test_clean_matrix_keeps_base_jitter(self):
        _, jitter = factorize(np.eye(3))
        assert jitter == 1e-8
