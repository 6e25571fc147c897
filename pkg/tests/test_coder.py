import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsekey.coder import (
    PerturbationModel,
    alternate,
    dictionary_update,
    expected_distortion,
    initial_iterate,
    lowpass_side_info,
    perturb_code,
    perturbation_distortion_mean,
    planted_instance,
    reconstruction_error,
    solve_p1,
    sparse_encode,
)
from sparsekey.core import (
    BudgetError,
    DataError,
    Dictionary,
    RandomSource,
    SparseCode,
    Thresholds,
    column_support_counts,
)


def random_dictionary(gen, n, m):
    return Dictionary.from_matrix(gen.standard_normal((n, m)))


def brute_force_best(D, x, k):
    """Smallest least-squares residual over every support of size k (oracle)."""
    best = (np.inf, None)
    for sup in itertools.combinations(range(D.shape[1]), k):
        sub = D[:, sup]
        coef = np.linalg.lstsq(sub, x, rcond=None)[0]
        r = np.linalg.norm(x - sub @ coef)
        if r < best[0] - 1e-12:
            best = (r, (sup, coef))
    return best


class TestSparseEncode:
    def test_orthonormal_exact_recovery(self, gen):
        Q, _ = np.linalg.qr(gen.standard_normal((6, 6)))
        D = Dictionary(Q, 6)
        c = np.zeros((6, 5))
        for j in range(5):
            c[gen.choice(6, 2, replace=False), j] = gen.uniform(1, 2, 2)
        code = sparse_encode(D, Q @ c, 2)
        assert np.abs(code.coefficients - c).max() < 1e-9
        assert np.linalg.norm(Q @ c - Q @ code.coefficients) < 1e-9

    @pytest.mark.parametrize("seed", range(20))
    def test_single_atom_matches_brute_force(self, seed):
        gen = np.random.default_rng(seed)
        D = random_dictionary(gen, 2, 3)
        x = gen.standard_normal((2, 1))
        code = sparse_encode(D, x, 1)
        r_best, (sup, coef) = brute_force_best(D.atoms, x[:, 0], 1)
        got = np.linalg.norm(x[:, 0] - D.atoms @ code.coefficients[:, 0])
        assert got == pytest.approx(r_best, abs=1e-12)
        assert np.flatnonzero(code.coefficients[:, 0]).tolist() == list(sup)

    def test_full_budget_equals_least_squares(self, gen):
        D = random_dictionary(gen, 5, 4)
        x = gen.standard_normal((5, 7))
        code = sparse_encode(D, x, 4)
        lsq = np.linalg.lstsq(D.atoms, x, rcond=None)[0]
        expected = np.linalg.norm(x - D.atoms @ lsq, axis=0)
        got = np.linalg.norm(x - D.atoms @ code.coefficients, axis=0)
        assert np.allclose(got, expected, atol=1e-10)

    def test_budget_errors(self, gen):
        D = random_dictionary(gen, 3, 4)
        with pytest.raises(BudgetError):
            sparse_encode(D, np.ones((3, 2)), 5)
        with pytest.raises(BudgetError):
            sparse_encode(D, np.ones((3, 2)), 0)

    def test_nonfinite_data(self, gen):
        D = random_dictionary(gen, 3, 4)
        with pytest.raises(DataError):
            sparse_encode(D, np.array([[np.inf], [0.0], [0.0]]), 1)

    def test_ties_go_to_lowest_index(self):
        e = np.array([1.0, 0.0])
        D = Dictionary(np.column_stack([e, e, [0.0, 1.0]]), 3)
        code = sparse_encode(D, np.array([[2.0], [0.0]]), 1)
        assert code.coefficients[:, 0].tolist() == [2.0, 0.0, 0.0]

    def test_batch_equals_columnwise(self, gen):
        D = random_dictionary(gen, 6, 10)
        x = gen.standard_normal((6, 25))
        batch = sparse_encode(D, x, 3).coefficients
        single = np.column_stack([sparse_encode(D, x[:, [j]], 3).coefficients[:, 0] for j in range(25)])
        assert np.array_equal(batch != 0, single != 0)
        assert np.allclose(batch, single, rtol=0, atol=1e-12)

    @given(st.integers(0, 2**32 - 1), st.integers(1, 6))
    def test_residual_trail_non_increasing(self, seed, k):
        gen = np.random.default_rng(seed)
        D = random_dictionary(gen, 5, 8)
        x = gen.standard_normal((5, 4))
        code, trail = sparse_encode(D, x, k, return_residuals=True)
        assert trail.shape == (k + 1, 4)
        assert np.all(np.diff(trail, axis=0) <= 1e-12)
        assert np.allclose(trail[-1], np.linalg.norm(x - D.atoms @ code.coefficients, axis=0))

    def test_budget_on_1000_random_calls(self):
        gen = np.random.default_rng(1)
        for _ in range(1000):
            n, m = gen.integers(1, 6), gen.integers(1, 8)
            k = int(gen.integers(1, m + 1))
            D = random_dictionary(gen, n, m)
            code = sparse_encode(D, gen.standard_normal((n, 3)), k)
            assert column_support_counts(code).max() <= k


class TestPerturbation:
    def test_zero_scale_is_identity(self, gen):
        code = SparseCode(np.diag([1.0, -2.0, 3.0]), 1)
        assert perturb_code(code, PerturbationModel(0.0), RandomSource(0)) is code

    def test_support_preserved(self):
        gen = np.random.default_rng(3)
        rng = RandomSource(3)
        for _ in range(100):
            C = np.where(gen.uniform(size=(4, 6)) < 0.3, gen.standard_normal((4, 6)), 0.0)
            code = SparseCode(C, 4)
            out = perturb_code(code, PerturbationModel(0.5), rng)
            assert np.array_equal(out.support, code.support)

    def test_variance_and_mean(self):
        code = SparseCode(np.vstack([np.ones((1, 1000)), np.zeros((3, 1000))]), 1)
        rng = RandomSource(11)
        s = 0.7
        noise = np.concatenate(
            [perturb_code(code, PerturbationModel(s), rng).coefficients[0] - 1.0 for _ in range(100)]
        )
        assert noise.size == 100_000
        assert np.var(noise) == pytest.approx(s**2, rel=0.03)
        assert abs(noise.mean()) < 4 * noise.std() / np.sqrt(noise.size)

    def test_expected_distortion_zero(self):
        code = SparseCode(np.eye(3), 1)
        assert expected_distortion(code, PerturbationModel(0.0), 10).mean == 0.0

    def test_expected_distortion_closed_form(self):
        code = SparseCode(np.eye(4)[:, :3], 1)  # 3 of 12 entries supported
        model = PerturbationModel(0.5)
        closed = 3 / 12 * 0.25
        assert perturbation_distortion_mean(code, model) == pytest.approx(closed)
        est = expected_distortion(code, model, 100_000, RandomSource(4))
        assert est.mean == pytest.approx(closed, rel=0.05)
        assert est.stderr > 0 and est.n_samples == 100_000

    def test_doubling_scale_quadruples(self):
        code = SparseCode(np.eye(4), 1)
        a = expected_distortion(code, PerturbationModel(0.3), 20_000, RandomSource(5)).mean
        b = expected_distortion(code, PerturbationModel(0.6), 20_000, RandomSource(6)).mean
        assert b / a == pytest.approx(4.0, rel=0.10)


class TestDictionaryUpdate:
    def test_zero_code_unchanged(self, gen):
        D = random_dictionary(gen, 4, 5)
        out = dictionary_update(D, gen.standard_normal((4, 6)), SparseCode(np.zeros((5, 6)), 1), 0.1)
        assert out is D

    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 10.0))
    def test_objective_never_increases(self, seed, step):
        gen = np.random.default_rng(seed)
        D = random_dictionary(gen, 4, 6)
        x = gen.standard_normal((4, 9))
        code = sparse_encode(D, x, 2)
        new = dictionary_update(D, x, code, step)
        before = reconstruction_error(D.atoms, x, code.coefficients)
        after = reconstruction_error(new.atoms, x, code.coefficients)
        assert after <= before + 1e-12
        assert np.allclose(np.linalg.norm(new.atoms, axis=0), 1.0)

    def test_single_atom_fixed_point(self):
        x = np.array([[3.0], [4.0], [0.0]])
        target = x[:, 0] / 5.0
        D = Dictionary.from_matrix(np.array([[1.0], [0.2], [0.5]]))
        for _ in range(200):
            code = sparse_encode(D, x, 1)
            c = code.coefficients[0, 0]
            D = dictionary_update(D, x, code, 1.0 / (2 * c * c))
            if np.linalg.norm(D.atoms[:, 0] - target) < 1e-6:
                break
        assert np.linalg.norm(D.atoms[:, 0] - target) < 1e-6


class TestSolveP1:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_planted_recovery(self, seed):
        x, _, _ = planted_instance(8, 12, 2, 200, RandomSource(seed))
        th = Thresholds().replace(lambda0=12, lambda1=2)
        sol = solve_p1(x, th, PerturbationModel(), 300, RandomSource(seed + 100), restarts=6)
        assert sol.objective_history[-1] < 1e-6
        assert column_support_counts(sol.code).max() <= 2
        assert sol.dictionary.m <= 12

    def test_history_non_increasing(self, gen):
        x = gen.standard_normal((6, 40))
        sol = solve_p1(x, Thresholds().replace(lambda0=8, lambda1=2), PerturbationModel(0.1), 50, RandomSource(2))
        h = np.asarray(sol.objective_history)
        assert np.all(np.diff(h) <= 1e-9)

    def test_full_budget_exact_fit(self, gen):
        x = gen.standard_normal((4, 30))
        sol = solve_p1(x, Thresholds().replace(lambda0=5, lambda1=5), PerturbationModel(), 20, RandomSource(0))
        assert sol.objective_history[-1] < 1e-20

    def test_deterministic(self, gen):
        x = gen.standard_normal((5, 30))
        th = Thresholds().replace(lambda0=7, lambda1=2)
        a = solve_p1(x, th, PerturbationModel(0.2), 30, RandomSource(9))
        b = solve_p1(x, th, PerturbationModel(0.2), 30, RandomSource(9))
        assert np.array_equal(a.dictionary.atoms, b.dictionary.atoms)
        assert np.array_equal(a.code.coefficients, b.code.coefficients)
        assert a.objective_history == b.objective_history
        assert a.expected_distortion == b.expected_distortion

    def test_alternate_records_accept_monotone(self, gen):
        x = gen.standard_normal((5, 30))
        D0, C0 = initial_iterate(x, Thresholds().replace(lambda0=6, lambda1=2), RandomSource(1))
        res = alternate(x, D0, C0, PerturbationModel(), 40)
        assert all(r.objective <= r.previous + 1e-12 for r in res.records)


def test_lowpass_side_info_shape(gen):
    D = random_dictionary(gen, 6, 9)
    x = gen.standard_normal((6, 11))
    side = lowpass_side_info(x, D, 2)
    side.check_against(sparse_encode(D, x, 2))
    assert column_support_counts(side.values).max() <= 2


def test_planted_instance_is_exact():
    x, D, C = planted_instance(8, 12, 2, 50, RandomSource(0))
    assert np.allclose(x.values, D.atoms @ C.coefficients)
    assert np.all(column_support_counts(C) == 2)
    nz = np.abs(C.coefficients[C.support])
    assert nz.min() >= 1.0 and nz.max() < 2.0
