import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import eigh, expm, logm

from sparsekey.core import RandomSource
from sparsekey.spd import (
    DegenerateFrameError,
    DomainError,
    InconsistencyError,
    PoseDecomposition,
    SPDMatrix,
    decompose,
    graph_spd,
    invsqrtm_spd,
    pose_with_brownian,
    relaxability_check,
    riemannian_exp,
    riemannian_log,
    tangent_project,
    wrap_angle,
)


def random_spd(gen, n):
    A = gen.standard_normal((n, n))
    return A @ A.T + n * 0.1 * np.eye(n)


def rotation(angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


class TestSPDMatrix:
    def test_rejects_non_spd(self):
        with pytest.raises(DomainError):
            SPDMatrix([[1.0, 2.0], [0.0, 1.0]])
        with pytest.raises(DomainError):
            SPDMatrix([[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(DomainError):
            SPDMatrix(np.eye(17))

    def test_log_rejects_non_spd(self):
        with pytest.raises(DomainError):
            riemannian_log(np.eye(2), -np.eye(2))


class TestLogMap:
    def test_identity(self):
        assert np.array_equal(riemannian_log(np.eye(3), np.eye(3)), np.zeros((3, 3)))

    def test_diagonal(self):
        out = riemannian_log(np.eye(2), np.diag([math.e, math.e**2]))
        assert np.allclose(out, np.diag([1.0, 2.0]), atol=1e-12)

    def test_log_at_base_is_zero(self):
        gen = np.random.default_rng(0)
        for _ in range(100):
            B = random_spd(gen, int(gen.integers(1, 7)))
            assert np.abs(riemannian_log(B, B)).max() <= 1e-12 * max(1.0, np.abs(B).max())

    def test_round_trip(self):
        gen = np.random.default_rng(1)
        for _ in range(100):
            n = int(gen.integers(1, 7))
            B, P = random_spd(gen, n), random_spd(gen, n)
            back = riemannian_exp(B, riemannian_log(B, P))
            assert np.linalg.norm(back - P) < 1e-8

    def test_matches_scipy_formula(self, gen):
        # independent evaluation with scipy's general-purpose matrix functions
        B, P = random_spd(gen, 4), random_spd(gen, 4)
        w, V = np.linalg.eigh(B)
        root = V @ np.diag(np.sqrt(w)) @ V.T
        iroot = np.linalg.inv(root)
        oracle = root @ np.real(logm(iroot @ P @ iroot)) @ root
        assert np.allclose(riemannian_log(B, P), oracle, atol=1e-9)
        assert np.allclose(riemannian_exp(B, oracle), root @ expm(iroot @ oracle @ iroot) @ root, atol=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_congruence_equivariance(self, seed):
        gen = np.random.default_rng(seed)
        B, P = random_spd(gen, 3), random_spd(gen, 3)
        ir = invsqrtm_spd(B)
        lhs = ir @ riemannian_log(B, P) @ ir
        W = ir @ P @ ir
        w, V = eigh(0.5 * (W + W.T), driver="evr")
        rhs = (V * np.log(w)) @ V.T
        assert np.linalg.norm(lhs - rhs) < 1e-8

    def test_output_symmetric(self, gen):
        B, P = random_spd(gen, 5), random_spd(gen, 5)
        T = riemannian_log(B, P)
        assert np.array_equal(T, T.T)


class TestTangentProject:
    def test_examples(self, gen):
        S = random_spd(gen, 3)
        assert np.allclose(tangent_project(S), S)
        A = gen.standard_normal((3, 3))
        assert np.allclose(tangent_project(A - A.T), 0.0)

    @given(st.integers(0, 2**32 - 1))
    def test_idempotent(self, seed):
        G = np.random.default_rng(seed).standard_normal((4, 4))
        P = tangent_project(G)
        assert np.array_equal(tangent_project(P), P)

    def test_size_mismatch(self):
        with pytest.raises(DomainError):
            tangent_project(np.zeros((2, 2)), np.eye(3))


class TestDecompose:
    def test_identity(self):
        with pytest.raises(DegenerateFrameError) as err:
            decompose(np.eye(3))
        assert np.array_equal(err.value.translation, np.zeros(3))
        one = decompose(np.eye(1))
        assert one.translation.tolist() == [0.0] and one.rotation.size == 0

    def test_diagonal(self):
        pose = decompose(np.diag([4.0, 1.0]))
        assert pose.translation == pytest.approx([math.log(4), 0.0])
        assert pose.rotation == pytest.approx([0.0], abs=1e-12)

    def test_rotated_diagonal(self):
        R = rotation(math.pi / 6)
        pose = decompose(R @ np.diag([4.0, 1.0]) @ R.T)
        assert pose.rotation[0] == pytest.approx(math.pi / 6, abs=1e-9)

    @given(st.floats(-1.5, 1.5))
    def test_recovers_planar_angle(self, angle):
        # eigenvectors fix the frame only up to pi; the sign rule picks (-pi/4, 3pi/4]
        R = rotation(angle)
        pose = decompose(R @ np.diag([3.0, 1.0]) @ R.T)
        expected = angle if angle > -math.pi / 4 else angle + math.pi
        assert pose.rotation[0] == pytest.approx(expected, abs=1e-9)

    def test_reconstruct(self, gen):
        S = random_spd(gen, 4)
        pose = decompose(S)
        assert np.allclose(np.exp(pose.translation), np.sort(np.linalg.eigvalsh(S))[::-1])
        assert pose.rotation.shape == (6,)
        assert np.all(pose.rotation > -math.pi) and np.all(pose.rotation <= math.pi)

    def test_graph_spd(self):
        from sparsekey.graphon import SmallGraph

        L = SmallGraph.parse("0-1,1-2").laplacian()
        S = graph_spd(L, 0.1)
        assert np.allclose(S.values, L + 0.1 * np.eye(3))


class TestBrownianPose:
    mean = PoseDecomposition(np.array([1.0, 0.5]), np.array([math.pi - 0.01]))

    def test_zero_scale(self):
        out = pose_with_brownian(self.mean, (0.0, 0.0), RandomSource(0))
        assert np.array_equal(out.translation, self.mean.translation)
        assert np.array_equal(out.rotation, self.mean.rotation)

    def test_wrap(self):
        out = pose_with_brownian(self.mean, (0.0, 0.0), RandomSource(0), offset=(0.0, 0.02))
        assert out.rotation[0] == pytest.approx(-math.pi + 0.01, abs=1e-12)

    def test_wrap_angle_range(self):
        assert wrap_angle(math.pi) == math.pi
        assert wrap_angle(-math.pi) == math.pi
        assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)

    def test_translation_std(self):
        rng = RandomSource(4)
        mean = PoseDecomposition(np.zeros(10), np.zeros(1))
        draws = np.concatenate([pose_with_brownian(mean, (0.4, 0.1), rng).translation for _ in range(10_000)])
        assert draws.size == 100_000
        assert draws.std() == pytest.approx(0.4, rel=0.03)


def square_distortion(a, b):
    return np.mean((np.asarray(a) - np.asarray(b)) ** 2)


class TestRelaxability:
    pairs_T = [(np.array([1.0, 2.0]), np.array([0.0, 1.0])), (np.array([3.0]), np.array([5.0]))]
    pairs_R = [(np.array([0.1]), np.array([0.4])), (np.array([0.2, 0.0]), np.array([-0.1, 0.3]))]

    def test_identity(self):
        assert relaxability_check(self.pairs_T, self.pairs_R, lambda x: x) == pytest.approx((1.0, 1.0))

    @pytest.mark.parametrize("c", [0.5, 2.0, -3.0])
    def test_scaling(self, c):
        eta = relaxability_check(self.pairs_T, self.pairs_R, lambda x: c * np.asarray(x))
        assert eta == pytest.approx((c * c, c * c))

    def test_square_counterexample(self):
        # ratio of squared gaps under x -> x^2 is (a + b)^2
        pairs = [(np.array([0.0]), np.array([2.0])), (np.array([1.0]), np.array([3.0]))]
        ratios = [square_distortion(a**2, b**2) / square_distortion(a, b) for a, b in pairs]
        assert ratios == [4.0, 16.0]
        assert relaxability_check(pairs, pairs, lambda x: np.asarray(x) ** 2) is None

    def test_orthogonal_affine(self, gen):
        Q, _ = np.linalg.qr(gen.standard_normal((3, 3)))
        b = gen.standard_normal(3)
        pairs = [(gen.standard_normal(3), gen.standard_normal(3)) for _ in range(5)]
        eta = relaxability_check(pairs, pairs, lambda x: Q @ x + b)
        assert eta == pytest.approx((1.0, 1.0))

    def test_generic_nonlinear(self, gen):
        pairs = [(gen.standard_normal(3), gen.standard_normal(3)) for _ in range(5)]
        assert relaxability_check(pairs, pairs, np.tanh) is None

    def test_inconsistency(self):
        # a stateful map can send equal inputs to different outputs
        calls = iter(range(100))
        pairs = [(np.array([1.0]), np.array([1.0])), (np.array([0.0]), np.array([1.0]))]
        with pytest.raises(InconsistencyError):
            relaxability_check(pairs, pairs, lambda x: x + next(calls))

    def test_too_few_pairs(self):
        with pytest.raises(ValueError):
            relaxability_check(self.pairs_T[:1], self.pairs_R, lambda x: x)
