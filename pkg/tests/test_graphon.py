import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sparsekey.core import CapacityError
from sparsekey.graphon import (
    DiscretePMF,
    InfeasibleError,
    JointPMF,
    SmallGraph,
    StochasticKernel,
    binomial_extension,
    density_distortion,
    hom_count,
    hom_density,
    min_mi_over_couplings,
    mi_difference_identity_check,
    minimize_density_gap,
    mutual_information,
)

EDGE = SmallGraph.parse("0-1")
K3 = SmallGraph.complete(3)
PATH3 = SmallGraph.parse("0-1,1-2")


def brute_hom(f, g):
    """Loop over every vertex map (independent of the einsum contraction)."""
    A = g.adjacency
    count = 0
    for phi in itertools.product(range(g.n_vertices), repeat=f.n_vertices):
        if all(A[phi[u], phi[v]] for u, v in f.edges):
            count += 1
    return count


def random_graph(gen, n, p=0.5):
    A = np.triu(gen.uniform(size=(n, n)) < p, 1)
    return SmallGraph(A | A.T)


def h2(p):
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


class TestSmallGraph:
    def test_rejects_bad_adjacency(self):
        with pytest.raises(ValueError):
            SmallGraph(np.array([[0, 1], [0, 0]]))
        with pytest.raises(ValueError):
            SmallGraph(np.eye(2))
        with pytest.raises(ValueError):
            SmallGraph(np.zeros((11, 11)))

    def test_parse_roundtrip(self):
        g = SmallGraph.parse("0-1,1-2,0-2")
        assert str(g) == "0-1,0-2,1-2"
        assert np.array_equal(g.adjacency, K3.adjacency)


class TestHomDensity:
    def test_examples(self):
        assert hom_density(EDGE, K3) == pytest.approx(2 / 3)
        assert hom_density(EDGE, EDGE) == pytest.approx(1 / 2)
        assert hom_density(K3, K3) == pytest.approx(2 / 9)
        assert brute_hom(EDGE, K3) == 6 and brute_hom(K3, K3) == 6

    def test_single_vertex(self, gen):
        v = SmallGraph(np.zeros((1, 1)))
        for n in range(1, 8):
            assert hom_density(v, random_graph(gen, n)) == 1.0

    @pytest.mark.parametrize("k", range(2, 7))
    def test_edge_in_complete(self, k):
        Kk = SmallGraph.complete(k)
        assert brute_hom(EDGE, Kk) / k**2 == pytest.approx((k - 1) / k)
        assert hom_density(EDGE, Kk) == pytest.approx((k - 1) / k)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_brute_force(self, seed):
        gen = np.random.default_rng(seed)
        f = random_graph(gen, int(gen.integers(1, 5)))
        g = random_graph(gen, int(gen.integers(1, 6)))
        assert hom_count(f, g) == brute_hom(f, g)

    def test_isomorphism_invariance(self):
        gen = np.random.default_rng(2)
        for _ in range(200):
            f = random_graph(gen, int(gen.integers(1, 5)))
            g = random_graph(gen, int(gen.integers(1, 7)))
            f2 = f.relabel(gen.permutation(f.n_vertices))
            g2 = g.relabel(gen.permutation(g.n_vertices))
            assert hom_count(f, g) == hom_count(f2, g2)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            hom_density(SmallGraph.complete(9), K3)


class TestDensityGap:
    def test_examples(self):
        assert density_distortion(EDGE, EDGE, K3) == 0.0
        assert density_distortion(EDGE, K3, K3) == pytest.approx((2 / 3 - 2 / 9) ** 2)
        assert (2 / 3 - 2 / 9) ** 2 == pytest.approx(16 / 81)

    def test_isomorphic_pairs_zero(self):
        gen = np.random.default_rng(3)
        for _ in range(100):
            f = random_graph(gen, int(gen.integers(1, 6)))
            g = random_graph(gen, int(gen.integers(2, 7)))
            assert density_distortion(f, f.relabel(gen.permutation(f.n_vertices)), g) == 0.0

    def test_argmin_and_ties(self):
        host = SmallGraph.parse("0-1,1-2,2-3,3-0,0-2")
        pairs = [(EDGE, K3), (EDGE, PATH3), (PATH3, K3)]
        gaps = [
            (brute_hom(a, host) / 4 ** a.n_vertices - brute_hom(b, host) / 4 ** b.n_vertices) ** 2
            for a, b in pairs
        ]
        res = minimize_density_gap(pairs, host, 1e-3)
        assert res.index == int(np.argmin(gaps))
        assert res.gaps == pytest.approx(gaps)
        assert res.within_tolerance == (min(gaps) <= 1e-3)

    def test_isomorphic_pair_wins(self):
        pairs = [(EDGE, K3), (PATH3, SmallGraph.parse("0-2,2-1")), (PATH3, PATH3)]
        res = minimize_density_gap(pairs, K3, 0.0)
        assert res.index == 1 and res.gap == 0.0 and res.within_tolerance

    def test_single_and_empty(self):
        assert minimize_density_gap([(EDGE, K3)], K3, 1.0).index == 0
        with pytest.raises(ValueError):
            minimize_density_gap([], K3, 1.0)


class TestBinomialExtension:
    V = StochasticKernel([[0.7, 0.3], [0.4, 0.6]])

    def test_order_one(self):
        assert np.array_equal(binomial_extension(self.V, 1).matrix, self.V.matrix)

    def test_product_entry(self):
        ext = binomial_extension(self.V, 2).matrix
        assert ext[0, 1] == pytest.approx(0.7 * 0.3)
        assert ext.shape == (2, 4)

    def test_deterministic_kernel(self):
        V = StochasticKernel([[0, 1, 0], [0, 0, 1]])
        ext = binomial_extension(V, 3).matrix
        # a0 -> (1,1,1), a1 -> (2,2,2) in base-3 column order
        assert ext[0].tolist().index(1.0) == 1 * 9 + 1 * 3 + 1
        assert ext[1].tolist().index(1.0) == 2 * 9 + 2 * 3 + 2

    @given(st.integers(0, 2**32 - 1), st.integers(1, 4))
    def test_rows_sum_to_one(self, seed, d):
        gen = np.random.default_rng(seed)
        K = gen.dirichlet(np.ones(3), size=4)
        K /= K.sum(axis=1, keepdims=True)
        ext = binomial_extension(StochasticKernel(K), d)
        assert np.allclose(ext.matrix.sum(axis=1), 1.0, atol=1e-12)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            binomial_extension(StochasticKernel(np.full((1, 4), 0.25)), 11)


class TestMutualInformation:
    def test_examples(self):
        assert mutual_information(np.outer([0.3, 0.7], [0.5, 0.5])) == pytest.approx(0.0, abs=1e-15)
        assert mutual_information([[0.5, 0.0], [0.0, 0.5]]) == pytest.approx(1.0)
        # closed form: 1 - h(0.2) for a symmetric channel with uniform input
        assert mutual_information([[0.4, 0.1], [0.1, 0.4]]) == pytest.approx(1 - h2(0.2))
        assert mutual_information([[0.4, 0.1], [0.1, 0.4]]) == pytest.approx(0.2781, abs=1e-4)

    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_and_zero_iff_product(self, seed):
        gen = np.random.default_rng(seed)
        t = gen.dirichlet(np.ones(9)).reshape(3, 3)
        assert mutual_information(t) >= 0.0
        prod = np.outer(t.sum(1), t.sum(0))
        assert mutual_information(prod) <= 1e-12
        if np.abs(t - prod).max() > 1e-3:
            assert mutual_information(t) > 0

    def test_pmf_validation(self):
        with pytest.raises(ValueError):
            DiscretePMF([0.5, 0.6])
        with pytest.raises(ValueError):
            JointPMF([[0.5, 0.6]])
        with pytest.raises(ValueError):
            StochasticKernel([[0.5, 0.4]])
        assert DiscretePMF([0.25] * 4).support.tolist() == [1, 2, 3, 4]


def agreement(j):
    return np.trace(j.table) >= 0.9 - 1e-12


class TestMinMI:
    def test_unconstrained_is_product(self):
        joint, mi = min_mi_over_couplings(DiscretePMF([0.3, 0.7]), 3, lambda j: True, 10)
        assert mi == pytest.approx(0.0, abs=1e-12)

    def test_copy_gives_entropy(self):
        px = [0.2, 0.3, 0.5]
        copy = lambda j: np.isclose(np.trace(j.table), 1.0)
        _, mi = min_mi_over_couplings(px, 3, copy, 3)
        assert mi == pytest.approx(-sum(p * math.log2(p) for p in px))

    def test_agreement_matches_fine_grid(self):
        _, mi = min_mi_over_couplings([0.5, 0.5], 2, agreement, 50)
        # independent oracle: vectorised scan over a 400-step grid of the two conditionals
        a = np.linspace(0, 1, 401)
        q0, q1 = np.meshgrid(a, a, indexing="ij")  # q0 = P(Y=0|X=0), q1 = P(Y=1|X=1)
        ok = 0.5 * (q0 + q1) >= 0.9 - 1e-12

        def hb(q):
            q = np.clip(q, 1e-300, 1.0)
            r = np.clip(1.0 - q, 1e-300, 1.0)
            return -q * np.log2(q) - r * np.log2(r)

        # I(X;Y) = H(Y) - H(Y|X)
        mi_grid = hb(0.5 * (q0 + 1 - q1)) - 0.5 * hb(q0) - 0.5 * hb(q1)
        oracle = mi_grid[ok].min()
        assert mi == pytest.approx(oracle, abs=0.01)
        assert oracle == pytest.approx(1 - h2(0.1), abs=1e-3)

    def test_finer_grid_agrees(self):
        _, coarse = min_mi_over_couplings([0.5, 0.5], 2, agreement, 50)
        _, fine = min_mi_over_couplings([0.5, 0.5], 2, agreement, 200)
        assert coarse == pytest.approx(fine, abs=0.01)

    def test_infeasible(self):
        with pytest.raises(InfeasibleError):
            min_mi_over_couplings([0.5, 0.5], 2, lambda j: False, 5)

    def test_capacity(self):
        with pytest.raises(CapacityError):
            min_mi_over_couplings([0.2] * 5, 2, lambda j: True, 5)
        with pytest.raises(CapacityError):
            min_mi_over_couplings([0.5, 0.5], 2, lambda j: True, 0)


class TestIdentityAudit:
    def test_copy_and_independent(self):
        t = np.zeros((2, 2, 2))
        t[0, 0, 0] = t[1, 1, 1] = 0.25
        t[0, 1, 1] = t[1, 0, 0] = 0.25
        audit = mi_difference_identity_check(t)
        assert audit.lhs == pytest.approx(0.0, abs=1e-12)
        assert audit.rhs == pytest.approx(0.0, abs=1e-12)
        indep = np.einsum("i,jk->ijk", [0.3, 0.7], np.full((3, 3), 1 / 9))
        audit = mi_difference_identity_check(indep)
        assert abs(audit.lhs) < 1e-12 and abs(audit.rhs) < 1e-12

    @given(st.integers(0, 2**32 - 1))
    def test_random_joint_identity(self, seed):
        gen = np.random.default_rng(seed)
        t = gen.dirichlet(np.ones(27)).reshape(3, 3, 3)
        audit = mi_difference_identity_check(JointPMF(t / t.sum()))
        assert audit.defect < 1e-12

    def test_capacity(self):
        with pytest.raises(CapacityError):
            mi_difference_identity_check(np.full((4, 2, 2), 1 / 16))
