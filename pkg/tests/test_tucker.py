import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowrank_dg.errors import InvalidRank, ShapeError
from lowrank_dg.network import TrainConfig, build_mlp, train
from lowrank_dg.tucker import (
    TuckerFactors,
    hosvd,
    init_from_stack,
    param_count_full,
    param_count_tucker,
    reconstruct,
    relative_error,
    select_ranks,
    stack_domains,
)


def expand_by_loops(core, factors):
    """Direct sum over every core entry and every output index."""
    out = np.zeros([u.shape[0] for u in factors])
    for out_idx in itertools.product(*[range(u.shape[0]) for u in factors]):
        total = 0.0
        for k in itertools.product(*map(range, core.shape)):
            term = core[k]
            for m, u in enumerate(factors):
                term *= u[out_idx[m], k[m]]
            total += term
        out[out_idx] = total
    return out


def random_shape(rng, order):
    return tuple(int(d) for d in rng.integers(1, 9, size=order))


class TestReconstruct:
    def test_rank_one_outer_product(self):
        a, b, c = np.array([1.0, 2.0]), np.array([0.0, 1.0, -1.0]), np.array([3.0])
        f = TuckerFactors(np.ones((1, 1, 1)), [a[:, None], b[:, None], c[:, None]])
        np.testing.assert_array_equal(reconstruct(f), np.einsum("i,j,k->ijk", a, b, c))

    def test_identity_factors(self, rng):
        core = rng.standard_normal((2, 3, 4))
        f = TuckerFactors(core, [np.eye(2), np.eye(3), np.eye(4)])
        np.testing.assert_array_equal(reconstruct(f), core)

    def test_loop_oracle(self, rng):
        core = rng.standard_normal((2, 3, 2))
        factors = [rng.standard_normal((3, 2)), rng.standard_normal((4, 3)), rng.standard_normal((2, 2))]
        np.testing.assert_allclose(reconstruct(TuckerFactors(core, factors)),
                                   expand_by_loops(core, factors), rtol=1e-12)

    def test_factor_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            TuckerFactors(np.ones((2, 2)), [np.ones((3, 2)), np.ones((3, 3))])
        with pytest.raises(ShapeError):
            TuckerFactors(np.ones((2, 2)), [np.ones((3, 2))])


class TestHosvd:
    def test_full_rank_is_exact(self, rng):
        t = rng.standard_normal((4, 3, 5))
        f = hosvd(t, t.shape)
        assert relative_error(t, reconstruct(f)) <= 1e-9

    def test_rank_one_tensor(self, rng):
        a, b, c = rng.standard_normal(4), rng.standard_normal(3), rng.standard_normal(2)
        t = np.einsum("i,j,k->ijk", a, b, c)
        assert relative_error(t, reconstruct(hosvd(t, (1, 1, 1)))) <= 1e-9

    def test_error_identity_for_orthonormal_factors(self, rng):
        t = rng.standard_normal((4, 4, 3))
        f = hosvd(t, (2, 2, 2))
        measured = np.linalg.norm(t - reconstruct(f)) / np.linalg.norm(t)
        from_core = np.sqrt(1 - np.linalg.norm(f.core) ** 2 / np.linalg.norm(t) ** 2)
        assert abs(measured - from_core) <= 1e-9

    def test_factors_are_leading_singular_vectors(self, rng):
        t = rng.standard_normal((5, 4, 3))
        f = hosvd(t, (3, 2, 2))
        for m, u in enumerate(f.factors):
            np.testing.assert_allclose(u.T @ u, np.eye(u.shape[1]), atol=1e-10)
            unf = np.moveaxis(t, m, 0).reshape(t.shape[m], -1)
            lapack_u = np.linalg.svd(unf)[0][:, : u.shape[1]]
            # same subspace: projection onto lapack basis preserves u
            np.testing.assert_allclose(lapack_u @ (lapack_u.T @ u), u, atol=1e-9)

    def test_core_norm_bounded(self, rng):
        t = rng.standard_normal((3, 4, 5))
        assert np.linalg.norm(hosvd(t, (2, 2, 2)).core) <= np.linalg.norm(t) + 1e-10

    @pytest.mark.parametrize("ranks", [(0, 1, 1), (3, 1, 1), (1, 1)])
    def test_rank_out_of_range(self, ranks, rng):
        with pytest.raises(InvalidRank):
            hosvd(rng.standard_normal((2, 2, 2)), ranks)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(3, 4))
    def test_error_non_increasing_in_each_rank(self, seed, order):
        rng = np.random.default_rng(seed)
        t = rng.standard_normal(random_shape(rng, order))
        ranks = [int(rng.integers(1, d + 1)) for d in t.shape]
        m = int(rng.integers(order))
        if ranks[m] == t.shape[m]:
            ranks[m] -= 1 if ranks[m] > 1 else 0
        base = relative_error(t, reconstruct(hosvd(t, ranks)))
        grown = list(ranks)
        grown[m] = min(grown[m] + 1, t.shape[m])
        assert relative_error(t, reconstruct(hosvd(t, grown))) <= base + 1e-12


class TestSelectRanks:
    def test_iid_tensor_needs_full_rank_at_tiny_budget(self, rng):
        t = rng.standard_normal((4, 3, 5))
        sel = select_ranks(t, 1e-6)
        assert sel.ranks == t.shape
        assert sel.achieved_error <= 1e-6
        smaller = [list(t.shape) for _ in range(3)]
        for m in range(3):
            smaller[m][m] -= 1
            assert relative_error(t, reconstruct(hosvd(t, smaller[m]))) > 1e-6

    def test_rank_one_tensor(self, rng):
        t = np.einsum("i,j,k->ijk", *(rng.standard_normal(d) for d in (4, 3, 5)))
        assert select_ranks(t, 0.1).ranks == (1, 1, 1)

    def test_near_identical_slices_plus_mean(self, rng):
        base = rng.standard_normal((6, 4))
        slices = [base + 1e-4 * rng.standard_normal(base.shape) for _ in range(3)]
        stacked = stack_domains(slices, np.mean(slices, axis=0))
        sel = select_ranks(stacked, 0.1)
        assert sel.ranks[-1] == 1
        assert relative_error(stacked, reconstruct(hosvd(stacked, sel.ranks))) <= 0.1

    def test_reported_error_is_measured(self, rng):
        t = rng.standard_normal((5, 5, 4))
        sel = select_ranks(t, 0.3)
        assert sel.achieved_error == pytest.approx(relative_error(t, reconstruct(hosvd(t, sel.ranks))))
        assert sel.budget == 0.3

    def test_tied_spectrum_rounds_up(self):
        # Identity unfoldings have flat spectra: any truncation is a tie.
        t = np.zeros((2, 2, 2))
        t[0, 0, 0] = t[1, 1, 1] = 1.0
        assert select_ranks(t, 0.8).ranks == (2, 2, 2)

    @pytest.mark.parametrize("eps", [0.0, 1.0, -0.1])
    def test_budget_out_of_range(self, eps):
        with pytest.raises(ValueError):
            select_ranks(np.ones((2, 2)), eps)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.001, 0.05, 0.1, 0.5]))
    def test_budget_always_met(self, seed, eps):
        rng = np.random.default_rng(seed)
        t = rng.standard_normal(random_shape(rng, int(rng.integers(2, 5))))
        if rng.random() < 0.5:
            # low-rank plus noise, so truncation actually happens
            u = rng.standard_normal((t.shape[0], 1))
            t = t * 0.01 + np.tensordot(u, np.ones(t.shape[1:]), axes=0).reshape(t.shape)
        sel = select_ranks(t, eps)
        assert sel.achieved_error <= eps
        assert all(1 <= k <= d for k, d in zip(sel.ranks, t.shape))


class TestParamCounts:
    def test_example_layer(self):
        # H=4096, C=7, S=3 with ranks (256, 7, 4)
        assert param_count_full((4096, 7), 3) == 4096 * 7 * 4 == 114688
        tucker = param_count_tucker((4096, 7), (256, 7, 4), 3)
        assert tucker == 256 * 7 * 4 + 4096 * 256 + 7 * 7 + 4 * 4 == 7168 + 1048576 + 49 + 16
        assert tucker > 114688

    @pytest.mark.parametrize("order", [2, 3, 5])
    def test_unit_case(self, order):
        dims = (1,) * (order - 1)
        assert param_count_full(dims, 1) == 2
        assert param_count_tucker(dims, (1,) * order, 1) == 1 + (order - 1) + 2

    def test_matches_constructed_factors(self, rng):
        for _ in range(20):
            dims = random_shape(rng, int(rng.integers(1, 4)))
            s = int(rng.integers(1, 5))
            shape = dims + (s + 1,)
            ranks = tuple(int(rng.integers(1, d + 1)) for d in shape)
            f = hosvd(rng.standard_normal(shape), ranks)
            assert f.n_params() == param_count_tucker(dims, ranks, s)
            assert param_count_full(dims, s) == int(np.prod(shape))

    def test_rank_length_checked(self):
        with pytest.raises(ShapeError):
            param_count_tucker((3, 4), (2, 2), 2)


class TestInitFromStack:
    def test_identical_slices_rank_one(self, rng):
        w = rng.standard_normal((5, 3))
        f = init_from_stack([w, w, w], w, 0.001)
        assert f.ranks[-1] == 1
        np.testing.assert_allclose(reconstruct(f), stack_domains([w] * 3, w), rtol=1e-12)

    def test_agnostic_slice_is_last(self, rng):
        per = [rng.standard_normal((2, 3)) for _ in range(2)]
        agn = rng.standard_normal((2, 3))
        stacked = stack_domains(per, agn)
        assert stacked.shape == (2, 3, 3)
        np.testing.assert_array_equal(stacked[..., -1], agn)

    def test_trained_toy_weights_meet_budget(self, small_dataset):
        weights = []
        for k, name in enumerate(small_dataset.names):
            net = build_mlp(6, (), 3, 1, form="shared", seed=k)
            train(net, small_dataset.subset([name]), TrainConfig(max_iterations=60, seed=k),
                  domain_ids=[0])
            weights.append(net.layers[0].generator.weight.copy())
        f = init_from_stack(weights, np.mean(weights, axis=0), 0.1)
        stacked = stack_domains(weights, np.mean(weights, axis=0))
        assert relative_error(stacked, reconstruct(f)) <= 0.1

    def test_generic_inputs_keep_full_rank(self, rng):
        per = [rng.standard_normal((3, 4)) for _ in range(3)]
        f = init_from_stack(per, rng.standard_normal((3, 4)), 1e-12)
        assert f.ranks == (3, 4, 4)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            init_from_stack([np.ones((2, 3))], np.ones((3, 2)), 0.1)
