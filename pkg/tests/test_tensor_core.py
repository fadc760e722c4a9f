import itertools
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from lowrank_dg.errors import FormatError, InvalidMode, NumericError, ShapeError
from lowrank_dg.tensor_core import (
    complete_basis,
    fold,
    left_singular_vectors,
    mode_n_product,
    mode_n_vec_product,
    multi_mode_product,
    read_dgt1,
    svd,
    unfold,
    write_dgt1,
)


def unfold_by_formula(t, n):
    """Column index j = sum_{k != n} i_k * J_k with J_k the product of earlier extents."""
    out = np.zeros((t.shape[n], t.size // t.shape[n]))
    for idx in itertools.product(*map(range, t.shape)):
        j, stride = 0, 1
        for k, i_k in enumerate(idx):
            if k == n:
                continue
            j += i_k * stride
            stride *= t.shape[k]
        out[idx[n], j] = t[idx]
    return out


shapes = hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=4)
finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestUnfold:
    def test_order_two_first_mode_is_identity(self):
        t = np.array([[1.5], [-2.0]])
        np.testing.assert_array_equal(unfold(t, 0), t)

    def test_index_map_matches_formula_on_counting_tensor(self):
        # t[i, j, k] = 4i + 2j + k; with the earliest remaining mode varying
        # fastest the mode-2 unfolding interleaves the first two modes.
        t = np.arange(8.0).reshape(2, 2, 2)
        expected = np.array([[0, 4, 2, 6], [1, 5, 3, 7]], dtype=float)
        np.testing.assert_array_equal(unfold(t, 2), expected)
        np.testing.assert_array_equal(unfold_by_formula(t, 2), expected)

    @pytest.mark.parametrize("shape", [(3, 4, 5), (2, 3, 2, 2), (5,), (1, 7)])
    def test_all_modes_match_formula(self, shape, rng):
        t = rng.standard_normal(shape)
        for n in range(len(shape)):
            np.testing.assert_array_equal(unfold(t, n), unfold_by_formula(t, n))

    def test_bad_mode(self):
        with pytest.raises(InvalidMode):
            unfold(np.zeros((2, 2)), 2)
        with pytest.raises(InvalidMode):
            unfold(np.zeros((2, 2)), -1)

    def test_rejects_empty_extent(self):
        with pytest.raises(ShapeError):
            unfold(np.zeros((2, 0)), 0)

    def test_fold_rejects_wrong_size(self):
        with pytest.raises(ShapeError):
            fold(np.zeros((2, 3)), 0, (2, 2))

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float64, shapes, elements=finite), st.data())
    def test_fold_round_trip_is_bit_exact(self, t, data):
        n = data.draw(st.integers(0, t.ndim - 1))
        back = fold(unfold(t, n), n, t.shape)
        assert back.shape == t.shape
        assert back.tobytes() == t.tobytes()


class TestModeProduct:
    def test_identity(self, rng):
        t = rng.standard_normal((3, 4, 5))
        for n, d in enumerate(t.shape):
            np.testing.assert_array_equal(mode_n_product(t, np.eye(d), n), t)

    def test_order_two_is_matmul(self, rng):
        t, m = rng.standard_normal((4, 3)), rng.standard_normal((2, 4))
        np.testing.assert_allclose(mode_n_product(t, m, 0), m @ t, rtol=1e-14)

    def test_loop_oracle(self, rng):
        t, m = rng.standard_normal((3, 4, 5)), rng.standard_normal((2, 4))
        expected = np.zeros((3, 2, 5))
        for i in range(3):
            for r in range(2):
                for k in range(5):
                    for j in range(4):
                        expected[i, r, k] += m[r, j] * t[i, j, k]
        np.testing.assert_allclose(mode_n_product(t, m, 1), expected, rtol=1e-12)

    def test_matches_fold_of_unfolded_product(self, rng):
        t, m = rng.standard_normal((3, 4, 5)), rng.standard_normal((6, 5))
        via_unfold = fold(m @ unfold(t, 2), 2, (3, 4, 6))
        np.testing.assert_allclose(mode_n_product(t, m, 2), via_unfold, rtol=1e-12)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ShapeError):
            mode_n_product(rng.standard_normal((3, 4)), np.ones((2, 3)), 1)

    def test_linear_in_matrix(self, rng):
        t = rng.standard_normal((3, 4, 5))
        a, b = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
        lhs = mode_n_product(t, 2.5 * a - 0.5 * b, 1)
        rhs = 2.5 * mode_n_product(t, a, 1) - 0.5 * mode_n_product(t, b, 1)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    def test_linear_in_tensor(self, rng):
        t1, t2 = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        m = rng.standard_normal((5, 3))
        lhs = mode_n_product(3 * t1 + t2, m, 0)
        rhs = 3 * mode_n_product(t1, m, 0) + mode_n_product(t2, m, 0)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_distinct_modes_commute(self, seed):
        rng = np.random.default_rng(seed)
        t = rng.standard_normal((3, 4, 2))
        a, b = rng.standard_normal((5, 3)), rng.standard_normal((2, 2))
        ab = mode_n_product(mode_n_product(t, a, 0), b, 2)
        ba = mode_n_product(mode_n_product(t, b, 2), a, 0)
        np.testing.assert_allclose(ab, ba, rtol=1e-12, atol=1e-12)

    def test_multi_mode_product_skip_and_transpose(self, rng):
        t = rng.standard_normal((3, 4, 5))
        ms = [rng.standard_normal((3, 2)), rng.standard_normal((4, 3)), rng.standard_normal((5, 2))]
        out = multi_mode_product(t, ms, skip=1, transpose=True)
        expected = mode_n_product(mode_n_product(t, ms[0].T, 0), ms[2].T, 2)
        np.testing.assert_allclose(out, expected, rtol=1e-12)


class TestModeVecProduct:
    def test_selector_picks_slice(self, rng):
        t = rng.standard_normal((2, 2, 2))
        np.testing.assert_array_equal(mode_n_vec_product(t, [1.0, 0.0], 2), t[:, :, 0])

    def test_two_hot_sums_slices(self, rng):
        t = rng.standard_normal((3, 2, 4))
        v = np.array([0.0, 1.0, 0.0, 1.0])
        np.testing.assert_allclose(mode_n_vec_product(t, v, 2), t[..., 1] + t[..., 3], rtol=1e-15)

    def test_loop_oracle_and_row_matrix_equivalence(self, rng):
        t, v = rng.standard_normal((3, 4, 5)), rng.standard_normal(4)
        expected = np.zeros((3, 5))
        for i in range(3):
            for k in range(5):
                expected[i, k] = sum(t[i, j, k] * v[j] for j in range(4))
        out = mode_n_vec_product(t, v, 1)
        np.testing.assert_allclose(out, expected, rtol=1e-12)
        np.testing.assert_allclose(out, mode_n_product(t, v[None], 1)[:, 0, :], rtol=1e-12)

    def test_length_mismatch(self, rng):
        with pytest.raises(ShapeError):
            mode_n_vec_product(rng.standard_normal((2, 3)), np.ones(2), 1)


class TestSvd:
    def test_diagonal(self):
        res = svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(res.S, [3.0, 1.0], rtol=1e-15)
        np.testing.assert_allclose(np.abs(res.U), np.eye(2), atol=1e-15)
        np.testing.assert_allclose(np.abs(res.V), np.eye(2), atol=1e-15)

    def test_rank_one(self, rng):
        a, b = rng.standard_normal(5), rng.standard_normal(4)
        s = svd(np.outer(a, b)).S
        assert np.sum(s > 1e-10 * s[0]) == 1
        np.testing.assert_allclose(s[0], np.linalg.norm(a) * np.linalg.norm(b), rtol=1e-12)

    @pytest.mark.parametrize("shape", [(6, 4), (4, 6), (1, 5), (5, 1), (7, 7), (30, 12)])
    def test_reconstruction_and_orthonormality(self, shape, rng):
        a = rng.standard_normal(shape)
        res = svd(a)
        k = min(shape)
        assert res.U.shape == (shape[0], k) and res.V.shape == (shape[1], k)
        assert np.linalg.norm(a - res.reconstruct()) / np.linalg.norm(a) <= 1e-10
        np.testing.assert_allclose(res.U.T @ res.U, np.eye(k), atol=1e-10)
        np.testing.assert_allclose(res.V.T @ res.V, np.eye(k), atol=1e-10)
        assert np.all(np.diff(res.S) <= 0) and np.all(res.S >= 0)

    def test_singular_values_match_lapack(self, rng):
        a = rng.standard_normal((9, 6))
        np.testing.assert_allclose(svd(a).S, np.linalg.svd(a, compute_uv=False), rtol=1e-12)

    def test_sign_convention(self, rng):
        u = svd(rng.standard_normal((8, 5))).U
        picked = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
        assert np.all(picked > 0)

    def test_deterministic(self, rng):
        a = rng.standard_normal((10, 7))
        r1, r2 = svd(a), svd(a.copy())
        assert r1.U.tobytes() == r2.U.tobytes() and r1.S.tobytes() == r2.S.tobytes()

    def test_rank_deficient_keeps_orthonormal_u(self):
        a = np.zeros((4, 3))
        a[0, 0] = 2.0
        res = svd(a)
        np.testing.assert_allclose(res.U.T @ res.U, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(res.reconstruct(), a, atol=1e-15)

    def test_zero_matrix(self):
        res = svd(np.zeros((3, 2)))
        np.testing.assert_array_equal(res.S, [0.0, 0.0])
        np.testing.assert_allclose(res.U.T @ res.U, np.eye(2), atol=1e-12)

    def test_non_finite(self):
        with pytest.raises(NumericError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_not_a_matrix(self):
        with pytest.raises(ShapeError):
            svd(np.ones(3))

    def test_badly_scaled_columns(self):
        a = np.array([[1e150, 1.0], [1e150, -1.0], [0.0, 1e-150]])
        res = svd(a)
        np.testing.assert_allclose(res.reconstruct(), a, rtol=1e-12, atol=1e-140)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=2, max_side=6),
                      elements=finite))
    def test_property_reconstruction(self, a):
        res = svd(a)
        scale = max(np.linalg.norm(a), 1e-300)
        assert np.linalg.norm(a - res.reconstruct()) <= 1e-10 * scale
        k = min(a.shape)
        np.testing.assert_allclose(res.U.T @ res.U, np.eye(k), atol=1e-10)


class TestBasisHelpers:
    def test_complete_basis(self, rng):
        q, _ = np.linalg.qr(rng.standard_normal((5, 2)))
        full = complete_basis(q, 5)
        np.testing.assert_allclose(full.T @ full, np.eye(5), atol=1e-12)
        np.testing.assert_array_equal(full[:, :2], q)

    def test_left_vectors_beyond_rank(self, rng):
        u, s = left_singular_vectors(rng.standard_normal((4, 2)), 4)
        assert u.shape == (4, 4) and s.shape == (2,)
        np.testing.assert_allclose(u.T @ u, np.eye(4), atol=1e-12)


class TestDgt1:
    def test_round_trip(self, tmp_path, rng):
        a = rng.standard_normal((3, 1, 4))
        write_dgt1(tmp_path / "a.dgt", a)
        b = read_dgt1(tmp_path / "a.dgt")
        assert b.shape == a.shape and b.tobytes() == a.tobytes()

    def test_layout_is_header_then_row_major_le_f64(self, tmp_path):
        a = np.arange(6.0).reshape(2, 3)
        write_dgt1(tmp_path / "a.dgt", a)
        raw = (tmp_path / "a.dgt").read_bytes()
        assert raw[:4] == b"DGT1"
        assert struct.unpack("<3I", raw[4:16]) == (2, 2, 3)
        assert struct.unpack("<6d", raw[16:]) == tuple(range(6))

    def test_u32_payload(self, tmp_path):
        write_dgt1(tmp_path / "y.dgt", np.array([0, 7, 2]), dtype="<u4")
        raw = (tmp_path / "y.dgt").read_bytes()
        assert struct.unpack("<3I", raw[12:]) == (0, 7, 2)
        np.testing.assert_array_equal(read_dgt1(tmp_path / "y.dgt", dtype="<u4"), [0, 7, 2])

    @pytest.mark.parametrize("blob", [b"", b"DGT2" + b"\0" * 12, b"DGT1\x02\0\0\0\x02\0\0\0",
                                      b"DGT1\x01\0\0\0\x02\0\0\0" + b"\0" * 8])
    def test_corrupt(self, tmp_path, blob):
        (tmp_path / "bad.dgt").write_bytes(blob)
        with pytest.raises(FormatError):
            read_dgt1(tmp_path / "bad.dgt")

    def test_rejects_nan_payload(self, tmp_path):
        write_dgt1(tmp_path / "n.dgt", np.array([1.0, np.nan]))
        with pytest.raises(FormatError):
            read_dgt1(tmp_path / "n.dgt")
