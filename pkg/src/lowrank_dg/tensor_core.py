"""Dense tensor algebra: unfolding, mode products, Jacobi SVD and DGT1 I/O.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Modes are
0-based like numpy axes.

Unfolding follows Kolda & Bader: row index is ``i_n``; the column index
linearizes the remaining modes with the *earliest* remaining mode varying
fastest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidMode, NumericError, ShapeError

MAGIC = b"DGT1"

_JACOBI_MAX_SWEEPS = 60


def as_tensor(data) -> np.ndarray:
    t = np.asarray(data, dtype=np.float64)
    if t.ndim < 1:
        raise ShapeError("tensor order must be >= 1")
    if 0 in t.shape:
        raise ShapeError(f"every extent must be >= 1, got {t.shape}")
    return t


def _check_mode(t: np.ndarray, mode: int) -> None:
    if not 0 <= mode < t.ndim:
        raise InvalidMode(f"mode {mode} out of range for order-{t.ndim} tensor")


def unfold(t, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``D_n x prod(D_k, k != n)``."""
    t = as_tensor(t)
    _check_mode(t, mode)
    return np.reshape(np.moveaxis(t, mode, 0), (t.shape[mode], -1), order="F")


def fold(m, mode: int, shape) -> np.ndarray:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    shape = tuple(int(d) for d in shape)
    if not 0 <= mode < len(shape):
        raise InvalidMode(f"mode {mode} out of range for order-{len(shape)} shape")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    if m.size != int(np.prod(moved)) or m.ndim != 2 or m.shape[0] != shape[mode]:
        raise ShapeError(f"cannot fold {m.shape} into {shape} along mode {mode}")
    return np.moveaxis(np.reshape(m, moved, order="F"), 0, mode)


def mode_n_product(t, m, mode: int) -> np.ndarray:
    """Contract mode ``mode`` of ``t`` with the columns of ``m``.

    The extent of that mode becomes ``m.shape[0]``.
    """
    t = as_tensor(t)
    m = np.asarray(m, dtype=np.float64)
    _check_mode(t, mode)
    if m.ndim != 2 or m.shape[1] != t.shape[mode]:
        raise ShapeError(
            f"matrix {m.shape} incompatible with mode {mode} of extent {t.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(m, t, axes=(1, mode)), 0, mode)


def mode_n_vec_product(t, v, mode: int) -> np.ndarray:
    """Inner product of ``t`` with vector ``v`` along ``mode``; drops that mode."""
    t = as_tensor(t)
    v = np.asarray(v, dtype=np.float64)
    _check_mode(t, mode)
    if v.ndim != 1 or v.shape[0] != t.shape[mode]:
        raise ShapeError(
            f"vector of length {v.shape} incompatible with mode {mode} of extent {t.shape[mode]}"
        )
    return np.tensordot(t, v, axes=(mode, 0))


def multi_mode_product(t, matrices, skip=None, transpose=False) -> np.ndarray:
    """Apply ``t x_0 M_0 x_1 M_1 ...``, optionally skipping one mode.

    With ``transpose=True`` each ``M_k`` is applied as ``M_k.T``.
    """
    out = t
    for k, m in enumerate(matrices):
        if k == skip:
            continue
        out = mode_n_product(out, m.T if transpose else m, k)
    return out


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``A = U @ diag(S) @ V.T``; ``U``, ``V`` have ``min(m, n)`` columns."""

    U: np.ndarray
    S: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.S) @ self.V.T


def _round_robin(n: int):
    """Pairings of a round-robin tournament; every pair appears once per sweep."""
    players = list(range(n + (n % 2)))
    rounds = []
    for _ in range(len(players) - 1):
        half = len(players) // 2
        p = np.array(players[:half])
        q = np.array(players[half:][::-1])
        keep = (p < n) & (q < n)
        rounds.append((p[keep], q[keep]))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def complete_basis(q: np.ndarray, n_cols: int) -> np.ndarray:
    """Extend orthonormal columns ``q`` (m x r) to ``n_cols`` orthonormal columns.

    Candidates are standard basis vectors; the one with the largest residual
    is taken each time, so the result is deterministic.
    """
    m, r = q.shape
    if n_cols > m:
        raise ShapeError(f"cannot build {n_cols} orthonormal columns in R^{m}")
    cols = [q[:, j] for j in range(r)]
    basis = q
    while basis.shape[1] < n_cols:
        resid = np.eye(m) - basis @ basis.T
        resid = resid - basis @ (basis.T @ resid)
        j = int(np.argmax(np.einsum("ij,ij->j", resid, resid)))
        v = resid[:, j]
        v = v - basis @ (basis.T @ v)
        cols.append(v / np.linalg.norm(v))
        basis = np.column_stack(cols)
    return basis


def _jacobi_tall(a: np.ndarray):
    m, n = a.shape
    a = a.copy()
    v = np.eye(n)
    if n == 1:
        return a, v
    rounds = _round_robin(n)
    tol = max(m, n) * np.finfo(np.float64).eps
    for _ in range(_JACOBI_MAX_SWEEPS):
        rotated = False
        for p, q in rounds:
            ap, aq = a[:, p], a[:, q]
            alpha = np.einsum("ij,ij->j", ap, ap)
            beta = np.einsum("ij,ij->j", aq, aq)
            gamma = np.einsum("ij,ij->j", ap, aq)
            active = np.abs(gamma) > tol * np.sqrt(alpha * beta)
            if not active.any():
                continue
            rotated = True
            p, q = p[active], q[active]
            alpha, beta, gamma = alpha[active], beta[active], gamma[active]
            with np.errstate(over="ignore"):
                # |zeta| -> inf gives t -> 0, i.e. no rotation, which is the right limit
                zeta = (beta - alpha) / (2.0 * gamma)
                t = np.where(zeta >= 0, 1.0, -1.0) / (np.abs(zeta) + np.hypot(1.0, zeta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = c * t
            ap, aq = a[:, p], a[:, q]
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            vp, vq = v[:, p], v[:, q]
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if not rotated:
            break
    return a, v


def svd(m) -> SvdResult:
    """Deterministic thin SVD by one-sided (Hestenes) Jacobi rotations.

    Columns are orthogonalized with a round-robin pair ordering until every
    pair satisfies ``|a_p . a_q| <= tol * |a_p| |a_q|``. Singular values are
    returned in descending order and each column of ``U`` has its
    largest-magnitude entry positive.
    """
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"svd expects a matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NumericError("svd input contains non-finite entries")
    wide = a.shape[0] < a.shape[1]
    if wide:
        a = a.T
    rotated, v = _jacobi_tall(a)
    s = np.sqrt(np.einsum("ij,ij->j", rotated, rotated))
    order = np.argsort(-s, kind="stable")
    s, rotated, v = s[order], rotated[:, order], v[:, order]

    nonzero = s > 0
    u = np.zeros_like(rotated)
    u[:, nonzero] = rotated[:, nonzero] / s[nonzero]
    r = int(nonzero.sum())
    if r < u.shape[1]:
        u = complete_basis(u[:, :r], u.shape[1])

    idx = np.argmax(np.abs(u), axis=0)
    signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
    u = u * signs
    v = v * signs
    if wide:
        # A^T = U S V^T  =>  A = V S U^T; re-apply the sign rule to the new U.
        u, v = v, u
        idx = np.argmax(np.abs(u), axis=0)
        signs = np.where(u[idx, np.arange(u.shape[1])] < 0, -1.0, 1.0)
        u, v = u * signs, v * signs
    return SvdResult(U=u, S=s, V=v)


def left_singular_vectors(m, k: int) -> tuple[np.ndarray, np.ndarray]:
    """First ``k`` left singular vectors and all singular values of ``m``.

    ``k`` may exceed ``min(m.shape)``; extra columns span the null space.
    """
    res = svd(m)
    u = res.U
    if k > u.shape[1]:
        u = complete_basis(u, k)
    return u[:, :k], res.S


def write_dgt1(path, array, dtype: str = "<f8") -> None:
    """Write ``array`` as a DGT1 file (header + row-major payload)."""
    arr = np.asarray(array)
    if arr.ndim < 1:
        raise ShapeError("DGT1 stores tensors of order >= 1")
    header = MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    payload = np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_dgt1(path, dtype: str = "<f8") -> np.ndarray:
    raw = Path(path).read_bytes() if not isinstance(path, (bytes, bytearray)) else bytes(path)
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: missing DGT1 magic")
    (order,) = struct.unpack_from("<I", raw, 4)
    if order < 1 or len(raw) < 8 + 4 * order:
        raise FormatError(f"{path}: truncated DGT1 header")
    shape = struct.unpack_from(f"<{order}I", raw, 8)
    offset = 8 + 4 * order
    dt = np.dtype(dtype)
    expected = int(np.prod(shape)) * dt.itemsize
    if len(raw) - offset != expected:
        raise FormatError(
            f"{path}: payload has {len(raw) - offset} bytes, expected {expected}"
        )
    data = np.frombuffer(raw, dtype=dt, offset=offset).reshape(shape)
    out = data.astype(dt.newbyteorder("="))
    if dt.kind == "f" and not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: non-finite values in payload")
    return out
