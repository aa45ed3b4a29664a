"""Window-wise pixel graphs with LSH-pruned similarity adjacency.

Each non-overlapping p x p window of a feature map becomes a graph of
N = p*p nodes whose features are the c channel values at each pixel.
Edges carry the symmetrically normalised dot-product similarity; nodes
are hashed by random hyperplanes and only the ceil(alpha*N) nodes from
the most populated buckets keep their edges.  One residual graph
convolution then mixes features along the surviving edges.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .tensor import Tensor

DEGREE_TOL = 1e-10


@dataclass
class AsgnnParams:
    w_g: np.ndarray          # (c, c) propagation weight
    lsh_planes: np.ndarray   # (bits, c) unit hyperplane normals
    seed: int = 0


@dataclass
class PatchGraph:
    H: np.ndarray
    S: np.ndarray
    D: np.ndarray
    S_bar: np.ndarray
    buckets: np.ndarray
    active_mask: np.ndarray
    A_bar: np.ndarray


def make_planes(channels: int, bits: int = 4, seed: int = 0) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(seed))
    planes = rng.standard_normal((bits, channels))
    return planes / np.linalg.norm(planes, axis=1, keepdims=True)


def active_count(alpha: float, n: int) -> int:
    _check_alpha(alpha)
    # round first so that e.g. 0.7 * 10 does not become 8
    return min(n, math.ceil(round(alpha * n, 9)))


def _check_alpha(alpha: float) -> None:
    if not (0.0 < alpha <= 1.0):
        raise ConfigurationError(f"alpha must lie in (0, 1], got {alpha}")


def _check_window(p: int) -> None:
    if p <= 0:
        raise ConfigurationError(f"patch size must be positive, got {p}")


# ----------------------------------------------------------------- patching

def padded_extent(h: int, w: int, p: int) -> tuple[int, int]:
    return -(-h // p) * p, -(-w // p) * p


def patch(x: np.ndarray, p: int) -> np.ndarray:
    """(b, c, h, w) -> (windows, p*p, c); rows in row-major pixel order.

    Inputs whose extent is not a multiple of p are mirror-padded at the
    bottom/right first.
    """
    _check_window(p)
    b, c, h, w = x.shape
    hp, wp = padded_extent(h, w, p)
    if (hp, wp) != (h, w):
        x = np.pad(x, ((0, 0), (0, 0), (0, hp - h), (0, wp - w)), mode="symmetric")
    nh, nw = hp // p, wp // p
    return x.reshape(b, c, nh, p, nw, p).transpose(0, 2, 4, 3, 5, 1).reshape(b * nh * nw, p * p, c)


def restore(windows: np.ndarray, shape: tuple[int, int, int, int], p: int) -> np.ndarray:
    """Inverse of :func:`patch`, cropping any padding."""
    _check_window(p)
    b, c, h, w = shape
    hp, wp = padded_extent(h, w, p)
    nh, nw = hp // p, wp // p
    x = windows.reshape(b, nh, nw, p, p, c).transpose(0, 5, 1, 3, 2, 4).reshape(b, c, hp, wp)
    return x[:, :, :h, :w]


def patch_tensor(x: Tensor, p: int) -> Tensor:
    _check_window(p)
    b, c, h, w = x.shape
    hp, wp = padded_extent(h, w, p)
    x = T.pad_symmetric(x, hp - h, wp - w)
    nh, nw = hp // p, wp // p
    x = T.reshape(x, (b, c, nh, p, nw, p))
    x = T.transpose(x, (0, 2, 4, 3, 5, 1))
    return T.reshape(x, (b * nh * nw, p * p, c))


def restore_tensor(windows: Tensor, shape: tuple[int, int, int, int], p: int) -> Tensor:
    b, c, h, w = shape
    hp, wp = padded_extent(h, w, p)
    nh, nw = hp // p, wp // p
    x = T.reshape(windows, (b, nh, nw, p, p, c))
    x = T.transpose(x, (0, 5, 1, 3, 2, 4))
    x = T.reshape(x, (b, c, hp, wp))
    return T.crop(x, h, w)


# ----------------------------------------------------------------- graph construction

def build_similarity(H: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dot-product similarity with zero diagonal, absolute degree, and D^-1/2 S D^-1/2.

    Rows/columns of nodes with degree <= 1e-10 are zero in the normalised matrix.
    """
    S = H @ np.swapaxes(H, -1, -2)
    n = S.shape[-1]
    S[..., np.arange(n), np.arange(n)] = 0.0
    D = np.abs(S).sum(axis=-1)
    r = _inv_sqrt_degree(D)
    S_bar = r[..., :, None] * S * r[..., None, :]
    return S, D, S_bar


def _inv_sqrt_degree(D: np.ndarray) -> np.ndarray:
    safe = np.where(D > DEGREE_TOL, D, 1.0)
    return np.where(D > DEGREE_TOL, 1.0 / np.sqrt(safe), 0.0)


def lsh_bucket(H: np.ndarray, planes: np.ndarray) -> np.ndarray:
    """Sign-of-projection bucket code per row; all-zero rows share code 2**bits."""
    bits = planes.shape[0]
    if H.shape[-1] != planes.shape[1]:
        raise DimensionError(f"lsh_bucket: feature axis {H.shape[-1]} vs plane axis {planes.shape[1]}")
    norms = np.linalg.norm(H, axis=-1, keepdims=True)
    zero = norms[..., 0] == 0.0
    unit = H / np.where(norms == 0.0, 1.0, norms)
    signs = (unit @ planes.T) > 0
    codes = (signs * (1 << np.arange(bits))).sum(axis=-1)
    return np.where(zero, 1 << bits, codes)


def select_active(buckets: np.ndarray, alpha: float) -> np.ndarray:
    """Boolean mask of the ceil(alpha*N) nodes from the most populated buckets.

    Ranking is by bucket population (descending), ties broken by node
    index.  Works on (N,) or batched (..., N) codes.
    """
    n = buckets.shape[-1]
    k = active_count(alpha, n)
    population = (buckets[..., :, None] == buckets[..., None, :]).sum(axis=-1)
    order = np.argsort(-population, axis=-1, kind="stable")
    mask = np.zeros(buckets.shape, dtype=bool)
    np.put_along_axis(mask, order[..., :k], True, axis=-1)
    return mask


def sparsify(S_bar: np.ndarray, buckets: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    mask = select_active(buckets, alpha)
    keep = mask[..., :, None] & mask[..., None, :]
    return mask, np.where(keep, S_bar, 0.0)


def propagate(H: np.ndarray, A_bar: np.ndarray, w_g: np.ndarray) -> np.ndarray:
    """relu(A H W) + H."""
    return np.maximum(A_bar @ H @ w_g, 0.0) + H


def build_patch_graph(H: np.ndarray, planes: np.ndarray, alpha: float) -> PatchGraph:
    S, D, S_bar = build_similarity(H)
    buckets = lsh_bucket(H, planes)
    mask, A_bar = sparsify(S_bar, buckets, alpha)
    return PatchGraph(H=H, S=S, D=D, S_bar=S_bar, buckets=buckets, active_mask=mask, A_bar=A_bar)


# ----------------------------------------------------------------- differentiable path

def sym_normalize(S: Tensor) -> Tensor:
    """D^-1/2 S D^-1/2 with D_i = sum_j |S_ij|, batched over leading axes."""
    s = S.data
    D = np.abs(s).sum(axis=-1)
    r = _inv_sqrt_degree(D)
    out = r[..., :, None] * s * r[..., None, :]

    def backward(g):
        direct = g * r[..., :, None] * r[..., None, :]
        gs = g * out
        d_deg = -0.5 * r * r * (gs.sum(axis=-1) + gs.sum(axis=-2))
        return (direct + d_deg[..., :, None] * np.sign(s),)

    return T._make(out, (S,), backward, "sym_normalize")


def asgnn_forward(x: Tensor, params: AsgnnParams, p: int, alpha: float) -> Tensor:
    """Patch, build graphs, prune with LSH, propagate once, restore."""
    _check_alpha(alpha)
    shape = x.shape
    H = patch_tensor(x, p)
    nwin, n, _ = H.shape
    S = T.matmul(H, T.swap_last(H))
    off_diag = np.broadcast_to(1.0 - np.eye(n), (nwin, n, n)).copy()
    S = T.mul(S, Tensor(off_diag))
    S_bar = sym_normalize(S)
    if alpha < 1.0:
        buckets = lsh_bucket(H.data, params.lsh_planes)
        mask = select_active(buckets, alpha)
        keep = (mask[..., :, None] & mask[..., None, :]).astype(np.float64)
        A_bar = T.mul(S_bar, Tensor(keep))
    else:
        A_bar = S_bar
    w_g = params.w_g if isinstance(params.w_g, Tensor) else Tensor(params.w_g)
    msg = T.relu(T.matmul(T.matmul(A_bar, H), w_g))
    return restore_tensor(T.add(msg, H), shape, p)


def asgnn_dense_reference(x: np.ndarray, w_g: np.ndarray, p: int) -> np.ndarray:
    """Full-graph path with no hashing or cropping, computed window by window."""
    shape = x.shape
    out = []
    for H in patch(x, p):
        n = H.shape[0]
        S = H @ H.T - (H @ H.T) * np.eye(n)
        D = np.abs(S).sum(axis=1)
        S_bar = np.zeros_like(S)
        for i in range(n):
            for j in range(n):
                if D[i] > DEGREE_TOL and D[j] > DEGREE_TOL:
                    S_bar[i, j] = S[i, j] / math.sqrt(D[i] * D[j])
        out.append(propagate(H, S_bar, w_g))
    return restore(np.stack(out), shape, p)
