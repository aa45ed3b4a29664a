"""Constant directional edge kernels, the Laplacian, and the combined edge magnitude."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor


def _k(rows) -> np.ndarray:
    return np.array(rows, dtype=np.float64)


@dataclass(frozen=True)
class FixedKernelBank:
    """The four directional 3x3 edge kernels plus the 4-neighbour Laplacian.

    Kernels are applied as cross-correlations, exactly as printed.
    """

    gx: np.ndarray = field(default_factory=lambda: _k([[0, 0, 0], [1, 0, -1], [0, 0, 0]]))
    gy: np.ndarray = field(default_factory=lambda: _k([[0, 1, 0], [0, 0, 0], [0, -1, 0]]))
    g_tl: np.ndarray = field(default_factory=lambda: _k([[1, 0, 0], [0, 0, 0], [0, 0, -1]]))
    g_tr: np.ndarray = field(default_factory=lambda: _k([[0, 0, 1], [0, 0, 0], [-1, 0, 0]]))
    laplacian: np.ndarray = field(default_factory=lambda: _k([[0, 1, 0], [1, -4, 1], [0, 1, 0]]))

    def directional(self) -> tuple[np.ndarray, ...]:
        return self.gx, self.gy, self.g_tl, self.g_tr

    def __getitem__(self, name: str) -> np.ndarray:
        return getattr(self, name)


DEFAULT_BANK = FixedKernelBank()


def directional_response(x: Tensor, kernel: np.ndarray) -> Tensor:
    """Apply a fixed 3x3 kernel to every channel independently (padding 1, no bias)."""
    c = x.shape[1]
    w = Tensor(np.broadcast_to(kernel, (c, 1, 3, 3)).copy())
    return T.conv2d(x, w, None, stride=1, padding=1, groups=c)


def laplacian_response(x: Tensor, bank: FixedKernelBank = DEFAULT_BANK) -> Tensor:
    return directional_response(x, bank.laplacian)


def edge_magnitude(x: Tensor, bank: FixedKernelBank = DEFAULT_BANK) -> Tensor:
    """sqrt(Gx^2 + Gy^2 + Gtl^2 + Gtr^2 + eps), per channel."""
    total = None
    for kernel in bank.directional():
        sq = T.square(directional_response(x, kernel))
        total = sq if total is None else T.add(total, sq)
    return T.sqrt_eps(total)
