"""Multi-operator convolution (MCO), softmax cascade (MSC), DFCM and FEM blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .graph import AsgnnParams, asgnn_forward
from .operators import DEFAULT_BANK, FixedKernelBank, edge_magnitude, laplacian_response
from .tensor import Tensor


@dataclass
class ConvParams:
    weight: Tensor
    bias: Tensor

    @property
    def padding(self) -> int:
        return self.weight.shape[-1] // 2

    def __call__(self, x: Tensor, groups: int = 1) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=1, padding=self.padding, groups=groups)


@dataclass
class McoParams:
    adjust_1x1: ConvParams
    branch_3x3: ConvParams
    branch_5x5: ConvParams
    fuse_3x3: ConvParams


@dataclass
class MscParams:
    dconv: ConvParams   # depthwise 3x3, weight (c, 1, 3, 3)
    fuse: ConvParams    # 3x3, c -> c


@dataclass
class DfcmParams:
    mco: list[McoParams] = field(default_factory=list)
    msc: list[MscParams] = field(default_factory=list)
    asgnn: AsgnnParams | None = None


@dataclass
class FemParams:
    dfcms: list[DfcmParams]
    fuse_main: ConvParams
    fuse_att: ConvParams | None = None


def mco_forward(x: Tensor, params: McoParams, bank: FixedKernelBank = DEFAULT_BANK) -> Tensor:
    c = x.shape[1]
    if params.adjust_1x1.weight.shape[1] != c or params.fuse_3x3.weight.shape[0] != c:
        raise ConfigurationError(
            f"mco: block built for {params.adjust_1x1.weight.shape[1]} channels, input has {c}")
    a = params.adjust_1x1(x)
    branches = T.add(params.branch_3x3(a), params.branch_5x5(a))
    branches = T.add(branches, laplacian_response(a, bank))
    branches = T.add(branches, edge_magnitude(a, bank))
    return T.add(x, params.fuse_3x3(T.relu(branches)))


def msc_forward(x: Tensor, params: MscParams, softmax_axis: str = "spatial",
                return_maps: bool = False):
    """Four-group softmax cascade with fused residual.

    With ``return_maps`` also returns the three softmax attention maps.
    """
    c = x.shape[1]
    if c % 4:
        raise ConfigurationError(f"msc: channel count {c} is not divisible by 4")
    d = params.dconv(x, groups=c)
    x0, x1, x2, x3 = T.split_channels(d, 4)
    maps = []
    prev, outs = x0, [x0]
    for xi in (x1, x2, x3):
        attn = T.softmax(prev, axis=softmax_axis)
        maps.append(attn)
        prev = T.mul(xi, attn)
        outs.append(prev)
    y = T.add(params.fuse(T.concat_channels(outs)), x)
    return (y, maps) if return_maps else y


def dfcm_forward(x: Tensor, params: DfcmParams, p: int = 8, alpha: float = 0.75,
                 bank: FixedKernelBank = DEFAULT_BANK) -> tuple[Tensor, Tensor | None]:
    """Returns (x + f, attention branch) where f = MSC(MCO(x)) chained.

    The attention branch is None when the block has no ASGNN.
    """
    f = x
    for mco in params.mco:
        f = mco_forward(f, mco, bank)
    for msc in params.msc:
        f = msc_forward(f, msc)
    x_prime = T.add(x, f)
    x_att = asgnn_forward(f, params.asgnn, p, alpha) if params.asgnn is not None else None
    return x_prime, x_att


def fem_forward(x: Tensor, params: FemParams, p: int = 8, alpha: float = 0.75,
                bank: FixedKernelBank = DEFAULT_BANK) -> tuple[Tensor, Tensor | None]:
    feats, atts = [x], []
    cur = x
    for dfcm in params.dfcms:
        cur, att = dfcm_forward(cur, dfcm, p, alpha, bank)
        feats.append(cur)
        if att is not None:
            atts.append(att)
    y = params.fuse_main(T.concat_channels(feats))
    if params.fuse_att is None or not atts:
        return y, None
    y_att = params.fuse_att(T.concat_channels(atts))
    return T.add(y, y_att), y_att


def zeros_like_conv(cout: int, cin: int, k: int) -> ConvParams:
    return ConvParams(Tensor(np.zeros((cout, cin, k, k))), Tensor(np.zeros(cout)))
