import math

import numpy as np
import pytest

from asgnn_sr.degradation import bicubic_resample
from asgnn_sr.errors import ConfigMismatchError, ConfigurationError, FormatError, IntegrityError
from asgnn_sr.metrics import psnr
from asgnn_sr.network import (NetworkConfig, as_tensors, dumps_params, forward, load_params, loads_params,
                              param_init, param_layout, save_params)
from asgnn_sr.tensor import Tensor, grad_check

TINY = dict(scale=2, width=4, fem_count=1, dfcm_per_fem=1, patch=2, alpha=1.0)


def rng(seed=0):
    return np.random.Generator(np.random.Philox(seed))


def small(**kw):
    base = dict(scale=2, width=8, fem_count=2, dfcm_per_fem=2, patch=4)
    base.update(kw)
    return NetworkConfig(**base)


@pytest.mark.parametrize("cfg", [dict(), dict(scale=4), dict(use_asgnn=False), dict(alpha=0.5, patch=3)])
def test_output_shape(cfg):
    params = param_init(small(**cfg), seed=1)
    x = rng(2).uniform(size=(2, 1, 8, 10))
    s = params.config.scale
    assert forward(x, params).shape == (2, 1, s * 8, s * 10)


def test_sixteen_pixel_input_doubles():
    params = param_init(NetworkConfig(scale=2, width=8, fem_count=1, dfcm_per_fem=1), seed=0)
    assert forward(rng(0).uniform(size=(1, 1, 16, 16)), params).shape == (1, 1, 32, 32)


def test_zero_tail_gives_bicubic_exactly():
    params = param_init(small(), seed=3)
    x = rng(4).uniform(size=(1, 1, 12, 12))
    out = forward(x, params).data[0, 0]
    bic = bicubic_resample(x[0, 0], 24, 24)
    assert np.array_equal(out, bic)
    hr = rng(5).uniform(size=(24, 24))
    assert psnr(out, hr) == psnr(bic, hr)


def test_no_bicubic_skip_with_zero_tail_is_zero():
    params = param_init(small(use_bicubic_skip=False), seed=3)
    assert np.all(forward(rng(4).uniform(size=(1, 1, 8, 8)), params).data == 0)


def test_three_channel_input():
    params = param_init(small(in_channels=3), seed=0)
    assert forward(rng(1).uniform(size=(1, 3, 8, 8)), params).shape == (1, 3, 16, 16)


def test_attention_pathway_removed_when_disabled():
    on = {n for n, _ in param_layout(small())}
    off = {n for n, _ in param_layout(small(use_asgnn=False))}
    removed = on - off
    assert off < on
    assert all(".asgnn." in n or ".fuse_att." in n or n.startswith("agg.att.") for n in removed)
    assert param_init(small(use_asgnn=False)).buffers == {}


def test_forward_deterministic():
    params = param_init(small(alpha=0.75), seed=7)
    for k in params.weights:
        if k.startswith("recon.tail"):
            params.weights[k] = rng(8).uniform(-0.1, 0.1, params.weights[k].shape)
    x = rng(9).uniform(size=(2, 1, 8, 8))
    assert forward(x, params).data.tobytes() == forward(x, params).data.tobytes()


def test_input_validation():
    params = param_init(small(), seed=0)
    with pytest.raises(ConfigurationError):
        forward(np.zeros((1, 2, 8, 8)), params)
    with pytest.raises(ConfigurationError):
        forward(np.zeros((1, 1, 3, 8)), params)
    with pytest.raises(ConfigurationError):
        forward(np.zeros((1, 8, 8)), params)
    for bad in (dict(scale=3), dict(width=6), dict(fem_count=0), dict(alpha=0.0)):
        with pytest.raises(ConfigurationError):
            small(**bad)


def test_end_to_end_gradcheck_tiny():
    r = rng(10)
    params = param_init(NetworkConfig(**TINY), seed=11)
    names = list(params.weights)
    # perturb so the zero tail and zero biases still carry gradient
    arrays = [r.uniform(size=(1, 1, 8, 8))] + [w + 0.1 * r.uniform(-1, 1, w.shape) for w in params.weights.values()]
    err = grad_check(lambda x, *ws: forward(x, params, dict(zip(names, ws))), arrays)
    assert err <= 1e-6


# ----------------------------------------------------------------- init

def test_param_init_deterministic_and_tail_zero():
    a, b = param_init(small(), seed=5), param_init(small(), seed=5)
    assert list(a.weights) == list(b.weights)
    for k in a.weights:
        assert a.weights[k].tobytes() == b.weights[k].tobytes()
    assert np.all(a.weights["recon.tail.weight"] == 0) and np.all(a.weights["recon.tail.bias"] == 0)
    assert any(not np.array_equal(a.weights[k], param_init(small(), seed=6).weights[k]) for k in a.weights)


def test_param_init_fan_in_bound():
    params = param_init(NetworkConfig(width=32, fem_count=1, dfcm_per_fem=1), seed=0)
    bound = math.sqrt(1 / 288)
    checked = 0
    for name, w in params.weights.items():
        if w.ndim == 4 and w.shape[1:] == (32, 3, 3):
            assert np.all(np.abs(w) <= bound)
            checked += 1
        if name.endswith(".bias"):
            assert np.all(w == 0)
    assert checked > 5


def test_param_count_is_function_of_config():
    cfg = small()
    assert param_init(cfg, 1).count() == param_init(cfg, 2).count() == sum(int(np.prod(s)) for _, s in param_layout(cfg))


# ----------------------------------------------------------------- serialization

def test_save_load_roundtrip(tmp_path):
    params = param_init(small(alpha=0.5), seed=12)
    path = tmp_path / "model.bin"
    save_params(path, params)
    loaded = load_params(path)
    assert loaded.config == params.config
    assert list(loaded.weights) == list(params.weights)
    for k in params.weights:
        assert loaded.weights[k].tobytes() == params.weights[k].tobytes()
    for k in params.buffers:
        assert loaded.buffers[k].tobytes() == params.buffers[k].tobytes()
    assert path.read_bytes()[:8] == b"ASGNNSR\x00"


def test_load_errors(tmp_path):
    params = param_init(small(), seed=0)
    blob = dumps_params(params)
    with pytest.raises(FormatError, match="magic"):
        loads_params(b"XXXXXXXX" + blob[8:])
    with pytest.raises(IntegrityError):
        loads_params(blob[:-5])
    with pytest.raises(ConfigMismatchError):
        loads_params(blob, small(width=12))
    bad_version = blob[:8] + (99).to_bytes(4, "little") + blob[12:]
    with pytest.raises(FormatError, match="version"):
        loads_params(bad_version)
    assert loads_params(blob, small()).config == small()


def test_as_tensors_requires_grad_flag():
    t = as_tensors(param_init(NetworkConfig(**TINY)), requires_grad=True)
    assert all(isinstance(v, Tensor) and v.requires_grad for v in t.values())
