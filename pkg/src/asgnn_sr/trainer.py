"""L1 loss, AdamW, the patch-crop training loop and the gradient-check suite."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .blocks import ConvParams, McoParams, MscParams, mco_forward, msc_forward
from .degradation import DatasetManifest, atomic_write_bytes, read_image, rng_for
from .errors import ConfigurationError, DimensionError, NonFiniteError
from .graph import AsgnnParams, asgnn_forward, make_planes
from .metrics import psnr, ssim
from .network import ModelParams, NetworkConfig, as_tensors, bicubic_upsample, forward, param_init, save_params
from .operators import edge_magnitude
from .tensor import Tensor


# ----------------------------------------------------------------- loss

def _l1_grad(diff: np.ndarray, count: int) -> np.ndarray:
    return np.sign(diff) / count


def l1_loss(pred: Tensor, target) -> Tensor:
    """Mean absolute difference; subgradient 0 at exact ties."""
    target = T.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"l1_loss: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def backward(g):
        gp = _l1_grad(diff, n) * g
        return gp, -gp

    return T._make(np.asarray(np.abs(diff).mean()), (pred, target), backward, "l1_loss")


# ----------------------------------------------------------------- optimizer

@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.999
    weight_decay: float = 0.01
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> dict[str, np.ndarray]:
    """One AdamW update with decoupled weight decay; returns the new parameter dict."""
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}; step aborted")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = {}
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = b1 * state.m.get(name, np.zeros_like(theta)) + (1.0 - b1) * g
        v = b2 * state.v.get(name, np.zeros_like(theta)) + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat, v_hat = m / c1, v / c2
        out[name] = theta - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * theta)
    return out


# ----------------------------------------------------------------- training

@dataclass
class TrainRunConfig:
    epochs: int = 50
    batch_size: int = 6
    crop_size: int = 48          # HR pixels
    seed: int = 0
    eval_every: int = 1
    checkpoint_path: str | None = None
    steps_per_epoch: int | None = None   # default: one pass over the training pairs
    lr: float = 1e-4
    beta1: float = 0.99
    beta2: float = 0.999
    weight_decay: float = 0.01
    eps: float = 1e-8

    def validate(self, net: NetworkConfig) -> None:
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.crop_size % net.scale or self.crop_size < net.patch * net.scale:
            raise ConfigurationError(
                f"crop_size {self.crop_size} must be divisible by {net.scale} and >= {net.patch * net.scale}")


@dataclass
class EpochLog:
    epoch: int
    loss: float
    psnr: float
    ssim: float

    def line(self) -> str:
        return f"{self.epoch}\t{self.loss:.8f}\t{self.psnr:.6f}\t{self.ssim:.6f}"


@dataclass
class TrainResult:
    params: ModelParams
    log: list[EpochLog]
    steps: int
    seconds: float

    def log_text(self) -> str:
        return "epoch\tloss\tpsnr\tssim\n" + "".join(e.line() + "\n" for e in self.log)


def load_pairs(manifest: DatasetManifest, root=None) -> list[tuple[np.ndarray, np.ndarray]]:
    base = Path(root) if root is not None else None
    pairs = []
    for hr_path, lr_path, _ in manifest.entries:
        hp, lp = Path(hr_path), Path(lr_path)
        if base is not None:
            hp, lp = base / hp, base / lp
        try:
            pairs.append((read_image(hp), read_image(lp)))
        except OSError as exc:
            raise OSError(f"cannot read training pair ({hp}, {lp}): {exc}") from exc
    return pairs


def super_resolve(lr: np.ndarray, params: ModelParams) -> np.ndarray:
    """2-D LR image -> clamped 2-D SR image."""
    out = forward(Tensor(lr[None, None]), params).data[0, 0]
    return np.clip(out, 0.0, 1.0)


def evaluate_pairs(params: ModelParams, pairs) -> tuple[float, float]:
    ps, ss = [], []
    for hr, lr in pairs:
        sr = super_resolve(lr, params)
        ps.append(psnr(sr, hr))
        ss.append(ssim(sr, hr))
    return float(np.mean(ps)), float(np.mean(ss))


def bicubic_baseline(pairs, scale: int) -> tuple[float, float]:
    ps, ss = [], []
    for hr, lr in pairs:
        up = bicubic_upsample(Tensor(lr[None, None]), scale).data[0, 0]
        ps.append(psnr(up, hr))
        ss.append(ssim(up, hr))
    return float(np.mean(ps)), float(np.mean(ss))


def _sample_batch(pairs, indices, crop: int, scale: int, rng: np.random.Generator):
    lc = crop // scale
    lrs, hrs = [], []
    for i in indices:
        hr, lr = pairs[i]
        y = int(rng.integers(0, lr.shape[0] - lc + 1))
        x = int(rng.integers(0, lr.shape[1] - lc + 1))
        lrs.append(lr[y:y + lc, x:x + lc])
        hrs.append(hr[y * scale:(y + lc) * scale, x * scale:(x + lc) * scale])
    return np.stack(lrs)[:, None], np.stack(hrs)[:, None]


def train_step(params: ModelParams, lr_batch: np.ndarray, hr_batch: np.ndarray, state: OptimState) -> float:
    leaves = as_tensors(params, requires_grad=True)
    loss = l1_loss(forward(Tensor(lr_batch), params, leaves), hr_batch)
    loss.backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    params.weights = adamw_step(params.weights, grads, state)
    return float(loss.data)


def train_pairs(params: ModelParams, train: list, test: list, run: TrainRunConfig,
                on_epoch: Callable[[EpochLog], None] | None = None) -> TrainResult:
    """Train on in-memory (hr, lr) pairs; returns the final parameters and a per-epoch log.

    Epoch 0 is the evaluation of the initial parameters.
    """
    net = params.config
    run.validate(net)
    if not train:
        raise ConfigurationError("training set is empty")
    lc = run.crop_size // net.scale
    for hr, lr in train:
        if min(lr.shape) < lc:
            raise ConfigurationError(f"LR image {lr.shape} smaller than crop {lc}")
    params = params.copy()
    rng = rng_for(run.seed)
    state = OptimState(lr=run.lr, beta1=run.beta1, beta2=run.beta2, weight_decay=run.weight_decay, eps=run.eps)
    steps_per_epoch = run.steps_per_epoch or math.ceil(len(train) / run.batch_size)
    start = time.perf_counter()
    log: list[EpochLog] = []

    def record(epoch, loss):
        p, s = evaluate_pairs(params, test) if test else (float("nan"), float("nan"))
        entry = EpochLog(epoch, loss, p, s)
        log.append(entry)
        if on_epoch:
            on_epoch(entry)
        if run.checkpoint_path:
            save_params(run.checkpoint_path, params)

    record(0, float("nan"))
    steps = 0
    for epoch in range(1, run.epochs + 1):
        need = steps_per_epoch * run.batch_size
        order = np.concatenate([rng.permutation(len(train)) for _ in range(-(-need // len(train)))])[:need]
        losses = []
        for k in range(steps_per_epoch):
            idx = order[k * run.batch_size:(k + 1) * run.batch_size]
            lr_b, hr_b = _sample_batch(train, idx, run.crop_size, net.scale, rng)
            try:
                loss = train_step(params, lr_b, hr_b, state)
            except NonFiniteError as exc:
                raise NonFiniteError(f"epoch {epoch}, batch {k}, images {idx.tolist()}: {exc}") from exc
            losses.append(loss)
            steps += 1
        if epoch % run.eval_every == 0 or epoch == run.epochs:
            record(epoch, float(np.mean(losses)))
    return TrainResult(params, log, steps, time.perf_counter() - start)


def train(params: ModelParams, manifest: DatasetManifest, run: TrainRunConfig,
          test_manifest: DatasetManifest | None = None, root=None, log_path=None) -> TrainResult:
    if not manifest.entries:
        raise ConfigurationError("manifest is empty")
    train_set = load_pairs(manifest, root)
    test_set = load_pairs(test_manifest, root) if test_manifest is not None else []
    result = train_pairs(params, train_set, test_set, run)
    if log_path is not None:
        atomic_write_bytes(log_path, result.log_text().encode("utf-8"))
    return result


# ----------------------------------------------------------------- gradient-check suite

def _rand(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _gc_fixed_operators(rng) -> float:
    return T.grad_check(lambda x: edge_magnitude(x), [_rand(rng, 1, 2, 5, 5)], name="edge_magnitude")


def _gc_mco(rng) -> float:
    c = 4
    shapes = [(c, c, 1, 1), (c,), (c, c, 3, 3), (c,), (c, c, 5, 5), (c,), (c, c, 3, 3), (c,)]
    arrays = [_rand(rng, 1, c, 5, 5)] + [0.5 * _rand(rng, *s) for s in shapes]

    def f(x, *w):
        p = McoParams(ConvParams(w[0], w[1]), ConvParams(w[2], w[3]), ConvParams(w[4], w[5]), ConvParams(w[6], w[7]))
        return mco_forward(x, p)

    return T.grad_check(f, arrays, name="mco")


def _gc_msc(rng) -> float:
    c = 4
    arrays = [_rand(rng, 1, c, 4, 4), _rand(rng, c, 1, 3, 3), _rand(rng, c), 0.5 * _rand(rng, c, c, 3, 3), _rand(rng, c)]

    def f(x, dw, db, fw, fb):
        return msc_forward(x, MscParams(ConvParams(dw, db), ConvParams(fw, fb)))

    return T.grad_check(f, arrays, name="msc")


def _gc_asgnn(rng) -> float:
    c = 4
    planes = make_planes(c, 4, seed=int(rng.integers(1 << 31)))

    def f(x, w_g):
        return asgnn_forward(x, AsgnnParams(w_g=w_g, lsh_planes=planes), p=2, alpha=1.0)

    return T.grad_check(f, [_rand(rng, 1, c, 4, 4), _rand(rng, c, c)], name="asgnn")


TINY_CONFIG = dict(scale=2, width=4, fem_count=1, dfcm_per_fem=1, patch=2, alpha=1.0)


def _gc_network(rng) -> float:
    config = NetworkConfig(**TINY_CONFIG)
    base = param_init(config, seed=int(rng.integers(1 << 31)))
    names = list(base.weights)
    # randomise biases and the zero tail so every path carries gradient
    arrays = [rng.uniform(0.0, 1.0, size=(1, 1, 8, 8))]
    arrays += [w + 0.1 * _rand(rng, *w.shape) for w in base.weights.values()]

    def f(x, *ws):
        return forward(x, base, dict(zip(names, ws)))

    return T.grad_check(f, arrays, name="network")


def _gc_l1(rng) -> float:
    pred = _away_from_zero(rng, (1, 1, 4, 4))
    target = np.zeros((1, 1, 4, 4))
    return T.grad_check(lambda p, t: l1_loss(p, t), [pred, target], name="l1_loss")


GRADCHECK_BLOCKS: dict[str, Callable[[np.random.Generator], float]] = {
    "fixed_operators": _gc_fixed_operators,
    "mco": _gc_mco,
    "msc": _gc_msc,
    "asgnn": _gc_asgnn,
    "network": _gc_network,
    "l1_loss": _gc_l1,
}


@dataclass
class GradcheckRow:
    block: str
    max_rel_error: float
    seconds: float
    passed: bool


@dataclass
class GradcheckReport:
    rows: list[GradcheckRow]
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def failed_blocks(self) -> list[str]:
        return [r.block for r in self.rows if not r.passed]

    def text(self) -> str:
        lines = ["block\tmax_rel_error\tseconds\tstatus"]
        for r in self.rows:
            lines.append(f"{r.block}\t{r.max_rel_error:.3e}\t{r.seconds:.2f}\t{'PASS' if r.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def gradcheck_suite(tolerance: float = 1e-6, seed: int = 0, blocks=None) -> GradcheckReport:
    """Central-difference check of every differentiable block; one row per block."""
    rows = []
    for name in blocks or GRADCHECK_BLOCKS:
        rng = rng_for(seed)
        t0 = time.perf_counter()
        err = GRADCHECK_BLOCKS[name](rng)
        rows.append(GradcheckRow(name, err, time.perf_counter() - t0, err <= tolerance))
    return GradcheckReport(rows, tolerance)
