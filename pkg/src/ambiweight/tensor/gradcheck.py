"""Central finite-difference checks for every differentiable op and a full model.

Relative error is ``||analytic - numeric|| / max(||analytic||, ||numeric||)``
over the whole gradient of one input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .core import Tensor

OP_TOL_64 = 1e-7
MODEL_TOL_32 = 1e-3
H_64 = 1e-5
H_32 = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.rel_error < self.tol)


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def numeric_grad(f: Callable[[], float], x: np.ndarray, h: float, coords: Sequence[int] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. the array ``x`` (perturbed in place)."""
    flat = x.reshape(-1)
    coords = range(flat.size) if coords is None else coords
    out = np.zeros(len(coords) if not isinstance(coords, range) else flat.size, dtype=np.float64)
    for k, i in enumerate(coords):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        out[k] = (fp - fm) / (2 * h)
    return out


def check_function(
    name: str,
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    h: float = H_64,
    tol: float = OP_TOL_64,
    seed: int = 0,
) -> list[CheckResult]:
    """Check d(sum(fn(*inputs) * R))/d(input) for every input, R a fixed random projection."""
    tensors = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    probe = fn(*tensors)
    proj = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar() -> float:
        return float((fn(*tensors).data * proj).sum())

    out = fn(*tensors)
    (out * Tensor(proj)).sum().backward()
    results = []
    for i, t in enumerate(tensors):
        num = numeric_grad(scalar, t.data, h)
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        results.append(CheckResult(f"{name}[arg{i}]", relative_error(ana, num), tol))
    return results


def _fixed_rng(seed: int):
    """Factory giving a freshly seeded generator per forward, so masks repeat across evaluations."""
    return lambda: np.random.default_rng(seed)


def op_suite(seed: int = 0) -> list[CheckResult]:
    from ..loss import multilabel_loss_from_logits

    rng = np.random.default_rng(seed)
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    res: list[CheckResult] = []
    res += check_function("add", lambda a, b: a + b, [r(3, 4), r(4)])
    res += check_function("sub", lambda a, b: a - b, [r(3, 4), r(3, 1)])
    res += check_function("mul", lambda a, b: a * b, [r(3, 4), r(3, 4)])
    res += check_function("div", lambda a, b: a / b, [r(3, 4), pos(3, 4)])
    res += check_function("pow", lambda a: a**3, [r(5)])
    res += check_function("matmul", lambda a, b: a @ b, [r(3, 5), r(5, 2)])
    res += check_function("sum_axis", lambda a: a.sum(axis=1), [r(3, 4)])
    res += check_function("mean", lambda a: a.mean(axis=0, keepdims=True), [r(3, 4)])
    res += check_function("reshape_transpose", lambda a: a.reshape(4, 3).transpose(1, 0), [r(3, 4)])
    res += check_function("exp", lambda a: a.exp(), [r(6)])
    res += check_function("log", lambda a: a.log(), [pos(6)])
    res += check_function("tanh", lambda a: a.tanh(), [r(6)])
    res += check_function("relu", F.relu, [r(4, 5)])
    res += check_function("sigmoid", F.sigmoid, [r(4, 5) * 3])
    res += check_function("dense", F.dense, [r(4, 3), r(3, 2), r(2)])
    res += check_function("global_avg_pool", F.global_avg_pool, [r(2, 3, 4, 4)])
    for d in (1, 2):
        res += check_function(
            f"conv2d_dil{d}",
            lambda x, w, b, d=d: F.conv2d(x, w, b, dilation=d, padding="same"),
            [r(2, 3, 6, 6), r(4, 3, 3, 3), r(4)],
        )
    res += check_function(
        "conv2d_stride2_1x1", lambda x, w: F.conv2d(x, w, stride=2, padding="same"), [r(2, 3, 5, 5), r(2, 3, 1, 1)]
    )
    res += check_function(
        "conv2d_stride2_3x3_pad0", lambda x, w: F.conv2d(x, w, stride=2, padding=0), [r(1, 2, 7, 7), r(3, 2, 3, 3)]
    )
    for training in (True, False):
        rm, rv = rng.standard_normal(3) * 0.1, rng.uniform(0.5, 1.5, 3)

        def bn(x, g, b, training=training, rm=rm, rv=rv):
            return F.batch_norm(x, g, b, rm.copy(), rv.copy(), training)

        res += check_function(f"batch_norm_{'train' if training else 'eval'}", bn, [r(4, 3, 3, 3), pos(3), r(3)])
    mk = _fixed_rng(seed + 1)
    res += check_function("dropout", lambda x: F.dropout(x, 0.5, mk(), True), [r(4, 6)])
    res += check_function("spatial_dropout", lambda x: F.spatial_dropout(x, 0.2, mk(), True), [r(3, 5, 4, 4)])
    res += check_function("gaussian_noise", lambda x: F.gaussian_noise(x, 0.3, mk(), True), [r(2, 3, 4, 4)])
    y = (rng.random((5, 4)) < 0.5).astype(np.float64)
    w1, w0 = rng.uniform(0.1, 1, (5, 4)), rng.uniform(0.1, 1, (5, 4))
    res += check_function("wbce_logits", lambda z: multilabel_loss_from_logits(z, y, w1, w0), [r(5, 4) * 2])
    # shared subexpression: x feeds three paths
    res += check_function("fanout_dag", lambda x: (x * x + F.sigmoid(x) * x).sum(axis=0) + x.sum(axis=0), [r(3, 4)])
    return res


def model_suite(seed: int = 0, n_dirs: int = 12) -> list[CheckResult]:
    """Desk-scale custom net (no batch norm) on a 4-sample batch.

    64-bit: per-coordinate check on a sample of parameters. 32-bit: central
    differences along random directions in parameter space.
    """
    from ..loss import multilabel_loss_from_logits
    from ..models import CustomNetConfig, build_model

    cfg = CustomNetConfig(use_batch_norm=False, head_count=4)
    data_rng = np.random.default_rng(seed)
    x = data_rng.uniform(0, 1, (4, 1, cfg.input_size, cfg.input_size))
    y = (data_rng.random((4, 4)) < 0.5).astype(np.float64)
    w1, w0 = data_rng.uniform(0.2, 1, (4, 4)), data_rng.uniform(0.2, 1, (4, 4))
    results = []
    for dtype in (np.float64, np.float32):
        model = build_model(cfg, seed=seed).astype(dtype).train()
        # a fresh norm-free net emits logits of |z| ~ 40, where the clamped loss
        # is flat; shrink the head so every element sits in the smooth region
        model.head.weight.data *= dtype(0.02)
        params = [p for _, p in model.named_parameters()]
        xt = Tensor(x.astype(dtype))

        def loss_tensor():
            model.set_rng(np.random.default_rng(seed + 7))
            return multilabel_loss_from_logits(model(xt), y, w1, w0)

        model.zero_grad()
        loss_tensor().backward()
        grads = [p.grad.astype(np.float64) for p in params]

        if dtype is np.float64:
            ana, num = [], []
            sel_rng = np.random.default_rng(seed + 11)
            for p, g in zip(params, grads):
                coords = sel_rng.choice(p.size, size=min(3, p.size), replace=False)
                num.append(numeric_grad(lambda: loss_tensor().item(), p.data, H_64, coords))
                ana.append(g.reshape(-1)[coords])
            results.append(
                CheckResult("custom_net_64bit", relative_error(np.concatenate(ana), np.concatenate(num)), OP_TOL_64 * 10)
            )
        else:
            dir_rng = np.random.default_rng(seed + 13)
            ana, num = [], []
            for _ in range(n_dirs):
                v = [dir_rng.standard_normal(p.shape).astype(dtype) for p in params]
                norm = np.sqrt(sum(float((vi.astype(np.float64) ** 2).sum()) for vi in v))
                v = [vi / dtype(norm) for vi in v]
                base = [p.data.copy() for p in params]
                for p, b, vi in zip(params, base, v):
                    p.data = b + dtype(H_32) * vi
                fp = loss_tensor().item()
                for p, b, vi in zip(params, base, v):
                    p.data = b - dtype(H_32) * vi
                fm = loss_tensor().item()
                for p, b in zip(params, base):
                    p.data = b
                num.append((fp - fm) / (2 * H_32))
                ana.append(sum(float((g * vi.astype(np.float64)).sum()) for g, vi in zip(grads, v)))
            results.append(CheckResult("custom_net_32bit", relative_error(np.array(ana), np.array(num)), MODEL_TOL_32))
    return results


def run_suite(seed: int = 0) -> list[CheckResult]:
    return op_suite(seed) + model_suite(seed)
