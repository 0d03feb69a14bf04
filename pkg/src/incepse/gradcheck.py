"""Central finite-difference checks of tape gradients, always in float64.

Each check reduces the output under test to a scalar with fixed random
weights, ``loss = sum(w * f(inputs))``, so no gradient component can cancel
by symmetry. The reported error for one input is::

    max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, FLOOR)

where ``FLOOR`` keeps exactly-zero components (dead ReLUs, unselected pool
positions) from dividing by zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import layers as L
from .autodiff import Tape, Tensor
from .model import IncepSEConfig, ModelParams, _layer_params, bind, incepse_layer, init_params, layer_plan, model_forward

__all__ = ["FLOOR", "relative_error", "numeric_gradient", "CheckResult", "check_function",
           "op_suite", "layer_check", "mini_model_check"]

FLOOR = 1e-6
STEP = 1e-5


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), FLOOR)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Central differences of ``f`` with respect to ``x``, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    per_input: dict[str, float]

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def _weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.reduce("sum", ad.mul(out, Tensor(weights)))


def check_function(name: str, fn: Callable[..., Tensor], arrays: dict[str, np.ndarray],
                   rng: np.random.Generator, differentiate: Sequence[str] | None = None) -> CheckResult:
    """Compare tape and finite-difference gradients of ``fn(**tensors)``.

    ``arrays`` are float64 and are perturbed in place during the numeric pass.
    """
    differentiate = list(arrays) if differentiate is None else list(differentiate)
    probe = fn(**{k: Tensor(v) for k, v in arrays.items()})
    weights = rng.standard_normal(probe.shape) / np.sqrt(probe.values.size)

    tape = Tape()
    leaves = {k: (tape.leaf(v) if k in differentiate else Tensor(v)) for k, v in arrays.items()}
    grads = tape.backward(_weighted_sum(fn(**leaves), weights))

    def scalar() -> float:
        out = fn(**{k: Tensor(v) for k, v in arrays.items()})
        return float(np.sum(out.values * weights))

    errors = {}
    for k in differentiate:
        analytic = grads[leaves[k]].copy()
        errors[k] = relative_error(analytic, numeric_gradient(scalar, arrays[k]))
    return CheckResult(name, max(errors.values()), errors)


def _u(rng, *shape):
    return rng.uniform(-1.0, 1.0, size=shape)


def op_suite(seed: int = 0) -> list[CheckResult]:
    """One check per primitive on random float64 inputs in [-1, 1]."""
    rng = np.random.default_rng(seed)
    checks: list[CheckResult] = []

    def run(name, fn, **arrays):
        checks.append(check_function(name, fn, arrays, rng))

    run("add", lambda a, b: ad.add(a, b), a=_u(rng, 3, 4), b=_u(rng, 3, 4))
    run("mul", lambda a, b: ad.mul(a, b), a=_u(rng, 3, 4), b=_u(rng, 3, 4))
    run("scale", lambda a: ad.scale(a, -2.5), a=_u(rng, 5))
    run("add_scalar", lambda a: ad.add_scalar(a, 0.7), a=_u(rng, 5))
    run("relu", lambda a: ad.relu(a), a=_u(rng, 2, 3, 7))
    run("sigmoid", lambda a: ad.sigmoid(a), a=_u(rng, 2, 3, 7))
    run("matmul", lambda a, b: ad.matmul(a, b), a=_u(rng, 3, 4), b=_u(rng, 4, 2))
    run("reduce_sum", lambda a: ad.reduce("sum", a, axes=(0, 2)), a=_u(rng, 2, 3, 4))
    run("reduce_mean", lambda a: ad.reduce("mean", a, axes=1, keepdims=True), a=_u(rng, 2, 3, 4))
    run("concat", lambda a, b, c: ad.concat([a, b, c], axis=1),
        a=_u(rng, 2, 1, 5), b=_u(rng, 2, 3, 5), c=_u(rng, 2, 2, 5))
    for k, s in ((1, 1), (3, 1), (9, 2), (4, 2)):
        run(f"conv1d_k{k}_s{s}", lambda x, w, b, k=k, s=s: L.conv1d(x, L.ConvParams(w, b, s)),
            x=_u(rng, 2, 3, 11), w=_u(rng, 4, 3, k), b=_u(rng, 4))
    run("conv1d_nobias", lambda x, w: L.conv1d(x, L.ConvParams(w, None, 1)), x=_u(rng, 2, 2, 9), w=_u(rng, 3, 2, 5))
    for s in (1, 2):
        run(f"maxpool1d_s{s}", lambda x, s=s: L.maxpool1d(x, 3, s), x=_u(rng, 2, 3, 10))
    for mode in ("train", "eval"):
        def bn(x, gamma, beta, mode=mode):
            c = x.shape[1]
            state = L.BatchNormState(gamma, beta, np.full(c, 0.1), np.full(c, 1.3), mode=mode)
            return L.batchnorm1d(x, state)
        run(f"batchnorm1d_{mode}", bn, x=_u(rng, 3, 4, 6), gamma=_u(rng, 4), beta=_u(rng, 4))
    run("linear", lambda x, w, b: L.linear(x, L.LinearParams(w, b)), x=_u(rng, 3, 4), w=_u(rng, 5, 4), b=_u(rng, 5))
    run("global_avg_pool", lambda x: L.global_avg_pool(x), x=_u(rng, 2, 3, 8))
    run("dropout", lambda x: L.dropout(x, 0.3, "train", np.random.default_rng(5)), x=_u(rng, 2, 3, 8))
    run("channel_scale", lambda x, w: L.channel_scale(x, w), x=_u(rng, 2, 3, 8), w=_u(rng, 2, 3))
    targets = (rng.random((3, 4)) < 0.5).astype(np.float64)
    run("bce_with_logits", lambda z: L.bce_with_logits(z, targets), z=rng.uniform(-3, 3, (3, 4)))
    return checks


def _small_config(**kw) -> IncepSEConfig:
    base = dict(input_channels=3, depth=2, branch_channels=4, bottleneck_channels=4, se_reduction=2,
                num_classes=3, dropout_p=0.0)
    base.update(kw)
    return IncepSEConfig(**base)


def layer_check(seed: int = 0, final: bool = False, length: int = 48, batch: int = 2) -> CheckResult:
    """Gradient check of one IncepSE layer (train-mode BN) w.r.t. its input and all parameters."""
    rng = np.random.default_rng(seed)
    cfg = _small_config(depth=1) if final else _small_config(depth=2)
    m = init_params(cfg, seed)
    for name, arr in m.params.items():  # make biases and BN affine non-trivial
        if name.endswith("bias") or "bn." in name:
            arr[...] = rng.uniform(-0.5, 0.5, arr.shape) + (1.0 if name.endswith("gamma") else 0.0)
    ls = layer_plan(cfg)[0]
    prefix = "layers.0."
    names = [n for n in m.params if n.startswith(prefix)]
    arrays = {"x": _u(rng, batch, cfg.input_channels, length)}
    arrays.update({n.replace(".", "__"): m.params[n] for n in names})

    def fn(x, **ws):
        weights = {n: ws[n.replace(".", "__")] for n in names}
        p = _layer_params(weights, m.buffers, 0, ls.stride, "train", cfg.pool_branch_kernel)
        return incepse_layer(x, p)

    return check_function("incepse_layer_final" if final else "incepse_layer", fn, arrays, rng)


def mini_model_check(seed: int = 0, length: int = 48, batch: int = 2, input_channels: int = 12) -> CheckResult:
    """End-to-end check of a depth-2 model: BCE loss w.r.t. every parameter."""
    rng = np.random.default_rng(seed)
    cfg = _small_config(input_channels=input_channels, dropout_p=0.1)
    m = init_params(cfg, seed)
    for name, arr in m.params.items():
        if name.endswith("bias") or "bn." in name:
            arr[...] = rng.uniform(-0.5, 0.5, arr.shape) + (1.0 if name.endswith("gamma") else 0.0)
    x = Tensor(_u(rng, batch, cfg.input_channels, length))
    y = (rng.random((batch, cfg.num_classes)) < 0.5).astype(np.float64)

    def loss_value() -> float:
        return L.bce_with_logits(model_forward(x, m, "train", np.random.default_rng(11)), y).item()

    tape = Tape()
    weights = bind(m, tape)
    grads = tape.backward(L.bce_with_logits(model_forward(x, m, "train", np.random.default_rng(11), weights), y))
    analytic = {n: grads[t].copy() for n, t in weights.items()}
    errors = {n: relative_error(analytic[n], numeric_gradient(loss_value, m.params[n])) for n in m.params}
    return CheckResult("mini_model", max(errors.values()), errors)
