"""Finite-difference gradient checks and the packaged gradient suite."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Sequence

import numpy as np

from . import attention as attn
from . import network as net
from . import ops
from .losses import loss_total
from .params import ParamStore, init_from_spec
from .tensor import Tape, Tensor, backward

DEFAULT_STEP = 1e-4


def gradcheck(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], step: float = DEFAULT_STEP,
              max_coords: int | None = None, seed: int = 0) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|, |numeric|).

    ``fn`` maps Tensors to a scalar Tensor. Inputs are treated as fp64.
    ``max_coords`` limits the check to a random subset of coordinates per input.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with Tape() as tape:
        out = fn(*leaves)
    backward(tape, out, leaves)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for leaf, arr in zip(leaves, arrays):
        flat = arr.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        analytic = leaf.grad.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig - step
            f_minus = float(fn(*[Tensor(a) for a in arrays]).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, err)
    return worst


def params_gradcheck(loss_fn: Callable[[ParamStore], Tensor], params: ParamStore,
                     step: float = DEFAULT_STEP, max_coords_per_tensor: int = 3,
                     seed: int = 0) -> float:
    """Like :func:`gradcheck` but perturbing a sample of coordinates in every parameter."""
    with Tape() as tape:
        out = loss_fn(params)
    backward(tape, out, params.tensors())
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _, t in params.items():
        flat = t.data.reshape(-1)
        analytic = t.grad.reshape(-1)
        k = min(max_coords_per_tensor, flat.size)
        for i in rng.choice(flat.size, size=k, replace=False):
            orig = flat[i]
            flat[i] = orig + step
            f_plus = float(loss_fn(params).data)
            flat[i] = orig - step
            f_minus = float(loss_fn(params).data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]), abs(numeric))
            worst = max(worst, err)
    return worst


def randomize(params: ParamStore, seed: int, scale: float = 0.3) -> ParamStore:
    """Replace every tensor with O(scale) noise so no branch is trivially zero."""
    rng = np.random.default_rng(seed)
    for _, t in params.items():
        t.data[...] = rng.standard_normal(t.shape) * scale
    return params


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)


def _weighted_sum(y: Tensor, seed: int = 1) -> Tensor:
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return ops.sum(ops.mul(y, w))


def _isolated_cases(rng):
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    x4 = r(2, 3, 5, 6)
    return [
        ("conv2d", lambda x, w, b: _weighted_sum(ops.conv2d(x, w, b, stride=2, pad=1)),
         [x4, r(4, 3, 3, 3), r(4)]),
        ("conv2d_1x1", lambda x, w, b: _weighted_sum(ops.conv2d(x, w, b)), [x4, r(4, 3, 1, 1), r(4)]),
        ("conv_transpose2d", lambda x, w, b: _weighted_sum(ops.conv_transpose2d(x, w, b, stride=2)),
         [x4, r(3, 2, 2, 2), r(2)]),
        ("depthwise_conv2d", lambda x, w, b: _weighted_sum(ops.depthwise_conv2d(x, w, b, pad=1)),
         [x4, r(3, 1, 3, 3), r(3)]),
        ("layer_norm", lambda x, g, b: _weighted_sum(ops.layer_norm(x, g, b)), [x4, r(3), r(3)]),
        ("softmax", lambda x: _weighted_sum(ops.softmax(x)), [r(3, 7)]),
        ("gelu", lambda x: _weighted_sum(ops.gelu(x)), [r(4, 5)]),
        ("sigmoid", lambda x: _weighted_sum(ops.sigmoid(x)), [r(4, 5)]),
        ("matmul", lambda a, b: _weighted_sum(ops.matmul(a, b)), [r(2, 3, 4), r(4, 5)]),
        ("linear", lambda x, w, b: _weighted_sum(ops.linear(x, w, b)), [r(2, 3, 4), r(5, 4), r(5)]),
        ("spectral_mix", lambda x, w, b: _weighted_sum(ops.spectral_mix(x, w, b)),
         [r(1, 2, 5, 6), r(2, 3, 2), r(2, 3)]),
        ("pad_reflect", lambda x: _weighted_sum(ops.pad_reflect(x, 3, 2)), [r(1, 2, 3, 2)]),
        ("roll", lambda x: _weighted_sum(ops.roll(x, (1, -2), (2, 3))), [r(1, 2, 3, 4)]),
        ("take", lambda x: _weighted_sum(ops.take(x, np.array([[0, 2], [2, 1]]), axis=0)), [r(3, 2)]),
        ("div_mul_square", lambda a, b: ops.sum(ops.div(ops.square(a), ops.add(ops.mul(b, b), 1.0))),
         [r(3, 4), r(1, 4)]),
    ]


def isolated_op_checks(seed: int = 0) -> List[CheckResult]:
    rng = np.random.default_rng(seed)
    out = []
    for name, fn, inputs in _isolated_cases(rng):
        t0 = time.perf_counter()
        err = gradcheck(fn, inputs)
        out.append(CheckResult(f"op:{name}", err, 1e-5, time.perf_counter() - t0))
    return out


def _composite_cases(seed: int):
    rng = np.random.default_rng(seed)
    cases = []

    c, window = 8, (4, 4)
    dha_p = randomize(init_from_spec(attn.dha_spec(c, 1, window), 0, np.float64), seed + 1)
    x_dha = rng.standard_normal((1, c, 8, 8))
    cases.append(("dha_forward", lambda x: _weighted_sum(attn.dha_forward(x, dha_p.scope(""), window, 1)),
                  [x_dha], dha_p))

    ada_p = randomize(init_from_spec(attn.ada_spec(c, 1, (4, 4), (2, 2), 2), 0, np.float64), seed + 2)
    x_ada = rng.standard_normal((1, c, 8, 8))
    cases.append(("ada_forward",
                  lambda x: _weighted_sum(attn.ada_forward(x, ada_p.scope(""), (4, 4), (2, 2), 1)),
                  [x_ada], ada_p))

    cfg = net.ModelConfig(levels=1, base_channels=8, blocks_per_level=[1], decoder_blocks_per_level=[1],
                          block=(4, 4), grid=(2, 2), head_dim=8)
    cg_p = randomize(init_from_spec(net.cross_gate_spec(cfg, c, c, 1), 0, np.float64), seed + 3)
    y_cg = rng.standard_normal((1, c, 8, 8))
    cases.append(("cross_gate", lambda x, y: _weighted_sum(net.cross_gate(x, y, cg_p.scope(""), cfg, 1)),
                  [rng.standard_normal((1, c, 8, 8)), y_cg], cg_p))

    target = rng.random((1, 3, 16, 16))
    cases.append(("loss_total", lambda p: loss_total(p, target).tensor,
                  [np.clip(target + 0.1 * rng.standard_normal(target.shape), 0, 1)], None))
    return cases


def toy_network_case(seed: int = 0, size: int = 16):
    cfg = net.ModelConfig(levels=2, base_channels=8, blocks_per_level=[1, 1], decoder_blocks_per_level=[1, 1],
                          window=(4, 4), block=(4, 4), grid=(2, 2), head_dim=8)
    params = randomize(net.init_params(cfg, seed, np.float64), seed + 7, scale=0.2)
    rng = np.random.default_rng(seed)
    image = rng.random((1, 3, size, size))
    target = rng.random((1, 3, size, size))

    def loss_fn(p):
        return loss_total(net.rganet_forward(Tensor(image), cfg, p, train=True), target).tensor

    return cfg, params, image, target, loss_fn


def composite_checks(seed: int = 0, full_network: bool = True) -> List[CheckResult]:
    out = []
    for name, fn, inputs, params in _composite_cases(seed):
        t0 = time.perf_counter()
        err = gradcheck(fn, inputs, max_coords=24, seed=seed)
        if params is not None:
            closure = lambda p, fn=fn, inputs=inputs: fn(*[Tensor(a) for a in inputs])  # noqa: E731
            err = max(err, params_gradcheck(closure, params, seed=seed))
        out.append(CheckResult(f"composite:{name}", err, 1e-3, time.perf_counter() - t0))
    if full_network:
        t0 = time.perf_counter()
        cfg, params, image, target, loss_fn = toy_network_case(seed)
        err = params_gradcheck(loss_fn, params, max_coords_per_tensor=2, seed=seed)
        err = max(err, gradcheck(
            lambda x: loss_total(net.rganet_forward(x, cfg, params, train=True), target).tensor,
            [image], max_coords=24, seed=seed))
        out.append(CheckResult("composite:rganet_forward", err, 1e-3, time.perf_counter() - t0))
    return out


def run_suite(seed: int = 0, full_network: bool = True) -> List[CheckResult]:
    return isolated_op_checks(seed) + composite_checks(seed, full_network)
