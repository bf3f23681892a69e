"""Central-difference gradient checking for the layers in :mod:`bathcls.nn`.

Each ``check_*`` helper draws seeded random float64 inputs, reduces the
layer output to a scalar with a fixed random projection, and compares the
analytic gradients against numeric ones.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import nn

STEP = 1e-5
TOLERANCE = 1e-4
MAX_ELEMENTS = 10_000


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    passed: bool
    per_tensor: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name:<32s} max_rel_err={self.max_rel_error:.3e}"


def relative_error(a: np.ndarray, n: np.ndarray) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)


def grad_check(
    loss_fn: Callable[[], float],
    tensors: dict,
    analytic: dict,
    tolerance: float = TOLERANCE,
    step: float = STEP,
    max_elements: int = MAX_ELEMENTS,
    seed: int = 0,
    name: str = "grad_check",
) -> GradCheckReport:
    """Compare ``analytic`` gradients to central differences of ``loss_fn``.

    ``tensors`` maps names to the arrays ``loss_fn`` reads; they are perturbed
    in place and restored. When the total element count exceeds
    ``max_elements`` a seeded random subsample of that size is checked.
    """
    sizes = {k: tensors[k].size for k in tensors}
    total = sum(sizes.values())
    flat_index = [(k, i) for k in tensors for i in range(sizes[k])]
    if total > max_elements:
        rng = np.random.default_rng(seed)
        pick = np.sort(rng.choice(total, size=max_elements, replace=False))
        flat_index = [flat_index[i] for i in pick]

    worst = {k: 0.0 for k in tensors}
    for k, i in flat_index:
        arr = tensors[k].reshape(-1)
        if not np.shares_memory(arr, tensors[k]):
            raise ValueError(f"tensor {k!r} must be contiguous to be perturbed in place")
        orig = arr[i]
        arr[i] = orig + step
        plus = loss_fn()
        arr[i] = orig - step
        minus = loss_fn()
        arr[i] = orig
        num = (plus - minus) / (2 * step)
        ana = float(analytic[k].reshape(-1)[i])
        if not (np.isfinite(num) and np.isfinite(ana)):
            raise FloatingPointError(f"non-finite gradient for {k}[{i}]: analytic={ana}, numeric={num}")
        err = float(relative_error(np.float64(ana), np.float64(num)))
        worst[k] = max(worst[k], err)
    max_err = max(worst.values(), default=0.0)
    return GradCheckReport(name, max_err, max_err < tolerance, worst)


def _projection(rng, shape):
    return rng.standard_normal(shape)


def check_conv2d(seed: int = 0, shape=(1, 5, 5, 2), cout: int = 3, k: int = 3) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((k, k, shape[-1], cout))
    b = rng.standard_normal(cout)
    r = _projection(rng, shape[:-1] + (cout,))
    y, cache = nn.conv2d_forward(x, w, b)
    dx, dw, db = nn.conv2d_backward(r, cache)
    fn = lambda: float((nn.conv2d_forward(x, w, b)[0] * r).sum())
    return grad_check(fn, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db}, seed=seed, name="conv2d")


def check_dense(seed: int = 0, n: int = 2, d: int = 6, u: int = 1) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    w = rng.standard_normal((d, u))
    b = rng.standard_normal(u)
    r = _projection(rng, (n, u))
    _, cache = nn.dense_forward(x, w, b)
    dx, dw, db = nn.dense_backward(r, cache)
    fn = lambda: float((nn.dense_forward(x, w, b)[0] * r).sum())
    return grad_check(fn, {"x": x, "w": w, "b": b}, {"x": dx, "w": dw, "b": db}, seed=seed, name="dense")


def check_maxpool(seed: int = 0, shape=(2, 6, 6, 3)) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    # Distinct values spaced well beyond the step so no window has a near-tie.
    x = rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01 + rng.uniform(0, 1e-3, shape)
    y, cache = nn.maxpool2d_forward(x)
    r = _projection(rng, y.shape)
    dx = nn.maxpool2d_backward(r, cache)
    fn = lambda: float((nn.maxpool2d_forward(x)[0] * r).sum())
    return grad_check(fn, {"x": x}, {"x": dx}, seed=seed, name="maxpool2d")


def check_batchnorm(seed: int = 0, shape=(3, 4, 4, 2), training: bool = True) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    c = shape[-1]
    x = rng.standard_normal(shape) * 2 + 0.5
    gamma = rng.standard_normal(c)
    beta = rng.standard_normal(c)
    rmean = rng.standard_normal(c)
    rvar = rng.uniform(0.5, 2.0, c)
    r = _projection(rng, shape)

    def run():
        return nn.batchnorm_forward(x, gamma, beta, rmean, rvar, training, update_stats=False)

    _, cache = run()
    dx, dg, db = nn.batchnorm_backward(r, cache)
    fn = lambda: float((run()[0] * r).sum())
    label = "batchnorm(train)" if training else "batchnorm(inference)"
    return grad_check(
        fn, {"x": x, "gamma": gamma, "beta": beta}, {"x": dx, "gamma": dg, "beta": db}, seed=seed, name=label
    )


def check_concat(seed: int = 0, channels=(3, 5, 2)) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    xs = [rng.standard_normal((2, 3, 3, c)) for c in channels]
    y, splits = nn.concat_channels(xs)
    r = _projection(rng, y.shape)
    dxs = nn.concat_backward(r, splits)
    fn = lambda: float((nn.concat_channels(xs)[0] * r).sum())
    names = [f"x{i}" for i in range(len(xs))]
    return grad_check(fn, dict(zip(names, xs)), dict(zip(names, dxs)), seed=seed, name="concat_channels")


def check_activation(kind, seed: int = 0, shape=(2, 3, 3, 2)) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    r = _projection(rng, shape)
    _, cache = nn.activate(kind, x)
    dx = nn.activate_backward(r, cache)
    fn = lambda: float((nn.activate(kind, x)[0] * r).sum())
    return grad_check(fn, {"x": x}, {"x": dx}, seed=seed, name=f"activation[{nn.ActivationKind(kind).value}]")


def check_bce(seed: int = 0, n: int = 8) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, (n, 1))
    t = rng.integers(0, 2, (n, 1)).astype(np.float64)
    _, dp = nn.bce_loss(p, t)
    fn = lambda: nn.bce_loss(p, t)[0]
    return grad_check(fn, {"p": p}, {"p": dp}, seed=seed, name="bce_loss")


def check_composite(seed: int = 0) -> GradCheckReport:
    """conv -> relu -> maxpool -> dense -> sigmoid -> bce."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 4, 4, 2))
    # Small weights keep the sigmoid out of saturation, where gradients sink into rounding noise.
    w = rng.standard_normal((3, 3, 2, 3)) * 0.3
    b = rng.standard_normal(3) * 0.1
    dw_ = rng.standard_normal((2 * 2 * 3, 1)) * 0.2
    db_ = rng.standard_normal(1) * 0.1
    t = np.array([[1.0], [0.0]])

    def forward():
        h, c1 = nn.conv2d_forward(x, w, b)
        a, c2 = nn.activate("relu", h)
        p, c3 = nn.maxpool2d_forward(a)
        z, c4 = nn.dense_forward(p, dw_, db_)
        s, c5 = nn.activate("sigmoid", z)
        loss, ds = nn.bce_loss(s, t)
        return loss, ds, (c1, c2, c3, c4, c5)

    _, ds, (c1, c2, c3, c4, c5) = forward()
    dz = nn.activate_backward(ds, c5)
    dp, gdw, gdb = nn.dense_backward(dz, c4)
    da = nn.maxpool2d_backward(dp, c3)
    dh = nn.activate_backward(da, c2)
    dx, gw, gb = nn.conv2d_backward(dh, c1)
    return grad_check(
        lambda: forward()[0],
        {"x": x, "w": w, "b": b, "dense_w": dw_, "dense_b": db_},
        {"x": dx, "w": gw, "b": gb, "dense_w": gdw, "dense_b": gdb},
        seed=seed,
        name="composite",
    )


def layer_checks(seed: int = 0) -> list[GradCheckReport]:
    """One instance of every primitive check, seeded from ``seed``."""
    reports = [
        check_conv2d(seed),
        check_dense(seed),
        check_maxpool(seed),
        check_batchnorm(seed, training=True),
        check_batchnorm(seed, training=False),
        check_concat(seed),
        check_bce(seed),
        check_composite(seed),
    ]
    reports += [check_activation(kind, seed) for kind in nn.ActivationKind]
    return reports


def check_model(config, seed: int = 0, batch: int = 2) -> GradCheckReport:
    """Whole-graph check of every trainable parameter and the input batch.

    Batch norm is frozen in inference mode: in training mode a bias feeding
    it has an exactly-zero gradient, which central differences can only
    resolve to rounding noise. Training-mode batch norm is covered by
    :func:`check_batchnorm`.
    """
    from .model import build_model

    graph = build_model(config, seed=seed).astype(np.float64)
    rng = np.random.default_rng(seed)
    # Zero biases put dead-ReLU patches exactly on the kink; move to a generic point.
    for name, arr in graph.named_parameters(include_state=False).items():
        if name.endswith((".bias", ".beta")):
            arr[...] = rng.normal(0, 0.1, arr.shape)
        elif name.endswith(".gamma"):
            arr[...] = rng.uniform(0.5, 1.5, arr.shape)
    for node in graph.nodes:
        if node.state:
            node.state["moving_mean"][...] = rng.normal(0, 0.5, node.state["moving_mean"].shape)
            node.state["moving_variance"][...] = rng.uniform(0.5, 1.5, node.state["moving_variance"].shape)
    s = config.input_size
    x = rng.uniform(0, 1, (batch, s, s, config.input_channels))
    t = (np.arange(batch) % 2).astype(np.float64).reshape(-1, 1)

    def loss():
        return nn.bce_loss(graph.forward(x, training=False), t)[0]

    p = graph.forward(x, training=False)
    _, dp = nn.bce_loss(p, t)
    dx = graph.backward(dp, need_input_grad=True)
    tensors = dict(graph.named_parameters(include_state=False))
    analytic = {k: v.copy() for k, v in graph.named_gradients().items()}
    tensors["input"], analytic["input"] = x, dx
    flags = f"mp={int(config.use_maxpool)},bn={int(config.use_batchnorm)}"
    return grad_check(loss, tensors, analytic, seed=seed, name=f"model[{config.variant},{config.activation},{flags}]")


def tiny_model_configs(activation: str = "relu"):
    """Small configurations covering both variants and every optional layer."""
    from .model import VARIANTS, ModelConfig

    return [
        ModelConfig(
            variant=v,
            feb_filters=(3, 2, 2, 2),
            rb_count=2,
            rb_filters=2,
            rb_depth=1,
            activation=activation,
            use_maxpool=mp,
            use_batchnorm=bn,
            input_size=8,
        )
        for v in VARIANTS
        for mp in (True, False)
        for bn in (True, False)
    ]
