"""Finite-difference verification of analytic gradients.

Checks run in float64 with central differences.  The loss is a fixed random
projection of the op output, so ops with constant sums (softmax) still get a
meaningful check.  The error reported per input is

    max_i |analytic_i - numeric_i| / max(1, |analytic_i|, |numeric_i|)

which behaves like a relative error for O(1) gradients and an absolute one
near zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Tensor, record

LabeledInputs = Sequence[tuple[str, Tensor]]
OpFn = Callable[..., Tensor]

DEFAULT_TOLERANCE = 1e-4
DEFAULT_STEP = 1e-5


@dataclass
class GradReport:
    """Per-input maximum error of one checked op."""

    name: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values())

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.3e}" for k, v in self.errors.items())
        return f"{status} {self.name}: {worst} (tol {self.tolerance:g})"


def grad_check(
    name: str,
    fn: OpFn,
    inputs: LabeledInputs,
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    seed: int = 0,
) -> GradReport:
    """Compare the taped gradients of ``fn`` against central differences.

    All inputs are promoted to float64 copies.  ``fn`` must be a pure
    function of the labeled tensors.
    """
    tensors = [Tensor(t.data.astype(np.float64), requires_grad=True) for _, t in inputs]
    labels = [label for label, _ in inputs]

    with record() as tape:
        out = fn(*tensors)
        proj = Tensor(
            np.random.default_rng(seed).uniform(-1.0, 1.0, out.shape).astype(np.float64)
        )
        loss = F.sum_all(F.mul(out, proj))
    tape.backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else np.array(t.grad) for t in tensors]

    def eval_loss() -> float:
        return float(np.sum(fn(*tensors).data * proj.data))

    errors: dict[str, float] = {}
    for label, t, a in zip(labels, tensors, analytic):
        flat = t.data.reshape(-1)
        numeric = np.zeros(flat.shape)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = eval_loss()
            flat[i] = orig - step
            lo = eval_loss()
            flat[i] = orig
            numeric[i] = (hi - lo) / (2.0 * step)
        numeric = numeric.reshape(t.shape)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))
        errors[label] = float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0

    return GradReport(name=name, errors=errors, tolerance=tolerance)


# ---------------------------------------------------------------------------
# default suite: every differentiable op on at least three shapes

def _t(rng: np.random.Generator, shape) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, shape), requires_grad=True)


def _t_away_from_zero(rng: np.random.Generator, shape, margin: float = 0.1) -> Tensor:
    # keeps kinked ops (relu, abs) clear of the finite-difference step
    v = rng.uniform(margin, 1.0, shape)
    return Tensor(v * np.where(rng.random(shape) < 0.5, -1.0, 1.0), requires_grad=True)


CaseBuilder = Callable[[np.random.Generator], tuple[OpFn, LabeledInputs]]


def _binary(op: OpFn, shapes) -> list[CaseBuilder]:
    return [
        (lambda rng, s=s: (op, [("a", _t(rng, s)), ("b", _t(rng, s))]))
        for s in shapes
    ]


def _unary(op: OpFn, shapes, sampler=_t) -> list[CaseBuilder]:
    return [(lambda rng, s=s: (op, [("x", sampler(rng, s))])) for s in shapes]


def _suite_cases() -> list[tuple[str, CaseBuilder]]:
    small = [(5,), (2, 3), (2, 3, 4)]
    maps = [(2, 4, 4), (3, 5, 6), (1, 8, 8)]
    cases: list[tuple[str, CaseBuilder]] = []

    for name, op in (("add", F.add), ("sub", F.sub), ("mul", F.mul)):
        for i, b in enumerate(_binary(op, small)):
            cases.append((f"{name}[{i}]", b))

    for name, op, sampler in (
        ("relu", F.relu, _t_away_from_zero),
        ("gelu", F.gelu, _t),
        ("sigmoid", F.sigmoid, _t),
        ("sin", F.sin, _t),
        ("cos", F.cos, _t),
        ("abs", F.absolute, _t_away_from_zero),
        ("sum_all", F.sum_all, _t),
        ("mean_all", F.mean_all, _t),
    ):
        for i, b in enumerate(_unary(op, small, sampler)):
            cases.append((f"{name}[{i}]", b))

    for i, s in enumerate([(4,), (2, 5), (3, 2, 4)]):
        axis = len(s) - 1
        cases.append(
            (f"softmax[{i}]", lambda rng, s=s, ax=axis: (lambda x: F.softmax(x, ax), [("x", _t(rng, s))]))
        )
        cases.append(
            (f"l2_normalize[{i}]", lambda rng, s=s, ax=axis: (lambda x: F.l2_normalize(x, ax), [("x", _t(rng, s))]))
        )

    for i, s in enumerate([(2.0, (3, 4)), (-0.7, (2, 2, 2)), (1.3, (6,))]):
        f, shape = s
        cases.append(
            (f"scale_const[{i}]", lambda rng, sh=shape, c=f: (lambda x: F.scale(x, c), [("x", _t(rng, sh))]))
        )
    for i, shape in enumerate([(3, 4), (2, 2, 2), (6,)]):
        cases.append(
            (
                f"scale_tensor[{i}]",
                lambda rng, sh=shape: (
                    lambda x, s: F.scale(x, s),
                    [("x", _t(rng, sh)), ("s", _t(rng, (1,)))],
                ),
            )
        )

    for i, shape in enumerate(maps):
        cases.append(
            (
                f"scale_channels[{i}]",
                lambda rng, sh=shape: (
                    F.scale_channels,
                    [("x", _t(rng, sh)), ("v", _t(rng, (sh[0],)))],
                ),
            )
        )
        cases.append(
            (
                f"layer_norm_channels[{i}]",
                lambda rng, sh=shape: (
                    F.layer_norm_channels,
                    [("x", _t(rng, sh)), ("gamma", _t(rng, (sh[0],)))],
                ),
            )
        )
        cases.append((f"global_avg_pool[{i}]", lambda rng, sh=shape: (F.global_avg_pool, [("x", _t(rng, sh))])))

    for i, (m, k, n) in enumerate([(2, 3, 4), (1, 5, 2), (4, 4, 4)]):
        cases.append(
            (
                f"matmul[{i}]",
                lambda rng, mm=m, kk=k, nn=n: (
                    F.matmul,
                    [("a", _t(rng, (mm, kk))), ("b", _t(rng, (kk, nn)))],
                ),
            )
        )
    for i, shape in enumerate([(2, 3), (4, 1), (3, 3)]):
        cases.append((f"transpose[{i}]", lambda rng, sh=shape: (F.transpose, [("x", _t(rng, sh))])))

    for i, (src, dst) in enumerate([((2, 6), (3, 4)), ((2, 2, 3), (12,)), ((4,), (2, 2))]):
        cases.append(
            (f"reshape[{i}]", lambda rng, s=src, d=dst: (lambda x: F.reshape(x, d), [("x", _t(rng, s))]))
        )

    for i, (sa, sb, ax) in enumerate(
        [((2, 2, 2), (3, 2, 2), 0), ((2, 3), (2, 1), 1), ((4,), (2,), 0)]
    ):
        cases.append(
            (
                f"concat[{i}]",
                lambda rng, a=sa, b=sb, axis=ax: (
                    lambda p, q: F.concat([p, q], axis),
                    [("a", _t(rng, a)), ("b", _t(rng, b))],
                ),
            )
        )

    for i, (shape, ax, lohi) in enumerate(
        [((4, 3, 3), 0, (1, 3)), ((2, 6, 2), 1, (2, 5)), ((5,), 0, (0, 4))]
    ):
        cases.append(
            (
                f"slice_along[{i}]",
                lambda rng, sh=shape, axis=ax, span=lohi: (
                    lambda x: F.slice_along(x, axis, span[0], span[1]),
                    [("x", _t(rng, sh))],
                ),
            )
        )

    for i, (shape, r) in enumerate([((1, 4, 4), 2), ((2, 6, 6), 3), ((3, 4, 8), 2)]):
        cases.append(
            (f"pixel_unshuffle[{i}]", lambda rng, sh=shape, rr=r: (lambda x: F.pixel_unshuffle(x, rr), [("x", _t(rng, sh))]))
        )
        drop = (shape[0] * r * r, shape[1] // r, shape[2] // r)
        cases.append(
            (f"pixel_shuffle[{i}]", lambda rng, sh=drop, rr=r: (lambda x: F.pixel_shuffle(x, rr), [("x", _t(rng, sh))]))
        )

    for i, (shape, pads) in enumerate(
        [((1, 4, 4), 2), ((2, 3, 5), (1, 2, 0, 3)), ((1, 5, 3), (0, 1, 2, 1))]
    ):
        cases.append(
            (f"reflect_pad2d[{i}]", lambda rng, sh=shape, pp=pads: (lambda x: F.reflect_pad2d(x, pp), [("x", _t(rng, sh))]))
        )

    conv_cfgs = [
        ((2, 4, 4), (3, 2, 3, 3), 1, 1, "zeros", True),
        ((1, 5, 5), (2, 1, 3, 3), 2, 1, "zeros", True),
        ((2, 6, 5), (2, 2, 3, 3), 1, 1, "reflect", False),
        ((3, 4, 4), (2, 3, 1, 1), 1, 0, "zeros", True),
        ((1, 7, 7), (1, 1, 5, 5), 2, 2, "zeros", False),
    ]
    for i, (ish, wsh, stride, pad, mode, with_bias) in enumerate(conv_cfgs):
        def build(rng, ish=ish, wsh=wsh, stride=stride, pad=pad, mode=mode, with_bias=with_bias):
            labeled = [("x", _t(rng, ish)), ("w", _t(rng, wsh))]
            if with_bias:
                labeled.append(("b", _t(rng, (wsh[0],))))
                fn = lambda x, w, b: F.conv2d(x, w, b, stride=stride, padding=pad, pad_mode=mode)
            else:
                fn = lambda x, w: F.conv2d(x, w, stride=stride, padding=pad, pad_mode=mode)
            return fn, labeled
        cases.append((f"conv2d[{i}]", build))

    for i, (c, h, w) in enumerate([(2, 4, 4), (3, 5, 3), (1, 6, 6)]):
        def build_dw(rng, c=c, h=h, w=w, with_bias=(i != 1)):
            labeled = [("x", _t(rng, (c, h, w))), ("w", _t(rng, (c, 1, 3, 3)))]
            if with_bias:
                labeled.append(("b", _t(rng, (c,))))
                return (lambda x, wgt, b: F.depthwise_conv2d(x, wgt, b)), labeled
            return (lambda x, wgt: F.depthwise_conv2d(x, wgt)), labeled
        cases.append((f"depthwise_conv2d[{i}]", build_dw))

    return cases


def run_suite(
    tolerance: float = DEFAULT_TOLERANCE,
    step: float = DEFAULT_STEP,
    seed: int = 20240,
) -> list[GradReport]:
    """Gradient-check every registered op; deterministic for a fixed seed."""
    rng = np.random.default_rng(seed)
    reports = []
    for name, builder in _suite_cases():
        fn, labeled = builder(rng)
        reports.append(grad_check(name, fn, labeled, tolerance=tolerance, step=step, seed=seed))
    return reports
