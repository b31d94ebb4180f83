"""Finite-difference verification of reverse-mode gradients.

The checker is deliberately dumb: two full loss evaluations per parameter
element, central differences, no knowledge of model structure. 64-bit
parameters recommended; in 32-bit mode the difference quotient drowns in
rounding noise.
"""

from __future__ import annotations

import numpy as np

from .tensor import ParamStore, backward, no_grad


def finite_difference_check(
    loss_fn,
    params: ParamStore,
    h: float = 1e-5,
    denominator_floor: float = 1e-3,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must be deterministic and return a scalar Tensor built from the
    current parameter values. Relative error for an element is
    |fd - analytic| / max(|fd|, |analytic|, denominator_floor), so elements
    with near-zero gradients are effectively held to an absolute tolerance of
    threshold * denominator_floor. Returns {parameter name: max error}.
    """
    params.zero_grad()
    backward(loss_fn())
    analytic = {name: t.grad.copy() for name, t in params.items()}

    report: dict[str, float] = {}
    with no_grad():
        for name, tensor in params.items():
            flat = tensor.data.reshape(-1)
            an = analytic[name].reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                plus = float(loss_fn().data)
                flat[i] = saved - h
                minus = float(loss_fn().data)
                flat[i] = saved
                fd = (plus - minus) / (2.0 * h)
                err = abs(fd - an[i]) / max(abs(fd), abs(an[i]), denominator_floor)
                if err > worst:
                    worst = err
            report[name] = worst
    return report
