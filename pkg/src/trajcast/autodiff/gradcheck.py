"""Central-difference gradient checks against the tape's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError
from .tensor import Tape, Tensor


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst: tuple = ()
    n_checked: int = 0
    skipped: list = field(default_factory=list)

    def __float__(self):
        return self.max_rel_error

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1.0, abs(analytic))


def _same(a, b) -> bool:
    if isinstance(a, (tuple, list)):
        return len(a) == len(b) and all(_same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(a, b))


def _scalar(out: Tensor) -> float:
    return float(np.asarray(out.data).reshape(-1)[0])


def gradient_check(f: Callable[[Tensor], Tensor], x, h: float = 1e-5,
                   skip: Callable[[np.ndarray, float], np.ndarray] | None = None,
                   ) -> GradCheckResult:
    """Max relative error between tape gradients and central differences.

    ``skip(x, h)`` may return a boolean mask of coordinates that sit within
    ``h`` of a non-smooth kink; those coordinates are reported in
    ``skipped`` instead of being compared.
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"step h={h} outside [1e-7, 1e-3]")
    x = Tensor(x.data if isinstance(x, Tensor) else x, requires_grad=True)
    with Tape() as tape:
        out = f(x)
    tape.backward(out, wrt=[x])
    analytic = x.grad.reshape(-1)
    mask = np.zeros(x.size, bool) if skip is None else np.asarray(skip(x.data, h)).reshape(-1)
    base = x.data.copy()
    flat = x.data.reshape(-1)
    result = GradCheckResult(0.0)
    for i in range(x.size):
        if mask[i]:
            result.skipped.append(i)
            continue
        flat[i] = base.reshape(-1)[i] + h
        fp = _scalar(f(x))
        flat[i] = base.reshape(-1)[i] - h
        fm = _scalar(f(x))
        flat[i] = base.reshape(-1)[i]
        numeric = (fp - fm) / (2 * h)
        if not np.isfinite(numeric) or not np.isfinite(analytic[i]):
            raise NumericError(f"non-finite gradient at coordinate {i}")
        err = _rel_err(analytic[i], numeric)
        result.n_checked += 1
        if err >= result.max_rel_error:
            result.max_rel_error = float(err)
            result.worst = (i,)
    return result


def check_parameters(loss: Callable[[], Tensor], params: Mapping[str, Tensor],
                     h: float = 1e-5, max_coords: int | None = None,
                     rng: np.random.Generator | None = None,
                     regime: Callable[[], object] | None = None) -> GradCheckResult:
    """Gradient check of a closure over every coordinate of named parameters.

    ``max_coords`` subsamples coordinates per parameter when set.
    ``regime()`` is called after each evaluation of ``loss`` and should
    return a comparable summary of the piecewise branch the loss took (for
    example which residuals sit inside a Smooth-L1 knee); coordinates whose
    perturbation changes the branch are skipped.
    """
    tensors = list(params.values())
    with Tape() as tape:
        out = loss()
    tape.backward(out, wrt=tensors)
    base_regime = regime() if regime is not None else None
    grads = {name: t.grad.copy() for name, t in params.items()}
    result = GradCheckResult(0.0)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        idx = np.arange(t.size)
        if max_coords is not None and t.size > max_coords:
            idx = (rng or np.random.default_rng(0)).choice(t.size, max_coords, replace=False)
        g = grads[name].reshape(-1)
        for i in idx:
            keep = flat[i]
            flat[i] = keep + h
            fp = _scalar(loss())
            crossed = regime is not None and not _same(regime(), base_regime)
            flat[i] = keep - h
            fm = _scalar(loss())
            crossed = crossed or (regime is not None and not _same(regime(), base_regime))
            flat[i] = keep
            if crossed:
                result.skipped.append((name, int(i)))
                continue
            numeric = (fp - fm) / (2 * h)
            if not np.isfinite(numeric) or not np.isfinite(g[i]):
                raise NumericError(f"non-finite gradient at {name}[{i}]")
            err = _rel_err(g[i], numeric)
            result.n_checked += 1
            if err >= result.max_rel_error:
                result.max_rel_error = float(err)
                result.worst = (name, int(i))
    return result
