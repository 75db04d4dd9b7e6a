"""Central finite-difference gradient checking.

The graph under test is rebuilt from float64 copies of the inputs so the
comparison isolates math errors from float32 truncation. The discrepancy
measure for a probed entry is

    |analytic - numeric| / max(|analytic|, |numeric|, floor)

with floor = 1e-6 * max(1, per-tensor gradient scale), which keeps the
check meaningful for near-zero gradients without masking real sign or
scale bugs.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor


class GradcheckResult:
    def __init__(self):
        self.max_rel_error = 0.0
        self.worst = None  # (tensor index, entry index, analytic, numeric)
        self.checked = 0

    def __repr__(self):
        return (
            f"GradcheckResult(max_rel_error={self.max_rel_error:.3e}, "
            f"checked={self.checked}, worst={self.worst})"
        )


def numeric_gradient(fn, arrays, which, eps=1e-3, entries=None):
    """Central differences of scalar fn(*arrays) w.r.t. arrays[which]."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    target = arrays[which]
    flat = target.reshape(-1)
    if entries is None:
        entries = range(flat.size)
    grad = np.zeros(flat.size, dtype=np.float64)
    for i in entries:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(fn(*arrays))
        flat[i] = orig - eps
        fm = float(fn(*arrays))
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * eps)
    return grad.reshape(target.shape)


def gradcheck(build, arrays, eps=1e-3, sample=None, rng=None, skip=()):
    """Check tape gradients of scalar build(*tensors) against central differences.

    build        callable taking one Tensor per entry of `arrays` and
                 returning a scalar Tensor; it must be deterministic.
    arrays       initial values (copied to float64).
    sample       probe at most this many entries per array (all if None).
    skip         indices of arrays to treat as constants (no check).
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [
        Tensor(a.copy(), requires_grad=(k not in skip)) for k, a in enumerate(arrays)
    ]
    with Tape() as tape:
        out = build(*tensors)
    if out.data.size != 1:
        raise ValueError("gradcheck requires a scalar objective")
    tape.backward(out)

    def evaluate(vals):
        return float(build(*[Tensor(v) for v in vals]).data)

    result = GradcheckResult()
    for k, (arr, t) in enumerate(zip(arrays, tensors)):
        if k in skip:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(arr)
        analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
        flat = arr.reshape(-1)
        if sample is not None and flat.size > sample:
            if rng is None:
                rng = np.random.default_rng(0)
            entries = np.sort(rng.choice(flat.size, size=sample, replace=False))
        else:
            entries = range(flat.size)
        floor = 1e-6 * max(1.0, float(np.abs(analytic).max(initial=0.0)))
        for i in entries:
            orig = flat[i]
            flat[i] = orig + eps
            fp = evaluate(arrays)
            flat[i] = orig - eps
            fm = evaluate(arrays)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(abs(analytic[i]), abs(numeric), floor)
            rel = abs(analytic[i] - numeric) / denom
            result.checked += 1
            if rel > result.max_rel_error:
                result.max_rel_error = rel
                result.worst = (k, int(i), float(analytic[i]), float(numeric))
    return result
