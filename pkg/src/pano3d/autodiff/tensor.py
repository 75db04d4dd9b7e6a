"""Reverse-mode automatic differentiation on a flat operation tape.

Every differentiable op appends one record to the active ``Tape``; the
record order is the execution order, which is always a valid topological
order of the graph. ``Tape.backward`` replays the records in exact reverse
creation order and accumulates gradient contributions in input order, so
gradients are bit-identical across runs of the same graph.

Tensors store float32 by default (training precision). Gradient checks
rebuild the same graph from float64 inputs; ops propagate the input dtype.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Array value with shape, data, an optional gradient slot and a name."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, name=self.name)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{tag})"

    # Slicing participates in autodiff (class token drops, splits, ...).
    def __getitem__(self, key):
        from . import ops

        return ops.getitem(self, key)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


class _Record:
    __slots__ = ("out_id", "input_ids", "backward_fn", "op")

    def __init__(self, out_id, input_ids, backward_fn, op):
        self.out_id = out_id
        self.input_ids = input_ids
        self.backward_fn = backward_fn
        self.op = op


class Tape:
    """Ordered list of operation records for one forward pass.

    Use as a context manager::

        with Tape() as tape:
            loss = build_graph(...)
        tape.backward(loss)

    Ops executed without an active tape run eagerly and record nothing
    (evaluation mode). ``backward`` may be called repeatedly; leaf
    gradients accumulate until ``zero_grad``.
    """

    def __init__(self):
        self._records: list[_Record] = []
        self._tensors: list[Tensor] = []  # node id -> tensor (keeps ids unique)
        self._ids: dict[int, int] = {}  # id(tensor) -> node id
        self._live: set[int] = set()  # node ids through which gradient flows

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.pop()
        return False

    def __len__(self):
        return len(self._records)

    def _node_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = len(self._tensors)
            self._ids[id(t)] = nid
            self._tensors.append(t)
            if t.requires_grad:
                self._live.add(nid)
        return nid

    def needs_grad(self, t: Tensor) -> bool:
        if t.requires_grad:
            return True
        nid = self._ids.get(id(t))
        return nid is not None and nid in self._live

    def record(self, out: Tensor, inputs, backward_fn, op="") -> Tensor:
        """Append one record; backward_fn(g) returns one array (or None) per input."""
        input_ids = tuple(self._node_id(t) for t in inputs)
        out_id = self._node_id(out)
        self._live.add(out_id)
        self._records.append(_Record(out_id, input_ids, backward_fn, op))
        return out

    def backward(self, output: Tensor):
        """Populate .grad of every requires_grad tensor reachable from output.

        The output must be scalar. Records are visited in exact reverse
        creation order; contributions to the same node are summed in visit
        order, making the whole pass deterministic.
        """
        if output.data.size != 1:
            raise ValueError(
                f"backward requires a scalar output, got shape {tuple(output.shape)}"
            )
        one = np.ones_like(output.data)
        out_id = self._ids.get(id(output))
        if out_id is None:
            # Constant output: no graph below it.
            output.grad = one
            return
        grads: dict[int, np.ndarray] = {out_id: one}
        for rec in reversed(self._records):
            g = grads.pop(rec.out_id, None)
            if g is None:
                continue
            contribs = rec.backward_fn(g)
            for nid, c in zip(rec.input_ids, contribs):
                if c is None:
                    continue
                prev = grads.get(nid)
                grads[nid] = c if prev is None else prev + c
        for nid, g in grads.items():
            leaf = self._tensors[nid]
            if leaf.requires_grad:
                g = np.asarray(g, dtype=leaf.data.dtype)
                leaf.grad = g if leaf.grad is None else leaf.grad + g
        output.grad = one


_ACTIVE: list[Tape] = []


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None
