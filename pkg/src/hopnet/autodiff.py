"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation applied to :class:`Var` objects and
replays the local vector-Jacobian products in reverse. Only the handful of
operations needed by the message-passing network are provided. Connectivity
(gathers, sums and means over neighbourhoods) is expressed as multiplication by
a constant sparse matrix, which keeps the op set small.

With ``Tape(record=False)`` the same code runs as a plain forward pass.
"""

import numpy as np

LAYER_NORM_EPS = 1e-5


class Var:
    __slots__ = ("value", "grad", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape}, name={self.name!r})"


class Tape:
    def __init__(self, record=True):
        self.record = record
        self._ops = []

    # -- leaves ---------------------------------------------------------
    def param(self, value, name=None):
        return Var(value, requires_grad=self.record, name=name)

    @staticmethod
    def const(value):
        return Var(np.asarray(value, dtype=float))

    # -- bookkeeping ----------------------------------------------------
    def _emit(self, value, inputs, backward):
        out = Var(value, requires_grad=self.record and any(v.requires_grad for v in inputs))
        if out.requires_grad:
            self._ops.append((out, inputs, backward))
        return out

    @staticmethod
    def _accumulate(var, g):
        if not var.requires_grad:
            return
        if var.grad is None:
            var.grad = g.copy() if isinstance(g, np.ndarray) else np.array(g)
        else:
            var.grad += g

    def backward(self, loss):
        if not self.record:
            raise RuntimeError("tape was created with record=False")
        if loss.value.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.value)
        for out, inputs, backward in reversed(self._ops):
            if out.grad is None:
                continue
            grads = backward(out.grad)
            for v, g in zip(inputs, grads):
                if g is not None:
                    self._accumulate(v, g)

    # -- operations -----------------------------------------------------
    def linear(self, x, w, b):
        value = x.value @ w.value + b.value

        def back(g):
            return g @ w.value.T, x.value.T @ g, g.sum(axis=0)

        return self._emit(value, (x, w, b), back)

    def softplus(self, x):
        z = x.value
        # log(1 + e^z) = max(z, 0) + log1p(e^-|z|); stable and much faster
        # than np.logaddexp for the small dense blocks used here
        decay = np.exp(-np.abs(z))
        value = np.maximum(z, 0.0) + np.log1p(decay)

        def back(g):
            inv = 1.0 / (1.0 + decay)
            return (g * np.where(z >= 0, inv, decay * inv),)

        return self._emit(value, (x,), back)

    def layer_norm(self, x, gamma, beta):
        z = x.value
        mu = z.mean(axis=-1, keepdims=True)
        xc = z - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
        xhat = xc * inv
        value = xhat * gamma.value + beta.value

        def back(g):
            gxhat = g * gamma.value
            n = z.shape[-1]
            gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True) - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
            return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

        return self._emit(value, (x, gamma, beta), back)

    def concat(self, xs):
        widths = [x.value.shape[1] for x in xs]
        value = np.concatenate([x.value for x in xs], axis=1)

        def back(g):
            splits = np.cumsum(widths)[:-1]
            return tuple(np.split(g, splits, axis=1))

        return self._emit(value, tuple(xs), back)

    def spmm(self, matrix, x):
        """``matrix @ x`` for a constant (sparse or dense) matrix."""
        value = np.asarray(matrix @ x.value)

        def back(g):
            return (np.asarray(matrix.T @ g),)

        return self._emit(value, (x,), back)

    def add(self, a, b):
        def back(g):
            return g, g

        return self._emit(a.value + b.value, (a, b), back)

    def scale(self, x, c):
        def back(g):
            return (g * c,)

        return self._emit(x.value * c, (x,), back)

    def mean_squared_error(self, pred, target, rows=None):
        """Mean over selected rows and all channels of ``(pred - target)^2``."""
        target = np.asarray(target, dtype=float)
        if rows is None:
            rows = np.ones(pred.value.shape[0], dtype=bool)
        rows = np.asarray(rows, dtype=bool)
        count = int(rows.sum()) * pred.value.shape[1]
        diff = np.where(rows[:, None], pred.value - target, 0.0)
        value = np.array((diff * diff).sum() / count) if count else np.array(0.0)

        def back(g):
            if count == 0:
                return (np.zeros_like(pred.value),)
            return (2.0 * diff * (g / count),)

        return self._emit(value, (pred,), back)
