"""Reverse-mode automatic differentiation on numpy float64 arrays.

A Tape records every primitive application in execution order, which is a
valid topological order, so the backward pass is a single reverse sweep
that visits each node exactly once.  Gradients accumulate into ``.grad``
of each tensor; leaves registered on the tape always end up with a
gradient (zeros when unreached by the sweep).

Gradient requirements propagate forward: a node needs a gradient only if
one of its parents does.  Constants (inputs, frozen parameters) therefore
cost nothing in the backward sweep, and a forward pass over constants only
records nothing at all, which is the inference path.

The tape also owns a buffer pool keyed by array shape.  Op outputs and
gradient buffers are drawn from the pool and recycled by ``reset()``;
without this, MB-sized attention intermediates are freshly mmapped and
kernel-zeroed on every training step, which dominates runtime.  Arrays
handed to ``leaf``/``constant`` are never pooled, and anything the caller
wants to keep across ``reset()`` must be copied out first.
"""

from __future__ import annotations

import numpy as np

_POOL_MIN_BYTES = 4096  # tiny arrays are cheaper to malloc than to pool


class Tensor:
    """A node in the recorded computation graph."""

    __slots__ = ("data", "grad", "needs_grad", "_backward")

    def __init__(self, data: np.ndarray, needs_grad: bool = False):
        self.data = data
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, needs_grad={self.needs_grad})"


class Tape:
    """Single-writer recorder of primitive applications.

    One tape per concurrent training/inference unit; a tape must not be
    shared between threads.  ``backward`` may be called once per recording;
    call ``reset`` to start a new recording and recycle buffers.
    """

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._leaves: list[Tensor] = []
        self._pool: dict[tuple[int, ...], list[np.ndarray]] = {}
        self._loaned: list[np.ndarray] = []
        self._backward_done = False

    # -- memory management -------------------------------------------------

    def _alloc(self, shape: tuple[int, ...]) -> np.ndarray:
        shape = tuple(shape)
        free = self._pool.get(shape)
        if free:
            buf = free.pop()
        else:
            buf = np.empty(shape, dtype=np.float64)
        self._loaned.append(buf)
        return buf

    def reset(self) -> None:
        """Recycle all op-output and gradient buffers; clear the recording."""
        for buf in self._loaned:
            if buf.nbytes >= _POOL_MIN_BYTES:
                self._pool.setdefault(buf.shape, []).append(buf)
        self._loaned = []
        self._nodes = []
        self._leaves = []
        self._backward_done = False

    # -- node construction ---------------------------------------------------

    def leaf(self, data: np.ndarray) -> Tensor:
        """Wrap an externally owned array as a differentiable leaf."""
        t = Tensor(np.asarray(data, dtype=np.float64), needs_grad=True)
        self._leaves.append(t)
        return t

    def constant(self, data: np.ndarray) -> Tensor:
        """Wrap an array that takes no gradient (inputs, frozen weights)."""
        return Tensor(np.asarray(data, dtype=np.float64), needs_grad=False)

    def _node(self, data: np.ndarray, backward, needs_grad: bool) -> Tensor:
        t = Tensor(data, needs_grad=needs_grad)
        if needs_grad:
            t._backward = backward
            self._nodes.append(t)
        return t

    def _accumulate(self, t: Tensor, g: np.ndarray, owned: bool) -> None:
        # owned=True means g is a pool buffer this call may hand over.
        if not t.needs_grad:
            return
        if t.grad is None:
            if owned:
                t.grad = g
            else:
                buf = self._alloc(t.data.shape)
                np.copyto(buf, g)
                t.grad = buf
        else:
            t.grad += g

    def _reduce_to(self, g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        """Sum g over axes that were broadcast to reach g.shape from shape."""
        if g.shape == shape:
            return g
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        return g

    # -- elementwise primitives ------------------------------------------------

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        out = self._alloc(np.broadcast_shapes(a.data.shape, b.data.shape))
        np.add(a.data, b.data, out=out)

        def backward(g):
            self._accumulate(a, self._reduce_to(g, a.data.shape), owned=False)
            self._accumulate(b, self._reduce_to(g, b.data.shape), owned=False)

        return self._node(out, backward, a.needs_grad or b.needs_grad)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        out = self._alloc(np.broadcast_shapes(a.data.shape, b.data.shape))
        np.subtract(a.data, b.data, out=out)

        def backward(g):
            self._accumulate(a, self._reduce_to(g, a.data.shape), owned=False)
            if b.needs_grad:
                gb = self._alloc(g.shape)
                np.negative(g, out=gb)
                self._accumulate(b, self._reduce_to(gb, b.data.shape), owned=gb.shape == b.data.shape)

        return self._node(out, backward, a.needs_grad or b.needs_grad)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        out = self._alloc(np.broadcast_shapes(a.data.shape, b.data.shape))
        np.multiply(a.data, b.data, out=out)

        def backward(g):
            if a.needs_grad:
                ga = self._alloc(g.shape)
                np.multiply(g, b.data, out=ga)
                self._accumulate(a, self._reduce_to(ga, a.data.shape), owned=ga.shape == a.data.shape)
            if b.needs_grad:
                gb = self._alloc(g.shape)
                np.multiply(g, a.data, out=gb)
                self._accumulate(b, self._reduce_to(gb, b.data.shape), owned=gb.shape == b.data.shape)

        return self._node(out, backward, a.needs_grad or b.needs_grad)

    def scale(self, a: Tensor, c: float) -> Tensor:
        out = self._alloc(a.data.shape)
        np.multiply(a.data, c, out=out)

        def backward(g):
            gb = self._alloc(g.shape)
            np.multiply(g, c, out=gb)
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def tanh(self, a: Tensor) -> Tensor:
        out = self._alloc(a.data.shape)
        np.tanh(a.data, out=out)

        def backward(g):
            gb = self._alloc(g.shape)
            np.multiply(out, out, out=gb)
            np.subtract(1.0, gb, out=gb)
            gb *= g
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def sigmoid(self, a: Tensor) -> Tensor:
        out = self._alloc(a.data.shape)
        np.negative(a.data, out=out)
        np.exp(out, out=out)
        out += 1.0
        np.reciprocal(out, out=out)

        def backward(g):
            gb = self._alloc(g.shape)
            np.subtract(1.0, out, out=gb)
            gb *= out
            gb *= g
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def softmax_lastaxis(self, a: Tensor) -> Tensor:
        out = self._alloc(a.data.shape)
        m = a.data.max(axis=-1, keepdims=True)
        np.subtract(a.data, m, out=out)
        np.exp(out, out=out)
        s = out.sum(axis=-1, keepdims=True)
        out /= s

        def backward(g):
            gb = self._alloc(g.shape)
            np.multiply(g, out, out=gb)
            dot = gb.sum(axis=-1, keepdims=True)
            np.subtract(g, dot, out=gb)
            gb *= out
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    # -- reductions --------------------------------------------------------------

    def sum(self, a: Tensor) -> Tensor:
        out = np.array(a.data.sum())

        def backward(g):
            gb = self._alloc(a.data.shape)
            gb.fill(float(g))
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def mean(self, a: Tensor) -> Tensor:
        n = a.data.size
        out = np.array(a.data.mean())

        def backward(g):
            gb = self._alloc(a.data.shape)
            gb.fill(float(g) / n)
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def mean_lastaxis(self, a: Tensor) -> Tensor:
        n = a.data.shape[-1]
        out = a.data.mean(axis=-1)

        def backward(g):
            gb = self._alloc(a.data.shape)
            np.divide(g[..., None], n, out=gb)
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def mse(self, pred: Tensor, target: Tensor) -> Tensor:
        """Mean squared error over all elements (fused for speed)."""
        if pred.data.shape != target.data.shape:
            raise ValueError(f"mse shape mismatch: {pred.data.shape} vs {target.data.shape}")
        diff = self._alloc(pred.data.shape)
        np.subtract(pred.data, target.data, out=diff)
        out = np.array(float(np.vdot(diff, diff)) / diff.size)

        def backward(g):
            c = 2.0 * float(g) / diff.size
            if pred.needs_grad:
                gp = self._alloc(diff.shape)
                np.multiply(diff, c, out=gp)
                self._accumulate(pred, gp, owned=True)
            if target.needs_grad:
                gt = self._alloc(diff.shape)
                np.multiply(diff, -c, out=gt)
                self._accumulate(target, gt, owned=True)

        return self._node(out, backward, pred.needs_grad or target.needs_grad)

    # -- shape manipulation --------------------------------------------------------

    def reshape(self, a: Tensor, shape: tuple[int, ...]) -> Tensor:
        out = a.data.reshape(shape)

        def backward(g):
            self._accumulate(a, g.reshape(a.data.shape), owned=False)

        return self._node(out, backward, a.needs_grad)

    def transpose_last2(self, a: Tensor) -> Tensor:
        out = a.data.swapaxes(-1, -2)

        def backward(g):
            self._accumulate(a, g.swapaxes(-1, -2), owned=False)

        return self._node(out, backward, a.needs_grad)

    def narrow(self, a: Tensor, axis: int, start: int, length: int) -> Tensor:
        index = [slice(None)] * a.data.ndim
        index[axis] = slice(start, start + length)
        index = tuple(index)
        out = a.data[index]

        def backward(g):
            gb = self._alloc(a.data.shape)
            gb.fill(0.0)
            gb[index] = g
            self._accumulate(a, gb, owned=True)

        return self._node(out, backward, a.needs_grad)

    def concat(self, parts: list[Tensor], axis: int) -> Tensor:
        out = np.concatenate([p.data for p in parts], axis=axis)

        def backward(g):
            offset = 0
            for p in parts:
                n = p.data.shape[axis]
                index = [slice(None)] * g.ndim
                index[axis] = slice(offset, offset + n)
                self._accumulate(p, g[tuple(index)], owned=False)
                offset += n

        return self._node(out, backward, any(p.needs_grad for p in parts))

    def repeat_rows(self, a: Tensor, reps: int) -> Tensor:
        """Repeat along a new leading sub-axis: (B, ...) -> (B*reps, ...)."""
        out = np.repeat(a.data, reps, axis=0)

        def backward(g):
            gr = g.reshape((a.data.shape[0], reps) + a.data.shape[1:]).sum(axis=1)
            self._accumulate(a, gr, owned=False)

        return self._node(out, backward, a.needs_grad)

    # -- linear algebra ---------------------------------------------------------------

    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        ad, bd = a.data, b.data
        out = self._alloc(np.broadcast_shapes(ad.shape[:-2], bd.shape[:-2]) + (ad.shape[-2], bd.shape[-1]))
        np.matmul(ad, bd, out=out)

        def backward(g):
            if a.needs_grad:
                ga = self._alloc(g.shape[:-2] + (ad.shape[-2], ad.shape[-1]))
                np.matmul(g, bd.swapaxes(-1, -2), out=ga)
                self._accumulate(a, self._reduce_leading(ga, ad.shape), owned=ga.shape == ad.shape)
            if b.needs_grad:
                gb = self._alloc(g.shape[:-2] + (bd.shape[-2], bd.shape[-1]))
                np.matmul(ad.swapaxes(-1, -2), g, out=gb)
                self._accumulate(b, self._reduce_leading(gb, bd.shape), owned=gb.shape == bd.shape)

        return self._node(out, backward, a.needs_grad or b.needs_grad)

    def _reduce_leading(self, g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        if g.shape == shape:
            return g
        extra = g.ndim - len(shape)
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        return g

    def linear(self, x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
        """x @ w (+ b); for 2-D x of row vectors w has shape (in, out)."""
        y = self.matmul(x, w)
        return self.add(y, b) if b is not None else y

    def conv1d_dilated(
        self,
        x: Tensor,
        w: Tensor,
        b: Tensor | None = None,
        dilation: int = 1,
    ) -> Tensor:
        """Dilated 1-D cross-correlation with length-preserving padding.

        x: (B, C_in, L); w: (C_out, C_in, K) with K odd; output (B, C_out, L).
        Symmetric zero padding of dilation*(K-1)/2 on both sides makes the
        convolution non-causal, so each output sees past and future context.
        """
        xd, wd = x.data, w.data
        if xd.ndim != 3 or wd.ndim != 3:
            raise ValueError(f"conv1d expects 3-D input/kernel, got {xd.shape} and {wd.shape}")
        B, c_in, L = xd.shape
        c_out, c_in_w, K = wd.shape
        if c_in_w != c_in:
            raise ValueError(f"kernel expects {c_in_w} input channels, input has {c_in}")
        if K % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {K}")
        if dilation < 1:
            raise ValueError(f"dilation must be >= 1, got {dilation}")
        pad = dilation * (K - 1) // 2

        if pad:
            xp = self._alloc((B, c_in, L + 2 * pad))
            xp[:, :, :pad] = 0.0
            xp[:, :, L + pad:] = 0.0
            xp[:, :, pad:pad + L] = xd
        else:
            xp = xd

        out = self._alloc((B, c_out, L))
        np.matmul(wd[:, :, 0], xp[:, :, 0:L], out=out)
        if K > 1:
            tmp = self._alloc((B, c_out, L))
            for k in range(1, K):
                np.matmul(wd[:, :, k], xp[:, :, k * dilation:k * dilation + L], out=tmp)
                out += tmp
        if b is not None:
            out += b.data

        def backward(g):
            if w.needs_grad:
                gw = self._alloc(wd.shape)
                for k in range(K):
                    sl = xp[:, :, k * dilation:k * dilation + L]
                    gw[:, :, k] = np.tensordot(g, sl, axes=([0, 2], [0, 2]))
                self._accumulate(w, gw, owned=True)
            if x.needs_grad:
                gxp = self._alloc((B, c_in, L + 2 * pad))
                gxp.fill(0.0)
                gtmp = self._alloc((B, c_in, L))
                for k in range(K):
                    np.matmul(wd[:, :, k].T, g, out=gtmp)
                    gxp[:, :, k * dilation:k * dilation + L] += gtmp
                self._accumulate(x, gxp[:, :, pad:pad + L] if pad else gxp, owned=not pad)
            if b is not None and b.needs_grad:
                self._accumulate(b, g.sum(axis=(0, 2)).reshape(b.data.shape), owned=False)

        return self._node(out, backward, x.needs_grad or w.needs_grad or (b is not None and b.needs_grad))

    # -- backward pass --------------------------------------------------------------

    def backward(self, loss: Tensor) -> None:
        """Accumulate gradients of a scalar loss into every reachable tensor.

        Leaves never reached by the sweep get zero gradients.  Calling this
        a second time on the same recording raises; reset() re-arms the tape.
        """
        if self._backward_done:
            raise RuntimeError("backward already called on this tape; call reset() first")
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        self._backward_done = True
        if loss.needs_grad:
            if loss.data.shape:
                seed = self._alloc(loss.data.shape)
                seed.fill(1.0)
            else:
                seed = np.array(1.0)
            loss.grad = seed
        for node in reversed(self._nodes):
            if node.grad is None:
                continue
            node._backward(node.grad)
        for leaf in self._leaves:
            if leaf.grad is None:
                gz = self._alloc(leaf.data.shape)
                gz.fill(0.0)
                leaf.grad = gz
