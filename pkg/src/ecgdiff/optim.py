"""Named parameter storage and the Adam update rule."""

from __future__ import annotations

import hashlib

import numpy as np

DEFAULT_LR = 2e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


class ParameterStore:
    """Named float64 parameters plus per-parameter Adam accumulators.

    Names are unique; first/second moment buffers are created lazily with
    the parameter's shape.  A store is single-writer: one training job owns
    it exclusively while updating.
    """

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.moment1: dict[str, np.ndarray] = {}
        self.moment2: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self.params:
            raise ValueError(f"duplicate parameter name: {name!r}")
        arr = np.array(value, dtype=np.float64)
        self.params[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params.keys())

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def clone(self, prefix: str = "") -> "ParameterStore":
        """Deep copy of parameter values (optimizer state not copied)."""
        out = ParameterStore()
        for name, value in self.params.items():
            out.add(prefix + name, value.copy())
        return out

    def checksum(self) -> str:
        """SHA-256 over all parameter bytes in name order (freeze checks)."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode("utf-8"))
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def adam_step(
    store: ParameterStore,
    gradients: dict[str, np.ndarray],
    lr: float = DEFAULT_LR,
    beta1: float = DEFAULT_BETA1,
    beta2: float = DEFAULT_BETA2,
    eps: float = DEFAULT_EPS,
) -> ParameterStore:
    """Apply one bias-corrected Adam update in place; returns the store.

    Parameters without a gradient entry are treated as zero-gradient.
    Non-finite gradients abort the step with the offending parameter named.
    """
    for name, g in gradients.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter {name!r} "
                f"shape {store.params[name].shape}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")

    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = gradients.get(name)
        if g is None:
            g = 0.0
        m = store.moment1.get(name)
        if m is None:
            m = store.moment1[name] = np.zeros_like(p)
            store.moment2[name] = np.zeros_like(p)
        v = store.moment2[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return store
