"""Named parameter storage and the Adam optimizer."""

from __future__ import annotations

import numpy as np


class ParamStore:
    """Named parameters with matching gradient slots and Adam moments.

    Iteration is always in sorted-name order so updates are reproducible.
    """

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=self.dtype)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        return name

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def names(self):
        return sorted(self.params)

    def accumulate(self, name, grad):
        self.grads[name] += grad

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def n_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def cast_(self, dtype) -> "ParamStore":
        """Convert parameters and gradients in place (layers keep working)."""
        self.dtype = np.dtype(dtype)
        for name in self.params:
            self.params[name] = self.params[name].astype(dtype)
            self.grads[name] = self.grads[name].astype(dtype)
        self.m.clear()
        self.v.clear()
        return self

    def astype(self, dtype) -> "ParamStore":
        """Copy of the parameters (without optimizer state) in another dtype."""
        out = ParamStore(dtype)
        for name in self.names():
            out.add(name, self.params[name])
        return out

    def load(self, tensors: dict):
        """Overwrite parameters from a ``name -> array`` mapping."""
        missing = set(self.params) - set(tensors)
        if missing:
            raise KeyError(f"bundle is missing parameters: {sorted(missing)}")
        for name in self.names():
            if tensors[name].shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}: {tensors[name].shape}")
            self.params[name][...] = tensors[name]

    def state(self) -> dict:
        return {name: self.params[name] for name in self.names()}


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    total = float(np.sqrt(sum(float(np.sum(np.square(store.grads[n], dtype=np.float64)))
                              for n in store.names())))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for n in store.names():
            store.grads[n] *= scale
    return total


def adam_update(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step over every parameter, then zero the gradients."""
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name in store.names():
        g = store.grads[name]
        if name not in store.m:
            store.m[name] = np.zeros_like(g)
            store.v[name] = np.zeros_like(g)
        m, v = store.m[name], store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        store.params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0)
    return store
