"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import logging

import numpy as np

from gesturelift.nn.params import ParamStore

log = logging.getLogger(__name__)


def grad_check(loss_fn, store: ParamStore, eps=1e-3, max_entries=None, seed=0, floor=1e-7,
               details=None) -> float:
    """Largest relative error between analytic and numerical parameter gradients.

    ``loss_fn()`` must return the scalar loss and add its analytic gradients
    into ``store.grads``.  Run it on a float64 store.  With ``max_entries``
    only that many randomly chosen entries per parameter are probed.  A
    non-finite loss makes the result ``nan`` (logged, not raised).  If
    ``details`` is a dict it receives the per-parameter maxima.
    """
    rng = np.random.default_rng(seed)
    store.zero_grad()
    loss = loss_fn()
    if not np.isfinite(loss):
        log.warning("grad_check: non-finite loss %r", loss)
        return float("nan")
    analytic = {n: store.grads[n].copy() for n in store.names()}
    worst = 0.0
    for name in store.names():
        p = store.params[name]
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        a_flat = analytic[name].reshape(-1)
        param_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            lp = loss_fn()
            flat[i] = orig - eps
            lm = loss_fn()
            flat[i] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                log.warning("grad_check: non-finite loss while probing %s", name)
                store.zero_grad()
                return float("nan")
            num = (lp - lm) / (2 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            param_worst = max(param_worst, err)
        if details is not None:
            details[name] = param_worst
        worst = max(worst, param_worst)
    store.zero_grad()
    return float(worst)
