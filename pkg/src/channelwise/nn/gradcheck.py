"""Central finite-difference gradient checking."""

import numpy as np


def numeric_grad(f, x, index, eps=1e-5):
    """Central difference of scalar ``f()`` w.r.t. ``x[index]`` (``x`` is perturbed in place)."""
    old = x[index]
    x[index] = old + eps
    fp = f()
    x[index] = old - eps
    fm = f()
    x[index] = old
    return (fp - fm) / (2 * eps)


def relative_error(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(f, params, grads, rng=None, n_checks=None, eps=1e-5, floor=1e-8):
    """Compare analytic ``grads`` with central differences of ``f``.

    ``params`` and ``grads`` are dicts of arrays; ``f`` must read the arrays
    in ``params`` at call time.  Checks every entry, or ``n_checks`` random
    entries per tensor.  Returns the worst relative error.
    """
    worst = 0.0
    for name in sorted(params):
        x = params[name]
        if name not in grads:
            raise KeyError(f"no analytic gradient for {name!r}")
        if n_checks is None or x.size <= n_checks:
            indices = list(np.ndindex(x.shape))
        else:
            flat = rng.choice(x.size, size=n_checks, replace=False)
            indices = [np.unravel_index(i, x.shape) for i in flat]
        for idx in indices:
            num = numeric_grad(f, x, idx, eps)
            worst = max(worst, relative_error(grads[name][idx], num, floor))
    return worst
