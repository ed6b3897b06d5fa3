"""Central finite-difference gradient checking, shared across test modules."""

import numpy as np


def central_diff(f, x, h=1e-5):
    """Elementwise central differences of scalar-valued f at float64 array x.

    Mutates x in place entry by entry and restores it, so f must read x fresh
    on every call and must not capture a copy.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need float64 inputs"
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        hi = f()
        x[idx] = orig - h
        lo = f()
        x[idx] = orig
        grad[idx] = (hi - lo) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    """max over entries of |a - n| / max(|a|, |n|, floor).

    The floor keeps finite-difference rounding noise (about 1e-11 at step
    1e-5) from exploding the ratio on entries whose true gradient is zero.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    assert a.shape == n.shape, f"shape mismatch {a.shape} vs {n.shape}"
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def assert_grad_matches(analytic, f, x, name, tol=1e-4, h=1e-5):
    numeric = central_diff(f, x, h=h)
    err = max_rel_error(analytic, numeric)
    assert err <= tol, f"{name}: max relative gradient error {err:.3e} exceeds {tol}"
