"""Central finite-difference gradient oracle shared by the test modules.

All checks run at float64. The comparison uses max relative error with an
absolute floor so that gradients that are exactly zero on both routes (for
example downstream of a dead ReLU unit) compare as equal instead of 0/0.
"""

import numpy as np

RTOL = 1e-4
FLOOR = 1e-6


def numerical_grad(f, x, eps=1e-5):
    """Central-difference gradient of the scalar function f with respect to x.

    ``x`` is perturbed in place and restored; ``f`` takes no arguments and
    must re-run the full forward pass reading the current contents of x.
    """
    x = np.asarray(x)
    assert x.dtype == np.float64, "finite differences need float64 inputs"
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FLOOR)
    return float((np.abs(analytic - numeric) / denom).max()) if analytic.size else 0.0


def assert_grads_close(analytic, numeric, rtol=RTOL, label=""):
    err = max_rel_error(analytic, numeric)
    assert err < rtol, f"gradient mismatch{' for ' + label if label else ''}: {err:.3e}"


def jitter_biases(model, rng):
    """Nudge bias vectors off zero so no ReLU pre-activation sits exactly on
    the kink, where the analytic subgradient and the central difference
    legitimately disagree."""
    for p in model.params():
        if p.name.endswith(".b"):
            p.value = p.value + rng.uniform(0.02, 0.1, size=p.value.shape)
