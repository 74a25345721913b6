"""Central finite differences with per-coordinate relative steps."""

import numpy as np

from .errors import NonFiniteValue

EPS = np.finfo(float).eps
GRAD_REL_STEP = EPS ** (1 / 3)
HESS_REL_STEP = EPS ** (1 / 4)


def _steps(x, rel):
    return rel * np.maximum(1.0, np.abs(x))


def _checked(f, x):
    val = f(x)
    if not np.all(np.isfinite(val)):
        raise NonFiniteValue(f"non-finite value at {x!r}")
    return val


def gradient(f, x, rel_step=GRAD_REL_STEP):
    """Central-difference gradient.  ``f`` may return an array (batched values);
    the derivative axis is appended last."""
    x = np.asarray(x, dtype=float)
    h = _steps(x, rel_step)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((_checked(f, x + e) - _checked(f, x - e)) / (2 * h[i]))
    return np.stack(cols, axis=-1)


def hessian(f, x, rel_step=HESS_REL_STEP):
    """Central-difference Hessian, symmetrized.  Supports batched ``f`` like
    :func:`gradient`; the two derivative axes are appended last."""
    x = np.asarray(x, dtype=float)
    p = x.size
    h = _steps(x, rel_step)
    f0 = _checked(f, x)
    out = np.zeros(np.shape(f0) + (p, p))
    for i in range(p):
        ei = np.zeros(p)
        ei[i] = h[i]
        fp = _checked(f, x + ei)
        fm = _checked(f, x - ei)
        out[..., i, i] = (fp - 2 * f0 + fm) / h[i] ** 2
        for j in range(i + 1, p):
            ej = np.zeros(p)
            ej[j] = h[j]
            val = (
                _checked(f, x + ei + ej)
                - _checked(f, x + ei - ej)
                - _checked(f, x - ei + ej)
                + _checked(f, x - ei - ej)
            ) / (4 * h[i] * h[j])
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def jacobian(f, x, rel_step=GRAD_REL_STEP):
    """Jacobian of a vector map: ``J[a, i] = d f_a / d x_i``."""
    return gradient(f, x, rel_step)
