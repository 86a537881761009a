import numpy as np


def central_diff(f, x, h=1e-5):
    """Central finite differences of scalar ``f()`` w.r.t. every entry of ``x`` (in place)."""
    g = np.zeros_like(x)
    for i in np.ndindex(*x.shape):
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def complex_diff(f, z, h=1e-6):
    """dF/dRe + i dF/dIm for a complex array ``z`` (modified in place)."""
    g = np.zeros_like(z, dtype=complex)
    for i in np.ndindex(*z.shape):
        old = z[i]
        z[i] = old + h
        a = f()
        z[i] = old - h
        b = f()
        z[i] = old + 1j * h
        c = f()
        z[i] = old - 1j * h
        d = f()
        z[i] = old
        g[i] = (a - b) / (2 * h) + 1j * (c - d) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)
