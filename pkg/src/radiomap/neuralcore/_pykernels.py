"""Pure-numpy implementations of the hot layer kernels.

Same signatures as the compiled ``_ckernels`` module. All tensors are
``(batch, height, width, channels)`` and C-contiguous.
"""
import numpy as np

BACKEND = "python"


def im2col3x3(x):
    """Zero-padded 3x3 patches: ``cols[b*H*W + i*W + j, (a*3 + c)*C + ch]``
    holds ``x[b, i + a - 1, j + c - 1, ch]``."""
    b, h, w, c = x.shape
    xp = np.zeros((b, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((b, h, w, 3, 3, c), dtype=x.dtype)
    for a in range(3):
        for d in range(3):
            cols[:, :, :, a, d, :] = xp[:, a:a + h, d:d + w, :]
    return cols.reshape(b * h * w, 9 * c)


def col2im3x3(cols, b, h, w, c):
    """Adjoint of :func:`im2col3x3`: scatter-add patches back to the image."""
    cols = cols.reshape(b, h, w, 3, 3, c)
    xp = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    for a in range(3):
        for d in range(3):
            xp[:, a:a + h, d:d + w, :] += cols[:, :, :, a, d, :]
    return np.ascontiguousarray(xp[:, 1:-1, 1:-1])


def avgpool2_forward(x):
    b, h, w, c = x.shape
    return x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))


def avgpool2_backward(g):
    out = np.repeat(np.repeat(g * 0.25, 2, axis=1), 2, axis=2)
    return np.ascontiguousarray(out, dtype=g.dtype)


def _interp_matrix(n, dtype):
    # half-pixel bilinear, factor 2, edge-clamped: rows are output samples
    u = np.zeros((2 * n, n), dtype=dtype)
    for m in range(n):
        u[2 * m, m] += 0.75
        u[2 * m, max(m - 1, 0)] += 0.25
        u[2 * m + 1, m] += 0.75
        u[2 * m + 1, min(m + 1, n - 1)] += 0.25
    return u


def upsample2_forward(x):
    b, h, w, c = x.shape
    uy, ux = _interp_matrix(h, x.dtype), _interp_matrix(w, x.dtype)
    t = np.einsum("ph,bhwc->bpwc", uy, x)
    return np.ascontiguousarray(np.einsum("qw,bpwc->bpqc", ux, t))


def upsample2_backward(g):
    b, h2, w2, c = g.shape
    uy, ux = _interp_matrix(h2 // 2, g.dtype), _interp_matrix(w2 // 2, g.dtype)
    t = np.einsum("ph,bpqc->bhqc", uy, g)
    return np.ascontiguousarray(np.einsum("qw,bhqc->bhwc", ux, t))


def plrelu_forward(x, leak):
    return np.where(x >= 0, x, x * x.dtype.type(leak))


def plrelu_backward(g, x, leak):
    neg = x < 0
    gx = np.where(neg, g * g.dtype.type(leak), g)
    gleak = float(np.sum(np.where(neg, g * x, 0)))
    return gx, gleak
