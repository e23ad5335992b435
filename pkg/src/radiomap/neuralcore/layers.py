"""Layer operations on ``(batch, height, width, channels)`` tensors.

Convolutions follow the true-convolution index convention::

    out[i, j, co] = bias[co] + sum_{ci,u,v} F[u, v, ci, co] * x[i - u, j - v, ci]

with ``u, v`` in ``{-1, 0, 1}`` stored at array positions ``u + 1``, zero
padding and stride 1. Internally both convolution flavours reduce to a
patch matrix times a kernel matrix; only the kernel layout differs.
"""
from __future__ import annotations

import numpy as np

import radiomap.neuralcore as _nc

_K = None


def use_kernels(module):
    """Route the hot loops through ``module`` (``_ckernels`` or ``_pykernels``).

    Returns the previously active module.
    """
    global _K
    prev = _kernels()
    _K = module
    return prev


def _kernels():
    return _K if _K is not None else _nc.kernels


def _check4(x, name="input"):
    if x.ndim != 4:
        raise ValueError(f"{name} must be (batch, height, width, channels), got {x.shape}")


def _conv_matrix(w):
    # true convolution == correlation with the spatially flipped kernel
    return np.ascontiguousarray(w[::-1, ::-1]).reshape(-1, w.shape[3])


def _convt_matrix(w):
    # w is (3, 3, out, in); the adjoint correlates with the unflipped kernel
    return np.ascontiguousarray(w.transpose(0, 1, 3, 2)).reshape(-1, w.shape[2])


def _correlate(x, kmat, bias, cols=None):
    b, h, wd, c = x.shape
    if kmat.shape[0] != 9 * c:
        raise ValueError(f"kernel expects {kmat.shape[0] // 9} input channels, got {c}")
    if cols is None:
        cols = _kernels().im2col3x3(np.ascontiguousarray(x))
    out = cols @ kmat
    if bias is not None:
        out += bias
    return out.reshape(b, h, wd, kmat.shape[1]), cols


def _correlate_backward(g, x_shape, kmat, cols):
    b, h, wd, c = x_shape
    g2 = np.ascontiguousarray(g).reshape(-1, kmat.shape[1])
    gk = cols.T @ g2
    gb = g2.sum(axis=0)
    gcols = g2 @ kmat.T
    gx = _kernels().col2im3x3(np.ascontiguousarray(gcols), b, h, wd, c)
    return gx, gk, gb


def conv2d_forward(x, weights, bias=None):
    """3x3 same-size convolution; ``weights`` has shape ``(3, 3, c_in, c_out)``."""
    _check4(x)
    if weights.shape[:2] != (3, 3):
        raise ValueError("only 3x3 kernels are supported")
    if weights.shape[2] != x.shape[3]:
        raise ValueError(f"weights expect {weights.shape[2]} channels, input has {x.shape[3]}")
    return _correlate(x, _conv_matrix(weights), bias)[0]


def conv2d_backward(grad_out, x, weights, cols=None):
    """Gradients ``(grad_input, grad_weights, grad_bias)`` of :func:`conv2d_forward`."""
    _check4(grad_out, "grad_out")
    if grad_out.shape[:3] != x.shape[:3] or grad_out.shape[3] != weights.shape[3]:
        raise ValueError("grad_out shape does not match the forward output")
    if cols is None:
        cols = _kernels().im2col3x3(np.ascontiguousarray(x))
    gx, gk, gb = _correlate_backward(grad_out, x.shape, _conv_matrix(weights), cols)
    gw = gk.reshape(3, 3, weights.shape[2], weights.shape[3])[::-1, ::-1]
    return gx, np.ascontiguousarray(gw), gb


def conv2d_transpose_forward(y, weights, bias=None):
    """Adjoint of :func:`conv2d_forward` in its input, plus a bias.

    ``weights`` has shape ``(3, 3, c_out, c_in)``: the same array used by a
    forward convolution mapping ``c_out`` to ``c_in`` channels.
    """
    _check4(y)
    if weights.shape[3] != y.shape[3]:
        raise ValueError(f"weights expect {weights.shape[3]} channels, input has {y.shape[3]}")
    return _correlate(y, _convt_matrix(weights), bias)[0]


def conv2d_transpose_backward(grad_out, y, weights, cols=None):
    _check4(grad_out, "grad_out")
    if grad_out.shape[:3] != y.shape[:3] or grad_out.shape[3] != weights.shape[2]:
        raise ValueError("grad_out shape does not match the forward output")
    if cols is None:
        cols = _kernels().im2col3x3(np.ascontiguousarray(y))
    gy, gk, gb = _correlate_backward(grad_out, y.shape, _convt_matrix(weights), cols)
    gw = gk.reshape(3, 3, weights.shape[3], weights.shape[2]).transpose(0, 1, 3, 2)
    return gy, np.ascontiguousarray(gw), gb


def avg_pool_forward(x):
    _check4(x)
    if x.shape[1] % 2 or x.shape[2] % 2:
        raise ValueError(f"average pooling needs even spatial dims, got {x.shape[1:3]}")
    return _kernels().avgpool2_forward(np.ascontiguousarray(x))


def avg_pool_backward(grad_out):
    return _kernels().avgpool2_backward(np.ascontiguousarray(grad_out))


def upsample_bilinear_forward(x):
    """Factor-2 bilinear upsampling, half-pixel centers, clamped at the edges."""
    _check4(x)
    return _kernels().upsample2_forward(np.ascontiguousarray(x))


def upsample_bilinear_backward(grad_out):
    return _kernels().upsample2_backward(np.ascontiguousarray(grad_out))


def dense_forward(x, weights, bias=None):
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"dense layer expects (batch, {weights.shape[0]}), got {x.shape}")
    out = x @ weights
    if bias is not None:
        out += bias
    return out


def dense_backward(grad_out, x, weights):
    if grad_out.shape != (x.shape[0], weights.shape[1]):
        raise ValueError("grad_out shape does not match the forward output")
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def plrelu_forward(x, leak):
    x = np.ascontiguousarray(x)
    if x.ndim != 4:
        return _kernels().plrelu_forward(x.reshape(1, 1, 1, -1), float(leak)).reshape(x.shape)
    return _kernels().plrelu_forward(x, float(leak))


def plrelu_backward(grad_out, x, leak):
    """Returns ``(grad_input, grad_leak)``."""
    g = np.ascontiguousarray(grad_out)
    x = np.ascontiguousarray(x)
    if x.ndim != 4:
        gx, gl = _kernels().plrelu_backward(g.reshape(1, 1, 1, -1), x.reshape(1, 1, 1, -1),
                                            float(leak))
        return gx.reshape(x.shape), gl
    return _kernels().plrelu_backward(g, x, float(leak))


class Layer:
    """A chain element. Parameters live in views into the owning chain's
    flat vector; gradients are written into matching views."""

    kind = "layer"

    def param_shapes(self) -> list[tuple[int, ...]]:
        return []

    def bind(self, params, grads):
        self.params = params
        self.grads = grads

    def init(self, rng, dtype):
        pass

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x):
        raise NotImplementedError

    def backward(self, g):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}()"


def _he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, c_in, c_out):
        self.c_in, self.c_out = c_in, c_out

    def param_shapes(self):
        return [(3, 3, self.c_in, self.c_out), (self.c_out,)]

    def init(self, rng, dtype):
        w, b = self.params
        w[...] = _he_normal(rng, w.shape, 9 * self.c_in, dtype)
        b[...] = 0

    def output_shape(self, in_shape):
        return in_shape[:2] + (self.c_out,)

    def forward(self, x):
        w, b = self.params
        out, cols = _correlate(x, _conv_matrix(w), b)
        self._cache = (x.shape, cols)
        return out

    def backward(self, g):
        w, _ = self.params
        shape, cols = self._cache
        gx, gk, gb = _correlate_backward(g, shape, _conv_matrix(w), cols)
        self.grads[0][...] = gk.reshape(w.shape)[::-1, ::-1]
        self.grads[1][...] = gb
        self._cache = None
        return gx

    def __repr__(self):
        return f"Conv2D({self.c_in}->{self.c_out})"


class Conv2DTranspose(Layer):
    kind = "conv_transpose"

    def __init__(self, c_in, c_out):
        self.c_in, self.c_out = c_in, c_out

    def param_shapes(self):
        return [(3, 3, self.c_out, self.c_in), (self.c_out,)]

    def init(self, rng, dtype):
        w, b = self.params
        w[...] = _he_normal(rng, w.shape, 9 * self.c_in, dtype)
        b[...] = 0

    def output_shape(self, in_shape):
        return in_shape[:2] + (self.c_out,)

    def forward(self, x):
        w, b = self.params
        out, cols = _correlate(x, _convt_matrix(w), b)
        self._cache = (x.shape, cols)
        return out

    def backward(self, g):
        w, _ = self.params
        shape, cols = self._cache
        gx, gk, gb = _correlate_backward(g, shape, _convt_matrix(w), cols)
        self.grads[0][...] = gk.reshape(3, 3, self.c_in, self.c_out).transpose(0, 1, 3, 2)
        self.grads[1][...] = gb
        self._cache = None
        return gx

    def __repr__(self):
        return f"Conv2DTranspose({self.c_in}->{self.c_out})"


class AvgPool(Layer):
    kind = "avg_pool"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        if h % 2 or w % 2:
            raise ValueError(f"average pooling needs even spatial dims, got {h}x{w}")
        return (h // 2, w // 2, c)

    def forward(self, x):
        return avg_pool_forward(x)

    def backward(self, g):
        return avg_pool_backward(g)


class Upsample(Layer):
    kind = "upsample"

    def output_shape(self, in_shape):
        h, w, c = in_shape
        return (2 * h, 2 * w, c)

    def forward(self, x):
        return upsample_bilinear_forward(x)

    def backward(self, g):
        return upsample_bilinear_backward(g)


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out):
        self.n_in, self.n_out = n_in, n_out

    def param_shapes(self):
        return [(self.n_in, self.n_out), (self.n_out,)]

    def init(self, rng, dtype):
        w, b = self.params
        w[...] = _he_normal(rng, w.shape, self.n_in, dtype)
        b[...] = 0

    def output_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ValueError(f"dense layer expects ({self.n_in},), got {in_shape}")
        return (self.n_out,)

    def forward(self, x):
        w, b = self.params
        self._x = x
        return dense_forward(x, w, b)

    def backward(self, g):
        w, _ = self.params
        gx, gw, gb = dense_backward(g, self._x, w)
        self.grads[0][...] = gw
        self.grads[1][...] = gb
        self._x = None
        return gx

    def __repr__(self):
        return f"Dense({self.n_in}->{self.n_out})"


class PLReLU(Layer):
    """Leaky ReLU whose single negative slope is a trained parameter."""

    kind = "plrelu"

    def __init__(self, init_leak=0.25):
        self.init_leak = init_leak

    def param_shapes(self):
        return [(1,)]

    def init(self, rng, dtype):
        self.params[0][...] = self.init_leak

    def forward(self, x):
        self._x = x
        return plrelu_forward(x, self.params[0][0])

    def backward(self, g):
        gx, gl = plrelu_backward(g, self._x, self.params[0][0])
        self.grads[0][0] = gl
        self._x = None
        return gx


class Reshape(Layer):
    """Reshape the per-example tensor to ``shape``; the batch axis is kept."""

    kind = "reshape"

    def __init__(self, shape):
        self.shape = tuple(int(s) for s in shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ValueError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape

    def forward(self, x):
        self._in = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, g):
        return g.reshape(self._in)

    def __repr__(self):
        return f"Reshape({self.shape})"


class Chain:
    """A fixed sequence of layers sharing one flat parameter vector."""

    def __init__(self, layers, dtype=np.float32):
        self.layers = list(layers)
        self.dtype = np.dtype(dtype)
        shapes = [s for layer in self.layers for s in layer.param_shapes()]
        self.n_params = int(sum(int(np.prod(s)) for s in shapes))
        self.params = np.zeros(self.n_params, dtype=self.dtype)
        self.grads = np.zeros(self.n_params, dtype=self.dtype)
        self._bind()
        self.forward_calls = 0

    def _bind(self):
        offset = 0
        for layer in self.layers:
            pv, gv = [], []
            for shape in layer.param_shapes():
                n = int(np.prod(shape))
                pv.append(self.params[offset:offset + n].reshape(shape))
                gv.append(self.grads[offset:offset + n].reshape(shape))
                offset += n
            layer.bind(pv, gv)

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng, self.dtype)

    def set_params(self, flat):
        flat = np.asarray(flat)
        if flat.shape != self.params.shape:
            raise ValueError(f"expected {self.params.shape} parameters, got {flat.shape}")
        self.params[...] = flat

    def forward(self, x, start=0, stop=None):
        x = np.asarray(x, dtype=self.dtype)
        for layer in self.layers[start:stop]:
            x = layer.forward(x)
        if start == 0:
            self.forward_calls += 1
        return x

    def backward(self, g, start=0, stop=None):
        """Backpropagate ``g`` through ``layers[start:stop]``; grads are
        overwritten for those layers."""
        g = np.asarray(g, dtype=self.dtype)
        for layer in reversed(self.layers[start:stop]):
            g = layer.backward(g)
        return g

    def output_shape(self, in_shape):
        shape = tuple(in_shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape
