"""Dense-tensor layers with hand-written reverse-mode gradients.

The hot kernels come from the compiled ``_ckernels`` extension when it is
importable and from ``_pykernels`` otherwise. Set ``RADIOMAP_BACKEND=python``
to force the numpy fallback.
"""
import os

from radiomap.neuralcore import _pykernels

if os.environ.get("RADIOMAP_BACKEND", "").lower() in ("python", "numpy"):
    kernels = _pykernels
else:
    try:
        from radiomap.neuralcore import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

BACKEND = kernels.BACKEND

from radiomap.neuralcore.adam import AdamState, adam_step  # noqa: E402
from radiomap.neuralcore.layers import (  # noqa: E402
    AvgPool, Chain, Conv2D, Conv2DTranspose, Dense, Layer, PLReLU, Reshape, Upsample,
    avg_pool_backward, avg_pool_forward, conv2d_backward, conv2d_forward,
    conv2d_transpose_backward, conv2d_transpose_forward, dense_backward, dense_forward,
    plrelu_backward, plrelu_forward, upsample_bilinear_backward, upsample_bilinear_forward,
    use_kernels,
)
from radiomap.neuralcore.checkpoint import load_chain, save_chain, chain_from_bytes, chain_to_bytes  # noqa: E402

__all__ = [
    "AdamState", "adam_step", "AvgPool", "Chain", "Conv2D", "Conv2DTranspose", "Dense",
    "Layer", "PLReLU", "Reshape", "Upsample", "avg_pool_backward", "avg_pool_forward",
    "conv2d_backward", "conv2d_forward", "conv2d_transpose_backward",
    "conv2d_transpose_forward", "dense_backward", "dense_forward", "plrelu_backward",
    "plrelu_forward", "upsample_bilinear_backward", "upsample_bilinear_forward",
    "use_kernels", "kernels", "BACKEND", "load_chain", "save_chain", "chain_from_bytes",
    "chain_to_bytes",
]
