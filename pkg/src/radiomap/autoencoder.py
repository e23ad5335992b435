"""Completion autoencoder: architecture, encode/decode and map estimation."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from radiomap.gridmap import Normalizer, SampledMap, concat_input
from radiomap.neuralcore import (
    AvgPool, Chain, Conv2D, Conv2DTranspose, Dense, PLReLU, Reshape, Upsample,
    chain_from_bytes, chain_to_bytes,
)

MAGIC = b"RAEC1"


@dataclass(frozen=True)
class AutoencoderConfig:
    ny: int = 32
    nx: int = 32
    in_channels: int = 2
    latent_dim: int = 64
    stages: int = 3
    filters_per_conv: int = 64
    convs_per_stage: int = 1

    def __post_init__(self):
        f = 2 ** self.stages
        if self.ny % f or self.nx % f:
            raise ValueError(f"grid {self.ny}x{self.nx} not divisible by 2**stages = {f}")
        if self.in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 (no mask) or 2 (values + mask)")
        if min(self.latent_dim, self.stages, self.filters_per_conv, self.convs_per_stage) < 1:
            raise ValueError("latent_dim, stages, filters_per_conv, convs_per_stage must be >= 1")

    @property
    def bottleneck_shape(self) -> tuple[int, int, int]:
        f = 2 ** self.stages
        return (self.ny // f, self.nx // f, self.filters_per_conv)

    @property
    def decoder_dense(self) -> int:
        return int(np.prod(self.bottleneck_shape))

    def parameter_count(self) -> int:
        """Closed-form count of trainable scalars."""
        c, k = self.filters_per_conv, self.convs_per_stage
        conv = lambda cin, cout: 9 * cin * cout + cout + 1  # noqa: E731  weights, bias, leak
        enc = conv(self.in_channels, c) + (k - 1) * conv(c, c)
        enc += (self.stages - 1) * k * conv(c, c)
        enc += self.decoder_dense * self.latent_dim + self.latent_dim
        dec = self.latent_dim * self.decoder_dense + self.decoder_dense + 1
        dec += self.stages * k * conv(c, c)
        dec += 9 * c + 1
        return enc + dec


class Network:
    """Encoder and decoder over one shared flat parameter vector.

    ``normalizer`` maps dBm to the units the network works in.
    """

    def __init__(self, cfg: AutoencoderConfig, chain: Chain, split: int,
                 normalizer: Normalizer | None = None, meta: dict | None = None):
        self.cfg = cfg
        self.chain = chain
        self.split = split
        self.normalizer = normalizer or Normalizer()
        self.meta = dict(meta or {})

    @property
    def encoder(self):
        return self.chain.layers[:self.split]

    @property
    def decoder(self):
        return self.chain.layers[self.split:]

    @property
    def params(self) -> np.ndarray:
        return self.chain.params

    @property
    def grads(self) -> np.ndarray:
        return self.chain.grads

    @property
    def n_params(self) -> int:
        return self.chain.n_params

    @property
    def dtype(self):
        return self.chain.dtype

    @property
    def with_mask(self) -> bool:
        return self.cfg.in_channels == 2

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batch ``(B, ny, nx, C)`` to ``(B, ny, nx, 1)`` normalized maps."""
        self._check_input(x)
        return self.chain.forward(x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        return self.chain.backward(g)

    def _check_input(self, x):
        want = (self.cfg.ny, self.cfg.nx, self.cfg.in_channels)
        if x.ndim != 4 or tuple(x.shape[1:]) != want:
            raise ValueError(f"network input must be (batch,) + {want}, got {x.shape}")

    def copy(self) -> "Network":
        return network_from_bytes(network_to_bytes(self), dtype=self.dtype)


def build_network(cfg: AutoencoderConfig, seed: int = 0, dtype=np.float32,
                  normalizer: Normalizer | None = None) -> Network:
    c = cfg.filters_per_conv
    enc: list = []
    cin = cfg.in_channels
    for _ in range(cfg.stages):
        for _ in range(cfg.convs_per_stage):
            enc += [Conv2D(cin, c), PLReLU()]
            cin = c
        enc.append(AvgPool())
    enc += [Reshape((cfg.decoder_dense,)), Dense(cfg.decoder_dense, cfg.latent_dim)]
    dec: list = [Dense(cfg.latent_dim, cfg.decoder_dense), PLReLU(), Reshape(cfg.bottleneck_shape)]
    for _ in range(cfg.stages):
        dec.append(Upsample())
        for _ in range(cfg.convs_per_stage):
            dec += [Conv2DTranspose(c, c), PLReLU()]
    dec.append(Conv2DTranspose(c, 1))
    chain = Chain(enc + dec, dtype=dtype)
    chain.init(seed)
    return Network(cfg, chain, len(enc), normalizer)


def encode(net: Network, x: np.ndarray) -> np.ndarray:
    """Latent codes for a single ``(ny, nx, C)`` input or a batch of them."""
    single = x.ndim == 3
    xb = x[None] if single else x
    net._check_input(xb)
    code = net.chain.forward(xb, 0, net.split)
    return code[0] if single else code


def decode(net: Network, code: np.ndarray, denormalize: bool = True) -> np.ndarray:
    """Maps from codes; dBm unless ``denormalize`` is False."""
    single = code.ndim == 1
    cb = np.atleast_2d(code)
    if cb.shape[1] != net.cfg.latent_dim:
        raise ValueError(f"code length must be {net.cfg.latent_dim}, got {cb.shape[1]}")
    out = net.chain.forward(cb, net.split)[..., 0]
    if denormalize:
        out = net.normalizer.inverse(out.astype(float))
    return out[0] if single else out


def network_input(net: Network, sm: SampledMap, f_index: int = 0) -> np.ndarray:
    return concat_input(sm, f_index, net.normalizer, with_mask=net.with_mask)


def estimate_map(net: Network, sm: SampledMap, f_index: int = 0) -> np.ndarray:
    """Complete one frequency slab with a single forward pass; returns dBm."""
    x = network_input(net, sm, f_index)[None]
    out = net.forward(x)[0, :, :, 0]
    return net.normalizer.inverse(out.astype(float))


def layer_kinds(layers) -> list[str]:
    return [layer.kind for layer in layers]


def network_to_bytes(net: Network) -> bytes:
    header = dict(asdict(net.cfg), split=net.split, norm_mean=net.normalizer.mean,
                  norm_std=net.normalizer.std, meta=net.meta)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<I", len(blob)) + blob + chain_to_bytes(net.chain)


def network_from_bytes(raw: bytes, dtype=np.float32) -> Network:
    if raw[:5] != MAGIC:
        raise ValueError("not an autoencoder checkpoint (bad magic)")
    (n,) = struct.unpack_from("<I", raw, 5)
    header = json.loads(raw[9:9 + n].decode("utf-8"))
    chain, _ = chain_from_bytes(raw, dtype=dtype, offset=9 + n)
    split = header.pop("split")
    norm = Normalizer(header.pop("norm_mean"), header.pop("norm_std"))
    meta = header.pop("meta", {})
    cfg = AutoencoderConfig(**header)
    return Network(cfg, chain, split, norm, meta)


def save_network(net: Network, path) -> None:
    Path(path).write_bytes(network_to_bytes(net))


def load_network(path, dtype=np.float32) -> Network:
    return network_from_bytes(Path(path).read_bytes(), dtype)
