"""ADAM with bias correction, operating in place on flat parameter vectors."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def zeros_like(cls, params, **kw) -> "AdamState":
        return cls(m=np.zeros_like(params), v=np.zeros_like(params), **kw)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> np.ndarray:
    """Update ``params`` in place and return it; ``state`` advances one step."""
    if params.shape != grads.shape:
        raise ValueError(f"params {params.shape} and grads {grads.shape} differ in length")
    if state.m is None:
        state.m = np.zeros_like(params)
        state.v = np.zeros_like(params)
    if state.m.shape != params.shape:
        raise ValueError("optimizer state does not match the parameter vector")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grads
    state.v *= b2
    state.v += (1 - b2) * np.square(grads)
    lr_t = state.lr * np.sqrt(1 - b2 ** state.step) / (1 - b1 ** state.step)
    # eps scaled so the update equals lr * m_hat / (sqrt(v_hat) + eps)
    eps_t = state.eps * np.sqrt(1 - b2 ** state.step)
    params -= (lr_t * state.m / (np.sqrt(state.v) + eps_t)).astype(params.dtype)
    return params
