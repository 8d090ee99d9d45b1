"""Named parameter storage and the small building blocks shared by all models."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ContractError
from .tensor import Tensor

INIT_STD = 0.02


class Params(dict):
    """Mapping ``name -> Tensor`` plus LoRA bookkeeping.

    ``lora`` maps a linear-map name (e.g. ``"enc.layers.0.attn.query"``) to
    its adapter scale ``alpha / r``. ``version`` is bumped on every in-place
    update so derived caches can tell when they are stale.
    """

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.lora = {}
        self.version = 0

    def trainable(self):
        return {k: v for k, v in self.items() if v.requires_grad}

    def zero_grad(self):
        for v in self.values():
            v.grad = None

    def copy(self):
        """Deep copy of values and LoRA metadata."""
        out = Params({k: Tensor(v.data.copy(), requires_grad=v.requires_grad)
                      for k, v in self.items()})
        out.lora = dict(self.lora)
        return out

    def arrays(self):
        return {k: v.data for k, v in self.items()}

    def linear_names(self):
        return sorted(k[: -len(".weight")] for k, v in self.items()
                      if k.endswith(".weight") and v.ndim == 2 and not k.endswith("emb.weight"))


def normal(rng, shape, std=INIT_STD):
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def zeros(shape):
    return Tensor(np.zeros(shape), requires_grad=True)


def ones(shape):
    return Tensor(np.ones(shape), requires_grad=True)


def init_linear(params, name, rng, d_in, d_out, bias=True):
    params[name + ".weight"] = normal(rng, (d_in, d_out))
    if bias:
        params[name + ".bias"] = zeros((d_out,))


def init_layer_norm(params, name, d):
    params[name + ".weight"] = ones((d,))
    params[name + ".bias"] = zeros((d,))


def linear(params, name, x):
    """``x @ W (+ b)`` with the LoRA update ``scale * (x @ A) @ B`` when attached."""
    try:
        w = params[name + ".weight"]
    except KeyError:
        raise ContractError(f"missing parameter {name}.weight") from None
    y = x @ w
    b = params.get(name + ".bias")
    if b is not None:
        y = y + b
    scale = params.lora.get(name)
    if scale is not None:
        y = y + ((x @ params[name + ".lora_A"]) @ params[name + ".lora_B"]) * scale
    return y


def layer_norm(params, name, x):
    return T.layer_norm(x, params[name + ".weight"], params[name + ".bias"])


def is_no_decay(name):
    """Biases and LayerNorm parameters are excluded from weight decay."""
    return name.endswith(".bias") or ".ln" in name or name.startswith("ln") or ".norm" in name
