"""Low-rank adapters on selected linear maps."""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ConfigError
from ..tensor import Tensor

# Linear-map names in this package, e.g. "enc.layers.0.attn.query",
# "enc.layers.1.ffn.fc2", "scorer.mlp.0", "reweight.proj".
DEFAULT_TARGETS = (r"attn\.(query|key|value|out)$", r"ffn\.fc[12]$", r"scorer\.mlp\.\d+$")


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = 16.0
    targets: tuple = DEFAULT_TARGETS
    focal_alpha: float = 0.7

    def __post_init__(self):
        self.targets = tuple(self.targets)
        if self.rank < 1:
            raise ConfigError("LoRA rank must be >= 1")
        if not self.targets:
            raise ConfigError("LoRA needs at least one target pattern")

    @property
    def scale(self):
        return self.alpha / self.rank

    def to_dict(self):
        d = asdict(self)
        d["targets"] = list(self.targets)
        return d


def match_targets(params, patterns):
    regs = [re.compile(p) for p in patterns]
    return [name for name in params.linear_names() if any(r.search(name) for r in regs)]


def apply_lora(params, cfg, seed=0):
    """Copy of ``params`` with adapters on every linear map matching ``cfg.targets``.

    Base weights are frozen. ``lora_A`` [in, r] is drawn from N(0, 1/in) and
    ``lora_B`` [r, out] starts at zero, so the adapted model initially
    computes exactly what the base model does.
    """
    names = match_targets(params, cfg.targets)
    if not names:
        raise ConfigError(f"LoRA target patterns {list(cfg.targets)} match no linear map")
    rng = np.random.default_rng(seed)
    out = params.copy()
    for p in out.values():
        p.requires_grad = False
    for name in names:
        d_in, d_out = out[name + ".weight"].shape
        out[name + ".lora_A"] = Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), (d_in, cfg.rank)),
                                       requires_grad=True)
        out[name + ".lora_B"] = Tensor(np.zeros((cfg.rank, d_out)), requires_grad=True)
        out.lora[name] = cfg.scale
    return out


def merge_lora(params):
    """Fold every adapter into its base weight: W + scale * A @ B. All params become trainable."""
    out = params.copy()
    for name, scale in list(out.lora.items()):
        a = out.pop(name + ".lora_A").data
        b = out.pop(name + ".lora_B").data
        w = out[name + ".weight"]
        out[name + ".weight"] = Tensor(w.data + scale * (a @ b))
    out.lora = {}
    for p in out.values():
        p.requires_grad = True
    return out
