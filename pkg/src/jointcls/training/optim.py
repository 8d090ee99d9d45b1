"""AdamW with per-group learning rates and weight-decay exclusion."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import nn
from ..errors import ConfigError

ENCODER_PREFIXES = ("enc.", "cls.", "dec.")


@dataclass
class OptimizerConfig:
    encoder_lr: float = 1e-5
    encoder_weight_decay: float = 0.01
    head_lr: float = 3e-5
    head_weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.encoder_lr <= 0 or self.head_lr <= 0:
            raise ConfigError("learning rates must be > 0")
        if self.encoder_weight_decay < 0 or self.head_weight_decay < 0:
            raise ConfigError("weight decay must be >= 0")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def param_groups(params, cfg):
    """Split trainable parameters into encoder/head x decay/no-decay groups."""
    groups = {}
    for name, p in params.items():
        if not p.requires_grad:
            continue
        is_enc = name.startswith(ENCODER_PREFIXES)
        lr = cfg.encoder_lr if is_enc else cfg.head_lr
        wd = 0.0 if nn.is_no_decay(name) else (
            cfg.encoder_weight_decay if is_enc else cfg.head_weight_decay)
        groups.setdefault((lr, wd), []).append(name)
    return [{"lr": lr, "weight_decay": wd, "names": names}
            for (lr, wd), names in groups.items()]


class AdamW:
    """Decoupled weight decay Adam over a :class:`~jointcls.nn.Params` store.

    Parameters whose ``grad`` is None are left untouched for that step.
    """

    def __init__(self, params, groups, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.groups = groups
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    @classmethod
    def from_config(cls, params, cfg):
        return cls(params, param_groups(params, cfg), cfg.betas, cfg.eps)

    def zero_grad(self):
        self.params.zero_grad()

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for name in g["names"]:
                p = self.params[name]
                if p.grad is None:
                    continue
                grad = p.grad
                m = self.m.get(name)
                if m is None:
                    m = self.m[name] = np.zeros_like(p.data)
                    self.v[name] = np.zeros_like(p.data)
                v = self.v[name]
                m *= self.b1
                m += (1.0 - self.b1) * grad
                v *= self.b2
                v += (1.0 - self.b2) * grad * grad
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                data = p.data
                if wd:
                    data = data - lr * wd * data
                p.data = data - lr * update
        self.params.version += 1
