"""Checkpoint files: one ``.npz`` holding a JSON descriptor and every named tensor.

The descriptor carries the model config, the vocabulary, LoRA scales and the
trainable/frozen flag of each parameter, so a checkpoint is self-describing
and loads back bit-exactly.
"""

from __future__ import annotations

import hashlib
import json
import re
from pathlib import Path

import numpy as np

from .assembly import Vocab
from .errors import ContractError
from .model import Classifier, ModelConfig
from .nn import Params
from .tensor import Tensor

FORMAT = "jointcls-checkpoint/1"
_CKPT_RE = re.compile(r"^ckpt-(\d+)\.npz$")


def save_checkpoint(path, model, extra=None):
    path = Path(path)
    params = model.params
    meta = {
        "format": FORMAT,
        "config": model.config.to_dict(),
        "vocab": model.vocab.itos,
        "lora": params.lora,
        "frozen": sorted(k for k, v in params.items() if not v.requires_grad),
        "names": sorted(params),
        "extra": extra or {},
    }
    arrays = {f"param/{i}": params[k].data for i, k in enumerate(meta["names"])}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def read_checkpoint(path):
    """Return ``(meta, {name: ndarray})``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != FORMAT:
                raise ContractError(f"{path}: not a checkpoint of format {FORMAT}")
            arrays = {name: z[f"param/{i}"] for i, name in enumerate(meta["names"])}
    except (OSError, KeyError, ValueError) as e:
        raise ContractError(f"cannot read checkpoint {path}: {e}") from e
    return meta, arrays


def load_checkpoint(path):
    meta, arrays = read_checkpoint(path)
    frozen = set(meta["frozen"])
    params = Params({k: Tensor(a, requires_grad=k not in frozen) for k, a in arrays.items()})
    params.lora = {k: float(v) for k, v in meta["lora"].items()}
    model = Classifier(ModelConfig.from_dict(meta["config"]), Vocab.from_itos(meta["vocab"]),
                       params)
    return model


def params_digest(params):
    """SHA-256 over parameter names and raw bytes, for change detection."""
    h = hashlib.sha256()
    for k in sorted(params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(params[k].data).tobytes())
    return h.hexdigest()


def checkpoint_path(directory, step):
    return Path(directory) / f"ckpt-{step:08d}.npz"


def list_checkpoints(directory):
    """Step-sorted ``[(step, path)]`` of ``ckpt-*.npz`` files in ``directory``."""
    found = []
    for p in Path(directory).glob("ckpt-*.npz"):
        m = _CKPT_RE.match(p.name)
        if m:
            found.append((int(m.group(1)), p))
    return sorted(found)


def save_rotating(directory, step, model, keep=3, extra=None):
    """Write ``ckpt-<step>.npz`` and delete all but the newest ``keep`` snapshots."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = save_checkpoint(checkpoint_path(directory, step), model, extra)
    for _, old in list_checkpoints(directory)[:-keep] if keep > 0 else []:
        old.unlink()
    return path
