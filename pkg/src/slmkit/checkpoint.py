"""Single-file checkpoints: JSON header + raw little-endian float64 arrays.

Byte layout (so alternate implementations can interoperate):

    bytes 0..7    magic b"SLMCKPT1"
    bytes 8..15   uint64 little-endian: length H of the JSON header in bytes
    bytes 16..    UTF-8 JSON header of exactly H bytes
    then          one raw array per header entry, in header order, each
                  written as shape-product float64 little-endian values

The header object has keys: "format" (1), "kind" (slm|clm|mlm|bilm),
"seed" (int), "config" (the model config fields), "vocab" (null or
{"mode": ..., "tokens": [...]} including the 5 reserved tokens), and
"params" ([[name, [dims...]], ...]). Arrays are stored float64 regardless
of the training dtype.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from slmkit.autograd import Tensor
from slmkit.errors import ContractError
from slmkit.model import ModelConfig, checkpoint_config, config_from_dict, model_layout
from slmkit.vocab import Vocabulary

MAGIC = b"SLMCKPT1"


def save_checkpoint(path, model, seed: int = 0, vocab: Vocabulary | None = None) -> None:
    params = model.params
    header = {
        "format": 1,
        "kind": model.kind,
        "seed": int(seed),
        "config": checkpoint_config(model.cfg),
        "vocab": None if vocab is None else {"mode": vocab.mode, "tokens": list(vocab.tokens)},
        "params": [[name, list(t.data.shape)] for name, t in params.items()],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for t in params.values():
            fh.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Load a checkpoint; returns (model, seed, vocab)."""
    from slmkit.baselines import MODEL_CLASSES

    path = Path(path)
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise ContractError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("format") != 1:
            raise ContractError(f"{path}: unsupported checkpoint format")
        kind = header["kind"]
        if kind not in MODEL_CLASSES:
            raise ContractError(f"{path}: unknown model kind {kind!r}")
        cfg = config_from_dict(header["config"])
        expected = [(name, tuple(shape)) for name, shape, _ in model_layout(kind, cfg)]
        stored = [(name, tuple(shape)) for name, shape in header["params"]]
        if stored != expected:
            raise ContractError(f"{path}: parameter layout does not match the config")
        dtype = cfg.np_dtype
        params: dict[str, Tensor] = {}
        for name, shape in stored:
            count = int(np.prod(shape))
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ContractError(f"{path}: truncated array {name}")
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(dtype)
            params[name] = Tensor(arr, requires_grad=True, dtype=dtype)
        if fh.read(1):
            raise ContractError(f"{path}: trailing bytes after the last array")
    vocab = None
    if header["vocab"] is not None:
        vocab = Vocabulary(tokens=tuple(header["vocab"]["tokens"]), mode=header["vocab"]["mode"])
    model = MODEL_CLASSES[kind](cfg, params)
    return model, int(header["seed"]), vocab
