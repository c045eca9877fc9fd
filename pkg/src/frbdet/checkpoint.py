"""Single-file checkpoints: a text header followed by little-endian tensor blobs.

Layout::

    frbdet-ckpt-v1\\n
    <header byte length>\\n
    <JSON header: config, iteration, tensor index>\\n
    <raw tensor bytes, in index order>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = "frbdet-ckpt-v1"

_DTYPES = {torch.float32: "<f4", torch.float64: "<f8", torch.int64: "<i8"}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model, config: dict, iteration=0, optimizer=None):
    tensors = {f"model/{k}": v for k, v in model.state_dict().items()}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for group in optimizer.param_groups:
            for p in group["params"]:
                buf = optimizer.state.get(p, {}).get("velocity")
                if buf is not None:
                    tensors[f"velocity/{names[id(p)]}"] = buf
    index, blobs, offset = [], [], 0
    for name, t in tensors.items():
        t = t.detach().cpu()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        data = np.ascontiguousarray(t.numpy()).astype(_DTYPES[t.dtype], copy=False).tobytes()
        index.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape),
                      "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = json.dumps({"format": FORMAT_VERSION, "config": config, "iteration": int(iteration),
                         "tensors": index}).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{FORMAT_VERSION}\n{len(header)}\n".encode("ascii"))
        fh.write(header + b"\n")
        for b in blobs:
            fh.write(b)
    return path


def read_checkpoint(path):
    """Return ``(header dict, {name: tensor})``."""
    with open(path, "rb") as fh:
        magic = fh.readline().decode("ascii", "replace").strip()
        if magic != FORMAT_VERSION:
            raise CheckpointError(f"{path}: incompatible checkpoint format {magic!r}, expected {FORMAT_VERSION}")
        try:
            size = int(fh.readline())
            header = json.loads(fh.read(size))
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt header") from exc
        fh.read(1)
        blob = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        raw = blob[entry["offset"]:entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CheckpointError(f"{path}: truncated tensor {entry['name']}")
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])
        tensors[entry["name"]] = torch.from_numpy(arr.astype(arr.dtype.newbyteorder("="), copy=True))
    return header, tensors


def load_checkpoint(path, optimizer_factory=None):
    """Rebuild the model (and optionally an optimiser) from a checkpoint.

    Returns ``(model, run_config, iteration, optimizer_or_None)``.
    """
    from .config import RunConfig
    from .model import FRBDetector

    header, tensors = read_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    model = FRBDetector(cfg.model)
    state = {k[len("model/"):]: v for k, v in tensors.items() if k.startswith("model/")}
    try:
        model.load_state_dict(state)
    except RuntimeError as exc:
        raise CheckpointError(f"{path}: parameters do not fit the stored config: {exc}") from exc
    optimizer = None
    if optimizer_factory is not None:
        optimizer = optimizer_factory(model, cfg)
        params = dict(model.named_parameters())
        for k, v in tensors.items():
            if k.startswith("velocity/"):
                optimizer.state[params[k[len("velocity/"):]]]["velocity"] = v.clone()
    return model, cfg, header["iteration"], optimizer
