"""Checkpoint directory: ``params.bin`` plus ``manifest.json``.

``params.bin`` is the concatenation of every tensor as little-endian float32
in row-major order. The manifest indexes each tensor by name with its shape,
byte offset, byte length and SHA-256, and carries run metadata (task, config
echo, epoch, step, metrics tail, RNG state). Files are written to a temporary
name and renamed into place.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptCheckpoint, VersionMismatch

FORMAT_VERSION = 1
BLOB = "params.bin"
MANIFEST = "manifest.json"


class ParameterStore(OrderedDict):
    """Ordered ``name -> float32 ndarray`` mapping."""

    def __setitem__(self, name, value):
        arr = np.ascontiguousarray(np.asarray(value, dtype=np.float32))
        if name in self and self[name].shape != arr.shape:
            raise ValueError(f"shape of {name!r} is fixed at {self[name].shape}")
        super().__setitem__(name, arr)

    @classmethod
    def from_module(cls, module: torch.nn.Module, optimizer: torch.optim.Optimizer | None = None) -> "ParameterStore":
        store = cls()
        for name, t in module.state_dict().items():
            store[name] = t.detach().cpu().numpy()
        if optimizer is not None:
            names = {id(p): n for n, p in module.named_parameters()}
            for group in optimizer.param_groups:
                for p in group["params"]:
                    st = optimizer.state.get(p)
                    if not st:
                        continue
                    n = names[id(p)]
                    store[f"optim.exp_avg.{n}"] = st["exp_avg"].detach().cpu().numpy()
                    store[f"optim.exp_avg_sq.{n}"] = st["exp_avg_sq"].detach().cpu().numpy()
                    store[f"optim.step.{n}"] = np.asarray([float(st["step"])])
        return store

    def model_state(self) -> dict[str, torch.Tensor]:
        return {k: torch.from_numpy(v.copy()) for k, v in self.items() if not k.startswith("optim.")}

    def load_into(self, module: torch.nn.Module, optimizer: torch.optim.Optimizer | None = None) -> None:
        module.load_state_dict(self.model_state())
        if optimizer is None:
            return
        for name, p in module.named_parameters():
            key = f"optim.exp_avg.{name}"
            if key not in self:
                continue
            optimizer.state[p] = {
                "step": torch.tensor(float(self[f"optim.step.{name}"][0])),
                "exp_avg": torch.from_numpy(self[key].copy()).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(self[f"optim.exp_avg_sq.{name}"].copy()).to(p.dtype),
            }


def encode_rng_state(state: torch.Tensor) -> str:
    return base64.b64encode(state.numpy().tobytes()).decode("ascii")


def decode_rng_state(text: str) -> torch.Tensor:
    return torch.from_numpy(np.frombuffer(base64.b64decode(text), dtype=np.uint8).copy())


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def save_checkpoint(store: ParameterStore, path: str | Path, **fields) -> Path:
    """Write ``store`` and manifest ``fields`` (task, config, epoch, ...) to ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index, chunks, offset = {}, [], 0
    for name, arr in store.items():
        raw = arr.astype("<f4").tobytes()
        index[name] = {
            "shape": list(arr.shape),
            "dtype": "float32",
            "offset": offset,
            "length": len(raw),
            "sha256": hashlib.sha256(raw).hexdigest(),
        }
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format_version": FORMAT_VERSION, **fields, "parameters": index, "total_bytes": offset}
    _atomic_write(path / BLOB, b"".join(chunks))
    _atomic_write(path / MANIFEST, json.dumps(manifest, indent=1, sort_keys=True).encode())
    return path


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / MANIFEST).read_text())
        blob = (path / BLOB).read_bytes()
    except FileNotFoundError as e:
        raise CorruptCheckpoint(f"{path}: missing {e.filename}") from e
    except json.JSONDecodeError as e:
        raise CorruptCheckpoint(f"{path}: unreadable manifest ({e})") from e
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatch(f"checkpoint format {manifest.get('format_version')} != {FORMAT_VERSION}")
    if len(blob) != manifest.get("total_bytes"):
        raise CorruptCheckpoint(f"{path}: blob has {len(blob)} bytes, manifest says {manifest.get('total_bytes')}")
    store = ParameterStore()
    spans = sorted((e["offset"], e["offset"] + e["length"]) for e in manifest["parameters"].values())
    for (_, end), (start, _) in zip(spans, spans[1:]):
        if start < end:
            raise CorruptCheckpoint(f"{path}: overlapping tensor spans")
    # restore blob order; the manifest's keys are sorted
    for name, e in sorted(manifest["parameters"].items(), key=lambda kv: kv[1]["offset"]):
        raw = blob[e["offset"] : e["offset"] + e["length"]]
        if hashlib.sha256(raw).hexdigest() != e["sha256"]:
            raise CorruptCheckpoint(f"{path}: hash mismatch for {name!r}")
        store[name] = np.frombuffer(raw, dtype="<f4").reshape(e["shape"])
    return store, manifest
