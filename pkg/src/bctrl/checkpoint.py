"""Weight checkpoints as versioned JSON.

Layout::

    {
      "format": "bctrl-checkpoint",
      "version": 1,
      "section": "conv_stack2d" | "hybrid_params",
      "scalars": {name: float, ...},
      "arrays": {name: {"shape": [...], "data": [row-major floats]}, ...}
    }

Floats are written with Python's shortest round-trip repr, so loading
restores every weight bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from bctrl.guess import ConvStack2D
from bctrl.hybrid import HybridParams, SpatioTemporalNet

FORMAT = "bctrl-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {k: {"shape": list(v.shape), "data": np.asarray(v, dtype=float).ravel().tolist()} for k, v in arrays.items()}


def _unpack(entry: dict, name: str) -> np.ndarray:
    try:
        return np.array(entry["data"], dtype=float).reshape(entry["shape"])
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"bad array {name!r}: {e}") from e


def _write(path, section: str, scalars: dict, arrays: dict) -> None:
    doc = {"format": FORMAT, "version": VERSION, "section": section, "scalars": scalars, "arrays": _pack(arrays)}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _read(path, section: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"{path}: not a checkpoint ({e})") from e
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')}")
    if doc.get("section") != section:
        raise CheckpointError(f"{path}: holds {doc.get('section')!r}, expected {section!r}")
    return doc


def save_conv_stack(net: ConvStack2D, path) -> None:
    _write(path, "conv_stack2d", {}, dict(zip(net.param_names(), net.parameters())))


def load_conv_stack(path) -> ConvStack2D:
    doc = _read(path, "conv_stack2d")
    arrays = doc["arrays"]
    try:
        ws = [_unpack(arrays[f"layer{k}.weight"], f"layer{k}.weight") for k in range(4)]
        bs = [_unpack(arrays[f"layer{k}.bias"], f"layer{k}.bias") for k in range(4)]
    except KeyError as e:
        raise CheckpointError(f"{path}: missing array {e}") from None
    return ConvStack2D(ws, bs)


def save_hybrid_params(params: HybridParams, path) -> None:
    scalars = {"eta_adam": params.eta_adam, "eta_rms": params.eta_rms, "eta_net": params.eta_net,
               "exploration_log_std": params.exploration_log_std}
    _write(path, "hybrid_params", scalars, params.net.named_parameters())


def load_hybrid_params(path) -> HybridParams:
    doc = _read(path, "hybrid_params")
    s = doc["scalars"]
    net = SpatioTemporalNet.zeros()
    named = net.named_parameters()
    for k, target in named.items():
        if k not in doc["arrays"]:
            raise CheckpointError(f"{path}: missing array {k!r}")
        a = _unpack(doc["arrays"][k], k)
        if a.shape != target.shape:
            raise CheckpointError(f"{path}: {k} has shape {a.shape}, expected {target.shape}")
        target[...] = a
    return HybridParams(float(s["eta_adam"]), float(s["eta_rms"]), float(s["eta_net"]), net,
                        float(s["exploration_log_std"]))
