"""Checkpoint container: optimizer step, model tensors, Adam moments, and a
JSON echo of the training configuration, in one little-endian binary file."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .binio import ContainerError, read_magic, read_named_tensor, read_u32, \
    write_magic, write_named_tensor, write_u32

CHECKPOINT_MAGIC = b"SVSCKPT1"


@dataclass
class Checkpoint:
    step: int
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)  # opaque config echo


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    path = os.fspath(path)
    config_blob = json.dumps(ckpt.config, sort_keys=True,
                             separators=(",", ":")).encode("utf-8")
    named: list[tuple[str, np.ndarray]] = [("step", np.array([float(ckpt.step)]))]
    named += sorted((f"param.{k}", v) for k, v in ckpt.params.items())
    named += sorted((f"adam_m.{k}", v) for k, v in ckpt.adam_m.items())
    named += sorted((f"adam_v.{k}", v) for k, v in ckpt.adam_v.items())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        write_magic(fh, CHECKPOINT_MAGIC)
        write_u32(fh, len(config_blob))
        fh.write(config_blob)
        write_u32(fh, len(named))
        for name, array in named:
            write_named_tensor(fh, name, array)
    os.replace(tmp, path)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        version = read_magic(fh, CHECKPOINT_MAGIC)
        if version != 1:
            raise ContainerError(f"unsupported checkpoint version {version}")
        config_len = read_u32(fh)
        config = json.loads(fh.read(config_len).decode("utf-8"))
        count = read_u32(fh)
        tensors = dict(read_named_tensor(fh) for _ in range(count))
    if "step" not in tensors:
        raise ContainerError("checkpoint has no step counter")
    groups: dict[str, dict[str, np.ndarray]] = {"param": {}, "adam_m": {}, "adam_v": {}}
    for name, array in tensors.items():
        if name == "step":
            continue
        group, _, rest = name.partition(".")
        if group not in groups or not rest:
            raise ContainerError(f"unexpected tensor {name!r} in checkpoint")
        groups[group][rest] = array
    return Checkpoint(
        step=int(tensors["step"].item()),
        params=groups["param"],
        adam_m=groups["adam_m"],
        adam_v=groups["adam_v"],
        config=config,
    )
