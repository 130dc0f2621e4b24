"""Single-file checkpoint archives shared by the synthesis and retrieval
trainers.

An archive is a numpy ``.npz`` (zip) holding a JSON metadata blob (version
tag, model kind, config echo, training counters), every named parameter and
buffer as a float32 (or integer) array, and optionally the optimizer state.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import CheckpointIncompatible, MissingFile

FORMAT_VERSION = "egoexo-ckpt-1"


def _to_numpy(t: torch.Tensor) -> np.ndarray:
    arr = t.detach().cpu().numpy()
    if arr.dtype in (np.float64, np.float16):
        arr = arr.astype(np.float32)
    return arr


def save_checkpoint(
    path: str | Path,
    kind: str,
    config: dict,
    model: torch.nn.Module,
    optimizers: Optional[dict[str, torch.optim.Optimizer]] = None,
    epoch: int = 0,
    steps_trained: int = 0,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        arrays[f"param.{name}"] = _to_numpy(tensor)

    opt_meta: dict = {}
    if optimizers:
        for opt_name, opt in optimizers.items():
            sd = opt.state_dict()
            opt_meta[opt_name] = {"param_groups": sd["param_groups"], "state_keys": {}}
            for pid, state in sd["state"].items():
                keys = []
                for field, value in state.items():
                    key = f"opt.{opt_name}.{pid}.{field}"
                    if isinstance(value, torch.Tensor):
                        arrays[key] = _to_numpy(value)
                    else:
                        arrays[key] = np.asarray(value)
                    keys.append(field)
                opt_meta[opt_name]["state_keys"][str(pid)] = keys

    meta = {
        "version": FORMAT_VERSION,
        "kind": kind,
        "config": config,
        "epoch": epoch,
        "steps_trained": steps_trained,
        "optimizers": opt_meta,
    }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


class Checkpoint:
    """Loaded archive contents."""

    def __init__(self, meta: dict, arrays: dict[str, np.ndarray]):
        self.meta = meta
        self.arrays = arrays

    @property
    def kind(self) -> str:
        return self.meta["kind"]

    @property
    def config(self) -> dict:
        return self.meta["config"]

    @property
    def epoch(self) -> int:
        return int(self.meta.get("epoch", 0))

    @property
    def steps_trained(self) -> int:
        return int(self.meta.get("steps_trained", 0))

    def state_dict(self) -> dict[str, torch.Tensor]:
        out = {}
        for key, arr in self.arrays.items():
            if key.startswith("param."):
                out[key[len("param."):]] = torch.from_numpy(arr.copy())
        return out

    def apply_to(self, model: torch.nn.Module) -> None:
        """Load parameters into a model; any missing, unexpected, or
        shape-mismatched entry raises CheckpointIncompatible."""
        state = self.state_dict()
        target = model.state_dict()
        if set(state) != set(target):
            missing = sorted(set(target) - set(state))
            extra = sorted(set(state) - set(target))
            raise CheckpointIncompatible(
                f"parameter names differ (missing {missing[:4]}, unexpected {extra[:4]})"
            )
        for name, tensor in state.items():
            if tuple(tensor.shape) != tuple(target[name].shape):
                raise CheckpointIncompatible(
                    f"shape mismatch for {name}: checkpoint {tuple(tensor.shape)} "
                    f"vs model {tuple(target[name].shape)}"
                )
        converted = {
            name: tensor.to(target[name].dtype) for name, tensor in state.items()
        }
        model.load_state_dict(converted)

    def restore_optimizer(self, name: str, optimizer: torch.optim.Optimizer) -> bool:
        """Restore optimizer state saved under ``name``; returns False when
        the archive carries no state for it."""
        opt_meta = self.meta.get("optimizers", {})
        if name not in opt_meta:
            return False
        sd = optimizer.state_dict()
        groups = opt_meta[name]["param_groups"]
        if len(groups) != len(sd["param_groups"]) or any(
            len(g["params"]) != len(s["params"]) for g, s in zip(groups, sd["param_groups"])
        ):
            raise CheckpointIncompatible(f"optimizer {name}: parameter layout differs")
        state = {}
        for pid_str, fields in opt_meta[name]["state_keys"].items():
            pid = int(pid_str)
            entry = {}
            for field in fields:
                arr = self.arrays[f"opt.{name}.{pid}.{field}"]
                entry[field] = torch.from_numpy(np.asarray(arr).copy())
            state[pid] = entry
        optimizer.load_state_dict({"param_groups": groups, "state": state})
        return True


def load_checkpoint(path: str | Path, expect_kind: Optional[str] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (ValueError, OSError) as exc:
        raise CheckpointIncompatible(f"{path} is not a checkpoint archive: {exc}") from exc
    if "meta" not in arrays:
        raise CheckpointIncompatible(f"{path}: missing metadata block")
    meta = json.loads(arrays.pop("meta").tobytes().decode("utf-8"))
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointIncompatible(
            f"{path}: format version {meta.get('version')!r}, expected {FORMAT_VERSION!r}"
        )
    if expect_kind is not None and meta.get("kind") != expect_kind:
        raise CheckpointIncompatible(
            f"{path}: checkpoint kind {meta.get('kind')!r}, expected {expect_kind!r}"
        )
    return Checkpoint(meta, arrays)
