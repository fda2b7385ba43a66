"""Checkpoint and dataset directories on disk.

A checkpoint directory holds ``manifest.json`` plus one tensor file per
parameter under ``params/``, ``ema/``, ``adam_m/`` and ``adam_v/``.
A dataset directory holds ``manifest.json`` plus one tensor file per sample
and component under ``samples/`` (e.g. ``00000_f.pflw`` and ``00000_u.pflw``).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flow import Normalizer, TrainResult
from .io import read_json, read_tensor, write_json, write_tensor
from .net import NetDescriptor, VelocityNet
from .problems import Problem

CHECKPOINT_FORMAT = "perflow-checkpoint"
DATASET_FORMAT = "perflow-dataset"
FORMAT_VERSION = 1


def _write_params(root: Path, sub: str, params: dict) -> None:
    for name, arr in params.items():
        write_tensor(root / sub / f"{name}.pflw", arr)


def _read_params(root: Path, sub: str, names) -> dict:
    return {name: read_tensor(root / sub / f"{name}.pflw") for name in names}


def save_checkpoint(out_dir, result: TrainResult, problem: Problem, extra: dict | None = None) -> Path:
    root = Path(out_dir)
    names = list(result.net.params)
    _write_params(root, "params", result.net.params)
    _write_params(root, "ema", result.state.ema.params)
    _write_params(root, "adam_m", result.state.adam.m)
    _write_params(root, "adam_v", result.state.adam.v)
    manifest = {
        "format": CHECKPOINT_FORMAT,
        "version": FORMAT_VERSION,
        "net": result.net.desc.to_dict(),
        "n_params": result.net.n_params,
        "parameters": names,
        "problem": problem.to_dict(),
        "normalizer": result.normalizer.to_dict(),
        "projection": result.projection,
        "optimizer": result.state.config_dict(),
        "epoch_losses": [float(x) for x in result.losses],
    }
    manifest.update(extra or {})
    write_json(root / "manifest.json", manifest)
    return root


@dataclass
class Checkpoint:
    net: VelocityNet
    ema_net: VelocityNet
    normalizer: Normalizer
    problem: Problem
    projection: bool
    manifest: dict


def load_checkpoint(path) -> Checkpoint:
    root = Path(path)
    m = read_json(root / "manifest.json")
    if m.get("format") != CHECKPOINT_FORMAT or m.get("version") != FORMAT_VERSION:
        raise ValueError(f"{root} is not a version-{FORMAT_VERSION} checkpoint")
    desc = NetDescriptor.from_dict(m["net"])
    net = VelocityNet(desc, _read_params(root, "params", m["parameters"]))
    ema = VelocityNet(desc, _read_params(root, "ema", m["parameters"]))
    return Checkpoint(net, ema, Normalizer.from_dict(m["normalizer"]), Problem.from_dict(m["problem"]),
                      bool(m["projection"]), m)


def save_dataset(out_dir, data: np.ndarray, problem: Problem, manifest: dict) -> Path:
    root = Path(out_dir)
    names = list(problem.components)
    for i, x in enumerate(data):
        for name, chans in problem.components.items():
            write_tensor(root / "samples" / f"{i:05d}_{name}.pflw", x[list(chans)])
    full = {"format": DATASET_FORMAT, "version": FORMAT_VERSION, "problem": problem.to_dict(),
            "components": {k: list(v) for k, v in problem.components.items()}, "files": names,
            "n_samples": len(data)}
    full.update(manifest)
    write_json(root / "manifest.json", full)
    return root


def load_dataset(path):
    root = Path(path)
    m = read_json(root / "manifest.json")
    if m.get("format") != DATASET_FORMAT:
        raise ValueError(f"{root} is not a dataset directory")
    problem = Problem.from_dict(m["problem"])
    data = np.empty((m["n_samples"], *problem.sample_shape))
    for i in range(len(data)):
        for name, chans in problem.components.items():
            part = read_tensor(root / "samples" / f"{i:05d}_{name}.pflw")
            if part.shape != (len(chans), *problem.sample_shape[1:]):
                raise ValueError(f"sample {i} component {name} has shape {part.shape}")
            data[i, list(chans)] = part
    return data, problem, m
