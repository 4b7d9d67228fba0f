"""Network checkpoints: parameters, batch-norm statistics, and configuration,
stored as tensor files under a JSON manifest."""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np

from .dataset import _sha256
from .errors import DataError
from .network import Network, NetworkConfig, build_network
from .tensorfile import read_tensor, write_tensor


def save_checkpoint(path: str, net: Network, meta: dict | None = None) -> str:
    tensor_dir = os.path.join(path, "tensors")
    os.makedirs(tensor_dir, exist_ok=True)
    manifest = {
        "format": 1,
        "config": dataclasses.asdict(net.config),
        "parameters": [],
        "bn_layers": [],
        "meta": meta or {},
        "sha256": {},
    }

    def dump(name, array):
        rel = os.path.join("tensors", f"{name}.tsr")
        full = os.path.join(path, rel)
        write_tensor(full, array)
        manifest["sha256"][name] = _sha256(full)

    for p in net.parameters():
        manifest["parameters"].append(p.name)
        dump(p.name, p.tensor.data)
    for bn_name, state in net.bn_layers():
        manifest["bn_layers"].append({"name": bn_name, "initialized": state.initialized})
        dump(f"{bn_name}.running_mean", state.running_mean)
        dump(f"{bn_name}.running_var", state.running_var)

    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest_path


def load_checkpoint(path: str) -> tuple[Network, dict]:
    manifest_path = os.path.join(path, "manifest.json")
    if not os.path.exists(manifest_path):
        raise DataError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path) as f:
        manifest = json.load(f)
    net = build_network(NetworkConfig(**manifest["config"]))

    def pull(name):
        return read_tensor(os.path.join(path, "tensors", f"{name}.tsr"))

    params = {p.name: p for p in net.parameters()}
    if set(manifest["parameters"]) != set(params):
        raise DataError("checkpoint parameter names do not match the rebuilt network")
    for name, p in params.items():
        arr = pull(name)
        if arr.shape != p.tensor.shape:
            raise DataError(f"checkpoint tensor {name} has shape {arr.shape}, "
                            f"expected {p.tensor.shape}")
        p.tensor.data = np.ascontiguousarray(arr, dtype=np.float32)
    states = dict(net.bn_layers())
    for entry in manifest["bn_layers"]:
        state = states[entry["name"]]
        state.running_mean = np.ascontiguousarray(pull(f"{entry['name']}.running_mean"),
                                                  dtype=np.float32)
        state.running_var = np.ascontiguousarray(pull(f"{entry['name']}.running_var"),
                                                 dtype=np.float32)
        state.initialized = bool(entry["initialized"])
    return net, manifest.get("meta", {})
