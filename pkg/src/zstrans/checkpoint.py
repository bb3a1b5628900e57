"""Checkpoint archive format "zst-ckpt-1".

A checkpoint is a single uncompressed zip archive:

- ``meta.json``: format version, the network configuration, iteration,
  run seed, per-network parameter shapes and dtypes, and per-network
  optimizer step counts.
- ``params/<network>/<state_key>.bin``: each state-dict entry as raw
  little-endian float32.
- ``opt/<network>/<index>.exp_avg.bin`` and ``....exp_avg_sq.bin``:
  Adam moment tensors in parameter order, so a resumed run continues
  bit-exactly.

Archive bytes are deterministic: entries are written in sorted name
order with fixed timestamps and no compression, so identical states
produce identical files.  Writes go to a temporary file in the target
directory and are renamed into place.

Non-float32 state entries (integer counters in pretrained backbones)
are stored as float32 and cast back to the model's dtype on load; the
values involved are small integers, exactly representable.
"""

from __future__ import annotations

import json
import os
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .config import NetConfig
from .networks import NETWORK_NAMES, ModelBundle, build_bundle

FORMAT_VERSION = "zst-ckpt-1"

_FIXED_DATE = (1980, 1, 1, 0, 0, 0)


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_FIXED_DATE)
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o600 << 16
    zf.writestr(info, payload)


def _tensor_bytes(t: torch.Tensor) -> bytes:
    return np.ascontiguousarray(
        t.detach().cpu().to(torch.float32).numpy(), dtype="<f4").tobytes()


def save_checkpoint(bundle: ModelBundle, path: str | Path,
                    iteration: int, seed: int) -> None:
    """Write the bundle (parameters, buffers, optimizer moments) to one
    archive.  Pure function of the bundle state: identical states give
    identical bytes."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    entries: dict[str, bytes] = {}
    meta: dict = {
        "format": FORMAT_VERSION,
        "net_config": asdict(bundle.config),
        "iteration": int(iteration),
        "seed": int(seed),
        "networks": {},
        "optimizer_steps": {},
    }
    for name, net in bundle.networks().items():
        net_meta = {}
        for key, tensor in net.state_dict().items():
            net_meta[key] = {"shape": list(tensor.shape), "dtype": str(tensor.dtype)}
            entries[f"params/{name}/{key}.bin"] = _tensor_bytes(tensor)
        meta["networks"][name] = net_meta

        opt = bundle.optimizers.get(name)
        steps: list[float] = []
        if opt is not None:
            for idx, p in enumerate(_optimizer_params(opt)):
                state = opt.state.get(p, {})
                if "exp_avg" in state:
                    entries[f"opt/{name}/{idx}.exp_avg.bin"] = _tensor_bytes(state["exp_avg"])
                    entries[f"opt/{name}/{idx}.exp_avg_sq.bin"] = _tensor_bytes(state["exp_avg_sq"])
                    steps.append(float(state["step"]))
                else:
                    steps.append(0.0)
        meta["optimizer_steps"][name] = steps

    tmp = path.with_name(path.name + ".tmp")
    with zipfile.ZipFile(tmp, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for name in sorted(entries):
            _write_entry(zf, name, entries[name])
    os.replace(tmp, path)


def _optimizer_params(opt: torch.optim.Optimizer) -> list[torch.Tensor]:
    out = []
    for group in opt.param_groups:
        out.extend(group["params"])
    return out


def read_meta(path: str | Path) -> dict:
    with zipfile.ZipFile(path, "r") as zf:
        meta = json.loads(zf.read("meta.json"))
    if meta.get("format") != FORMAT_VERSION:
        raise ValueError(
            f"{path}: unsupported checkpoint format {meta.get('format')!r}, "
            f"expected {FORMAT_VERSION!r}")
    return meta


def load_checkpoint(path: str | Path, lr: float = 1e-4) -> tuple[ModelBundle, int, int]:
    """Rebuild a bundle from an archive; returns (bundle, iteration, seed).

    Every stored shape is verified against the freshly built networks;
    a mismatch is an error naming the offending entry.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    meta = read_meta(path)
    config = NetConfig(**meta["net_config"])
    bundle = build_bundle(config, rng_seed=0, lr=lr)

    with zipfile.ZipFile(path, "r") as zf:
        names = set(zf.namelist())
        for name, net in bundle.networks().items():
            stored = meta["networks"].get(name)
            if stored is None:
                raise ValueError(f"{path}: missing network {name!r} in metadata")
            state = net.state_dict()
            if set(stored) != set(state):
                missing = sorted(set(state) - set(stored))
                extra = sorted(set(stored) - set(state))
                raise ValueError(
                    f"{path}: state keys for {name!r} do not match the "
                    f"configuration (missing {missing}, unexpected {extra})")
            new_state = {}
            for key, tensor in state.items():
                entry = f"params/{name}/{key}.bin"
                if entry not in names:
                    raise ValueError(f"{path}: missing blob {entry}")
                expected_shape = tuple(stored[key]["shape"])
                if expected_shape != tuple(tensor.shape):
                    raise ValueError(
                        f"{path}: {name}/{key} has shape {expected_shape}, "
                        f"configuration requires {tuple(tensor.shape)}")
                arr = np.frombuffer(zf.read(entry), dtype="<f4")
                if arr.size != tensor.numel():
                    raise ValueError(
                        f"{path}: {name}/{key} blob holds {arr.size} values, "
                        f"expected {tensor.numel()}")
                new_state[key] = torch.from_numpy(
                    arr.copy().reshape(tuple(tensor.shape))).to(tensor.dtype)
            net.load_state_dict(new_state)

        for name, net in bundle.networks().items():
            opt = bundle.optimizers[name]
            steps = meta["optimizer_steps"].get(name, [])
            params = _optimizer_params(opt)
            if steps and len(steps) != len(params):
                raise ValueError(
                    f"{path}: optimizer for {name!r} stores {len(steps)} step "
                    f"entries, network has {len(params)} parameters")
            for idx, p in enumerate(params):
                if idx >= len(steps) or steps[idx] == 0.0:
                    continue
                avg_entry = f"opt/{name}/{idx}.exp_avg.bin"
                sq_entry = f"opt/{name}/{idx}.exp_avg_sq.bin"
                if avg_entry not in names or sq_entry not in names:
                    raise ValueError(f"{path}: missing optimizer blobs for {name}/{idx}")
                exp_avg = torch.from_numpy(
                    np.frombuffer(zf.read(avg_entry), dtype="<f4").copy().reshape(p.shape))
                exp_avg_sq = torch.from_numpy(
                    np.frombuffer(zf.read(sq_entry), dtype="<f4").copy().reshape(p.shape))
                opt.state[p] = {
                    "step": torch.tensor(steps[idx]),
                    "exp_avg": exp_avg,
                    "exp_avg_sq": exp_avg_sq,
                }
    return bundle, int(meta["iteration"]), int(meta["seed"])
