"""Self-describing parameter checkpoints: a zip of .npy arrays plus a JSON header.

Entries carry a fixed timestamp so identical parameters give identical bytes.
"""
from __future__ import annotations

import io
import json
import zipfile

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict) -> None:
    header = dict(meta)
    header["tensors"] = {k: list(np.shape(v)) for k, v in tensors.items()}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        zf.writestr(info, json.dumps(header, indent=2, sort_keys=True), compress_type=zipfile.ZIP_DEFLATED)
        for name in sorted(tensors):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(tensors[name], dtype=np.float64), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue(), compress_type=zipfile.ZIP_DEFLATED)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        tensors = {}
        for name in meta["tensors"]:
            tensors[name] = np.lib.format.read_array(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False)
    return tensors, meta


def save_generator(path, params, config=None) -> None:
    from dataclasses import asdict

    meta = {
        "kind": "goat-generator",
        "arch": asdict(params.arch),
        "conditional": params.conditional,
        "og": params.og,
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
    }
    save_checkpoint(path, params.tensors, meta)


def load_generator(path):
    from .gan import Architecture, GeneratorParams

    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "goat-generator":
        raise ValueError(f"{path} is not a generator checkpoint")
    arch = meta["arch"]
    arch = Architecture(**{k: tuple(v) if isinstance(v, list) else v for k, v in arch.items()})
    return GeneratorParams(arch, bool(meta["conditional"]), int(meta["og"]), tensors), meta


def save_mf(path, model, config=None) -> None:
    meta = {
        "kind": "mf-model",
        "users": list(model.users),
        "items": list(model.items),
        "config": config.to_dict() if config is not None else None,
        "seed": config.seed if config is not None else None,
    }
    save_checkpoint(path, {"user_vectors": model.user_vectors, "item_vectors": model.item_vectors}, meta)


def load_mf(path):
    from .recsys import MFModel

    tensors, meta = load_checkpoint(path)
    if meta.get("kind") != "mf-model":
        raise ValueError(f"{path} is not a recommender checkpoint")
    return MFModel(tuple(meta["users"]), tuple(meta["items"]), tensors["user_vectors"], tensors["item_vectors"]), meta
