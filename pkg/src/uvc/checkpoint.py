"""Checkpoint archives.

A checkpoint is an uncompressed ``.npz`` archive. Every tensor is stored
under its qualified name (``<group>/<param name>``) with its shape and
dtype preserved; a ``__meta__`` entry holds UTF-8 JSON with the format
version, the config block and any run state. A SHA-256 digest over all
entries is kept in ``__digest__`` and checked on load.
"""

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .errors import CorruptionError, FormatError

FORMAT = "uvc-checkpoint"
VERSION = 1


def _digest(arrays):
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(np.int64(a.shape).tobytes())
        h.update(a.tobytes())
    return h.hexdigest()


def state_arrays(prefix, state_dict):
    return {f"{prefix}/{k}": v.detach().cpu().numpy() for k, v in state_dict.items()}


def optimizer_arrays(prefix, optimizer):
    """Flatten an optimizer's tensor state; scalars go to the returned meta."""
    sd = optimizer.state_dict()
    arrays, scalars = {}, {}
    for pid, st in sd["state"].items():
        for key, val in st.items():
            name = f"{prefix}/{pid}/{key}"
            if torch.is_tensor(val):
                arrays[name] = val.detach().cpu().numpy()
            else:
                scalars[name] = val
    return arrays, {"param_groups": sd["param_groups"], "scalars": scalars}


def load_optimizer(optimizer, prefix, arrays, meta):
    state = {}
    for name, val in arrays.items():
        if name.startswith(prefix + "/"):
            _, pid, key = name.split("/", 2)
            state.setdefault(int(pid), {})[key] = torch.from_numpy(np.array(val))
    for name, val in meta["scalars"].items():
        _, pid, key = name.split("/", 2)
        state.setdefault(int(pid), {})[key] = val
    optimizer.load_state_dict({"state": state, "param_groups": meta["param_groups"]})


def save_checkpoint(path, arrays, meta):
    """Write ``arrays`` (name -> ndarray) and the JSON-able ``meta`` dict."""
    arrays = dict(arrays)
    payload = {"format": FORMAT, "version": VERSION, **meta}
    arrays["__meta__"] = np.frombuffer(json.dumps(payload, sort_keys=True).encode(), dtype=np.uint8)
    digest = _digest(arrays)
    arrays["__digest__"] = np.frombuffer(digest.encode(), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    tmp.replace(path)
    return path


def load_checkpoint(path):
    """Return ``(arrays, meta)``; corrupted or foreign files raise."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        with np.load(io.BytesIO(raw), allow_pickle=False) as npz:
            arrays = {k: npz[k] for k in npz.files}
    except (zipfile.BadZipFile, ValueError, OSError, EOFError, KeyError) as exc:
        raise CorruptionError(f"checkpoint {path} is unreadable: {exc}") from exc
    if "__meta__" not in arrays or "__digest__" not in arrays:
        raise FormatError(f"{path} is not a checkpoint archive")
    stored = arrays.pop("__digest__").tobytes().decode(errors="replace")
    if stored != _digest(arrays):
        raise CorruptionError(f"checkpoint {path} failed its integrity check")
    meta = json.loads(arrays.pop("__meta__").tobytes().decode())
    if meta.get("format") != FORMAT:
        raise FormatError(f"{path} has format {meta.get('format')!r}")
    if meta.get("version", 0) > VERSION:
        raise FormatError(f"checkpoint version {meta['version']} is newer than supported {VERSION}")
    return arrays, meta


def load_module(module, prefix, arrays, strict=True):
    """Copy ``prefix/...`` arrays into ``module``; returns the missing keys."""
    sd = {}
    for name, val in arrays.items():
        if name.startswith(prefix + "/"):
            sd[name[len(prefix) + 1:]] = torch.from_numpy(np.array(val))
    result = module.load_state_dict(sd, strict=strict)
    return list(result.missing_keys)
