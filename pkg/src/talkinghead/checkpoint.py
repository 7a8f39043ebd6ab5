"""Single-file checkpoint archive.

Layout (all integers little-endian)::

    b"THCKPT\\r\\n"            8-byte magic
    uint32 format version
    uint64 header length
    header                     canonical JSON: meta + tensor table
    tensor payloads            raw bytes, in table order
    sha256 of everything above

The encoding is canonical, so save -> load -> save reproduces the same bytes.
Writes go to a temporary file that is renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import CorruptArchive, FingerprintMismatch, VersionUnsupported

MAGIC = b"THCKPT\r\n"
FORMAT_VERSION = 1
_DTYPES = {
    torch.float32: "<f4",
    torch.float64: "<f8",
    torch.int64: "<i8",
    torch.int32: "<i4",
    torch.bool: "|b1",
}
_TORCH = {v: k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    tensors: dict = field(default_factory=dict)  # "namespace.name" -> tensor
    config: dict = field(default_factory=dict)
    fingerprint: str = ""
    state: dict = field(default_factory=dict)  # curriculum state
    meta: dict = field(default_factory=dict)  # anything else JSON-serializable
    version: int = FORMAT_VERSION

    def namespace(self, prefix: str) -> dict:
        """Tensors under ``prefix.`` with the prefix stripped."""
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.tensors.items() if k.startswith(p)}

    def put(self, prefix: str, state_dict: dict) -> None:
        for k, v in state_dict.items():
            self.tensors[f"{prefix}.{k}"] = v.detach().clone().cpu()


def encode(ckpt: Checkpoint) -> bytes:
    table = []
    blobs = []
    offset = 0
    for name in sorted(ckpt.tensors):
        t = ckpt.tensors[name].detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise TypeError(f"unsupported dtype {t.dtype} for {name}")
        raw = t.numpy().astype(_DTYPES[t.dtype], copy=False).tobytes()
        table.append({"name": name, "dtype": _DTYPES[t.dtype], "shape": list(t.shape), "offset": offset,
                      "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {"config": ckpt.config, "fingerprint": ckpt.fingerprint, "state": ckpt.state, "meta": ckpt.meta,
              "tensors": table}
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()
    body = MAGIC + struct.pack("<IQ", ckpt.version, len(hbytes)) + hbytes + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def decode(data: bytes) -> Checkpoint:
    if len(data) < len(MAGIC) + 12 + 32 or not data.startswith(MAGIC):
        raise CorruptArchive("not a checkpoint archive (bad magic or too short)")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptArchive("checksum mismatch (truncated or corrupted archive)")
    version, hlen = struct.unpack_from("<IQ", body, len(MAGIC))
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"checkpoint format version {version}; this build reads {FORMAT_VERSION}")
    start = len(MAGIC) + 12
    try:
        header = json.loads(body[start : start + hlen])
    except json.JSONDecodeError as e:
        raise CorruptArchive(f"unreadable header: {e}") from e
    payload = body[start + hlen :]
    tensors = {}
    for entry in header["tensors"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise CorruptArchive(f"payload for {entry['name']} is short")
        arr = np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"]).copy()
        tensors[entry["name"]] = torch.from_numpy(arr).to(_TORCH[entry["dtype"]])
    return Checkpoint(tensors, header["config"], header["fingerprint"], header["state"], header["meta"], version)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode(ckpt)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".ckpt")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path, expected_fingerprint: Optional[str] = None,
                    allow_mismatch: bool = False) -> Checkpoint:
    with open(path, "rb") as f:
        ckpt = decode(f.read())
    if expected_fingerprint is not None and ckpt.fingerprint != expected_fingerprint and not allow_mismatch:
        raise FingerprintMismatch(
            f"{path}: checkpoint built for config {ckpt.fingerprint[:12]}, current config is {expected_fingerprint[:12]}"
        )
    return ckpt


def file_digest(path: str | Path) -> str:
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def flatten_optimizer(opt: torch.optim.Optimizer) -> tuple[dict, list]:
    """Optimizer state -> (tensors keyed "state.<idx>.<key>", JSON param_groups)."""
    sd = opt.state_dict()
    tensors = {}
    for idx, st in sd["state"].items():
        for key, val in st.items():
            tensors[f"state.{idx}.{key}"] = val if torch.is_tensor(val) else torch.tensor(val)
    return tensors, sd["param_groups"]


def restore_optimizer(opt: torch.optim.Optimizer, tensors: dict, param_groups: list) -> None:
    state: dict = {}
    for name, val in tensors.items():
        _, idx, key = name.split(".", 2)
        state.setdefault(int(idx), {})[key] = val.clone()
    opt.load_state_dict({"state": state, "param_groups": param_groups})
