"""Checkpoint container: a JSON manifest plus a raw little-endian float64 blob.

A checkpoint is a directory holding ``manifest.json`` and ``params.bin``.
The manifest lists every parameter's shape and byte range in the blob, the
encoder configuration, sequence dims and both vocabularies.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError

FORMAT_VERSION = 1
MANIFEST, BLOB = "manifest.json", "params.bin"


def text_hash(items) -> str:
    return hashlib.sha256("\n".join(items).encode("utf-8")).hexdigest()


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    encoder: dict
    dims: dict
    vocab: list[str]
    labels: list[str]
    extra: dict = field(default_factory=dict)

    def blob(self) -> bytes:
        return b"".join(
            np.ascontiguousarray(self.params[name], dtype="<f8").tobytes()
            for name in sorted(self.params)
        )

    def manifest(self) -> dict:
        directory, offset = {}, 0
        for name in sorted(self.params):
            arr = self.params[name]
            directory[name] = {"shape": list(arr.shape), "offset": offset, "nbytes": arr.size * 8}
            offset += arr.size * 8
        return {
            "format_version": FORMAT_VERSION,
            "encoder": self.encoder,
            "dims": self.dims,
            "vocab": self.vocab,
            "labels": self.labels,
            "vocab_hash": text_hash(self.vocab),
            "label_hash": text_hash(self.labels),
            "parameters": directory,
            "blob_sha256": hashlib.sha256(self.blob()).hexdigest(),
            "extra": self.extra,
        }

    def digest(self) -> str:
        """Content hash over the manifest (which embeds the blob hash)."""
        text = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def subset(self, prefix: str) -> dict[str, np.ndarray]:
        """Parameters under ``prefix.`` with the prefix stripped."""
        cut = len(prefix) + 1
        return {k[cut:]: v for k, v in self.params.items() if k.startswith(prefix + ".")}

    def save(self, path) -> str:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        _atomic_write(path / BLOB, self.blob())
        _atomic_write(
            path / MANIFEST,
            json.dumps(self.manifest(), indent=1, sort_keys=True).encode("utf-8"),
        )
        return self.digest()

    @classmethod
    def load(cls, path) -> "Checkpoint":
        path = Path(path)
        try:
            manifest = json.loads((path / MANIFEST).read_text())
            blob = (path / BLOB).read_bytes()
        except FileNotFoundError as exc:
            raise ConfigError(f"incomplete checkpoint at {path}: {exc.filename} missing") from None
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format {manifest.get('format_version')}")
        if hashlib.sha256(blob).hexdigest() != manifest["blob_sha256"]:
            raise ConfigError(f"checkpoint blob at {path} does not match its manifest hash")
        params = {}
        for name, entry in manifest["parameters"].items():
            shape, off, nbytes = tuple(entry["shape"]), entry["offset"], entry["nbytes"]
            if nbytes != 8 * int(np.prod(shape, dtype=np.int64)) or off + nbytes > len(blob):
                raise ConfigError(f"parameter {name!r}: shape {shape} disagrees with byte range")
            params[name] = np.frombuffer(blob, dtype="<f8", count=nbytes // 8, offset=off).reshape(shape).copy()
        for key, items in (("vocab_hash", manifest["vocab"]), ("label_hash", manifest["labels"])):
            if text_hash(items) != manifest[key]:
                raise ConfigError(f"checkpoint {key} mismatch")
        return cls(
            params, manifest["encoder"], manifest["dims"], manifest["vocab"],
            manifest["labels"], manifest.get("extra", {}),
        )


def _atomic_write(path: Path, data: bytes):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
