"""Content-addressed asset storage.

Assets live under ``assets/<first two hash chars>/<hash>`` with a JSON
sidecar ``<hash>.meta.json``. Superseded attempts are simply left in place,
so rollback never needs a copy.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import threading
from pathlib import Path

from .domain import ASSET_KINDS, AssetRef


class IntegrityError(RuntimeError):
    """Stored bytes no longer match their content hash."""


class AssetNotFound(KeyError):
    pass


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class AssetStore:
    def __init__(self, root: str | os.PathLike) -> None:
        self.root = Path(root)
        self._lock = threading.Lock()

    def _relpath(self, content_hash: str) -> str:
        return f"assets/{content_hash[:2]}/{content_hash}"

    def path_of(self, ref: AssetRef) -> Path:
        return self.root / ref.uri

    def put(
        self,
        data: bytes,
        kind: str,
        *,
        width: int | None = None,
        height: int | None = None,
        duration: float | None = None,
    ) -> AssetRef:
        if kind not in ASSET_KINDS:
            raise ValueError(f"unknown asset kind {kind!r}")
        digest = sha256_hex(data)
        ref = AssetRef(
            content_hash=digest,
            kind=kind,
            uri=self._relpath(digest),
            width=width,
            height=height,
            duration=duration,
        )
        path = self.root / ref.uri
        meta_path = path.with_name(path.name + ".meta.json")
        with self._lock:
            if not path.exists():
                atomic_write(path, data)
            if not meta_path.exists():
                meta = {
                    "content_hash": digest,
                    "kind": kind,
                    "width": width,
                    "height": height,
                    "duration": duration,
                    "size": len(data),
                }
                atomic_write(meta_path, (json.dumps(meta, indent=2) + "\n").encode())
        return ref

    def get(self, ref: AssetRef) -> bytes:
        path = self.root / ref.uri
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise AssetNotFound(ref.content_hash) from None
        if sha256_hex(data) != ref.content_hash:
            raise IntegrityError(f"asset {ref.uri} does not match its content hash")
        return data

    def verify(self, ref: AssetRef) -> None:
        self.get(ref)

    def exists(self, ref: AssetRef) -> bool:
        return (self.root / ref.uri).exists()
