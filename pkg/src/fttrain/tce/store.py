"""Persistent checkpoint stores.

``DirectoryStore`` lays shards out as ``<root>/<job>/<step>/<rank>-<kind>``
with one ``manifest.json`` per job listing ``{name, size, sha256}``.
``MemoryStore`` honours the same contract without touching disk and is what
the fuzzing harness uses.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .keys import CheckpointKey


class StoreUnavailable(RuntimeError):
    pass


class CheckpointNotFound(KeyError):
    pass


def sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


class BaseStore:
    """Failure injection shared by both stores.

    ``down`` makes every write raise; ``fail_next_writes`` fails that many
    writes then recovers.
    """

    def __init__(self):
        self.down = False
        self.fail_next_writes = 0
        self.write_count = 0

    def _check_writable(self):
        if self.down:
            raise StoreUnavailable("store is down")
        if self.fail_next_writes > 0:
            self.fail_next_writes -= 1
            raise StoreUnavailable("injected write failure")

    def write(self, key: CheckpointKey, payload: bytes) -> None:
        self._check_writable()
        self._write(key, bytes(payload))
        self.write_count += 1

    def _write(self, key, payload):
        raise NotImplementedError

    def read(self, key: CheckpointKey) -> bytes:
        raise NotImplementedError

    def contains(self, key: CheckpointKey) -> bool:
        raise NotImplementedError

    def digest(self, key: CheckpointKey) -> str | None:
        raise NotImplementedError


class MemoryStore(BaseStore):
    def __init__(self):
        super().__init__()
        self._data: dict[CheckpointKey, bytes] = {}

    def _write(self, key, payload):
        self._data[key] = payload

    def read(self, key):
        try:
            return self._data[key]
        except KeyError:
            raise CheckpointNotFound(key.name) from None

    def contains(self, key):
        return key in self._data

    def digest(self, key):
        payload = self._data.get(key)
        return None if payload is None else sha256(payload)

    def keys(self):
        return sorted(self._data)


class DirectoryStore(BaseStore):
    def __init__(self, root):
        super().__init__()
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def _manifest_path(self, job: str) -> Path:
        return self.root / job / "manifest.json"

    def manifest(self, job: str) -> dict[str, dict]:
        path = self._manifest_path(job)
        if not path.exists():
            return {}
        entries = json.loads(path.read_text())["entries"]
        return {e["name"]: e for e in entries}

    def _write(self, key, payload):
        path = self.root / key.relpath
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(payload)
        os.replace(tmp, path)
        entries = self.manifest(key.job)
        entries[key.name] = {"name": key.name, "size": len(payload), "sha256": sha256(payload)}
        doc = {"job": key.job, "entries": [entries[n] for n in sorted(entries)]}
        mpath = self._manifest_path(key.job)
        mtmp = mpath.with_name("manifest.json.tmp")
        mtmp.write_text(json.dumps(doc, indent=1))
        os.replace(mtmp, mpath)

    def read(self, key):
        path = self.root / key.relpath
        if key.name not in self.manifest(key.job) or not path.exists():
            raise CheckpointNotFound(key.name)
        return path.read_bytes()

    def contains(self, key):
        return key.name in self.manifest(key.job)

    def digest(self, key):
        entry = self.manifest(key.job).get(key.name)
        return None if entry is None else entry["sha256"]
