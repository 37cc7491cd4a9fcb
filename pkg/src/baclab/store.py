"""Document store abstraction: named collections of JSON documents.

Two backends: an in-memory dict store for tests and embedded use, and a
directory-of-JSON-files store for real deployments. Both expose the same
compare-and-set primitive that the session layer builds its optimistic
concurrency on. File writes are atomic (temp file + rename) and serialized
across processes via a lock file, so several stateless service instances
can share one store path.
"""

from __future__ import annotations

import copy
import json
import os
import re
import threading
from abc import ABC, abstractmethod
from pathlib import Path

from filelock import FileLock

from .errors import ConflictError, NotFound, ValidationError, VersionConflict

_SAFE_KEY = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]{0,127}$")


def canonical_json(doc: dict) -> str:
    """Deterministic serialization: sorted keys, UTF-8 kept verbatim."""
    return json.dumps(doc, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _check_key(key: str) -> str:
    if not _SAFE_KEY.match(key):
        raise ValidationError(f"unsafe store key: {key!r}")
    return key


class DocumentStore(ABC):
    """Collections of JSON documents addressed by (collection, key)."""

    @abstractmethod
    def get(self, collection: str, key: str) -> dict | None:
        ...

    @abstractmethod
    def put(self, collection: str, key: str, doc: dict) -> None:
        ...

    @abstractmethod
    def create(self, collection: str, key: str, doc: dict) -> None:
        """Insert, failing with ConflictError if the key exists."""
        ...

    @abstractmethod
    def cas(self, collection: str, key: str, expected_version: int, doc: dict) -> None:
        """Write doc only if the stored document's version field equals
        expected_version (0 means: must not exist yet)."""
        ...

    @abstractmethod
    def delete(self, collection: str, key: str) -> None:
        ...

    @abstractmethod
    def keys(self, collection: str) -> list[str]:
        ...

    @abstractmethod
    def wipe(self) -> None:
        ...

    def items(self, collection: str) -> list[tuple[str, dict]]:
        out = []
        for key in self.keys(collection):
            doc = self.get(collection, key)
            if doc is not None:
                out.append((key, doc))
        return out


class MemoryStore(DocumentStore):
    def __init__(self) -> None:
        self._data: dict[str, dict[str, dict]] = {}
        self._lock = threading.RLock()

    def get(self, collection, key):
        with self._lock:
            doc = self._data.get(collection, {}).get(key)
            return copy.deepcopy(doc) if doc is not None else None

    def put(self, collection, key, doc):
        _check_key(collection)
        _check_key(key)
        with self._lock:
            self._data.setdefault(collection, {})[key] = copy.deepcopy(doc)

    def create(self, collection, key, doc):
        _check_key(collection)
        _check_key(key)
        with self._lock:
            if key in self._data.get(collection, {}):
                raise ConflictError(f"{collection}/{key} already exists")
            self._data.setdefault(collection, {})[key] = copy.deepcopy(doc)

    def cas(self, collection, key, expected_version, doc):
        _check_key(collection)
        _check_key(key)
        with self._lock:
            current = self._data.get(collection, {}).get(key)
            current_version = int(current.get("version", 0)) if current else 0
            if current_version != expected_version:
                raise VersionConflict(
                    f"{collection}/{key}: expected version {expected_version}, "
                    f"found {current_version}"
                )
            self._data.setdefault(collection, {})[key] = copy.deepcopy(doc)

    def delete(self, collection, key):
        with self._lock:
            if key not in self._data.get(collection, {}):
                raise NotFound(f"{collection}/{key} not found")
            del self._data[collection][key]

    def keys(self, collection):
        with self._lock:
            return sorted(self._data.get(collection, {}))

    def wipe(self):
        with self._lock:
            self._data.clear()


class FileStore(DocumentStore):
    """One JSON file per document under root/<collection>/<key>.json."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(self.root / ".store.lock"))

    def _path(self, collection: str, key: str) -> Path:
        _check_key(collection)
        _check_key(key)
        return self.root / collection / f"{key}.json"

    def _write(self, path: Path, doc: dict) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(canonical_json(doc), encoding="utf-8")
        os.replace(tmp, path)

    def get(self, collection, key):
        path = self._path(collection, key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None

    def put(self, collection, key, doc):
        with self._lock:
            self._write(self._path(collection, key), doc)

    def create(self, collection, key, doc):
        with self._lock:
            path = self._path(collection, key)
            if path.exists():
                raise ConflictError(f"{collection}/{key} already exists")
            self._write(path, doc)

    def cas(self, collection, key, expected_version, doc):
        with self._lock:
            current = self.get(collection, key)
            current_version = int(current.get("version", 0)) if current else 0
            if current_version != expected_version:
                raise VersionConflict(
                    f"{collection}/{key}: expected version {expected_version}, "
                    f"found {current_version}"
                )
            self._write(self._path(collection, key), doc)

    def delete(self, collection, key):
        with self._lock:
            path = self._path(collection, key)
            if not path.exists():
                raise NotFound(f"{collection}/{key} not found")
            path.unlink()

    def keys(self, collection):
        folder = self.root / collection
        if not folder.is_dir():
            return []
        return sorted(p.stem for p in folder.glob("*.json"))

    def wipe(self):
        with self._lock:
            for folder in self.root.iterdir():
                if folder.is_dir():
                    for p in folder.glob("*.json"):
                        p.unlink()


def open_store(path: str | None) -> DocumentStore:
    """Open a store: None or ":memory:" gives the in-memory backend."""
    if path is None or path == ":memory:":
        return MemoryStore()
    return FileStore(path)
