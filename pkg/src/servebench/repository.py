"""File-backed model repository: one metadata document per model under a root dir.

The index is rebuilt by scanning the directory on startup, so the store
survives without any sidecar database. Mutations are serialized by a lock;
reads work on snapshots.
"""

from __future__ import annotations

import threading
from pathlib import Path

import yaml

from .errors import RepositoryError
from .modelgen import ModelDescriptor


class ModelRepository:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._models: dict[str, ModelDescriptor] = {}
        self._scan()

    def _path_for(self, model_id: str) -> Path:
        safe = model_id.replace("/", "_")
        return self.root / f"{safe}.yaml"

    def _scan(self):
        for path in sorted(self.root.glob("*.yaml")):
            doc = yaml.safe_load(path.read_text())
            desc = ModelDescriptor.from_doc(doc)
            self._models[desc.model_id] = desc

    def _persist(self, desc: ModelDescriptor):
        self._path_for(desc.model_id).write_text(
            yaml.safe_dump(desc.to_doc(), sort_keys=True))

    def register(self, desc: ModelDescriptor) -> ModelDescriptor:
        with self._lock:
            if desc.model_id in self._models:
                raise RepositoryError(f"model id already registered: {desc.model_id!r}")
            stored = ModelDescriptor.from_doc(desc.to_doc())
            stored.version = 1
            self._models[stored.model_id] = stored
            self._persist(stored)
            return stored

    def update(self, desc: ModelDescriptor) -> ModelDescriptor:
        with self._lock:
            current = self._models.get(desc.model_id)
            if current is None:
                raise RepositoryError(f"cannot update unknown model id: {desc.model_id!r}")
            stored = ModelDescriptor.from_doc(desc.to_doc())
            stored.version = current.version + 1
            self._models[stored.model_id] = stored
            self._persist(stored)
            return stored

    def delete(self, model_id: str):
        with self._lock:
            if model_id not in self._models:
                raise RepositoryError(f"cannot delete unknown model id: {model_id!r}")
            del self._models[model_id]
            self._path_for(model_id).unlink(missing_ok=True)

    def get(self, model_id: str) -> ModelDescriptor:
        desc = self._models.get(model_id)
        if desc is None:
            raise RepositoryError(f"unknown model id: {model_id!r}")
        return desc

    def search(self, family: str | None = None, **param_filters) -> list[ModelDescriptor]:
        """Filter by family and exact generator-param values, sorted by id."""
        out = []
        for desc in self._models.values():
            if family is not None and desc.family != family:
                continue
            if any(desc.params.get(k) != v for k, v in param_filters.items()):
                continue
            out.append(desc)
        return sorted(out, key=lambda d: d.model_id)

    def ids(self) -> list[str]:
        return sorted(self._models)
