"""PerfDB: append-only, file-backed store of benchmark results.

One JSON document per record under <root>/records/, plus an index file that
is only a cache: it is rebuilt from the record files whenever it is missing
or stale. Records are immutable; re-runs get new job ids.
"""

from __future__ import annotations

import json
import os
import threading
from pathlib import Path

from .errors import PerfDBError
from .records import PerfRecord


class PerfDB:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.records_dir = self.root / "records"
        self.records_dir.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "index.json"
        self._lock = threading.Lock()
        self._index = self._load_or_rebuild_index()

    # index entries: job_id -> summary used for filtering without full loads
    def _entry_for(self, record: PerfRecord) -> dict:
        env = record.env_log or {}
        model = env.get("model") or {}
        hardware = env.get("hardware") or {}
        return {
            "job_name": record.job_name,
            "model_family": model.get("family"),
            "model_id": model.get("model_id"),
            "hardware_id": hardware.get("id"),
            "backend_kind": env.get("backend_kind"),
            "started_at": env.get("started_at"),
        }

    def _load_or_rebuild_index(self) -> dict:
        files = {p.stem for p in self.records_dir.glob("*.json")}
        if self.index_path.exists():
            index = json.loads(self.index_path.read_text())
            if set(index) == files:
                return index
        index = {}
        for p in sorted(self.records_dir.glob("*.json")):
            record = PerfRecord.from_doc(json.loads(p.read_text()))
            index[record.job_id] = self._entry_for(record)
        self._write_index(index)
        return index

    def _write_index(self, index: dict):
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(index, sort_keys=True, indent=1))
        os.replace(tmp, self.index_path)

    def _path_for(self, job_id: str) -> Path:
        return self.records_dir / f"{job_id}.json"

    def append(self, record: PerfRecord):
        with self._lock:
            path = self._path_for(record.job_id)
            if record.job_id in self._index or path.exists():
                raise PerfDBError(f"job id already stored (store is append-only): {record.job_id!r}")
            path.write_text(json.dumps(record.to_doc(), sort_keys=True))
            self._index[record.job_id] = self._entry_for(record)
            self._write_index(self._index)

    def get(self, job_id: str) -> PerfRecord:
        path = self._path_for(job_id)
        if not path.exists():
            raise PerfDBError(f"no record for job id {job_id!r}")
        return PerfRecord.from_doc(json.loads(path.read_text()))

    def job_ids(self, *, model_family: str | None = None, hardware_id: str | None = None,
                backend_kind: str | None = None, since: str | None = None) -> list[str]:
        out = []
        for job_id, entry in sorted(self._index.items()):
            if model_family is not None and entry.get("model_family") != model_family:
                continue
            if hardware_id is not None and entry.get("hardware_id") != hardware_id:
                continue
            if backend_kind is not None and entry.get("backend_kind") != backend_kind:
                continue
            if since is not None and (entry.get("started_at") or "") < since:
                continue
            out.append(job_id)
        return out

    def records(self, **filters) -> list[PerfRecord]:
        return [self.get(job_id) for job_id in self.job_ids(**filters)]

    def __len__(self) -> int:
        return len(self._index)
