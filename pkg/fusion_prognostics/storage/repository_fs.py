import json
import os
from pathlib import Path
from typing import Optional, Union

import pandas as pd

from fusion_prognostics.exceptions import IngestionError, RunLocked
from fusion_prognostics.storage.model import RunManifest
from fusion_prognostics.storage.repository import MANIFEST_NAME, RunRepositoryInterface, compute_sha256

# 17 significant digits round-trip every double
FLOAT_FORMAT = "%.17g"


class FileSystemRunRepository(RunRepositoryInterface):
    def __init__(self, path: Union[str, Path], lock_name: str = ".lock"):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.lock_path = self.path / lock_name
        self._written: dict = {}
        self._locked = False

    @property
    def written(self) -> dict:
        return self._written

    def file_path(self, file_name: str) -> Path:
        return self.path / file_name

    def write_table(self, file_name: str, table: pd.DataFrame) -> str:
        content = table.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return self.write_text(file_name, content)

    def read_table(self, file_name: str) -> pd.DataFrame:
        file_path = self.file_path(file_name)
        if not file_path.exists():
            raise IngestionError(f"File not found: {file_path}", path=str(file_path))
        try:
            return pd.read_csv(file_path, float_precision="round_trip")
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as error:
            raise IngestionError(f"Cannot parse {file_path}: {error}", path=str(file_path))

    def write_text(self, file_name: str, content: str) -> str:
        data = content.encode("utf-8")
        file_path = self.file_path(file_name)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        file_path.write_bytes(data)
        digest = compute_sha256(data)
        self._written[file_name] = digest
        return digest

    def read_text(self, file_name: str) -> str:
        file_path = self.file_path(file_name)
        if not file_path.exists():
            raise IngestionError(f"File not found: {file_path}", path=str(file_path))
        return file_path.read_text(encoding="utf-8")

    def does_exist(self, file_name: str) -> bool:
        return self.file_path(file_name).exists()

    def save_manifest(self, manifest: RunManifest):
        content = json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n"
        self.file_path(MANIFEST_NAME).write_text(content, encoding="utf-8")

    def load_manifest(self) -> Optional[RunManifest]:
        file_path = self.file_path(MANIFEST_NAME)
        if not file_path.exists():
            return None
        try:
            return RunManifest.from_dict(json.loads(file_path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, ValueError) as error:
            raise IngestionError(f"Invalid manifest {file_path}: {error}", path=str(file_path))

    def acquire_lock(self):
        try:
            descriptor = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLocked(path=str(self.path))
        os.close(descriptor)
        self._locked = True

    def release_lock(self):
        if self._locked:
            self.lock_path.unlink(missing_ok=True)
            self._locked = False
