import hashlib
import logging
from abc import abstractmethod, ABCMeta
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

import pandas as pd

from fusion_prognostics.exceptions import FusionError
from fusion_prognostics.storage.model import RunManifest, RunStatus

logger = logging.getLogger("fusion_prognostics.storage")

MANIFEST_NAME = "manifest.json"


class RunRepositoryInterface(metaclass=ABCMeta):
    @property
    @abstractmethod
    def written(self) -> dict:
        """File name -> sha256 of everything written through this repository."""
        pass

    @abstractmethod
    def file_path(self, file_name: str) -> Path:
        pass

    @abstractmethod
    def write_table(self, file_name: str, table: pd.DataFrame) -> str:
        pass

    @abstractmethod
    def read_table(self, file_name: str) -> pd.DataFrame:
        pass

    @abstractmethod
    def write_text(self, file_name: str, content: str) -> str:
        pass

    @abstractmethod
    def read_text(self, file_name: str) -> str:
        pass

    @abstractmethod
    def does_exist(self, file_name: str) -> bool:
        pass

    @abstractmethod
    def save_manifest(self, manifest: RunManifest):
        pass

    @abstractmethod
    def load_manifest(self) -> Optional[RunManifest]:
        pass

    @abstractmethod
    def acquire_lock(self):
        pass

    @abstractmethod
    def release_lock(self):
        pass


def compute_sha256(content: bytes) -> str:
    return hashlib.sha256(content).hexdigest()


@contextmanager
def recorded_run(
    repository: RunRepositoryInterface,
    command: str,
    config_digest: Optional[str] = None,
    inputs: Optional[dict] = None,
) -> Iterator[RunManifest]:
    """
    Locks the output directory for one command and leaves a manifest behind with the digests of
    every file the command wrote, or the error that stopped it.
    """
    repository.acquire_lock()
    manifest = RunManifest(command=command, config_digest=config_digest, inputs=inputs)
    try:
        manifest.status = RunStatus.RUNNING
        yield manifest
        manifest.status = RunStatus.SUCCEEDED
    except FusionError as error:
        manifest.status = RunStatus.FAILED
        manifest.error = error.dict
        raise
    finally:
        manifest.files = dict(repository.written)
        repository.save_manifest(manifest)
        repository.release_lock()
        logger.info(f"{command} {manifest.status.value}, {len(manifest.files)} files written")
