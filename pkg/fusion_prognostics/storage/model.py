import hashlib
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional


class RunStatus(str, Enum):
    ACCEPTED = "accepted"  # output directory locked, nothing written yet
    RUNNING = "running"
    SUCCEEDED = "succeeded"
    FAILED = "failed"  # error during execution


@dataclass
class RunManifest:
    command: str
    status: RunStatus = RunStatus.ACCEPTED
    config_digest: Optional[str] = None
    # file name -> sha256 of its content
    files: dict = field(default_factory=dict)
    inputs: Optional[dict] = None
    error: Optional[dict] = None

    @property
    def result_digest(self) -> Optional[str]:
        if not self.files:
            return None
        listing = "\n".join(f"{name} {digest}" for name, digest in sorted(self.files.items()))
        return hashlib.sha256(listing.encode("utf-8")).hexdigest()

    def to_dict(self) -> dict:
        d = {
            "command": self.command,
            "status": self.status.value,
            "config_digest": self.config_digest,
            "files": dict(sorted(self.files.items())),
            "result_digest": self.result_digest,
            "inputs": self.inputs,
            "error": self.error,
        }

        remove_none_values_from_dict(d)

        return d

    @staticmethod
    def from_dict(d: dict) -> "RunManifest":
        return RunManifest(
            command=d["command"],
            status=RunStatus(d.get("status", RunStatus.ACCEPTED.value)),
            config_digest=d.get("config_digest"),
            files=dict(d.get("files", {})),
            inputs=d.get("inputs"),
            error=d.get("error"),
        )


def remove_none_values_from_dict(d: dict):
    for key, value in list(d.items()):
        if value is None:
            del d[key]
        elif isinstance(value, dict):
            remove_none_values_from_dict(value)
