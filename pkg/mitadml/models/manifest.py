import hashlib
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from pydantic import BaseModel, Field

MANIFEST_NAME = "manifest.json"


def file_digest(path: Union[str, Path]) -> str:
    """SHA-256 hex digest of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


class RunManifest(BaseModel):
    """Everything needed to reproduce one command-line run."""

    command: str = Field(description="Subcommand name")
    version: str = Field(description="Package version that produced the outputs")
    seed: int = Field(description="Top-level seed")
    arguments: Dict[str, Any] = Field(
        default_factory=dict, description="Parsed command-line arguments"
    )
    config: Dict[str, Any] = Field(
        default_factory=dict, description="Resolved configuration with defaults materialized"
    )
    inputs: Dict[str, str] = Field(default_factory=dict, description="Input path to SHA-256")
    started_at: str = Field(default_factory=utc_now)
    finished_at: Optional[str] = None

    def reproducible(self) -> Dict[str, Any]:
        """The manifest without timestamps, for embedding in outputs."""
        return self.model_dump(mode="json", exclude={"started_at", "finished_at"})

    def finish(self) -> "RunManifest":
        return self.model_copy(update={"finished_at": utc_now()})
