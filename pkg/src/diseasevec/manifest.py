"""Run manifests: what ran, with which config, on which exact input bytes."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import __version__

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def file_digest(path: str | Path) -> str:
    return f"{fnv1a_64(Path(path).read_bytes()):016x}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: str
    config: dict = field(default_factory=dict)
    inputs: dict[str, str] = field(default_factory=dict)
    seed: int | None = None
    version: str = __version__
    started_at: str = field(default_factory=_now)
    finished_at: str | None = None

    def add_input(self, path: str | Path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def finish(self) -> None:
        self.finished_at = _now()

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


def verify_manifest(path: str | Path) -> list[str]:
    """Return the input paths whose current digest differs from the recorded one."""
    manifest = RunManifest.read(path)
    stale = []
    for input_path, digest in manifest.inputs.items():
        try:
            current = file_digest(input_path)
        except OSError:
            current = None
        if current != digest:
            stale.append(input_path)
    return stale


def manifest_path_for(output: str | Path) -> Path:
    output = Path(output)
    return output.with_name(output.name + ".manifest.json")
