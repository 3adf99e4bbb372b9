"""JSON helpers, content hashes and per-stage manifests.

Every stage writes ``manifest.json`` next to its outputs:

    {"stage": ..., "version": ..., "config": {...},
     "inputs": {name: sha256}, "outputs": {name: sha256}}

No wall-clock time goes into any artifact, so reruns are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from collections.abc import Iterable, Mapping
from pathlib import Path
from typing import Any

from . import __version__
from .errors import ArtifactMismatch, MissingFile

MANIFEST = "manifest.json"


def sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def load_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    return json.loads(path.read_text(encoding="utf-8"))


def write_json(path: str | Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def hash_files(paths: Iterable[str | Path]) -> dict[str, str]:
    return {Path(p).name: sha256_file(p) for p in sorted(Path(p) for p in paths)}


def write_manifest(
    directory: str | Path,
    stage: str,
    config: Mapping[str, Any],
    inputs: Mapping[str, str],
    outputs: Iterable[str | Path],
) -> Path:
    payload = {
        "stage": stage,
        "version": __version__,
        "config": dict(config),
        "inputs": dict(sorted(inputs.items())),
        "outputs": hash_files(outputs),
    }
    return write_json(Path(directory) / MANIFEST, payload)


def read_manifest(directory: str | Path) -> dict[str, Any]:
    return load_json(Path(directory) / MANIFEST)


def _verify(recorded: Mapping[str, str], directory: Path, stage: str, source: str) -> None:
    for name, expected in recorded.items():
        path = directory / name
        if not path.exists():
            raise ArtifactMismatch(stage, name, f"recorded in the {source} manifest is missing")
        if sha256_file(path) != expected:
            raise ArtifactMismatch(stage, name, f"changed since the {source} stage ran")


def verify_inputs(manifest: Mapping[str, Any], directory: str | Path, stage: str) -> None:
    """Recompute the hash of every input a manifest recorded from ``directory``."""
    _verify(manifest.get("inputs", {}), Path(directory), stage, str(manifest.get("stage")))


def verify_outputs(
    manifest: Mapping[str, Any], directory: str | Path, stage: str, names: Iterable[str] | None = None
) -> None:
    """Check that the outputs a stage wrote (or the selected ``names``) are still the ones it recorded."""
    outputs = manifest.get("outputs", {})
    if names is not None:
        wanted = list(names)
        unrecorded = [n for n in wanted if n not in outputs]
        if unrecorded:
            raise ArtifactMismatch(stage, unrecorded[0], f"is not recorded in the {manifest.get('stage')} manifest")
        outputs = {n: outputs[n] for n in wanted}
    _verify(outputs, Path(directory), stage, str(manifest.get("stage")))
