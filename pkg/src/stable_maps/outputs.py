"""Result files: per-experiment CSV tables and the run manifest."""

import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import numpy as np
import polars as pl

from stable_maps import __version__
from stable_maps.config import ExperimentConfig

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
_PACKAGES = ("numpy", "scipy", "polars", "networkx", "pyyaml", "tqdm")


def package_versions() -> Dict[str, Optional[str]]:
    """Installed versions of this package and its dependencies."""
    versions: Dict[str, Optional[str]] = {"stable-maps": __version__}
    for name in _PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = None
    versions["python"] = platform.python_version()
    return versions


def write_csv(frame: pl.DataFrame, output_dir: str, name: str) -> Path:
    """Write ``frame`` as ``<output_dir>/<name>.csv`` and return the path."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{name}.csv"
    frame.write_csv(path)
    logger.info(f"Wrote {frame.height} rows to {path}")
    return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_manifest(
    config: ExperimentConfig,
    output_dir: str,
    results: Mapping[str, Any],
    discard_rates: Optional[Mapping[str, float]] = None,
) -> Path:
    """Record versions, configuration, seed, discard rates and results.

    An existing manifest in ``output_dir`` is extended, so several
    commands can share one directory.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / MANIFEST_NAME
    manifest: Dict[str, Any] = {}
    if path.exists():
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            logger.warning(f"Replacing unreadable manifest {path}: {e}")
    manifest.update(
        {
            "versions": package_versions(),
            "config": json.loads(config.canonical_json()),
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "written_at": datetime.now(timezone.utc).isoformat(),
        }
    )
    manifest.setdefault("discard_rates", {}).update(
        _jsonable(dict(discard_rates or {}))
    )
    manifest.setdefault("results", {}).update(_jsonable(dict(results)))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"Manifest written to {path}")
    return path
