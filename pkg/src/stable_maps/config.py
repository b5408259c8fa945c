"""Configuration loading and the validated experiment configuration."""

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml

from stable_maps.errors import InvalidParameter

logger = logging.getLogger(__name__)

ALGORITHMS = ("uniform", "layered-dual", "walk-primal", "walk-dual")
MODES = ("chain", "coupled")
GRAPHS = ("primal", "dual")

DEFAULTS: Dict[str, Any] = {
    "family": {"family": "quadrangulation"},
    "algorithm": "uniform",
    "mode": "chain",
    "graph": "primal",
    "steps": [16, 32, 64, 128, 256],
    "radii": [2, 4, 8],
    "perimeters": [4, 8, 16, 32],
    "replicates": 30,
    "seed": 20240601,
    "output_dir": "results",
    "nu_cutoff": 100_000,
    "node_cap": 10**8,
    "disk_attempt_cap": 10**6,
    "trust_factor": 3,
    "trust_margin": 8,
    "certificate_retries": 3,
    "bootstrap_resamples": 200,
    "max_discard_rate": 0.2,
    "tolerance": {
        "slope": 0.1,
        "band_overlap": 0.8,
        "drift": 0.05,
        "nu_slope": 0.05,
    },
    "progress": False,
}


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """Load a YAML configuration merged over the defaults.

    Precedence: explicit path > STABLE_MAPS_CONFIG > user file >
    system file > defaults. Environment variables STABLE_MAPS_SEED and
    STABLE_MAPS_OUTPUT_DIR override the merged values.

    Args:
        path: Optional explicit path to a YAML file.

    Returns:
        A plain dictionary with every default key present.
    """
    config_paths = [
        path,
        os.getenv("STABLE_MAPS_CONFIG"),
        str(Path.home() / ".stable_maps" / "config.yaml"),
        str(Path("/etc/stable_maps/config.yaml")),
    ]

    loaded: Dict[str, Any] = {}
    for config_path in config_paths:
        if config_path and Path(config_path).exists():
            try:
                with open(config_path, "r") as f:
                    candidate = yaml.safe_load(f)
                if candidate is None:
                    logger.warning(
                        f"Config file at {config_path} is empty, skipping"
                    )
                    continue
                if not isinstance(candidate, dict):
                    logger.warning(
                        f"Config file at {config_path} is not a mapping, "
                        "skipping"
                    )
                    continue
                logger.info(f"Loaded configuration from: {config_path}")
                loaded = candidate
                break
            except (OSError, yaml.YAMLError) as e:
                logger.warning(
                    f"Failed to load config from {config_path}: {e}"
                )
    else:
        logger.info("No config file found, using defaults")

    merged = dict(DEFAULTS)
    merged.update(loaded)
    if os.getenv("STABLE_MAPS_SEED"):
        merged["seed"] = int(os.environ["STABLE_MAPS_SEED"])
    if os.getenv("STABLE_MAPS_OUTPUT_DIR"):
        merged["output_dir"] = os.environ["STABLE_MAPS_OUTPUT_DIR"]
    return merged


def _is_dyadic(grid: Tuple[int, ...]) -> bool:
    return all(b == 2 * a for a, b in zip(grid, grid[1:]))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment parameters.

    Attributes:
        family: Weight family spec, see ``weights.family_from_spec``.
        algorithm: One of ``ALGORITHMS``.
        mode: ``chain`` or ``coupled``.
        graph: ``primal`` or ``dual`` (walk experiments).
        steps: Dyadic grid of peeling step counts.
        radii: Dyadic grid of radii.
        perimeters: Dyadic grid of half-perimeters.
        replicates: Replicates per grid point.
        seed: Root seed; replicate streams are spawned from it.
        output_dir: Directory receiving CSV and manifest files.
    """

    family: Mapping[str, Any] = field(
        default_factory=lambda: {"family": "quadrangulation"}
    )
    algorithm: str = "uniform"
    mode: str = "chain"
    graph: str = "primal"
    steps: Tuple[int, ...] = (16, 32, 64, 128, 256)
    radii: Tuple[int, ...] = (2, 4, 8)
    perimeters: Tuple[int, ...] = (4, 8, 16, 32)
    replicates: int = 30
    seed: int = 20240601
    output_dir: str = "results"
    nu_cutoff: int = 100_000
    node_cap: int = 10**8
    disk_attempt_cap: int = 10**6
    trust_factor: int = 3
    trust_margin: int = 8
    certificate_retries: int = 3
    bootstrap_resamples: int = 200
    max_discard_rate: float = 0.2
    tolerance: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULTS["tolerance"])
    )
    progress: bool = False

    def __post_init__(self):
        """Validate names, grids and counts."""
        if self.algorithm not in ALGORITHMS:
            raise InvalidParameter(f"unknown algorithm {self.algorithm!r}")
        if self.mode not in MODES:
            raise InvalidParameter(f"unknown mode {self.mode!r}")
        if self.graph not in GRAPHS:
            raise InvalidParameter(f"unknown graph {self.graph!r}")
        if self.algorithm.startswith("walk") and self.mode != "coupled":
            raise InvalidParameter(
                "walk algorithms need the map-coupled mode"
            )
        for name in ("steps", "radii", "perimeters"):
            grid = tuple(int(x) for x in getattr(self, name))
            object.__setattr__(self, name, grid)
            if len(grid) < 3 or not _is_dyadic(grid) or grid[0] < 1:
                raise InvalidParameter(
                    f"{name} must be a dyadic grid of >= 3 points: {grid}"
                )
        if self.replicates < 1:
            raise InvalidParameter("replicates must be positive")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Any]) -> "ExperimentConfig":
        """Build from a merged config mapping, ignoring unknown keys."""
        fields = cls.__dataclass_fields__
        known = {k: v for k, v in mapping.items() if k in fields}
        unknown = sorted(set(mapping) - set(known))
        if unknown:
            logger.debug(f"Ignoring unknown config keys: {unknown}")
        for name in ("steps", "radii", "perimeters"):
            if name in known:
                known[name] = tuple(known[name])
        return cls(**known)

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Return a copy with some fields replaced (None values skipped)."""
        return replace(
            self, **{k: v for k, v in overrides.items() if v is not None}
        )

    def canonical_json(self) -> str:
        """Stable JSON form used for hashing."""
        return json.dumps(asdict(self), sort_keys=True, default=list)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form."""
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    @property
    def trust_policy(self) -> Tuple[int, int]:
        """(factor, margin) of the truncation depth R' = factor*R + margin."""
        return self.trust_factor, self.trust_margin
