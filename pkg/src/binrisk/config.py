"""Pipeline configuration: one JSON file, flag overrides, full defaults.

Every knob the pipeline stages expose lives here so a single config
file drives both the chained subcommands and the one-shot run.  Paths
in a config file are resolved relative to the file's own directory.
Unknown keys are rejected rather than silently ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class PipelineConfig:
    seed: int = 42

    # Lattice: None means the built-in default label inventory.
    lattice_path: str | None = None

    # Annotator: type is rules|replay|cmd with its own source field.
    annotator_type: str = "rules"
    rules_path: str | None = None
    replay_path: str | None = None
    annotator_cmd: list[str] = field(default_factory=list)

    # Embedding provider: hash|file.
    embedding_type: str = "hash"
    embedding_dimension: int = 384
    embedding_path: str | None = None

    # Entity elevation.
    granularity: str = "function"
    dbscan_eps: float = 0.3
    dbscan_min_samples: int = 2

    # Relation extraction (label paths; see ssckg.RelationConfig).
    relation_weights: dict[str, float] = field(default_factory=dict)
    structural_edge_labels: dict[str, str] = field(default_factory=dict)
    read_actions: list[str] = field(default_factory=list)
    write_actions: list[str] = field(default_factory=list)
    taint_sources: list[str] = field(default_factory=list)
    taint_sinks: list[str] = field(default_factory=list)
    cve_match_threshold: float = 0.85
    cves_path: str | None = None

    # Model.
    model_layers: int = 6
    model_heads: int = 8
    model_hidden_dim: int = 256
    model_max_dist: int = 20
    params_path: str | None = None

    # Risk propagation.
    beta: float = 0.15
    tolerance: float = 1e-6
    max_iterations: int = 100

    # Fingerprint matching and threshold selection.
    fingerprints_dir: str | None = None
    tau: float = 0.78
    grid_lo: float = 0.50
    grid_hi: float = 0.95
    grid_step: float = 0.01
    fpr_cap: float = 0.05

    # Report rendering.
    risk_bands: dict[str, float] = field(default_factory=lambda: {"high": 0.7, "medium": 0.4})

    def __post_init__(self):
        if self.annotator_type not in ("rules", "replay", "cmd"):
            raise ConfigError(f"unknown annotator type '{self.annotator_type}'")
        if self.embedding_type not in ("hash", "file"):
            raise ConfigError(f"unknown embedding type '{self.embedding_type}'")
        if self.granularity not in ("function", "block"):
            raise ConfigError(f"unknown granularity '{self.granularity}'")

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = cls.from_dict(doc)
        base = path.parent
        for name in ("lattice_path", "rules_path", "replay_path",
                     "embedding_path", "cves_path", "params_path",
                     "fingerprints_dir"):
            value = getattr(cfg, name)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, name, str((base / value).resolve()))
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)
