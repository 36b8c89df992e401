"""Resolved pipeline configuration.

Precedence: command-line flags > environment > config file > defaults. The
resolved configuration is checksummed into every stage output so a report
can always be traced back to the exact knobs that produced it. Store paths
are excluded from the checksum: the same pipeline in a different directory
is the same pipeline.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

STORE_ENV_VAR = "FORGE_STORE"


def data_path(*parts: str) -> Path:
    """Path to a bundled data file (taxonomy, templates, fixtures)."""
    return Path(str(resources.files("sceneforge") / "data")).joinpath(*parts)


@dataclass
class PipelineConfig:
    store_root: str = ""
    alpha: float = 1.0
    k: float = 1.5
    b: float = 0.75
    percentile: float = 1.25
    test_set_size: int = 1000
    extractor: str = "offline"  # offline | remote
    extractor_endpoint: str = ""  # endpoint config path, required for remote
    front_view_tag: str = "front"
    keyframe_strategy: str = "annotated-or-middle"
    lease_seconds: float = 1800.0
    taxonomy_path: str = ""
    synonyms_path: str = ""
    classifier_rules_path: str = ""
    template_dir: str = ""

    _PATH_FIELDS = ("store_root", "taxonomy_path", "synonyms_path",
                    "classifier_rules_path", "template_dir")

    def resolved_taxonomy(self) -> Path:
        return Path(self.taxonomy_path) if self.taxonomy_path else data_path("taxonomy.txt")

    def resolved_synonyms(self) -> Path:
        return Path(self.synonyms_path) if self.synonyms_path else data_path("synonyms.txt")

    def resolved_classifier_rules(self) -> Path:
        if self.classifier_rules_path:
            return Path(self.classifier_rules_path)
        return data_path("classifier_rules.json")

    def resolved_template_dir(self) -> Path:
        return Path(self.template_dir) if self.template_dir else data_path("templates")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.startswith("_")}

    def checksum(self) -> str:
        payload = {
            k: v for k, v in self.to_dict().items() if k not in self._PATH_FIELDS
        }
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode("utf-8")
        ).hexdigest()


def load_config(
    config_path: str | Path | None = None,
    overrides: dict | None = None,
    env: dict | None = None,
) -> PipelineConfig:
    """Merge defaults, config file, environment, and explicit overrides."""
    env = os.environ if env is None else env
    values: dict = {}
    if config_path:
        raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"{config_path}: config must be a JSON object")
        known = {f.name for f in fields(PipelineConfig)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"{config_path}: unknown config keys {sorted(unknown)}")
        values.update(raw)
    if env.get(STORE_ENV_VAR):
        values["store_root"] = env[STORE_ENV_VAR]
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return PipelineConfig(**values)
