"""Run configuration: YAML loading, validation, hashing, and the run manifest.

A single config file drives all four subcommands. The config hash covers
every semantically relevant field (models, template content, consensus and
analytics options, imputation, seed, mock flag) but not storage locations,
so moving an output directory never invalidates a cache. Timestamps live
only in the manifest, keeping every other output byte-reproducible.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import __version__
from .errors import ConfigError
from .gateway import BUILTIN_TEMPLATES, Decoding, ModelSpec, PromptTemplate, Shot
from .storage import atomic_write_text

ONET_FILE_CANDIDATES = {
    "task_statements": ("Task Statements.txt", "Task_Statements.txt"),
    "task_ratings": ("Task Ratings.txt", "Task_Ratings.txt"),
    "skills": ("Skills.txt",),
}


@dataclass
class EmbeddingConfig:
    model_id: str
    endpoint_url: str = ""
    api_key_ref: str = ""


@dataclass
class ConsensusConfig:
    scale_min: int = 1
    scale_max: int = 5
    width_override: int | None = None
    similarity_variant: str = "centroid"


@dataclass
class ImputationConfig:
    policy: str = "median"
    override_file: Path | None = None


@dataclass
class RegressionConfig:
    spec_id: str
    dependent: str
    regressors: tuple[str, ...]
    fixed_effects: tuple[str, ...] = ()
    cluster: str | None = None
    weights: str | None = None
    table_file: Path | None = None  # defaults to the growth table


@dataclass
class AnalyticsConfig:
    weighted_tertiles: bool = False
    skill_group_file: Path | None = None
    skill_value_source: str = "level"
    score_unit: str = "raw"  # raw | norm | percentile
    external_indexes: list[tuple[str, Path]] = field(default_factory=list)
    panel_file: Path | None = None
    window_years: int = 4
    regressions: list[RegressionConfig] = field(default_factory=list)


@dataclass
class RunConfig:
    onet_dir: Path
    cache_dir: Path
    output_dir: Path
    models: list[ModelSpec]
    embedding: EmbeddingConfig
    employment_file: Path | None = None
    employment_year: int = 2023
    class_map_file: Path | None = None
    template_version: str = "v1"
    template_file: Path | None = None
    consensus: ConsensusConfig = field(default_factory=ConsensusConfig)
    imputation: ImputationConfig = field(default_factory=ImputationConfig)
    analytics: AnalyticsConfig = field(default_factory=AnalyticsConfig)
    max_in_flight: int = 4
    max_retries: int = 3
    requery_budget: int = 2
    # CLI-provided, not part of the file:
    mock: bool = False
    seed: int = 0
    allow_partial_ensemble: bool = False

    def onet_file(self, kind: str) -> Path:
        for name in ONET_FILE_CANDIDATES[kind]:
            candidate = self.onet_dir / name
            if candidate.exists():
                return candidate
        expected = ONET_FILE_CANDIDATES[kind][0]
        raise ConfigError(f"missing O*NET file: {self.onet_dir / expected}")

    def load_template(self) -> PromptTemplate:
        if self.template_file is not None:
            template = load_template_file(self.template_file)
            if template.version != self.template_version:
                raise ConfigError(
                    f"template file carries version {template.version!r}, config says {self.template_version!r}"
                )
        else:
            template = BUILTIN_TEMPLATES.get(self.template_version)
            if template is None:
                raise ConfigError(
                    f"unknown template version {self.template_version!r}; "
                    f"built-ins: {sorted(BUILTIN_TEMPLATES)}"
                )
        template.validate()
        return template

    def validate(self) -> None:
        if not self.models:
            raise ConfigError("config must list judge models")
        ids = [m.model_id for m in self.models]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"model ids must be distinct, got {ids}")
        if len(self.models) != 3 and not self.allow_partial_ensemble:
            raise ConfigError(
                f"exactly 3 models required (found {len(self.models)}); "
                "pass --allow-partial-ensemble to run with fewer"
            )
        if self.allow_partial_ensemble and len(self.models) < 2:
            raise ConfigError("at least 2 models are required even with --allow-partial-ensemble")
        if not self.onet_dir.is_dir():
            raise ConfigError(f"onet_dir does not exist: {self.onet_dir}")
        for kind in ONET_FILE_CANDIDATES:
            self.onet_file(kind)
        for path, label in (
            (self.employment_file, "employment_file"),
            (self.class_map_file, "class_map_file"),
            (self.template_file, "template_file"),
            (self.imputation.override_file, "imputation.override_file"),
            (self.analytics.skill_group_file, "analytics.skill_group_file"),
            (self.analytics.panel_file, "analytics.panel_file"),
        ):
            if path is not None and not path.exists():
                raise ConfigError(f"{label} does not exist: {path}")
        for name, path in self.analytics.external_indexes:
            if not path.exists():
                raise ConfigError(f"external index {name!r} does not exist: {path}")
        if self.analytics.score_unit not in ("raw", "norm", "percentile"):
            raise ConfigError(f"unknown score_unit {self.analytics.score_unit!r}")
        if self.consensus.similarity_variant not in ("centroid", "pairwise"):
            raise ConfigError(f"unknown similarity variant {self.consensus.similarity_variant!r}")
        self.load_template()

    def config_hash(self) -> str:
        """Hash of the semantically relevant configuration."""
        template = self.load_template()
        payload = {
            "software_version": __version__,
            "models": [
                {
                    "model_id": m.model_id,
                    "decoding": [m.decoding.temperature, m.decoding.max_tokens, m.decoding.seed],
                }
                for m in self.models
            ],
            "embedding_model": self.embedding.model_id,
            "template_version": self.template_version,
            "template_content": template.content_hash(),
            "consensus": [
                self.consensus.scale_min,
                self.consensus.scale_max,
                self.consensus.width_override,
                self.consensus.similarity_variant,
            ],
            "imputation": [
                self.imputation.policy,
                _file_digest(self.imputation.override_file),
            ],
            "class_map": _file_digest(self.class_map_file),
            "employment_year": self.employment_year,
            "analytics": {
                "weighted_tertiles": self.analytics.weighted_tertiles,
                "skill_groups": _file_digest(self.analytics.skill_group_file),
                "skill_value_source": self.analytics.skill_value_source,
                "score_unit": self.analytics.score_unit,
                "external_indexes": [name for name, _ in self.analytics.external_indexes],
                "window_years": self.analytics.window_years,
                "regressions": [
                    [r.spec_id, r.dependent, list(r.regressors), list(r.fixed_effects), r.cluster, r.weights]
                    for r in self.analytics.regressions
                ],
            },
            "mock": self.mock,
            "seed": self.seed,
            "allow_partial_ensemble": self.allow_partial_ensemble,
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _file_digest(path: Path | None) -> str | None:
    if path is None or not path.exists():
        return None
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _as_path(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_template_file(path: Path) -> PromptTemplate:
    """Load a custom prompt template (YAML: version, instruction, shots, output_format_clause)."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    try:
        shots = tuple(
            Shot(task=s["task"], rating=int(s["rating"]), motivation=s["motivation"])
            for s in raw["shots"]
        )
        return PromptTemplate(
            version=str(raw["version"]),
            instruction=raw["instruction"],
            shots=shots,
            output_format_clause=raw["output_format_clause"],
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"template file {path}: missing field {exc}") from exc


def load_config(path: Path, *, mock: bool = False, seed: int = 0,
                allow_partial_ensemble: bool = False) -> RunConfig:
    """Parse and validate a run configuration file."""
    base = Path(path).resolve().parent
    try:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config file {path} must hold a mapping")

    paths = raw.get("paths", {})
    for required in ("onet_dir", "cache_dir", "output_dir"):
        if required not in paths:
            raise ConfigError(f"config is missing paths.{required}")

    models = []
    for entry in raw.get("models", []):
        decoding_raw = entry.get("decoding", {})
        decoding = Decoding(
            temperature=float(decoding_raw.get("temperature", 0.0)),
            max_tokens=int(decoding_raw.get("max_tokens", 512)),
            seed=decoding_raw.get("seed", 42),
        )
        try:
            models.append(
                ModelSpec(
                    model_id=entry["model_id"],
                    endpoint_url=entry.get("endpoint_url", ""),
                    api_key_ref=entry.get("api_key_ref", ""),
                    decoding=decoding,
                )
            )
        except KeyError as exc:
            raise ConfigError(f"model entry missing field {exc}") from exc

    embedding_raw = raw.get("embedding", {})
    if "model_id" not in embedding_raw:
        raise ConfigError("config is missing embedding.model_id")
    embedding = EmbeddingConfig(
        model_id=embedding_raw["model_id"],
        endpoint_url=embedding_raw.get("endpoint_url", ""),
        api_key_ref=embedding_raw.get("api_key_ref", ""),
    )

    consensus_raw = raw.get("consensus", {})
    consensus = ConsensusConfig(
        scale_min=int(consensus_raw.get("scale_min", 1)),
        scale_max=int(consensus_raw.get("scale_max", 5)),
        width_override=consensus_raw.get("scale_width"),
        similarity_variant=consensus_raw.get("similarity", "centroid"),
    )

    imputation_raw = raw.get("imputation", {})
    imputation = ImputationConfig(
        policy=imputation_raw.get("policy", "median"),
        override_file=_as_path(base, imputation_raw.get("override_file")),
    )

    analytics_raw = raw.get("analytics", {})
    regressions = []
    for entry in analytics_raw.get("regressions", []):
        try:
            regressions.append(
                RegressionConfig(
                    spec_id=entry["id"],
                    dependent=entry["dependent"],
                    regressors=tuple(entry["regressors"]),
                    fixed_effects=tuple(entry.get("fixed_effects", ())),
                    cluster=entry.get("cluster"),
                    weights=entry.get("weights"),
                    table_file=_as_path(base, entry.get("table_file")),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"regression entry missing field {exc}") from exc
    analytics = AnalyticsConfig(
        weighted_tertiles=bool(analytics_raw.get("weighted_tertiles", False)),
        skill_group_file=_as_path(base, analytics_raw.get("skill_group_file")),
        skill_value_source=analytics_raw.get("skill_value_source", "level"),
        score_unit=analytics_raw.get("score_unit", "raw"),
        external_indexes=[
            (entry["name"], _as_path(base, entry["file"]))
            for entry in analytics_raw.get("external_indexes", [])
        ],
        panel_file=_as_path(base, analytics_raw.get("panel_file")),
        window_years=int(analytics_raw.get("window_years", 4)),
        regressions=regressions,
    )

    template_raw = raw.get("template", {})
    config = RunConfig(
        onet_dir=_as_path(base, paths["onet_dir"]),
        cache_dir=_as_path(base, paths["cache_dir"]),
        output_dir=_as_path(base, paths["output_dir"]),
        employment_file=_as_path(base, paths.get("employment_file")),
        employment_year=int(raw.get("employment_year", 2023)),
        class_map_file=_as_path(base, raw.get("skills", {}).get("class_map_file")),
        models=models,
        embedding=embedding,
        template_version=str(template_raw.get("version", "v1")),
        template_file=_as_path(base, template_raw.get("file")),
        consensus=consensus,
        imputation=imputation,
        analytics=analytics,
        max_in_flight=int(raw.get("max_in_flight", 4)),
        max_retries=int(raw.get("max_retries", 3)),
        requery_budget=int(raw.get("requery_budget", 2)),
        mock=mock,
        seed=seed,
        allow_partial_ensemble=allow_partial_ensemble,
    )
    config.validate()
    return config


class RunManifest:
    """Mutable run record persisted at output_dir/manifest.json.

    The only place timestamps are allowed; all other outputs carry just the
    config hash so repeated runs stay byte-identical.
    """

    def __init__(self, path: Path, config_hash: str, template_version: str, model_ids: list[str],
                 parameters: dict | None = None):
        self.path = path
        self.data: dict = {
            "config_hash": config_hash,
            "software_version": __version__,
            "template_version": template_version,
            "model_ids": model_ids,
            "parameters": parameters or {},
            "counts": {},
            "metrics": {},
            "timestamps": {},
        }
        if path.exists():
            previous = json.loads(path.read_text(encoding="utf-8"))
            if previous.get("config_hash") == config_hash:
                self.data["counts"] = previous.get("counts", {})
                self.data["metrics"] = previous.get("metrics", {})
                self.data["timestamps"] = previous.get("timestamps", {})

    @property
    def config_hash(self) -> str:
        return self.data["config_hash"]

    def record(self, stage: str, counts: dict[str, int], metrics: dict[str, float] | None = None) -> None:
        self.data["counts"].update(counts)
        if metrics:
            self.data["metrics"].update(metrics)
        self.data["timestamps"][stage] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        atomic_write_text(self.path, json.dumps(self.data, indent=2, sort_keys=True) + "\n")
