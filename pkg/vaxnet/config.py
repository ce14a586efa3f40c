"""Pipeline configuration read from ``key=value`` files."""
import hashlib
import logging
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator


logger = logging.getLogger(__name__)

PATH_FIELDS = (
    "events",
    "gazetteer",
    "stoplist",
    "keywords",
    "periods",
    "spoken_languages",
    "domain_lists",
    "shorteners",
    "status",
    "labels",
    "exclusions",
    "out",
)
LIST_FIELDS = ("events", "domain_lists", "covered_languages", "countries")


class ConfigError(ValueError):
    """Raised for unreadable or invalid configuration."""


def parse_keyvalue(lines: Iterable[str], source: str = "<config>") -> Dict[str, str]:
    """One ``key=value`` pair per line; ``#`` starts a comment line."""
    values: Dict[str, str] = {}
    for line_no, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{line_no}: expected key=value")
        if key in values:
            raise ConfigError(f"{source}:{line_no}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_keyvalue(path: Union[Path, str]) -> Dict[str, str]:
    path = Path(path)
    try:
        with path.open(encoding="utf-8") as handle:
            return parse_keyvalue(handle, source=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc


def split_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def format_errors(exc: ValidationError) -> str:
    return "; ".join(
        f"{'.'.join(str(part) for part in error['loc']) or 'config'}: {error['msg']}"
        for error in exc.errors()
    )


class RwcMethodName(str, Enum):
    EXACT = "exact"
    MONTECARLO = "montecarlo"


class PipelineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    events: List[Path] = Field(min_length=1)
    gazetteer: Path
    stoplist: Optional[Path] = None
    keywords: Path
    periods: Path
    spoken_languages: Path
    domain_lists: List[Path] = Field(default_factory=list)
    shorteners: Optional[Path] = None
    status: Optional[Path] = None
    labels: Optional[Path] = None
    exclusions: Optional[Path] = None
    covered_languages: List[str] = Field(default_factory=list)
    out: Path = Path("out")

    countries: List[str] = Field(default_factory=list)
    period: Optional[str] = None
    reference_lang: str = "en"

    min_users: int = Field(2000, ge=1)
    min_pair_retweets: int = Field(1, ge=1)
    min_weight_rt: int = Field(1, ge=1)
    min_weight_co: int = Field(2, ge=1)
    dominance: float = Field(0.9, gt=0.0, le=1.0)
    min_frac: float = Field(0.01, ge=0.0, lt=1.0)
    sample_size: int = Field(20, ge=1)
    round2_top: int = Field(10, ge=1)
    round2_exclude_top: int = Field(50, ge=0)
    stance_threshold: int = Field(10, ge=0)
    k_absorb: Optional[int] = Field(None, ge=1)
    rwc_method: RwcMethodName = RwcMethodName.EXACT
    n_walks: int = Field(10_000, ge=1)
    walk_reverse: bool = False
    min_imports: int = Field(10, ge=1)
    heatmaps: bool = True

    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)

    @field_validator("countries")
    @classmethod
    def _upper_countries(cls, value: List[str]) -> List[str]:
        return sorted({code.strip().upper() for code in value if code.strip()})

    @property
    def digest(self) -> str:
        """SHA-256 of the canonical JSON form; stamped into every artifact."""
        canonical = self.model_dump_json(exclude={"workers", "out"})
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def stamp(self) -> str:
        return f"config_digest={self.digest}"

    def override(self, **changes) -> "PipelineConfig":
        """Apply command-line overrides; ``None`` values leave a setting alone."""
        updates = {key: value for key, value in changes.items() if value is not None}
        if not updates:
            return self
        try:
            return PipelineConfig.model_validate({**self.model_dump(), **updates})
        except ValidationError as exc:
            raise ConfigError(format_errors(exc)) from exc


def config_from_mapping(values: Dict[str, str], base_dir: Path) -> PipelineConfig:
    data: Dict[str, object] = {}
    for key, value in values.items():
        if key in LIST_FIELDS:
            items = split_list(value)
            data[key] = [base_dir / item for item in items] if key in PATH_FIELDS else items
        elif key in PATH_FIELDS:
            data[key] = base_dir / value if value else None
        else:
            data[key] = value if value else None
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(format_errors(exc)) from exc


def load_config(path: Union[Path, str]) -> PipelineConfig:
    """Read a pipeline config; relative paths resolve against its directory."""
    path = Path(path)
    config = config_from_mapping(load_keyvalue(path), path.resolve().parent)
    logger.info(
        "Configuration loaded",
        extra={"event": "config_loaded", "path": str(path), "digest": config.digest},
    )
    return config


def dump_config(values: Dict[str, object]) -> str:
    """Render settings in the ``key=value`` form read by ``load_config``."""
    lines = []
    for key, value in values.items():
        if value is None:
            continue
        if isinstance(value, (list, tuple)):
            value = ",".join(str(item) for item in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"
