"""Run configuration: a line-oriented key=value file.

Relative paths resolve against the directory holding the config file, so a
fixture directory is self-contained and relocatable.  Unknown keys are an
error — silent typos in a config are worse than a loud one.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Union

from .embedding import DEFAULT_SCALE

__all__ = ["FUSER_KINDS", "PipelineConfig", "load_config"]

FUSER_KINDS = ("average", "mlp", "transformer", "clip-aug")

DEFAULT_VAL_HOLDOUT = 869


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs: data paths, stores, fuser, and knobs."""

    dataset: Path
    inventory: Path
    gloss_store: Path
    corpus_store: Path
    candidate_store: Path
    context_store: Path
    prompt_store: Path
    gold: Optional[Path] = None
    provider: Optional[str] = None
    fuser: str = "average"
    k: int = 3
    scale: float = DEFAULT_SCALE
    seed: int = 0
    checkpoint: Optional[Path] = None
    retrieval_cache: Optional[Path] = None
    report: Optional[Path] = None
    trace: Optional[Path] = None
    history: Optional[Path] = None
    epochs: Optional[int] = None
    learning_rate: Optional[float] = None
    batch_size: Optional[int] = None
    val_holdout: int = DEFAULT_VAL_HOLDOUT

    def __post_init__(self) -> None:
        if self.fuser not in FUSER_KINDS:
            raise ValueError(f"unknown fuser kind {self.fuser!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.scale > 0:
            raise ValueError("softmax scale must be positive")
        if self.val_holdout < 1:
            raise ValueError("validation holdout must be >= 1")

    def validate_inputs(self) -> None:
        """Check that every input file the run will read actually exists."""
        required = ["dataset", "inventory", "gloss_store", "corpus_store", "candidate_store"]
        if self.provider is None:
            required += ["context_store", "prompt_store"]
        if self.gold is not None:
            required.append("gold")
        for name in required:
            path = getattr(self, name)
            if not Path(path).exists():
                raise FileNotFoundError(f"config {name}: no such file {path}")


_PATH_KEYS = frozenset(
    {
        "dataset",
        "gold",
        "inventory",
        "gloss_store",
        "corpus_store",
        "candidate_store",
        "context_store",
        "prompt_store",
        "checkpoint",
        "retrieval_cache",
        "report",
        "trace",
        "history",
    }
)
_INT_KEYS = frozenset({"k", "seed", "epochs", "batch_size", "val_holdout"})
_FLOAT_KEYS = frozenset({"scale", "learning_rate"})
_STR_KEYS = frozenset({"provider", "fuser"})
_ALL_KEYS = _PATH_KEYS | _INT_KEYS | _FLOAT_KEYS | _STR_KEYS

_REQUIRED_KEYS = (
    "dataset",
    "inventory",
    "gloss_store",
    "corpus_store",
    "candidate_store",
    "context_store",
    "prompt_store",
)


def load_config(path: Union[str, Path], **overrides) -> PipelineConfig:
    """Parse a key=value config file into a PipelineConfig.

    ``overrides`` (e.g. from CLI flags) replace file values after parsing.
    """
    path = Path(path)
    base_dir = path.parent
    values: dict[str, object] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"config line {lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in _ALL_KEYS:
                raise ValueError(f"config line {lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"config line {lineno}: duplicate key {key!r}")
            if key in _PATH_KEYS:
                p = Path(value)
                values[key] = p if p.is_absolute() else base_dir / p
            elif key in _INT_KEYS:
                try:
                    values[key] = int(value)
                except ValueError:
                    raise ValueError(
                        f"config line {lineno}: invalid integer for {key}: {value!r}"
                    ) from None
            elif key in _FLOAT_KEYS:
                try:
                    values[key] = float(value)
                except ValueError:
                    raise ValueError(
                        f"config line {lineno}: invalid number for {key}: {value!r}"
                    ) from None
            else:
                values[key] = value

    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _ALL_KEYS:
            raise ValueError(f"unknown config override {key!r}")
        values[key] = Path(value) if key in _PATH_KEYS else value

    missing = [key for key in _REQUIRED_KEYS if key not in values]
    if missing:
        raise ValueError(f"config is missing required keys: {', '.join(missing)}")
    return PipelineConfig(**values)
