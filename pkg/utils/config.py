import io
import os
import re
from typing import Dict, List, Optional

import numpy as np
from dotenv import dotenv_values, load_dotenv
from pydantic import BaseModel, ConfigDict, ValidationError

from utils.errors import ChordSpecError, ConfigError
from utils.models import ModelVariant
from utils.pianoroll import N_KEYS, chord_to_vec

load_dotenv()

DEFAULT_WORKERS = int(os.getenv("MIDINET_WORKERS", "1"))

_NOTE_OFFSETS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_CHORD_TOKEN = re.compile(r"^([A-G])([#b]?)(m?)$")


class CliConfig(BaseModel):
    """Settings shared by every subcommand; command-line flags override file values."""

    model_config = ConfigDict(extra="forbid")

    variant: int = 1
    epochs: int = 20
    batch_size: int = 64
    seed: int = 0
    lambda1: Optional[float] = None
    lambda2: Optional[float] = None
    twod_layers: Optional[str] = None
    d_uses_prev: bool = False
    label_smooth: float = 0.9
    checkpoint_every: int = 1
    max_iterations: Optional[int] = None
    bars: int = 8
    tempo: float = 120.0
    chords: Optional[str] = None
    workers: int = DEFAULT_WORKERS
    augment: bool = True


def load_config_file(path: str) -> Dict[str, str]:
    """Parse a `key = value` file; blank lines and `#` comments are ignored."""
    values: Dict[str, str] = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    for number, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError("expected 'key = value'", number)
        parsed = dotenv_values(stream=io.StringIO(line))
        if not parsed:
            raise ConfigError("expected 'key = value'", number)
        for key, value in parsed.items():
            key = key.strip().lower().replace("-", "_")
            if key not in CliConfig.model_fields:
                raise ConfigError(f"unknown key '{key}'", number)
            values[key] = "" if value is None else value
    return values


def merge_config(flags: Dict[str, object], config_path: Optional[str] = None) -> CliConfig:
    """Flag values win over file values, which win over defaults. `None` flags count as unset."""
    data: Dict[str, object] = load_config_file(config_path) if config_path else {}
    data.update({k: v for k, v in flags.items() if v is not None})
    try:
        return CliConfig(**data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def build_variant(cfg: CliConfig) -> ModelVariant:
    """
    The preset variant named by `cfg.variant`, turned into a custom variant (id 0)
    when lambda or 2-D layer overrides depart from its constants.
    """
    try:
        base = ModelVariant.preset(cfg.variant, d_uses_prev=cfg.d_uses_prev)
        updates = {}
        if cfg.lambda1 is not None:
            updates["lambda1"] = cfg.lambda1
        if cfg.lambda2 is not None:
            updates["lambda2"] = cfg.lambda2
        if cfg.twod_layers is not None:
            updates["twod_layers"] = cfg.twod_layers
        if not updates:
            return base
        fields = {**base.model_dump(), **updates}
        candidate = ModelVariant(**{**fields, "id": 0})
        if candidate.model_dump(exclude={"id"}) == base.model_dump(exclude={"id"}):
            return base
        return candidate
    except (ValidationError, ValueError) as e:
        raise ConfigError(f"invalid model variant: {e}") from e


def parse_chord_symbol(token: str) -> np.ndarray:
    """`C`, `F#`, `Bb` are major triads; a trailing `m` makes it minor (`Am`, `C#m`)."""
    match = _CHORD_TOKEN.match(token.strip())
    if match is None:
        raise ChordSpecError(token)
    letter, accidental, minor = match.groups()
    root = _NOTE_OFFSETS[letter] + {"#": 1, "b": -1, "": 0}[accidental]
    return chord_to_vec(root % N_KEYS, "minor" if minor else "major")


def parse_chord_spec(spec: str, n_bars: Optional[int] = None) -> List[np.ndarray]:
    """Comma-separated chord symbols, one per bar, cycled to `n_bars` when shorter."""
    tokens = spec.split(",")
    if not spec.strip():
        raise ChordSpecError(spec)
    vecs = [parse_chord_symbol(t) for t in tokens]
    if n_bars is None:
        return vecs
    return [vecs[k % len(vecs)] for k in range(n_bars)]
