"""Run configuration: file paths plus the full pipeline config.

The on-disk format is flat ``key = value`` text (one key per line,
``#`` comments).  Nested pipeline settings use dotted keys, e.g.
``stage2.beta = 0.99``.  CLI flags override file values.  Updates are
collected and applied per section in one shot, so cross-field
invariants (like K <= N) only see the final state.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable

from .corpus import DEFAULT_NOUN_SUFFIXES
from .training import PipelineConfig


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or missing paths."""


@dataclass(frozen=True)
class RunConfig:
    sd_path: str | None = None
    td_train_path: str | None = None
    td_test_path: str | None = None
    embeddings_path: str | None = None
    nouns_path: str | None = None
    stopwords_path: str | None = None
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    noun_suffixes: tuple[str, ...] = DEFAULT_NOUN_SUFFIXES
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)


_PATH_KEYS = ("sd_path", "td_train_path", "td_test_path", "embeddings_path",
              "nouns_path", "stopwords_path", "out_dir")
_PIPELINE_SCALARS = ("seed", "vocab_min_count", "bm25_k1", "bm25_b")
_PIPELINE_SECTIONS = ("sample", "model", "stage1", "stage2", "stage3", "components")


def _coerce(raw: str, current) -> object:
    if isinstance(current, bool):
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(part) for part in raw.split(",") if part.strip())
    return raw.strip()


def _parse_item(config: RunConfig, key: str, raw: str) -> tuple[str, ...]:
    """Validate and coerce one key; returns a typed update tuple."""
    if key in _PATH_KEYS:
        return ("run", key, raw.strip())
    if key == "seeds":
        seeds = tuple(int(p) for p in raw.split(",") if p.strip())
        if not seeds:
            raise ConfigError("seeds must list at least one seed")
        return ("run", key, seeds)
    if key == "noun_suffixes":
        return ("run", key, tuple(p.strip() for p in raw.split(",") if p.strip()))
    if key in _PIPELINE_SCALARS:
        return ("scalar", key, _coerce(raw, getattr(config.pipeline, key)))
    section_name, _, field_name = key.partition(".")
    if section_name in _PIPELINE_SECTIONS and field_name:
        section = getattr(config.pipeline, section_name)
        if not hasattr(section, field_name):
            raise ConfigError(f"unknown config key {key!r}")
        return ("section", section_name, field_name, _coerce(raw, getattr(section, field_name)))
    raise ConfigError(f"unknown config key {key!r}")


def apply_keys(config: RunConfig, items: Iterable[tuple[str, str]]) -> RunConfig:
    """Apply (key, raw value) pairs; later items win on duplicate keys."""
    run_updates: dict = {}
    scalar_updates: dict = {}
    section_updates: dict[str, dict] = {}
    for key, raw in items:
        update = _parse_item(config, key, raw)
        if update[0] == "run":
            run_updates[update[1]] = update[2]
        elif update[0] == "scalar":
            scalar_updates[update[1]] = update[2]
        else:
            section_updates.setdefault(update[1], {})[update[2]] = update[3]

    pipeline = config.pipeline
    rebuilt = {name: replace(getattr(pipeline, name), **updates)
               for name, updates in section_updates.items()}
    if scalar_updates or rebuilt:
        pipeline = replace(pipeline, **scalar_updates, **rebuilt)
    return replace(config, pipeline=pipeline, **run_updates)


def set_key(config: RunConfig, key: str, raw: str) -> RunConfig:
    return apply_keys(config, [(key, raw)])


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    config = base or RunConfig()
    items: list[tuple[str, str]] = []
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        try:
            # validate and coerce eagerly so errors carry the line number
            _parse_item(config, key.strip(), value.strip())
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
        items.append((key.strip(), value.strip()))
    return apply_keys(config, items)


def load_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    return parse_config_text(Path(path).read_text(encoding="utf-8"), base=base)


def config_to_text(config: RunConfig) -> str:
    """Flat key=value echo; parsing it back reproduces the config."""
    lines = []
    for key in _PATH_KEYS:
        value = getattr(config, key)
        if value is not None:
            lines.append(f"{key} = {value}")
    lines.append("seeds = " + ",".join(str(s) for s in config.seeds))
    lines.append("noun_suffixes = " + ",".join(config.noun_suffixes))
    for key in _PIPELINE_SCALARS:
        lines.append(f"{key} = {getattr(config.pipeline, key)}")
    for section_name in _PIPELINE_SECTIONS:
        section = getattr(config.pipeline, section_name)
        for f in fields(section):
            value = getattr(section, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{section_name}.{f.name} = {value}")
    return "\n".join(lines) + "\n"


def require_paths(config: RunConfig, *keys: str) -> None:
    """Validate that the named path fields are set and exist on disk."""
    for key in keys:
        value = getattr(config, key)
        if value is None:
            raise ConfigError(f"config key {key!r} is required for this command")
        if key != "out_dir" and not Path(value).exists():
            raise ConfigError(f"{key} = {value!r} does not exist")
