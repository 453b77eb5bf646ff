from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import yaml

from .model import ExperimentConfig
from .operators import StateVector


PathLike = Union[str, Path]

YAML_SUFFIXES = (".yaml", ".yml")


def _read_mapping(path: Path) -> dict:
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in YAML_SUFFIXES:
        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at the top level")
    return data


def load_config(path: PathLike) -> ExperimentConfig:
    """
    Load an experiment config from YAML (.yaml/.yml) or JSON.

    A bare model document (one with ``n_left`` at the top level) is accepted and
    wrapped as ``{"model": ...}``.
    """
    data = _read_mapping(Path(path))
    if "model" not in data and "n_left" in data:
        data = {"model": data}
    return ExperimentConfig(**data)


def save_config(config: ExperimentConfig, path: PathLike) -> None:
    path = Path(path)
    data = config.model_dump(mode="json", exclude_none=True)
    if path.suffix.lower() in YAML_SUFFIXES:
        text = yaml.safe_dump(data, sort_keys=False, allow_unicode=True)
    else:
        text = json.dumps(data, indent=2) + "\n"
    path.write_text(text, encoding="utf-8")


def render_json(data: Any) -> str:
    return json.dumps(data, indent=2) + "\n"


def render_csv(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_text(text: str, path: PathLike) -> None:
    Path(path).write_text(text, encoding="utf-8")


def load_state(path: PathLike) -> StateVector:
    return StateVector.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_state(psi: StateVector, path: PathLike) -> None:
    write_text(render_json(psi.to_dict()), path)
