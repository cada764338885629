"""Run reports: a JSON document describing one command line run."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Any, Dict

import jsonschema
import numpy as np


def jsonable(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples to JSON types; non-finite floats
    become ``None``."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    return obj


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("wassvec").joinpath("report.schema.json").read_text()
    return json.loads(text)


@dataclass
class RunReport:
    command: str
    status: str
    exit_code: int
    version: str
    config: Dict[str, Any] = field(default_factory=dict)
    results: Dict[str, Any] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    timing: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("config", "results", "artifacts", "timing"):
            setattr(self, name, jsonable(getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> None:
        jsonschema.validate(self.to_dict(), report_schema())

    def to_json(self) -> str:
        self.validate()
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunReport":
        data = json.loads(text)
        jsonschema.validate(data, report_schema())
        return cls(**data)
