"""Run configuration: one JSON document layered over built-in defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .regress.base import kinds as model_kinds

DEFAULTS: dict[str, Any] = {
    "case_path": None,
    "contingencies": None,
    "uncertainty": {},
    "seed": 2024,
    "n_per_contingency": 150,
    "workers": 1,
    "with_t1": True,
    "schedule": {"t_fault": 1.0, "step": 0.002, "horizon": 10.0},
    "beta": 180.0,
    "bisection": {"bracket_max": 2.0, "tol": 2e-4},
    "selection": {"mic_floor": 0.1, "scc_threshold": 0.5, "mic_exponent": 0.6},
    "models": ["linear", "tree", "knn", "forest", "mlp", "grnn", "kan"],
    "cv": {"k": 5, "seed": 0},
    "out_dir": "out",
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(val, dict):
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = copy.deepcopy(val)
    return out


@dataclass
class RunConfig:
    data: dict

    @classmethod
    def from_dict(cls, over: dict | None = None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, over or {}))
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls.from_dict()
        try:
            raw = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(raw)

    def __getitem__(self, key):
        return self.data[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def validate(self) -> None:
        d = self.data
        if d["case_path"] is not None and not Path(d["case_path"]).is_file():
            raise ConfigError(f"case file {d['case_path']} does not exist")
        if d["contingencies"] is not None and not all(
                isinstance(c, int) for c in d["contingencies"]):
            raise ConfigError("contingencies must be a list of integers")
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a non-negative integer")
        if not isinstance(d["n_per_contingency"], int) or d["n_per_contingency"] < 0:
            raise ConfigError("n_per_contingency must be a non-negative integer")
        if not isinstance(d["workers"], int) or d["workers"] < 1:
            raise ConfigError("workers must be a positive integer")
        s = d["schedule"]
        if not (s["t_fault"] >= 0 and 0 < s["step"] <= 0.05 and s["horizon"] > 0):
            raise ConfigError("schedule needs t_fault >= 0, 0 < step <= 0.05, horizon > 0")
        if not 0 < d["beta"] <= 360:
            raise ConfigError("beta must lie in (0, 360] degrees")
        b = d["bisection"]
        if not 0 < b["tol"] < b["bracket_max"]:
            raise ConfigError("bisection needs 0 < tol < bracket_max")
        sel = d["selection"]
        if not (0 <= sel["mic_floor"] < 1 and 0 < sel["scc_threshold"] <= 1
                and 0 < sel["mic_exponent"] <= 1):
            raise ConfigError("selection thresholds out of range")
        for m in d["models"]:
            kind = m if isinstance(m, str) else m.get("kind") if isinstance(m, dict) else None
            if kind not in model_kinds():
                raise ConfigError(f"unknown model {m!r}")
        if not (isinstance(d["cv"]["k"], int) and d["cv"]["k"] >= 2):
            raise ConfigError("cv.k must be an integer >= 2")
        for key in d["uncertainty"]:
            if key not in ("load", "solar", "wind"):
                raise ConfigError(f"unknown uncertainty group {key!r}")

    def model_specs(self) -> list:
        """Model list as kind strings or (kind, params) tuples."""
        out = []
        for m in self.data["models"]:
            if isinstance(m, str):
                out.append(m)
            else:
                params = {k: tuple(v) if isinstance(v, list) else v
                          for k, v in m.items() if k != "kind"}
                out.append((m["kind"], params))
        return out
