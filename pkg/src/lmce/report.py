"""Run report container and its JSON form."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    return x


@dataclass
class RunReport:
    config: dict = field(default_factory=dict)
    per_stage: list = field(default_factory=list)
    probes: dict = field(default_factory=dict)
    wall_times: list = field(default_factory=list)
    schedule: list = field(default_factory=list)
    status: str = "ok"
    failure: dict | None = None
    results: list = field(default_factory=list, repr=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {"config": self.config, "status": self.status, "failure": self.failure,
               "schedule": self.schedule, "per_stage": self.per_stage, "probes": self.probes}
        if include_timing:
            out["wall_times"] = self.wall_times
        else:
            out["per_stage"] = [{k: v for k, v in row.items() if "wall_time" not in k}
                                for row in self.per_stage]
        return _plain(out)

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    def write(self, path, include_timing: bool = True) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json(include_timing) + "\n")
