"""Simulation/session scenario files: dataset refs + provider + config."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

from .annotations import FootprintSet, load_geojson
from .errors import ContractError
from .seg_gate import DetectionHead, ProviderState
from .session import SessionConfig, degrade


@dataclass
class Scenario:
    config: SessionConfig
    provider: ProviderState
    head: DetectionHead
    truth: FootprintSet | None
    annotations: FootprintSet


def load_scenario(obj: dict, base_dir: str = ".") -> Scenario:
    """Scenario JSON: {"truth": path?, "annotations": path?, "degrade": {...}?,
    "provider": {...}, "config": {...}}.  When `annotations` is absent the
    initial set is produced by degrading the truth."""
    cfg = SessionConfig.from_json(obj.get("config", {}))
    provider = ProviderState.from_json(obj.get("provider", {}))
    head = DetectionHead(theta=cfg.theta)

    def _resolve(p):
        return p if os.path.isabs(p) else os.path.join(base_dir, p)

    truth = load_geojson(_resolve(obj["truth"])) if obj.get("truth") else None
    if obj.get("annotations"):
        annotations = load_geojson(_resolve(obj["annotations"]))
    elif "degrade" in obj:
        if truth is None:
            raise ContractError("degrade requires a truth dataset")
        d = obj["degrade"]
        annotations = degrade(
            truth,
            add_pct=d.get("add_pct", 0),
            remove_pct=d.get("remove_pct", 0),
            max_shift=d.get("max_shift", 0),
            seed=d.get("seed", 0),
        )
    elif truth is not None:
        annotations = truth
    else:
        raise ContractError("scenario needs annotations or truth+degrade")
    return Scenario(
        config=cfg, provider=provider, head=head, truth=truth, annotations=annotations
    )


def load_scenario_file(path: str) -> Scenario:
    with open(path) as f:
        obj = json.load(f)
    return load_scenario(obj, base_dir=os.path.dirname(os.path.abspath(path)))
