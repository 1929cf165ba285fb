"""Run configuration: one JSON document with ``cgcrw``, ``baseline``, ``scene`` and ``paths`` sections.

Every key is optional; unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import BaselineParams
from .core import CgcrwParams
from .synth import SceneSpec


@dataclass(frozen=True)
class Paths:
    out: str | None = None
    scenes: str | None = None


def _build(cls, section: str, data: dict | None):
    data = dict(data or {})
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"config section {section!r}: unknown keys {unknown}")
    if cls is SceneSpec:
        return SceneSpec.from_dict(data)
    return cls(**data)


@dataclass(frozen=True)
class RunConfig:
    cgcrw: CgcrwParams = field(default_factory=CgcrwParams)
    baseline: BaselineParams = field(default_factory=BaselineParams)
    scene: SceneSpec = field(default_factory=SceneSpec)
    paths: Paths = field(default_factory=Paths)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ValueError("config must be a JSON object")
        unknown = sorted(set(data) - {"cgcrw", "baseline", "scene", "paths"})
        if unknown:
            raise ValueError(f"config: unknown sections {unknown}")
        return cls(
            cgcrw=_build(CgcrwParams, "cgcrw", data.get("cgcrw")),
            baseline=_build(BaselineParams, "baseline", data.get("baseline")),
            scene=_build(SceneSpec, "scene", data.get("scene")),
            paths=_build(Paths, "paths", data.get("paths")),
        )

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "cgcrw": dataclasses.asdict(self.cgcrw),
            "baseline": dataclasses.asdict(self.baseline),
            "scene": self.scene.to_dict(),
            "paths": dataclasses.asdict(self.paths),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_cgcrw(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, cgcrw=dataclasses.replace(self.cgcrw, **changes))

    def with_baseline(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, baseline=dataclasses.replace(self.baseline, **changes))

    def with_scene(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, scene=dataclasses.replace(self.scene, **changes))
