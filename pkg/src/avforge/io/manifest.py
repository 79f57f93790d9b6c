"""Project manifest: where a project's inputs live and where its outputs go."""

from __future__ import annotations

import os
from dataclasses import dataclass
from dataclasses import field as dc_field

from ..errors import DataError
from .formats import read_json

MANIFEST_VERSION = 1
_PATH_KEYS = ("rig", "grid", "views", "motion", "field", "hair", "clothing")


@dataclass
class ProjectManifest:
    output_dir: str
    rig: str | None = None
    grid: str | None = None
    views: str | None = None
    motion: str | None = None
    field: str | None = None
    hair: str | None = None
    clothing: str | None = None
    configs: dict = dc_field(default_factory=dict)  # stage name -> config path
    seed: int = 0
    splats: int = 2000
    version: int = MANIFEST_VERSION

    @classmethod
    def load(cls, path) -> "ProjectManifest":
        """Read a manifest; relative paths resolve against its directory and must exist."""
        d = read_json(path)
        if not isinstance(d, dict):
            raise DataError(f"{path}: manifest must be a JSON object")
        if d.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
            raise DataError(f"{path}: unsupported manifest version {d.get('version')}", field="version")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise DataError(f"{path}: unknown manifest keys {sorted(unknown)}", field=sorted(unknown)[0])
        if "output_dir" not in d:
            raise DataError(f"{path}: manifest needs output_dir", field="output_dir")
        base = os.path.dirname(os.path.abspath(path))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, p)

        m = cls(**d)
        m.output_dir = resolve(m.output_dir)
        for key in _PATH_KEYS:
            value = getattr(m, key)
            if value is not None:
                value = resolve(value)
                if not os.path.exists(value):
                    raise DataError(f"manifest {key} path does not exist: {value}", field=key)
                setattr(m, key, value)
        configs = {}
        for name, p in m.configs.items():
            p = resolve(p)
            if not os.path.exists(p):
                raise DataError(f"manifest config for {name} does not exist: {p}", field=f"configs.{name}")
            configs[name] = p
        m.configs = configs
        return m
