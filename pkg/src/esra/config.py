"""Pipeline configuration: TOML file values overridden by command-line flags."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .restore import EsraParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    esra: EsraParams = field(default_factory=EsraParams)
    qa_seed: int = 0
    unanswerable_fraction: float = 0.0
    multirow_pairs: int | None = None
    schema_path: str | None = None
    facts_path: str | None = None
    endpoint_path: str | None = None
    output_dir: str | None = None

    def check_paths(self):
        for name in ("schema_path", "facts_path", "endpoint_path"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} {p!r} does not exist")

    def to_toml(self) -> str:
        def val(v):
            if isinstance(v, bool):
                return "true" if v else "false"
            if isinstance(v, str):
                return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
            return repr(v)

        lines = ["[esra]"]
        for f in fields(self.esra):
            lines.append(f"{f.name} = {val(getattr(self.esra, f.name))}")
        lines += ["", "[qa]", f"seed = {self.qa_seed}",
                  f"unanswerable_fraction = {val(self.unanswerable_fraction)}"]
        if self.multirow_pairs is not None:
            lines.append(f"multirow_pairs = {self.multirow_pairs}")
        lines += ["", "[paths]"]
        for key, attr in _PATH_KEYS.items():
            v = getattr(self, attr)
            if v is not None:
                lines.append(f"{key} = {val(v)}")
        return "\n".join(lines) + "\n"


_PATH_KEYS = {
    "schema": "schema_path",
    "facts": "facts_path",
    "endpoint": "endpoint_path",
    "output_dir": "output_dir",
}


def from_mapping(data: Mapping[str, Any]) -> PipelineConfig:
    unknown = set(data) - {"esra", "qa", "paths"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    esra_fields = {f.name for f in fields(EsraParams)}
    esra = dict(data.get("esra", {}))
    bad = set(esra) - esra_fields
    if bad:
        raise ConfigError(f"unknown [esra] keys: {sorted(bad)}")
    qa = dict(data.get("qa", {}))
    bad = set(qa) - {"seed", "unanswerable_fraction", "multirow_pairs"}
    if bad:
        raise ConfigError(f"unknown [qa] keys: {sorted(bad)}")
    paths = dict(data.get("paths", {}))
    bad = set(paths) - set(_PATH_KEYS)
    if bad:
        raise ConfigError(f"unknown [paths] keys: {sorted(bad)}")
    try:
        params = EsraParams(**esra)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return PipelineConfig(
        esra=params,
        qa_seed=int(qa.get("seed", 0)),
        unanswerable_fraction=float(qa.get("unanswerable_fraction", 0.0)),
        multirow_pairs=qa.get("multirow_pairs"),
        **{attr: paths.get(key) for key, attr in _PATH_KEYS.items()},
    )


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(data)


def override(cfg: PipelineConfig, esra: Mapping[str, Any] | None = None, **flags) -> PipelineConfig:
    """Apply command-line values on top of ``cfg``; ``None`` means the flag
    was not given. ``esra`` holds restoration parameters, ``flags`` the
    remaining PipelineConfig fields."""
    esra_given = {k: v for k, v in (esra or {}).items() if v is not None}
    given = {k: v for k, v in flags.items() if v is not None}
    if esra_given:
        try:
            cfg = replace(cfg, esra=replace(cfg.esra, **esra_given))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return replace(cfg, **given) if given else cfg
