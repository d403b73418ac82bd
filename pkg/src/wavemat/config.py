"""Key-value configuration files.

All default numeric parameters (sensor model, material bank, experiment
training profiles) live in a checked-in config file rather than code, so
runs are reproducible and tunable. Format: one ``dotted.key=value`` per
line, ``#`` comments, later keys override earlier ones. The schema is
documented in the README.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path

DEFAULT_CONFIG_RESOURCE = "default.cfg"


def parse_config(text: str) -> dict[str, str]:
    """Parse config text into an insertion-ordered key -> raw string map."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ValueError(f"config line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_config(path: str | Path | None = None) -> dict[str, str]:
    """Load a config file; ``None`` loads the packaged defaults."""
    if path is None:
        text = resources.files("wavemat").joinpath("data", DEFAULT_CONFIG_RESOURCE).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_config(text)


def config_text(cfg: dict[str, str]) -> str:
    """Render a config map back to canonical text (stable key order)."""
    return "\n".join(f"{k}={v}" for k, v in cfg.items()) + "\n"


def get_float(cfg: dict[str, str], key: str) -> float:
    return float(_require(cfg, key))


def get_int(cfg: dict[str, str], key: str) -> int:
    return int(_require(cfg, key))


def get_str(cfg: dict[str, str], key: str) -> str:
    return _require(cfg, key)


def get_int_list(cfg: dict[str, str], key: str) -> tuple[int, ...]:
    return tuple(int(v) for v in _require(cfg, key).split(",") if v.strip())


def _require(cfg: dict[str, str], key: str) -> str:
    if key not in cfg:
        raise KeyError(f"missing config key {key!r}")
    return cfg[key]


def material_names(cfg: dict[str, str]) -> list[str]:
    """Material names in config file order (defines class id order)."""
    names: list[str] = []
    for key in cfg:
        if key.startswith("material."):
            name = key.split(".")[1]
            if name not in names:
                names.append(name)
    return names
