"""Shared geometry settings and the flat key=value config-file format."""

from __future__ import annotations

from dataclasses import dataclass, fields


@dataclass(frozen=True)
class GeometryConfig:
    """Sensing and graph-lattice geometry shared by every mode."""

    resolution_m: float = 0.25
    sensor_range_m: float = 20.0
    spacing_m: float = 4.0
    neighbor_radius_m: float = 12.0
    max_neighbors: int = 24


def disc_cell_count(range_m: float, resolution_m: float) -> int:
    """Cells whose center lies within range of a reference cell center."""
    import numpy as np

    r_cells = int(np.ceil(range_m / resolution_m))
    offs = np.arange(-r_cells, r_cells + 1)
    di, dj = np.meshgrid(offs, offs, indexing="ij")
    d2 = (di.astype(np.float64) ** 2 + dj.astype(np.float64) ** 2) * resolution_m**2
    return int(np.count_nonzero(d2 <= range_m**2))


def parse_config_text(text: str) -> dict:
    """Flat key=value lines; '#' starts a comment; values stay strings."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config_file(path) -> dict:
    with open(path) as f:
        return parse_config_text(f.read())


def format_config(values: dict) -> str:
    return "".join(f"{k}={v}\n" for k, v in values.items())


def coerce_into(dc_instance, values: dict):
    """Replace dataclass fields from string values, coercing by field type."""
    from dataclasses import replace

    kwargs = {}
    for f in fields(dc_instance):
        if f.name not in values:
            continue
        raw = values[f.name]
        t = f.type if isinstance(f.type, type) else None
        current = getattr(dc_instance, f.name)
        if isinstance(current, bool) or t is bool:
            kwargs[f.name] = str(raw).lower() in ("1", "true", "yes", "on")
        elif isinstance(current, int) and not isinstance(current, bool):
            kwargs[f.name] = int(raw)
        elif isinstance(current, float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    return replace(dc_instance, **kwargs)
