"""Case files: sectioned ``key = value`` text.

Grammar::

    # comment            (also after a value)
    [section]
    key = value

Values are numbers, ``on``/``off``/``true``/``false`` or bare words.  Every
section and key is checked against :data:`SCHEMA`; unknown names, missing
required keys and invalid values raise :class:`ConfigError` with the line
number of the offending entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

_REQUIRED = object()

# section -> key -> (type, default)
SCHEMA = {
    "geometry": {
        "nx": (int, _REQUIRED),
        "nz": (int, _REQUIRED),
        "nphi": (int, _REQUIRED),
        "length": (float, 1.0),
        "radius": (float, _REQUIRED),
        "minor_radius": (float, None),       # elliptic section when given
        "curvature_radius": (float, None),
        "curvature_angle_deg": (float, None),
        "radial_ratio": (float, 1.0),
        "capacity": (float, 0.5),
    },
    "fluid": {
        "nu": (float, _REQUIRED),
        "rho": (float, 1000.0),
    },
    "wall": {
        "beta": (float, _REQUIRED),
        "p_ext": (float, 0.0),
    },
    "numerics": {
        "dt": (float, _REQUIRED),
        "steps": (int, _REQUIRED),
        "theta": (float, 1.0),
        "theta_prime": (float, 1.0),
        "mode": (str, "full"),
        "advection": (bool, False),
        "axial_viscosity": (bool, True),
        "wall_model": (str, "staircase"),
        "cg_tol": (float, 1e-12),
        "newton_tol": (float, 1e-10),
    },
    "inlet": {
        "kind": (str, _REQUIRED),
        "Q": (float, 0.0),
        "womersley_amplitude": (float, 0.0),   # P/rho of the oscillating part
        "womersley_omega": (float, 0.0),
        "value": (float, 0.0),
        "amplitude": (float, 0.0),
        "omega": (float, 0.0),
        "phase": (float, 0.0),
    },
    "outlet": {
        "kind": (str, _REQUIRED),
        "Q": (float, 0.0),
        "womersley_amplitude": (float, 0.0),
        "womersley_omega": (float, 0.0),
        "value": (float, 0.0),
        "amplitude": (float, 0.0),
        "omega": (float, 0.0),
        "phase": (float, 0.0),
    },
    "initial": {
        "velocity": (str, "rest"),             # rest | poiseuille | womersley | pulsatile
        "Q": (float, 0.0),
        "womersley_amplitude": (float, 0.0),
        "womersley_omega": (float, 0.0),
        "pressure_gradient": (float, 0.0),     # p~(x, 0) = -G x
    },
    "output": {
        "log_every": (int, 1),
        "checkpoint_every": (int, 0),
        "profile_section": (float, None),      # axial position of the profile dump
    },
    "reference": {
        "case": (str, "none"),
        "lam": (float, 10.0),
    },
}

MODES = ("full", "hydrostatic", "direct", "axisymmetric")
DRIVER_KINDS = ("velocity", "pressure")
INITIAL_KINDS = ("rest", "poiseuille", "womersley", "pulsatile")
REFERENCES = ("none", "steady_elastic", "womersley", "elliptic", "curved")
WALL_MODELS = ("staircase", "oblique")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class CaseConfig:
    """Parsed case file: one dict per section with every key filled in."""

    sections: dict
    source: str = "<string>"
    lines: dict = field(default_factory=dict, repr=False)

    def __getitem__(self, name):
        return self.sections[name]

    def get(self, section, key):
        return self.sections[section][key]

    def with_overrides(self, **pairs):
        """Copy with ``section__key=value`` overrides (validated)."""
        text = serialize(self)
        cfg = parse(text, self.source)
        for k, v in pairs.items():
            sec, key = k.split("__", 1)
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ConfigError(f"unknown override {sec}.{key}")
            cfg.sections[sec][key] = _convert(SCHEMA[sec][key][0], str(v), None, key) if isinstance(v, str) else v
        validate(cfg)
        return cfg


def _convert(typ, raw, line, key):
    if typ is bool:
        low = raw.lower()
        if low in ("on", "true", "yes", "1"):
            return True
        if low in ("off", "false", "no", "0"):
            return False
        raise ConfigError(f"{key}: expected on/off, got {raw!r}", line)
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {raw!r}", line) from None
    if typ is float:
        try:
            val = float(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected a number, got {raw!r}", line) from None
        if not math.isfinite(val):
            raise ConfigError(f"{key}: value must be finite", line)
        return val
    return raw


def parse(text, source="<string>"):
    sections = {}
    lines = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            current = line[1:-1].strip()
            if current not in SCHEMA:
                raise ConfigError(f"unknown section [{current}]", lineno)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno)
            sections[current] = {}
            lines[current] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if current is None:
            raise ConfigError("entry before any section header", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA[current]:
            raise ConfigError(f"unknown key {key!r} in [{current}]", lineno)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r} in [{current}]", lineno)
        sections[current][key] = _convert(SCHEMA[current][key][0], value, lineno, key)
        lines[(current, key)] = lineno
    for sec, keys in SCHEMA.items():
        given = sections.setdefault(sec, {})
        for key, (_, default) in keys.items():
            if key not in given:
                if default is _REQUIRED:
                    raise ConfigError(f"missing required key {key!r} in [{sec}]", lines.get(sec))
                given[key] = default
    cfg = CaseConfig(sections, source, lines)
    validate(cfg)
    return cfg


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), str(path))


def _check(cond, msg, cfg, sec, key):
    if not cond:
        raise ConfigError(msg, cfg.lines.get((sec, key), cfg.lines.get(sec)))


def validate(cfg: CaseConfig):
    g, n = cfg["geometry"], cfg["numerics"]
    for key in ("nx", "nz", "nphi"):
        _check(g[key] >= 1, f"{key} must be at least 1", cfg, "geometry", key)
    _check(g["length"] > 0, "length must be positive", cfg, "geometry", "length")
    _check(g["radius"] > 0, "radius must be positive", cfg, "geometry", "radius")
    if g["minor_radius"] is not None:
        _check(0 < g["minor_radius"] < g["radius"], "minor_radius must lie in (0, radius)",
               cfg, "geometry", "minor_radius")
    curved = (g["curvature_radius"], g["curvature_angle_deg"])
    _check((curved[0] is None) == (curved[1] is None),
           "curvature_radius and curvature_angle_deg go together", cfg, "geometry", "curvature_radius")
    if curved[0] is not None:
        _check(curved[0] > g["radius"], "curvature radius must exceed the tube radius",
               cfg, "geometry", "curvature_radius")
        _check(curved[1] > 0, "curvature angle must be positive", cfg, "geometry", "curvature_angle_deg")
    _check(cfg["fluid"]["nu"] > 0, "nu must be positive", cfg, "fluid", "nu")
    _check(cfg["fluid"]["rho"] > 0, "rho must be positive", cfg, "fluid", "rho")
    _check(cfg["wall"]["beta"] > 0, "beta must be positive", cfg, "wall", "beta")
    _check(n["dt"] > 0, "dt must be positive", cfg, "numerics", "dt")
    _check(n["steps"] >= 0, "steps must be non-negative", cfg, "numerics", "steps")
    for key in ("theta", "theta_prime"):
        _check(0.5 <= n[key] <= 1.0, f"{key} must lie in [0.5, 1]", cfg, "numerics", key)
    _check(n["mode"] in MODES, f"mode must be one of {MODES}", cfg, "numerics", "mode")
    _check(n["wall_model"] in WALL_MODELS, f"wall_model must be one of {WALL_MODELS}", cfg, "numerics", "wall_model")
    if n["mode"] == "axisymmetric":
        _check(g["nphi"] == 1, "axisymmetric mode needs nphi = 1", cfg, "numerics", "mode")
    for end in ("inlet", "outlet"):
        _check(cfg[end]["kind"] in DRIVER_KINDS, f"kind must be one of {DRIVER_KINDS}", cfg, end, "kind")
    _check(cfg["inlet"]["kind"] == "pressure" or cfg["outlet"]["kind"] == "pressure",
           "at least one end needs a pressure condition", cfg, "outlet", "kind")
    _check(cfg["initial"]["velocity"] in INITIAL_KINDS, f"velocity must be one of {INITIAL_KINDS}",
           cfg, "initial", "velocity")
    _check(cfg["reference"]["case"] in REFERENCES, f"case must be one of {REFERENCES}", cfg, "reference", "case")
    _check(cfg["output"]["log_every"] >= 0, "log_every must be non-negative", cfg, "output", "log_every")
    return cfg


def _format(value):
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize(cfg: CaseConfig):
    """Text form listing every key; ``parse(serialize(c))`` reproduces ``c``."""
    out = []
    for sec, keys in SCHEMA.items():
        out.append(f"[{sec}]")
        for key in keys:
            value = cfg.sections[sec][key]
            if value is None:
                continue
            out.append(f"{key} = {_format(value)}")
        out.append("")
    return "\n".join(out)
