"""Run configuration: flat key = value text with sections.

The format is deliberately small: section headers in brackets, one
``key = value`` per line, ``#`` comments, nothing else.  Unknown
sections or keys are rejected outright so typos cannot silently change
a run.  Parsing then serializing then parsing is a fixed point, which
the determinism contract of the pipeline relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geometry import Circle, SplineBody

# section -> key -> (parser, default); None default means required.
_BOOL = {"on": True, "off": False, "true": True, "false": False}


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ValidationError(f"not a number: {text!r}") from exc


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ValidationError(f"not an integer: {text!r}") from exc


def _parse_bool(text: str) -> bool:
    if text.lower() not in _BOOL:
        raise ValidationError(f"expected on/off, got {text!r}")
    return _BOOL[text.lower()]


def _parse_floats(text: str) -> tuple:
    return tuple(_parse_float(v) for v in text.split(",") if v.strip())


def _parse_ints(text: str) -> tuple:
    return tuple(_parse_int(v) for v in text.split(",") if v.strip())


def _parse_points(text: str) -> tuple:
    pts = []
    for pair in text.split(";"):
        pair = pair.strip()
        if not pair:
            continue
        xy = pair.split(",")
        if len(xy) != 2:
            raise ValidationError(f"bad control point {pair!r}")
        pts.append((_parse_float(xy[0]), _parse_float(xy[1])))
    return tuple(pts)


def _parse_ells(text: str) -> tuple:
    """Filter scales: absolute floats or wall-cell multiples like 8dx."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if item.endswith("dx"):
            out.append(("dx", _parse_float(item[:-2])))
        else:
            out.append(("abs", _parse_float(item)))
    return tuple(out)


_SCHEMA = {
    "body": {
        "shape": (str, "circle"),
        "radius": (_parse_float, 1.0),
        "points": (_parse_points, ()),
    },
    "flow": {
        "vx": (_parse_float, 1.0),
        "vy": (_parse_float, 0.0),
        "re": (_parse_float, 20.0),
    },
    "grid": {
        "nr": (_parse_int, 128),
        "ntheta": (_parse_int, 256),
        "r_max": (_parse_float, 40.0),
        "wall_cell": (_parse_float, 0.0),   # 0 means unset
        "stretch": (_parse_float, -1.0),    # negative means unset
    },
    "solver": {
        "cfl": (_parse_float, 0.4),
        "t_end": (_parse_float, 60.0),
        "snapshot_dt": (_parse_float, 0.5),
        "perturb": (_parse_float, 0.0),
        "dt_scale": (_parse_float, 1.0),
        "pre_roll": (_parse_float, 0.0),    # 0 = impulsive start, no warm stage
        "save_every": (_parse_int, 0),      # 0 = keep only the final triple
        "seed": (str, "none"),              # no randomized placement by default
        "truncation_check": (_parse_bool, False),
    },
    "filter": {
        "ell": (_parse_ells, (("dx", 8.0), ("dx", 4.0), ("dx", 2.0))),
        "h_rule": (str, "2ell"),
        "kernel": (str, "bump"),
        "profile": (str, "smoothstep"),
        "eps": (_parse_float, 0.0),         # 0 = min(a/2, reach/2)
        "r_limit": (_parse_float, 0.0),     # 0 = half the truncation radius
    },
    "test_functions": {
        "modes": (_parse_ints, (0, 1, 2)),
        "t0": (_parse_float, 0.0),
        "t1": (_parse_float, 1.0),
    },
    "output": {
        "dir": (str, "out"),
    },
    "sweep": {
        "re_list": (_parse_floats, ()),
        "kato_c": (_parse_float, 1.0),
        "workers": (_parse_int, 0),         # 0 = environment variable
    },
}

_SERIALIZERS = {
    "points": lambda v: "; ".join(f"{x!r},{y!r}" for x, y in v),
    "ell": lambda v: ",".join(
        (f"{val:g}dx" if kind == "dx" else repr(val)) for kind, val in v),
    "modes": lambda v: ",".join(str(i) for i in v),
    "re_list": lambda v: ",".join(repr(x) for x in v),
}


def _serialize_value(key: str, value) -> str:
    if key in _SERIALIZERS:
        return _SERIALIZERS[key](value)
    if isinstance(value, bool):
        return "on" if value else "off"
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    """Validated run configuration; one value per schema key."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, addr: tuple):
        return self.values[addr]

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    # -- construction ---------------------------------------------------

    @classmethod
    def defaults(cls) -> "RunConfig":
        values = {(s, k): spec[1] for s, keys in _SCHEMA.items()
                  for k, spec in keys.items()}
        return cls(values=values)

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        cfg = cls.defaults()
        section = None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                if section not in _SCHEMA:
                    raise ValidationError(
                        f"line {lineno}: unknown section [{section}]")
                continue
            if "=" not in line:
                raise ValidationError(f"line {lineno}: expected key = value")
            if section is None:
                raise ValidationError(f"line {lineno}: key outside any section")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key not in _SCHEMA[section]:
                raise ValidationError(
                    f"line {lineno}: unknown key {key!r} in section [{section}]")
            parser = _SCHEMA[section][key][0]
            cfg.values[(section, key)] = parser(val)
        cfg.validate()
        return cfg

    def serialize(self) -> str:
        lines = []
        for section, keys in _SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {_serialize_value(key, self.values[(section, key)])}")
            lines.append("")
        return "\n".join(lines)

    # -- validation and derived objects ----------------------------------

    def validate(self) -> None:
        shape = self.get("body", "shape")
        if shape not in ("circle", "spline"):
            raise ValidationError(f"body shape must be circle or spline, got {shape!r}")
        if shape == "circle" and self.get("body", "radius") <= 0:
            raise ValidationError("circle radius must be positive")
        if shape == "spline" and len(self.get("body", "points")) < 8:
            raise ValidationError("spline body needs at least 8 control points")
        if np.hypot(self.get("flow", "vx"), self.get("flow", "vy")) <= 0:
            raise ValidationError("far-field speed must be positive")
        if not 1.0 <= self.get("flow", "re") <= 500.0:
            raise ValidationError("re must lie in [1, 500]")
        if self.get("grid", "wall_cell") > 0 and self.get("grid", "stretch") >= 0:
            raise ValidationError("give either wall_cell or stretch, not both")
        h_rule = self.get("filter", "h_rule")
        if not h_rule.endswith("ell"):
            raise ValidationError(f"h_rule must look like '2ell', got {h_rule!r}")
        factor = _parse_float(h_rule[:-3] or "1")
        if factor <= 1.0:
            raise ValidationError(
                f"h_rule factor {factor} rejected: the wall offset h must "
                "exceed the filter scale ell")
        if self.get("filter", "kernel") != "bump":
            raise ValidationError("kernel must be 'bump'")
        if self.get("filter", "profile") != "smoothstep":
            raise ValidationError("profile must be 'smoothstep'")
        if self.get("solver", "seed") != "none":
            raise ValidationError("no randomized placement exists; seed must be 'none'")
        t0, t1 = self.get("test_functions", "t0"), self.get("test_functions", "t1")
        if t1 <= t0:
            raise ValidationError("test-function support needs t1 > t0")
        re_list = self.get("sweep", "re_list")
        if re_list and list(re_list) != sorted(re_list):
            raise ValidationError("sweep re_list must be ascending")

    def body(self):
        if self.get("body", "shape") == "circle":
            return Circle(self.get("body", "radius"))
        return SplineBody(np.asarray(self.get("body", "points")))

    def velocity(self) -> np.ndarray:
        return np.array([self.get("flow", "vx"), self.get("flow", "vy")])

    def solver_config(self, re: float | None = None):
        from .solver import SolverConfig

        wall_cell = self.get("grid", "wall_cell")
        stretch = self.get("grid", "stretch")
        return SolverConfig(
            re=self.get("flow", "re") if re is None else re,
            nr=self.get("grid", "nr"),
            ntheta=self.get("grid", "ntheta"),
            r_max=self.get("grid", "r_max"),
            wall_cell=wall_cell if wall_cell > 0 else None,
            stretch=stretch if stretch >= 0 else None,
            cfl=self.get("solver", "cfl"),
            t_end=self.get("solver", "t_end"),
            snapshot_dt=self.get("solver", "snapshot_dt"),
            perturb=self.get("solver", "perturb"),
            dt_scale=self.get("solver", "dt_scale"),
        )

    def h_factor(self) -> float:
        return _parse_float(self.get("filter", "h_rule")[:-3] or "1")

    def ell_values(self, wall_spacing: float) -> list:
        out = []
        for kind, val in self.get("filter", "ell"):
            out.append(val * wall_spacing if kind == "dx" else val)
        return out

    def config_hash(self) -> str:
        import hashlib

        return hashlib.sha256(self.serialize().encode()).hexdigest()
