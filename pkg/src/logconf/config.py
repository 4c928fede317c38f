"""Run configuration: sectioned ``key = value`` files with per-geometry presets."""

from __future__ import annotations

import configparser
import io
import math
from dataclasses import dataclass, field

from .kernel import ModelClosure, ModelKind, RelaxationMode


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending entry as ``section.key``."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


GEOMETRIES = ("cylinder", "crossslot", "trislot", "channel")
MODES = ("transient", "steady", "continuation")
OBSERVERS = ("drag", "dissipation", "asym_sq", "vorticity", "trace_max", "flux_balance")

# (type, default) per key; None defaults are filled from the geometry preset
SCHEMA: dict[str, dict[str, tuple[type, object]]] = {
    "geometry": {
        "kind": (str, "cylinder"),
        "h_target": (float, None),
        "theta": (float, math.pi / 3),
        "L_up": (float, 10.0),
        "L_down": (float, 10.0),
        "L_arm": (float, 10.0),
        "L_in": (float, 6.0),
        "L_out": (float, 8.0),
        "length": (float, 10.0),
        "half_width": (float, 2.0),
    },
    "model": {
        "kind": (str, None),
        "alpha_gie": (float, 0.0),
        "eps_ptt": (float, 0.0),
        "a_max_sq": (float, 100.0),
        "relaxation_mode": (str, "consistent"),
        "Re": (float, 0.0),
        "beta": (float, None),
        "supg_coeff": (float, 2.0),
    },
    "ramp": {
        "We_start": (float, 0.01),
        "We_end": (float, None),
        "t_start": (float, 0.0),
        "T_step": (str, "auto"),
        "t_final": (str, "auto"),
    },
    "stepper": {
        "rtol": (float, 1e-3),
        "atol": (float, 1e-4),
        "h_init": (float, 1e-3),
        "h_max": (str, "auto"),
        "max_order": (int, 2),
    },
    "newton": {
        "damping": (str, "automatic"),
        "factor": (float, 1.0),
        "max_iter": (int, 25),
    },
    "force": {
        "kind": (str, "none"),
        "amplitude": (float, 1.0),
        "t_end": (float, 20.0),
    },
    "run": {
        "mode": (str, "transient"),
        "We_values": (str, ""),
        "seed": (int, 0),
        "perturbation": (float, 0.0),
        "backend": (str, "auto"),
    },
    "output": {
        "directory": (str, "out"),
        "observers": (str, None),
        "vtk": (bool, True),
    },
}

PRESETS = {
    "cylinder": {"geometry.h_target": 0.14, "model.kind": "oldroyd-b", "model.beta": 0.59,
                 "ramp.We_end": 0.6, "output.observers": "drag,dissipation,trace_max,flux_balance"},
    "crossslot": {"geometry.h_target": 0.1, "model.kind": "fene-cr", "model.beta": 0.2,
                  "ramp.We_end": 0.6, "output.observers": "asym_sq,vorticity,dissipation,flux_balance"},
    "trislot": {"geometry.h_target": 0.1, "model.kind": "fene-cr", "model.beta": 0.1,
                "ramp.We_end": 0.66, "output.observers": "asym_sq,vorticity,dissipation,flux_balance"},
    "channel": {"geometry.h_target": 0.1, "model.kind": "oldroyd-b", "model.beta": 0.59,
                "ramp.We_end": 0.5, "output.observers": "dissipation,trace_max,flux_balance"},
}


def auto_T_step(h: float) -> float:
    """Ramp duration scaled with the mesh size (8000 at h = 0.07)."""
    return 8000.0 * (0.07 / h)


def _convert(key: str, typ: type, raw: str):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is float:
            return float(eval_number(raw))
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def eval_number(raw: str) -> float:
    """Float literal, optionally of the form ``pi/<x>`` or ``<x>*pi``."""
    s = raw.strip().replace(" ", "")
    low = s.lower()
    if "pi" in low:
        if low == "pi":
            return math.pi
        if low.startswith("pi/"):
            return math.pi / float(low[3:])
        if low.endswith("*pi"):
            return float(low[:-3]) * math.pi
        raise ValueError(raw)
    return float(s)


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)  # "section.key" -> typed value

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    @property
    def geometry(self) -> str:
        return self.values["geometry.kind"]

    @property
    def h(self) -> float:
        return self.values["geometry.h_target"]

    def model(self) -> ModelClosure:
        return ModelClosure(self["model.kind"], alpha_gie=self["model.alpha_gie"],
                            eps_ptt=self["model.eps_ptt"], a_max_sq=self["model.a_max_sq"],
                            relaxation_mode=self["model.relaxation_mode"])

    def T_step(self) -> float:
        v = self["ramp.T_step"]
        return auto_T_step(self.h) if v == "auto" else float(eval_number(v))

    def t_final(self) -> float:
        v = self["ramp.t_final"]
        if v == "auto":
            return self["ramp.t_start"] + 1.25 * self.T_step()
        return float(eval_number(v))

    def We_values(self) -> list[float]:
        raw = self["run.We_values"].strip()
        if not raw:
            return [self["ramp.We_end"]]
        return [float(x) for x in raw.split(",")]

    def observers(self) -> list[str]:
        return [x.strip() for x in self["output.observers"].split(",") if x.strip()]

    def to_text(self) -> str:
        """Manifest form: every key, including defaulted ones."""
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        for section, keys in SCHEMA.items():
            cp[section] = {}
            for key in keys:
                v = self.values[f"{section}.{key}"]
                cp[section][key] = repr(v) if isinstance(v, float) else str(v)
        out = io.StringIO()
        cp.write(out)
        return out.getvalue()

    def with_value(self, key: str, raw: str) -> "RunConfig":
        section, k = _split_key(key)
        vals = dict(self.values)
        vals[key] = _convert(key, SCHEMA[section][k][0], raw)
        cfg = RunConfig(vals)
        validate(cfg)
        return cfg


def _split_key(key: str) -> tuple[str, str]:
    if "." not in key:
        raise ConfigError(key, "expected section.key")
    section, k = key.split(".", 1)
    if section not in SCHEMA or k not in SCHEMA[section]:
        raise ConfigError(key, "unknown key")
    return section, k


def parse_config(text: str, base_dir: str | None = None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("<file>", f"syntax error: {exc}") from None
    raw: dict[str, str] = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(section, "unknown section")
        for k, v in cp[section].items():
            if k not in SCHEMA[section]:
                raise ConfigError(f"{section}.{k}", "unknown key")
            raw[f"{section}.{k}"] = v
    kind = raw.get("geometry.kind", "cylinder").strip()
    preset_name = kind
    if kind.startswith("file:"):
        preset_name = "channel"
    elif kind not in GEOMETRIES:
        raise ConfigError("geometry.kind", f"unknown geometry {kind!r}")
    preset = PRESETS[preset_name]
    values = {}
    for section, keys in SCHEMA.items():
        for k, (typ, default) in keys.items():
            key = f"{section}.{k}"
            if key in raw:
                values[key] = _convert(key, typ, raw[key])
            elif default is not None:
                values[key] = default
            else:
                values[key] = preset[key]
    values["geometry.kind"] = kind
    cfg = RunConfig(values)
    validate(cfg)
    return cfg


def preset_config(name: str, **overrides) -> RunConfig:
    lines = ["[geometry]", f"kind = {name}"]
    cfg = parse_config("\n".join(lines) + "\n")
    for key, v in overrides.items():
        cfg = cfg.with_value(key.replace("__", "."), str(v))
    return cfg


def validate(cfg: RunConfig) -> None:
    v = cfg.values

    def need(key, ok, msg):
        if not ok:
            raise ConfigError(key, msg)

    need("geometry.h_target", v["geometry.h_target"] > 0, "must be positive")
    need("model.beta", 0.0 <= v["model.beta"] <= 1.0, "beta out of range [0,1]")
    need("model.Re", v["model.Re"] >= 0, "must be >= 0")
    try:
        ModelKind(v["model.kind"])
    except ValueError:
        raise ConfigError("model.kind", f"unknown model {v['model.kind']!r}") from None
    try:
        RelaxationMode(v["model.relaxation_mode"])
    except ValueError:
        raise ConfigError("model.relaxation_mode", "unknown relaxation mode") from None
    try:
        cfg.model()
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from None
    need("ramp.We_start", v["ramp.We_start"] > 0, "must be positive")
    need("ramp.We_end", v["ramp.We_end"] > 0, "must be positive")
    for key in ("ramp.T_step", "ramp.t_final", "stepper.h_max"):
        if v[key] != "auto":
            try:
                x = eval_number(v[key])
            except ValueError:
                raise ConfigError(key, "expected a number or 'auto'") from None
            need(key, x > 0, "must be positive")
    need("stepper.max_order", v["stepper.max_order"] in (1, 2), "must be 1 or 2")
    need("newton.damping", v["newton.damping"] in ("constant", "automatic"),
         "must be 'constant' or 'automatic'")
    need("newton.factor", 0 < v["newton.factor"] <= 1, "must lie in (0, 1]")
    need("force.kind", v["force.kind"] in ("none", "rotating", "rotating-ccw", "upward"),
         "must be none, rotating, rotating-ccw or upward")
    need("run.mode", v["run.mode"] in MODES, f"must be one of {', '.join(MODES)}")
    need("run.backend", v["run.backend"] in ("auto", "superlu", "pardiso"), "unknown backend")
    if v["run.We_values"].strip():
        try:
            vals = [float(x) for x in v["run.We_values"].split(",")]
        except ValueError:
            raise ConfigError("run.We_values", "expected comma-separated numbers") from None
        need("run.We_values", all(x > 0 for x in vals), "values must be positive")
    for ob in cfg.observers():
        need("output.observers", ob in OBSERVERS, f"unknown observer {ob!r}")
    need("geometry.theta", math.pi / 6 < v["geometry.theta"] < math.pi / 2, "must lie in (pi/6, pi/2)")
