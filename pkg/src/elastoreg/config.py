"""Run configuration: flat ``section.key = value`` text files.

Blank lines and ``#`` comments are ignored. Every key has a type and a
default; unknown keys and malformed values raise ConfigError naming the
key path. ``serialize`` writes the normalized form, which parses back
to an equal config.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constitutive import MaterialModel
from .elastodyn import SolverConfig
from .fem import BoundaryField, NodalField
from .mesh import SIDES, Mesh2D, build_rectangle_mesh, load_mesh, side_edge_mask

EXPERIMENTS = ("solve", "kappa-sweep", "lifespan-sweep", "validate", "convergence")
TIME_PROFILES = ("none", "constant", "ramp", "exp", "file")


class ConfigError(ValueError):
    def __init__(self, key: str, msg: str):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _strs(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _fmt(value):
    if isinstance(value, list):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


# section -> key -> (parser, default)
SCHEMA = {
    "mesh": {
        "nx": (int, 8), "ny": (int, 8), "lx": (float, 1.0), "ly": (float, 1.0),
        "dirichlet": (_strs, ["left"]), "file": (str, ""),
    },
    "material": {
        "kind": (str, "svk"), "mu": (float, 1.0), "lam": (float, 1.0), "w0": (float, 0.0),
        "beta": (float, 1.0), "gamma": (float, 1.0), "n": (int, 2), "ogden_gamma": (float, 2.0),
    },
    "solver": {
        "rho": (float, 1.0), "kappa": (float, 1e-2), "p": (float, 0.0), "delta": (float, 1e-8),
        "dt": (float, 1e-2), "t_end": (float, 1.0), "mode": (str, "picard"),
        "picard_tol": (float, 1e-9), "picard_max": (int, 100), "newton_tol": (float, 1e-10),
        "newton_max": (int, 50), "eta_fraction": (float, 0.5), "max_halvings": (int, 6),
    },
    "data": {
        "eps": (float, 1.0),
        "u0": (str, "zero"), "u0_matrix": (_floats, [0.0, 0.0, 0.0, 0.0]), "u0_file": (str, ""),
        "u1": (str, "zero"), "u1_value": (_floats, [0.0, 0.0]),
        "f": (str, "none"), "f_value": (_floats, [0.0, 0.0]), "f_rate": (float, 1.0), "f_file": (str, ""),
        "g": (str, "none"), "g_value": (_floats, [0.0, 0.0]), "g_rate": (float, 1.0),
        "g_sides": (_strs, ["right"]),
    },
    "experiment": {
        "kind": (str, "solve"), "seed": (int, 42), "kappas": (_floats, [1e-1, 1e-2, 1e-3, 1e-4]),
        "eps_schedule": (_floats, [0.4, 0.2, 0.1, 0.05, 0.025]), "samples": (int, 200),
        "levels": (_floats, [8.0, 16.0, 32.0]), "workers": (int, 1),
    },
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {s: {k: d for k, (_, d) in keys.items()}
                                                  for s, keys in SCHEMA.items()})
    base_dir: Path = field(default=Path("."), compare=False)

    def __getitem__(self, path: str):
        sec, key = path.split(".", 1)
        return self.values[sec][key]

    # -- text form ----------------------------------------------------------
    @classmethod
    def parse(cls, text: str, base_dir: Path | str = ".") -> "RunConfig":
        cfg = cls(base_dir=Path(base_dir))
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}", "expected 'section.key = value'")
            path, value = (s.strip() for s in line.split("=", 1))
            if "." not in path:
                raise ConfigError(path, "key must be of the form section.key")
            sec, key = path.split(".", 1)
            if sec not in SCHEMA or key not in SCHEMA[sec]:
                raise ConfigError(path, "unknown key")
            parser = SCHEMA[sec][key][0]
            try:
                cfg.values[sec][key] = parser(value)
            except ValueError as exc:
                raise ConfigError(path, f"cannot parse {value!r} ({exc})") from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError("file", str(exc)) from None
        return cls.parse(text, path.parent)

    def serialize(self) -> str:
        lines = []
        for sec, keys in SCHEMA.items():
            for key in keys:
                lines.append(f"{sec}.{key} = {_fmt(self.values[sec][key])}")
        return "\n".join(lines) + "\n"

    def validate(self):
        v = self.values
        for side in v["mesh"]["dirichlet"] + v["data"]["g_sides"]:
            if side not in SIDES:
                raise ConfigError("mesh.dirichlet" if side in v["mesh"]["dirichlet"] else "data.g_sides",
                                  f"unknown side {side!r}")
        if not v["mesh"]["file"] and (v["mesh"]["nx"] < 1 or v["mesh"]["ny"] < 1):
            raise ConfigError("mesh.nx", "cell counts must be >= 1")
        if not v["data"]["eps"] > 0:
            raise ConfigError("data.eps", "must be positive")
        if v["data"]["u0"] not in ("zero", "affine", "file"):
            raise ConfigError("data.u0", "expected zero | affine | file")
        if len(v["data"]["u0_matrix"]) != 4:
            raise ConfigError("data.u0_matrix", "expected 4 entries a11, a12, a21, a22")
        if v["data"]["u1"] not in ("zero", "constant", "sine"):
            raise ConfigError("data.u1", "expected zero | constant | sine")
        for name in ("u1_value", "f_value", "g_value"):
            if len(v["data"][name]) != 2:
                raise ConfigError(f"data.{name}", "expected 2 components")
        for name in ("f", "g"):
            if v["data"][name] not in TIME_PROFILES:
                raise ConfigError(f"data.{name}", "expected " + " | ".join(TIME_PROFILES))
        if v["data"]["g"] == "file":
            raise ConfigError("data.g", "file input is only supported for f")
        if v["experiment"]["kind"] not in EXPERIMENTS:
            raise ConfigError("experiment.kind", "expected " + " | ".join(EXPERIMENTS))
        for name in ("kappas", "eps_schedule", "levels"):
            if not v["experiment"][name]:
                raise ConfigError(f"experiment.{name}", "schedule must be nonempty")
        if any(e <= 0 for e in v["experiment"]["eps_schedule"]):
            raise ConfigError("experiment.eps_schedule", "entries must be positive")
        try:
            self.material()
        except ValueError as exc:
            raise ConfigError("material", str(exc)) from None
        try:
            self.solver()
        except ValueError as exc:
            raise ConfigError("solver", str(exc)) from None

    # -- builders -------------------------------------------------------------
    def _path(self, name):
        p = Path(name)
        return p if p.is_absolute() else self.base_dir / p

    def mesh(self) -> Mesh2D:
        m = self.values["mesh"]
        if m["file"]:
            try:
                return load_mesh(self._path(m["file"]))
            except (OSError, ValueError) as exc:
                raise ConfigError("mesh.file", str(exc)) from None
        return build_rectangle_mesh(m["nx"], m["ny"], m["lx"], m["ly"], tuple(m["dirichlet"]))

    def material(self) -> MaterialModel:
        m = self.values["material"]
        return MaterialModel(m["kind"], mu=m["mu"], lam=m["lam"], w0=m["w0"], beta=m["beta"],
                             gamma=m["gamma"], n=m["n"], ogden_gamma=m["ogden_gamma"])

    def solver(self) -> SolverConfig:
        s = dict(self.values["solver"])
        p = s.pop("p")
        return SolverConfig(self.material(), p=p if p > 0 else None, eps=self.values["data"]["eps"], **s)

    def data(self, mesh: Mesh2D):
        """(u0, u1, f, g) before scaling by data.eps; f and g are callables of t or None."""
        d = self.values["data"]
        x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
        if d["u0"] == "zero":
            u0 = NodalField.zeros(mesh)
        elif d["u0"] == "affine":
            A = np.array(d["u0_matrix"]).reshape(2, 2)
            vals = mesh.nodes @ A.T
            if np.max(np.abs(vals[mesh.dirichlet_mask]), initial=0.0) > 1e-12:
                raise ConfigError("data.u0_matrix", "affine displacement does not vanish on the Dirichlet boundary")
            vals[mesh.dirichlet_mask] = 0.0
            u0 = NodalField(mesh, vals)
        else:
            u0 = self._nodal_file("data.u0_file", d["u0_file"], mesh, constrained=True)

        a = np.array(d["u1_value"])
        if d["u1"] == "zero":
            u1 = NodalField.zeros(mesh)
        else:
            if d["u1"] == "constant":
                prof = np.ones(mesh.n_nodes)
            else:
                lo, span = mesh.nodes.min(axis=0), np.ptp(mesh.nodes, axis=0)
                prof = np.sin(np.pi * (x - lo[0]) / span[0]) * np.sin(np.pi * (y - lo[1]) / span[1])
            vals = prof[:, None] * a
            vals[mesh.dirichlet_mask] = 0.0
            u1 = NodalField(mesh, vals)

        f = self._time_data("f", mesh, lambda v: NodalField(mesh, np.tile(v, (mesh.n_nodes, 1)), constrained=False))
        neu = np.zeros(len(mesh.boundary_edges), dtype=bool)
        for side in d["g_sides"]:
            neu |= side_edge_mask(mesh, side)
        g = self._time_data("g", mesh, lambda v: BoundaryField.on_edges(mesh, neu, v))
        return u0, u1, f, g

    def _nodal_file(self, key, name, mesh, constrained):
        try:
            vals = np.loadtxt(self._path(name), ndmin=2)
        except (OSError, ValueError) as exc:
            raise ConfigError(key, str(exc)) from None
        if vals.shape != (mesh.n_nodes, 2):
            raise ConfigError(key, f"expected {mesh.n_nodes} rows of 2 values, got {vals.shape}")
        try:
            return NodalField(mesh, vals, constrained=constrained)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None

    def _time_data(self, name, mesh, make):
        d = self.values["data"]
        mode, rate = d[name], d[f"{name}_rate"]
        if mode == "none":
            return None
        if mode == "file":
            base = self._nodal_file("data.f_file", d["f_file"], mesh, constrained=False)
            return lambda t: base
        base = make(np.array(d[f"{name}_value"], dtype=float))
        if mode == "constant":
            return lambda t: base
        if mode == "ramp":
            return lambda t: base * (rate * t)
        return lambda t: base * math.exp(rate * t)
