"""Scenario configuration: flat ``section.key = value`` text files.

Values are numbers (arithmetic with ``pi``, ``sqrt`` and ``e`` allowed),
comma-separated lists of numbers, or bare words.  ``#`` starts a comment.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError

SCHEMES = (
    "none", "simple", "eo_tla_compound", "eo_tla_adiabatic", "eo_mode_adiabatic", "eo_mode_trajectory",
    "ao_tla_compound", "ao_mode_compound", "ao_adiabatic", "kerr", "jc_compound", "jc_adiabatic",
)
COMPOUND = {"eo_tla_compound", "eo_mode_trajectory", "ao_tla_compound", "ao_mode_compound", "jc_compound"}
EO_MODE = {"eo_mode_adiabatic", "eo_mode_trajectory"}
NEEDS_GAMMA = COMPOUND | EO_MODE | {"jc_adiabatic"}
KINDS = ("steady", "sweep", "traj", "wigner", "compare")

# keys that never influence output values
RESULT_NEUTRAL = {"run.workers"}

# key -> type tag; "num", "int", "word", "nums", "words"
KEYS = {
    "model.scheme": "word",
    "model.form": "word",
    "sys.lam": "num",
    "sys.chi": "num",
    "sys.n_max": "int",
    "anc.gamma": "num",
    "anc.g": "num",
    "anc.eps": "num",
    "anc.diffusion_half": "num",
    "anc.ancilla_dim": "int",
    "anc.delta": "num",
    "run.kind": "word",
    "run.gammas": "nums",
    "run.ancilla_dims": "nums",
    "run.schemes": "words",
    "run.n_traj": "int",
    "run.seed": "int",
    "run.T": "num",
    "run.samples": "nums",
    "run.tol": "num",
    "run.workers": "int",
    "run.bootstrap": "int",
    "wigner.limit": "num",
    "wigner.points": "int",
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_NAMES = {"pi": math.pi, "e": math.e}
_FUNCS = {"sqrt": math.sqrt}


def _eval(node):
    if isinstance(node, ast.Expression):
        return _eval(node.body)
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
            and len(node.args) == 1 and not node.keywords):
        return _FUNCS[node.func.id](_eval(node.args[0]))
    raise ValueError("unsupported expression")


def parse_number(text: str) -> float:
    """Safe arithmetic: ``pi/2``, ``2*sqrt(2)``, ``1e-3``."""
    try:
        return float(_eval(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ValueError, TypeError, ZeroDivisionError) as exc:
        raise ValueError(f"not a number: {text!r}") from exc


def _convert(key: str, raw: str, line_no: int):
    tag = KEYS[key]
    try:
        if tag == "num":
            return parse_number(raw)
        if tag == "int":
            v = parse_number(raw)
            if v != int(v):
                raise ValueError(f"not an integer: {raw!r}")
            return int(v)
        if tag == "nums":
            return [parse_number(x) for x in raw.split(",") if x.strip()]
        if tag == "words":
            return [x.strip() for x in raw.split(",") if x.strip()]
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"line {line_no}: {key}: {exc}") from None


def parse_text(text: str) -> dict:
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"line {line_no}: expected 'section.key = value'")
        key, raw = (x.strip() for x in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"line {line_no}: {key}: empty value")
        values[key] = _convert(key, raw, line_no)
    return values


@dataclass
class ScenarioConfig:
    values: dict = field(default_factory=dict)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def __getitem__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigError(f"missing required key {key!r}") from None

    @property
    def scheme(self) -> str:
        return self["model.scheme"]

    @property
    def kind(self) -> str:
        return self["run.kind"]

    def lines(self) -> list[str]:
        """Resolved configuration, one ``key = value`` per line, sorted.

        ``run.workers`` is left out: it cannot change any result, and keeping it
        out makes files from different worker counts byte-identical.
        """
        out = []
        for key in sorted(self.values):
            if key in RESULT_NEUTRAL:
                continue
            v = self.values[key]
            if isinstance(v, list):
                v = ", ".join(fmt(x) if isinstance(x, float) else str(x) for x in v)
            elif isinstance(v, float):
                v = fmt(v)
            out.append(f"{key} = {v}")
        return out


def fmt(x: float) -> str:
    """Shortest round-tripping float text."""
    return repr(float(x))


DEFAULTS = {
    "run.seed": 12345,
    "run.n_traj": 2000,
    "run.workers": 1,
    "run.bootstrap": 200,
    "wigner.limit": 10.0,
    "wigner.points": 201,
    "anc.ancilla_dim": 8,
    "anc.delta": 0.0,
}


def validate(values: dict, kind: str | None = None) -> ScenarioConfig:
    """Fill defaults and check scheme/parameter compatibility."""
    v = dict(values)
    if kind is not None:
        v["run.kind"] = kind
    for key in ("model.scheme", "run.kind", "sys.lam", "sys.chi", "sys.n_max"):
        if key not in v and not (key == "model.scheme" and v.get("run.kind") == "compare"):
            raise ConfigError(f"missing required key {key!r}")
    if v["run.kind"] not in KINDS:
        raise ConfigError(f"run.kind: unknown experiment {v['run.kind']!r}")
    schemes = [v["model.scheme"]] if "model.scheme" in v else []
    if v["run.kind"] == "compare":
        if "run.schemes" not in v or len(v["run.schemes"]) < 2:
            raise ConfigError("run.schemes: compare needs at least two schemes")
        schemes = list(v["run.schemes"])
    for s in schemes:
        if s not in SCHEMES:
            raise ConfigError(f"model.scheme: unknown scheme {s!r}")
    if v["sys.n_max"] < 2:
        raise ConfigError("sys.n_max: must be at least 2")
    if v["sys.lam"] < 0:
        raise ConfigError("sys.lam: must be non-negative")
    eo_mode = any(s in EO_MODE for s in schemes)
    has_eps = "anc.eps" in v or "anc.diffusion_half" in v
    if eo_mode and not has_eps:
        raise ConfigError("anc.eps: required (or anc.diffusion_half) for electro-optic mode schemes")
    if has_eps and not eo_mode:
        raise ConfigError("anc.eps: only meaningful for electro-optic mode schemes")
    if "anc.eps" in v and "anc.diffusion_half" in v:
        raise ConfigError("anc.eps: give either anc.eps or anc.diffusion_half, not both")
    needs_gamma = any(s in NEEDS_GAMMA for s in schemes)
    if needs_gamma and v["run.kind"] != "sweep" and "anc.gamma" not in v:
        raise ConfigError("anc.gamma: required for this scheme")
    if "anc.gamma" in v and v["anc.gamma"] <= 0:
        raise ConfigError("anc.gamma: must be positive")
    if v["run.kind"] == "sweep":
        if not schemes or schemes[0] not in COMPOUND:
            raise ConfigError("model.scheme: sweeps need a compound (or trajectory) scheme")
        if not v.get("run.gammas"):
            raise ConfigError("run.gammas: required for sweeps")
        if any(g <= 0 for g in v["run.gammas"]):
            raise ConfigError("run.gammas: values must be positive")
        dims = v.get("run.ancilla_dims")
        if dims is not None and len(dims) != len(v["run.gammas"]):
            raise ConfigError("run.ancilla_dims: needs one entry per Gamma")
    if any(s.startswith("jc_") for s in schemes) and v.get("anc.delta", 0.0) == 0.0:
        raise ConfigError("anc.delta: JC schemes need a non-zero detuning")
    if v["run.kind"] == "traj" and schemes[0] not in ("none", "simple", "eo_mode_trajectory", "ao_tla_compound",
                                                       "ao_mode_compound"):
        raise ConfigError(f"model.scheme: {schemes[0]!r} has no trajectory unravelling here")
    if v["run.kind"] in ("steady", "wigner") and schemes[0] == "eo_mode_trajectory":
        raise ConfigError("model.scheme: eo_mode_trajectory is time dependent; use traj or sweep")
    for key, default in DEFAULTS.items():
        v.setdefault(key, default)
    if v["run.n_traj"] < 1:
        raise ConfigError("run.n_traj: must be at least 1")
    return ScenarioConfig(v)


def load(path: str | Path, kind: str | None = None, seed: int | None = None,
         workers: int | None = None) -> ScenarioConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    values = parse_text(text)
    if seed is not None:
        values["run.seed"] = int(seed)
    if workers is not None:
        values["run.workers"] = int(workers)
    return validate(values, kind)
