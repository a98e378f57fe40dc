"""Line-based ``key = value`` run configuration.

Every key falls back to the defaults of the selected preset.  ``preset``
is either one of the named initial conditions or ``expr: <formula>``, a
phase field given as an arithmetic expression in ``x`` and ``y`` (the
``square`` physical defaults then apply).
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .linalg import Method, SolverConfig
from .mesh import Rect
from .scheme import SchemeParams

PRESETS = ("manufactured", "ellipse", "square")


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based or ``None`` when not tied to a line."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.reason = message
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class RunConfig:
    domain: Rect
    nx: int
    ny: int
    params: SchemeParams
    T: float
    initial_condition: str
    body_force: Optional[tuple] = None
    output_dir: str = "output"
    snapshot_times: tuple = ()
    csv_stride: int = 1

    @property
    def preset(self) -> Optional[str]:
        return self.initial_condition if self.initial_condition in PRESETS else None

    @property
    def n_steps(self) -> int:
        """Number of whole steps of size tau that fit in [0, T]."""
        r = self.T / self.params.tau
        n = round(r)
        return int(n) if abs(r - n) <= 1e-9 * max(r, 1.0) else int(math.floor(r))


# ---------------------------------------------------------------------------
# defaults

_PRESET_DEFAULTS = {
    "manufactured": {
        "domain.x0": 0.0, "domain.x1": 1.0, "domain.y0": 0.0, "domain.y1": 1.0,
        "nx": 16, "ny": 16, "M": 0.1, "lambda": 0.04, "nu": 0.01, "epsilon": 0.2,
        "tau": 16.0 ** -3, "T": 0.01, "output.snapshots": (0.0, 0.01),
    },
    "ellipse": {
        "domain.x0": -0.4, "domain.x1": 0.4, "domain.y0": -0.4, "domain.y1": 0.4,
        "nx": 64, "ny": 64, "M": 0.1, "lambda": 0.1, "nu": 1.0, "epsilon": 0.01,
        "tau": 1e-7, "T": 1e-3, "body_force.x": 1.0, "body_force.y": 0.0,
        "output.snapshots": (0.0, 5e-6, 1e-5, 5e-5, 5e-4, 1e-3),
    },
    "square": {
        "domain.x0": 0.0, "domain.x1": 1.0, "domain.y0": 0.0, "domain.y1": 1.0,
        "nx": 64, "ny": 64, "M": 0.002, "lambda": 0.1, "nu": 1.0, "epsilon": 0.01,
        "tau": 1e-5, "T": 1.0, "output.snapshots": (0.0, 0.001, 0.03, 0.08, 0.3, 1.0),
    },
}

_COMMON_DEFAULTS = {
    "C0": 1.0, "lambda_on_fprime": True, "output.dir": "output", "output.csv_stride": 1,
    "solver.method": "cg", "solver.rel_tol": 1e-10, "solver.max_iters": None,
    "body_force.x": None, "body_force.y": None,
}

KEY_DOCS = {
    "preset": "initial condition: manufactured | ellipse | square | expr: <phi(x, y)>",
    "domain.x0": "left edge of the rectangle",
    "domain.x1": "right edge",
    "domain.y0": "bottom edge",
    "domain.y1": "top edge",
    "nx": "cells along x (h = 1/nx on the unit square)",
    "ny": "cells along y",
    "M": "mobility",
    "lambda": "mixing energy coefficient",
    "nu": "viscosity",
    "epsilon": "interface width, 0 < epsilon <= 1",
    "C0": "shift keeping the bulk energy positive",
    "tau": "time step",
    "T": "final time",
    "lambda_on_fprime": "multiply F'(phi) by lambda in the chemical potential",
    "body_force.x": "constant body force, x component (both or neither)",
    "body_force.y": "constant body force, y component",
    "output.dir": "directory for the energy CSV, VTK snapshots and rate CSV",
    "output.snapshots": "comma-separated snapshot times within [0, T]",
    "output.csv_stride": "write every k-th step to the energy CSV",
    "solver.method": "cg | bicgstab for the symmetric solves",
    "solver.rel_tol": "relative residual tolerance of every linear solve",
    "solver.max_iters": "iteration cap per solve; none means 10 n",
}
KEYS = tuple(KEY_DOCS)


def defaults_for(preset: str) -> dict:
    base = "square" if preset.startswith("expr:") else preset
    d = dict(_COMMON_DEFAULTS)
    d.update(_PRESET_DEFAULTS[base])
    d["preset"] = preset
    return d


def help_text() -> str:
    """Key reference with per-preset defaults, used by ``--help``."""
    cols = ("manufactured", "ellipse", "square")
    tables = {p: defaults_for(p) for p in cols}
    lines = ["configuration keys (defaults per preset: manufactured / ellipse / square):", ""]
    for k in KEYS:
        if k == "preset":
            vals = "manufactured"
        else:
            vs = [_format_value(k, tables[p][k]) for p in cols]
            vals = vs[0] if len(set(vs)) == 1 else " / ".join(vs)
        lines.append(f"  {k:<19} {KEY_DOCS[k]}")
        lines.append(f"  {'':<19} default: {vals}")
    lines.append("")
    lines.append("Lines are 'key = value'; '#' starts a comment.  Expression initial")
    lines.append("conditions take the square preset's physical defaults.")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# value parsing

def _parse_float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"expected a number, got {s!r}") from None
    if not math.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _parse_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"expected true or false, got {s!r}")


def _parse_list(s: str) -> tuple:
    if not s.strip():
        return ()
    return tuple(_parse_float(p.strip()) for p in s.split(","))


def _parse_optional_int(s: str):
    return None if s.lower() == "none" else _parse_int(s)


def _parse_preset(s: str) -> str:
    if s in PRESETS:
        return s
    if s.startswith("expr:"):
        compile_expression(s[5:])
        return "expr:" + s[5:].strip()
    raise ValueError(f"unknown preset {s!r}; use {', '.join(PRESETS)} or 'expr: ...'")


def _parse_method(s: str) -> str:
    try:
        return Method(s).value
    except ValueError:
        raise ValueError(f"unknown solver method {s!r}; use cg or bicgstab") from None


_PARSERS: dict = {k: _parse_float for k in KEYS}
_PARSERS.update({
    "preset": _parse_preset, "nx": _parse_int, "ny": _parse_int,
    "lambda_on_fprime": _parse_bool, "output.dir": str, "output.snapshots": _parse_list,
    "output.csv_stride": _parse_int, "solver.method": _parse_method,
    "solver.max_iters": _parse_optional_int,
})


def _format_value(key: str, v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


# ---------------------------------------------------------------------------
# parse / serialize

def parse_config(text: str) -> RunConfig:
    """Parse a configuration document; errors carry the offending line number."""
    given: dict = {}
    where: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in given:
            raise ConfigError(f"duplicate key {key!r} (first set on line {where[key]})", lineno)
        try:
            given[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}", lineno) from None
        where[key] = lineno

    values = defaults_for(given.get("preset", "manufactured"))
    if "T" in given and "output.snapshots" not in given:
        values["output.snapshots"] = tuple(t for t in values["output.snapshots"] if t <= given["T"])
    values.update(given)
    return _build(values, where)


def _build(v: dict, where: dict) -> RunConfig:
    def fail(msg, *keys):
        line = next((where[k] for k in keys if k in where), None)
        raise ConfigError(msg, line)

    try:
        domain = Rect(v["domain.x0"], v["domain.x1"], v["domain.y0"], v["domain.y1"])
    except ValueError:
        fail("domain must satisfy x0 < x1 and y0 < y1", "domain.x0", "domain.x1",
             "domain.y0", "domain.y1")
    for k in ("nx", "ny", "output.csv_stride"):
        if v[k] < 1:
            fail(f"{k} must be a positive integer, got {v[k]}", k)
    for k in ("M", "lambda", "nu", "epsilon", "C0", "tau", "T", "solver.rel_tol"):
        if not v[k] > 0:
            fail(f"{k} must be positive, got {v[k]}", k)
    if v["epsilon"] > 1:
        fail(f"epsilon must not exceed 1, got {v['epsilon']}", "epsilon")
    if v["solver.max_iters"] is not None and v["solver.max_iters"] < 1:
        fail("solver.max_iters must be positive or none", "solver.max_iters")
    bx, by = v["body_force.x"], v["body_force.y"]
    if (bx is None) != (by is None):
        fail("body_force.x and body_force.y must be given together", "body_force.x", "body_force.y")
    snaps = tuple(sorted(v["output.snapshots"]))
    bad = [t for t in snaps if not 0.0 <= t <= v["T"]]
    if bad:
        fail(f"snapshot times {bad} lie outside [0, T = {v['T']}]", "output.snapshots", "T")

    params = SchemeParams(
        M=v["M"], lam=v["lambda"], nu=v["nu"], epsilon=v["epsilon"], tau=v["tau"], C0=v["C0"],
        lambda_on_fprime=v["lambda_on_fprime"],
        solver=SolverConfig(v["solver.rel_tol"], v["solver.max_iters"], Method(v["solver.method"])),
    )
    return RunConfig(
        domain=domain, nx=v["nx"], ny=v["ny"], params=params, T=v["T"],
        initial_condition=v["preset"],
        body_force=None if bx is None else (float(bx), float(by)),
        output_dir=v["output.dir"], snapshot_times=snaps, csv_stride=v["output.csv_stride"],
    )


def config_values(cfg: RunConfig) -> dict:
    p = cfg.params
    return {
        "preset": cfg.initial_condition,
        "domain.x0": cfg.domain.x0, "domain.x1": cfg.domain.x1,
        "domain.y0": cfg.domain.y0, "domain.y1": cfg.domain.y1,
        "nx": cfg.nx, "ny": cfg.ny, "M": p.M, "lambda": p.lam, "nu": p.nu,
        "epsilon": p.epsilon, "C0": p.C0, "tau": p.tau, "T": cfg.T,
        "lambda_on_fprime": p.lambda_on_fprime,
        "body_force.x": None if cfg.body_force is None else cfg.body_force[0],
        "body_force.y": None if cfg.body_force is None else cfg.body_force[1],
        "output.dir": cfg.output_dir, "output.snapshots": cfg.snapshot_times,
        "output.csv_stride": cfg.csv_stride, "solver.method": p.solver.method.value,
        "solver.rel_tol": p.solver.rel_tol, "solver.max_iters": p.solver.max_iters,
    }


def serialize_config(cfg: RunConfig) -> str:
    """Every key written explicitly, so that parsing restores ``cfg`` exactly."""
    vals = config_values(cfg)
    lines = []
    for k in KEYS:
        if vals[k] is None and k.startswith("body_force"):
            continue
        lines.append(f"{k} = {_format_value(k, vals[k])}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# expression initial conditions

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNARY = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_CMP = {ast.Lt: np.less, ast.LtE: np.less_equal, ast.Gt: np.greater,
        ast.GtE: np.greater_equal, ast.Eq: np.equal, ast.NotEq: np.not_equal}
_FUNCS = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "sinh", "cosh", "arctan",
    "arctan2", "abs", "minimum", "maximum", "where", "sign", "floor")}
_CONSTS = {"pi": math.pi, "e": math.e}


def compile_expression(src: str) -> Callable:
    """Vectorized ``f(x, y)`` from an arithmetic expression.

    Only numbers, ``x``, ``y``, ``pi``, ``e``, arithmetic, comparisons,
    ``and``/``or`` and a fixed set of numpy functions are accepted.
    """
    try:
        tree = ast.parse(src.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {src.strip()!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ValueError(f"unsupported constant {node.value!r}")
            return
        if isinstance(node, ast.Name):
            if node.id not in ("x", "y") and node.id not in _CONSTS:
                raise ValueError(f"unknown name {node.id!r}")
            return
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            check(node.left)
            return check(node.right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNARY:
            return check(node.operand)
        if isinstance(node, ast.Compare) and all(type(o) in _CMP for o in node.ops):
            check(node.left)
            for c in node.comparators:
                check(c)
            return
        if isinstance(node, ast.BoolOp):
            for v in node.values:
                check(v)
            return
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            for a in node.args:
                check(a)
            return
        raise ValueError(f"unsupported syntax {type(node).__name__} in expression")

    check(tree)

    def ev(node, env):
        if isinstance(node, ast.Expression):
            return ev(node.body, env)
        if isinstance(node, ast.Constant):
            return node.value
        if isinstance(node, ast.Name):
            return env[node.id] if node.id in env else _CONSTS[node.id]
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](ev(node.left, env), ev(node.right, env))
        if isinstance(node, ast.UnaryOp):
            return _UNARY[type(node.op)](ev(node.operand, env))
        if isinstance(node, ast.Compare):
            left = ev(node.left, env)
            out = True
            for op, c in zip(node.ops, node.comparators):
                right = ev(c, env)
                out = np.logical_and(out, _CMP[type(op)](left, right))
                left = right
            return out
        if isinstance(node, ast.BoolOp):
            comb = np.logical_and if isinstance(node.op, ast.And) else np.logical_or
            out = ev(node.values[0], env)
            for v in node.values[1:]:
                out = comb(out, ev(v, env))
            return out
        return _FUNCS[node.func.id](*(ev(a, env) for a in node.args))

    def f(x, y):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(ev(tree, {"x": x, "y": y}), dtype=float), x.shape)

    with np.errstate(all="ignore"):
        f(np.zeros(1), np.zeros(1))
    return f
