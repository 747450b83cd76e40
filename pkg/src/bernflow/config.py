"""INI run configuration: schema, shape expressions, validation.

Every key lives in ``SCHEMA`` with its type, default and help text; the
reference document in ``docs/`` is generated from it.  Validation
collects every problem before raising, and unknown keys come back with
the closest known spelling.
"""

from __future__ import annotations

import ast
import configparser
import difflib
import os
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from bernflow.errors import BernflowError, ConfigurationError
from bernflow.flow import FlowConfig
from bernflow.grid import Annulus, Ball, Difference, GridSpec, RegionMask, Union, make_grid, rasterize_shape
from bernflow.grid import strictly_contains
from bernflow.jh import RESOLUTION_GUARD, MinimizerParams
from bernflow.potential import SolverParams

COMMANDS = ("capacity", "minimize", "flow", "radial", "compare", "refine")
ENV_PREFIX = "BERNFLOW_"


# --------------------------------------------------------------------------- value parsers


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.replace(";", ",").split(",") if x.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "none") else float(text)


def _optional_int(text: str) -> int | None:
    return None if text.strip().lower() in ("", "none") else int(text)


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        val = text.strip()
        if val not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {val!r}")
        return val

    return parse


_SHAPES = {"ball", "annulus", "union", "difference"}


def _literal(node: ast.AST):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return float(node.value)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _literal(node.operand)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, (ast.Tuple, ast.List)):
        return tuple(_literal(e) for e in node.elts)
    if isinstance(node, ast.Call):
        return _shape(node)
    raise ValueError(f"unsupported expression {ast.dump(node)[:40]}")


def _shape(node: ast.AST):
    if not (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _SHAPES):
        raise ValueError("expected ball(...), annulus(...), union(...) or difference(...)")
    if node.keywords:
        raise ValueError("shape arguments are positional")
    args = [_literal(a) for a in node.args]
    name = node.func.id
    if name == "ball":
        if len(args) != 2 or not isinstance(args[0], tuple):
            raise ValueError("ball(center, radius)")
        return Ball(args[0], args[1])
    if name == "annulus":
        if len(args) != 3 or not isinstance(args[0], tuple):
            raise ValueError("annulus(center, inner, outer)")
        return Annulus(args[0], args[1], args[2])
    if name == "union":
        if not args or isinstance(args[0], (tuple, float)):
            raise ValueError("union(shape, shape, ...)")
        return Union(tuple(args))
    if len(args) != 2:
        raise ValueError("difference(base, hole)")
    return Difference(args[0], args[1])


def parse_shape(text: str):
    """Shape from an expression such as ``union(ball((0, 0), 1), ball((2, 0), 0.5))``."""
    try:
        tree = ast.parse(text.strip(), mode="eval")
    except SyntaxError as exc:
        raise ValueError(f"cannot parse shape {text!r}: {exc.msg}") from None
    return _shape(tree.body)


def _optional_shape(text: str):
    return None if text.strip().lower() in ("", "none") else parse_shape(text)


# --------------------------------------------------------------------------- schema


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    help: str
    required_for: tuple[str, ...] = ()


_MP = MinimizerParams()
_SP = SolverParams()

SCHEMA: dict[str, dict[str, Key]] = {
    "run": {
        "command": Key(_choice(*COMMANDS), None, "subcommand to run", COMMANDS),
        "output": Key(str, "out", "output directory"),
        "verbose": Key(_bool, False, "write per-iteration minimizer logs and debug output"),
        "check": Key(_bool, False, "print PASS/FAIL lines against the acceptance tolerances"),
        "serial": Key(_bool, False, "run worker flows in-process, one after another"),
    },
    "grid": {
        "lower": Key(_floats, None, "lower domain corner", ("capacity", "minimize", "flow", "compare", "refine")),
        "upper": Key(_floats, None, "upper domain corner", ("capacity", "minimize", "flow", "compare", "refine")),
        "cells": Key(_ints, None, "cells per axis", ("capacity", "minimize", "flow", "compare", "refine")),
    },
    "shapes": {
        "source": Key(_optional_shape, None, "source set S", ("capacity", "minimize", "flow", "compare", "refine")),
        "omega": Key(_optional_shape, None, "initial set Ω₀", ("capacity", "minimize", "flow", "compare", "refine")),
    },
    "flow": {
        "h": Key(float, None, "time step, at least 2Δx", ("minimize", "flow", "compare")),
        "steps": Key(int, None, "number of steps", ("flow", "compare")),
        "snapshot_every": Key(int, 0, "write mask snapshots every k steps (0 = first and last only)"),
        "energy_tolerance": Key(float, 1e-3, "allowed per-step energy increase, fraction of E₀"),
        "quadrature_constant": Key(float, 4.0, "C in the certificate allowance C·Δx·faces·Δx^(N-1)"),
    },
    "minimizer": {
        "max_outer": Key(int, _MP.max_outer, "potential solves per minimization"),
        "band_cells": Key(float, _MP.band_cells, "half-width of the update band, in cells"),
        "smoothing_cells": Key(float, _MP.smoothing_cells, "boundary kernel length for |∇u|, in cells"),
        "min_relaxation": Key(float, _MP.min_relaxation, "smallest accepted relaxation factor"),
        "fb_tolerance": Key(_optional_float, _MP.fb_tolerance, "optional bound on the free-boundary residual"),
    },
    "solver": {
        "tolerance": Key(float, _SP.tolerance, "max-norm residual of the discrete Laplace equation"),
        "method": Key(_choice("auto", "direct", "cg"), _SP.method, "sparse direct solve, conjugate gradients, or auto (direct in 2D)"),
        "max_iterations": Key(_optional_int, _SP.max_iterations, "CG iteration cap (none = 100 × cells per axis)"),
        "margin": Key(int, _SP.margin, "cells kept free between Ω and the domain edge"),
    },
    "radial": {
        "ndim": Key(int, 2, "dimension N"),
        "a": Key(float, None, "source radius", ("radial",)),
        "b0": Key(float, None, "initial radius", ("radial",)),
        "T": Key(float, 1.0, "integration horizon"),
        "dt": Key(_optional_float, None, "ODE step (none = min(1e-3, h/10))"),
        "h": Key(_optional_float, None, "time step used for the discrete radial flow and dt rule"),
    },
    "capacity": {
        "radii": Key(_floats, (), "optional dilation radii for the capacity refinement probe"),
    },
    "compare": {
        "source_b": Key(_optional_shape, None, "source of the larger flow", ("compare",)),
        "omega_b": Key(_optional_shape, None, "initial set of the larger flow", ("compare",)),
    },
    "refine": {
        "hs": Key(_floats, None, "time steps, any order", ("refine",)),
        "T": Key(float, 1.0, "final time"),
    },
}


# --------------------------------------------------------------------------- run configuration


@dataclass(frozen=True, eq=False)
class RunConfig:
    command: str
    values: dict[str, dict[str, Any]]
    grid: GridSpec | None = None
    source: RegionMask | None = None
    omega: RegionMask | None = None
    source_b: RegionMask | None = None
    omega_b: RegionMask | None = None
    solver: SolverParams = field(default_factory=SolverParams)
    minimizer: MinimizerParams = field(default_factory=MinimizerParams)
    flow: FlowConfig | None = None

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def output(self) -> str:
        return self.values["run"]["output"]

    def with_run_flags(self, **flags) -> RunConfig:
        values = {s: dict(v) for s, v in self.values.items()}
        for k, v in flags.items():
            if v is not None:
                values["run"][k] = v
        return RunConfig(
            self.command, values, self.grid, self.source, self.omega, self.source_b, self.omega_b,
            self.solver, self.minimizer, self.flow,
        )


def _suggest(word: str, options) -> str:
    close = difflib.get_close_matches(word, list(options), n=1, cutoff=0.5)
    return f" (did you mean {close[0]!r}?)" if close else ""


def _env_overrides(env: Mapping[str, str]) -> tuple[dict[tuple[str, str], str], list[str]]:
    out, problems = {}, []
    for name, val in env.items():
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):].lower()
        for section in SCHEMA:
            if rest.startswith(section + "_"):
                key = rest[len(section) + 1:]
                match = {k.lower(): k for k in SCHEMA[section]}
                if key in match:
                    out[(section, match[key])] = val
                    break
                problems.append(f"{name}: unknown key {key!r} in [{section}]{_suggest(key, SCHEMA[section])}")
                break
        else:
            problems.append(f"{name}: does not name a known section")
    return out, problems


def parse_config(text: str, env: Mapping[str, str] | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Parse and fully validate an INI document.

    ``env`` (default ``os.environ``) may override any key through
    ``BERNFLOW_<SECTION>_<KEY>``; ``overrides`` maps ``"section.key"`` to
    raw strings and wins over both.  All problems are reported together
    in one ``ConfigurationError``.
    """
    env = os.environ if env is None else env
    parser = configparser.ConfigParser(interpolation=None, default_section="__defaults__")
    parser.optionxform = str
    problems: list[str] = []
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed configuration: {exc}") from None

    raw: dict[tuple[str, str], str] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            problems.append(f"[{section}]: unknown section{_suggest(section, SCHEMA)}")
            continue
        for key, val in parser.items(section):
            if key not in SCHEMA[section]:
                problems.append(f"{section}.{key}: unknown key{_suggest(key, SCHEMA[section])}")
                continue
            raw[(section, key)] = val
    env_raw, env_problems = _env_overrides(env)
    problems += env_problems
    raw.update(env_raw)
    for dotted, val in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if section not in SCHEMA or key not in SCHEMA[section]:
            problems.append(f"{dotted}: unknown key")
            continue
        raw[(section, key)] = str(val)

    values: dict[str, dict[str, Any]] = {s: {} for s in SCHEMA}
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            if (section, key) in raw:
                try:
                    values[section][key] = spec.parse(raw[(section, key)])
                except (ValueError, TypeError, BernflowError) as exc:
                    problems.append(f"{section}.{key}: {exc}")
                    values[section][key] = None
            else:
                values[section][key] = spec.default

    command = values["run"]["command"]
    if command is None:
        if ("run", "command") not in raw:
            problems.append("run.command: missing required key")
        raise ConfigurationError("invalid configuration", problems)
    for section, keys in SCHEMA.items():
        for key, spec in keys.items():
            if command in spec.required_for and values[section][key] is None and (section, key) not in raw:
                problems.append(f"{section}.{key}: missing required key for {command!r}")

    cfg = _build(command, values, problems)
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    return cfg


def _build(command: str, values: dict, problems: list[str]) -> RunConfig:
    def attempt(label: str, fn):
        try:
            return fn()
        except (BernflowError, ValueError, TypeError) as exc:
            problems.append(f"{label}: {exc}")
            return None

    sv, mv, fv = values["solver"], values["minimizer"], values["flow"]
    solver = attempt("solver", lambda: SolverParams(**sv)) or SolverParams()
    minimizer = attempt("minimizer", lambda: MinimizerParams(solver=solver, **mv)) or MinimizerParams()

    if command == "radial":
        rv = values["radial"]
        if rv["ndim"] not in (2, 3):
            problems.append(f"radial.ndim: must be 2 or 3, got {rv['ndim']}")
        if rv["a"] is not None and rv["b0"] is not None and not 0 < rv["a"] < rv["b0"]:
            problems.append("radial.b0: need 0 < a < b0")
        if rv["T"] is not None and rv["T"] <= 0:
            problems.append("radial.T: must be positive")
        return RunConfig(command, values, solver=solver, minimizer=minimizer)

    gv = values["grid"]
    grid = None
    if all(gv[k] is not None for k in ("lower", "upper", "cells")):
        grid = attempt("grid", lambda: make_grid(gv["lower"], gv["upper"], gv["cells"]))

    def mask(section: str, key: str):
        shape = values[section][key]
        if shape is None or grid is None:
            return None
        return attempt(f"{section}.{key}", lambda: rasterize_shape(shape, grid))

    source, omega = mask("shapes", "source"), mask("shapes", "omega")
    source_b = omega_b = None
    if command == "compare":
        source_b, omega_b = mask("compare", "source_b"), mask("compare", "omega_b")
    for s, o, label in ((source, omega, "shapes"), (source_b, omega_b, "compare")):
        if s is not None and o is not None:
            if s.empty:
                problems.append(f"{label}: source is empty at this resolution")
            elif not strictly_contains(o, s):
                problems.append(f"{label}: omega must strictly contain the source (one full cell layer)")

    hs: list[float] = []
    if command in ("minimize", "flow", "compare") and fv["h"] is not None:
        hs.append(fv["h"])
    if command == "refine":
        hs += list(values["refine"]["hs"] or ())
        if values["refine"]["T"] is not None and values["refine"]["T"] <= 0:
            problems.append("refine.T: must be positive")
    for h in hs:
        if grid is not None and h < RESOLUTION_GUARD * grid.dx * (1 - 1e-12):
            problems.append(f"flow.h: h below resolution guard (h={h} < {RESOLUTION_GUARD}·Δx = {RESOLUTION_GUARD * grid.dx:g})")
        elif h <= 0:
            problems.append(f"flow.h: must be positive, got {h}")

    flow = None
    if command in ("flow", "compare") and fv["h"] is not None and fv["steps"] is not None:
        flow = attempt(
            "flow",
            lambda: FlowConfig(
                h=fv["h"],
                steps=fv["steps"],
                minimizer=minimizer,
                snapshot_every=fv["snapshot_every"],
                energy_tolerance=fv["energy_tolerance"],
                quadrature_constant=fv["quadrature_constant"],
            ),
        )
    return RunConfig(command, values, grid, source, omega, source_b, omega_b, solver, minimizer, flow)


def load_config(path: str | os.PathLike, env: Mapping[str, str] | None = None, overrides=None) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read(), env=env, overrides=overrides)


def reference_markdown() -> str:
    """The configuration reference, generated from ``SCHEMA``."""
    lines = [
        "# Configuration reference",
        "",
        "Generated by `scripts/gen_config_reference.py`; do not edit by hand.",
        "",
        "Configs are INI files.  Any key can be overridden from the environment as",
        f"`{ENV_PREFIX}<SECTION>_<KEY>` (for example `{ENV_PREFIX}FLOW_H=0.1`).",
        "Shapes are expressions built from `ball(center, radius)`,",
        "`annulus(center, inner, outer)`, `union(a, b, ...)` and `difference(base, hole)`.",
        "",
    ]
    for section, keys in SCHEMA.items():
        lines += [f"## [{section}]", "", "| key | default | required for | description |", "|---|---|---|---|"]
        for key, spec in keys.items():
            default = "none" if spec.default is None else f"`{spec.default}`"
            req = ", ".join(spec.required_for) if spec.required_for else ""
            lines.append(f"| `{key}` | {default} | {req} | {spec.help} |")
        lines.append("")
    return "\n".join(lines)
