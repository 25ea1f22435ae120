"""Flat key-value run configuration files.

One assignment per line, ``#`` starts a comment, blank lines are ignored:

    n = 2
    l = 3
    sigma = 0.001
    A = 1.0
    v.1,0 = 1.0
    v.-1,0 = 1.0
    t = 0.23,0.71
    j = 17,3
    backend = series

Potential coefficients use ``v.<q1>,...,<qn> = value``; every other key is
from a fixed vocabulary, and anything unknown, duplicated or malformed is
rejected with its line number.  The model keys mirror the ``ModelContext``
fields; the run keys parameterize individual CLI commands.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .errors import ConfigError
from .lattice import ModelContext, PeriodicFunction

_INT_KEYS = {"n", "l", "M_lin", "r_max", "N_q", "m_max", "seed", "samples"}
_FLOAT_KEYS = {
    "sigma", "delta", "beta", "M_W", "tol_fp", "tol_root", "tol_tail",
    "k0", "k", "lambda", "step",
}
_COMPLEX_KEYS = {"A"}
_FLOAT_TUPLE_KEYS = {"t", "direction"}
_INT_TUPLE_KEYS = {"j"}
_STR_KEYS = {"backend", "solver", "solution"}
_BOOL_KEYS = {"sweep"}

_MODEL_KEYS = {
    "n", "l", "sigma", "A", "delta", "beta", "M_lin", "M_W", "r_max",
    "N_q", "tol_fp", "tol_root", "tol_tail", "m_max", "k0", "seed",
}
_RUN_KEYS = {
    "k", "lambda", "samples", "t", "j", "backend", "solver", "solution",
    "step", "direction", "sweep",
}
_ALL_KEYS = _MODEL_KEYS | _RUN_KEYS


@dataclass(frozen=True)
class RunConfig:
    """A validated model context plus the per-command run parameters."""

    ctx: ModelContext
    k: Optional[float] = None
    lam: Optional[float] = None
    samples: Optional[int] = None
    t: Optional[Tuple[float, ...]] = None
    j: Optional[Tuple[int, ...]] = None
    backend: str = "series"
    solver: str = "series"
    solution: Optional[str] = None
    step: float = 1e-3
    direction: Optional[Tuple[float, ...]] = None
    sweep: bool = False


def _fail(lineno: int, message: str) -> ConfigError:
    return ConfigError(f"line {lineno}: {message}")


def _parse_scalar(key: str, raw: str, lineno: int):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _COMPLEX_KEYS:
            return complex(raw)
        if key in _FLOAT_TUPLE_KEYS:
            return tuple(float(p) for p in raw.split(","))
        if key in _INT_TUPLE_KEYS:
            return tuple(int(p) for p in raw.split(","))
        if key in _BOOL_KEYS:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError as exc:
        raise _fail(lineno, f"invalid value {raw!r} for key {key!r}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration document."""
    values: Dict[str, object] = {}
    seen_lines: Dict[str, int] = {}
    coeffs: Dict[Tuple[int, ...], complex] = {}

    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise _fail(lineno, f"expected 'key = value', got {body!r}")
        key, raw = (part.strip() for part in body.split("=", 1))
        if not key:
            raise _fail(lineno, "empty key")
        if not raw:
            raise _fail(lineno, f"empty value for key {key!r}")

        if key.startswith("v."):
            try:
                q = tuple(int(p) for p in key[2:].split(","))
            except ValueError as exc:
                raise _fail(lineno, f"malformed frequency in {key!r}") from exc
            if q in coeffs:
                raise _fail(lineno, f"duplicate potential coefficient {key!r}")
            try:
                coeffs[q] = complex(raw)
            except ValueError as exc:
                raise _fail(lineno, f"invalid coefficient value {raw!r}") from exc
            continue

        if key not in _ALL_KEYS:
            raise _fail(lineno, f"unknown key {key!r}")
        if key in seen_lines:
            raise _fail(lineno, f"duplicate key {key!r} (first set on line {seen_lines[key]})")
        seen_lines[key] = lineno
        values[key] = _parse_scalar(key, raw, lineno)

    for required in ("n", "l"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    n = values["n"]

    for q in coeffs:
        if len(q) != n:
            raise ConfigError(f"potential frequency {q} does not have dimension {n}")

    ctx_kwargs = {
        "n": n,
        "l": values["l"],
        "sigma": float(values.get("sigma", 0.0)),
        "A": complex(values.get("A", 1.0)),
        "V": PeriodicFunction(n, coeffs),
    }
    for key in ("delta", "beta", "M_lin", "M_W", "r_max", "N_q",
                "tol_fp", "tol_root", "tol_tail", "m_max", "k0", "seed"):
        if key in values:
            ctx_kwargs[key] = values[key]
    ctx = ModelContext(**ctx_kwargs)

    backend = values.get("backend", "series")
    if backend not in ("series", "diag"):
        raise ConfigError(f"backend must be 'series' or 'diag', got {backend!r}")
    solver = values.get("solver", "series")
    if solver not in ("series", "fixedpoint"):
        raise ConfigError(f"solver must be 'series' or 'fixedpoint', got {solver!r}")

    t = values.get("t")
    if t is not None and len(t) != n:
        raise ConfigError(f"t must have {n} components")
    j = values.get("j")
    if j is not None and len(j) != n:
        raise ConfigError(f"j must have {n} components")
    direction = values.get("direction")
    if direction is not None and len(direction) != n:
        raise ConfigError(f"direction must have {n} components")

    return RunConfig(
        ctx=ctx,
        k=values.get("k"),
        lam=values.get("lambda"),
        samples=values.get("samples"),
        t=t,
        j=j,
        backend=backend,
        solver=solver,
        solution=values.get("solution"),
        step=float(values.get("step", 1e-3)),
        direction=direction,
        sweep=bool(values.get("sweep", False)),
    )
