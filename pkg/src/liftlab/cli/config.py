"""Experiment configs: flat TOML key-value files validated before dispatch."""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import tomli

from ..model import POTENTIALS
from ..samplers import LIFTS, PROCESSES
from ..spectral import GALERKIN_PROCESSES

COMMANDS = ("simulate", "liftcheck", "spectral", "circle", "bounds", "reproduce")
REPRODUCE_TARGETS = ("fig1", "gaussian-trel", "circle-scaling", "constants-table", "optimality")

# keys every command accepts
COMMON = ("command", "seed", "out", "threads")
POTENTIAL_KEYS = ("potential", "m", "beta", "d")
COMMAND_KEYS = {
    "simulate": POTENTIAL_KEYS + ("process", "gamma", "horizon", "chains", "step"),
    "liftcheck": POTENTIAL_KEYS + ("process", "gamma", "degree", "samples", "k"),
    "spectral": POTENTIAL_KEYS + ("process", "gamma", "degree", "grid", "eps", "sweep_gamma"),
    "circle": ("n", "eps_rule"),
    "bounds": POTENTIAL_KEYS + ("kappa_minus", "T", "auto_T", "gamma", "eps", "measure"),
    "reproduce": ("target",),
}


class ConfigError(ValueError):
    """One or more config violations; ``violations`` lists them all."""

    def __init__(self, violations: list[str]):
        self.violations = list(violations)
        super().__init__("\n".join(self.violations))


@dataclass
class ExperimentConfig:
    command: str
    values: dict[str, Any]
    path: str | None = None
    lines: dict[str, int] = field(default_factory=dict, repr=False)

    def echo(self) -> dict[str, Any]:
        return dict(self.values)

    def get(self, key: str, default=None):
        return self.values.get(key, default)


def parse_range(text: str) -> tuple[float, float, float]:
    """``"start:stop:step"`` as floats; the stop value is included."""
    parts = str(text).split(":")
    if len(parts) != 3:
        raise ValueError(f"expected start:stop:step, got {text!r}")
    start, stop, step = (float(p) for p in parts)
    if not step > 0 or stop < start:
        raise ValueError(f"range {text!r} needs step > 0 and stop >= start")
    return start, stop, step


def range_values(text: str):
    import numpy as np

    start, stop, step = parse_range(text)
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return start + step * np.arange(count)


def parse_eps_rule(text) -> Callable[[int], float]:
    """``"1/n"``, ``"c/n"`` or a constant flip probability."""
    s = str(text).replace(" ", "")
    match = re.fullmatch(r"([0-9.eE+-]*)/n", s)
    if match:
        c = float(match.group(1) or 1.0)
        return lambda n: c / n
    value = float(s)
    return lambda n: value


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def check_values(command: str, values: dict[str, Any]) -> list[str]:
    """All precondition violations for ``values`` under ``command``."""
    errs: list[str] = []
    if command not in COMMANDS:
        return [f"command: unknown command {command!r}; known commands: {', '.join(COMMANDS)}"]
    allowed = set(COMMON) | set(COMMAND_KEYS[command])
    for key in values:
        if key not in allowed:
            errs.append(f"{key}: not a {command} setting; allowed keys: {', '.join(sorted(allowed))}")

    def num(key, cond, text, integer=False):
        if key not in values:
            return
        x = values[key]
        ok_type = _is_int(x) if integer else _is_num(x)
        if not ok_type:
            errs.append(f"{key}: expected {'an integer' if integer else 'a number'}, got {x!r}")
        elif not cond(x):
            errs.append(f"{key} = {x!r} violates {text}")

    num("seed", lambda s: 0 <= s < 2**64, "0 <= seed < 2^64", integer=True)
    num("threads", lambda n: n >= 1, "threads >= 1", integer=True)
    if "out" in values and not isinstance(values["out"], str):
        errs.append("out: expected a path string")
    elif "out" in values:
        parent = Path(values["out"]).expanduser().resolve().parent
        while not parent.exists() and parent != parent.parent:
            parent = parent.parent
        if not os.access(parent, os.W_OK):
            errs.append(f"out: {values['out']!r} is not writable")

    if "potential" in values:
        name = values["potential"]
        if name not in POTENTIALS:
            errs.append(f"potential: unknown potential {name!r}; known potentials: {', '.join(sorted(POTENTIALS))}")
        elif name == "quadratic" and "beta" in values:
            errs.append("beta: only applies to the double_well potential")
        elif name == "double_well" and ("m" in values or "d" in values):
            errs.append("m/d: the double_well potential takes beta only")
    num("m", lambda m: m > 0, "the potential precondition m > 0")
    num("beta", lambda b: b > 0, "the potential precondition beta > 0")
    num("d", lambda d: 1 <= d <= 3, "1 <= d <= 3", integer=True)

    process = values.get("process")
    if process is not None:
        known = {
            "simulate": PROCESSES,
            "liftcheck": LIFTS,
            "spectral": GALERKIN_PROCESSES,
        }.get(command, PROCESSES)
        if process not in known:
            errs.append(f"process: {process!r} not available for {command}; choose from {', '.join(known)}")

    if command == "bounds":
        if values.get("gamma", "auto") != "auto":
            num("gamma", lambda g: g > 0, "the contraction-rate precondition gamma > 0")
    elif process == "rhmc":
        num("gamma", lambda g: g > 0, "the RHMC precondition gamma > 0")
    else:
        num("gamma", lambda g: g >= 0, "gamma >= 0")
    num("horizon", lambda h: h >= 0, "horizon >= 0")
    num("chains", lambda c: c >= 1, "chains >= 1", integer=True)
    num("step", lambda h: h > 0, "step > 0")
    num("samples", lambda n: n >= 2, "samples >= 2", integer=True)
    num("k", lambda k: k > 0, "k > 0")
    num("kappa_minus", lambda k: k >= 0, "kappa_minus >= 0")
    num("T", lambda t: t > 0, "T > 0")
    if "auto_T" in values and not isinstance(values["auto_T"], bool):
        errs.append("auto_T: expected true or false")
    if "measure" in values and not isinstance(values["measure"], bool):
        errs.append("measure: expected true or false")
    if values.get("auto_T") and "T" in values:
        errs.append("T: give either T or auto_T = true, not both")
    if command == "spectral":
        num("degree", lambda d: d >= 2, "degree >= 2", integer=True)
    else:
        num("degree", lambda d: d >= 0, "degree >= 0", integer=True)

    eps = values.get("eps")
    if eps is not None:
        items = eps if isinstance(eps, list) else [eps]
        hi_ok = (lambda e: e < 1) if command == "bounds" else (lambda e: e <= 1)
        for e in items:
            if not _is_num(e) or not (e > 0 and hi_ok(e)):
                bound = "(0, 1)" if command == "bounds" else "(0, 1]"
                errs.append(f"eps = {e!r} must lie in {bound}")
    for key in ("grid", "sweep_gamma"):
        if key in values:
            try:
                start, _, _ = parse_range(values[key])
                if key == "grid" and start != 0:
                    errs.append("grid must start at 0")
            except ValueError as exc:
                errs.append(f"{key}: {exc}")
    if "n" in values:
        ns = values["n"]
        if not isinstance(ns, list) or not ns or not all(_is_int(n) and n >= 2 for n in ns):
            errs.append(f"n: expected a list of integers >= 2, got {ns!r}")
    if "eps_rule" in values:
        try:
            p = parse_eps_rule(values["eps_rule"])(2)
            if not 0 <= p <= 1:
                errs.append("eps_rule must give flip probabilities in [0, 1]")
        except ValueError:
            errs.append(f"eps_rule: expected '1/n', 'c/n' or a number, got {values['eps_rule']!r}")
    if command == "reproduce":
        target = values.get("target")
        if target not in REPRODUCE_TARGETS:
            errs.append(f"target: unknown target {target!r}; known targets: {', '.join(REPRODUCE_TARGETS)}")
    return errs


def _key_lines(text: str) -> dict[str, int]:
    lines = {}
    for i, line in enumerate(text.splitlines(), start=1):
        match = re.match(r"\s*([A-Za-z_][A-Za-z0-9_-]*)\s*=", line)
        if match:
            lines.setdefault(match.group(1), i)
    return lines


def load_config_text(text: str, path: str | None = None) -> ExperimentConfig:
    where = path or "<config>"
    try:
        values = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        col = getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        raise ConfigError([f"{where}:{line}:{col}: parse error: {msg}"]) from exc
    lines = _key_lines(text)
    nested = [k for k, v in values.items() if isinstance(v, dict)]
    errs = [f"{where}:{lines.get(k, '?')}: {k}: tables are not supported; the config is flat" for k in nested]
    command = values.get("command")
    if command is None:
        errs.append(f"{where}: command: missing; choose from {', '.join(COMMANDS)}")
    else:
        for e in check_values(command, {k: v for k, v in values.items() if k not in nested}):
            key = re.match(r"[A-Za-z_]+", e)
            ln = lines.get(key.group(0)) if key else None
            errs.append(f"{where}:{ln}: {e}" if ln else f"{where}: {e}")
    if errs:
        raise ConfigError(errs)
    return ExperimentConfig(command, values, path, lines)


def validate_config(path) -> ExperimentConfig:
    """Parse and precondition-check a config file; raises :class:`ConfigError` listing every violation."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError([f"{path}: no such config file"])
    return load_config_text(p.read_text(), str(path))
