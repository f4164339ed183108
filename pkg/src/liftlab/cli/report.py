"""Run reports: JSON with a provenance tag on every number."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Sequence

from .. import __version__

PROVENANCE = ("exact", "galerkin", "monte-carlo", "estimated")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NONCONVERGED = 2
EXIT_VIOLATION = 3


def tagged(value, provenance: str, se: float | None = None, exact: str | None = None) -> dict:
    if provenance not in PROVENANCE:
        raise ValueError(f"provenance must be one of {PROVENANCE}, got {provenance!r}")
    v = None if value is None else float(value)
    if v is not None and not math.isfinite(v):
        v = None
    out: dict[str, Any] = {"value": v, "provenance": provenance}
    if se is not None and math.isfinite(se):
        out["se"] = float(se)
    if exact is not None:
        out["exact"] = exact
    return out


@dataclass
class RunReport:
    command: str
    seed: int
    config: dict[str, Any]
    results: dict[str, Any] = field(default_factory=dict)
    verdicts: dict[str, Any] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)
    exit_code: int = EXIT_OK

    def to_dict(self) -> dict[str, Any]:
        return {
            "artifact": "liftlab",
            "version": __version__,
            "command": self.command,
            "seed": int(self.seed),
            "config": self.config,
            "results": self.results,
            "verdicts": {k: v if isinstance(v, str) else bool(v) for k, v in self.verdicts.items()},
            "files": sorted(self.files),
            "exit_code": self.exit_code,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())


def load_schema() -> dict:
    return json.loads(resources.files("liftlab.schemas").joinpath("run_report.schema.json").read_text())


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])


def output_paths(out: str | None, default_stem: str) -> tuple[Path, Path]:
    """``(report.json, data.csv)`` from ``--out``, which may name either file."""
    p = Path(out) if out else Path(default_stem)
    if p.suffix == ".csv":
        return p.with_suffix(".json"), p
    if p.suffix == ".json":
        return p, p.with_suffix(".csv")
    return p.with_suffix(".json"), p.with_suffix(".csv")
