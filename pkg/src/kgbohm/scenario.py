"""Scenario files: a sectioned ``key = value`` text format.

A scenario names the physics, lattice, initial data, potentials and an
ordered list of pipeline stages.  Example::

    [scenario]
    name = plane_wave
    pipeline = kg, madelung, hidden_phase, residual-suite
    rng_seed = 1

    [grid]
    nx = 64
    length = 6.283185307179586
    dt = 0.01
    nt = 1001

    [initial]
    type = plane_wave
    k = 1.0

Lists are comma separated; superposition waves are written ``amp:k``.
"""
from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .errors import ScenarioError, StabilityError
from .fields import PhysParams, SpacetimeGrid

STAGES = ("kg", "schrodinger", "madelung", "hidden_phase", "trajectories",
          "residual-suite", "low-speed-compare", "kinematics-suite")
INITIAL_TYPES = ("plane_wave", "gaussian", "superposition", "eigenstate", "file")
POTENTIAL_TYPES = ("zero", "uniform_e", "harmonic", "table")
KNOWN_SECTIONS = ("scenario", "physics", "grid", "initial", "potential", "kg", "madelung",
                  "hidden_phase", "trajectories", "lowspeed", "outputs")
KG_CFL_MAX = 0.9
_WAVE_STAGES = ("kg", "schrodinger")


@dataclass
class Scenario:
    name: str
    pipeline: List[str]
    rng_seed: int
    physics: PhysParams
    grid: Optional[SpacetimeGrid]
    sections: Dict[str, Dict[str, str]]
    description: str = ""
    source: Optional[Path] = None
    lines: Dict[Tuple[str, str], int] = field(default_factory=dict)

    def section(self, name: str) -> Dict[str, str]:
        return self.sections.get(name, {})

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    # typed access with errors that point back into the file
    def _fail(self, section, key, msg):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        raise ScenarioError(f"[{section}] {key}: {msg}", field=f"{section}.{key}", line=line)

    def get_float(self, section, key, default=None) -> Optional[float]:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            val = float(raw)
        except ValueError:
            self._fail(section, key, f"expected a number, got {raw!r}")
        if not math.isfinite(val):
            self._fail(section, key, "must be finite")
        return val

    def get_int(self, section, key, default=None) -> Optional[int]:
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return int(raw)
        except ValueError:
            self._fail(section, key, f"expected an integer, got {raw!r}")

    def get_bool(self, section, key, default=False) -> bool:
        raw = self.get(section, key)
        if raw is None:
            return default
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        self._fail(section, key, f"expected true/false, got {raw!r}")

    def get_list(self, section, key, default=None) -> Optional[List[str]]:
        raw = self.get(section, key)
        if raw is None:
            return default
        return [s.strip() for s in raw.split(",") if s.strip()]

    def get_floats(self, section, key, default=None) -> Optional[List[float]]:
        items = self.get_list(section, key)
        if items is None:
            return default
        try:
            return [float(s) for s in items]
        except ValueError:
            self._fail(section, key, "expected a comma-separated list of numbers")

    def echo(self) -> Dict[str, Dict[str, str]]:
        """Parameters as written, sorted, for manifests and ``describe``."""
        return {s: dict(sorted(kv.items())) for s, kv in sorted(self.sections.items())}


def _line_map(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    lines = {}
    section = None
    for i, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            section = m.group(1).strip().lower()
            lines.setdefault((section, None), i)
            continue
        m = re.match(r"([^=:\s]+)\s*[=:]", stripped)
        if m and section is not None:
            lines.setdefault((section, m.group(1).lower()), i)
    return lines


def parse_text(text: str, source: Optional[Path] = None) -> Scenario:
    """Parse and validate scenario text; raises ScenarioError or StabilityError."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=str(source) if source else "<scenario>")
    except configparser.MissingSectionHeaderError as exc:
        raise ScenarioError(f"missing section header: {exc.line.strip()!r}", field=None, line=exc.lineno) from exc
    except configparser.DuplicateOptionError as exc:
        raise ScenarioError(f"duplicate key {exc.option!r} in [{exc.section}]",
                            field=f"{exc.section}.{exc.option}", line=exc.lineno) from exc
    except configparser.DuplicateSectionError as exc:
        raise ScenarioError(f"duplicate section [{exc.section}]", field=exc.section, line=exc.lineno) from exc
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ScenarioError(f"cannot parse line {lineno}", field=None, line=lineno) from exc

    sections = {s.lower(): {k.lower(): v.strip() for k, v in cp.items(s)} for s in cp.sections()}
    lines = _line_map(text)
    unknown = sorted(set(sections) - set(KNOWN_SECTIONS))
    if unknown:
        raise ScenarioError(f"unknown section [{unknown[0]}]", field=unknown[0], line=lines.get((unknown[0], None)))
    if "scenario" not in sections:
        raise ScenarioError("missing section [scenario]", field="scenario")
    head = sections["scenario"]
    name = head.get("name")
    if not name:
        raise ScenarioError("missing [scenario] name", field="scenario.name", line=lines.get(("scenario", None)))
    if "pipeline" not in head:
        raise ScenarioError("missing [scenario] pipeline", field="scenario.pipeline",
                            line=lines.get(("scenario", None)))

    scn = Scenario(name=name, pipeline=[], rng_seed=0, physics=PhysParams(), grid=None,
                   sections=sections, description=head.get("description", ""), source=source, lines=lines)
    scn.pipeline = [s.lower() for s in scn.get_list("scenario", "pipeline")]
    if not scn.pipeline:
        scn._fail("scenario", "pipeline", "no stages listed")
    for st in scn.pipeline:
        if st not in STAGES:
            scn._fail("scenario", "pipeline", f"unknown stage {st!r} (choose from {', '.join(STAGES)})")
    scn.rng_seed = scn.get_int("scenario", "rng_seed", 0)

    try:
        scn.physics = PhysParams(**{k: scn.get_float("physics", k, 1.0) for k in ("hbar", "c", "m", "q")})
    except ValueError as exc:
        raise ScenarioError(f"[physics] {exc}", field="physics", line=lines.get(("physics", None))) from exc

    _validate_pipeline(scn)
    if any(st in scn.pipeline for st in _WAVE_STAGES):
        scn.grid = _build_grid(scn)
        _validate_initial(scn)
        _validate_potential(scn)
        if "kg" in scn.pipeline:
            cfl = scn.grid.cfl(scn.physics.c)
            if cfl > KG_CFL_MAX + 1e-12:
                raise StabilityError(f"CFL number c*dt/dx = {cfl:.4g} exceeds the bound {KG_CFL_MAX}",
                                     bound=KG_CFL_MAX, value=cfl)
    return scn


def _validate_pipeline(scn: Scenario):
    seen = set()
    for st in scn.pipeline:
        need = None
        if st == "madelung" and not seen & set(_WAVE_STAGES):
            need = "kg or schrodinger"
        elif st in ("hidden_phase", "residual-suite") and "madelung" not in seen:
            need = "madelung"
        elif st == "trajectories":
            flow = (scn.get("trajectories", "flow") or "corrected").lower()
            if flow not in ("corrected", "bohm"):
                scn._fail("trajectories", "flow", "must be 'corrected' or 'bohm'")
            req = "hidden_phase" if flow == "corrected" else "madelung"
            if req not in seen:
                need = req
        if need:
            scn._fail("scenario", "pipeline", f"stage {st!r} needs {need} earlier in the pipeline")
        seen.add(st)


def _build_grid(scn: Scenario) -> SpacetimeGrid:
    if "grid" not in scn.sections:
        raise ScenarioError("missing section [grid]", field="grid")
    nx = scn.get_int("grid", "nx")
    if nx is None:
        scn._fail("grid", "nx", "required")
    length, dx = scn.get_float("grid", "length"), scn.get_float("grid", "dx")
    if (length is None) == (dx is None):
        scn._fail("grid", "length", "give exactly one of length or dx")
    periodic = scn.get_bool("grid", "periodic", True)
    if dx is None:
        dx = length / nx if periodic else length / (nx - 1)
    dt, cfl = scn.get_float("grid", "dt"), scn.get_float("grid", "cfl")
    if (dt is None) == (cfl is None):
        scn._fail("grid", "dt", "give exactly one of dt or cfl")
    if dt is None:
        dt = cfl * dx / scn.physics.c
    nt, t_final = scn.get_int("grid", "nt"), scn.get_float("grid", "t_final")
    if (nt is None) == (t_final is None):
        scn._fail("grid", "nt", "give exactly one of nt or t_final")
    if nt is None:
        nt = int(round(t_final / dt)) + 1
    try:
        return SpacetimeGrid(nx=nx, nt=nt, dx=dx, dt=dt, x_min=scn.get_float("grid", "x_min", 0.0),
                             t0=scn.get_float("grid", "t0", 0.0), periodic=periodic)
    except ValueError as exc:
        raise ScenarioError(f"[grid] {exc}", field="grid", line=scn.lines.get(("grid", None))) from exc


def _validate_initial(scn: Scenario):
    if "initial" not in scn.sections:
        raise ScenarioError("missing section [initial]", field="initial")
    kind = (scn.get("initial", "type") or "").lower()
    if kind not in INITIAL_TYPES:
        scn._fail("initial", "type", f"must be one of {', '.join(INITIAL_TYPES)}")
    if kind == "plane_wave":
        scn.get_float("initial", "k", 0.0)
        scn.get_float("initial", "amplitude", 1.0)
    elif kind == "gaussian":
        if scn.get_float("initial", "sigma", 1.0) <= 0:
            scn._fail("initial", "sigma", "must be positive")
        scn.get_float("initial", "x0", 0.0)
        scn.get_float("initial", "k", 0.0)
    elif kind == "superposition":
        superposition_waves(scn)
    elif kind == "eigenstate" and scn.get_int("initial", "level", 0) < 0:
        scn._fail("initial", "level", "must be >= 0")
    elif kind == "file" and not scn.get("initial", "path"):
        scn._fail("initial", "path", "required for type = file")
    kg_data = (scn.get("initial", "kg_data") or "positive_energy").lower()
    if kg_data not in ("positive_energy", "schrodinger"):
        scn._fail("initial", "kg_data", "must be positive_energy or schrodinger")


def superposition_waves(scn: Scenario) -> List[Tuple[float, float]]:
    items = scn.get_list("initial", "waves")
    if not items:
        scn._fail("initial", "waves", "required for type = superposition")
    waves = []
    for it in items:
        try:
            amp, k = it.split(":")
            waves.append((float(amp), float(k)))
        except ValueError:
            scn._fail("initial", "waves", f"expected amp:k, got {it!r}")
    return waves


def _validate_potential(scn: Scenario):
    kind = (scn.get("potential", "type") or "zero").lower()
    if kind not in POTENTIAL_TYPES:
        scn._fail("potential", "type", f"must be one of {', '.join(POTENTIAL_TYPES)}")
    if kind == "uniform_e":
        scn.get_float("potential", "e0", 0.0)
    if kind == "harmonic" and scn.get_float("potential", "omega", 1.0) <= 0:
        scn._fail("potential", "omega", "must be positive")
    if kind == "table" and not scn.get("potential", "path"):
        scn._fail("potential", "path", "required for type = table")


def load(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read {path}: {exc.strerror}", field=None) from exc
    return parse_text(text, source=path)
