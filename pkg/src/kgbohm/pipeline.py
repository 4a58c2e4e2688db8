"""Execute the stages of a scenario and collect artifacts and a manifest."""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__, artifacts, kinematics, plotting
from .errors import ScenarioError
from .fields import ComplexField, Potentials, ScalarField, max_norm
from .hidden_phase import (HiddenPhase, creation_rate, euler_residual, mass_shell_residual,
                           phi_condition_residual, solve_phi, velocity_field)
from .kg import (KGInitialData, charge_drift, dispersion, evolve_kg, measure_frequency, noether_current,
                 plane_wave_initial_data, positive_energy_initial_data, superposition_initial_data,
                 total_charge)
from .madelung import decompose, hj_quantum_residual, quantum_potential_Q
from .scenario import Scenario, superposition_waves
from .schrodinger import (SelfSimilarCase, corrected_flow, evolve_schrodinger, fluid_residuals, fluid_state,
                          gaussian_packet, hamiltonian, kg_initial_from_schrodinger, newton_lorentz_residual,
                          solve_phi_lowspeed, sourced_continuity_residual)
from .trajectories import bin_probabilities, ensemble_density, integrate, sample_seeds

log = logging.getLogger(__name__)

PROFILES = {
    "default": {
        "charge_drift": 1e-6,
        "mass_shell": 1e-8,
        "norm_drift_per_1000": 1e-10,
        "lowspeed_density": 1e-2,
        "lowspeed_ratio": (2.0, 8.0),
        "maxwell_analog": 1e-10,
        "hj_on_shell": 1e-10,
        "hj_off_shell_min": 1e-6,
        "kinematics_selfcheck": 1e-6,
        "histogram_sigmas": 3.0,
        "stationary": 1e-6,
    },
    "strict": {
        "charge_drift": 1e-10,
        "mass_shell": 1e-12,
        "norm_drift_per_1000": 1e-12,
        "lowspeed_density": 1e-3,
        "lowspeed_ratio": (3.0, 5.0),
        "maxwell_analog": 1e-13,
        "hj_on_shell": 1e-13,
        "hj_off_shell_min": 1e-3,
        "kinematics_selfcheck": 1e-7,
        "histogram_sigmas": 2.0,
        "stationary": 1e-8,
    },
}

FIELD_COLUMNS = ("re", "im", "rho", "S", "phi", "u", "v", "Q", "K", "dxdt", "j0", "j1")


@dataclass
class RunResult:
    manifest: dict
    out_dir: Path
    files: List[Path]

    @property
    def failed_checks(self) -> List[str]:
        return sorted(k for k, v in self.manifest["checks"].items() if not v["pass"])


@dataclass
class _Context:
    scn: Scenario
    out_dir: Path
    profile: Dict[str, Any]
    threads: int
    figures: bool
    potentials: Optional[Potentials] = None
    psi0: Optional[np.ndarray] = None
    kg: Any = None
    schrodinger: Any = None
    wave_source: Optional[str] = None
    md: Any = None
    hp: Any = None
    ks: Any = None
    fluid: Any = None
    te: Any = None
    summary: Dict[str, Any] = field(default_factory=dict)
    checks: Dict[str, dict] = field(default_factory=dict)
    files: List[Path] = field(default_factory=list)

    @property
    def p(self):
        return self.scn.physics

    @property
    def grid(self):
        return self.scn.grid

    def check(self, name, value, limit, mode="max"):
        value = float(value)
        if mode == "max":
            ok = value <= limit
        elif mode == "min":
            ok = value >= limit
        else:  # range
            ok = limit[0] <= value <= limit[1]
        self.checks[name] = {"value": value, "limit": limit, "mode": mode, "pass": bool(ok)}

    def path(self, name) -> Path:
        p = self.out_dir / name
        self.files.append(p)
        return p


# ---------------------------------------------------------------------------
# inputs

def _resolve(scn: Scenario, rel: str) -> Path:
    p = Path(rel)
    if not p.is_absolute() and scn.source is not None:
        p = scn.source.parent / p
    return p


def _read_table(scn, section, key, need):
    path = _resolve(scn, scn.get(section, key))
    try:
        cols = artifacts.read_csv(path)
    except (OSError, ValueError, StopIteration) as exc:
        raise ScenarioError(f"[{section}] {key}: cannot read table {path}: {exc}", field=f"{section}.{key}",
                            line=scn.lines.get((section, key))) from exc
    missing = [c for c in need if c not in cols]
    if missing:
        raise ScenarioError(f"[{section}] {key}: table lacks column {missing[0]!r}", field=f"{section}.{key}",
                            line=scn.lines.get((section, key)))
    return cols


def _potentials(ctx: _Context) -> Potentials:
    scn, g = ctx.scn, ctx.grid
    kind = (scn.get("potential", "type") or "zero").lower()
    if kind == "zero":
        return Potentials.zero(g)
    if kind == "uniform_e":
        return Potentials.uniform_electric(g, scn.get_float("potential", "e0", 0.0),
                                           scn.get_float("potential", "x_ref", 0.0))
    if kind == "harmonic":
        w, x_ref, p = scn.get_float("potential", "omega", 1.0), scn.get_float("potential", "x_ref", 0.0), ctx.p
        V = p.m * w**2 * (g.x - x_ref) ** 2 / (2 * p.q)
        return Potentials(ScalarField(g, np.broadcast_to(V, g.shape).copy()), ScalarField.zeros(g))
    cols = _read_table(scn, "potential", "path", ("x", "V"))
    V = np.interp(g.x, cols["x"], cols["V"])
    Ax = np.interp(g.x, cols["x"], cols["Ax"]) if "Ax" in cols else np.zeros(g.nx)
    return Potentials(ScalarField(g, np.broadcast_to(V, g.shape).copy()),
                      ScalarField(g, np.broadcast_to(Ax, g.shape).copy()))


def _initial_psi(ctx: _Context) -> np.ndarray:
    scn, g = ctx.scn, ctx.grid
    kind = scn.get("initial", "type").lower()
    if kind == "plane_wave":
        k = scn.get_float("initial", "k", 0.0)
        return scn.get_float("initial", "amplitude", 1.0) * np.exp(1j * k * g.x)
    if kind == "gaussian":
        return gaussian_packet(g.x, scn.get_float("initial", "x0", 0.0), scn.get_float("initial", "sigma", 1.0),
                               scn.get_float("initial", "k", 0.0))
    if kind == "superposition":
        return sum(amp * np.exp(1j * k * g.x) for amp, k in superposition_waves(scn))
    if kind == "eigenstate":
        # eigenvector of the lattice Hamiltonian, so the state is stationary for the scheme
        H = hamiltonian(g, ctx.potentials.V.values[0], ctx.potentials.Ax.values[0], ctx.p).toarray()
        _, vecs = np.linalg.eigh(H)
        vec = vecs[:, scn.get_int("initial", "level", 0)]
        vec = vec * np.exp(-1j * np.angle(vec[np.argmax(np.abs(vec))]))
        return vec / np.sqrt(np.sum(np.abs(vec) ** 2) * g.dx)
    cols = _read_table(scn, "initial", "path", ("x", "re", "im"))
    return np.interp(g.x, cols["x"], cols["re"]) + 1j * np.interp(g.x, cols["x"], cols["im"])


def _kg_initial(ctx: _Context) -> KGInitialData:
    scn, g, p = ctx.scn, ctx.grid, ctx.p
    kind = scn.get("initial", "type").lower()
    if kind == "plane_wave":
        return plane_wave_initial_data(g, p, scn.get_float("initial", "k", 0.0),
                                       scn.get_float("initial", "amplitude", 1.0),
                                       scn.get_int("initial", "branch", 1))
    if kind == "superposition":
        return superposition_initial_data(g, p, superposition_waves(scn))
    psi0 = ctx.psi0
    if kind == "file":
        cols = _read_table(scn, "initial", "path", ("x", "re", "im"))
        if "re_dot" in cols and "im_dot" in cols:
            dot = np.interp(g.x, cols["x"], cols["re_dot"]) + 1j * np.interp(g.x, cols["x"], cols["im_dot"])
            return KGInitialData(psi0, dot)
    if (scn.get("initial", "kg_data") or "positive_energy").lower() == "schrodinger":
        return kg_initial_from_schrodinger(psi0, ctx.potentials, p, g)
    return positive_energy_initial_data(psi0, g, p)


# ---------------------------------------------------------------------------
# stages

def _stage_kg(ctx: _Context):
    scn, g, p = ctx.scn, ctx.grid, ctx.p
    boundary = (scn.get("kg", "boundary") or ("periodic" if g.periodic else "clamped")).lower()
    sol = evolve_kg(_kg_initial(ctx), ctx.potentials, p, g, boundary=boundary,
                    rest_phase=scn.get_bool("kg", "rest_phase", False))
    ctx.kg, ctx.wave_source = sol, "kg"
    q = total_charge(noether_current(sol), g, p)
    drift = charge_drift(q)
    ctx.summary["kg.cfl"] = sol.cfl
    ctx.summary["kg.charge_initial"] = float(q[0])
    ctx.summary["kg.charge_drift"] = drift
    ctx.check("kg.charge_drift", drift, ctx.profile["charge_drift"])
    if scn.get("initial", "type").lower() == "plane_wave" and ctx.potentials.is_zero:
        k = scn.get_float("initial", "k", 0.0)
        w = measure_frequency(sol)
        exact = float(dispersion(k, p))
        ctx.summary["kg.omega_measured"] = w
        ctx.summary["kg.omega_exact"] = exact
        ctx.summary["kg.omega_rel_error"] = abs(w - exact) / exact


def _stage_schrodinger(ctx: _Context):
    s = evolve_schrodinger(ctx.psi0, ctx.potentials, ctx.p, ctx.grid)
    ctx.schrodinger, ctx.wave_source = s, "schrodinger"
    norms = s.norms()
    drift = float(np.max(np.abs(norms - norms[0])) / norms[0])
    ctx.summary["schrodinger.norm_drift"] = drift
    limit = ctx.profile["norm_drift_per_1000"] * max(1.0, ctx.grid.nt / 1000)
    ctx.check("schrodinger.norm_drift", drift, limit)


def _stage_madelung(ctx: _Context):
    scn = ctx.scn
    source = (scn.get("madelung", "source") or ctx.wave_source).lower()
    sol = ctx.kg if source == "kg" else ctx.schrodinger
    if sol is None:
        scn._fail("madelung", "source", f"no {source} solution in this pipeline")
    ctx.wave_source = source
    psi = sol.psi.values
    eps_rel = scn.get_float("madelung", "eps_rel", 1e-8)
    ctx.md = decompose(sol, eps_rho=eps_rel * float(np.max(np.abs(psi) ** 2)))
    ctx.summary["madelung.source"] = source
    ctx.summary["madelung.node_fraction"] = float(np.mean(ctx.md.node_mask))
    ctx.summary["madelung.region_offsets"] = len(ctx.md.region_offsets)


def _stage_hidden_phase(ctx: _Context):
    scn, p, a = ctx.scn, ctx.p, ctx.potentials
    if ctx.wave_source == "kg":
        hp = solve_phi(ctx.md, a, p, branch=scn.get_int("hidden_phase", "branch", 1))
        ks = velocity_field(ctx.md, hp, a, p)
        ctx.hp, ctx.ks = hp, ks
        shell = max_norm(mass_shell_residual(ks, p), margin=0, mask_margin=0)
        ctx.summary["hidden_phase.mass_shell_max"] = shell
        ctx.check("hidden_phase.mass_shell", shell, ctx.profile["mass_shell"])
    else:
        hp = solve_phi_lowspeed(ctx.md, a, p)
        ctx.hp = hp
        ctx.fluid = corrected_flow(fluid_state(ctx.md, a, p), hp)
    ctx.summary["hidden_phase.phi_abs_max"] = max_norm(hp.phi, margin=0, mask_margin=0)


def _stage_trajectories(ctx: _Context):
    scn, p, g = ctx.scn, ctx.p, ctx.grid
    flow = (scn.get("trajectories", "flow") or "corrected").lower()
    if flow == "corrected":
        source = ctx.ks if ctx.wave_source == "kg" else ctx.fluid
    elif ctx.wave_source == "kg":
        source = velocity_field(ctx.md, HiddenPhase.zero(g), ctx.potentials, p, warn=False)
    else:
        source = fluid_state(ctx.md, ctx.potentials, p)
    seeds = scn.get_floats("trajectories", "seeds")
    sampled = seeds is None
    if sampled:
        n = scn.get_int("trajectories", "n_seeds", 1000)
        seeds = sample_seeds(ctx.md.rho.values[0], g.x, n, rng_seed=scn.rng_seed)
    te = integrate(source, seeds, p=p, substeps=scn.get_int("trajectories", "substeps", 1),
                   rng_seed=scn.rng_seed if sampled else None)
    ctx.te = te
    ctx.summary["trajectories.n_seeds"] = te.n_seeds
    ctx.summary["trajectories.truncated"] = int(te.truncated.sum())
    ctx.summary["trajectories.final_mean_x"] = float(np.mean(te.paths[-1]))
    nbins = scn.get_int("trajectories", "bins")
    if sampled and nbins:
        rho = ctx.md.rho.values
        lo, hi = scn.get_float("trajectories", "x_lo", g.x[0]), scn.get_float("trajectories", "x_hi", g.x[-1])
        edges = np.linspace(lo, hi, nbins + 1)
        P, _ = ensemble_density(te, edges)
        dev = max(float(np.max(np.abs(P[n] - bin_probabilities(rho[n], g.x, edges)))) for n in range(g.nt))
        score = dev * np.sqrt(te.n_seeds)
        ctx.summary["trajectories.histogram_dev_sqrtN"] = score
        if flow == "bohm" or scn.get_bool("trajectories", "expect_equivariance", False):
            ctx.check("trajectories.histogram", score, ctx.profile["histogram_sigmas"])
    keep = scn.get_int("outputs", "trajectory_seeds", 0)
    artifacts.write_trajectories_csv(ctx.path("trajectories.csv"), te,
                                     seed_stride=-(-te.n_seeds // keep) if keep > 0 else 1,
                                     t_stride=scn.get_int("outputs", "trajectory_t_stride", 1))
    if ctx.figures:
        plotting.trajectories(ctx.path("trajectories.png"), te, g, ctx.md.rho.values)


def _stage_residuals(ctx: _Context):
    scn, p, a, md = ctx.scn, ctx.p, ctx.potentials, ctx.md
    fields = {}
    if ctx.wave_source == "kg":
        fields["hj_quantum"] = hj_quantum_residual(md, a, p)
        if ctx.hp is not None:
            lhs, rhs = creation_rate(md, ctx.hp, ctx.ks, p)
            fields["phi_condition"] = phi_condition_residual(md, ctx.hp, ctx.ks, p)
            fields["sourced_continuity"] = lhs - rhs
            eu = euler_residual(md, ctx.ks, a, ctx.hp, p)
            fields["euler_0"], fields["euler_1"] = eu.components()
    else:
        mom, cont = fluid_residuals(ctx.schrodinger, eps_rho=md.eps_rho)
        fields["fluid_momentum"], fields["fluid_continuity"] = mom, cont
        if ctx.fluid is not None:
            fields["newton_lorentz"] = newton_lorentz_residual(ctx.fluid, a, p)
            fields["sourced_continuity"] = sourced_continuity_residual(ctx.fluid, md, ctx.hp, p)
    maxima = {name: max_norm(f) for name, f in fields.items()}
    for name, val in maxima.items():
        ctx.summary[f"residuals.{name}_max"] = val
    if scn.get_bool("outputs", "stationary", False):
        for name in ("fluid_momentum", "fluid_continuity", "sourced_continuity"):
            if name in maxima:
                ctx.check(f"residuals.stationary.{name}", maxima[name], ctx.profile["stationary"])
    if ctx.figures and fields:
        g = ctx.grid
        series = {}
        for name, f in fields.items():
            vals = np.abs(f.values)
            if f.mask is not None:
                vals = np.where(f.mask, 0.0, vals)
            series[name] = vals[:, 4:-4].max(axis=1) if g.nx > 8 else vals.max(axis=1)
        plotting.residual_curves(ctx.path("residuals.png"), g.t, series, f"residuals ({ctx.wave_source})")


def _stage_lowspeed(ctx: _Context):
    scn, p = ctx.scn, ctx.p
    speeds = scn.get_floats("lowspeed", "speeds", [0.04, 0.02, 0.01])
    nx = scn.get_int("lowspeed", "nx", 256)
    cases = [SelfSimilarCase(speed=s, nx=nx) for s in speeds]

    def one(case):
        return case.run(p)[2].summary()

    with ThreadPoolExecutor(max_workers=max(1, ctx.threads)) as pool:
        results = list(pool.map(one, cases))
    keys = ("density_discrepancy_final", "density_discrepancy_max", "phase_discrepancy_final",
            "hj_residual_max", "dropped_term_max")
    rows = [[s] + [r[k] for k in keys] for s, r in zip(speeds, results)]
    artifacts.write_rows(ctx.path("lowspeed_report.csv"), ["speed"] + list(keys), rows)
    for s, r in zip(speeds, results):
        for k in keys:
            ctx.summary[f"lowspeed.{s:g}.{k}"] = r[k]
    order = np.argsort(speeds)
    dens = np.array([r["density_discrepancy_final"] for r in results])
    slowest = int(order[0])
    ctx.check("lowspeed.density_at_slowest", dens[slowest], ctx.profile["lowspeed_density"])
    sorted_d = dens[order]
    ctx.check("lowspeed.monotone", float(np.all(np.diff(sorted_d) > 0)), 1.0, mode="min")
    for i, s in enumerate(speeds):
        partner = [j for j, s2 in enumerate(speeds) if abs(s2 - 2 * s) < 1e-12]
        if partner:
            ratio = dens[partner[0]] / dens[i]
            ctx.summary[f"lowspeed.ratio_{2 * s:g}_{s:g}"] = ratio
            ctx.check(f"lowspeed.ratio_{2 * s:g}_{s:g}", ratio, ctx.profile["lowspeed_ratio"], mode="range")
    if ctx.figures:
        plotting.lowspeed_scaling(ctx.path("lowspeed.png"), speeds,
                                  {"density": dens, "hj_residual": [r["hj_residual_max"] for r in results]})


def _stage_kinematics(ctx: _Context):
    prof = ctx.profile
    res = kinematics.run_suite(ctx.p)
    artifacts.write_rows(ctx.path("kinematics.csv"), ["check", "value"], sorted(res.items()))
    cases = kinematics.action_catalog(ctx.p)
    for name, val in res.items():
        ctx.summary[f"kinematics.{name}"] = val
        kind, _, target = name.partition(".")
        if kind in ("div_h", "faraday", "force_identity"):
            ctx.check(f"kinematics.{name}", val, prof["maxwell_analog"])
        elif kind == "selfcheck":
            ctx.check(f"kinematics.{name}", val, prof["kinematics_selfcheck"])
        elif kind in ("rel_hj", "nonrel_hj", "lorentz_force"):
            on_shell = cases[target].on_shell_rel if kind == "rel_hj" else cases[target].on_shell_nonrel
            if on_shell:
                ctx.check(f"kinematics.{name}", val, prof["hj_on_shell"])
            else:
                ctx.check(f"kinematics.{name}", val, prof["hj_off_shell_min"], mode="min")
    if ctx.figures:
        plotting.check_bars(ctx.path("kinematics.png"), res, "kinematics suite")


STAGE_FUNCS = {
    "kg": _stage_kg,
    "schrodinger": _stage_schrodinger,
    "madelung": _stage_madelung,
    "hidden_phase": _stage_hidden_phase,
    "trajectories": _stage_trajectories,
    "residual-suite": _stage_residuals,
    "low-speed-compare": _stage_lowspeed,
    "kinematics-suite": _stage_kinematics,
}


def _field_columns(ctx: _Context) -> Dict[str, np.ndarray]:
    wanted = ctx.scn.get_list("outputs", "fields", [])
    for w in wanted:
        if w not in FIELD_COLUMNS:
            ctx.scn._fail("outputs", "fields", f"unknown field {w!r} (choose from {', '.join(FIELD_COLUMNS)})")
    sol = ctx.kg if ctx.wave_source == "kg" else ctx.schrodinger
    avail = {}
    if sol is not None:
        avail["re"] = lambda: sol.psi.values.real
        avail["im"] = lambda: sol.psi.values.imag
        avail["rho"] = lambda: np.abs(sol.psi.values) ** 2
    if ctx.md is not None:
        avail["S"] = lambda: ctx.md.S.values
        avail["Q"] = lambda: quantum_potential_Q(ctx.md.rho, ctx.p).values
    if ctx.hp is not None:
        avail["phi"] = lambda: ctx.hp.phi.values
    if ctx.ks is not None:
        avail["K"] = lambda: ctx.ks.K.values
        avail["dxdt"] = lambda: ctx.ks.dxdt().values
    if ctx.fluid is not None:
        avail["u"] = lambda: ctx.fluid.u.values
        avail["v"] = lambda: ctx.fluid.v.values
    if ctx.kg is not None and ctx.wave_source == "kg":
        def _j(i):
            return lambda: noether_current(ctx.kg).components()[i].values
        avail["j0"], avail["j1"] = _j(0), _j(1)
    out = {}
    for w in wanted:
        if w not in avail:
            ctx.scn._fail("outputs", "fields", f"field {w!r} is not produced by this pipeline")
        out[w] = np.asarray(avail[w](), dtype=float)
    return out


def run_scenario(scn: Scenario, out_dir, profile: str = "default", threads: int = 1,
                 input_bytes: Optional[bytes] = None) -> RunResult:
    """Run every stage in order and write artifacts plus ``manifest.json`` into ``out_dir``."""
    if profile not in PROFILES:
        raise ValueError(f"unknown tolerance profile {profile!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ctx = _Context(scn=scn, out_dir=out_dir, profile=PROFILES[profile], threads=threads,
                   figures=scn.get_bool("outputs", "figures", True))
    if scn.grid is not None:
        ctx.potentials = _potentials(ctx)
        ctx.psi0 = _initial_psi(ctx)
    for stage in scn.pipeline:
        log.info("stage %s", stage)
        STAGE_FUNCS[stage](ctx)

    cols = _field_columns(ctx)
    if cols:
        artifacts.write_field_csv(ctx.path("fields.csv"), ctx.grid, cols,
                                  t_stride=scn.get_int("outputs", "t_stride", 1),
                                  x_stride=scn.get_int("outputs", "x_stride", 1))
        if ctx.figures:
            first = next(iter(cols))
            plotting.field_map(ctx.path(f"field_{first}.png"), ctx.grid, cols[first], first, first)

    if input_bytes is None and scn.source is not None:
        input_bytes = Path(scn.source).read_bytes()
    manifest = {
        "scenario": scn.name,
        "description": scn.description,
        "package_version": __version__,
        "input_sha256": artifacts.sha256_bytes(input_bytes) if input_bytes is not None else None,
        "parameters": scn.echo(),
        "pipeline": list(scn.pipeline),
        "rng_seed": scn.rng_seed,
        "tolerance_profile": profile,
        "summary": ctx.summary,
        "checks": ctx.checks,
        "artifacts": {p.name: artifacts.sha256_file(p) for p in sorted(set(ctx.files))},
    }
    mpath = artifacts.write_manifest(out_dir / "manifest.json", manifest)
    return RunResult(manifest=manifest, out_dir=out_dir, files=sorted(set(ctx.files)) + [mpath])
