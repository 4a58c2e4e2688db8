"""Particle world-lines along a lattice velocity field and ensemble diagnostics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from .fields import CONTRAVARIANT, FourVectorField, Potentials, PhysParams, ScalarField, SpacetimeGrid, ddx
from .hidden_phase import HiddenPhase, KineticState
from .madelung import MadelungData

DEFAULT_RNG_SEED = 20240601


@dataclass(frozen=True, eq=False)
class TrajectoryEnsemble:
    """Paths of a set of seeds, one sample per grid time step.

    ``stop`` holds, per seed, the last step index with a trustworthy sample.
    A seed that strays into a masked cell (or off a non-periodic grid) is
    flagged in ``truncated`` and held at its last position afterwards, so all
    arrays stay finite.
    """

    seeds: np.ndarray
    t: np.ndarray
    paths: np.ndarray        # (nt, nseeds)
    velocities: np.ndarray   # (nt, nseeds), dx/dt at each sample
    stop: np.ndarray
    truncated: np.ndarray
    rng_seed: Optional[int] = None

    @property
    def n_seeds(self) -> int:
        return self.seeds.size

    def path(self, i: int) -> np.ndarray:
        """Trustworthy part of path ``i``."""
        return self.paths[: self.stop[i] + 1, i]

    def alive(self, n: int) -> np.ndarray:
        """Seeds whose path is still trustworthy at step ``n``."""
        return self.stop >= n


VelocitySource = Union[ScalarField, KineticState, Callable]


def _velocity_field(source) -> Optional[ScalarField]:
    if isinstance(source, KineticState):
        return source.dxdt()
    if isinstance(source, ScalarField):
        return source
    if hasattr(source, "v") and isinstance(getattr(source, "v"), ScalarField):  # FluidState
        return source.v
    if callable(source):
        return None
    raise TypeError(f"cannot take a velocity field from {type(source).__name__}")


class _Interpolator:
    """Bilinear (t, x) lookup with mask and domain checks."""

    def __init__(self, field: ScalarField):
        g = field.grid
        self.g = g
        self.vals = field.values
        self.mask = field.mask

    def __call__(self, t, x):
        g = self.g
        s = (t - g.t0) / g.dt
        n = int(np.clip(np.floor(s), 0, g.nt - 2))
        a = s - n
        r = (x - g.x_min) / g.dx
        if g.periodic:
            r = np.mod(r, g.nx)
            j = np.floor(r).astype(int)
            j1 = (j + 1) % g.nx
            out = np.zeros(x.shape, dtype=bool)
        else:
            out = (r < 0) | (r > g.nx - 1)
            j = np.clip(np.floor(r).astype(int), 0, g.nx - 2)
            j1 = j + 1
        b = r - j
        v = self.vals
        val = ((1 - a) * ((1 - b) * v[n, j] + b * v[n, j1])
               + a * ((1 - b) * v[n + 1, j] + b * v[n + 1, j1]))
        bad = out
        if self.mask is not None:
            m = self.mask
            bad = bad | m[n, j] | m[n, j1] | m[n + 1, j] | m[n + 1, j1]
        return val, bad


def integrate(source: VelocitySource, seeds, grid: Optional[SpacetimeGrid] = None,
              p: Optional[PhysParams] = None, substeps: int = 1, rng_seed=None) -> TrajectoryEnsemble:
    """Classical RK4 integration of ``dx/dt`` from every seed.

    ``source`` is a KineticState (relativistic ``c^2 P / K``), a FluidState
    (its ``v``), a ScalarField of dx/dt, or a callable ``f(t, x)`` for analytic
    fields (then ``grid`` supplies the time axis).  Lattice fields are
    interpolated bilinearly in (t, x).  ``p`` is accepted for symmetry with
    the other entry points; the velocity already carries the physics.
    """
    field = _velocity_field(source)
    if field is not None:
        grid = field.grid
        interp = _Interpolator(field)
    elif grid is None:
        raise ValueError("an analytic velocity needs a grid for its time axis")
    else:
        def interp(t, x):
            return np.asarray(source(t, x), dtype=float) * np.ones_like(x), np.zeros(x.shape, dtype=bool)

    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    x = np.array(seeds, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("no seeds given")
    g = grid
    if g.periodic:
        x = g.x_min + np.mod(x - g.x_min, g.length)
    elif np.any((x < g.x_min) | (x > g.x[-1])):
        raise ValueError("seeds must lie inside the grid")
    nt = g.nt
    paths = np.empty((nt, x.size))
    vel = np.empty((nt, x.size))
    stop = np.full(x.size, nt - 1)
    alive = np.ones(x.size, dtype=bool)
    paths[0] = x
    v0, bad0 = interp(g.t[0], x)
    vel[0] = v0
    alive &= ~bad0
    stop[bad0] = 0
    h = g.dt / substeps
    for n in range(nt - 1):
        cur = paths[n].copy()
        bad = np.zeros(x.size, dtype=bool)
        for j in range(substeps):
            t = g.t[n] + j * h
            k1, b1 = interp(t, cur)
            k2, b2 = interp(t + h / 2, cur + h / 2 * k1)
            k3, b3 = interp(t + h / 2, cur + h / 2 * k2)
            k4, b4 = interp(t + h, cur + h * k3)
            cur = cur + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            bad |= b1 | b2 | b3 | b4
        if g.periodic:
            cur = g.x_min + np.mod(cur - g.x_min, g.length)
        vn, bn = interp(g.t[n + 1], cur)
        bad |= bn | ~np.isfinite(cur)
        newly = alive & bad
        stop[newly] = n
        alive &= ~bad
        paths[n + 1] = np.where(alive, cur, paths[n])
        vel[n + 1] = np.where(alive, vn, 0.0)
    return TrajectoryEnsemble(seeds=np.array(seeds, dtype=float).ravel(), t=g.t.copy(), paths=paths,
                              velocities=vel, stop=stop, truncated=stop < nt - 1, rng_seed=rng_seed)


def sample_seeds(rho_row, x, n: int, rng_seed: int = DEFAULT_RNG_SEED) -> np.ndarray:
    """Draw ``n`` positions from a lattice density by inverse-CDF sampling."""
    rho_row = np.asarray(rho_row, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(rho_row < 0) or not np.any(rho_row > 0):
        raise ValueError("density must be non-negative with positive mass")
    cdf = cumulative_trapezoid(rho_row, x, initial=0.0)
    cdf /= cdf[-1]
    u = np.random.default_rng(rng_seed).random(n)
    return np.sort(np.interp(u, cdf, x))


def ensemble_density(te: TrajectoryEnsemble, bins) -> tuple:
    """Per-slice histogram of the ensemble, normalised to unit total.

    Returns ``(probabilities, edges)`` with ``probabilities`` of shape
    ``(nt, nbins)``; only seeds still trusted at a step are counted.
    Empty bins are fine.
    """
    edges = np.asarray(bins, dtype=float) if np.ndim(bins) else None
    if edges is None:
        edges = np.histogram_bin_edges(te.paths[0], bins=int(bins))
    out = np.zeros((te.t.size, edges.size - 1))
    for n in range(te.t.size):
        pts = te.paths[n, te.alive(n)]
        if pts.size:
            out[n] = np.histogram(pts, bins=edges)[0] / pts.size
    return out, edges


def bin_probabilities(rho_row, x, edges) -> np.ndarray:
    """Mass of a lattice density in each bin (density interpolated linearly)."""
    rho_row = np.asarray(rho_row, dtype=float)
    cdf = cumulative_trapezoid(rho_row, x, initial=0.0)
    total = cdf[-1]
    return np.diff(np.interp(edges, x, cdf)) / total


def source_mismatch_oracle(md: MadelungData, hp: HiddenPhase, p: PhysParams, edges) -> np.ndarray:
    """Predicted ``P_rho - P_ensemble`` per bin from the integrated creation source.

    The ensemble moves with ``v = u + Phi_x / m`` and so conserves number,
    while rho gains ``(rho Phi_x)_x / m``.  Integrating that source over each
    bin turns it into the flux difference at the bin edges, accumulated in
    time.  This neglects transport of the mismatch itself, so it is accurate
    while the mismatch stays small or the corrected flow is slow.
    """
    g = md.grid
    phi = hp.phi if isinstance(hp, HiddenPhase) else hp
    F = md.rho.values * ddx(phi).values / p.m
    if md.node_mask is not None:
        F = np.where(md.node_mask, 0.0, F)
    norm = trapezoid(md.rho.values[0], g.x)
    at_edges = np.array([np.interp(edges, g.x, row) for row in F])
    per_bin = np.diff(at_edges, axis=1) / norm
    return cumulative_trapezoid(per_bin, g.t, axis=0, initial=0.0)


# ---------------------------------------------------------------------------
# circulation

@dataclass(frozen=True)
class ClosedLoop:
    """A closed path of lattice sites on one time slice.

    ``sites`` is a sequence of x indices whose consecutive entries are
    neighbours (differ by one, modulo nx on a periodic grid) and whose first
    and last entries coincide.
    """

    time_index: int
    sites: tuple

    @classmethod
    def full_circle(cls, grid: SpacetimeGrid, time_index: int, windings: int = 1) -> "ClosedLoop":
        if not grid.periodic:
            raise ValueError("a full circle needs a periodic grid")
        step = 1 if windings >= 0 else -1
        sites = [(step * i) % grid.nx for i in range(abs(windings) * grid.nx + 1)]
        return cls(time_index, tuple(sites))


class CirculationReport(NamedTuple):
    lhs: float       # loop integral of m v
    rhs: float       # -(q/c) times the loop integral of A
    winding: int     # integer n in lhs - rhs = 2 pi hbar n
    defect: float    # lhs - rhs - 2 pi hbar n


def _loop_steps(grid: SpacetimeGrid, loop) -> tuple:
    if not isinstance(loop, ClosedLoop):
        loop = ClosedLoop(*loop)
    sites = np.asarray(loop.sites, dtype=int)
    if sites.size < 2 or sites[0] != sites[-1]:
        raise ValueError("loop is open: first and last sites differ")
    if not 0 <= loop.time_index < grid.nt:
        raise ValueError("loop time index outside the grid")
    if np.any((sites < 0) | (sites >= grid.nx)):
        raise ValueError("loop site outside the grid")
    d = np.diff(sites)
    if grid.periodic:
        d = (d + grid.nx // 2) % grid.nx - grid.nx // 2
    if np.any(np.abs(d) != 1):
        raise ValueError("consecutive loop sites must be lattice neighbours")
    return loop.time_index, sites, d


def _line_integral(row, sites, d, dx):
    return float(np.sum(0.5 * (row[sites[:-1]] + row[sites[1:]]) * d * dx))


def circulation_check(p_field, a: Potentials, loop, p: PhysParams) -> CirculationReport:
    """Compare the loop integral of the kinetic momentum with ``-(q/c)`` times that of A.

    ``p_field`` is the kinetic four-momentum ``m v`` (either variance) or a
    KineticState.  The two sides differ by ``2 pi hbar n`` when the phase
    winds ``n`` times around the loop; ``n`` is reported with the defect
    left after removing it.
    """
    if isinstance(p_field, KineticState):
        P = p_field.momentum
    elif isinstance(p_field, FourVectorField):
        P = (p_field if p_field.variance == CONTRAVARIANT else p_field.raise_index()).space_component
    else:
        raise TypeError("p_field must be a FourVectorField or KineticState")
    g = P.grid
    n, sites, d = _loop_steps(g, loop)
    lhs = _line_integral(P.values[n], sites, d, g.dx)
    rhs = -p.q / p.c * _line_integral(a.Ax.values[n], sites, d, g.dx)
    quantum = 2 * np.pi * p.hbar
    wind = int(np.round((lhs - rhs) / quantum))
    return CirculationReport(lhs, rhs, wind, lhs - rhs - wind * quantum)
