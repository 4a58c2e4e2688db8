"""Crank-Nicolson Schroedinger reference solver and the low-speed fluid suite."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import CausticError, DivergenceError, KGBohmError
from .fields import (ComplexField, Potentials, PhysParams, ScalarField, SpacetimeGrid,
                     ddt, ddx, diff2, electric_field, max_norm)
from .hidden_phase import HiddenPhase
from .kg import KGInitialData, KGSolution
from .madelung import MadelungData, decompose, quantum_potential_Q

log = logging.getLogger(__name__)

KINETIC_STEP_HINT = 0.5


@dataclass(frozen=True, eq=False)
class SchrodingerSolution:
    psi: ComplexField
    potentials: Potentials
    params: PhysParams

    @property
    def grid(self) -> SpacetimeGrid:
        return self.psi.grid

    def norms(self) -> np.ndarray:
        """Spatial L2 norm squared of every slice."""
        return np.sum(np.abs(self.psi.values) ** 2, axis=1) * self.grid.dx


def hamiltonian(grid: SpacetimeGrid, V_row, Ax_row, p: PhysParams):
    """Sparse lattice Hamiltonian ``(-i hbar d_x - (q/c) Ax)^2 / 2m + qV``.

    The vector potential enters through Peierls phases on the hopping terms,
    which keeps the matrix exactly Hermitian for any Ax.  Periodic grids wrap
    the hopping; otherwise the ends see hard walls.
    """
    nx, dx = grid.nx, grid.dx
    hop = p.hbar**2 / (2 * p.m * dx**2)
    Ax_row = np.asarray(Ax_row, dtype=float)
    Ax_mid = 0.5 * (Ax_row + np.roll(Ax_row, -1))
    theta = p.q * Ax_mid * dx / (p.hbar * p.c)
    diag = 2 * hop + p.q * np.asarray(V_row, dtype=float)
    upper = -hop * np.exp(1j * theta)  # H[j, j+1]
    H = sp.diags([diag.astype(complex), upper[:-1], np.conj(upper[:-1])], [0, 1, -1],
                 shape=(nx, nx), format="lil")
    if grid.periodic:
        H[nx - 1, 0] = upper[-1]
        H[0, nx - 1] = np.conj(upper[-1])
    return H.tocsc()


def evolve_schrodinger(psi0, a: Potentials, p: PhysParams, grid: SpacetimeGrid) -> SchrodingerSolution:
    """Crank-Nicolson march of i hbar psi_t = H psi.

    Static potentials reuse one LU factorisation; otherwise the Hamiltonian is
    rebuilt at every half step.
    """
    psi0 = np.asarray(psi0, dtype=complex)
    if psi0.shape != (grid.nx,):
        raise ValueError(f"psi0 has {psi0.size} points, grid has {grid.nx}")
    ratio = grid.dt * p.hbar / (p.m * grid.dx**2)
    if ratio > KINETIC_STEP_HINT:
        log.info("dt*hbar/(m dx^2) = %.3g exceeds the recommended %.2g", ratio, KINETIC_STEP_HINT)
    V, Ax = a.V.values, a.Ax.values
    static = np.array_equal(V, np.broadcast_to(V[0], V.shape)) and \
        np.array_equal(Ax, np.broadcast_to(Ax[0], Ax.shape))
    eye = sp.identity(grid.nx, dtype=complex, format="csc")
    fac = 0.5j * grid.dt / p.hbar

    out = np.empty(grid.shape, dtype=complex)
    out[0] = psi0
    lu = rhs_op = None
    for n in range(grid.nt - 1):
        if lu is None or not static:
            H = hamiltonian(grid, 0.5 * (V[n] + V[n + 1]), 0.5 * (Ax[n] + Ax[n + 1]), p)
            try:
                lu = splu((eye + fac * H).tocsc())
            except RuntimeError as exc:
                raise KGBohmError(f"Crank-Nicolson factorisation failed at step {n}: {exc}") from exc
            rhs_op = eye - fac * H
        out[n + 1] = lu.solve(rhs_op @ out[n])
        if not np.all(np.isfinite(out[n + 1])):
            raise DivergenceError(f"non-finite values at step {n + 1}", step=n + 1)
    return SchrodingerSolution(ComplexField(grid, out), a, p)


def gaussian_packet(x, x0, sigma, k0=0.0):
    """Normalised packet with |psi|^2 of standard deviation ``sigma``."""
    return (2 * np.pi * sigma**2) ** -0.25 * np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k0 * x)


def free_width(t, sigma0, p: PhysParams):
    """Standard deviation of a free Gaussian packet at time ``t``."""
    return sigma0 * np.sqrt(1 + (p.hbar * t / (2 * p.m * sigma0**2)) ** 2)


def packet_width(sol: SchrodingerSolution) -> np.ndarray:
    x = sol.grid.x
    rho = np.abs(sol.psi.values) ** 2
    norm = rho.sum(axis=1)
    mean = (rho * x).sum(axis=1) / norm
    var = (rho * (x - mean[:, None]) ** 2).sum(axis=1) / norm
    return np.sqrt(var)


def kg_initial_from_schrodinger(psi0, a: Potentials, p: PhysParams, grid: SpacetimeGrid) -> KGInitialData:
    """KG data for the positive-energy branch: psi0_dot = -(i/hbar)(m c^2 + H) psi0."""
    psi0 = np.asarray(psi0, dtype=complex)
    H = hamiltonian(grid, a.V.values[0], a.Ax.values[0], p)
    return KGInitialData(psi0, -1j / p.hbar * (p.rest_energy * psi0 + H @ psi0))


# ---------------------------------------------------------------------------
# fluid description

@dataclass(frozen=True, eq=False)
class FluidState:
    """Low-speed flow fields.  ``phi`` is None for the uncorrected (Phi = 0) flow."""

    u: ScalarField
    v: ScalarField
    Q: ScalarField
    E_field: ScalarField
    H_field: ScalarField
    rho: ScalarField
    params: PhysParams
    phi: Optional[ScalarField] = None
    phi_t: Optional[ScalarField] = None

    @property
    def grid(self):
        return self.u.grid


def u_field(md: MadelungData, a: Potentials, p: PhysParams) -> ScalarField:
    """``u = (S_x - (q/c) Ax) / m``."""
    u = (ddx(md.S) - a.Ax * (p.q / p.c)) * (1.0 / p.m)
    return ScalarField(md.grid, u.values, md.node_mask)


def fluid_state(md: MadelungData, a: Potentials, p: PhysParams) -> FluidState:
    u = u_field(md, a, p)
    g = md.grid
    return FluidState(u=u, v=u, Q=quantum_potential_Q(md.rho, p), E_field=electric_field(a, p),
                      H_field=ScalarField.zeros(g), rho=md.rho, params=p)


def _cross_1d(vel: ScalarField, H: ScalarField) -> ScalarField:
    """x-component of v x H for fields confined to x: identically zero in 1-D."""
    return ScalarField(vel.grid, np.zeros(vel.grid.shape))


def fluid_residuals(sol, eps_rho=None):
    """Momentum and continuity residuals of the uncorrected Madelung fluid.

    momentum   = m (u_t + u u_x) - qE - (q/c) u x H + Q_x
    continuity = rho_t + (rho u)_x
    """
    p = sol.params
    md = decompose(sol.psi, eps_rho=eps_rho, hbar=p.hbar)
    fl = fluid_state(md, sol.potentials, p)
    u = fl.u
    mom = (ddt(u) + u * ddx(u)) * p.m - fl.E_field * p.q - _cross_1d(u, fl.H_field) * (p.q / p.c) \
        + ddx(fl.Q)
    cont = ddt(md.rho) + ddx(md.rho * u)
    mask = md.node_mask
    return ScalarField(md.grid, mom.values, mask), ScalarField(md.grid, cont.values, mask)


def solve_phi_lowspeed(md: MadelungData, a: Potentials, p: PhysParams, phi0=None,
                       courant_max=0.5, caustic_jump=0.25) -> HiddenPhase:
    """March ``Phi_t = Q - u Phi_x - Phi_x^2 / 2m`` with Heun steps and centred differences.

    This is the slow-motion form of the hidden-phase condition (the corrected
    velocity is ``u + Phi_x / m``), solved with the same policy as the
    relativistic march.  Each grid step is split into substeps (coefficients
    interpolated linearly in time) whenever the local characteristic speed
    would exceed ``courant_max`` cells per substep.

    A CausticError is raised once neighbouring characteristics of the
    corrected flow close in by more than ``caustic_jump`` of a cell per step.
    """
    g = md.grid
    nt, nx = g.shape
    phi0 = np.zeros(nx) if phi0 is None else np.asarray(phi0, dtype=float)
    u = u_field(md, a, p).values
    Q = quantum_potential_Q(md.rho, p).values
    mask = md.node_mask
    if mask.any():
        # carry the coefficients into node regions by interpolation from the
        # nearest valid points, so the march sees no jump at the mask edge
        idx = np.arange(nx)
        u, Q = u.copy(), Q.copy()
        for n in range(nt):
            ok = ~mask[n]
            u[n] = np.interp(idx, idx[ok], u[n, ok])
            Q[n] = np.interp(idx, idx[ok], Q[n, ok])

    def rate_at(uu, qq, row):
        px = np.gradient(row, g.dx, edge_order=2)
        return qq - uu * px - px**2 / (2 * p.m), px

    def rate(n, row):
        return rate_at(u[n], Q[n], row)[0]

    phi = np.empty((nt, nx))
    rates = np.empty((nt, nx))
    phi[0] = phi0
    x = g.x
    taint = np.zeros((nt, nx))
    taint[0] = mask[0]
    for n in range(nt - 1):
        k1, px = rate_at(u[n], Q[n], phi[n])
        rates[n] = k1
        # substeps keep the advective Courant number of the march below courant_max
        speed = float(np.max(np.abs(u[n] + px / p.m)))
        nsub = max(1, int(np.ceil(speed * g.dt / (courant_max * g.dx))))
        h = g.dt / nsub
        row = phi[n]
        for j in range(nsub):
            s0, s1 = j / nsub, (j + 1) / nsub
            ka = k1 if j == 0 else rate_at((1 - s0) * u[n] + s0 * u[n + 1], (1 - s0) * Q[n] + s0 * Q[n + 1], row)[0]
            kb = rate_at((1 - s1) * u[n] + s1 * u[n + 1], (1 - s1) * Q[n] + s1 * Q[n + 1], row + h * ka)[0]
            row = row + 0.5 * h * (ka + kb)
        phi[n + 1] = row
        if not np.all(np.isfinite(phi[n + 1])):
            raise DivergenceError(f"low-speed hidden phase became non-finite at step {n + 1}", step=n + 1)
        v = u[n + 1] + np.gradient(phi[n + 1], g.dx, edge_order=2) / p.m
        # carry the node flag along characteristics of the corrected flow
        vm = 0.5 * (v + u[n] + px / p.m)
        taint[n + 1] = np.maximum(np.interp(x - vm * g.dt, x, taint[n]), mask[n + 1])
        closing = -np.diff(v) * g.dt / g.dx
        valid = ~(mask[n + 1, 1:] | mask[n + 1, :-1])
        if valid.any() and closing[valid].max() > caustic_jump:
            raise CausticError(f"corrected-flow characteristics cross near step {n + 1} "
                               f"(closing {closing[valid].max():.3g} cells per step)", step=n + 1)
    rates[-1] = rate(nt - 1, phi[-1])
    # Phi wherever a characteristic traces back into a node region carries
    # history from that region and is flagged
    m = (taint > 1e-3) if mask.any() else None
    return HiddenPhase(phi=ScalarField(g, phi, m), phi_t=ScalarField(g, rates, m), branch=1, phi0=phi0)


def corrected_flow(fluid: FluidState, phi) -> FluidState:
    """``v = u + Phi_x / m``; ``phi`` is a HiddenPhase or a ScalarField."""
    if isinstance(phi, HiddenPhase):
        phi_f, phi_t = phi.phi, phi.phi_t
    else:
        phi_f, phi_t = phi, None
    p = fluid.params
    v = fluid.u + ddx(phi_f) * (1.0 / p.m)
    return replace(fluid, v=ScalarField(fluid.grid, v.values, v.mask), phi=phi_f, phi_t=phi_t)


def newton_lorentz_residual(fluid: FluidState, a: Potentials, p: PhysParams) -> ScalarField:
    """``m (v_t + v v_x) - qE - (q/c) v x H``."""
    v = fluid.v
    res = (ddt(v) + v * ddx(v)) * p.m - electric_field(a, p) * p.q - _cross_1d(v, fluid.H_field) * (p.q / p.c)
    return ScalarField(fluid.grid, res.values, v.mask)


def sourced_continuity_residual(fluid: FluidState, md: MadelungData, hp, p: PhysParams) -> ScalarField:
    """``rho_t + (rho v)_x - (rho Phi_x)_x / m``.

    The source sign follows from ``rho_t + (rho u)_x = 0`` and
    ``v = u + Phi_x / m``; it is the slow-motion limit of the covariant
    balance ``d^mu (rho v_mu) = -d^mu (rho d_mu Phi) / m`` under the (+,-)
    metric, where the spatial part of ``d^mu`` carries a minus sign.
    """
    phi = hp.phi if isinstance(hp, HiddenPhase) else hp
    res = ddt(md.rho) + ddx(md.rho * fluid.v) - ddx(md.rho * ddx(phi)) * (1.0 / p.m)
    return ScalarField(md.grid, res.values, res.mask)


def creation_source(md: MadelungData, hp, p: PhysParams) -> ScalarField:
    """Local creation rate ``(rho Phi_x)_x / m`` of the corrected low-speed flow."""
    phi = hp.phi if isinstance(hp, HiddenPhase) else hp
    return ScalarField(md.grid, (ddx(md.rho * ddx(phi)) * (1.0 / p.m)).values, md.node_mask)


# ---------------------------------------------------------------------------
# relativistic vs non-relativistic comparison

@dataclass(frozen=True, eq=False)
class LowSpeedReport:
    density_discrepancy: np.ndarray   # per slice, relative L2
    phase_discrepancy: np.ndarray     # per slice, rho-weighted rms (action units)
    hj_residual: ScalarField
    dropped_term: ScalarField         # hbar^2 (sqrt rho)_tt / (c^2 sqrt rho) on the KG side
    rho: Optional[np.ndarray] = None  # KG density, used to pick out the bulk

    def summary(self, margin=4, bulk=1e-4):
        """Scalar digest; field maxima are taken where rho >= bulk * max(rho).

        Far tails hold a tiny density whose curvature ratio is dominated by
        truncation error, so they are left out of the field maxima.
        """
        where = None if self.rho is None else self.rho >= bulk * self.rho.max()
        return {
            "density_discrepancy_final": float(self.density_discrepancy[-1]),
            "density_discrepancy_max": float(np.max(self.density_discrepancy)),
            "phase_discrepancy_final": float(self.phase_discrepancy[-1]),
            "hj_residual_max": max_norm(self.hj_residual, margin, where=where),
            "dropped_term_max": max_norm(self.dropped_term, margin, where=where),
        }


def strip_rest_phase(psi: ComplexField, p: PhysParams) -> ComplexField:
    """``psi * exp(i m c^2 (t - t0) / hbar)``."""
    g = psi.grid
    ph = np.exp(1j * p.compton_frequency * (g.t - g.t0))
    return ComplexField(g, psi.values * ph[:, None], psi.mask)


def low_speed_compare(kg: KGSolution, s: SchrodingerSolution, p: PhysParams, eps_rho=None) -> LowSpeedReport:
    """Compare a KG solution with the Schroedinger evolution of the same packet.

    The KG phase is compared after removing the rest-energy rotation, so
    ``S_kg + m c^2 t`` is set against the Schroedinger phase.
    """
    if kg.grid != s.grid:
        raise ValueError("KG and Schroedinger solutions live on different grids")
    g = kg.grid
    md_kg = decompose(strip_rest_phase(kg.psi, p), eps_rho=eps_rho, hbar=p.hbar)
    md_s = decompose(s.psi, eps_rho=eps_rho, hbar=p.hbar)
    rk, rs = md_kg.rho.values, md_s.rho.values
    dens = np.linalg.norm(rk - rs, axis=1) / np.linalg.norm(rs, axis=1)

    w = rs / rs.sum(axis=1, keepdims=True)
    dS = md_kg.S.values - md_s.S.values
    dS = dS - (w * dS).sum(axis=1, keepdims=True)
    phase = np.sqrt((w * dS**2).sum(axis=1))

    a = kg.potentials
    R = np.sqrt(rk)
    Rxx = diff2(R, g.dx, axis=1)
    Rtt = diff2(R, g.dt, axis=0)
    mask = md_kg.node_mask
    safe = np.where(mask, 1.0, R)
    # S_kg(stripped) = S_kg + m c^2 t, so S_t + m c^2 is the stripped derivative
    St = md_kg.action_rate().values
    Sx = ddx(md_kg.S).values
    hj_res = (St + (Sx - p.q / p.c * a.Ax.values) ** 2 / (2 * p.m)
            - p.hbar**2 / (2 * p.m) * Rxx / safe + p.q * a.V.values)
    dropped = p.hbar**2 * Rtt / (p.c**2 * safe)
    return LowSpeedReport(density_discrepancy=dens, phase_discrepancy=phase,
                          hj_residual=ScalarField(g, np.where(mask, 0.0, hj_res), mask),
                          dropped_term=ScalarField(g, np.where(mask, 0.0, dropped), mask), rho=rk)


@dataclass(frozen=True)
class SelfSimilarCase:
    """Moving packet whose shape is fixed in units of its own width.

    The packet width is ``sigma = 1 / speed`` (in units of hbar / mc) and
    the carrier wave number gives group speed ``speed * c``, so every case
    covers the same number of widths and spreading times; only ``v/c``
    changes.  The KG march uses the rest-phase form, which allows a time
    step of ``cfl * dx``.
    """

    speed: float
    nx: int = 256
    box: float = 20.0          # domain length in packet widths
    horizon: float = 0.5       # run time in units of m sigma^2 / hbar
    # centred so both tails sit ~1e-11 below the peak at the periodic seam;
    # a visible seam seeds lattice-scale modes that swamp the (v/c)^2 terms
    start: float = 0.0         # packet centre as a fraction of the domain
    cfl: float = 0.9

    def grid(self, p: PhysParams) -> SpacetimeGrid:
        sigma = self.sigma(p)
        L = self.box * sigma
        dx = L / self.nx
        dt = self.cfl * dx / p.c
        T = self.horizon * p.m * sigma**2 / p.hbar
        nt = int(np.ceil(T / dt)) + 1
        return SpacetimeGrid.periodic_box(L, self.nx, dt, nt, x_min=-L / 2)

    def sigma(self, p: PhysParams) -> float:
        return p.hbar / (p.m * p.c * self.speed)

    def run(self, p: PhysParams, eps_rho=None):
        """Evolve both equations; returns ``(kg, schrodinger, report)``."""
        from .kg import evolve_kg, positive_energy_initial_data

        if not 0 < self.speed < 1:
            raise ValueError("speed must lie in (0, 1) in units of c")
        g = self.grid(p)
        k0 = self.speed * p.m * p.c / p.hbar
        psi0 = gaussian_packet(g.x, self.start * g.length, self.sigma(p), k0)
        a = Potentials.zero(g)
        # projecting onto the positive-frequency branch keeps the 2 m c^2
        # oscillation of the other branch out of the phase comparison
        kg = evolve_kg(positive_energy_initial_data(psi0, g, p), a, p, g, rest_phase=True)
        s = evolve_schrodinger(psi0, a, p, g)
        return kg, s, low_speed_compare(kg, s, p, eps_rho=eps_rho)
