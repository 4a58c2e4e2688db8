"""Reconstruction of the hidden phase and the corrected particle flow.

The hidden phase ``Phi`` is fixed by requiring the corrected kinetic momentum
``m v_mu = -d_mu (S + Phi) - (q/c) A_mu`` to lie on the mass shell.  In 1+1-D
the shell condition can be solved for the time derivative,

    Phi_t = -K - qV - S_t,    K = branch * c * sqrt(m^2 c^2 + P^2),
    P = d_x (S + Phi) - (q/c) Ax,

and marched forward from an initial slice with a two-stage (Heun) scheme.
The family of admissible ``Phi`` is parametrised by that initial slice and
by the energy branch; nothing here picks a preferred member.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CausticError, DivergenceError
from .fields import (COVARIANT, FourVectorField, Potentials, PhysParams, ScalarField,
                     TensorField, covariant_gradient, ddt, ddx, ddx_masked, faraday,
                     four_divergence, max_norm, _row_diff_runs)
from .madelung import MadelungData, quantum_potential_Q, quantum_term_rel

MASS_SHELL_TOL = 1e-8
# neighbouring kinetic momenta differing by more than this fraction of
# (mc + max|P|) signal crossing characteristics
CAUSTIC_JUMP = 0.25


@dataclass(frozen=True, eq=False)
class HiddenPhase:
    """Solved hidden phase.

    ``phi_t`` is the time derivative the march actually used on every slice;
    the corrected velocity takes its energy component from it so the mass
    shell holds to rounding.  FD derivatives of ``phi`` are reserved for the
    independent checks.
    """

    phi: ScalarField
    phi_t: ScalarField
    branch: int = 1
    phi0: Optional[np.ndarray] = None
    residual_report: dict = field(default_factory=dict)
    region_offsets: list = field(default_factory=list)

    @property
    def grid(self):
        return self.phi.grid

    @classmethod
    def zero(cls, grid):
        """Phi forced to vanish identically (reduces the flow to w)."""
        z = ScalarField.zeros(grid)
        return cls(phi=z, phi_t=z, branch=1, phi0=np.zeros(grid.nx))

    def shifted(self, const) -> "HiddenPhase":
        return HiddenPhase(self.phi + const, self.phi_t, self.branch,
                           None if self.phi0 is None else self.phi0 + const,
                           dict(self.residual_report), list(self.region_offsets))


@dataclass(frozen=True, eq=False)
class KineticState:
    """Corrected four-velocity (covariant) and kinetic energy."""

    v: FourVectorField
    K: ScalarField
    params: PhysParams
    shell_ok: bool = True

    @property
    def grid(self):
        return self.K.grid

    @property
    def momentum(self) -> ScalarField:
        """Contravariant spatial kinetic momentum ``m v^1``."""
        return -self.v.space_component * self.params.m

    def dxdt(self) -> ScalarField:
        """Coordinate velocity ``c v^1 / v^0``."""
        p = self.params
        vals = p.c * (-self.v.space_component.values) / self.v.time_component.values
        return ScalarField(self.grid, vals, self.K.mask)


def _phi_rate(p, branch, S_row, phi_row, St_row, V_row, Ax_row, dx, mask_row):
    P = _row_gradient(S_row + phi_row, dx, mask_row) - p.q / p.c * Ax_row
    K = branch * p.c * np.sqrt((p.m * p.c) ** 2 + P**2)
    rate = -K - p.q * V_row - St_row
    if mask_row is not None:
        rate[mask_row] = 0.0
    return rate


def _row_gradient(row, dx, mask_row):
    if mask_row is None:
        return np.gradient(row, dx, edge_order=2)
    return _row_diff_runs(row, dx, mask_row)


def solve_phi(md: MadelungData, a: Potentials, p: PhysParams, phi0=None, branch: int = 1,
              tol: float = MASS_SHELL_TOL, caustic_jump: Optional[float] = CAUSTIC_JUMP) -> HiddenPhase:
    """March the mass-shell condition for Phi from ``phi0`` (default zero).

    Raises CausticError at the first step where the kinetic momentum jumps
    between neighbours by more than ``caustic_jump`` (relative); pass None to
    disable the check.
    """
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    g = md.grid
    nt, nx = g.shape
    phi0 = np.zeros(nx) if phi0 is None else np.asarray(phi0, dtype=float)
    if phi0.shape != (nx,):
        raise ValueError(f"phi0 must have {nx} points")
    mask = md.node_mask if md.node_mask.any() else None
    if mask is not None and not np.all(np.isfinite(phi0[~mask[0]])):
        raise ValueError("phi0 must be finite on unmasked points")
    phi0 = np.where(np.isfinite(phi0), phi0, 0.0)

    S = md.S.values
    St = md.action_rate().values
    V, Ax = a.V.values, a.Ax.values

    def rate(n, row):
        return _phi_rate(p, branch, S[n], row, St[n], V[n], Ax[n], g.dx,
                         None if mask is None else mask[n])

    phi = np.empty((nt, nx))
    rates = np.empty((nt, nx))
    phi[0] = phi0
    for n in range(nt - 1):
        k1 = rate(n, phi[n])
        rates[n] = k1
        pred = phi[n] + g.dt * k1
        k2 = rate(n + 1, pred)
        phi[n + 1] = phi[n] + 0.5 * g.dt * (k1 + k2)
        if mask is not None and mask[n + 1].any():
            # node cells follow their live neighbours, so a cell uncovered
            # later starts from a continuous value instead of phi0
            live = np.flatnonzero(~mask[n + 1])
            dead = np.flatnonzero(mask[n + 1])
            phi[n + 1, dead] = np.interp(dead, live, phi[n + 1, live])
        if not np.all(np.isfinite(phi[n + 1])):
            raise DivergenceError(f"hidden phase became non-finite at step {n + 1}", step=n + 1)
        if caustic_jump is not None:
            _check_caustic(p, S[n + 1] + phi[n + 1], Ax[n + 1], g.dx,
                           None if mask is None else mask[n + 1], caustic_jump, n + 1)
    rates[nt - 1] = rate(nt - 1, phi[nt - 1])

    offsets = _gap_offsets(phi[-1], mask[-1]) if mask is not None else []
    hp = HiddenPhase(phi=ScalarField(g, phi, mask), phi_t=ScalarField(g, rates, mask),
                     branch=branch, phi0=phi0, region_offsets=offsets)
    ks = velocity_field(md, hp, a, p, tol=tol, warn=False)
    report = {
        "mass_shell_max": max_norm(mass_shell_residual(ks, p), margin=0),
        "phi_condition_max": max_norm(phi_condition_residual(md, hp, ks, p)),
    }
    return HiddenPhase(hp.phi, hp.phi_t, branch, phi0, report, offsets)


def _check_caustic(p, total_row, Ax_row, dx, mask_row, limit, step):
    P = _row_gradient(total_row, dx, mask_row) - p.q / p.c * Ax_row
    jumps = np.abs(np.diff(P))
    if mask_row is not None:
        jumps = jumps[~(mask_row[1:] | mask_row[:-1])]
    if jumps.size == 0:
        return
    scale = p.m * p.c + np.max(np.abs(P))
    if np.max(jumps) > limit * scale:
        raise CausticError(f"characteristics cross near step {step} (momentum jump "
                           f"{np.max(jumps) / scale:.3g} of scale)", step=step)


def _gap_offsets(row, mask_row):
    """Jumps of Phi across masked gaps on a slice (right edge minus left edge)."""
    idx = np.flatnonzero(~mask_row)
    runs = np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1)
    return [float(row[b[0]] - row[a[-1]]) for a, b in zip(runs[:-1], runs[1:])]


def velocity_field(md: MadelungData, hp: HiddenPhase, a: Potentials, p: PhysParams,
                   tol: float = MASS_SHELL_TOL, warn: bool = True) -> KineticState:
    """``m v_mu = -d_mu S - d_mu Phi - (q/c) A_mu`` with ``K = -S_t - Phi_t - qV``."""
    g = md.grid
    mask = md.node_mask if md.node_mask.any() else None
    total = ScalarField(g, md.S.values + hp.phi.values, mask)
    P = ddx_masked(total).values - p.q / p.c * a.Ax.values
    K = -md.action_rate().values - hp.phi_t.values - p.q * a.V.values
    v0 = ScalarField(g, K / (p.m * p.c), mask)
    v1 = ScalarField(g, -P / p.m, mask)
    v = FourVectorField(v0, v1, COVARIANT)
    shell = max_norm(ScalarField(g, (v.norm2() - p.c**2).values, mask), margin=0)
    ok = shell <= tol * max(1.0, p.c**2)
    if not ok and warn:
        warnings.warn(f"mass-shell residual {shell:.3g} exceeds tolerance {tol:g}",
                      RuntimeWarning, stacklevel=2)
    return KineticState(v=v, K=ScalarField(g, K, mask), params=p, shell_ok=ok)


def mass_shell_residual(ks: KineticState, p: PhysParams) -> ScalarField:
    """``v^mu v_mu - c^2``."""
    return ScalarField(ks.grid, (ks.v.norm2() - p.c**2).values, ks.K.mask)


def _phi_gradient(hp, p):
    return covariant_gradient(hp.phi, p)


def phi_condition_residual(md, hp, ks, p) -> ScalarField:
    """``2m v^mu d_mu Phi + d^mu Phi d_mu Phi - hbar^2 box(sqrt rho)/sqrt rho``.

    Uses finite-difference derivatives of Phi, so it checks the march
    independently of the construction of ``v``.
    """
    dphi = _phi_gradient(hp, p)
    res = 2 * p.m * ks.v.dot(dphi) + dphi.norm2() - quantum_term_rel(md, p)
    return ScalarField(md.grid, res.values, md.node_mask)


def creation_rate(md, hp, ks, p):
    """``(d^mu (rho v_mu), -d^mu (rho d_mu Phi) / m)``; equal for consistent states."""
    lhs = four_divergence(ks.v.scale(md.rho), p)
    rhs = four_divergence(_phi_gradient(hp, p).scale(md.rho), p) * (-1.0 / p.m)
    return (ScalarField(md.grid, lhs.values, md.node_mask),
            ScalarField(md.grid, rhs.values, md.node_mask))


def stress_tensor(md, ks, p) -> TensorField:
    """Pressure-less dust tensor ``T_mu nu = m rho v_mu v_nu``."""
    v = ks.v.components()
    comps = [[None, None], [None, None]]
    for mu in range(2):
        for nu in range(mu, 2):
            comps[mu][nu] = md.rho * v[mu] * v[nu] * p.m
    comps[1][0] = comps[0][1]
    return TensorField(((comps[0][0], comps[0][1]), (comps[1][0], comps[1][1])), symmetry="symmetric")


def _source_divergence(md, hp, p) -> ScalarField:
    """``d^nu (rho d_nu Phi)``."""
    return four_divergence(_phi_gradient(hp, p).scale(md.rho), p)


def quantum_force(md, hp, ks, p) -> FourVectorField:
    """``K_mu = -v_mu d^nu (rho d_nu Phi)``."""
    src = _source_divergence(md, hp, p)
    return ks.v.scale(src * -1.0)


def euler_residual(md, ks, a, hp, p) -> FourVectorField:
    """``d^nu T_mu nu - (q/c) rho v^nu F_mu nu + v_mu d^nu (rho d_nu Phi)``."""
    T = stress_tensor(md, ks, p)
    F01 = faraday(a, p)[0, 1]
    v0, v1 = ks.v.components()
    up0, up1 = v0, -v1
    src = _source_divergence(md, hp, p)
    out = []
    for mu, (fterm, vmu) in enumerate(((up1 * F01, v0), (up0 * F01 * -1.0, v1))):
        divT = ddt(T[mu, 0]) * (1.0 / p.c) - ddx(T[mu, 1])
        res = divT - md.rho * fterm * (p.q / p.c) + vmu * src
        out.append(ScalarField(md.grid, res.values, md.node_mask))
    return FourVectorField(out[0], out[1], COVARIANT)


def lowspeed_consistency(md, hp, a, p) -> ScalarField:
    """``Phi_t + (S_x - (q/c)Ax) Phi_x / m + Phi_x^2 / 2m - Q``.

    Vanishes in the slow-motion limit up to terms of order (v/c)^2.
    """
    S_x = ddx(md.S).values
    phi_x = ddx(hp.phi).values
    Q = quantum_potential_Q(md.rho, p).values
    vals = (hp.phi_t.values + (S_x - p.q / p.c * a.Ax.values) * phi_x / p.m
            + phi_x**2 / (2 * p.m) - Q)
    return ScalarField(md.grid, vals, md.node_mask)
