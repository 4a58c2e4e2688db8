"""Density/phase decomposition of a wave function and the quantities built on it."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .errors import AllNodeError
from .fields import (COVARIANT, ComplexField, FourVectorField, Potentials, PhysParams,
                     ScalarField, dalembertian, ddt, ddx, diff2)

DEFAULT_EPS_REL = 1e-8


@dataclass(frozen=True, eq=False)
class MadelungData:
    """``rho = |psi|^2`` and unwrapped phase ``S`` (action units).

    ``region_offsets`` lists ``(time_index, region_index, n)`` whenever a
    region separated by masked points was shifted by ``2 pi hbar n`` to
    re-anchor it to its left neighbour.
    """

    rho: ScalarField
    S: ScalarField
    node_mask: np.ndarray
    eps_rho: float
    hbar: float
    region_offsets: List[Tuple[int, int, int]] = field(default_factory=list)
    S_t: Optional[ScalarField] = None

    @property
    def grid(self):
        return self.rho.grid

    def action_rate(self) -> ScalarField:
        """``dS/dt``, taken from the wave function when it is available.

        The masked unwrap fills node cells by interpolation, so differencing
        ``S`` in time next to a moving node edge is meaningless; the phase of
        psi itself stays smooth there wherever psi is nonzero.
        """
        return self.S_t if self.S_t is not None else ddt(self.S)

    @property
    def sqrt_rho(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(self.rho.values), self.node_mask)


def _unwrap_row(phase, mask_row):
    """Unwrap one slice region by region; returns (unwrapped, offsets)."""
    out = np.unwrap(phase)
    if not mask_row.any():
        return out, []
    offsets = []
    valid = ~mask_row
    idx = np.flatnonzero(valid)
    # split valid indices into contiguous runs
    breaks = np.flatnonzero(np.diff(idx) > 1) + 1
    runs = np.split(idx, breaks)
    out = phase.copy()
    last = None
    for r, run in enumerate(runs):
        seg = np.unwrap(phase[run])
        if last is not None:
            n = int(np.round((last - seg[0]) / (2 * np.pi)))
            if n:
                offsets.append((r, n))
            seg = seg + 2 * np.pi * n
        out[run] = seg
        last = seg[-1]
    # masked points: linear fill so the slice stays finite and continuous
    masked = np.flatnonzero(mask_row)
    out[masked] = np.interp(masked, idx, out[idx])
    return out, offsets


def decompose(psi: ComplexField, eps_rho=None, hbar=1.0) -> MadelungData:
    """Split ``psi`` into density and unwrapped phase.

    The phase is unwrapped along x within each slice first, then along t in
    every column.  ``eps_rho`` defaults to ``1e-8 * max(rho)``.  For a KG
    solution marched in rest-phase form the unwrap runs on the envelope and
    the rest-energy rotation is added back analytically, since a coarse time
    step may turn the full phase by more than pi per step.
    """
    rest = None
    if hasattr(psi, "psi"):  # accept solution objects
        hbar = psi.params.hbar
        if getattr(psi, "rest_phase", False):
            rest = psi.params.rest_energy
        psi = psi.psi
    vals = psi.values
    g = psi.grid
    if rest is not None:
        # unwrap the slowly varying envelope; the rest rotation is added back exactly
        vals = vals * np.exp(1j * rest * (g.t - g.t0) / hbar)[:, None]
    rho = np.abs(vals) ** 2
    if eps_rho is None:
        eps_rho = DEFAULT_EPS_REL * float(rho.max())
    if eps_rho <= 0:
        raise ValueError("eps_rho must be positive")
    mask = rho < eps_rho
    full = np.flatnonzero(mask.all(axis=1))
    if full.size:
        raise AllNodeError(f"slice {int(full[0])} lies entirely below eps_rho={eps_rho:g}")
    phase = np.angle(vals)
    unwrapped = np.empty_like(phase)
    offsets = []
    for n in range(phase.shape[0]):
        unwrapped[n], offs = _unwrap_row(phase[n], mask[n])
        offsets.extend((n, r, k) for r, k in offs)
    unwrapped = np.unwrap(unwrapped, axis=0)
    # time unwrap of the raw phase, column by column, ignoring the mask
    raw_t = np.gradient(np.unwrap(phase, axis=0), g.dt, axis=0, edge_order=2) if g.nt >= 3 else \
        np.gradient(np.unwrap(phase, axis=0), g.dt, axis=0)
    if rest is not None:
        unwrapped -= rest * (g.t - g.t0)[:, None] / hbar
        raw_t = raw_t - rest / hbar
    node_mask = mask if mask.any() else np.zeros_like(mask)
    return MadelungData(rho=ScalarField(g, rho, node_mask), S=ScalarField(g, hbar * unwrapped, node_mask),
                        node_mask=node_mask, eps_rho=float(eps_rho), hbar=hbar,
                        region_offsets=offsets, S_t=ScalarField(g, hbar * raw_t, node_mask))


def reconstruct(md: MadelungData) -> ComplexField:
    vals = np.sqrt(md.rho.values) * np.exp(1j * md.S.values / md.hbar)
    return ComplexField(md.grid, vals, md.node_mask)


def _safe_ratio(num, den, mask):
    out = np.zeros_like(num)
    ok = ~mask
    out[ok] = num[ok] / den[ok]
    return out


def quantum_term_rel(md: MadelungData, p: PhysParams) -> ScalarField:
    """``hbar^2 (d^mu d_mu sqrt(rho)) / sqrt(rho)``; zero (and masked) at nodes."""
    R = md.sqrt_rho
    box = dalembertian(R, p).values
    return ScalarField(md.grid, p.hbar**2 * _safe_ratio(box, R.values, md.node_mask), md.node_mask)


def quantum_potential_Q(rho, p: PhysParams, dx=None):
    """Quantum potential ``-(hbar^2/2m) (sqrt(rho))_xx / sqrt(rho)``.

    Accepts a ScalarField (evaluated slice by slice) or a 1-D array with
    spacing ``dx``.  Points where rho vanishes carry zero.
    """
    if isinstance(rho, ScalarField):
        R = np.sqrt(rho.values)
        mask = rho.mask if rho.mask is not None else np.zeros(rho.grid.shape, dtype=bool)
        lap = diff2(R, rho.grid.dx, axis=1)
        vals = -p.hbar**2 / (2 * p.m) * _safe_ratio(lap, R, mask | (R == 0))
        return ScalarField(rho.grid, vals, rho.mask)
    R = np.sqrt(np.asarray(rho, dtype=float))
    if dx is None:
        raise ValueError("dx is required for array input")
    lap = diff2(R, dx, axis=-1)
    return -p.hbar**2 / (2 * p.m) * _safe_ratio(lap, R, R == 0)


def kinetic_momentum_w(md: MadelungData, a: Potentials, p: PhysParams) -> FourVectorField:
    """``m w_mu = -d_mu S - (q/c) A_mu`` (covariant)."""
    A = a.covariant()
    t = md.action_rate() * (-1.0 / p.c) - A.time_component * (p.q / p.c)
    x = -ddx(md.S) - A.space_component * (p.q / p.c)
    return FourVectorField(t, x, COVARIANT)


def w_field(md: MadelungData, a: Potentials, p: PhysParams) -> FourVectorField:
    """Naive four-velocity ``w_mu = -d_mu S / m - (q/mc) A_mu``."""
    return kinetic_momentum_w(md, a, p).scale(1.0 / p.m)


def hj_quantum_residual(md: MadelungData, a: Potentials, p: PhysParams) -> ScalarField:
    """``(m w)^mu (m w)_mu - m^2 c^2 - hbar^2 box(sqrt rho)/sqrt rho``; vanishes for KG solutions."""
    mw = kinetic_momentum_w(md, a, p)
    res = mw.norm2() - (p.m * p.c) ** 2 - quantum_term_rel(md, p)
    return ScalarField(md.grid, res.values, md.node_mask)


def timelike_defect(md: MadelungData, a: Potentials, p: PhysParams) -> ScalarField:
    """``w^mu w_mu - c^2``; changes sign where w fails to be a proper four-velocity."""
    w = w_field(md, a, p)
    return ScalarField(md.grid, (w.norm2() - p.c**2).values, md.node_mask)
