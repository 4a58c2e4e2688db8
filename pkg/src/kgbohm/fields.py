"""Lattice, sampled fields and the finite-difference calculus on a 1+1-D grid.

Conventions used throughout the package: metric signature (+, -),
coordinates x^0 = c t and x^1 = x, so that ``d_0 = (1/c) d/dt``,
``d_1 = d/dx``, ``d^0 = d_0`` and ``d^1 = -d_1``.  The electromagnetic
four-potential has covariant components ``A_mu = (V, -Ax)``.

Field values are stored as full space-time blocks of shape ``(nt, nx)``;
row ``n`` is the slice at ``t0 + n*dt`` and column ``j`` sits at
``x_min + j*dx``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.ndimage import binary_dilation

from .errors import DegenerateGridError, VarianceError

COVARIANT = "covariant"
CONTRAVARIANT = "contravariant"


@dataclass(frozen=True)
class PhysParams:
    """Physical constants.  Defaults are natural units hbar = c = m = 1."""

    hbar: float = 1.0
    c: float = 1.0
    m: float = 1.0
    q: float = 1.0

    def __post_init__(self):
        for name in ("hbar", "c", "m", "q"):
            val = getattr(self, name)
            if not math.isfinite(val):
                raise ValueError(f"{name} must be finite, got {val!r}")
        for name in ("hbar", "c", "m"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")

    @property
    def rest_energy(self) -> float:
        return self.m * self.c**2

    @property
    def compton_frequency(self) -> float:
        """Rest-energy angular frequency m c^2 / hbar."""
        return self.m * self.c**2 / self.hbar


@dataclass(frozen=True)
class SpacetimeGrid:
    nx: int
    nt: int
    dx: float
    dt: float
    x_min: float = 0.0
    t0: float = 0.0
    periodic: bool = False

    def __post_init__(self):
        if self.nx < 8:
            raise DegenerateGridError(f"nx must be >= 8, got {self.nx}")
        if self.nt < 2:
            raise DegenerateGridError(f"nt must be >= 2, got {self.nt}")
        if not (self.dx > 0 and self.dt > 0):
            raise ValueError("dx and dt must be positive")

    @classmethod
    def periodic_box(cls, length, nx, dt, nt, x_min=0.0, t0=0.0):
        """Periodic grid of ``nx`` points covering ``[x_min, x_min + length)``."""
        return cls(nx=nx, nt=nt, dx=length / nx, dt=dt, x_min=x_min, t0=t0, periodic=True)

    @property
    def shape(self):
        return (self.nt, self.nx)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.nx)

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    @property
    def length(self) -> float:
        """Spatial period for periodic grids, covered extent otherwise."""
        return self.nx * self.dx if self.periodic else (self.nx - 1) * self.dx

    @property
    def t_final(self) -> float:
        return self.t0 + (self.nt - 1) * self.dt

    def mesh(self):
        """``(T, X)`` coordinate arrays of shape ``(nt, nx)``."""
        return np.meshgrid(self.t, self.x, indexing="ij")

    def cfl(self, c: float) -> float:
        return c * self.dt / self.dx

    def with_steps(self, nt: int) -> "SpacetimeGrid":
        return replace(self, nt=nt)


class _Field:
    """Shared behaviour of real and complex lattice fields.

    ``mask`` marks lattice points that carry no meaningful value (True means
    excluded).  Arithmetic between fields ORs their masks.
    """

    grid: SpacetimeGrid
    values: np.ndarray
    mask: Optional[np.ndarray]

    def _check(self):
        vals = np.asarray(self.values)
        if vals.shape != self.grid.shape:
            raise ValueError(f"field shape {vals.shape} does not match grid {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.mask is not None and np.shape(self.mask) != self.grid.shape:
            raise ValueError("mask shape does not match grid")

    def with_values(self, values, mask=None):
        return type(self)(self.grid, values, self.mask if mask is None else mask)

    def _combine(self, other, op):
        if isinstance(other, _Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            vals = op(self.values, other.values)
            mask = _or_masks(self.mask, other.mask)
            cls = ComplexField if np.iscomplexobj(vals) else ScalarField
            return cls(self.grid, vals, mask)
        vals = op(self.values, other)
        cls = ComplexField if np.iscomplexobj(vals) else ScalarField
        return cls(self.grid, vals, self.mask)

    def __add__(self, other):
        return self._combine(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __rsub__(self, other):
        return self._combine(other, lambda a, b: np.subtract(b, a))

    def __mul__(self, other):
        return self._combine(other, np.multiply)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._combine(other, np.divide)

    def __neg__(self):
        return type(self)(self.grid, -self.values, self.mask)

    def slice(self, n: int) -> np.ndarray:
        return self.values[n]

    @property
    def valid(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.grid.shape, dtype=bool)
        return ~self.mask


@dataclass(frozen=True, eq=False)
class ScalarField(_Field):
    grid: SpacetimeGrid
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float))
        self._check()

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid, func):
        """Sample ``func(t, x)`` (vectorised) on the grid."""
        T, X = grid.mesh()
        return cls(grid, np.broadcast_to(func(T, X), grid.shape).astype(float))


@dataclass(frozen=True, eq=False)
class ComplexField(_Field):
    grid: SpacetimeGrid
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        self._check()

    @classmethod
    def from_function(cls, grid, func):
        T, X = grid.mesh()
        return cls(grid, np.broadcast_to(func(T, X), grid.shape).astype(complex))

    def conj(self):
        return ComplexField(self.grid, np.conj(self.values), self.mask)

    def abs2(self) -> ScalarField:
        return ScalarField(self.grid, np.abs(self.values) ** 2, self.mask)


@dataclass(frozen=True, eq=False)
class FourVectorField:
    """Two-component (1+1-D) four-vector field with explicit index placement."""

    time_component: ScalarField
    space_component: ScalarField
    variance: str = COVARIANT

    def __post_init__(self):
        if self.time_component.grid != self.space_component.grid:
            raise ValueError("four-vector components must share one grid")
        if self.variance not in (COVARIANT, CONTRAVARIANT):
            raise ValueError(f"unknown variance {self.variance!r}")

    @property
    def grid(self):
        return self.time_component.grid

    def lower(self) -> "FourVectorField":
        if self.variance == COVARIANT:
            return self
        return FourVectorField(self.time_component, -self.space_component, COVARIANT)

    def raise_index(self) -> "FourVectorField":
        if self.variance == CONTRAVARIANT:
            return self
        return FourVectorField(self.time_component, -self.space_component, CONTRAVARIANT)

    def norm2(self) -> ScalarField:
        """Minkowski square ``v^mu v_mu`` (independent of index placement)."""
        return self.time_component * self.time_component - self.space_component * self.space_component

    def dot(self, other: "FourVectorField") -> ScalarField:
        """Contraction ``a^mu b_mu`` of two fields of the same variance."""
        if other.variance != self.variance:
            raise VarianceError("contraction needs fields of equal variance; raise or lower first")
        return self.time_component * other.time_component - self.space_component * other.space_component

    def __add__(self, other):
        if other.variance != self.variance:
            raise VarianceError("cannot add fields of different variance")
        return FourVectorField(self.time_component + other.time_component,
                               self.space_component + other.space_component, self.variance)

    def __sub__(self, other):
        if other.variance != self.variance:
            raise VarianceError("cannot subtract fields of different variance")
        return FourVectorField(self.time_component - other.time_component,
                               self.space_component - other.space_component, self.variance)

    def scale(self, s):
        """Multiply both components by a number or a ScalarField."""
        return FourVectorField(self.time_component * s, self.space_component * s, self.variance)

    def components(self):
        return (self.time_component, self.space_component)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Rank-2 covariant tensor field; ``comps[mu][nu]`` are ScalarFields."""

    comps: tuple
    symmetry: str = "none"

    @property
    def grid(self):
        return self.comps[0][0].grid

    def __getitem__(self, idx):
        mu, nu = idx
        return self.comps[mu][nu]


@dataclass(frozen=True, eq=False)
class Potentials:
    """Scalar potential V and vector potential component Ax on a grid."""

    V: ScalarField
    Ax: ScalarField

    def __post_init__(self):
        if self.V.grid != self.Ax.grid:
            raise ValueError("V and Ax must share one grid")

    @property
    def grid(self):
        return self.V.grid

    @classmethod
    def zero(cls, grid):
        return cls(ScalarField.zeros(grid), ScalarField.zeros(grid))

    @classmethod
    def uniform_electric(cls, grid, E0, x_ref=0.0):
        """Static uniform field E0 along x, from V = -E0 (x - x_ref)."""
        T, X = grid.mesh()
        return cls(ScalarField(grid, -E0 * (X - x_ref)), ScalarField.zeros(grid))

    @classmethod
    def from_functions(cls, grid, V=None, Ax=None):
        zero = lambda t, x: np.zeros_like(x)  # noqa: E731
        return cls(ScalarField.from_function(grid, V or zero),
                   ScalarField.from_function(grid, Ax or zero))

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.V.values) or np.any(self.Ax.values))

    def covariant(self) -> FourVectorField:
        """``A_mu = (V, -Ax)``."""
        return FourVectorField(self.V, -self.Ax, COVARIANT)

    def contravariant(self) -> FourVectorField:
        return FourVectorField(self.V, self.Ax, CONTRAVARIANT)

    def shifted(self, dV=0.0, dAx=0.0) -> "Potentials":
        return Potentials(self.V + dV, self.Ax + dAx)


def _or_masks(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return np.logical_or(a, b)


# ---------------------------------------------------------------------------
# array-level stencils

def diff1(arr, h, axis):
    """First derivative: centred interior, second-order one-sided at the ends."""
    arr = np.asarray(arr)
    if arr.shape[axis] < 3:
        raise DegenerateGridError(f"need >= 3 points along axis {axis}, got {arr.shape[axis]}")
    return np.gradient(arr, h, axis=axis, edge_order=2)


def diff2(arr, h, axis):
    """Second derivative.

    Centred three-point interior.  At the ends the four-point one-sided
    formula ``(2f0 - 5f1 + 4f2 - f3)/h^2`` keeps second order; with only
    three points the end values fall back to the (exact for quadratics)
    three-point value.
    """
    arr = np.moveaxis(np.asarray(arr), axis, 0)
    n = arr.shape[0]
    if n < 3:
        raise DegenerateGridError(f"need >= 3 points along axis {axis}, got {n}")
    out = np.empty_like(arr)
    out[1:-1] = (arr[2:] - 2.0 * arr[1:-1] + arr[:-2]) / h**2
    if n >= 4:
        out[0] = (2.0 * arr[0] - 5.0 * arr[1] + 4.0 * arr[2] - arr[3]) / h**2
        out[-1] = (2.0 * arr[-1] - 5.0 * arr[-2] + 4.0 * arr[-3] - arr[-4]) / h**2
    else:
        out[0] = out[1]
        out[-1] = out[1]
    return np.moveaxis(out, 0, axis)


def periodic_diff1(arr, h, axis=-1):
    return (np.roll(arr, -1, axis=axis) - np.roll(arr, 1, axis=axis)) / (2.0 * h)


def periodic_diff2(arr, h, axis=-1):
    return (np.roll(arr, -1, axis=axis) - 2.0 * arr + np.roll(arr, 1, axis=axis)) / h**2


def _wrap(f, vals):
    cls = ComplexField if np.iscomplexobj(vals) else ScalarField
    return cls(f.grid, vals, f.mask)


# ---------------------------------------------------------------------------
# field-level calculus

def ddx(f):
    """Spatial derivative of a field."""
    return _wrap(f, diff1(f.values, f.grid.dx, axis=1))


def ddx_masked(f):
    """Spatial derivative that never differences across masked points.

    Each unmasked run of a slice is differentiated on its own with one-sided
    ends; runs shorter than three points and masked points get zero.
    """
    if f.mask is None or not f.mask.any():
        return ddx(f)
    out = np.zeros_like(f.values)
    for n in range(f.grid.nt):
        out[n] = _row_diff_runs(f.values[n], f.grid.dx, f.mask[n])
    return _wrap(f, out)


def _row_diff_runs(row, h, mask_row):
    out = np.zeros_like(row)
    idx = np.flatnonzero(~mask_row)
    if idx.size == 0:
        return out
    for run in np.split(idx, np.flatnonzero(np.diff(idx) > 1) + 1):
        if run.size >= 3:
            out[run] = np.gradient(row[run], h, edge_order=2)
    return out


def ddt(f):
    """Time derivative of a field."""
    return _wrap(f, diff1(f.values, f.grid.dt, axis=0))


def d2dx2(f):
    return _wrap(f, diff2(f.values, f.grid.dx, axis=1))


def d2dt2(f):
    return _wrap(f, diff2(f.values, f.grid.dt, axis=0))


def dalembertian(f, p: PhysParams):
    """``d^mu d_mu f = (1/c^2) f_tt - f_xx``."""
    g = f.grid
    if g.nt < 3 or g.nx < 3:
        raise DegenerateGridError("d'Alembertian needs nt >= 3 and nx >= 3")
    vals = diff2(f.values, g.dt, axis=0) / p.c**2 - diff2(f.values, g.dx, axis=1)
    return _wrap(f, vals)


def covariant_gradient(f: ScalarField, p: PhysParams) -> FourVectorField:
    """``d_mu f = ((1/c) f_t, f_x)``."""
    return FourVectorField(ddt(f) * (1.0 / p.c), ddx(f), COVARIANT)


def four_divergence(j: FourVectorField, p: PhysParams) -> ScalarField:
    """``d^mu j_mu = (1/c) d_t j_0 - d_x j_1`` for a covariant field."""
    if j.variance != COVARIANT:
        raise VarianceError("four_divergence expects a covariant field; lower the index first")
    return ddt(j.time_component) * (1.0 / p.c) - ddx(j.space_component)


def faraday(a: Potentials, p: PhysParams) -> TensorField:
    """Field tensor ``F_mu nu = d_mu A_nu - d_nu A_mu``.

    The only independent component is ``F_01 = (1/c) d_t A_1 - d_x A_0``,
    which equals the electric field ``E = -V_x - (1/c) d_t Ax``.
    """
    A = a.covariant()
    f01 = ddt(A.space_component) * (1.0 / p.c) - ddx(A.time_component)
    zero = ScalarField.zeros(a.grid)
    return TensorField(((zero, f01), (-f01, zero)), symmetry="antisymmetric")


def electric_field(a: Potentials, p: PhysParams) -> ScalarField:
    return faraday(a, p)[0, 1]


def lorentz_residual(a: Potentials, p: PhysParams) -> ScalarField:
    """``d^mu A_mu = (1/c) V_t + d_x Ax``; zero in Lorentz gauge."""
    return four_divergence(a.covariant(), p)


# ---------------------------------------------------------------------------
# norms

def interior(grid: SpacetimeGrid, margin=4, time_margin=None) -> np.ndarray:
    """Boolean selector of points at least ``margin`` cells from the edges."""
    tm = margin if time_margin is None else time_margin
    sel = np.zeros(grid.shape, dtype=bool)
    sel[tm:grid.nt - tm, margin:grid.nx - margin] = True
    return sel


def max_norm(f, margin=4, time_margin=None, where=None, mask_margin=3) -> float:
    """Max-norm over interior points away from masked ones.

    Points within ``mask_margin`` cells (in x or t) of a masked point are
    dropped as well, since their stencils reach into the masked region.
    """
    sel = interior(f.grid, margin, time_margin)
    if f.mask is not None and f.mask.any():
        bad = f.mask
        if mask_margin:
            bad = binary_dilation(bad, structure=np.ones((3, 3), dtype=bool), iterations=mask_margin)
        sel &= ~bad
    if where is not None:
        sel &= where
    if not np.any(sel):
        return 0.0
    return float(np.max(np.abs(f.values[sel])))


def observed_order(errors, ratio=2.0):
    """Successive convergence orders log(e_i / e_{i+1}) / log(ratio)."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
