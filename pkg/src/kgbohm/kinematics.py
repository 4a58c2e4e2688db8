"""Pointwise checks on analytic 3-D flows: analog fields and Hamilton-Jacobi residuals.

Flows and actions are sympy expressions in ``t, x, y, z``.  Derivatives are
taken symbolically (or supplied by the caller) and only then compiled to
numpy, so residuals measure roundoff rather than truncation error.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np
import sympy as sp

from .fields import PhysParams

T, X, Y, Z = sp.symbols("t x y z", real=True)
SPACE = (X, Y, Z)
ALL = (T, X, Y, Z)
SELF_CHECK_TOL = 1e-6


def _sym(e):
    return sp.sympify(e)


def _compile(exprs):
    """Vectorised evaluator of a list of expressions on probes of shape (N, 4)."""
    fn = sp.lambdify(ALL, list(exprs), modules="numpy")

    def run(probes):
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        cols = fn(*probes.T)
        n = probes.shape[0]
        return np.stack([np.broadcast_to(np.asarray(c, dtype=float), (n,)) for c in cols], axis=1)

    return run


@dataclass(frozen=True)
class AnalyticFlow:
    """Velocity field ``v(r, t)`` with analytic first derivatives.

    ``grad[i][k]`` is the derivative of ``v_i`` with respect to ``(t, x, y, z)[k]``.
    Leave it out to have it derived symbolically.
    """

    name: str
    v: tuple
    description: str = ""
    grad: Optional[tuple] = None

    def __post_init__(self):
        if len(self.v) != 3:
            raise ValueError("a flow needs three velocity components")
        v = tuple(_sym(c) for c in self.v)
        object.__setattr__(self, "v", v)
        if self.grad is None:
            g = tuple(tuple(sp.diff(c, s) for s in ALL) for c in v)
        else:
            g = tuple(tuple(_sym(e) for e in row) for row in self.grad)
            if len(g) != 3 or any(len(row) != 4 for row in g):
                raise ValueError("grad must be 3 rows of 4 derivatives (t, x, y, z)")
        object.__setattr__(self, "grad", g)

    def dv(self, i, k):
        return self.grad[i][k]

    def velocity(self, probes) -> np.ndarray:
        return _compile(self.v)(probes)

    def self_check(self, probes, h: float = 1e-5) -> float:
        """Largest gap between the supplied derivatives and central differences.

        The gap is relative to ``max(1, |derivative|)``; ValueError is raised
        above the self-check tolerance.
        """
        probes = np.atleast_2d(np.asarray(probes, dtype=float))
        vel = _compile(self.v)
        exact = _compile([e for row in self.grad for e in row])(probes).reshape(-1, 3, 4)
        worst = 0.0
        for k in range(4):
            step = np.zeros(4)
            step[k] = h
            fd = (vel(probes + step) - vel(probes - step)) / (2 * h)
            gap = np.abs(fd - exact[:, :, k]) / np.maximum(1.0, np.abs(exact[:, :, k]))
            worst = max(worst, float(gap.max()))
        if worst > SELF_CHECK_TOL:
            raise ValueError(f"flow {self.name!r}: supplied derivatives disagree with "
                             f"central differences by {worst:.3g}")
        return worst


@dataclass(frozen=True)
class ActionField:
    """Classical action ``phi(r, t)``."""

    name: str
    phi: object
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "phi", _sym(self.phi))

    def shifted(self, const) -> "ActionField":
        return ActionField(self.name, self.phi + const, self.description)


@dataclass(frozen=True)
class AnalyticPotential:
    """Electromagnetic potentials ``V`` and contravariant ``A``."""

    V: object = 0
    A: tuple = (0, 0, 0)

    def __post_init__(self):
        object.__setattr__(self, "V", _sym(self.V))
        object.__setattr__(self, "A", tuple(_sym(c) for c in self.A))

    def fields(self, p: PhysParams):
        """``E = -grad V - (1/c) dA/dt`` and ``B = curl A`` as expressions."""
        E = tuple(-sp.diff(self.V, s) - sp.diff(a, T) / p.c for s, a in zip(SPACE, self.A))
        return E, _curl(self.A)


ZERO_POTENTIAL = AnalyticPotential()


def _curl(vec):
    ax, ay, az = vec
    return (sp.diff(az, Y) - sp.diff(ay, Z), sp.diff(ax, Z) - sp.diff(az, X), sp.diff(ay, X) - sp.diff(ax, Y))


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


# ---------------------------------------------------------------------------
# analog electromagnetic fields of a flow

class AnalogFields(NamedTuple):
    e: np.ndarray    # (N, 3)
    h: np.ndarray    # (N, 3)
    a0: np.ndarray   # (N,)
    a: np.ndarray    # (N, 3)


def _analog_exprs(flow: AnalyticFlow, p: PhysParams):
    v = flow.v
    c = p.c
    a0 = -c**2 - sum(vi**2 for vi in v) / 2
    a = tuple(-c * vi for vi in v)
    # -(1/c) da/dt - grad a0 written with the supplied first derivatives
    e = tuple(flow.dv(i, 0) + sum(v[j] * flow.dv(j, i + 1) for j in range(3)) for i in range(3))
    curl_v = (flow.dv(2, 2) - flow.dv(1, 3), flow.dv(0, 3) - flow.dv(2, 1), flow.dv(1, 1) - flow.dv(0, 2))
    h = tuple(-c * w for w in curl_v)
    return e, h, a0, a


def analog_fields(flow: AnalyticFlow, p: PhysParams, probes) -> AnalogFields:
    """``a0 = -c^2 - v^2/2``, ``a = -c v``, ``e = -(1/c) da/dt - grad a0``, ``h = curl a``."""
    e, h, a0, a = _analog_exprs(flow, p)
    vals = _compile(list(e) + list(h) + [a0] + list(a))(probes)
    return AnalogFields(vals[:, 0:3], vals[:, 3:6], vals[:, 6], vals[:, 7:10])


def maxwell_analog_residuals(flow: AnalyticFlow, probes, p: PhysParams):
    """``div h`` (N,) and ``curl e + (1/c) dh/dt`` (N, 3); both vanish for smooth flows."""
    e, h, _, _ = _analog_exprs(flow, p)
    div_h = sum(sp.diff(hi, s) for hi, s in zip(h, SPACE))
    far = tuple(ce + sp.diff(hi, T) / p.c for ce, hi in zip(_curl(e), h))
    vals = _compile([div_h, *far])(probes)
    return vals[:, 0], vals[:, 1:4]


def _convective(flow: AnalyticFlow):
    return tuple(flow.dv(i, 0) + sum(flow.v[j] * flow.dv(i, j + 1) for j in range(3)) for i in range(3))


def force_identity_residual(flow: AnalyticFlow, p: PhysParams, probes) -> np.ndarray:
    """``m (e + v x h / c) - m (dv/dt + (v . grad) v)`` at probes, shape (N, 3)."""
    e, h, _, _ = _analog_exprs(flow, p)
    vxh = _cross(flow.v, h)
    acc = _convective(flow)
    res = [p.m * (e[i] + vxh[i] / p.c) - p.m * acc[i] for i in range(3)]
    return _compile(res)(probes)


def lorentz_force_residual(flow: AnalyticFlow, a: AnalyticPotential, p: PhysParams, probes) -> np.ndarray:
    """``m (dv/dt + (v . grad) v) - q (E + v x B / c)`` at probes, shape (N, 3)."""
    E, B = a.fields(p)
    vxB = _cross(flow.v, B)
    acc = _convective(flow)
    res = [p.m * acc[i] - p.q * (E[i] + vxB[i] / p.c) for i in range(3)]
    return _compile(res)(probes)


# ---------------------------------------------------------------------------
# Hamilton-Jacobi residuals

def _rel_expr(act: ActionField, a: AnalyticPotential, p: PhysParams):
    phi = act.phi
    pi0 = (sp.diff(phi, T) + p.q * a.V) / p.c
    pis = [sp.diff(phi, s) - p.q / p.c * ai for s, ai in zip(SPACE, a.A)]
    return pi0**2 - sum(q**2 for q in pis) - (p.m * p.c) ** 2


def rel_hj_residual(act: ActionField, a: AnalyticPotential, p: PhysParams, probes) -> np.ndarray:
    """``(d^mu phi + (q/c) A^mu)(d_mu phi + (q/c) A_mu) - m^2 c^2`` at probes."""
    return _compile([_rel_expr(act, a, p)])(probes)[:, 0]


def nonrel_hj_residual(act: ActionField, a: AnalyticPotential, p: PhysParams, probes) -> np.ndarray:
    """``phi_t + (grad phi - (q/c) A)^2 / 2m + qV + m c^2`` at probes."""
    phi = act.phi
    kin = sum((sp.diff(phi, s) - p.q / p.c * ai) ** 2 for s, ai in zip(SPACE, a.A)) / (2 * p.m)
    expr = sp.diff(phi, T) + kin + p.q * a.V + p.m * p.c**2
    return _compile([expr])(probes)[:, 0]


def flow_from_action(act: ActionField, a: AnalyticPotential, p: PhysParams,
                     relativistic: bool = False) -> AnalyticFlow:
    """Velocity generated by an action through its kinetic momentum.

    ``p_vec = grad phi - (q/c) A``; the low-speed flow is ``p_vec / m`` and the
    relativistic one ``c^2 p_vec / K`` with ``K = -phi_t - qV``.
    """
    pv = [sp.diff(act.phi, s) - p.q / p.c * ai for s, ai in zip(SPACE, a.A)]
    if relativistic:
        K = -sp.diff(act.phi, T) - p.q * a.V
        v = tuple(p.c**2 * c / K for c in pv)
    else:
        v = tuple(c / p.m for c in pv)
    return AnalyticFlow(f"from:{act.name}", v, f"flow of action {act.name}")


# ---------------------------------------------------------------------------
# fixtures

def default_probes(n: int = 32, seed: int = 7, t_range=(0.0, 1.0), box: float = 1.0) -> np.ndarray:
    """Deterministic probe set ``(t, x, y, z)`` of shape (n, 4)."""
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-box, box, size=(n, 4))
    pts[:, 0] = rng.uniform(*t_range, size=n)
    return pts


def flow_catalog() -> Dict[str, AnalyticFlow]:
    """Built-in smooth flows."""
    w = sp.Rational(3, 4)
    k = sp.Rational(1, 2)
    omega_t = w * (1 + sp.sin(T) / 2)
    flows = [
        AnalyticFlow("uniform", (sp.Rational(3, 10), sp.Rational(-1, 10), sp.Rational(1, 5)), "constant velocity"),
        AnalyticFlow("rigid_rotation", (-w * Y, w * X, 0), "rotation about z at rate 3/4"),
        AnalyticFlow("unsteady_rotation", (-omega_t * Y, omega_t * X, 0), "rotation with rate 3/4 (1 + sin t / 2)"),
        AnalyticFlow("shear", (k * Y, 0, 0), "plane shear v = (k y, 0, 0)"),
        AnalyticFlow("stagnation", (k * X, -k * Y, 0), "irrotational stagnation-point flow"),
        AnalyticFlow("abc", (sp.sin(Z) + sp.cos(Y) / 2, sp.sin(X) / 3 + sp.cos(Z), sp.sin(Y) / 2 + sp.cos(X) / 3),
                     "Arnold-Beltrami-Childress swirl"),
        AnalyticFlow("decaying_wave", (0, sp.exp(-T / 2) * sp.sin(X), sp.exp(-T / 2) * sp.cos(X) * Y / 4),
                     "unsteady sheared wave"),
    ]
    return {f.name: f for f in flows}


@dataclass(frozen=True)
class ActionCase:
    action: ActionField
    potential: AnalyticPotential
    on_shell_rel: Optional[bool]     # None: not meant for the relativistic equation
    on_shell_nonrel: Optional[bool]


def action_catalog(p: PhysParams) -> Dict[str, ActionCase]:
    """Actions with the potentials they belong to and whether they solve each equation."""
    m, c = p.m, p.c
    px, py = sp.Rational(1, 2), sp.Rational(-1, 3)
    E = sp.sqrt((px**2 + py**2) * c**2 + m**2 * c**4)
    omega = sp.Rational(1, 1)
    ho = AnalyticPotential(V=m * omega**2 * X**2 / (2 * p.q))
    # uniform field E0 along x from V = -E0 x: phi = -m c^2 t + q E0 x t - q^2 E0^2 t^3 / 6m
    E0 = sp.Rational(1, 5)
    uni = AnalyticPotential(V=-E0 * X)
    cases = {
        "rest": ActionCase(ActionField("rest", -m * c**2 * T), ZERO_POTENTIAL, True, True),
        "free_relativistic": ActionCase(ActionField("free_relativistic", -E * T + px * X + py * Y),
                                        ZERO_POTENTIAL, True, None),
        "free_lowspeed": ActionCase(ActionField("free_lowspeed", -(m * c**2 + (px**2 + py**2) / (2 * m)) * T
                                                + px * X + py * Y), ZERO_POTENTIAL, None, True),
        "harmonic": ActionCase(ActionField("harmonic", -m * c**2 * T - m * omega * X**2 / 2 * sp.tan(omega * T)),
                               ho, None, True),
        "uniform_field": ActionCase(ActionField("uniform_field", -m * c**2 * T + p.q * E0 * X * T
                                                - p.q**2 * E0**2 * T**3 / (6 * m)), uni, None, True),
        "off_shell": ActionCase(ActionField("off_shell", -sp.Rational(11, 10) * E * T + px * X + py * Y),
                                ZERO_POTENTIAL, False, False),
    }
    return cases


def run_suite(p: PhysParams, probes=None) -> Dict[str, float]:
    """Evaluate every check on every fixture; returns flat ``name -> max |residual|``."""
    if probes is None:
        probes = default_probes()
    out = {}
    for name, flow in flow_catalog().items():
        out[f"selfcheck.{name}"] = flow.self_check(probes)
        div_h, far = maxwell_analog_residuals(flow, probes, p)
        out[f"div_h.{name}"] = float(np.max(np.abs(div_h)))
        out[f"faraday.{name}"] = float(np.max(np.abs(far)))
        out[f"force_identity.{name}"] = float(np.max(np.abs(force_identity_residual(flow, p, probes))))
    for name, case in action_catalog(p).items():
        if case.on_shell_rel is not None:
            out[f"rel_hj.{name}"] = float(np.max(np.abs(rel_hj_residual(case.action, case.potential, p, probes))))
        if case.on_shell_nonrel is not None:
            out[f"nonrel_hj.{name}"] = float(np.max(np.abs(nonrel_hj_residual(case.action, case.potential, p, probes))))
        if case.on_shell_nonrel:
            fl = flow_from_action(case.action, case.potential, p)
            out[f"lorentz_force.{name}"] = float(np.max(np.abs(lorentz_force_residual(fl, case.potential, p, probes))))
            out[f"force_identity.{fl.name}"] = float(np.max(np.abs(force_identity_residual(fl, p, probes))))
    return out
