import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.sparse.linalg import eigsh

from _studies import P, column, fluid_study, free_gaussian_fluid
from kgbohm.kg import KGSolution
from kgbohm.fields import ComplexField, Potentials, SpacetimeGrid, max_norm, observed_order
from kgbohm.madelung import decompose
from kgbohm.schrodinger import (SchrodingerSolution, SelfSimilarCase, corrected_flow, evolve_schrodinger,
                                fluid_residuals, fluid_state, free_width, gaussian_packet, hamiltonian,
                                low_speed_compare, newton_lorentz_residual, packet_width, solve_phi_lowspeed,
                                sourced_continuity_residual, u_field)


def box(L=24.0, nx=256, dt=0.01, nt=201, periodic=True):
    if periodic:
        return SpacetimeGrid.periodic_box(L, nx, dt, nt, x_min=-L / 2)
    return SpacetimeGrid(nx=nx, nt=nt, dx=L / (nx - 1), dt=dt, x_min=-L / 2)


def test_free_packet_spreads_at_the_closed_form_rate():
    g = box(L=40.0, nx=800, dt=0.01, nt=201)
    s = evolve_schrodinger(gaussian_packet(g.x, 0.0, 1.0), Potentials.zero(g), P, g)
    rel = np.abs(packet_width(s) / free_width(g.t, 1.0, P) - 1)
    assert rel.max() <= 1e-3


def test_norm_is_conserved():
    g = box(nt=1001)
    s = evolve_schrodinger(gaussian_packet(g.x, -3.0, 1.0, 2.0), Potentials.uniform_electric(g, 0.2), P, g)
    n = s.norms()
    assert np.max(np.abs(n / n[0] - 1)) <= 1e-10


def test_discrete_eigenstate_is_stationary():
    g = box(L=16.0, nx=200, dt=0.02, nt=201, periodic=False)
    a = Potentials.from_functions(g, V=lambda t, x: 0.5 * x * x + 0 * t)
    H = hamiltonian(g, a.V.values[0], a.Ax.values[0], P)
    _, vecs = eigsh(H, k=1, sigma=0.0)
    psi0 = vecs[:, 0] / np.sqrt(np.sum(np.abs(vecs[:, 0]) ** 2) * g.dx)
    s = evolve_schrodinger(psi0, a, P, g)
    rho = np.abs(s.psi.values) ** 2
    assert np.max(np.abs(rho - rho[0])) <= 1e-8
    # and the stationary fluid balances: Q_x against qV_x
    mom, cont = fluid_residuals(s)
    assert max_norm(cont) < 1e-6 and max_norm(mom) < 1e-6


def test_hamiltonian_is_hermitian_with_a_vector_potential():
    g = box(nx=64, nt=2)
    a = Potentials.from_functions(g, Ax=lambda t, x: np.sin(x) + 0 * t)
    H = hamiltonian(g, a.V.values[0], a.Ax.values[0], P).toarray()
    assert np.allclose(H, H.conj().T)


# -- flow fields ----------------------------------------------------------------------

def _plane(g, k):
    return ComplexField.from_function(g, lambda t, x: np.exp(1j * (k * x - k * k / 2 * t)))


def test_u_field_examples():
    g = box(nx=128, nt=10)
    md = decompose(_plane(g, 0.75))
    assert np.allclose(u_field(md, Potentials.zero(g), P).values, 0.75)
    real = decompose(ComplexField.from_function(g, lambda t, x: np.exp(-x * x) + 0j + 0 * t))
    assert np.all(u_field(real, Potentials.zero(g), P).values == 0.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2))
def test_u_shifts_linearly_with_a_constant_vector_potential(a0):
    g = box(nx=64, nt=5)
    md = decompose(_plane(g, 0.5))
    base = u_field(md, Potentials.zero(g), P).values
    shifted = u_field(md, Potentials.zero(g).shifted(dAx=a0), P).values
    assert np.allclose(shifted - base, -P.q * a0 / (P.m * P.c), atol=1e-12)


def test_fluid_residuals_vanish_for_a_constant_state():
    g = box(nx=64, nt=10)
    s = SchrodingerSolution(ComplexField(g, np.full(g.shape, 0.3 + 0j)), Potentials.zero(g), P)
    mom, cont = fluid_residuals(s)
    # one-sided edge stencils leave rounding-level noise only
    assert np.allclose(mom.values, 0.0, atol=1e-12) and np.allclose(cont.values, 0.0, atol=1e-12)


def test_fluid_identities_converge():
    rows = fluid_study()
    for key in ("momentum", "continuity", "newton_lorentz", "sourced_continuity"):
        assert np.all(observed_order(column(rows, key)) >= 1.8), key


# -- corrected flow ---------------------------------------------------------------------

def test_plane_wave_needs_no_correction():
    g = box(nx=128, nt=50)
    md = decompose(_plane(g, 0.6))
    a = Potentials.zero(g)
    fl = fluid_state(md, a, P)
    hp = solve_phi_lowspeed(md, a, P)
    assert np.max(np.abs(hp.phi.values)) < 1e-12
    cf = corrected_flow(fl, hp)
    assert np.allclose(cf.v.values, cf.u.values)
    assert max_norm(newton_lorentz_residual(cf, a, P)) < 1e-10
    assert max_norm(sourced_continuity_residual(cf, md, hp, P)) < 1e-10


def test_gaussian_flow_is_corrected_where_q_acts():
    _, md, a, fl, hp, cf, _ = free_gaussian_fluid(256)
    diff = np.abs(cf.v.values - cf.u.values)[5:]
    Q = np.abs(fl.Q.values)[5:]
    bulk = md.rho.values[5:] > 1e-3 * md.rho.values.max()
    # v and u part wherever the quantum potential has acted for a while
    assert np.all(diff[bulk & (Q > 1e-2)] > 0)
    # and v - u is exactly the Phi gradient over m
    assert np.allclose(cf.v.values - cf.u.values, np.gradient(hp.phi.values, md.grid.dx, axis=1, edge_order=2)
                       / P.m, atol=1e-12)


def test_constant_phi_shift_leaves_v_alone():
    _, md, a, fl, hp, cf, _ = free_gaussian_fluid(256)
    moved = corrected_flow(fl, hp.shifted(5.0))
    assert np.allclose(moved.v.values, cf.v.values, atol=1e-12)


def test_uniform_field_acceleration():
    E0 = 0.5
    g = box(L=48.0, nx=384, dt=0.02, nt=101, periodic=False)
    a = Potentials.uniform_electric(g, E0)
    s = evolve_schrodinger(gaussian_packet(g.x, 0.0, 1.5), a, P, g)
    md = decompose(s.psi)
    fl = fluid_state(md, a, P)
    rho = md.rho.values
    mean_u = np.sum(rho * fl.u.values, axis=1) / rho.sum(axis=1)
    assert np.max(np.abs(mean_u - P.q * E0 * g.t / P.m)) <= 1e-3
    # the uncorrected fluid obeys its momentum balance with the force qE
    mom, _ = fluid_residuals(s)
    assert max_norm(mom, where=rho > 1e-3 * rho.max()) < 5e-3


# -- relativistic comparison ---------------------------------------------------------

def test_comparison_of_identical_constants():
    g = box(nx=64, nt=20)
    psi = ComplexField(g, np.ones(g.shape, dtype=complex) * np.exp(-1j * P.compton_frequency * g.t)[:, None])
    kg = KGSolution(psi, P, Potentials.zero(g), g.cfl(P.c), "periodic", False, psi.values[0], psi.values[-1])
    s = SchrodingerSolution(ComplexField(g, np.ones(g.shape, dtype=complex)), Potentials.zero(g), P)
    summary = low_speed_compare(kg, s, P).summary()
    assert summary["density_discrepancy_max"] < 1e-14
    assert summary["phase_discrepancy_final"] < 1e-9
    assert summary["hj_residual_max"] < 1e-9


def test_comparison_needs_matching_grids():
    kg, _, _ = SelfSimilarCase(0.04, nx=64).run(P)
    h = box(nx=32, nt=5)
    other = SchrodingerSolution(ComplexField(h, np.ones(h.shape, dtype=complex)), Potentials.zero(h), P)
    with pytest.raises(ValueError):
        low_speed_compare(kg, other, P)


def test_discrepancy_shrinks_with_speed():
    dens = [SelfSimilarCase(s, nx=256).run(P)[2].summary()["density_discrepancy_final"] for s in (0.04, 0.02, 0.01)]
    assert dens[0] > dens[1] > dens[2]
    assert dens[2] <= 0.01
    with pytest.raises(ValueError):
        SelfSimilarCase(1.5).run(P)
