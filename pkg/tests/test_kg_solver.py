import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgbohm.errors import DivergenceError, StabilityError
from kgbohm.fields import (ComplexField, PhysParams, Potentials, SpacetimeGrid, four_divergence, max_norm,
                           observed_order)
from kgbohm.kg import (KGInitialData, KGSolution, charge_drift, dispersion, evolve_kg, kg_residual,
                       measure_frequency, noether_current, plane_wave_initial_data, positive_energy_initial_data,
                       quasi_rest_initial_data, superposition_initial_data, total_charge)
from kgbohm.schrodinger import gaussian_packet

P = PhysParams()


def circle(nx=64, dt=0.05, nt=501, length=2 * np.pi, x_min=0.0):
    return SpacetimeGrid.periodic_box(length, nx, dt, nt, x_min=x_min)


def packet_run(nx, rest_phase=False, length=20.0, t_final=2.0, cfl=0.5):
    dx = length / nx
    dt = cfl * dx / P.c
    g = SpacetimeGrid.periodic_box(length, nx, dt, int(round(t_final / dt)) + 1, x_min=-length / 2)
    init = positive_energy_initial_data(gaussian_packet(g.x, 0.0, 1.5, 0.5), g, P)
    return evolve_kg(init, Potentials.zero(g), P, g, rest_phase=rest_phase)


def analytic_solution(g, k, p=P):
    """An exact plane wave written straight onto the grid (no evolution)."""
    w = dispersion(k, p)
    T, X = g.mesh()
    psi = np.exp(1j * (k * X - w * T))
    before = np.exp(1j * (k * g.x - w * (g.t0 - g.dt)))
    after = np.exp(1j * (k * g.x - w * (g.t_final + g.dt)))
    return KGSolution(ComplexField(g, psi), p, Potentials.zero(g), g.cfl(p.c), "periodic", False, before, after)


# -- evolution ------------------------------------------------------------------

def _modulus_error(nx, dt):
    g = circle(nx=nx, dt=dt, nt=501)
    sol = evolve_kg(plane_wave_initial_data(g, P, 1.0), Potentials.zero(g), P, g)
    return np.max(np.abs(np.abs(sol.psi.values) - 1.0))


def test_plane_wave_modulus_preserved():
    # continuum omega is not quite a lattice mode, so a small negative-energy
    # beat appears; it shrinks like h^2 and drops below 1e-6 on a fine grid
    assert _modulus_error(1024, 0.002) <= 1e-6
    coarse = [_modulus_error(nx, 0.25 * 2 * np.pi / nx) for nx in (128, 256, 512)]
    assert np.all(np.abs(observed_order(coarse) - 2.0) <= 0.3)


def test_rest_wave_rotates_at_unit_frequency():
    g = circle(nt=1001)
    sol = evolve_kg(plane_wave_initial_data(g, P, 0.0), Potentials.zero(g), P, g)
    assert measure_frequency(sol) == pytest.approx(1.0, rel=1e-3)
    # no spatial structure develops
    assert np.ptp(sol.psi.values[-1]) < 1e-12


def test_k1_frequency_is_sqrt2():
    g = circle(nx=128, dt=0.02, nt=2001)
    sol = evolve_kg(plane_wave_initial_data(g, P, 1.0), Potentials.zero(g), P, g)
    assert measure_frequency(sol) == pytest.approx(np.sqrt(2.0), rel=1e-3)


def test_dispersion_with_other_units():
    p = PhysParams(hbar=2.0, c=3.0, m=0.5)
    assert dispersion(0.0, p) == pytest.approx(p.compton_frequency)
    assert dispersion(1.0, p) == pytest.approx(np.sqrt(9.0 + 2.25**2))


def test_rest_phase_form_matches_direct_march():
    g = circle(nx=64, dt=0.02, nt=301)
    init = positive_energy_initial_data(gaussian_packet(g.x, np.pi, 0.8, 1.0), g, P)
    a = Potentials.zero(g)
    direct = evolve_kg(init, a, P, g)
    rotated = evolve_kg(init, a, P, g, rest_phase=True)
    # two different second-order schemes: they agree to truncation level
    assert np.max(np.abs(direct.psi.values - rotated.psi.values)) < 1e-3


def test_cfl_violation_refused():
    g = SpacetimeGrid.periodic_box(2 * np.pi, 64, 0.095, 10)
    with pytest.raises(StabilityError) as err:
        evolve_kg(plane_wave_initial_data(g, P, 1.0), Potentials.zero(g), P, g)
    assert err.value.value == pytest.approx(g.cfl(P.c))
    assert "0.9" in str(err.value)


def test_stiffness_and_boundary_warnings():
    g = SpacetimeGrid.periodic_box(20.0, 32, 0.5, 5)
    with pytest.warns(RuntimeWarning, match="rest-energy"):
        evolve_kg(plane_wave_initial_data(g, P, 0.0), Potentials.zero(g), P, g)
    g = SpacetimeGrid(nx=32, nt=5, dx=0.2, dt=0.05)
    with pytest.warns(RuntimeWarning, match="clamped"):
        evolve_kg(KGInitialData(np.zeros(32), np.zeros(32)), Potentials.zero(g), P, g, boundary="clamped")


def test_lorentz_condition_warning():
    g = circle(nt=5)
    a = Potentials.from_functions(g, V=lambda t, x: 0.1 * t + 0 * x)
    with pytest.warns(RuntimeWarning, match="Lorentz"):
        evolve_kg(plane_wave_initial_data(g, P, 1.0), a, P, g)


def test_divergence_names_the_step():
    g = circle(nx=32, nt=10)
    a = Potentials.from_functions(g, V=lambda t, x: 1e300 + 0 * x)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(DivergenceError) as err:
            evolve_kg(plane_wave_initial_data(g, P, 1.0), a, P, g)
    assert err.value.step == 1


def test_bad_initial_data():
    with pytest.raises(ValueError):
        KGInitialData(np.zeros(4), np.zeros(5))
    with pytest.raises(ValueError):
        KGInitialData(np.array([np.nan, 0, 0, 0]), np.zeros(4))
    g = circle(nt=3)
    with pytest.raises(ValueError):
        evolve_kg(KGInitialData(np.zeros(10), np.zeros(10)), Potentials.zero(g), P, g)
    with pytest.raises(ValueError):
        positive_energy_initial_data(np.ones(16), SpacetimeGrid(nx=16, nt=3, dx=0.1, dt=0.01), P)


def test_quasi_rest_initial_data():
    g = circle(nt=3)
    a = Potentials.from_functions(g, V=lambda t, x: 0.2 + 0 * x)
    init = quasi_rest_initial_data(np.ones(g.nx), a, P)
    assert np.allclose(init.psi0_dot, -1j * (P.rest_energy + 0.2))


def test_error_against_exact_wave_grows_at_most_linearly():
    g = circle(nx=64, dt=0.05, nt=801)
    sol = evolve_kg(plane_wave_initial_data(g, P, 1.0), Potentials.zero(g), P, g)
    T, X = g.mesh()
    err = np.max(np.abs(sol.psi.values - np.exp(1j * (X - np.sqrt(2) * T))), axis=1)
    steps = np.array([100, 200, 400, 800])
    # err(n) / n must not increase beyond noise: no faster-than-linear growth
    per_step = err[steps] / steps
    assert np.all(per_step[1:] <= 1.2 * per_step[:-1])


@settings(max_examples=5, deadline=None)
@given(st.floats(-2, 2), st.floats(0.1, 1.0))
def test_evolution_is_deterministic(k, amp):
    g = circle(nx=32, nt=40)
    init = superposition_initial_data(g, P, [(1.0, 0.0), (amp, round(k))])
    a = Potentials.zero(g)
    one = evolve_kg(init, a, P, g).psi.values
    two = evolve_kg(init, a, P, g).psi.values
    assert one.tobytes() == two.tobytes()


# -- residual ---------------------------------------------------------------------

def test_residual_of_exact_wave_is_second_order():
    errs = []
    for nx in (32, 64, 128):
        L = 2 * np.pi
        g = SpacetimeGrid.periodic_box(L, nx, 0.5 * L / nx, nx // 2 + 1)
        # k = 1 at half-CFL is a cancellation point of the two h^2 terms
        errs.append(max_norm(kg_residual(analytic_solution(g, 2.0))))
    assert np.all(np.abs(observed_order(errs) - 2.0) <= 0.3)


def test_residual_of_zero_field():
    g = circle(nt=5)
    sol = evolve_kg(KGInitialData(np.zeros(g.nx), np.zeros(g.nx)), Potentials.zero(g), P, g)
    assert np.all(kg_residual(sol).values == 0.0)


def test_evolved_packet_residual():
    # the march uses the same stencils as the residual, so in the direct
    # form the residual sits at rounding level
    direct = [max_norm(kg_residual(packet_run(nx))) for nx in (64, 128, 256)]
    assert max(direct) < 1e-9
    # in rest-phase form the time stencil acts on the envelope instead,
    # and the residual measures a genuine second-order truncation error
    rotated = [max_norm(kg_residual(packet_run(nx, rest_phase=True))) for nx in (64, 128, 256, 512)]
    assert np.all(observed_order(rotated) >= 1.8)


# -- current and charge ---------------------------------------------------------------

def test_real_field_has_no_current():
    g = circle(nt=50)
    psi0 = np.cos(g.x) + 0.5
    sol = evolve_kg(KGInitialData(psi0, np.zeros(g.nx)), Potentials.zero(g), P, g)
    J = noether_current(sol)
    assert np.all(J.time_component.values == 0.0) and np.all(J.space_component.values == 0.0)


def test_plane_wave_current():
    k = 1.0
    g = circle(nx=256, dt=0.005, nt=21)
    J = noether_current(analytic_solution(g, k))
    w = dispersion(k, P)
    # covariant components: J_0 = hbar w / c, J_1 = -hbar k (J^1 = +hbar k)
    assert np.allclose(J.time_component.values, P.hbar * w / P.c, rtol=1e-4)
    assert np.allclose(J.space_component.values, -P.hbar * k, rtol=1e-3)


def test_current_gauge_shift_is_linear():
    g = circle(nt=30)
    sol = evolve_kg(plane_wave_initial_data(g, P, 1.0), Potentials.zero(g), P, g)
    shifted = replace(sol, potentials=sol.potentials.shifted(dV=0.3, dAx=-0.2))
    J, Js = noether_current(sol), noether_current(shifted)
    rho = np.abs(sol.psi.values) ** 2
    # A_mu = (V, -Ax) shifts by (0.3, 0.2)
    assert np.allclose(Js.time_component.values - J.time_component.values, -P.q / P.c * 0.3 * rho, atol=1e-14)
    assert np.allclose(Js.space_component.values - J.space_component.values, -P.q / P.c * 0.2 * rho, atol=1e-14)


def test_charge_of_zero_current():
    g = circle(nt=5)
    sol = evolve_kg(KGInitialData(np.zeros(g.nx), np.zeros(g.nx)), Potentials.zero(g), P, g)
    assert np.all(total_charge(noether_current(sol), g, P) == 0.0)


def test_packet_charge_conserved():
    sol = packet_run(128, t_final=20.0, cfl=0.9)
    assert charge_drift(total_charge(noether_current(sol), sol.grid, P)) <= 1e-6


def test_charge_of_disjoint_packets_adds():
    L = 40.0
    g = SpacetimeGrid.periodic_box(L, 256, 0.1, 50, x_min=-L / 2)
    a = Potentials.zero(g)
    left = gaussian_packet(g.x, -8.0, 1.0, 0.5)
    right = gaussian_packet(g.x, 8.0, 1.0, -0.3)

    def charge(psi0):
        sol = evolve_kg(positive_energy_initial_data(psi0, g, P), a, P, g)
        return total_charge(noether_current(sol), g, P)

    assert np.allclose(charge(left + right), charge(left) + charge(right), rtol=1e-8)


def test_current_divergence_converges():
    errs = [max_norm(four_divergence(noether_current(packet_run(nx)), P)) for nx in (64, 128, 256, 512)]
    assert np.all(np.abs(observed_order(errs) - 2.0) <= 0.3)


def test_scheme_metadata():
    sol = packet_run(64)
    meta = sol.scheme_metadata
    assert meta["boundary"] == "periodic" and meta["integrator"] == "leapfrog"
    assert meta["cfl"] == pytest.approx(0.5)
