import math

import numpy as np
import pytest
from scipy import integrate
from scipy.optimize import brentq

from pbgcavity import (
    Family,
    ModelParams,
    NonPositiveDelay,
    NonPositiveFrequency,
    ToleranceNotMet,
    bose_occupation,
    build_spectral_grid,
    dissipation_spectrum,
    memory_kernel,
    noise_kernel,
    solve_localized_mode,
    spectral_density,
    steady_fluctuation_spectrum,
)

P0 = ModelParams()


def test_spectral_density_values():
    assert spectral_density(99.0, P0) == 0.0
    assert spectral_density(100.0, P0) == 0.0
    assert spectral_density(101.0, P0) == pytest.approx(1 / math.pi, rel=1e-15)
    assert spectral_density(104.0, P0) == pytest.approx(1 / (2 * math.pi), rel=1e-15)
    arr = spectral_density(np.array([90.0, 101.0]), P0)
    assert arr.shape == (2,) and arr[0] == 0


def test_bose_occupation_values():
    assert bose_occupation(100, 20) == pytest.approx(1 / math.expm1(5), rel=1e-14)
    assert bose_occupation(100, 20) == pytest.approx(6.7837e-3, rel=1e-4)
    assert bose_occupation(110, 100) == pytest.approx(0.49896, abs=1e-5)
    assert bose_occupation(37.0, 0.0) == 0.0
    with pytest.raises(NonPositiveFrequency):
        bose_occupation(0.0, 10.0)


def test_memory_kernel_modulus_and_phase():
    assert abs(memory_kernel(1.0, P0)) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)
    assert abs(memory_kernel(4.0, P0)) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-14)
    for tau in (0.013, 0.5, 3.7, 19.0):
        phase = np.angle(memory_kernel(tau, P0)) + P0.omega_e * tau + math.pi / 4
        assert abs(math.remainder(phase, 2 * math.pi)) < 1e-9
    with pytest.raises(NonPositiveDelay):
        memory_kernel(0.0, P0)


def test_memory_kernel_matches_fourier_integral():
    # independent route: Fourier-weighted adaptive quadrature of J itself
    f = lambda x: 1 / (math.pi * math.sqrt(x))
    for tau in (0.4, 1.3, 7.0):
        parts = []
        for weight, trig in (("cos", math.cos), ("sin", math.sin)):
            # x = s**2 removes the endpoint singularity on [0, 1]
            head = integrate.quad(lambda s: 2 / math.pi * trig(tau * s * s), 0, 1, epsabs=1e-13)[0]
            tail = integrate.quad(f, 1, np.inf, weight=weight, wvar=tau)[0]
            parts.append(head + tail)
        ref = complex(parts[0], -parts[1]) * np.exp(-1j * P0.omega_e * tau)
        assert abs(memory_kernel(tau, P0) - ref) < 1e-9


def test_dissipation_spectrum_values():
    assert dissipation_spectrum(100.0, P0) == 0.0
    assert dissipation_spectrum(95.0, P0) == 0.0
    assert dissipation_spectrum(101.0, P0) == pytest.approx(1 / (2 * math.pi), rel=1e-14)


def _bisect_root(delta, C=1.0):
    hi = 1.0
    while hi**3 + delta * hi - C < 0:
        hi *= 2
    return brentq(lambda x: x**3 + delta * x - C, 0.0, hi, xtol=1e-15, rtol=1e-15)


@pytest.mark.parametrize("delta, x_ref, wb_ref, z_ref, ztol", [
    (0.0, 1.0, 99.0, 2 / 3, 1e-15),
    (-10.0, 3.2113, 89.69, 0.985, 1e-3),  # quoted root is rounded; bisection pins it below
    (10.0, 0.09990, 99.990, 0.00199, 1e-5),
])
def test_localized_mode_examples(delta, x_ref, wb_ref, z_ref, ztol):
    p = ModelParams(delta=delta)
    m = solve_localized_mode(p)
    assert m.root_x == pytest.approx(x_ref, abs=5e-4)
    assert m.omega_b == pytest.approx(wb_ref, abs=1e-2)
    assert m.residue_Z == pytest.approx(z_ref, abs=ztol)
    assert m.root_x == pytest.approx(_bisect_root(delta), rel=1e-13)
    assert m.residual(p) < 1e-12
    assert m.omega_b < p.omega_e


def test_localized_mode_limits():
    assert solve_localized_mode(ModelParams(delta=-80)).residue_Z > 0.999
    assert solve_localized_mode(ModelParams(delta=80)).residue_Z < 1e-5


def test_steady_fluctuation_spectrum_composition():
    p = ModelParams(delta=-10.0, kT=100.0)
    m = solve_localized_mode(p)
    w = 101.0
    expected = bose_occupation(w, 100.0) * (
        (1 / math.pi) * (m.residue_Z / (w - m.omega_b)) ** 2 + dissipation_spectrum(w, p)
    )
    assert steady_fluctuation_spectrum(w, p, m) == pytest.approx(expected, rel=1e-14)
    assert expected == pytest.approx(
        bose_occupation(w, 100.0) * ((1 / math.pi) * (0.985 / (101 - 89.69)) ** 2 + dissipation_spectrum(w, p)),
        rel=2e-3,
    )
    cold = p.with_(kT=0.0)
    assert steady_fluctuation_spectrum(np.linspace(100.5, 200, 5), cold, m).max() == 0.0


@pytest.mark.parametrize("delta", [-10.0, 0.0, 10.0])
def test_grid_sum_rule_and_structure(delta):
    p = ModelParams(delta=delta)
    grid = build_spectral_grid(p, Family.DISSIPATION, 1e-8)
    assert np.all(np.diff(grid.nodes) > 0)
    assert np.all(grid.weights > 0)
    assert np.all(grid.nodes > p.omega_e)
    assert grid.tail_bound >= 0
    total = solve_localized_mode(p).residue_Z + grid.integrate(lambda w: dissipation_spectrum(w, p))
    assert abs(total - 1) < 1e-8


def test_thermal_grid_cutoff_envelope():
    p = ModelParams(delta=0.0, kT=100.0)
    grid = build_spectral_grid(p, Family.THERMAL, 1e-8)
    envelope = lambda w: spectral_density(w, p) * bose_occupation(w, p.kT)
    peak = envelope(p.omega_e + p.energy_unit)
    assert envelope(grid.cutoff) < 1e-8 * peak
    assert grid.tail_bound < 1e-8 * grid.integrate(envelope)


def test_noise_kernel_against_adaptive_quadrature():
    p = ModelParams(delta=0.0, kT=100.0)
    grid = build_spectral_grid(p, Family.THERMAL, 1e-9)
    value, err = noise_kernel(0.0, p, grid, full_output=True)
    ref = integrate.quad(lambda s: 2 * s * spectral_density(100 + s * s, p) * bose_occupation(100 + s * s, 100.0),
                         0, np.inf, epsabs=0, epsrel=1e-12, limit=500)[0]
    assert value.imag == 0 or abs(value.imag) < 1e-15
    assert value.real > 0
    assert abs(value.real - ref) < 1e-9 * ref
    assert err < 1e-9 * ref


def test_noise_kernel_symmetry_and_cold_limit():
    p = ModelParams(delta=0.0, kT=20.0)
    grid = build_spectral_grid(p, Family.THERMAL, 1e-8, t_budget=2.0, oscillation_limit=np.inf)
    for tau in (0.3, 1.1):
        assert noise_kernel(-tau, p, grid) == pytest.approx(np.conj(noise_kernel(tau, p, grid)), rel=1e-12)
    cold = p.with_(kT=0.0)
    cold_grid = build_spectral_grid(cold, Family.THERMAL, 1e-8)
    assert noise_kernel(0.7, cold, cold_grid) == 0


def test_noise_kernel_refuses_beyond_budget():
    p = ModelParams(delta=0.0, kT=20.0)
    grid = build_spectral_grid(p, Family.THERMAL, 1e-8, t_budget=1.0, oscillation_limit=np.inf)
    with pytest.raises(ToleranceNotMet):
        noise_kernel(5.0, p, grid)
