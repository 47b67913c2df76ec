"""Thermal fluctuations ``v(t, t)`` and the mean cavity photon number.

The double time integral is reduced in frequency space,

    v(t, t) = int dw J(w) n_bar(w) |U_t(w)|**2,
    U_t(w)  = int_0^t u(s) exp(i w s) ds,

and ``U_t`` is advanced panel by panel.  With ``u`` linear between samples
each panel integral is exact (Filon-type weights), so large ``w`` costs no
extra time resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, ToleranceNotMet
from .model import ModelParams
from .propagator import ComplexSeries
from .spectral import (
    DEFAULT_TOL,
    Family,
    LocalizedMode,
    SpectralGrid,
    bose_occupation,
    build_spectral_grid,
    spectral_density,
    steady_fluctuation_spectrum,
)

# Offsets above this many energy units are integrated without resolving the
# exp(i w t) fringes; the fringe term there decays like w**-5/2.
FRINGE_LIMIT = 400.0
_BLOCK = 64


@dataclass(frozen=True, eq=False)
class FluctuationSeries:
    """Samples of ``v(t_k, t_k)`` and its exact time derivative."""

    dt: float
    values: np.ndarray
    v_dot: np.ndarray
    params: ModelParams
    t0: float = 0.0

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))


def thermal_grid_for(p: ModelParams, t_max: float, tol: float = DEFAULT_TOL) -> SpectralGrid:
    """Thermal grid resolving the fringes of ``U_t`` up to ``t_max``."""
    limit = max(FRINGE_LIMIT * p.energy_unit, 4 * abs(p.delta) + 16 * p.energy_unit)
    return build_spectral_grid(p, Family.THERMAL, tol, t_budget=t_max, oscillation_limit=limit)


def _filon(theta):
    """``A = int_0^1 (1-s) e^{i theta s} ds`` and ``B = int_0^1 s e^{i theta s} ds``."""
    theta = np.asarray(theta, dtype=float)
    small = np.abs(theta) < 1e-2
    th = np.where(small, 1.0, theta)
    e = np.exp(1j * th)
    B = e / (1j * th) + (e - 1) / th**2
    A = (e - 1) / (1j * th) - B
    z = 1j * theta
    # sum_j z^j/j! (1/(j+1) - 1/(j+2)) and sum_j z^j/(j! (j+2))
    A_s = 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720
    B_s = 0.5 + z / 3 + z**2 / 8 + z**3 / 30 + z**4 / 144
    return np.where(small, A_s, A), np.where(small, B_s, B)


def _check_grid(u: ComplexSeries, p: ModelParams, grid: SpectralGrid):
    if grid.family is not Family.THERMAL:
        raise GridMismatch("v_evolution needs a thermal grid")
    if grid.params != p or u.params != p:
        raise GridMismatch("propagator, grid and parameters disagree")
    if grid.t_budget + 1e-12 < u.t_max:
        raise GridMismatch(f"grid resolves t <= {grid.t_budget}, series runs to {u.t_max}")


def v_evolution(u: ComplexSeries, p: ModelParams, grid: SpectralGrid | None = None) -> FluctuationSeries:
    """Time evolution of ``v(t, t)`` and ``dv/dt`` along the propagator samples.

    Cost is ``O(len(u) * len(grid))``.

    Raises
    ------
    GridMismatch
        If the grid is not a thermal grid for ``p`` covering ``u.t_max``.
    """
    if grid is None:
        grid = thermal_grid_for(p, u.t_max)
    _check_grid(u, p, grid)
    n = len(u)
    if p.kT == 0:
        return FluctuationSeries(u.dt, np.zeros(n), np.zeros(n), p, u.t0)

    h = u.dt
    w = u.envelope
    nu = grid.nodes - u.rotation
    mu = grid.weights * spectral_density(grid.nodes, p) * bose_occupation(grid.nodes, p.kT)
    A, B = _filon(nu * h)
    A *= h
    B *= h
    table = np.exp(1j * np.outer(np.arange(_BLOCK + 1), nu * h))

    v = np.zeros(n)
    vdot = np.zeros(n)
    U = np.zeros(len(nu), dtype=complex)
    for start in range(0, n - 1, _BLOCK):
        stop = min(start + _BLOCK, n - 1)
        k = stop - start
        base = np.exp(1j * nu * (start * h))
        phase = table[: k + 1] * base
        inc = phase[:k] * (w[start:stop, None] * A + w[start + 1 : stop + 1, None] * B)
        Us = np.cumsum(inc, axis=0)
        Us += U
        v[start + 1 : stop + 1] = (Us.real**2 + Us.imag**2) @ mu
        proj = (np.conj(phase[1:]) * Us) @ mu
        vdot[start + 1 : stop + 1] = 2 * (np.conj(w[start + 1 : stop + 1]) * proj).real
        U = Us[-1]
    return FluctuationSeries(h, v, vdot, p, u.t0)


def v_steady(
    p: ModelParams,
    m: LocalizedMode | None = None,
    grid: SpectralGrid | None = None,
    *,
    check: bool = True,
) -> float:
    """Steady-state fluctuation ``int V(w) dw`` over the band.

    Raises
    ------
    ToleranceNotMet
        If refinement of the grid moves the value by more than ``grid.tol``
        (relative), tail bound included.
    """
    from .spectral import solve_localized_mode

    if p.kT == 0:
        return 0.0
    m = m or solve_localized_mode(p)
    grid = grid or build_spectral_grid(p, Family.THERMAL)
    value = float(grid.integrate(lambda w: steady_fluctuation_spectrum(w, p, m)))
    if check:
        finer = float(grid.refine().integrate(lambda w: steady_fluctuation_spectrum(w, p, m)))
        # V <= J n_bar (Z**2/(w - w_b)**2 + 1/(w - w_c)**2...) ; bound the tail with sup of the bracket
        bracket = (m.residue_Z / (p.omega_e + grid.cutoff - m.omega_b)) ** 2 + 1.0 / max(
            grid.cutoff - p.delta, 1e-300
        ) ** 2
        err = abs(finer - value) + grid.tail_bound * bracket
        if err > grid.tol * max(abs(value), 1e-300):
            raise ToleranceNotMet(f"v_steady error {err:.3g} exceeds tol {grid.tol:g}")
    return value


def mean_photon_number(n0: float, u: ComplexSeries, v: FluctuationSeries) -> np.ndarray:
    """``n(t) = |u|**2 n0 + v``."""
    if len(u) != len(v) or not math.isclose(u.dt, v.dt, rel_tol=1e-12):
        raise GridMismatch("u and v sampled on different grids")
    return np.abs(u.values) ** 2 * n0 + v.values
