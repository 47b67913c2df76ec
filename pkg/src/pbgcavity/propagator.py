"""Retarded cavity propagator ``u(t, t0)`` by two independent routes.

Time-domain route
    The Dyson equation is solved for the envelope ``w(t) = u(t) exp(i r t)``
    rotating at a reference frequency ``r``.  Integrating it once in time
    gives a second-kind Volterra equation

        w(t) = 1 - i (omega_c - r) int_0^t w - K int_0^t F(t - s) w(s) ds,

    with ``K = C exp(-i pi/4) / sqrt(pi)`` and
    ``F(tau) = int_0^tau sigma**-1/2 exp(-i (omega_e - r) sigma) d sigma``.
    The kernel is continuous, so product integration against piecewise
    linear ``w`` (panel moments from Gauss-Jacobi/Legendre rules that are
    exact to round-off) is second order even though ``w`` carries a
    ``t**(3/2)`` term at the origin.

Spectral route
    Pole of the bound state plus the branch-cut integral of the continuous
    field spectrum.  Beyond the core region the branch cut is rotated onto
    the ray ``x = Y0 - i y`` where the oscillating factor decays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve
from scipy.special import erf

from .errors import StepTooLarge, ToleranceNotMet
from .model import ModelParams
from .quadrature import graded_edges, jacobi_rule, legendre_rule, panel_rule
from .spectral import (
    DEFAULT_TOL,
    OSCILLATION_PHASE,
    Family,
    LocalizedMode,
    SpectralGrid,
    _dissipation_of_offset,
    build_spectral_grid,
    core_split,
    dissipation_spectrum,
    solve_localized_mode,
)

DEFAULT_T_MAX = 20.0
ZERO_THRESHOLD = 1e-2
_MOMENT_ORDER = 16


@dataclass(frozen=True, eq=False)
class ComplexSeries:
    """Samples ``u(t_k, t0)`` on ``t_k = t0 + k dt``.

    ``derivative`` holds ``du/dt`` from the right-hand side of the Dyson
    equation at the nodes.  ``envelope`` is ``u exp(i rotation t)``.
    """

    dt: float
    values: np.ndarray
    derivative: np.ndarray
    envelope: np.ndarray
    rotation: float
    params: ModelParams
    t0: float = 0.0
    zero_crossings: tuple = field(default=())

    def __len__(self):
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self.values))

    @property
    def t_max(self) -> float:
        return self.t0 + self.dt * (len(self.values) - 1)

    def csv_rows(self):
        header = ("t", "re_u", "im_u", "abs_u")
        rows = zip(self.times, self.values.real, self.values.imag, np.abs(self.values))
        return header, rows


def default_dt(p: ModelParams) -> float:
    m = solve_localized_mode(p)
    periods = [2 * math.pi / p.omega_c]
    if p.omega_e - m.omega_b > 0:
        periods.append(2 * math.pi / (p.omega_e - m.omega_b))
    return min(periods) / 40


def max_dt(p: ModelParams) -> float:
    """Largest step that still samples both ``omega_c`` and ``omega_e`` above Nyquist."""
    return math.pi / max(p.omega_c, p.omega_e)


def default_rotation(p: ModelParams, m: LocalizedMode | None = None) -> float:
    """Frequency carrying most of the field spectrum."""
    m = m or solve_localized_mode(p)
    return m.omega_b if m.residue_Z >= 0.5 else p.omega_c


def _fresnel(tau, nu):
    """``int_0^tau s**-1/2 exp(-i nu s) ds`` as ``sqrt(tau) * phi(nu tau)``."""
    tau = np.asarray(tau, dtype=float)
    z = 1j * nu * tau
    small = np.abs(z) < 1e-3
    zs = np.where(small, 1.0, z)
    root = np.sqrt(zs)
    phi = np.sqrt(np.pi) * erf(root) / root
    # series 2 sum (-z)^k / (k! (2k+1)) near the origin
    series = 2 * (1 - z / 3 + z * z / 10 - z**3 / 42 + z**4 / 216)
    return np.sqrt(tau) * np.where(small, series, phi)


def _panel_moments(kernel_regular, kernel_singular, beta, h, n):
    """Moments of a kernel against the rising and falling linear hats.

    Returns ``(rise, fall)`` of length ``n`` where
    ``rise[m] = int_{mh}^{(m+1)h} k(tau) (tau - mh)/h dtau`` and ``fall`` uses
    ``((m+1)h - tau)/h``.  On the first panel the kernel is
    ``tau**beta * kernel_singular(tau)`` and is integrated with a Gauss-Jacobi
    rule; elsewhere ``kernel_regular`` is smooth and Gauss-Legendre is used.
    """
    x, w = legendre_rule(_MOMENT_ORDER)
    frac = 0.5 * (x + 1.0)
    m = np.arange(1, n)[:, None]
    vals = kernel_regular(h * (m + frac))
    rise = np.empty(n, dtype=complex)
    fall = np.empty(n, dtype=complex)
    rise[1:] = 0.5 * h * (vals * (w * frac)).sum(axis=1)
    fall[1:] = 0.5 * h * (vals * (w * (1 - frac))).sum(axis=1)
    s, wj = jacobi_rule(_MOMENT_ORDER, beta)
    vals0 = kernel_singular(h * s) * h ** (beta + 1.0)
    rise[0] = np.dot(wj * s, vals0)
    fall[0] = np.dot(wj * (1 - s), vals0)
    return rise, fall


def _hat_weights(rise, fall):
    """Split panel moments into the product-trapezoid weights.

    ``self_w`` multiplies the newest sample, ``hist[m]`` the sample ``m``
    steps back (``hist[0]`` unused) and ``start[n]`` the initial sample
    when the history spans ``n`` steps.
    """
    n = len(rise)
    hist = np.zeros(n + 1, dtype=complex)
    hist[1:n] = rise[: n - 1] + fall[1:n]
    start = np.zeros(n + 1, dtype=complex)
    start[1:] = rise
    return fall[0], hist, start


def _check_step(p: ModelParams, dt: float, t_max: float):
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if t_max < dt:
        raise ValueError("t_max must be >= dt")
    if dt > max_dt(p) * (1 + 1e-12):
        raise StepTooLarge(
            f"dt={dt:g} does not resolve the carrier periods (need dt <= pi/max(omega_c, omega_e) = {max_dt(p):g})"
        )


def solve_u_volterra(
    p: ModelParams,
    dt: float | None = None,
    t_max: float = DEFAULT_T_MAX,
    *,
    rotation: float | None = None,
) -> ComplexSeries:
    """Solve the Dyson equation for ``u(t, 0)`` on a uniform grid.

    Raises
    ------
    StepTooLarge
        If ``dt > pi / max(omega_c, omega_e)``.
    """
    dt = default_dt(p) if dt is None else float(dt)
    _check_step(p, dt, t_max)
    n_steps = int(math.floor(t_max / dt + 1e-9))
    r = default_rotation(p) if rotation is None else float(rotation)
    dc = p.omega_c - r
    de = p.omega_e - r
    K = p.coupling_C * np.exp(-0.25j * np.pi) / math.sqrt(math.pi)

    # integrated kernel k(tau) = -i dc - K F(tau); F ~ sqrt(tau) near 0
    rise, fall = _panel_moments(
        lambda tau: -1j * dc - K * _fresnel(tau, de),
        lambda tau: -K * _fresnel(tau, de) / np.sqrt(np.where(tau > 0, tau, 1.0)),
        0.5,
        dt,
        n_steps,
    )
    rise[0] += -1j * dc * dt / 2
    fall[0] += -1j * dc * dt / 2
    self_w, hist, start = _hat_weights(rise, fall)

    w = np.empty(n_steps + 1, dtype=complex)
    w[0] = 1.0
    # history stored newest-first so each step is one contiguous dot product
    rev = np.empty(n_steps + 1, dtype=complex)
    rev[n_steps] = 1.0
    denom = 1.0 - self_w
    for n in range(1, n_steps + 1):
        acc = 1.0 + start[n] * w[0]
        if n > 1:
            acc += np.dot(hist[1:n], rev[n_steps - n + 1 : n_steps])
        w[n] = acc / denom
        rev[n_steps - n] = w[n]

    # derivative from the unintegrated equation, kernel tau**-1/2 exp(-i de tau)
    rise2, fall2 = _panel_moments(
        lambda tau: np.exp(-1j * de * tau) / np.sqrt(tau),
        lambda tau: np.exp(-1j * de * tau),
        -0.5,
        dt,
        n_steps,
    )
    self2, hist2, start2 = _hat_weights(rise2, fall2)
    conv = fftconvolve(hist2[: n_steps + 1], w)[: n_steps + 1]
    memory = self2 * w + conv - hist2[: n_steps + 1] * w[0] + start2 * w[0]
    memory[0] = 0.0
    w_dot = -1j * dc * w - K * memory

    t = dt * np.arange(n_steps + 1)
    carrier = np.exp(-1j * r * t)
    u = w * carrier
    u_dot = (w_dot - 1j * r * w) * carrier
    return ComplexSeries(
        dt=dt,
        values=u,
        derivative=u_dot,
        envelope=w,
        rotation=r,
        params=p,
        zero_crossings=tuple(_near_zeros(t, np.abs(u))),
    )


def _near_zeros(t, mag, threshold=ZERO_THRESHOLD):
    """Times of local minima of ``|u|`` below ``threshold``."""
    if len(mag) < 3:
        return []
    inner = (mag[1:-1] <= mag[:-2]) & (mag[1:-1] <= mag[2:]) & (mag[1:-1] < threshold)
    return [float(x) for x in t[1:-1][inner]]


# -- spectral route ----------------------------------------------------------


def _ray_tail(t: float, p: ModelParams, y0: float, tol: float) -> complex:
    """``int_{y0}^inf D_d(x) exp(-i x t) dx`` along ``x = y0 - i y``.

    No pole of the field spectrum has real part above ``y0`` (checked in
    :func:`u_spectral`), so the deformation is exact; ``|D_d| <= (2C/pi)
    |x|**-5/2`` along the ray bounds the dropped remainder.
    """
    C = p.coupling_C
    scale = min(1.0 / t, y0) if t > 0 else y0
    y1 = scale / 8

    def remainder(y):
        return 4 * C / (3 * math.pi) * y**-1.5 * math.exp(-y * t)

    edges = [0.0, y1]
    while remainder(edges[-1]) > 1e-2 * tol:
        edges.append(2 * edges[-1])
    y, wy = panel_rule(np.asarray(edges), 16)
    x = y0 - 1j * y
    vals = _dissipation_of_offset(x, p.delta, C) * np.exp(-y * t)
    return -1j * np.exp(-1j * y0 * t) * np.dot(wy, vals)


def _max_pole_real_part(p: ModelParams) -> float:
    C, d = p.coupling_C, p.delta
    roots = np.roots([1.0, -2 * d, d * d, C * C])
    return float(roots.real.max())


def spectral_grid_for(p: ModelParams, t_max: float, tol: float = DEFAULT_TOL) -> SpectralGrid:
    return build_spectral_grid(p, Family.DISSIPATION, tol, t_budget=t_max)


def u_spectral(t, p: ModelParams, m: LocalizedMode | None = None, grid: SpectralGrid | None = None):
    """``u(t, 0)`` from the bound-state pole plus the branch-cut integral.

    ``grid`` must be a ``dissipation`` grid whose oscillation budget covers
    every requested time.

    Raises
    ------
    ToleranceNotMet
        If some ``t`` exceeds ``grid.t_budget``.
    """
    m = m or solve_localized_mode(p)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("u_spectral needs t >= t0 = 0")
    if grid is None:
        grid = spectral_grid_for(p, max(float(t_arr.max()), 1.0))
    if grid.family is not Family.DISSIPATION:
        raise ValueError("u_spectral needs a dissipation grid")
    if t_arr.max() > grid.t_budget * (1 + 1e-12) and t_arr.max() > 0:
        raise ToleranceNotMet(f"t={t_arr.max()} beyond the grid oscillation budget {grid.t_budget}")
    y0 = grid.split
    if _max_pole_real_part(p) >= y0:
        raise ToleranceNotMet("core split does not enclose the poles of the field spectrum")

    x_core = grid.core_nodes - p.omega_e
    wd_core = grid.core_weights * dissipation_spectrum(grid.core_nodes, p)
    wd_all = grid.weights * dissipation_spectrum(grid.nodes, p)
    out = np.empty(len(t_arr), dtype=complex)
    for i, ti in enumerate(t_arr):
        if ti == 0:
            branch = wd_all.sum()
        else:
            branch = np.dot(wd_core, np.exp(-1j * x_core * ti)) + _ray_tail(ti, p, y0, grid.tol)
        out[i] = m.residue_Z * np.exp(-1j * (m.omega_b - p.omega_e) * ti) + branch
    out *= np.exp(-1j * p.omega_e * t_arr)
    return out[0] if np.ndim(t) == 0 else out


def field_spectrum(omega, p: ModelParams):
    """Return ``((omega_b, Z), D_d(omega))``: the delta component and the density."""
    m = solve_localized_mode(p)
    return (m.omega_b, m.residue_Z), dissipation_spectrum(omega, p)


def steady_amplitude(p: ModelParams) -> float:
    """Long-time envelope of ``|u|``: the bound-state weight ``Z``."""
    return solve_localized_mode(p).residue_Z
