"""Frequency-domain objects of the band-edge reservoir.

Everything here is a pure function of :class:`~pbgcavity.model.ModelParams`.
Frequencies are absolute (``omega``); internally most routines work with the
offset ``x = omega - omega_e`` from the band edge.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .errors import NonPositiveDelay, NonPositiveFrequency, ToleranceNotMet
from .model import ModelParams
from .quadrature import graded_edges, panel_rule

GRID_ORDER = 16
# Largest phase of exp(-i x t) allowed across one panel of GRID_ORDER nodes.
OSCILLATION_PHASE = 8.0
DEFAULT_TOL = 1e-8


# -- point functions ---------------------------------------------------------


def spectral_density(omega, p: ModelParams):
    """``J(omega) = (C/pi) / sqrt(omega - omega_e)`` above the band edge, 0 below."""
    omega = np.asarray(omega, dtype=float)
    x = omega - p.omega_e
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(x > 0, p.coupling_C / (np.pi * np.sqrt(np.where(x > 0, x, 1.0))), 0.0)
    return out[()] if out.ndim == 0 else out


def bose_occupation(omega, kT: float):
    """Bose-Einstein occupation ``1/(exp(omega/kT) - 1)``; identically 0 at ``kT = 0``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise NonPositiveFrequency("Bose occupation needs omega > 0")
    if kT < 0:
        raise ValueError(f"kT must be >= 0, got {kT}")
    if kT == 0:
        out = np.zeros_like(omega)
    else:
        with np.errstate(over="ignore"):
            out = 1.0 / np.expm1(omega / kT)
    return out[()] if out.ndim == 0 else out


def memory_kernel(tau, p: ModelParams):
    """Closed-form dissipation kernel ``C exp(-i(omega_e tau + pi/4)) / sqrt(pi tau)``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise NonPositiveDelay("the kernel is only defined pointwise for tau > 0")
    out = p.coupling_C * np.exp(-1j * (p.omega_e * tau + np.pi / 4)) / np.sqrt(np.pi * tau)
    return out[()] if out.ndim == 0 else out


def _dissipation_of_offset(x, delta: float, C: float):
    """Continuous field spectrum as a function of ``x = omega - omega_e``.

    Accepts complex ``x`` (principal square root) for contour deformation.
    """
    sx = np.sqrt(x)
    return (C / np.pi) * sx / ((x - delta) ** 2 * x + C * C)


def dissipation_spectrum(omega, p: ModelParams):
    """Continuous part of the reservoir-modified cavity field spectrum."""
    omega = np.asarray(omega, dtype=float)
    x = omega - p.omega_e
    xp = np.where(x > 0, x, 0.0)
    out = np.where(x > 0, _dissipation_of_offset(xp, p.delta, p.coupling_C), 0.0)
    return out[()] if out.ndim == 0 else out


# -- localized mode ----------------------------------------------------------


@dataclass(frozen=True)
class LocalizedMode:
    """Bound-state pole of the propagator inside the gap."""

    omega_b: float
    residue_Z: float
    root_x: float  # sqrt(omega_e - omega_b)

    def residual(self, p: ModelParams) -> float:
        """``(omega_c - omega_b) sqrt(omega_e - omega_b) - C``."""
        x = self.root_x
        return (p.delta + x * x) * x - p.coupling_C


def _cubic_root(delta: float, C: float) -> float:
    # x**3 + delta*x - C has exactly one positive root, bracketed below
    f = lambda x: (x * x + delta) * x - C
    lo = math.sqrt(-delta) if delta < 0 else 0.0
    hi = lo + C ** (1.0 / 3.0)
    if delta > 0:
        hi = min(hi, C / delta)
    # f is convex on x > 0, so Newton from the upper bracket is monotone
    x = hi
    for _ in range(200):
        fx = f(x)
        if fx == 0:
            return x
        if fx < 0:
            lo = max(lo, x)
        else:
            hi = min(hi, x)
        step = fx / (3 * x * x + delta)
        x_new = x - step
        if not lo < x_new < hi:
            x_new = 0.5 * (lo + hi)
        if abs(x_new - x) <= 4e-16 * max(x, 1e-300):
            x = x_new
            break
        x = x_new
    return x


def solve_localized_mode(p: ModelParams) -> LocalizedMode:
    """Solve ``(omega_c - omega_b) sqrt(omega_e - omega_b) = C`` for the gap pole.

    With ``x = sqrt(omega_e - omega_b)`` the condition is the cubic
    ``x**3 + delta x - C = 0``; its unique positive root gives
    ``omega_b = omega_e - x**2`` and ``Z = 2x**2 / (3x**2 + delta)``.
    """
    x = _cubic_root(p.delta, p.coupling_C)
    x2 = x * x
    return LocalizedMode(omega_b=p.omega_e - x2, residue_Z=2 * x2 / (3 * x2 + p.delta), root_x=x)


def steady_fluctuation_spectrum(omega, p: ModelParams, m: LocalizedMode):
    """Spectral integrand of the steady thermal-fluctuation number."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= p.omega_e):
        raise ValueError("steady fluctuation spectrum is defined for omega > omega_e")
    nbar = bose_occupation(omega, p.kT)
    local = spectral_density(omega, p) * (m.residue_Z / (omega - m.omega_b)) ** 2
    return nbar * (local + dissipation_spectrum(omega, p))


# -- quadrature grids --------------------------------------------------------


class Family(str, enum.Enum):
    DISSIPATION = "dissipation"  # field-spectrum integrals, exact mapped tail
    THERMAL = "thermal"  # Bose-weighted integrals, truncated at a cutoff

    def __str__(self):
        return self.value


@dataclass(frozen=True, eq=False)
class SpectralGrid:
    """Quadrature rule for ``int_{omega_e}^inf f(omega) d omega``.

    The first ``n_core`` nodes cover ``[omega_e, omega_e + split]`` using
    ``omega = omega_e + s**2``; the remaining nodes cover the tail.  Weights
    already contain the Jacobians, so callers evaluate the plain integrand
    (including its band-edge singularity) at ``nodes``.
    """

    params: ModelParams
    family: Family
    tol: float
    nodes: np.ndarray
    weights: np.ndarray
    tail_bound: float
    n_core: int
    split: float
    cutoff: float
    t_budget: float
    oscillation_limit: float
    resolution: float

    def __len__(self):
        return len(self.nodes)

    @property
    def core_nodes(self):
        return self.nodes[: self.n_core]

    @property
    def core_weights(self):
        return self.weights[: self.n_core]

    def integrate(self, f) -> float:
        return np.dot(self.weights, f(self.nodes))

    def refine(self) -> "SpectralGrid":
        """Same construction with every panel width halved."""
        return build_spectral_grid(
            self.params,
            self.family,
            self.tol,
            t_budget=self.t_budget,
            oscillation_limit=self.oscillation_limit,
            resolution=2 * self.resolution,
        )


def core_split(p: ModelParams, family: Family) -> float:
    """Offset ``Y0`` separating the substituted core from the tail."""
    unit = p.energy_unit
    y0 = max(16.0 * unit, 4.0 * abs(p.delta))
    if family is Family.THERMAL:
        y0 = max(y0, 4.0 * p.kT)
    return y0


def _offset_width(p: ModelParams, family: Family, t_budget: float, osc_limit: float):
    unit = p.energy_unit
    C = p.coupling_C
    delta = p.delta
    gamma = C / math.sqrt(delta) if delta > unit else None
    kT = p.kT if family is Family.THERMAL and p.kT > 0 else None

    def width(x):
        w = max(0.5 * unit, 0.5 * x)
        if gamma is not None:
            w = min(w, max(0.5 * gamma, 0.25 * abs(x - delta)))
        if kT is not None:
            w = min(w, 0.5 * kT)
        if t_budget > 0 and x <= osc_limit:
            w = min(w, OSCILLATION_PHASE / t_budget)
        return w

    return width


def _thermal_cutoff(p: ModelParams, tol: float, y0: float) -> float:
    """Offset where the Bose-weighted density falls below ``1e-3 tol`` of its value at ``x = C**(2/3)``."""
    unit = p.energy_unit
    we, kT = p.omega_e, p.kT

    def log_env(x):
        w = we + x
        return -0.5 * math.log(x / unit) - w / kT - math.log1p(-math.exp(-w / kT))

    # the envelope threshold sits well below tol so the tail bound stays inside it
    target = log_env(unit) + math.log(1e-3 * tol)
    if log_env(y0) <= target:
        return y0
    hi = 2 * y0
    while log_env(hi) > target:
        hi *= 2
    return brentq(lambda x: log_env(x) - target, y0, hi, xtol=1e-6 * y0)


def _thermal_tail_bound(p: ModelParams, x_cap: float) -> float:
    # J <= J(omega_cap) beyond the cutoff and int n_bar = -kT log(1 - exp(-omega/kT))
    w_cap = p.omega_e + x_cap
    return (p.coupling_C / math.pi) / math.sqrt(x_cap) * (-p.kT * math.log1p(-math.exp(-w_cap / p.kT)))


@lru_cache(maxsize=256)
def _build(p, family, tol, t_budget, osc_limit, resolution):
    unit = p.energy_unit
    y0 = core_split(p, family)
    xwidth = _offset_width(p, family, t_budget, osc_limit)
    sunit = math.sqrt(unit)

    def swidth(s):
        w = min(0.5 * sunit, max(0.5 * s, 0.01 * sunit))
        if s > 0:
            w = min(w, xwidth(s * s) / (2 * s))
        return w / resolution

    s_edges = graded_edges(0.0, math.sqrt(y0), swidth)
    s, ws = panel_rule(s_edges, GRID_ORDER)
    core_x, core_w = s * s, 2 * s * ws

    if family is Family.DISSIPATION:
        # x = y0 / w**2 maps [y0, inf) onto (0, 1]; the x**(-5/2) decay becomes ~w**2
        w_nodes, w_w = panel_rule(np.linspace(0.0, 1.0, 1 + int(4 * resolution)), GRID_ORDER)
        tail_x = y0 / w_nodes**2
        tail_w = 2 * y0 / w_nodes**3 * w_w
        order = np.argsort(tail_x)
        tail_x, tail_w = tail_x[order], tail_w[order]
        tail_bound = 0.0
        cutoff = math.inf
    elif p.kT == 0:
        tail_x = tail_w = np.empty(0)
        tail_bound = 0.0
        cutoff = y0
    else:
        cutoff = _thermal_cutoff(p, tol, y0)
        if cutoff > y0:
            edges = graded_edges(y0, cutoff, lambda x: xwidth(x) / resolution)
            tail_x, tail_w = panel_rule(edges, GRID_ORDER)
        else:
            tail_x = tail_w = np.empty(0)
        tail_bound = _thermal_tail_bound(p, cutoff)

    nodes = p.omega_e + np.concatenate([core_x, tail_x])
    weights = np.concatenate([core_w, tail_w])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return SpectralGrid(
        params=p,
        family=family,
        tol=tol,
        nodes=nodes,
        weights=weights,
        tail_bound=tail_bound,
        n_core=len(core_x),
        split=y0,
        cutoff=cutoff,
        t_budget=t_budget,
        oscillation_limit=osc_limit,
        resolution=resolution,
    )


def _probe_error(grid: SpectralGrid, reference: SpectralGrid | None) -> tuple[float, float]:
    """Absolute error estimate and scale of the family's probe integral."""
    p = grid.params
    if grid.family is Family.DISSIPATION:
        z = solve_localized_mode(p).residue_Z
        total = z + grid.integrate(lambda w: dissipation_spectrum(w, p))
        return abs(total - 1.0), 1.0
    if p.kT == 0:
        return 0.0, 1.0
    f = lambda w: spectral_density(w, p) * bose_occupation(w, p.kT)
    value = grid.integrate(f)
    return abs(value - reference.integrate(f)) + grid.tail_bound, abs(value)


def build_spectral_grid(
    p: ModelParams,
    family="dissipation",
    tol: float = DEFAULT_TOL,
    *,
    t_budget: float = 0.0,
    oscillation_limit: float = math.inf,
    resolution: float = 1.0,
    max_refinements: int = 4,
) -> SpectralGrid:
    """Quadrature grid over ``(omega_e, inf)`` for one integrand family.

    Parameters
    ----------
    t_budget : float
        Largest time ``t`` for which integrands carrying ``exp(-i omega t)``
        stay resolved (panel phase at most ``OSCILLATION_PHASE``).
    oscillation_limit : float
        Offset ``omega - omega_e`` beyond which the oscillation constraint
        is dropped.  Smooth integrands that decay fast there do not need it.

    Raises
    ------
    ToleranceNotMet
        If the family's probe integral (the sum rule for ``dissipation``,
        ``int J n_bar`` for ``thermal``) misses ``tol`` after refinement.
    """
    if not tol > 0:
        raise ValueError("tol must be > 0")
    family = Family(family)
    t_budget = float(t_budget)
    res = float(resolution)
    for _ in range(max_refinements + 1):
        grid = _build(p, family, tol, t_budget, float(oscillation_limit), res)
        coarse = _build(p, family, tol, 0.0, math.inf, res)
        fine = _build(p, family, tol, 0.0, math.inf, 2 * res) if family is Family.THERMAL else None
        err, scale = _probe_error(coarse, fine)
        if err <= tol * max(scale, 1e-300) or (family is Family.THERMAL and scale == 0):
            return grid
        res *= 2
    raise ToleranceNotMet(
        f"{family} grid misses tol={tol:g} (probe error {err:.3g}) after {max_refinements} refinements"
    )


def noise_kernel(tau, p: ModelParams, grid: SpectralGrid, *, full_output: bool = False):
    """Thermal noise kernel ``int J(w) n_bar(w) exp(-i w tau) dw``.

    The error estimate is the change under panel refinement plus the
    truncation bound of the grid.

    Raises
    ------
    ToleranceNotMet
        If ``|tau|`` exceeds the oscillation budget of ``grid`` or the error
        estimate exceeds ``grid.tol`` relative to ``int J n_bar``.
    """
    if grid.family is not Family.THERMAL:
        raise ValueError("noise_kernel needs a thermal grid")
    tau = float(tau)
    if p.kT == 0:
        return (0j, 0.0) if full_output else 0j
    if abs(tau) > 0 and (abs(tau) > grid.t_budget or grid.oscillation_limit < grid.cutoff):
        raise ToleranceNotMet(f"tau={tau} outside the oscillation budget of the grid")

    def evaluate(g):
        w = g.nodes
        dens = spectral_density(w, p) * bose_occupation(w, p.kT)
        phase = np.exp(-1j * (w - p.omega_e) * tau) * np.exp(-1j * p.omega_e * tau)
        return np.dot(g.weights, dens * phase), np.dot(g.weights, dens)

    value, scale = evaluate(grid)
    finer, _ = evaluate(grid.refine())
    err = abs(finer - value) + grid.tail_bound
    if err > grid.tol * scale:
        raise ToleranceNotMet(f"noise kernel error {err:.3g} exceeds {grid.tol:g} x {scale:.3g}")
    return (value, err) if full_output else value
