"""Master-equation coefficients and photon-number distributions.

A Fock state ``|n0>`` stays diagonal under the single-mode master
equation.  Its exact photon statistics are a binomial mixture of negative
binomials: ``k ~ Binomial(n0, Omega)`` survivors, and given ``k`` the count
``n - k`` is negative binomial with ``k + 1`` successes and success
probability ``1/(1 + v)``.  That representation gives the closed form, the
limit ``v -> 0`` and an exact tail mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import binom as binom_coef
from scipy.special import gammaln, logsumexp, xlog1py, xlogy
from scipy.stats import nbinom

from .errors import GridMismatch, InvalidParameters, MaskGap, TruncationTooSmall, ZeroFluctuation
from .fluctuation import FluctuationSeries
from .model import ModelParams
from .propagator import ZERO_THRESHOLD, ComplexSeries
from .spectral import bose_occupation

TAIL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MasterEqCoefficients:
    """Time-local coefficients; entries where ``mask`` is False are NaN."""

    dt: float
    kappa: np.ndarray
    omega_c_renorm: np.ndarray
    kappa_tilde: np.ndarray
    mask: np.ndarray
    t0: float = 0.0

    def __len__(self):
        return len(self.kappa)

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(len(self.kappa))

    def valid_intervals(self):
        """``(t_start, t_end)`` of each run of unmasked samples."""
        t = self.times
        out = []
        start = None
        for i, ok in enumerate(self.mask):
            if ok and start is None:
                start = i
            if not ok and start is not None:
                out.append((float(t[start]), float(t[i - 1])))
                start = None
        if start is not None:
            out.append((float(t[start]), float(t[-1])))
        return out


@dataclass(frozen=True, eq=False)
class FockDistribution:
    """Photon-number probabilities on ``0..nmax`` and the mass beyond ``nmax``.

    ``negative_mass`` is nonzero only for the linearized distribution and
    records how much negative probability was clipped to zero.
    """

    probs: np.ndarray
    tail_bound: float
    negative_mass: float = 0.0

    @property
    def nmax(self) -> int:
        return len(self.probs) - 1

    def mean(self) -> float:
        return float(np.dot(np.arange(len(self.probs)), self.probs))

    def total(self) -> float:
        return float(self.probs.sum())


def coefficients(
    u: ComplexSeries, v: FluctuationSeries, threshold: float = ZERO_THRESHOLD
) -> MasterEqCoefficients:
    """``kappa + i omega_c' = -du/dt / u`` and ``kappa_tilde = dv/dt + 2 v kappa``.

    Samples with ``|u| < threshold`` are masked.
    """
    if len(u) != len(v) or not math.isclose(u.dt, v.dt, rel_tol=1e-12):
        raise GridMismatch("u and v sampled on different grids")
    mag = np.abs(u.values)
    mask = mag >= threshold
    safe = np.where(mask, u.values, 1.0)
    ratio = -u.derivative / safe
    kappa = np.where(mask, ratio.real, np.nan)
    omega = np.where(mask, ratio.imag, np.nan)
    kt = np.where(mask, v.v_dot + 2 * v.values * ratio.real, np.nan)
    return MasterEqCoefficients(u.dt, kappa, omega, kt, mask, u.t0)


def _omega(u_t, v_t):
    return min(max(abs(u_t) ** 2 / (1.0 + v_t), 0.0), 1.0)


def fock_distribution(n0: int, u_t: complex, v_t: float, nmax: int) -> FockDistribution:
    """Exact photon-number distribution at one time for the initial state ``|n0>``.

    Each term is ``C(n0,k) C(n,k) v**(n-k) Omega**k (1-Omega)**(n0-k) / (1+v)**(n+1)``,
    summed in log space, so ``v = 0`` and ``Omega in {0, 1}`` are exact.

    Raises
    ------
    TruncationTooSmall
        If more than ``1e-9`` of probability lies above ``nmax``.
    """
    n0 = int(n0)
    if n0 < 0 or nmax < 0:
        raise ValueError("n0 and nmax must be >= 0")
    v_t = float(v_t)
    if v_t < 0:
        if v_t < -1e-12:
            raise ValueError(f"v must be >= 0, got {v_t}")
        v_t = 0.0
    om = _omega(u_t, v_t)
    n = np.arange(nmax + 1)[:, None]
    k = np.arange(n0 + 1)[None, :]
    nk = n - k
    valid = nk >= 0
    nk_safe = np.where(valid, nk, 0)
    logt = (
        gammaln(n0 + 1)
        - gammaln(k + 1)
        - gammaln(n0 - k + 1)
        + gammaln(n + 1)
        - gammaln(k + 1)
        - gammaln(nk_safe + 1)
        + xlogy(nk_safe, v_t)
        + xlogy(k, om)
        + xlog1py(n0 - k, -om)
        - (n + 1) * math.log1p(v_t)
    )
    logt = np.where(valid, logt, -np.inf)
    probs = np.exp(logsumexp(logt, axis=1))
    tail = _exact_tail(n0, om, v_t, nmax)
    if tail > TAIL_TOL:
        raise TruncationTooSmall(f"tail mass {tail:.3g} above nmax={nmax}", tail)
    return FockDistribution(probs, tail)


def _exact_tail(n0, om, v_t, nmax):
    k = np.arange(n0 + 1)
    # binomial weights in log space; scipy's pmf overflows for subnormal om
    weights = np.exp(
        gammaln(n0 + 1) - gammaln(k + 1) - gammaln(n0 - k + 1) + xlogy(k, om) + xlog1py(n0 - k, -om)
    )
    p_success = 1.0 / (1.0 + v_t)
    sf = nbinom.sf(nmax - k, k + 1, p_success)
    return float(np.dot(weights, sf))


def auto_nmax(n0: int, v_t: float) -> int:
    """Smallest doubling of ``n0 + 10 (1 + v)`` that leaves under ``1e-9`` in the tail."""
    nmax = int(math.ceil(n0 + 10 * (1 + v_t)))
    om = 1.0  # the Omega = 1 mixture component has the heaviest tail
    while _exact_tail(n0, om, max(v_t, 0.0), nmax) > TAIL_TOL:
        nmax *= 2
    return nmax


def fock_distribution_auto(n0: int, u_t: complex, v_t: float) -> FockDistribution:
    return fock_distribution(n0, u_t, v_t, auto_nmax(n0, v_t))


def thermal_like(v_t: float, nmax: int) -> FockDistribution:
    """Geometric distribution with mean ``v``."""
    v_t = max(float(v_t), 0.0)
    n = np.arange(nmax + 1)
    if v_t == 0:
        probs = (n == 0).astype(float)
        return FockDistribution(probs, 0.0)
    q = v_t / (1 + v_t)
    probs = np.exp(xlogy(n, q) - math.log1p(v_t))
    return FockDistribution(probs, q ** (nmax + 1))


def fock_distribution_linearized(n0: int, u_t: complex, v_t: float, nmax: int) -> FockDistribution:
    """First-order-in-``Omega`` distribution around the thermal-like state.

    Negative entries are set to zero and their mass reported in
    ``negative_mass``.

    Raises
    ------
    ZeroFluctuation
        If ``v_t == 0``.
    """
    v_t = float(v_t)
    if v_t <= 0:
        raise ZeroFluctuation("the linearized distribution needs v > 0")
    om = _omega(u_t, v_t)
    base = thermal_like(v_t, nmax)
    n = np.arange(nmax + 1)
    raw = base.probs * (1 - (1 - n / v_t) * om * n0)
    negative = float(-raw[raw < 0].sum())
    q = v_t / (1 + v_t)
    tail = q ** (nmax + 1) * (1 + om * n0 * (nmax + 1) / v_t)
    return FockDistribution(np.clip(raw, 0.0, None), tail, negative)


def bose_einstein_reference(p: ModelParams, nmax: int) -> FockDistribution:
    """Geometric distribution at the reservoir occupation of the bare cavity frequency."""
    if p.omega_c <= 0:
        raise ValueError("omega_c must be > 0")
    return thermal_like(bose_occupation(p.omega_c, p.kT), nmax)


def distribution_distance(a: FockDistribution, b: FockDistribution) -> float:
    """Total-variation distance; the shorter vector is zero-padded."""
    size = max(len(a.probs), len(b.probs))
    pa = np.zeros(size)
    pb = np.zeros(size)
    pa[: len(a.probs)] = a.probs
    pb[: len(b.probs)] = b.probs
    return 0.5 * float(np.abs(pa - pb).sum())


def _generator(kappa, kappa_t, nmax, closed=False):
    """Rates of the diagonal sector as ``(loss, gain)`` per level.

    Loss ``n -> n-1`` at ``(2 kappa + kappa_t) n``, gain ``n -> n+1`` at
    ``kappa_t (n + 1)``.  Unless ``closed``, gain out of ``nmax`` is dropped
    so the truncated generator conserves probability.
    """
    n = np.arange(nmax + 1)
    loss = (2 * kappa + kappa_t) * n
    gain = kappa_t * (n + 1)
    if not closed:
        gain[-1] = 0.0
    return loss, gain


def _apply(p, loss, gain):
    out = -(loss + gain) * p
    out[:-1] += loss[1:] * p[1:]
    out[1:] += gain[:-1] * p[:-1]
    return out


def _annihilator(q, degree):
    # coefficients c_k with p_{N+1} = sum_k c_k p_{N-degree+k}, exact for
    # sequences of the form q**n * poly_degree(n)
    k = np.arange(degree + 1)
    return -binom_coef(degree + 1, k) * (-q) ** (degree + 1 - k)


def _apply_closed(p, v, kappa, kappa_t, degree):
    nmax = len(p) - 1
    loss, gain = _generator(kappa, kappa_t, nmax, closed=True)
    out = _apply(p, loss, gain)
    q = v / (1 + v)
    beyond = _annihilator(q, degree) @ p[nmax - degree:]
    out[-1] += (2 * kappa + kappa_t) * (nmax + 1) * beyond
    return out, kappa_t - 2 * kappa * v


@dataclass(frozen=True, eq=False)
class OracleResult:
    times: np.ndarray
    probs: np.ndarray  # shape (len(times), nmax + 1)
    valid_intervals: list
    interrupted: bool


def master_equation_oracle(
    coeffs: MasterEqCoefficients,
    p0: FockDistribution,
    nmax: int | None = None,
    *,
    strict: bool = False,
    closure: str = "truncate",
    start: float = 0.0,
    v0: float = 0.0,
    degree: int | None = None,
) -> OracleResult:
    """Integrate the diagonal master equation with classical RK4.

    The step is ``2 dt`` so that the odd samples supply the midpoint
    coefficients.  Integration stops at the first masked sample.

    Parameters
    ----------
    closure : {"truncate", "geometric"}
        ``"truncate"`` drops every transition out of ``0..nmax``.  When the
        rates turn negative this chain amplifies whatever the cut injects
        and the result can be useless.  ``"geometric"`` instead supplies
        ``p[nmax + 1]`` from the fact that the master equation maps a state
        supported on ``0..M`` to ``q**n * poly_M(n)`` with
        ``q = v / (1 + v)``; ``v`` is carried along through
        ``dv/dt = kappa_t - 2 kappa v`` from ``v(0) = 0``.  It requires
        ``nmax > M`` where ``M`` is the top occupied level of ``p0``.
    start : float
        Time at which ``p0`` is given; integration starts at the nearest
        sample and runs until the next masked sample.  Restarting at the
        opening of each valid window covers the windows one by one.
    v0, degree : float, int
        Closure state at ``start`` for a ``p0`` that is already of the
        form ``q**n * poly_degree(n)`` (``degree`` defaults to the top
        occupied level of ``p0``).

    Raises
    ------
    MaskGap
        When ``strict`` and the mask interrupts the integration; the
        exception carries the partial result.
    """
    if closure not in ("truncate", "geometric"):
        raise InvalidParameters(f"unknown closure {closure!r}")
    nmax = p0.nmax if nmax is None else int(nmax)
    p = np.zeros(nmax + 1)
    m = min(len(p0.probs), nmax + 1)
    p[:m] = p0.probs[:m]
    if degree is None:
        degree = int(np.flatnonzero(p0.probs)[-1]) if np.any(p0.probs) else 0
    closed = closure == "geometric"
    if closed and nmax <= degree:
        raise InvalidParameters("geometric closure needs nmax above the initial support")
    kap, kt, mask = coeffs.kappa, coeffs.kappa_tilde, coeffs.mask
    H = 2 * coeffs.dt
    t = coeffs.times
    i = int(round((start - coeffs.t0) / coeffs.dt))
    if not 0 <= i < len(t):
        raise InvalidParameters(f"start={start} outside the coefficient series")
    out_t = [t[i]]
    out_p = [p.copy()]
    interrupted = not mask[i]
    v = float(v0)
    while not interrupted and i + 2 < len(kap):
        if not (mask[i + 1] and mask[i + 2]):
            interrupted = True
            break
        if closed:
            def f(j, x, w):
                return _apply_closed(x, w, kap[j], kt[j], degree)
            k1, m1 = f(i, p, v)
            k2, m2 = f(i + 1, p + 0.5 * H * k1, v + 0.5 * H * m1)
            k3, m3 = f(i + 1, p + 0.5 * H * k2, v + 0.5 * H * m2)
            k4, m4 = f(i + 2, p + H * k3, v + H * m3)
            v = v + H / 6 * (m1 + 2 * m2 + 2 * m3 + m4)
        else:
            l0, g0 = _generator(kap[i], kt[i], nmax)
            l1, g1 = _generator(kap[i + 1], kt[i + 1], nmax)
            l2, g2 = _generator(kap[i + 2], kt[i + 2], nmax)
            k1 = _apply(p, l0, g0)
            k2 = _apply(p + 0.5 * H * k1, l1, g1)
            k3 = _apply(p + 0.5 * H * k2, l1, g1)
            k4 = _apply(p + H * k3, l2, g2)
        p = p + H / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        i += 2
        out_t.append(t[i])
        out_p.append(p.copy())
    result = OracleResult(np.asarray(out_t), np.asarray(out_p), coeffs.valid_intervals(), interrupted)
    if interrupted and strict:
        raise MaskGap("coefficient mask interrupts the oracle", result.valid_intervals, result)
    return result


def distribution_series(n0: int, u: ComplexSeries, v: FluctuationSeries, stride: int = 1, nmax=None):
    """Exact distributions at every ``stride``-th sample on a common ``nmax``."""
    if len(u) != len(v):
        raise GridMismatch("u and v sampled on different grids")
    idx = np.arange(0, len(u), stride)
    if nmax is None:
        nmax = auto_nmax(n0, float(np.max(v.values[idx])))
    return idx, [fock_distribution(n0, u.values[i], v.values[i], nmax) for i in idx]


def steady_distribution(p: ModelParams, n0: int, nmax: int | None = None, v_inf: float | None = None):
    """Long-time distribution: ``|u|**2 -> Z**2`` and ``v -> v_steady``."""
    from .fluctuation import v_steady
    from .spectral import solve_localized_mode

    m = solve_localized_mode(p)
    v_inf = v_steady(p, m) if v_inf is None else v_inf
    nmax = auto_nmax(n0, v_inf) if nmax is None else nmax
    return fock_distribution(n0, m.residue_Z, v_inf, nmax)
