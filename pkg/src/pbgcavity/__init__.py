"""Exact dynamics of a cavity coupled to a photonic-band-gap reservoir.

The cavity mode couples to a reservoir whose density of states has a
square-root band-edge singularity.  The package computes the propagating
Green function ``u(t)``, the thermal fluctuation ``v(t, t)``, the
coefficients of the exact master equation and the photon-number
distribution of an initial Fock state, and compares the long-time state
with the Bose-Einstein distribution.
"""

__version__ = "0.1.0"

from .dynamics import (
    FockDistribution,
    MasterEqCoefficients,
    OracleResult,
    auto_nmax,
    bose_einstein_reference,
    coefficients,
    distribution_distance,
    distribution_series,
    fock_distribution,
    fock_distribution_auto,
    fock_distribution_linearized,
    master_equation_oracle,
    steady_distribution,
    thermal_like,
)
from .errors import (
    GridMismatch,
    InvalidParameters,
    MaskGap,
    NegativeTemperature,
    NonPositiveCavityFrequency,
    NonPositiveCoupling,
    NonPositiveDelay,
    NonPositiveFrequency,
    NumericalError,
    PBGCavityError,
    StepTooLarge,
    ToleranceNotMet,
    TruncationTooSmall,
    ZeroFluctuation,
)
from .fluctuation import FluctuationSeries, mean_photon_number, thermal_grid_for, v_evolution, v_steady
from .model import ModelParams, Regime, classify_regime, params_from_config, read_config, validate
from .propagator import (
    ComplexSeries,
    default_dt,
    field_spectrum,
    max_dt,
    solve_u_volterra,
    steady_amplitude,
    u_spectral,
)
from .spectral import (
    Family,
    LocalizedMode,
    SpectralGrid,
    bose_occupation,
    build_spectral_grid,
    dissipation_spectrum,
    memory_kernel,
    noise_kernel,
    solve_localized_mode,
    spectral_density,
    steady_fluctuation_spectrum,
)
