"""Physical parameters, reduced units and regime classification.

Reduced units: the coupling ``C`` fixes the scale, frequencies and energies
are measured in ``C**(2/3)`` and times in ``C**(-2/3)`` (hbar = kB = 1).
All routines accept a general ``coupling_C`` so that the scaling relations
can be checked, but every default uses ``C = 1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import (
    InvalidParameters,
    NegativeTemperature,
    NonPositiveCavityFrequency,
    NonPositiveCoupling,
)

# Half-width of the band-edge regime in units of C**(2/3); approximate.
REGIME_HALF_WIDTH = 2.5

DEFAULT_OMEGA_E = 100.0


class Regime(enum.Enum):
    PBG = "PBG"  # cavity deep inside the band gap
    PBE = "PBE"  # cavity near the band edge
    PB = "PB"  # cavity inside the propagating band

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class ModelParams:
    """Single-mode cavity coupled to an isotropic photonic crystal.

    Parameters
    ----------
    delta : float
        Detuning ``omega_c - omega_e``.
    kT : float
        Reservoir temperature; ``0`` is the zero-temperature reservoir.
    omega_e : float
        Band-edge frequency.
    coupling_C : float
        Coupling strength ``C`` of the spectral density.
    """

    delta: float = 0.0
    kT: float = 0.0
    omega_e: float = DEFAULT_OMEGA_E
    coupling_C: float = 1.0
    omega_c: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "omega_c", self.omega_e + self.delta)

    @property
    def energy_unit(self) -> float:
        """``C**(2/3)``, the natural frequency unit."""
        return self.coupling_C ** (2.0 / 3.0)

    def with_(self, **changes) -> "ModelParams":
        return validate(replace(self, **changes))


def validate(p: ModelParams) -> ModelParams:
    """Check physical admissibility and return the normalized parameters."""
    for name in ("delta", "kT", "omega_e", "coupling_C"):
        value = getattr(p, name)
        if value != value or value in (float("inf"), float("-inf")):
            raise InvalidParameters(f"{name} must be finite, got {value}")
    if not p.coupling_C > 0:
        raise NonPositiveCoupling(f"coupling_C must be > 0, got {p.coupling_C}")
    if not p.omega_e > 0:
        raise InvalidParameters(f"omega_e must be > 0, got {p.omega_e}")
    if not p.omega_e + p.delta > 0:
        raise NonPositiveCavityFrequency(
            f"omega_c = omega_e + delta = {p.omega_e + p.delta} must be > 0"
        )
    if p.kT < 0:
        raise NegativeTemperature(f"kT must be >= 0, got {p.kT}")
    return ModelParams(
        delta=float(p.delta),
        kT=float(p.kT),
        omega_e=float(p.omega_e),
        coupling_C=float(p.coupling_C),
    )


def classify_regime(p: ModelParams) -> Regime:
    """Classify the cavity detuning; boundary values belong to the band edge."""
    reduced = p.delta / p.energy_unit
    if reduced < -REGIME_HALF_WIDTH:
        return Regime.PBG
    if reduced > REGIME_HALF_WIDTH:
        return Regime.PB
    return Regime.PBE


_CONFIG_KEYS = {
    "delta": "delta",
    "kt": "kT",
    "omega_e": "omega_e",
    "omega-e": "omega_e",
    "coupling": "coupling_C",
    "coupling_c": "coupling_C",
}


def read_config(path) -> dict[str, str]:
    """Parse a ``key=value`` configuration file.

    Blank lines and ``#`` comments are ignored. Keys are lower-cased and
    returned with their raw string values; interpretation is left to the
    caller.
    """
    entries = {}
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameters(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise InvalidParameters(f"{path}:{lineno}: empty key")
        entries[key.lower()] = value
    return entries


def params_from_config(entries: dict[str, str], base: ModelParams | None = None) -> ModelParams:
    """Overlay the physical keys of a parsed config onto ``base``."""
    base = base or ModelParams()
    changes = {}
    for key, value in entries.items():
        if key in _CONFIG_KEYS:
            try:
                changes[_CONFIG_KEYS[key]] = float(value)
            except ValueError as exc:
                raise InvalidParameters(f"{key}: not a number: {value!r}") from exc
    return validate(replace(base, **changes))
