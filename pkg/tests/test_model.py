import pytest

from pbgcavity import (
    InvalidParameters,
    ModelParams,
    Regime,
    classify_regime,
    params_from_config,
    read_config,
    validate,
)
from pbgcavity.errors import NegativeTemperature, NonPositiveCavityFrequency, NonPositiveCoupling
from pbgcavity.model import REGIME_HALF_WIDTH


@pytest.mark.parametrize("delta, regime", [(-10, Regime.PBG), (0, Regime.PBE), (10, Regime.PB)])
def test_regime_examples(delta, regime):
    assert classify_regime(ModelParams(delta=delta)) is regime


def test_regime_boundaries_belong_to_band_edge():
    assert classify_regime(ModelParams(delta=REGIME_HALF_WIDTH)) is Regime.PBE
    assert classify_regime(ModelParams(delta=-REGIME_HALF_WIDTH)) is Regime.PBE
    assert classify_regime(ModelParams(delta=-REGIME_HALF_WIDTH - 1e-9)) is Regime.PBG


def test_validate_fills_cavity_frequency():
    p = validate(ModelParams(delta=0, kT=20))
    assert p.omega_c == 100.0
    assert validate(ModelParams(delta=-3.5)).omega_c == 96.5


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        (dict(coupling_C=0.0), NonPositiveCoupling),
        (dict(delta=-101, kT=20), NonPositiveCavityFrequency),
        (dict(delta=-100), NonPositiveCavityFrequency),
        (dict(kT=-1.0), NegativeTemperature),
        (dict(omega_e=0.0), InvalidParameters),
    ],
)
def test_validate_rejects(kwargs, exc):
    with pytest.raises(exc):
        validate(ModelParams(**kwargs))


def test_invalid_parameters_are_value_errors():
    with pytest.raises(ValueError):
        validate(ModelParams(coupling_C=-1))


def test_with_revalidates():
    p = ModelParams()
    assert p.with_(delta=5).omega_c == 105
    with pytest.raises(NonPositiveCavityFrequency):
        p.with_(delta=-200)


def test_config_roundtrip(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# cavity\ndelta = -2.5\nkT=100  # warm\n\nomega_e = 50\ncoupling = 2\nextra = ignored\n",
                   encoding="utf-8")
    entries = read_config(cfg)
    assert entries["extra"] == "ignored"
    p = params_from_config(entries)
    assert (p.delta, p.kT, p.omega_e, p.coupling_C, p.omega_c) == (-2.5, 100.0, 50.0, 2.0, 47.5)


def test_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("delta 3\n", encoding="utf-8")
    with pytest.raises(InvalidParameters, match="key=value"):
        read_config(bad)
    bad.write_text("delta = three\n", encoding="utf-8")
    with pytest.raises(InvalidParameters, match="not a number"):
        params_from_config(read_config(bad))
