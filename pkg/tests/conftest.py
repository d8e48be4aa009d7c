from dataclasses import replace

import pytest

from relayee import channel as ch
from relayee import config


@pytest.fixture(scope="session")
def cfg():
    return config.load_config()


@pytest.fixture(scope="session")
def model(cfg):
    return cfg.model


@pytest.fixture(scope="session")
def amc(cfg):
    return cfg.model.ar.amc


def rayleigh(avg_snr_db, amc, doppler_hz=10.0, label="A,R", q=4.0, u=1.0, gain_db=0.0):
    fad = ch.FadingModel(1.0, ch.db_to_linear(avg_snr_db), doppler_hz=doppler_hz)
    return ch.LinkModel(fad, amc, ch.SpectrumAccess(q, u), label, gain_db)


def symmetric(model, gain_db=0.0, q=4.0, u=1.0):
    """Same gain and spectrum access on all three links."""
    links = {
        name: replace(getattr(model, name), gain_db=gain_db, access=ch.SpectrumAccess(q, u)) for name in ("ar", "rd", "ad")
    }
    return replace(model, **links).at_snr_db(model.snr_db)


# -- acceptance summary -----------------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
