import numpy as np
import pytest
from scipy.signal import lfilter

from bmdl.model import SeriesData
from bmdl.simulate import load_scenario

SEASONAL = np.array([0, 3, 10, 18, 26, 33, 36, 36, 31, 20, 8, 2], dtype=float)
SCENARIO_DIR = __import__("pathlib").Path(__file__).resolve().parents[1] / "scenarios"


def ar_noise(n, phi, sd, rng, burn=500):
    """AR errors via a recursive filter (independent of the package generator)."""
    z = rng.normal(0.0, sd, n + burn)
    return lfilter([1.0], np.r_[1.0, -np.asarray(phi, dtype=float)], z)[burn:]


def shifted_series(n, p, cps, levels, rng, phi=(0.2, 0.1, 0.05), sd=3.0, period=12,
                   seasonal=None):
    """Seasonal means plus regime levels plus AR noise, as ``SeriesData``."""
    t = np.arange(1, n + 1)
    s = SEASONAL if seasonal is None else np.asarray(seasonal, dtype=float)
    reg = np.searchsorted(np.asarray(cps) - 1, t - 1, side="right")
    x = s[(t - 1) % period] + np.asarray(levels, dtype=float)[reg] + ar_noise(n, phi, sd, rng)
    return SeriesData(x, period, p)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def table1():
    return load_scenario(SCENARIO_DIR / "table1_k2.toml")
