import numpy as np
import pytest

from ordfrag.data import Dataset, random_im, simulate_dataset
from ordfrag.models import ParamSet, parse_model

# Reference cumulative probit estimates used throughout as a generator.
TABLE_TAU = np.array([-1.617, -1.000, -0.082, 0.623])
TABLE_BETA = 1.549

# Frozen oracle values (50-digit mpmath evaluation of the normal CDF) at
# PGA = 0.2 under the reference estimates.
ETA_02 = np.array([0.87601932636042148, 1.4930193263604215, 2.4110193263604215, 3.1160193263604215])
CUM_02 = np.array([0.8094902362984676, 0.93228393597573046, 0.99204599727228725, 0.99908344870882492])
P_CUM_02 = np.array([0.8094902362984676, 0.12279369967726286, 0.059762061296556792,
                     0.0070374514365376707, 0.0009165512911750811])
P_SEQ_02 = np.array([0.8094902362984676, 0.17760919234547097, 0.012797960176306265,
                     0.00010251713134587201, 9.4048409293595382e-8])
CHAIN_02 = (0.1905097637015324, 0.01290057135606143)
THETA = np.array([0.35207914325480668, 0.52435948378281907, 0.94843940289005512, 1.4951027962215775])
BETA_TILDE = 0.64557779212395094


@pytest.fixture
def cum_spec():
    return parse_model("cum")


@pytest.fixture
def table_params():
    return ParamSet(TABLE_TAU.copy(), TABLE_BETA, 0.0)


def make_dataset(n, seed, spec=None, params=None, im_min=0.05, im_max=2.0):
    spec = spec or parse_model("cum")
    params = params or ParamSet(TABLE_TAU.copy(), TABLE_BETA, 0.0)
    return simulate_dataset(spec, params, random_im(seed, n, im_min, im_max), seed)


@pytest.fixture(scope="session")
def ds442():
    return make_dataset(442, 7)


@pytest.fixture(scope="session")
def tiny_ds():
    return Dataset([0.1, 0.2, 0.3, 0.5, 0.8, 1.0, 1.3, 1.7, 0.15, 0.6, 0.9, 1.9],
                   [1, 1, 2, 2, 3, 3, 4, 5, 1, 3, 4, 5], 5)
