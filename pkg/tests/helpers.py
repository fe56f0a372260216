"""Shared benchmark setups and frozen oracle values for the test suite."""
import numpy as np

from fraclevy.coefficients import make_coefficients
from fraclevy.levy_noise import FiniteActivity, LargeJumps, LevyMeasureSpec, QWienerSpec, RadialMarks
from fraclevy.spectral_model import SectorialSpectralModel, fit_bound_constant

# Frozen before the evaluator was written: extended-precision (80 digit) series
# sums, two-parameter Mittag-Leffler values and closed forms, all from mpmath.
ORACLE = {
    "E1.5(-1)": 0.39662936531808808,
    "E1.5(-2)": 0.029430685602826472,
    "E2(-1)": 0.54030230586813972,
    "C1(1.5,-1)": 2.4183991523122905,
    "C2(1.5,-1)": 1.2091995761561452,
    # int_0^1 E_1.5(-s^1.5) ds = E_{1.5,2}(-1)
    "conv(1.5,-1,1)": 0.73748224790189471,
}
# E_alpha(z) for arguments beyond the series cutoff
ORACLE_LARGE = {
    (1.2, -6.0): -0.063362758813981831,
    (1.2, -10.0): -0.026398347125869203,
    (1.2, -30.0): -0.0061897755800389532,
    (1.2, -100.0): -0.0017566367124186752,
    (1.5, -6.0): -0.28606868168430839,
    (1.5, -10.0): -0.10971305425274015,
    (1.5, -30.0): -0.014470224834105875,
    (1.5, -100.0): -0.0027898467733372399,
    (1.8, -6.0): -0.63373435184013988,
    (1.8, -10.0): -0.56057491254512573,
    (1.8, -30.0): 0.33781129925194388,
    (1.8, -100.0): 0.11494392481354926,
}

ALPHA = 1.5


def scalar_model(C=None):
    """d = 1, eigenvalue -1; C defaults to the fitted bound constant."""
    base = SectorialSpectralModel((-1.0,), -1.0, 0.3)
    if C is None:
        C = fit_bound_constant(base, ALPHA, np.logspace(-2, 3, 60))
    return SectorialSpectralModel((-1.0,), -1.0, 0.3, bound_C=C)


def noise_specs(b=0.5, small_rate=1.0):
    q = QWienerSpec((1.0,))
    levy = LevyMeasureSpec(FiniteActivity(small_rate, RadialMarks.uniform(0.0, 1.0)),
                           LargeJumps(b, RadialMarks.uniform(1.0, 2.0)))
    return q, levy


def linear_benchmark(L=0.01, b=0.5, C=None):
    q, levy = noise_specs(b)
    return scalar_model(C), q, levy, make_coefficients("linear", 1, 1, L, 1, qspec=q, levy=levy)


def periodic_benchmark(L=0.0025, b=0.5, C=None):
    q, levy = noise_specs(b)
    return scalar_model(C), q, levy, make_coefficients("periodic", 1, 1, L, 1, qspec=q, levy=levy)
