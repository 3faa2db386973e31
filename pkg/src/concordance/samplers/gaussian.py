"""Joint Gaussian draw of all mean parameters given the variances."""
from __future__ import annotations

import numpy as np
from scipy import linalg

from ..domain import CalibrationPrior, LogScaleData
from ..errors import ConfigurationError
from ..estimators import mean_system


def conditional_mean_draw(data: LogScaleData, v, prior: CalibrationPrior,
                          rng: np.random.Generator, size=None):
    """Sample (B, G) exactly from their joint Normal conditional at fixed v.

    The conditional is N(P^-1 rhs, P^-1) with (P, rhs) the penalized WLS system;
    the draw is mu + solve(L.T, z) from the lower Cholesky factor L of P.  With
    ``size`` given, returns arrays of shape (size, N) and (size, M).
    """
    N = data.n_instruments
    P, rhs, _ = mean_system(data, v, prior)
    try:
        L = linalg.cholesky(P, lower=True)
    except linalg.LinAlgError as exc:
        raise ConfigurationError(f"mean conditional is singular: {exc}")
    mu = linalg.cho_solve((L, True), rhs)
    if size is None:
        z = rng.standard_normal(P.shape[0])
        x = mu + linalg.solve_triangular(L, z, lower=True, trans="T")
        return x[:N], x[N:]
    z = rng.standard_normal((P.shape[0], int(size)))
    x = mu[:, None] + linalg.solve_triangular(L, z, lower=True, trans="T")
    return x[:N].T, x[N:].T
