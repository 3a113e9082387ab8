"""One-point eigenvector statistics of the evolution operator.

All N^2 squared eigenvector components of a single operator, taken in the
position basis and normalized to unit mean, form the sample ``y``.  Its
variance sigma^2 interpolates between 2 (real eigenvectors, chi^2 with one
degree of freedom) and 1 (fully complex eigenvectors, chi^2 with two), and
its log10 histogram is what the distribution plots show.  A single matrix
already pools millions of components at the dimensions used here, so
single-realization sampling is the default; a small local-kick-strength
ensemble can be averaged over where extra precision is wanted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams, UnitaryMatrix, build_evolution_operator
from .perturbation import transition_parameter
from .spectral import eigendecompose_unitary, ensemble_alphas


@dataclass
class EigenvectorSample:
    """Pooled unit-mean squared components of one operator's eigenvectors."""

    y_values: np.ndarray
    sigma2: float
    source: ModelParams | None = None


@dataclass
class LogHistogram:
    """Normalized density of log10(y)."""

    bin_centers: np.ndarray
    density: np.ndarray
    bin_width: float
    dropped_zeros: int


@dataclass
class TransitionCurve:
    """A statistic traced against the local transition parameter."""

    statistic: str
    alpha2_over_n: float
    fields: np.ndarray
    lam_t: np.ndarray
    values: np.ndarray
    invariant_limit: float = 2.0
    broken_limit: float = 1.0


def squared_components_from_vectors(vectors: np.ndarray) -> np.ndarray:
    """Unit-mean squared magnitudes of a stack of eigenvector components."""
    y = np.abs(vectors) ** 2
    y = y.ravel()
    return y / y.mean()


def squared_components(
    u: UnitaryMatrix,
    params: ModelParams | None = None,
    validate: bool = False,
) -> EigenvectorSample:
    """Squared components of all eigenvectors of ``u``, unit-mean normalized."""
    _, eigenvectors = eigendecompose_unitary(u, params=params, validate=validate)
    y = squared_components_from_vectors(eigenvectors.vectors)
    return EigenvectorSample(y_values=y, sigma2=float(np.var(y)), source=params)


def sigma2_for_params(
    params: ModelParams,
    ensemble_size: int = 1,
    halfwidth: float = 5.0,
) -> float:
    """sigma^2 at the given parameters.

    ``ensemble_size=1`` (the default) uses a single realization at the
    central kick strength; larger sizes average sigma^2 over the local
    kick-strength grid.
    """
    if ensemble_size == 1:
        alphas = [params.alpha]
    else:
        alphas = ensemble_alphas(params.alpha, ensemble_size, halfwidth)
    values = []
    for alpha in alphas:
        member = ModelParams(
            n=params.n, alpha=float(alpha), lam=params.lam, theta0=params.theta0
        )
        u = build_evolution_operator(member)
        values.append(squared_components(u, params=member).sigma2)
    return float(np.mean(values))


def log_histogram(
    sample: EigenvectorSample | np.ndarray,
    bins: int = 70,
    lo: float = -6.0,
    hi: float = 1.0,
) -> LogHistogram:
    """Histogram of log10(y), normalized to unit integral over [lo, hi].

    Exact zeros (possible only for degenerate or structured operators) are
    dropped and counted; everything else must be positive.
    """
    if bins < 10:
        raise ValueError(f"at least 10 bins required, got {bins}")
    y = sample.y_values if isinstance(sample, EigenvectorSample) else np.asarray(sample)
    if y.size == 0:
        raise ValueError("empty sample")
    zeros = int(np.count_nonzero(y == 0.0))
    y = y[y > 0.0]
    if y.size == 0:
        raise ValueError("sample holds no positive values")
    counts, edges = np.histogram(np.log10(y), bins=bins, range=(lo, hi))
    width = (hi - lo) / bins
    in_range = counts.sum()
    if in_range == 0:
        raise ValueError(f"no samples fall inside the histogram range [{lo}, {hi}]")
    density = counts / (in_range * width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return LogHistogram(
        bin_centers=centers, density=density, bin_width=width, dropped_zeros=zeros
    )


def sigma2_transition_curve(
    n: int,
    alpha2_over_n: float,
    fields,
    v2: float,
    theta0: float | None = None,
    ensemble_size: int = 1,
) -> TransitionCurve:
    """sigma^2 against the local transition parameter for one alpha^2/N.

    ``v2`` is the measured in-band perturbation variance for this
    alpha^2/N (it fixes the field -> transition-parameter map); the curve is
    annotated with the invariant and fully broken limits 2 and 1.
    """
    if v2 is None or v2 <= 0:
        raise ValueError(
            f"in-band variance for alpha^2/N = {alpha2_over_n} is missing"
        )
    fields = np.atleast_1d(np.asarray(fields, dtype=float))
    alpha = math.sqrt(n * alpha2_over_n)
    values = np.empty(fields.size)
    lam_t = np.empty(fields.size)
    for i, lam in enumerate(fields):
        params = ModelParams(n=n, alpha=alpha, lam=float(lam), theta0=theta0)
        values[i] = sigma2_for_params(params, ensemble_size=ensemble_size)
        lam_t[i] = transition_parameter(float(lam), v2, n).lam_t
    return TransitionCurve(
        statistic="sigma2",
        alpha2_over_n=alpha2_over_n,
        fields=fields,
        lam_t=lam_t,
        values=values,
    )
