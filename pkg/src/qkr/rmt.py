"""Random-matrix reference statistics for the crossover analysis.

Three families of baselines live here:

* Analytic number-variance references.  The fully broken (CUE) two-level
  cluster function is the standard ``(sin(pi s)/(pi s))^2``; the partially
  broken transition ensemble modifies it by a product of two one-dimensional
  integrals parameterized by the local transition strength ``Lam`` (``Lam=0``
  is the invariant/COE limit, ``Lam=inf`` the CUE limit), and the number
  variance follows from the cluster function by a weighted integral.  The
  oscillatory integrals are evaluated with QUADPACK's oscillatory rules; the
  invariant limit reduces the slowly decaying tail integral to a sine
  integral in closed form.  The two exponential factors are rescaled by
  ``exp(-+2 pi^2 Lam)`` so each integral stays O(1) at any ``Lam``.

* Unit-mean chi-squared densities with one or two degrees of freedom, the
  invariant / fully broken limits of squared eigenvector components.

* Monte-Carlo samplers: Haar-distributed CUE matrices (QR of a complex
  Ginibre matrix with the phase fix), COE matrices as U^T U, and an
  interpolating Gaussian ensemble ``S + i t A`` (S real symmetric, A real
  antisymmetric) whose imaginary admixture ``t`` is calibrated against the
  empirically measured central mean level spacing so that ``(t v0 / D_c)^2``
  equals the requested ``Lam``.  Eigenvector statistics are read off the
  central quarter of the spectrum where the mean spacing is roughly constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.special import sici

from . import spectral

TWO_PI = 2.0 * math.pi

#: Variance of unit-mean squared eigenvector components in the two limits.
COE_SIGMA2 = 2.0
CUE_SIGMA2 = 1.0


class QuadratureError(RuntimeError):
    """Quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(f"{message} (achieved tolerance {achieved:.3e})")
        self.achieved = achieved


def _checked_quad(func, a, b, epsabs, **kwargs):
    value, abserr, *rest = quad(
        func, a, b, epsabs=epsabs, epsrel=0.0, full_output=1, **kwargs
    )
    if abserr > max(10.0 * epsabs, 1.0e-13) or len(rest) > 1:
        raise QuadratureError("quadrature did not converge", achieved=abserr)
    return value


def y2_cue(s: float) -> float:
    """Fully broken (CUE) two-level cluster function (sin(pi s)/(pi s))^2."""
    return float(np.sinc(s) ** 2)


def _x_integral_scaled(s: float, lam_t: float, epsabs: float) -> float:
    """exp(-2 pi^2 Lam) * integral_0^1 exp(2 pi^2 Lam x^2) x sin(pi x s) dx."""
    if lam_t == 0.0:
        ps = math.pi * s
        return (math.sin(ps) - ps * math.cos(ps)) / (ps * ps)
    c = 2.0 * math.pi**2 * lam_t
    return _checked_quad(
        lambda x: x * math.exp(c * (x * x - 1.0)),
        0.0,
        1.0,
        epsabs,
        weight="sin",
        wvar=math.pi * s,
        limit=400,
    )


def _y_integral_scaled(s: float, lam_t: float, epsabs: float) -> float:
    """exp(+2 pi^2 Lam) * integral_1^inf exp(-2 pi^2 Lam y^2) sin(pi y s)/y dy.

    The invariant limit decays only as 1/y; its Fourier tail is the closed
    form pi/2 - Si(pi s).
    """
    if lam_t == 0.0:
        si, _ = sici(math.pi * s)
        return math.pi / 2.0 - si
    c = 2.0 * math.pi**2 * lam_t
    return _checked_quad(
        lambda y: math.exp(-c * (y * y - 1.0)) / y,
        1.0,
        np.inf,
        epsabs,
        weight="sin",
        wvar=math.pi * s,
        limit=400,
        limlst=200,
    )


def y2_transition(s: float, lam_t: float, tol: float = 1.0e-8) -> float:
    """Two-level cluster function of the partially broken ensemble.

    ``lam_t`` is the local transition parameter: 0 gives the invariant (COE)
    cluster function, ``math.inf`` the fully broken (CUE) one.  Absolute
    tolerance ``tol``.
    """
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    if lam_t < 0:
        raise ValueError(f"transition parameter must be >= 0, got {lam_t}")
    if s == 0.0:
        return 1.0
    if math.isinf(lam_t):
        return y2_cue(s)
    epsabs = tol / 4.0
    x_part = _x_integral_scaled(s, lam_t, epsabs)
    y_part = _y_integral_scaled(s, lam_t, epsabs)
    return y2_cue(s) - x_part * y_part


def sigma2_cue(r: float, tol: float = 1.0e-8) -> float:
    """CUE number variance r - 2 * integral_0^r (r - s) Y2_cue(s) ds."""
    if r <= 0:
        raise ValueError(f"interval size must be positive, got {r}")
    integral = _checked_quad(
        lambda s: (r - s) * y2_cue(s), 0.0, r, tol / 2.0, limit=max(200, int(40 * r))
    )
    return r - 2.0 * integral


def sigma2_transition(r: float, lam_t: float, tol: float = 1.0e-6) -> float:
    """Number variance of the partially broken ensemble at interval size r.

    Integrates the cluster-function deficit against the (r - s) window
    weight on top of the fully broken baseline; ``lam_t`` as in
    :func:`y2_transition`.  Absolute tolerance ``tol``.
    """
    if r <= 0 or r > 50:
        raise ValueError(f"interval size must lie in (0, 50], got {r}")
    if lam_t < 0:
        raise ValueError(f"transition parameter must be >= 0, got {lam_t}")
    baseline = sigma2_cue(r, tol=min(tol / 10.0, 1.0e-8))
    if math.isinf(lam_t):
        return baseline
    inner = min(tol / (2.0 * r * r), 1.0e-8)

    def deficit(s: float) -> float:
        if s == 0.0:
            return r
        return (r - s) * _x_integral_scaled(s, lam_t, inner) * _y_integral_scaled(
            s, lam_t, inner
        )

    correction = _checked_quad(deficit, 0.0, r, tol / 2.0, limit=max(200, int(40 * r)))
    return baseline + 2.0 * correction


def chi2_pdf(y, nu: int):
    """Unit-mean chi-squared density with nu in {1, 2} degrees of freedom.

    ``P(y) = (nu/2)^(nu/2) y^(nu/2-1) exp(-nu y / 2) / Gamma(nu/2)``.
    The nu=1 density diverges at the origin, so y=0 is rejected there.
    """
    if nu not in (1, 2):
        raise ValueError(f"degrees of freedom must be 1 or 2, got {nu}")
    y_arr = np.asarray(y, dtype=float)
    if np.any(y_arr < 0):
        raise ValueError("squared components must be >= 0")
    if nu == 1:
        if np.any(y_arr == 0):
            raise ValueError("the nu=1 density diverges at y=0")
        out = np.exp(-y_arr / 2.0) / np.sqrt(TWO_PI * y_arr)
    else:
        out = np.exp(-y_arr)
    return float(out) if np.isscalar(y) else out


def chi2_log10_density(t, nu: int):
    """Density of log10(y) when y is unit-mean chi-squared: ln(10) y P(y)."""
    t_arr = np.asarray(t, dtype=float)
    y = np.power(10.0, t_arr)
    out = math.log(10.0) * y * chi2_pdf(y, nu)
    return float(out) if np.isscalar(t) else out


@dataclass(frozen=True)
class ClusterFunction:
    """Evaluator wrapper for the transition cluster function at fixed Lam."""

    lam_t: float
    tol: float = 1.0e-8

    def __call__(self, s: float) -> float:
        return y2_transition(s, self.lam_t, tol=self.tol)


@dataclass(frozen=True)
class ReferenceCurve:
    """Number-variance reference: poisson, coe, cue, or transition(Lam)."""

    kind: str
    lam_t: float | None = None
    tol: float = 1.0e-6

    def __post_init__(self):
        if self.kind not in ("poisson", "coe", "cue", "transition"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "transition" and self.lam_t is None:
            raise ValueError("transition curve needs a transition parameter")

    def __call__(self, r: float) -> float:
        if self.kind == "poisson":
            return float(r)
        if self.kind == "coe":
            return sigma2_transition(r, 0.0, tol=self.tol)
        if self.kind == "cue":
            return sigma2_cue(r, tol=self.tol)
        return sigma2_transition(r, self.lam_t, tol=self.tol)


@dataclass(frozen=True)
class Chi2Density:
    """Unit-mean chi-squared density wrapper (mean 1, variance 2/nu)."""

    nu: int

    def __post_init__(self):
        if self.nu not in (1, 2):
            raise ValueError(f"degrees of freedom must be 1 or 2, got {self.nu}")

    @property
    def mean(self) -> float:
        return 1.0

    @property
    def variance(self) -> float:
        return 2.0 / self.nu

    def pdf(self, y):
        return chi2_pdf(y, self.nu)


def sample_cue(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed unitary: QR of a complex Ginibre matrix, phase-fixed."""
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim)))
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))[None, :]


def sample_coe(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed symmetric unitary U^T U."""
    u = sample_cue(dim, rng)
    return u.T @ u


def coe_unfolded_spectra(dim: int, count: int, seed: int) -> list:
    """Unfolded eigenphase spectra of ``count`` independent COE matrices."""
    rng = np.random.default_rng(seed)
    spectra = []
    for _ in range(count):
        theta = spectral.eigenphases(sample_coe(dim, rng))
        spectra.append(spectral.unfold(theta, dim))
    return spectra


def coe_number_variance_mc(
    dim: int, count: int, seed: int, r_values
) -> spectral.NumberVarianceCurve:
    """Monte-Carlo COE number variance through the shared counting protocol."""
    return spectral.pooled_count_variance(
        coe_unfolded_spectra(dim, count, seed), dim, r_values
    )


def coe_y2_mc(
    dim: int,
    count: int,
    seed: int,
    s_max: float = 4.25,
    bin_width: float = 0.25,
):
    """Monte-Carlo estimate of the COE two-level cluster function.

    Histograms circular pairwise differences of unfolded eigenphases; each
    nearby unordered pair lands in exactly one bin of the ordered-difference
    histogram.  Returns (bin centers, Y2 estimates).
    """
    edges = np.arange(0.0, s_max + bin_width / 2, bin_width)
    counts = np.zeros(edges.size - 1)
    for unfolded in coe_unfolded_spectra(dim, count, seed):
        diffs = np.mod(unfolded[None, :] - unfolded[:, None], dim)
        off_diag = diffs[~np.eye(dim, dtype=bool)]
        counts += np.histogram(off_diag, bins=edges)[0]
    pair_density = counts / (count * dim * bin_width)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, 1.0 - pair_density


@dataclass
class HermitianMatrixSample:
    """Central-spectrum slice of one interpolating-ensemble matrix."""

    dim: int
    lam_t: float
    t: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _central_slice(dim: int) -> slice:
    count = max(1, round(dim / 4))
    start = (dim - count) // 2
    return slice(start, start + count)


def sample_interpolating_gaussian(
    dim: int,
    lam_t: float,
    rng: np.random.Generator | int,
    v0: float = 1.0,
) -> HermitianMatrixSample:
    """One matrix H = S + i t A from the invariant -> broken crossover family.

    S is real symmetric Gaussian (off-diagonal variance v0^2, diagonal
    2 v0^2), A real antisymmetric Gaussian (variance v0^2).  The admixture t
    is fixed from the empirically measured central mean spacing D_c of S so
    that ``(t v0 / D_c)^2 = lam_t``.  Eigenvalues and eigenvectors are
    restricted to the central 25% of the spectrum.
    """
    if lam_t < 0:
        raise ValueError(f"transition parameter must be >= 0, got {lam_t}")
    rng = np.random.default_rng(rng) if isinstance(rng, (int, np.integer)) else rng
    a = rng.standard_normal((dim, dim))
    sym = v0 * (a + a.T) / math.sqrt(2.0)
    window = _central_slice(dim)
    if lam_t == 0.0:
        t = 0.0
        eigvals, eigvecs = np.linalg.eigh(sym)
    else:
        b = rng.standard_normal((dim, dim))
        antisym = v0 * (b - b.T) / math.sqrt(2.0)
        levels = np.linalg.eigvalsh(sym)
        central = levels[window]
        d_c = (central[-1] - central[0]) / (central.size - 1)
        t = math.sqrt(lam_t) * d_c / v0
        eigvals, eigvecs = np.linalg.eigh(sym + 1j * t * antisym)
    return HermitianMatrixSample(
        dim=dim,
        lam_t=lam_t,
        t=t,
        eigenvalues=eigvals[window],
        eigenvectors=eigvecs[:, window],
    )


def interpolating_squared_components(
    dim: int, lam_t: float, count: int, seed: int
) -> np.ndarray:
    """Unit-mean squared eigenvector components pooled over ``count`` matrices."""
    rng = np.random.default_rng(seed)
    pools = []
    for _ in range(count):
        sample = sample_interpolating_gaussian(dim, lam_t, rng)
        pools.append(np.abs(sample.eigenvectors) ** 2)
    y = np.concatenate([p.ravel() for p in pools])
    return y / y.mean()


def interpolating_sigma2(dim: int, lam_t: float, count: int, seed: int) -> float:
    """Variance of the pooled unit-mean squared components at fixed Lam."""
    y = interpolating_squared_components(dim, lam_t, count, seed)
    return float(np.var(y))
