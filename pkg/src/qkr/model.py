"""Kicked-rotor evolution operators on an odd N-point torus.

The one-period evolution operator is the symmetrized product
``B^(1/2) G B^(1/2)`` of a kick factor ``B`` (diagonal in position) and a
free-rotation factor ``G`` (diagonal in momentum).  With periodic boundary
conditions on the momentum labels, both bases hold exactly N states and the
operator becomes a dense N x N unitary, which this module evaluates two
independent ways:

* directly from the closed-form matrix elements (phase prefactor times an
  explicit momentum sum), and
* by conjugating the free-rotation diagonal with the discrete Fourier
  transform between the two bases.

The two constructions must agree entrywise to 1e-10; the test suite and the
acceptance gate both enforce this.  The momentum operator itself (the
perturbation that breaks time-reversal invariance when the field is switched
on) is built in the position basis by the same basis change.

Conventions: matrices are indexed with row 0 corresponding to the most
negative grid label, i.e. position row m and momentum row l both run
ascending over ``-n1 .. n1`` with ``n1 = (n - 1) / 2``.  The kick period and
hbar are fixed to 1, and the free propagator uses the gauge
``exp(-i (l^2/2 - lam*l))`` (no global ``lam^2/2`` phase).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * math.pi

# Dense-DFT conjugation below this dimension, FFT synthesis above it.
DENSE_DFT_MAX = 512

# Full O(N^3) unitarity check below this dimension; probe columns above it.
FULL_CHECK_MAX = 1024

_PROBE_COLUMNS = 8


class InvalidDimensionError(ValueError):
    """Raised for even or non-positive matrix dimensions."""


class ConstructionError(RuntimeError):
    """Raised when operator entries come out non-finite."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the N-dimensional kicked rotor.

    Parameters
    ----------
    n : int
        Hilbert-space dimension.  Must be a positive odd integer so that the
        momentum labels run symmetrically over ``-n1 .. n1``.
    alpha : float
        Kick strength (the chaos parameter), >= 0.
    lam : float
        Magnetic-field strength.  ``lam != 0`` breaks time-reversal
        invariance of the evolution operator.
    theta0 : float, optional
        Parity-breaking offset of the kick potential.  Defaults to
        ``pi / (2 n)``.
    """

    n: int
    alpha: float = 0.0
    lam: float = 0.0
    theta0: float | None = None

    def __post_init__(self):
        if not isinstance(self.n, (int, np.integer)):
            raise InvalidDimensionError(f"dimension must be an integer, got {self.n!r}")
        if self.n < 1 or self.n % 2 == 0:
            raise InvalidDimensionError(
                f"dimension must be a positive odd integer, got {self.n}"
            )
        if not math.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError(f"alpha must be finite and >= 0, got {self.alpha}")
        if not math.isfinite(self.lam):
            raise ValueError(f"lam must be finite, got {self.lam}")
        if self.theta0 is None:
            object.__setattr__(self, "theta0", math.pi / (2 * self.n))
        elif not math.isfinite(self.theta0):
            raise ValueError(f"theta0 must be finite, got {self.theta0}")

    @property
    def n1(self) -> int:
        return (self.n - 1) // 2

    @property
    def mean_spacing(self) -> float:
        """Mean quasi-energy spacing D = 2 pi / n."""
        return TWO_PI / self.n

    @property
    def alpha2_over_n(self) -> float:
        return self.alpha**2 / self.n

    def momentum_labels(self) -> np.ndarray:
        """Integer momentum labels -n1 .. n1 as floats."""
        return np.arange(-self.n1, self.n1 + 1, dtype=float)

    def position_grid(self) -> np.ndarray:
        """Position grid theta_m = 2 pi m / n, m = -n1 .. n1."""
        return self.momentum_labels() * (TWO_PI / self.n)


@dataclass
class UnitaryMatrix:
    """Dense unitary matrix with its measured unitarity defect.

    ``unitarity_residual`` is the max-norm of ``U^dag U - I``: evaluated
    exactly for ``dim <= FULL_CHECK_MAX`` (or on request), otherwise
    estimated from a fixed set of probe columns (``residual_method`` records
    which).  The probe estimate is a lower bound on the exact max-norm; the
    test suite always re-measures exactly where a tolerance is asserted.
    """

    dim: int
    entries: np.ndarray
    unitarity_residual: float
    residual_method: str = "full"

    @classmethod
    def from_entries(cls, entries: np.ndarray, check: str = "auto") -> "UnitaryMatrix":
        entries = np.ascontiguousarray(entries, dtype=np.complex128)
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise InvalidDimensionError(f"expected a square matrix, got {entries.shape}")
        if not np.all(np.isfinite(entries.view(np.float64))):
            raise ConstructionError("matrix entries are not finite")
        dim = entries.shape[0]
        if check == "auto":
            check = "full" if dim <= FULL_CHECK_MAX else "probe"
        if check == "full":
            residual = unitarity_defect(entries)
        elif check == "probe":
            residual = _probe_unitarity(entries)
        else:
            raise ValueError(f"unknown check mode {check!r}")
        return cls(dim=dim, entries=entries, unitarity_residual=residual,
                   residual_method=check)

    def symmetry_defect(self) -> float:
        """Max-norm of U - U^T (zero for time-reversal invariant operators)."""
        return float(np.max(np.abs(self.entries - self.entries.T)))

    def recheck_unitarity(self) -> float:
        """Exact O(n^3) unitarity residual, also stored on the instance."""
        self.unitarity_residual = unitarity_defect(self.entries)
        self.residual_method = "full"
        return self.unitarity_residual


@dataclass
class MomentumOperator:
    """Position-basis momentum matrix: purely i times a real antisymmetric."""

    dim: int
    entries: np.ndarray


def unitarity_defect(entries: np.ndarray) -> float:
    """Max-norm of U^dag U - I."""
    dim = entries.shape[0]
    gram = entries.conj().T @ entries
    gram[np.diag_indices(dim)] -= 1.0
    return float(np.max(np.abs(gram)))


def _probe_unitarity(entries: np.ndarray) -> float:
    dim = entries.shape[0]
    rng = np.random.default_rng(dim)
    probes = rng.standard_normal((dim, _PROBE_COLUMNS))
    probes /= np.linalg.norm(probes, axis=0)
    defect = entries.conj().T @ (entries @ probes) - probes
    return float(np.max(np.abs(defect)))


def _phase_exp(phase: np.ndarray) -> np.ndarray:
    """exp(-i phase), with the argument reduced mod 2 pi first."""
    return np.exp(-1j * np.mod(phase, TWO_PI))


def kick_half_diagonal(params: ModelParams) -> np.ndarray:
    """Diagonal of B^(1/2): exp[-i (alpha/2) cos(theta_m + theta0)]."""
    return _phase_exp(0.5 * params.alpha * np.cos(params.position_grid() + params.theta0))


def free_diagonal(params: ModelParams) -> np.ndarray:
    """Diagonal of G over momentum labels: exp[-i (l^2/2 - lam*l)]."""
    labels = params.momentum_labels()
    return _phase_exp(0.5 * labels * labels - params.lam * labels)


def build_kick_half(params: ModelParams) -> UnitaryMatrix:
    """Half-kick factor B^(1/2) as a dense diagonal unitary."""
    return UnitaryMatrix.from_entries(np.diag(kick_half_diagonal(params)), check="full")


def build_free(params: ModelParams) -> UnitaryMatrix:
    """Free-rotation factor G, diagonal in the momentum basis."""
    return UnitaryMatrix.from_entries(np.diag(free_diagonal(params)), check="full")


def dft_matrix(n: int) -> np.ndarray:
    """Momentum-from-position transform F[l, m] = exp(-i l theta_m) / sqrt(n).

    Rows are momentum labels, columns position labels, both ascending over
    ``-n1 .. n1``.  F is unitary and satisfies F^dag diag(g_l) F = the
    position-basis form of any momentum-diagonal operator.
    """
    if n < 1 or n % 2 == 0:
        raise InvalidDimensionError(f"dimension must be a positive odd integer, got {n}")
    labels = np.arange(-(n // 2), n // 2 + 1, dtype=float)
    angles = np.mod(np.outer(labels, labels) * (TWO_PI / n), TWO_PI)
    return np.exp(-1j * angles) / math.sqrt(n)


def _circulant_from_profile(profile: np.ndarray) -> np.ndarray:
    """Matrix M[m, n] = profile[(m - n) mod N]."""
    n = profile.shape[0]
    idx = (np.arange(n)[:, None] - np.arange(n)[None, :]) % n
    return profile[idx]


def build_evolution_operator(params: ModelParams, check: str = "auto") -> UnitaryMatrix:
    """One-period evolution operator from its closed-form matrix elements.

    Evaluates, for each residue k = (m - n) mod N, the momentum sum
    ``s_k = (1/N) sum_l exp[-i (l^2/2 - lam*l)] exp[+i 2 pi l k / N]``
    by explicit summation, and multiplies in the double kick-phase
    prefactor.  The sum depends on m, n only through k, so the core of the
    operator is a circulant.
    """
    n = params.n
    labels = params.momentum_labels()
    g = free_diagonal(params)
    residues = np.arange(n, dtype=float)
    angles = np.mod(np.outer(labels, residues) * (TWO_PI / n), TWO_PI)
    profile = (g @ np.exp(1j * angles)) / n
    phi = kick_half_diagonal(params)
    entries = np.outer(phi, phi) * _circulant_from_profile(profile)
    return UnitaryMatrix.from_entries(entries, check=check)


def build_evolution_operator_factored(
    params: ModelParams, dft: str = "auto", check: str = "auto"
) -> UnitaryMatrix:
    """One-period evolution operator composed as B^(1/2) F^dag G F B^(1/2).

    ``dft`` selects how the basis change is applied: ``"dense"`` multiplies
    explicit DFT matrices (exercised in tests, default at small N),
    ``"fft"`` synthesizes the circulant core F^dag G F from a fast
    transform of the free-rotation diagonal.  Both must agree to 1e-12.
    """
    n = params.n
    if dft == "auto":
        dft = "dense" if n <= DENSE_DFT_MAX else "fft"
    phi = kick_half_diagonal(params)
    g = free_diagonal(params)
    if dft == "dense":
        f = dft_matrix(n)
        core = f.conj().T @ (g[:, None] * f)
    elif dft == "fft":
        # Core is a circulant whose profile is the inverse DFT of g with the
        # momentum labels wrapped to residues mod N.
        profile = np.fft.ifft(np.fft.ifftshift(g))
        core = _circulant_from_profile(profile)
    else:
        raise ValueError(f"unknown dft mode {dft!r}")
    entries = phi[:, None] * core * phi[None, :]
    return UnitaryMatrix.from_entries(entries, check=check)


def build_momentum_operator(n: int) -> MomentumOperator:
    """Momentum operator in the position basis.

    ``p[m, n] = (1/N) sum_l l exp[i 2 pi l (m - n) / N]
              = (2i/N) sum_{l>0} l sin(2 pi l (m - n) / N)``,
    purely imaginary with an exactly antisymmetric imaginary part (enforced
    structurally: the profile is computed for non-negative residues and
    mirrored with a sign flip).  Eigenvalues are the integer labels.
    """
    if n < 1 or n % 2 == 0:
        raise InvalidDimensionError(f"dimension must be a positive odd integer, got {n}")
    n1 = (n - 1) // 2
    positive_labels = np.arange(1, n1 + 1, dtype=float)
    residues = np.arange(n1 + 1, dtype=float)
    sines = np.sin(np.mod(np.outer(residues, positive_labels) * (TWO_PI / n), TWO_PI))
    half_profile = (2.0 / n) * (sines @ positive_labels)
    profile = np.zeros(n)
    profile[: n1 + 1] = half_profile
    profile[n1 + 1:] = -half_profile[1:][::-1]
    entries = 1j * _circulant_from_profile(profile)
    return MomentumOperator(dim=n, entries=entries)
