"""Band-profile analysis of the symmetry-breaking perturbation.

At zero field the evolution operator is complex symmetric, so its
eigenvectors can be chosen real; in that basis the momentum operator becomes
i times a real antisymmetric matrix whose element variance depends only on
the distance L = |i - j| from the diagonal.  This module extracts that real
eigenbasis, transforms the perturbation into it, measures the Var(L)
profile and its half-height bandwidth b, pools the in-band variance v^2,
fits the collapsed profile ``Var(L)/Var(1) = 1 / (1 + ((L-1)/b)^m)``, and
converts (field, v^2, dimension) into the local transition parameter
``Lam = field^2 v^2 / D^2`` with D the mean level spacing.

The real eigenbasis exploits the same Cayley transform as the spectral
module: for a *symmetric* unitary the transform is a real symmetric matrix
(Hermitian and complex symmetric at once), so a real eigensolver returns
exactly real orthonormal vectors, degenerate subspaces included.  If the
realness of the transform cannot be certified, the generic complex
eigendecomposition is used instead and each eigenvector is rotated by a unit
phase (chosen so its largest-magnitude component is real positive) before
the imaginary residue is measured and dropped; degenerate clusters are
replaced by real orthonormal combinations built from an SVD of their
stacked real and imaginary parts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize_scalar

from .model import ModelParams, MomentumOperator, UnitaryMatrix
from .spectral import _cayley_hermitian

TWO_PI = 2.0 * math.pi


class NotTimeReversalInvariantError(ValueError):
    """Input operator is not symmetric, i.e. the field is switched on."""


class PhaseFixError(RuntimeError):
    """Eigenvectors could not be reduced to a real basis within tolerance."""


class InsufficientDataError(ValueError):
    """Too few usable profile points for the requested fit."""


@dataclass
class RealEigenbasis:
    """Real orthogonal eigenbasis of a symmetric unitary operator.

    Columns are eigenvectors ordered by eigenphase ascending in [0, 2 pi);
    ``max_residual_imag`` is the measured (complex route) or certified
    bound (real route) on the imaginary content removed from the vectors.
    """

    vectors: np.ndarray
    phases: np.ndarray
    max_residual_imag: float
    orthogonality_residual: float
    reconstruction_residual: float = math.nan

    @property
    def dim(self) -> int:
        return self.vectors.shape[0]


@dataclass
class BandProfile:
    """Variance-vs-distance profile of the transformed perturbation."""

    var_l: np.ndarray  # index 0 <-> L = 1
    var1: float
    b: float
    v2: float
    full_band: bool
    member_count: int
    dim: int
    m: float | None = None

    def distances(self) -> np.ndarray:
        return np.arange(1, self.var_l.size + 1)


@dataclass(frozen=True)
class TransitionParameter:
    """Local transition parameter Lam = field^2 v^2 / D^2."""

    lam_t: float
    field: float
    v2: float
    mean_spacing: float


def _imag_mixing_bound(
    h_imag: np.ndarray, tans: np.ndarray, vectors: np.ndarray, scale: float
) -> float:
    """First-order bound on the imaginary admixture discarded by the real route.

    Dropping the (roundoff-level) imaginary part of the Cayley transform
    perturbs eigenvector k by at most ||Im(H) psi_k|| / gap_k to first
    order, where gap_k is the distance from psi_k's eigenvalue cluster to
    the nearest distinct eigenvalue; mixing inside a degenerate cluster is
    harmless because any basis of the cluster diagonalizes the operator.
    """
    if not np.any(h_imag):
        return 0.0
    column_action = np.linalg.norm(h_imag @ vectors, axis=0)
    cluster_tol = 1.0e-8 * scale
    # Cluster boundaries on the sorted eigenvalues.
    breaks = np.nonzero(np.diff(tans) >= cluster_tol)[0]
    starts = np.concatenate([[0], breaks + 1])
    stops = np.concatenate([breaks + 1, [tans.size]])
    if starts.size == 1:
        return 0.0  # single cluster: any orthonormal basis is exact
    worst = 0.0
    for c, (lo, hi) in enumerate(zip(starts, stops)):
        gaps = []
        if c > 0:
            gaps.append(tans[lo] - tans[lo - 1])
        if c + 1 < starts.size:
            gaps.append(tans[hi] - tans[hi - 1])
        gap = min(gaps)
        worst = max(worst, float(np.max(column_action[lo:hi])) / gap)
    return min(1.0, worst)


def _real_combinations(block: np.ndarray) -> np.ndarray:
    """Real orthonormal basis of a conjugation-closed column span."""
    stacked = np.concatenate([block.real, block.imag], axis=1)
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    rank = block.shape[1]
    if s[rank - 1] < 1.0e-8 * s[0]:
        raise PhaseFixError(
            "degenerate eigenspace is not closed under conjugation "
            f"(singular values {s[: rank + 1]})"
        )
    return u[:, :rank]


def _phase_fix_columns(vectors: np.ndarray, phases: np.ndarray, gap_tol: float):
    """Rotate (or recombine, when degenerate) columns to real vectors.

    Returns (real vectors, measured max imaginary residue).
    """
    dim = vectors.shape[1]
    fixed = np.empty_like(vectors)
    start = 0
    while start < dim:
        stop = start + 1
        while stop < dim and phases[stop] - phases[stop - 1] < gap_tol:
            stop += 1
        if stop - start == 1:
            column = vectors[:, start]
            anchor = column[np.argmax(np.abs(column))]
            fixed[:, start] = column * (anchor.conjugate() / abs(anchor))
        else:
            fixed[:, start:stop] = _real_combinations(vectors[:, start:stop])
        start = stop
    residual = float(np.max(np.abs(fixed.imag)))
    return fixed.real.copy(), residual


def _sign_fix(vectors: np.ndarray) -> np.ndarray:
    anchors = vectors[np.argmax(np.abs(vectors), axis=0), np.arange(vectors.shape[1])]
    signs = np.where(anchors >= 0.0, 1.0, -1.0)
    return vectors * signs[None, :]


def realize_tri_eigenbasis(
    u0: UnitaryMatrix,
    validate: bool = True,
    symmetry_tol: float = 1.0e-10,
    imag_tol: float = 1.0e-6,
    degeneracy_gap: float = 1.0e-10,
) -> RealEigenbasis:
    """Real orthogonal eigenbasis of a symmetric (zero-field) operator.

    Raises ``NotTimeReversalInvariantError`` when the input is not symmetric
    to ``symmetry_tol`` and ``PhaseFixError`` when the imaginary residue of
    the phase-fixed vectors exceeds ``imag_tol``.  ``validate=True`` also
    measures the reconstruction residual (one extra O(n^3) product).
    """
    defect = u0.symmetry_defect()
    if defect > symmetry_tol:
        raise NotTimeReversalInvariantError(
            f"symmetry defect {defect:.3e} exceeds {symmetry_tol:.1e}; "
            "the eigenbasis can only be chosen real at zero field"
        )
    # A global phase rotation keeps the operator symmetric; retry it if an
    # eigenphase sits too close to the Cayley branch point.
    phase = 0.0
    for _ in range(5):
        try:
            h = _cayley_hermitian(u0.entries, phase)
        except np.linalg.LinAlgError:
            phase += 0.7368421052631579
            continue
        h_imag = float(np.max(np.abs(h.imag)))
        h_scale = float(np.max(np.abs(h.real))) + 1.0
        if h_imag <= 1.0e-9 * h_scale:
            # Symmetric unitary: the Cayley transform is real symmetric, so
            # a real eigensolver returns exactly real orthonormal vectors.
            tans, vectors = sla.eigh(h.real)
            if np.max(np.abs(tans)) > 1.0e6:
                phase += 0.7368421052631579
                continue
            residual_imag = _imag_mixing_bound(h.imag, tans, vectors, h_scale)
        else:
            tans, cvectors = sla.eigh(h)
            if np.max(np.abs(tans)) > 1.0e6:
                phase += 0.7368421052631579
                continue
            unwrapped = 2.0 * np.arctan(tans)  # ascending, wrap-free
            vectors, residual_imag = _phase_fix_columns(
                cvectors, unwrapped, degeneracy_gap
            )
        break
    else:
        raise PhaseFixError(
            "eigenphases persistently too close to the Cayley branch point "
            f"(dim {u0.dim})"
        )
    if residual_imag > imag_tol:
        raise PhaseFixError(
            f"imaginary residue {residual_imag:.3e} exceeds {imag_tol:.1e} "
            f"(dim {u0.dim}, symmetry defect {defect:.3e})"
        )
    theta = np.mod(2.0 * np.arctan(tans) + phase, TWO_PI)
    order = np.argsort(theta, kind="stable")
    theta = theta[order]
    vectors = _sign_fix(vectors[:, order])
    gram = vectors.T @ vectors
    gram[np.diag_indices(gram.shape[0])] -= 1.0
    ortho = float(np.max(np.abs(gram)))
    recon = math.nan
    if validate:
        recon = float(
            np.max(np.abs(u0.entries @ vectors - vectors * np.exp(1j * theta)[None, :]))
        )
        if ortho > 1.0e-8 or recon > 1.0e-6:
            raise PhaseFixError(
                f"real eigenbasis failed validation (orthogonality {ortho:.3e}, "
                f"reconstruction {recon:.3e})"
            )
    return RealEigenbasis(
        vectors=vectors,
        phases=theta,
        max_residual_imag=residual_imag,
        orthogonality_residual=ortho,
        reconstruction_residual=recon,
    )


def transform_perturbation(
    p: MomentumOperator | np.ndarray,
    basis: RealEigenbasis,
    antisymmetry_tol: float = 1.0e-6,
) -> np.ndarray:
    """Perturbation in the real eigenbasis: p' = Psi^T p Psi.

    The result must be i times a real antisymmetric matrix; a violation
    beyond ``antisymmetry_tol`` (relative) signals an upstream phase-fixing
    failure.
    """
    entries = p.entries if isinstance(p, MomentumOperator) else np.asarray(p)
    if entries.shape != (basis.dim, basis.dim):
        raise ValueError(
            f"dimension mismatch: perturbation {entries.shape}, basis dim {basis.dim}"
        )
    vectors = basis.vectors
    real_part = vectors.T @ entries.real @ vectors if np.any(entries.real) else None
    imag_part = vectors.T @ entries.imag @ vectors
    transformed = (real_part if real_part is not None else 0.0) + 1j * imag_part
    scale = float(np.max(np.abs(transformed)))
    if scale > 0.0:
        if real_part is not None and float(np.max(np.abs(real_part))) > antisymmetry_tol * scale:
            raise PhaseFixError(
                "transformed perturbation has a real part beyond tolerance; "
                "the eigenbasis phase fixing is suspect"
            )
        asym = float(np.max(np.abs(imag_part + imag_part.T)))
        if asym > antisymmetry_tol * scale:
            raise PhaseFixError(
                f"transformed perturbation not antisymmetric (residual {asym:.3e} "
                f"vs scale {scale:.3e})"
            )
    return np.asarray(transformed, dtype=np.complex128)


class DiagonalMoments:
    """Streaming per-diagonal first and second moments of Im(p')."""

    def __init__(self, dim: int):
        self.dim = dim
        self.count = np.zeros(dim - 1, dtype=np.int64)
        self.sum1 = np.zeros(dim - 1)
        self.sum2 = np.zeros(dim - 1)
        self.members = 0

    def add(self, transformed: np.ndarray) -> None:
        if transformed.shape != (self.dim, self.dim):
            raise ValueError(
                f"member shape {transformed.shape} does not match dim {self.dim}"
            )
        imag = transformed.imag if np.iscomplexobj(transformed) else transformed
        for offset in range(1, self.dim):
            diag = np.diagonal(imag, offset=offset)
            idx = offset - 1
            self.count[idx] += diag.size
            self.sum1[idx] += diag.sum()
            self.sum2[idx] += np.dot(diag, diag)
        self.members += 1

    def state(self) -> dict:
        return {
            "count": self.count,
            "sum1": self.sum1,
            "sum2": self.sum2,
            "members": np.array([self.members]),
        }

    @classmethod
    def from_state(cls, dim: int, state: dict) -> "DiagonalMoments":
        moments = cls(dim)
        moments.count = np.asarray(state["count"], dtype=np.int64).copy()
        moments.sum1 = np.asarray(state["sum1"], dtype=float).copy()
        moments.sum2 = np.asarray(state["sum2"], dtype=float).copy()
        moments.members = int(np.asarray(state["members"]).ravel()[0])
        return moments


def _half_height_bandwidth(var_l: np.ndarray) -> tuple[float, bool]:
    """First half-height crossing of Var(L), log-interpolated between integers."""
    var1 = var_l[0]
    half = var1 / 2.0
    below = np.nonzero(var_l < half)[0]
    if below.size == 0:
        return var_l.size / 2.0 + 0.5, True  # N/2 for an (N-1)-long profile
    first = int(below[0])
    if first == 0:
        return 1.0, False
    lo, hi = var_l[first - 1], var_l[first]
    if hi <= 0.0 or lo <= 0.0:
        frac = 0.5  # degenerate synthetic profile; split the bracket
    else:
        frac = (math.log(half) - math.log(lo)) / (math.log(hi) - math.log(lo))
    return float(first + frac), False  # L = first (0-based) is distance first+1


def profile_from_moments(moments: DiagonalMoments) -> BandProfile:
    """Finalize streamed moments into a band profile with b and v^2."""
    if moments.members < 1:
        raise ValueError("no ensemble members accumulated")
    mean = moments.sum1 / moments.count
    var_l = moments.sum2 / moments.count - mean * mean
    var1 = float(var_l[0])
    b, full_band = _half_height_bandwidth(var_l)
    in_band = min(int(math.floor(b)), var_l.size)
    total = moments.count[:in_band].sum()
    pooled_mean = moments.sum1[:in_band].sum() / total
    v2 = float(moments.sum2[:in_band].sum() / total - pooled_mean**2)
    return BandProfile(
        var_l=var_l,
        var1=var1,
        b=float(b),
        v2=v2,
        full_band=full_band,
        member_count=moments.members,
        dim=moments.dim,
    )


def variance_profile(members: Iterable[np.ndarray]) -> BandProfile:
    """Var(L) profile pooled over transformed-perturbation members.

    For each distance L = |i - j| the imaginary parts of the upper-triangle
    elements are pooled over all members; ``b`` is the half-height
    bandwidth (log-interpolated between the bracketing integer distances)
    and ``v2`` the pooled variance of all elements with 1 <= L <= floor(b).
    A profile that never crosses half height is flagged ``full_band`` with
    b = N/2.
    """
    moments: DiagonalMoments | None = None
    for member in members:
        if moments is None:
            moments = DiagonalMoments(member.shape[0])
        moments.add(member)
    if moments is None:
        raise ValueError("empty ensemble")
    return profile_from_moments(moments)


def _collapse_points(profile: BandProfile):
    # Eigenstates are ordered by eigenphase on a circle, so the profile
    # mirrors around N/2; only the first branch carries independent decay.
    distances = profile.distances()
    keep = (distances >= 2) & (distances <= (profile.dim + 1) // 2)
    x = (distances[keep] - 1.0) / profile.b
    y = profile.var_l[keep] / profile.var1
    positive = y > 0
    return x[positive], y[positive]


def _fit_log_collapse(x: np.ndarray, y: np.ndarray, bounds=(0.5, 3.0)):
    log_y = np.log(y)
    log_x = np.log(x)

    def objective(m: float) -> float:
        return float(np.sum((log_y + np.log1p(np.exp(m * log_x))) ** 2))

    result = minimize_scalar(
        objective, bounds=bounds, method="bounded", options={"xatol": 1.0e-10}
    )
    m = float(result.x)
    rms = math.sqrt(objective(m) / x.size)
    return m, rms


def fit_collapse(profile: BandProfile, bounds=(0.5, 3.0)):
    """Fit the collapse exponent m of y = 1 / (1 + x^m), x = (L-1)/b.

    Unweighted least squares on log y vs -log(1 + x^m) over all distances
    L >= 2.  Returns (m, rms residual in log space).  Requires a banded
    profile with at least 10 points beyond the bandwidth.
    """
    if profile.full_band:
        raise InsufficientDataError("profile covers the full matrix; nothing to fit")
    x, y = _collapse_points(profile)
    if np.count_nonzero(x > 1.0) < 10:
        raise InsufficientDataError(
            f"only {np.count_nonzero(x > 1.0)} points beyond the bandwidth; need 10"
        )
    return _fit_log_collapse(x, y, bounds)


def fit_collapse_pooled(profiles, bounds=(0.5, 3.0)):
    """Common collapse exponent over several profiles' rescaled points."""
    xs, ys = [], []
    for profile in profiles:
        if profile.full_band:
            raise InsufficientDataError("pooled fit requires banded profiles")
        x, y = _collapse_points(profile)
        xs.append(x)
        ys.append(y)
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    if np.count_nonzero(x > 1.0) < 10:
        raise InsufficientDataError("too few points beyond the bandwidth")
    return _fit_log_collapse(x, y, bounds)


def transition_parameter(field: float, v2: float, n: int) -> TransitionParameter:
    """Local transition parameter Lam = field^2 v^2 / (2 pi / n)^2.

    With the flat-profile variance v^2 = n / 12 this reduces to the
    closed form ``field^2 n^3 / (48 pi^2)``.
    """
    if field < 0:
        raise ValueError(f"field strength must be >= 0, got {field}")
    if v2 <= 0:
        raise ValueError(f"element variance must be positive, got {v2}")
    mean_spacing = TWO_PI / n
    lam_t = field * field * v2 / (mean_spacing * mean_spacing)
    return TransitionParameter(
        lam_t=float(lam_t), field=field, v2=v2, mean_spacing=mean_spacing
    )
