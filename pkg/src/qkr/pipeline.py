"""Experiment orchestration: configuration, cached stages, CSV emission.

A run takes an :class:`ExperimentConfig` plus a list of named targets (the
figure- and table-shaped data products), executes the stages each target
needs, and writes plot-ready CSV files plus a JSON manifest with the config
hash, per-stage wall-clock and a checksum of every output.  Identical
config + seed always produces byte-identical CSVs: every computation is
deterministic given the config, Monte-Carlo references draw their seeds
from the root seed through a fixed (target, index) derivation, and cached
intermediates store exactly the float64 arrays the CSV values are derived
from, so cached and fresh runs emit the same bytes.

Heavy intermediates (eigenphase spectra, band-profile moment accumulators,
eigenvector summaries) are cached on disk keyed by a hash of the exact
parameters; matrices themselves are cheap to rebuild and are not cached.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.optimize import brentq

from . import __version__, eigenvectors, rmt
from .model import ModelParams, build_evolution_operator, build_momentum_operator
from .perturbation import (
    DiagonalMoments,
    fit_collapse,
    fit_collapse_pooled,
    profile_from_moments,
    realize_tri_eigenbasis,
    transform_perturbation,
    transition_parameter,
)
from .spectral import (
    ensemble_alphas,
    eigenphases,
    pooled_count_variance,
    unfold,
)

TARGETS = (
    "fig1",
    "fig2",
    "fig3",
    "fig4",
    "fig5",
    "table1",
    "table2",
    "table3",
)

#: Stable codes for seed derivation; appending targets never perturbs
#: the seeds of existing ones.
_TARGET_CODES = {name: i + 1 for i, name in enumerate(TARGETS)}

_ORDER_N_TOKEN = "N"


class ConfigError(ValueError):
    """Configuration file is malformed or inconsistent."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Resolved experiment configuration (see README for the file format)."""

    n: int = 2001
    alpha2_over_n_list: tuple = (5.0, 10.0, 25.0, 50.0, 100.0)
    alpha2_over_n_big: str | float = _ORDER_N_TOKEN
    lambda_list: tuple = (0.0, 1.719e-5, 0.9)
    theta0_raw: str | float = "pi_over_2N"
    ensemble_size: int = 50
    alpha_halfwidth: float = 5.0
    r_values: tuple = (1.0, 2.0, 5.0, 10.0)
    bins: int = 70
    seed: int = 20260809
    output_dir: str = "qkr-out"
    cache: bool = True
    table2_grid_points: int = 9
    table2_lambda_min: float = 0.003
    table3_lambda: float = 1.719e-5
    fig_points_per_decade: int = 12
    fig_lambda_min: float = 1.0e-3
    fig_lambda_max: float = 10.0
    interp_dim: int = 512
    interp_matrices: int = 24

    @property
    def theta0(self) -> float:
        if isinstance(self.theta0_raw, str):
            return math.pi / (2 * self.n)
        return float(self.theta0_raw)

    @property
    def big_alpha2_over_n(self) -> float:
        if isinstance(self.alpha2_over_n_big, str):
            return float(self.n)
        return float(self.alpha2_over_n_big)

    def alpha(self, alpha2_over_n: float) -> float:
        return math.sqrt(self.n * alpha2_over_n)

    def params(self, alpha2_over_n: float, lam: float) -> ModelParams:
        return ModelParams(
            n=self.n, alpha=self.alpha(alpha2_over_n), lam=lam, theta0=self.theta0
        )


_KEY_MAP = {
    "N": "n",
    "alpha2_over_N_list": "alpha2_over_n_list",
    "alpha2_over_N_big": "alpha2_over_n_big",
    "lambda_list": "lambda_list",
    "theta0": "theta0_raw",
    "ensemble_size": "ensemble_size",
    "alpha_halfwidth": "alpha_halfwidth",
    "r_values": "r_values",
    "bins": "bins",
    "seed": "seed",
    "output_dir": "output_dir",
    "cache": "cache",
    "table2_grid_points": "table2_grid_points",
    "table2_Lambda_min": "table2_lambda_min",
    "table3_lambda": "table3_lambda",
    "fig_points_per_decade": "fig_points_per_decade",
    "fig_Lambda_min": "fig_lambda_min",
    "fig_Lambda_max": "fig_lambda_max",
    "interp_dim": "interp_dim",
    "interp_matrices": "interp_matrices",
}
_FIELD_TO_KEY = {v: k for k, v in _KEY_MAP.items()}

_INT_FIELDS = {
    "n",
    "ensemble_size",
    "bins",
    "seed",
    "table2_grid_points",
    "fig_points_per_decade",
    "interp_dim",
    "interp_matrices",
}
_FLOAT_FIELDS = {
    "alpha_halfwidth",
    "table2_lambda_min",
    "table3_lambda",
    "fig_lambda_min",
    "fig_lambda_max",
}
_LIST_FIELDS = {"alpha2_over_n_list", "lambda_list", "r_values"}
_BOOL_FIELDS = {"cache"}


def _parse_scalar(key: str, value: str):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None


def _parse_value(field_name: str, key: str, value: str):
    if field_name in _LIST_FIELDS:
        inner = value.strip()
        if inner.startswith("[") and inner.endswith("]"):
            inner = inner[1:-1]
        items = [item.strip() for item in inner.split(",") if item.strip()]
        if not items:
            raise ConfigError(f"{key}: empty list")
        return tuple(_parse_scalar(key, item) for item in items)
    if field_name in _BOOL_FIELDS:
        lowered = value.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if field_name in _INT_FIELDS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if field_name in _FLOAT_FIELDS:
        return float(_parse_scalar(key, value))
    if field_name == "theta0_raw":
        if value.lower() == "pi_over_2n":
            return "pi_over_2N"
        return float(_parse_scalar(key, value))
    if field_name == "alpha2_over_n_big":
        if value == _ORDER_N_TOKEN:
            return _ORDER_N_TOKEN
        return float(_parse_scalar(key, value))
    if field_name == "output_dir":
        return value
    raise ConfigError(f"unhandled key {key}")


def validate_config(text: str) -> ExperimentConfig:
    """Parse and validate flat ``key = value`` configuration text.

    Unknown keys are rejected; an empty document yields all defaults.
    """
    overrides = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_MAP:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        field_name = _KEY_MAP[key]
        if field_name in overrides:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        overrides[field_name] = _parse_value(field_name, key, value)
    try:
        config = ExperimentConfig(**overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    _check_config(config)
    return config


def _check_config(config: ExperimentConfig) -> None:
    if config.n < 3 or config.n % 2 == 0:
        raise ConfigError(f"N must be an odd integer >= 3, got {config.n}")
    if config.ensemble_size < 1:
        raise ConfigError(f"ensemble_size must be >= 1, got {config.ensemble_size}")
    if config.alpha_halfwidth < 0:
        raise ConfigError("alpha_halfwidth must be >= 0")
    if config.bins < 10:
        raise ConfigError(f"bins must be >= 10, got {config.bins}")
    for name, values in (
        ("alpha2_over_N_list", config.alpha2_over_n_list),
        ("r_values", config.r_values),
    ):
        if any(v <= 0 for v in values):
            raise ConfigError(f"{name} entries must be positive")
    if any(v < 0 for v in config.lambda_list):
        raise ConfigError("lambda_list entries must be >= 0")
    if any(r > config.n / 4 for r in config.r_values):
        raise ConfigError("r_values must stay below N/4")
    if config.table2_grid_points < 4:
        raise ConfigError("table2_grid_points must be >= 4")
    if not 0 < config.table2_lambda_min < 1:
        raise ConfigError("table2_Lambda_min must lie in (0, 1)")
    if not isinstance(config.alpha2_over_n_big, str):
        if config.alpha2_over_n_big <= 0:
            raise ConfigError("alpha2_over_N_big must be positive or 'N'")
    if isinstance(config.theta0_raw, float) and not math.isfinite(config.theta0_raw):
        raise ConfigError("theta0 must be finite")
    min_alpha = config.alpha(min(config.alpha2_over_n_list))
    if min_alpha < config.alpha_halfwidth:
        raise ConfigError(
            f"smallest central kick strength {min_alpha:.3f} is below the ensemble "
            f"halfwidth {config.alpha_halfwidth}; the local grid would go negative"
        )


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical ``key = value`` text; parsing it reproduces the config."""
    lines = []
    for field_name, key in _FIELD_TO_KEY.items():
        value = getattr(config, field_name)
        if isinstance(value, tuple):
            rendered = "[" + ", ".join(_fmt(v) for v in value) + "]"
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = _fmt(value)
        else:
            rendered = str(value)
        lines.append(f"{key} = {rendered}")
    return "\n".join(lines) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode()).hexdigest()[:16]


def desk_preset(config: ExperimentConfig) -> ExperimentConfig:
    """Desk-scale preset: N=501, ensemble 20, trimmed transition grids."""
    return replace(
        config,
        n=501,
        ensemble_size=20,
        fig_points_per_decade=6,
        fig_lambda_min=1.0e-2,
    )


def derive_seed(root_seed: int, target: str, index: int = 0) -> int:
    """Per-(target, index) seed; independent of which other targets run."""
    sequence = np.random.SeedSequence(
        entropy=root_seed, spawn_key=(_TARGET_CODES[target], index)
    )
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


def _fmt(value) -> str:
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float) and value != value:  # nan
        return "nan"
    return format(float(value), ".17g")


class ArtifactCache:
    """Content-addressed npz store for heavy per-parameter intermediates."""

    def __init__(self, root: str | Path | None, enabled: bool = True):
        self.root = Path(root) if root is not None else None
        self.enabled = enabled and root is not None

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.npz"

    @staticmethod
    def key(*parts) -> str:
        rendered = "|".join(
            p.hex() if isinstance(p, float) else str(p) for p in parts
        )
        return hashlib.sha256(rendered.encode()).hexdigest()

    def load(self, key: str) -> dict | None:
        if not self.enabled:
            return None
        path = self._path(key)
        if not path.exists():
            return None
        with np.load(path) as payload:
            return {name: payload[name].copy() for name in payload.files}

    def store(self, key: str, **arrays) -> None:
        if not self.enabled:
            return
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, **arrays)
        tmp.replace(path)


# ---------------------------------------------------------------------------
# Stages


def member_unfolded(
    cache: ArtifactCache, n: int, alpha: float, lam: float, theta0: float
) -> np.ndarray:
    """Unfolded spectrum of one operator, cached by exact parameters."""
    key = cache.key("phases", n, float(alpha), float(lam), float(theta0))
    payload = cache.load(key)
    if payload is not None:
        phases = payload["phases"]
    else:
        params = ModelParams(n=n, alpha=float(alpha), lam=float(lam), theta0=theta0)
        phases = eigenphases(build_evolution_operator(params))
        cache.store(key, phases=phases)
    return unfold(phases, n)


def ensemble_unfolded(
    config: ExperimentConfig, cache: ArtifactCache, alpha2_over_n: float, lam: float
) -> list:
    alphas = ensemble_alphas(
        config.alpha(alpha2_over_n), config.ensemble_size, config.alpha_halfwidth
    )
    return [
        member_unfolded(cache, config.n, a, lam, config.theta0) for a in alphas
    ]


def band_profile_stage(
    config: ExperimentConfig,
    cache: ArtifactCache,
    alpha2_over_n: float,
    momentum=None,
):
    """Band profile of the transformed perturbation at one alpha^2/N."""
    key = cache.key(
        "band",
        config.n,
        float(config.alpha(alpha2_over_n)),
        config.ensemble_size,
        float(config.alpha_halfwidth),
        float(config.theta0),
    )
    payload = cache.load(key)
    if payload is None:
        if momentum is None:
            momentum = build_momentum_operator(config.n)
        moments = DiagonalMoments(config.n)
        alphas = ensemble_alphas(
            config.alpha(alpha2_over_n), config.ensemble_size, config.alpha_halfwidth
        )
        for a in alphas:
            params = ModelParams(n=config.n, alpha=float(a), lam=0.0, theta0=config.theta0)
            u = build_evolution_operator(params)
            basis = realize_tri_eigenbasis(u, validate=False)
            moments.add(transform_perturbation(momentum, basis))
        cache.store(key, **moments.state())
        payload = moments.state()
    moments = DiagonalMoments.from_state(config.n, payload)
    return profile_from_moments(moments)


def band_profiles(config: ExperimentConfig, cache: ArtifactCache, a2n_values, log=None):
    momentum = build_momentum_operator(config.n)
    profiles = {}
    for a2n in a2n_values:
        profiles[a2n] = band_profile_stage(config, cache, a2n, momentum=momentum)
        if log:
            log(f"  band profile alpha^2/N={a2n:g}: v2={profiles[a2n].v2:.2f}")
    return profiles


def eigvec_stage(
    config: ExperimentConfig, cache: ArtifactCache, alpha2_over_n: float, lam: float
):
    """sigma^2 and log10 histogram of squared components (single matrix)."""
    key = cache.key(
        "eigvec",
        config.n,
        float(config.alpha(alpha2_over_n)),
        float(lam),
        float(config.theta0),
        config.bins,
    )
    payload = cache.load(key)
    if payload is None:
        params = config.params(alpha2_over_n, lam)
        u = build_evolution_operator(params)
        sample = eigenvectors.squared_components(u, params=params)
        hist = eigenvectors.log_histogram(sample, bins=config.bins)
        payload = {
            "sigma2": np.array([sample.sigma2]),
            "centers": hist.bin_centers,
            "density": hist.density,
            "dropped": np.array([hist.dropped_zeros]),
        }
        cache.store(key, **payload)
    return payload


def number_variance_stage(
    config: ExperimentConfig,
    cache: ArtifactCache,
    alpha2_over_n: float,
    lam: float,
    r_values,
):
    members = ensemble_unfolded(config, cache, alpha2_over_n, lam)
    return pooled_count_variance(members, config.n, r_values)


def table2_lambda_grid(config: ExperimentConfig, v2: float) -> np.ndarray:
    """Field grid for the half-decay search: Lam log-spaced up to 1."""
    lam_t = np.logspace(
        math.log10(config.table2_lambda_min), 0.0, config.table2_grid_points
    )
    d = 2.0 * math.pi / config.n
    return np.concatenate([[0.0], np.sqrt(lam_t) * d / math.sqrt(v2)])


def _pava_decreasing(values: np.ndarray) -> np.ndarray:
    """Pool-adjacent-violators projection onto non-increasing sequences."""
    blocks = [[v, 1] for v in values]
    merged = []
    for block in blocks:
        merged.append(block)
        while len(merged) > 1 and merged[-2][0] < merged[-1][0]:
            b = merged.pop()
            a = merged.pop()
            total = a[1] + b[1]
            merged.append([(a[0] * a[1] + b[0] * b[1]) / total, total])
    out = []
    for value, count in merged:
        out.extend([value] * count)
    return np.asarray(out)


def half_decay_field(fields: np.ndarray, sigma2: np.ndarray) -> float:
    """Field strength where the curve crosses halfway to its endpoint value.

    ``fields[0]`` must be 0 (the invariant start); the last grid point is
    the completed-transition end.  The measured curve is made monotone by a
    pool-adjacent-violators pass and interpolated monotonically in log
    field strength.
    """
    if fields[0] != 0.0:
        raise ValueError("the first grid point must be field = 0")
    target = 0.5 * (sigma2[0] + sigma2[-1])
    xs = np.log10(fields[1:])
    ys = _pava_decreasing(np.minimum(sigma2[1:], sigma2[0]))
    if ys[0] < target:
        # Crossing happens before the first nonzero grid point; report it.
        raise ValueError(
            "half decay occurs below the field grid; lower table2_Lambda_min"
        )
    interp = PchipInterpolator(xs, ys)
    if ys[-1] > target:
        raise ValueError("curve does not reach the half-decay target on the grid")
    root = brentq(lambda x: float(interp(x)) - target, xs[0], xs[-1], xtol=1.0e-12)
    return float(10.0**root)


# ---------------------------------------------------------------------------
# CSV emission


def _write_csv(path: Path, header, rows, manifest: str) -> None:
    lines = [f"# manifest: {manifest}", ",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else v if isinstance(v, str) else _fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


@dataclass
class RunManifest:
    """Provenance record of one run."""

    config_hash: str
    version: str
    seed: int
    targets: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @property
    def failures(self) -> list:
        return [t for t, info in self.targets.items() if info.get("status") == "failed"]

    def to_json(self) -> str:
        return json.dumps(
            {
                "config_hash": self.config_hash,
                "version": self.version,
                "seed": self.seed,
                "targets": self.targets,
                "outputs": self.outputs,
            },
            indent=2,
            sort_keys=True,
        )


class _RunState:
    def __init__(self, config: ExperimentConfig, log):
        self.config = config
        self.log = log or (lambda message: None)
        self.out_dir = Path(config.output_dir)
        self.cache = ArtifactCache(
            self.out_dir / "cache" if config.cache else None, enabled=config.cache
        )
        self.hash = config_hash(config)
        self.csv_rows: dict[str, list] = {}
        self.csv_headers: dict[str, tuple] = {}
        self._profiles: dict[float, object] = {}
        self._momentum = None

    def add_rows(self, name: str, header, rows) -> None:
        self.csv_headers.setdefault(name, tuple(header))
        if self.csv_headers[name] != tuple(header):
            raise RuntimeError(f"conflicting headers for {name}")
        self.csv_rows.setdefault(name, []).extend(rows)

    def profiles_for(self, a2n_values) -> dict:
        missing = [a for a in a2n_values if a not in self._profiles]
        if missing:
            if self._momentum is None:
                self._momentum = build_momentum_operator(self.config.n)
            for a2n in missing:
                self._profiles[a2n] = band_profile_stage(
                    self.config, self.cache, a2n, momentum=self._momentum
                )
                self.log(
                    f"  band profile alpha^2/N={a2n:g}: "
                    f"v2={self._profiles[a2n].v2:.2f} b={self._profiles[a2n].b:.2f}"
                )
        return {a: self._profiles[a] for a in a2n_values}

    def v2_for(self, a2n: float, semiclassical_big: bool = True) -> float:
        if semiclassical_big and a2n >= self.config.n:
            return self.config.n / 12.0  # flat-profile value in the full-band regime
        return self.profiles_for([a2n])[a2n].v2


# ---------------------------------------------------------------------------
# Targets

_NV_HEADER = (
    "r",
    "sigma2",
    "stderr",
    "N",
    "alpha_center",
    "lambda",
    "theta0",
    "Lambda",
    "seed",
)
_REF_HEADER = ("kind", "Lambda", "r_or_s", "value", "tolerance")


def _nv_rows(state: _RunState, a2n: float, lam: float, curve, lam_t=None):
    config = state.config
    rows = []
    for r, s2, se in zip(curve.r_values, curve.sigma2, curve.stderr):
        rows.append(
            (
                r,
                s2,
                se,
                config.n,
                config.alpha(a2n),
                lam,
                config.theta0,
                lam_t,
                config.seed,
            )
        )
    return rows


def _target_fig1(state: _RunState):
    config = state.config
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    rows = []
    for a2n in a2n_values:
        for lam in (0.0, 0.9):
            curve = number_variance_stage(
                config, state.cache, a2n, lam, config.r_values
            )
            state.add_rows(
                "number_variance.csv",
                _NV_HEADER,
                _nv_rows(state, a2n, lam, curve),
            )
            for r, s2, se in zip(curve.r_values, curve.sigma2, curve.stderr):
                rows.append((a2n, lam, r, s2, se))
            state.log(f"  fig1 alpha^2/N={a2n:g} lambda={lam:g} done")
    ref_rows = []
    for kind, lam_t in (("poisson", None), ("coe", 0.0), ("cue", math.inf)):
        curve = rmt.ReferenceCurve(kind=kind)
        for r in config.r_values:
            ref_rows.append((kind, lam_t, r, curve(r), curve.tol))
    state.add_rows("reference_curves.csv", _REF_HEADER, ref_rows)
    state.add_rows(
        "fig1.csv", ("alpha2_over_N", "lambda", "r", "sigma2", "stderr"), rows
    )


def _band_csv_rows(state: _RunState, profiles: dict):
    config = state.config
    var_rows = []
    summary_rows = []
    for a2n, profile in profiles.items():
        for distance, value in zip(profile.distances(), profile.var_l):
            var_rows.append((distance, value, a2n, config.n, profile.member_count))
        if profile.full_band:
            m_value = None
        else:
            m_value, _ = fit_collapse(profile)
            profile.m = m_value
        summary_rows.append(
            (
                a2n,
                profile.var1,
                profile.b,
                m_value,
                profile.v2,
                "true" if profile.full_band else "false",
            )
        )
    return var_rows, summary_rows


def _target_table1(state: _RunState):
    config = state.config
    profiles = state.profiles_for(config.alpha2_over_n_list)
    var_rows, summary_rows = _band_csv_rows(state, profiles)
    state.add_rows(
        "var_profile.csv", ("L", "varL", "alpha2_over_N", "N", "members"), var_rows
    )
    state.add_rows(
        "band_summary.csv",
        ("alpha2_over_N", "var1", "b", "m", "v2", "full_band"),
        summary_rows,
    )
    state.add_rows(
        "table1.csv",
        ("alpha2_over_N", "v2"),
        [(a2n, profiles[a2n].v2) for a2n in config.alpha2_over_n_list],
    )


def _target_fig2(state: _RunState):
    config = state.config
    profiles = state.profiles_for(config.alpha2_over_n_list)
    if "var_profile.csv" not in state.csv_rows:
        var_rows, summary_rows = _band_csv_rows(state, profiles)
        state.add_rows(
            "var_profile.csv",
            ("L", "varL", "alpha2_over_N", "N", "members"),
            var_rows,
        )
        state.add_rows(
            "band_summary.csv",
            ("alpha2_over_N", "var1", "b", "m", "v2", "full_band"),
            summary_rows,
        )
    banded = [p for p in profiles.values() if not p.full_band]
    rows = []
    if len(banded) >= 2:
        m_pooled, rms = fit_collapse_pooled(banded)
    else:
        m_pooled, rms = None, None
    for a2n, profile in profiles.items():
        if profile.full_band:
            continue
        for distance, value in zip(profile.distances(), profile.var_l):
            if distance < 2 or distance > (config.n + 1) // 2 or value <= 0:
                continue
            rows.append(
                (
                    a2n,
                    distance,
                    (distance - 1.0) / profile.b,
                    value / profile.var1,
                    m_pooled,
                )
            )
    state.add_rows(
        "fig2_collapse.csv", ("alpha2_over_N", "L", "x", "y", "m_pooled"), rows
    )


def _transition_points(state: _RunState, a2n: float, r_values, fields, lam_ts):
    """Measured number variance across a field grid, with manifest rows."""
    config = state.config
    out = {r: [] for r in r_values}
    for lam, lam_t in zip(fields, lam_ts):
        curve = number_variance_stage(config, state.cache, a2n, lam, r_values)
        state.add_rows(
            "number_variance.csv",
            _NV_HEADER,
            _nv_rows(state, a2n, lam, curve, lam_t=lam_t),
        )
        for r, s2, se in zip(curve.r_values, curve.sigma2, curve.stderr):
            out[r].append((lam, lam_t, s2, se))
        state.log(f"  transition alpha^2/N={a2n:g} lambda={lam:.3e} done")
    return out


def _target_fig3(state: _RunState):
    config = state.config
    r_values = (1.0, 2.0)
    decades = math.log10(config.fig_lambda_max / config.fig_lambda_min)
    count = max(2, int(round(decades * config.fig_points_per_decade)) + 1)
    lam_t_grid = np.logspace(
        math.log10(config.fig_lambda_min), math.log10(config.fig_lambda_max), count
    )
    d = 2.0 * math.pi / config.n
    rows = []
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    for a2n in a2n_values:
        v2 = state.v2_for(a2n)
        fields = np.concatenate([[0.0], np.sqrt(lam_t_grid) * d / math.sqrt(v2)])
        lam_ts = np.concatenate([[0.0], lam_t_grid])
        points = _transition_points(state, a2n, r_values, fields, lam_ts)
        for r in r_values:
            for lam, lam_t, s2, se in points[r]:
                rows.append((r, lam_t, lam, s2, se, a2n))
    ref_rows = []
    for r in r_values:
        for lam_t in lam_t_grid:
            ref_rows.append(
                ("transition", lam_t, r, rmt.sigma2_transition(r, lam_t), 1.0e-6)
            )
    state.add_rows("reference_curves.csv", _REF_HEADER, ref_rows)
    state.add_rows(
        "fig3.csv", ("r", "Lambda", "lambda", "sigma2", "stderr", "alpha2_over_N"), rows
    )


def _target_table2(state: _RunState):
    config = state.config
    r_values = (1.0, 2.0)
    d = 2.0 * math.pi / config.n
    rows = []
    curve_rows = []
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    for a2n in a2n_values:
        v2 = state.v2_for(a2n)
        fields = table2_lambda_grid(config, v2)
        lam_ts = (fields * math.sqrt(v2) / d) ** 2
        points = _transition_points(state, a2n, r_values, fields, lam_ts)
        for r in r_values:
            lam_grid = np.array([p[0] for p in points[r]])
            sigma2 = np.array([p[2] for p in points[r]])
            lam_half = half_decay_field(lam_grid, sigma2)
            rows.append((a2n, r, lam_half))
            for lam, lam_t, s2, se in points[r]:
                curve_rows.append((a2n, r, lam, lam_t, s2, se))
    state.add_rows("table2.csv", ("alpha2_over_N", "r", "lambda_half"), rows)
    state.add_rows(
        "table2_curves.csv",
        ("alpha2_over_N", "r", "lambda", "Lambda", "sigma2", "stderr"),
        curve_rows,
    )


def _target_table3(state: _RunState):
    config = state.config
    probe = config.table3_lambda
    rows = []
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    for a2n in a2n_values:
        v2 = state.v2_for(a2n)
        lam_t = transition_parameter(probe, v2, config.n).lam_t
        base = eigvec_stage(config, state.cache, a2n, 0.0)
        perturbed = eigvec_stage(config, state.cache, a2n, probe)
        drop = float(base["sigma2"][0]) - float(perturbed["sigma2"][0])
        rows.append((a2n, lam_t, drop))
        state.log(f"  table3 alpha^2/N={a2n:g}: Lambda={lam_t:.4g} drop={drop:.3f}")
    state.add_rows(
        "table3.csv", ("alpha2_over_N", "Lambda", "sigma2_drop"), rows
    )


def _target_fig4(state: _RunState):
    config = state.config
    rows = []
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    for a2n in a2n_values:
        for lam in config.lambda_list:
            payload = eigvec_stage(config, state.cache, a2n, lam)
            for center, density in zip(payload["centers"], payload["density"]):
                rows.append((center, density, config.n, a2n, lam))
            state.log(f"  fig4 alpha^2/N={a2n:g} lambda={lam:g} done")
    state.add_rows(
        "eigvec_hist.csv",
        ("log10y_center", "density", "N", "alpha2_over_N", "lambda"),
        rows,
    )


def _target_fig5(state: _RunState):
    config = state.config
    decades = math.log10(config.fig_lambda_max / config.fig_lambda_min)
    count = max(2, int(round(decades * config.fig_points_per_decade)) + 1)
    lam_t_grid = np.logspace(
        math.log10(config.fig_lambda_min), math.log10(config.fig_lambda_max), count
    )
    d = 2.0 * math.pi / config.n
    rows = []
    a2n_values = list(config.alpha2_over_n_list) + [config.big_alpha2_over_n]
    for a2n in a2n_values:
        v2 = state.v2_for(a2n)
        fields = np.concatenate([[0.0], np.sqrt(lam_t_grid) * d / math.sqrt(v2)])
        lam_ts = np.concatenate([[0.0], lam_t_grid])
        for lam, lam_t in zip(fields, lam_ts):
            payload = eigvec_stage(state.config, state.cache, a2n, lam)
            rows.append((lam_t, float(payload["sigma2"][0]), a2n, lam))
        state.log(f"  fig5 alpha^2/N={a2n:g} done")
    ref_rows = []
    for i, lam_t in enumerate(lam_t_grid):
        value = rmt.interpolating_sigma2(
            config.interp_dim,
            float(lam_t),
            config.interp_matrices,
            seed=derive_seed(config.seed, "fig5", i),
        )
        ref_rows.append(("sigma2_interpolating", lam_t, None, value, 0.05))
    state.add_rows("reference_curves.csv", _REF_HEADER, ref_rows)
    state.add_rows(
        "sigma2_curve.csv", ("Lambda", "sigma2", "alpha2_over_N", "lambda"), rows
    )


_TARGET_FUNCS = {
    "fig1": _target_fig1,
    "fig2": _target_fig2,
    "fig3": _target_fig3,
    "fig4": _target_fig4,
    "fig5": _target_fig5,
    "table1": _target_table1,
    "table2": _target_table2,
    "table3": _target_table3,
}


def run(config: ExperimentConfig, targets, log=None) -> RunManifest:
    """Execute targets and write CSVs + run_manifest.json to the output dir.

    A failing target is isolated: its error is recorded in the manifest and
    the remaining targets still run.
    """
    unknown = [t for t in targets if t not in _TARGET_FUNCS]
    if unknown:
        raise ValueError(f"unknown targets {unknown}; choose from {sorted(_TARGET_FUNCS)}")
    if not targets:
        raise ValueError("no targets requested")
    state = _RunState(config, log)
    state.out_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(config_hash=state.hash, version=__version__, seed=config.seed)
    for target in targets:
        start = time.perf_counter()
        state.log(f"target {target} ...")
        try:
            _TARGET_FUNCS[target](state)
        except Exception as exc:  # isolate per-target failures
            manifest.targets[target] = {
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "seconds": round(time.perf_counter() - start, 3),
            }
            state.log(f"target {target} FAILED: {exc}")
            continue
        manifest.targets[target] = {
            "status": "ok",
            "seconds": round(time.perf_counter() - start, 3),
        }
        state.log(f"target {target} ok ({manifest.targets[target]['seconds']}s)")
    for name in sorted(state.csv_rows):
        if name.startswith("_"):
            continue
        path = state.out_dir / name
        _write_csv(path, state.csv_headers[name], state.csv_rows[name], state.hash)
        manifest.outputs[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    (state.out_dir / "run_manifest.json").write_text(manifest.to_json() + "\n")
    return manifest
