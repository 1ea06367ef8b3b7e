"""Knot selection, nonstationary Matérn covariance and kriging from knots to the full grid.

The covariance between locations s and s' is

    C(s, s') = sigma(s) sigma(s') |S(s)|^1/4 |S(s')|^1/4 |(S(s) + S(s'))/2|^-1/2
               * R_S(s - s'; (S(s) + S(s'))/2, (nu(s) + nu(s'))/2) + tau2(s) 1{s = s'}

with parameter fields sigma^2, nu, S (2x2 kernel matrix) and tau2 obtained by
normalized Gaussian-kernel mixing of per-center local estimates.
"""
from __future__ import annotations

from dataclasses import dataclass
import hashlib
import math
from pathlib import Path
from typing import Optional, Sequence, Tuple
import warnings

import numpy as np
from scipy import linalg, optimize, special

from WindESN.errors import ConfigurationError, DomainError, FitFailureError, NumericError, \
    SchemaError, WindEsnWarning
from WindESN.field_model import SpaceTimeField

GRID_KNOT = "grid-knot"
HIGH_WIND_KNOT = "high-wind-knot"

NU_MIN = 0.05
NU_MAX = 10.0
_Q_ZERO = 1e-12
_JITTER_RETRIES = 5


# ===================================================================
# Knots
# ===================================================================

@dataclass(frozen=True, slots=True)
class KnotSet:
    """Indices into a field's location list, each tagged with how it was chosen."""
    indices: Tuple[int, ...]
    tags: Tuple[str, ...]

    def __post_init__(self):
        indices = tuple(int(i) for i in self.indices)
        tags = tuple(str(t) for t in self.tags)
        if len(indices) != len(tags):
            raise SchemaError(f"{len(indices)} knot indices but {len(tags)} tags.")
        if len(set(indices)) != len(indices):
            raise SchemaError("Knot indices must be unique.")
        if any(i < 0 for i in indices):
            raise SchemaError("Knot indices must be non-negative.")
        bad = {t for t in tags if t not in (GRID_KNOT, HIGH_WIND_KNOT)}
        if bad:
            raise SchemaError(f"Unknown knot tags: {sorted(bad)}.")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "tags", tags)

    def __len__(self) -> int:
        return len(self.indices)

    def count(self, tag: str) -> int:
        return sum(1 for t in self.tags if t == tag)

    def validate_for(self, n_locations: int) -> None:
        if any(i >= n_locations for i in self.indices):
            raise SchemaError(
                f"Knot index {max(self.indices)} is out of range for {n_locations} locations."
            )


def select_knots(field: SpaceTimeField, grid_step: float = 0.25, speed_threshold: float = 6.0,
                 min_sep: float = 0.005) -> KnotSet:
    """Grid knots (location nearest each occupied grid-cell center) plus high-wind knots.

    High-wind candidates are locations whose mean over ``field`` exceeds
    ``speed_threshold``; scanned from windiest down, a candidate is kept only if it
    differs by at least ``min_sep`` in x or in y from every kept high-wind knot.
    Ties in distance or mean speed go to the location listed first in ``field``.

    Raises:
        ConfigurationError: On non-positive parameters or an empty selection.
    """
    if field.n_locations == 0 or field.n_times == 0:
        raise ConfigurationError("Cannot select knots from an empty field.")
    for name, value in (("grid_step", grid_step), ("speed_threshold", speed_threshold),
                        ("min_sep", min_sep)):
        if not value > 0:
            raise ConfigurationError(f"knots.{name} must be > 0, got {value}.")

    coords = field.coords
    position = np.arange(field.n_locations)
    tags: dict[int, str] = {}

    # (a) nearest location to the center of every occupied grid cell
    origin = coords.min(axis=0)
    cell = np.floor((coords - origin) / grid_step).astype(np.int64)
    centers = origin + (cell + 0.5) * grid_step
    dist = np.hypot(*(coords - centers).T)
    order = np.lexsort((position, dist, cell[:, 1], cell[:, 0]))
    seen_cells: set[tuple[int, int]] = set()
    for i in order:
        key = (int(cell[i, 0]), int(cell[i, 1]))
        if key not in seen_cells:
            seen_cells.add(key)
            tags[int(i)] = GRID_KNOT

    # (b) separated high-wind locations
    mean_speed = np.nanmean(field.values, axis=0)
    candidates = np.flatnonzero(mean_speed > speed_threshold)
    candidates = candidates[np.lexsort((position[candidates], -mean_speed[candidates]))]
    kept: list[int] = []
    for i in candidates:
        dx = np.abs(coords[kept, 0] - coords[i, 0])
        dy = np.abs(coords[kept, 1] - coords[i, 1])
        if not kept or np.all((dx >= min_sep) | (dy >= min_sep)):
            kept.append(int(i))
    for i in kept:
        tags[i] = HIGH_WIND_KNOT

    if not tags:
        raise ConfigurationError("Knot selection returned no knots.")
    indices = sorted(tags)
    return KnotSet(indices=tuple(indices), tags=tuple(tags[i] for i in indices))


# ===================================================================
# Matérn correlation and covariance model
# ===================================================================

def matern_correlation(q: np.ndarray, nu: np.ndarray | float) -> np.ndarray:
    """Matérn correlation 2^(1-nu)/Gamma(nu) q^nu K_nu(q) for scaled distances q >= 0."""
    q = np.asarray(q, dtype=float)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), q.shape)
    out = np.ones(q.shape)
    pos = q > _Q_ZERO
    if np.any(pos):
        qp, vp = q[pos], nu[pos]
        # kve avoids underflow of K_nu at large q
        log_r = ((1.0 - vp) * math.log(2.0) - special.gammaln(vp) + vp * np.log(qp)
                 + np.log(special.kve(vp, qp)) - qp)
        out[pos] = np.exp(log_r)
    return out


def matern_stationary(hvec: Sequence[float], sigma: np.ndarray, nu: float) -> float:
    """Stationary anisotropic Matérn correlation R_S(h; Sigma, nu)."""
    if not nu > 0:
        raise DomainError(f"Matérn smoothness must be > 0, got {nu}.")
    sigma = _check_spd(np.asarray(sigma, dtype=float), "Sigma")
    h = np.asarray(hvec, dtype=float).reshape(2)
    q = math.sqrt(max(float(h @ np.linalg.solve(sigma, h)), 0.0))
    return float(matern_correlation(np.array([q]), nu)[0])


@dataclass(frozen=True)
class MixtureComponent:
    """Local stationary Matérn parameters anchored at a center location."""
    center: np.ndarray
    sill: float
    smoothness: float
    kernel: np.ndarray
    nugget: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(2))
        object.__setattr__(self, "kernel", _check_spd(
            np.asarray(self.kernel, dtype=float).reshape(2, 2), "mixture kernel"))
        if not self.sill > 0:
            raise DomainError(f"Partial sill must be > 0, got {self.sill}.")
        if not self.smoothness > 0:
            raise DomainError(f"Smoothness must be > 0, got {self.smoothness}.")
        if not self.nugget >= 0:
            raise DomainError(f"Nugget must be >= 0, got {self.nugget}.")


@dataclass(frozen=True)
class CovarianceModel:
    """Nonstationary Matérn model: mixture components plus mixing bandwidth (degrees)."""
    components: Tuple[MixtureComponent, ...]
    bandwidth: float = 3.0

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ConfigurationError("Covariance model needs at least one mixture component.")
        if not self.bandwidth > 0:
            raise ConfigurationError(f"covariance.bandwidth must be > 0, got {self.bandwidth}.")
        object.__setattr__(self, "components", comps)

    @classmethod
    def stationary(cls, sill: float, smoothness: float, kernel: np.ndarray,
                   nugget: float = 0.0, bandwidth: float = 3.0) -> "CovarianceModel":
        return cls((MixtureComponent(np.zeros(2), sill, smoothness, kernel, nugget),),
                   bandwidth)

    def parameter_fields(self, coords: np.ndarray) -> dict[str, np.ndarray]:
        """Kernel-mixed sill, smoothness, kernel matrix and nugget at each location."""
        coords = np.asarray(coords, dtype=float).reshape(-1, 2)
        centers = np.array([c.center for c in self.components])
        d2 = ((coords[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
        logits = -d2 / (2.0 * self.bandwidth ** 2)
        logits -= logits.max(axis=1, keepdims=True)
        weights = np.exp(logits)
        weights /= weights.sum(axis=1, keepdims=True)
        return {
            "sill": weights @ np.array([c.sill for c in self.components]),
            "smoothness": weights @ np.array([c.smoothness for c in self.components]),
            "kernel": np.einsum("nk,kij->nij", weights,
                                np.array([c.kernel for c in self.components])),
            "nugget": weights @ np.array([c.nugget for c in self.components]),
        }


def covariance(s: Sequence[float], s_prime: Sequence[float], model: CovarianceModel) -> float:
    """C(s, s') for a single pair of locations."""
    a = np.asarray(s, dtype=float).reshape(1, 2)
    b = np.asarray(s_prime, dtype=float).reshape(1, 2)
    return float(covariance_matrix(a, b, model)[0, 0])


def covariance_matrix(coords_a: np.ndarray, coords_b: np.ndarray, model: CovarianceModel,
                      chunk: int = 2048) -> np.ndarray:
    """Cross-covariance matrix between two location sets.

    The nugget is added for pairs whose coordinates are identical.
    """
    coords_a = np.asarray(coords_a, dtype=float).reshape(-1, 2)
    coords_b = np.asarray(coords_b, dtype=float).reshape(-1, 2)
    pa = model.parameter_fields(coords_a)
    pb = model.parameter_fields(coords_b)
    out = np.empty((coords_a.shape[0], coords_b.shape[0]))
    for start in range(0, coords_a.shape[0], chunk):
        rows = slice(start, start + chunk)
        out[rows] = _covariance_block(
            coords_a[rows], {k: v[rows] for k, v in pa.items()}, coords_b, pb)
    return out


def _covariance_block(ca: np.ndarray, pa: dict, cb: np.ndarray, pb: dict) -> np.ndarray:
    ka, kb = pa["kernel"], pb["kernel"]
    det_a = _det2(ka)
    det_b = _det2(kb)
    avg = 0.5 * (ka[:, None] + kb[None, :])
    det_avg = _det2(avg)
    if np.any(~(det_avg > 0)):
        i, j = np.argwhere(~(det_avg > 0))[0]
        raise NumericError(
            f"Averaged kernel is degenerate for the pair {tuple(ca[i])} and {tuple(cb[j])}."
        )
    h = ca[:, None, :] - cb[None, :, :]
    hx, hy = h[..., 0], h[..., 1]
    a, b, d = avg[..., 0, 0], avg[..., 0, 1], avg[..., 1, 1]
    q2 = (d * hx * hx - 2.0 * b * hx * hy + a * hy * hy) / det_avg
    q = np.sqrt(np.maximum(q2, 0.0))
    nu = 0.5 * (pa["smoothness"][:, None] + pb["smoothness"][None, :])
    prefactor = (det_a[:, None] * det_b[None, :]) ** 0.25 / np.sqrt(det_avg)
    sd = np.sqrt(pa["sill"])[:, None] * np.sqrt(pb["sill"])[None, :]
    cov = sd * prefactor * matern_correlation(q, nu)
    same = (hx == 0.0) & (hy == 0.0)
    if np.any(same):
        cov = cov + np.where(same, pa["nugget"][:, None], 0.0)
    return cov


# ===================================================================
# Local fitting
# ===================================================================

def default_centers(coords: np.ndarray, count: int = 42) -> np.ndarray:
    """Mixture centers on a regular lattice covering the bounding box of ``coords``."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    span = np.maximum(hi - lo, 1e-9)
    nx = max(1, int(round(math.sqrt(count * span[0] / span[1]))))
    ny = max(1, int(math.ceil(count / nx)))
    xs = lo[0] + (np.arange(nx) + 0.5) * span[0] / nx
    ys = lo[1] + (np.arange(ny) + 0.5) * span[1] / ny
    grid = np.array([(x, y) for y in ys for x in xs])
    return grid[:count]


def fit_stationary(values: np.ndarray, coords: np.ndarray, *, restarts: int = 3,
                   seed: int = 0) -> tuple[MixtureComponent, bool]:
    """Maximum likelihood stationary anisotropic Matérn fit, rows are independent replicates.

    Args:
        values: (T, k) zero-mean residuals at k locations.
        coords: (k, 2) coordinates.

    Returns:
        (component centered at the mean coordinate, converged flag)
    """
    values = np.asarray(values, dtype=float)
    coords = np.asarray(coords, dtype=float)
    values = values[np.all(np.isfinite(values), axis=1)]
    T, k = values.shape
    if T < 1 or k < 2:
        raise FitFailureError(f"Need replicates at >= 2 locations, got {T} x {k}.")
    S = values.T @ values / T
    var = max(float(np.trace(S)) / k, 1e-12)

    d = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    length_floor = float(np.median(d.min(axis=1)))
    np.fill_diagonal(d, 0.0)
    length_cap = max(4.0 * float(d.max()), 2.0 * length_floor)
    h = coords[:, None, :] - coords[None, :, :]

    def unpack(theta):
        log_sill, log_nu, log_l1, log_l2, angle, log_nugget = theta
        c, s = math.cos(angle), math.sin(angle)
        rot = np.array([[c, -s], [s, c]])
        kernel = rot @ np.diag([math.exp(2 * log_l1), math.exp(2 * log_l2)]) @ rot.T
        return math.exp(log_sill), math.exp(log_nu), kernel, math.exp(log_nugget)

    def nll(theta):
        sill, nu, kernel, nugget = unpack(theta)
        det = kernel[0, 0] * kernel[1, 1] - kernel[0, 1] ** 2
        q2 = (kernel[1, 1] * h[..., 0] ** 2 - 2 * kernel[0, 1] * h[..., 0] * h[..., 1]
              + kernel[0, 0] * h[..., 1] ** 2) / det
        C = sill * matern_correlation(np.sqrt(np.maximum(q2, 0.0)), nu)
        C[np.diag_indices(k)] += nugget
        try:
            factor = linalg.cho_factor(C, lower=True, check_finite=False)
        except linalg.LinAlgError:
            return 1e300
        logdet = 2.0 * np.log(np.diag(factor[0])).sum()
        return 0.5 * T * (logdet + np.trace(linalg.cho_solve(factor, S)))

    lv, ll = math.log(var), math.log(length_floor)
    bounds = [(lv - 14, lv + 3), (math.log(NU_MIN), math.log(NU_MAX)), (ll, math.log(length_cap)),
              (ll, math.log(length_cap)), (-math.pi / 2, math.pi / 2), (lv - 14, lv + 3)]
    start = np.array([math.log(0.9 * var), 0.0, ll + math.log(2.0), ll + math.log(2.0), 0.0,
                      math.log(0.1 * var)])
    rng = np.random.default_rng(seed)
    starts = [start] + [start + rng.normal(scale=[0.5, 0.5, 0.5, 0.5, 0.5, 1.0])
                        for _ in range(restarts)]

    best = None
    for x0 in starts:
        x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])
        res = optimize.minimize(nll, x0, method="Nelder-Mead", bounds=bounds,
                                options={"maxiter": 4000, "xatol": 1e-6, "fatol": 1e-8})
        if best is None or res.fun < best.fun:
            best = res
    if not best.fun < 1e299:
        raise FitFailureError("Local Matérn likelihood is not finite at any start point.")
    sill, nu, kernel, nugget = unpack(best.x)
    converged = bool(best.success)
    comp = MixtureComponent(coords.mean(axis=0), sill, nu, kernel, nugget)
    return comp, converged


def fit_covariance(residuals: SpaceTimeField, centers: Optional[np.ndarray] = None,
                   radius: float = 3.0, bandwidth: float = 3.0, *, restarts: int = 3,
                   min_neighbors: int = 30, seed: int = 0) -> CovarianceModel:
    """Local stationary MLE at each center, mixed into a nonstationary model.

    A center whose optimizer does not converge gets the kernel-weighted average of
    the converged centers' parameters.
    """
    if centers is None:
        centers = default_centers(residuals.coords)
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    if not radius > 0:
        raise ConfigurationError(f"covariance.radius must be > 0, got {radius}.")

    fits: list[Optional[MixtureComponent]] = []
    raw: list[MixtureComponent] = []
    for j, center in enumerate(centers):
        near = np.flatnonzero(np.hypot(*(residuals.coords - center).T) <= radius)
        if near.size < min_neighbors:
            raise ConfigurationError(
                f"Center {j} at {tuple(center)} has {near.size} locations within "
                f"{radius} degrees; at least {min_neighbors} are required."
            )
        comp, ok = fit_stationary(residuals.values[:, near], residuals.coords[near],
                                  restarts=restarts, seed=seed + j)
        raw.append(MixtureComponent(center, comp.sill, comp.smoothness, comp.kernel,
                                    comp.nugget))
        if ok:
            fits.append(raw[-1])
        else:
            warnings.warn(
                f"Local covariance fit did not converge at center {j} {tuple(center)}; "
                f"using neighbor-averaged parameters.", WindEsnWarning, stacklevel=2, )
            fits.append(None)

    good = [c for c in fits if c is not None]
    if not good:
        warnings.warn("No local covariance fit converged; keeping the unconverged estimates.",
                      WindEsnWarning, stacklevel=2)
        return CovarianceModel(tuple(raw), bandwidth)
    if len(good) < len(fits):
        donor = CovarianceModel(tuple(good), bandwidth)
        for j, comp in enumerate(fits):
            if comp is None:
                p = donor.parameter_fields(centers[j:j + 1])
                fits[j] = MixtureComponent(centers[j], p["sill"][0], p["smoothness"][0],
                                           p["kernel"][0], p["nugget"][0])
    return CovarianceModel(tuple(fits), bandwidth)


# ===================================================================
# Kriging
# ===================================================================

@dataclass(frozen=True)
class KrigingWeights:
    """Simple-kriging weights K^f K^{-1}, shape (n, n*)."""
    matrix: np.ndarray

    def apply(self, knot_values: np.ndarray) -> np.ndarray:
        """Map knot values (..., n*) to all locations (..., n)."""
        return np.asarray(knot_values, dtype=float) @ self.matrix.T


def kriging_weights(all_coords: np.ndarray, knots: KnotSet,
                    model: CovarianceModel) -> KrigingWeights:
    """Weights mapping knot residuals to the simple-kriging mean at every location."""
    all_coords = np.asarray(all_coords, dtype=float).reshape(-1, 2)
    knots.validate_for(all_coords.shape[0])
    knot_coords = all_coords[list(knots.indices)]
    K = covariance_matrix(knot_coords, knot_coords, model)
    Kf = covariance_matrix(all_coords, knot_coords, model)

    scale = float(np.mean(np.diag(K)))
    jitter = 0.0
    for attempt in range(_JITTER_RETRIES + 1):
        try:
            factor = linalg.cho_factor(K + jitter * np.eye(K.shape[0]), lower=True)
            break
        except linalg.LinAlgError:
            jitter = scale * 1e-10 if attempt == 0 else jitter * 10.0
    else:
        i, j = _closest_pair(knot_coords)
        raise NumericError(
            f"Knot covariance is singular; knots {knots.indices[i]} and {knots.indices[j]} "
            f"are nearly duplicate."
        )
    if jitter:
        warnings.warn(f"Knot covariance needed diagonal jitter {jitter:.3g}.", WindEsnWarning,
                      stacklevel=2)
    return KrigingWeights(matrix=linalg.cho_solve(factor, Kf.T).T)


def kriging_cache_key(all_coords: np.ndarray, knots: KnotSet, model: CovarianceModel) -> str:
    """SHA-256 over locations, knot indices and model parameters."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(all_coords, dtype="<f8").tobytes())
    h.update(np.asarray(knots.indices, dtype="<i8").tobytes())
    h.update(np.asarray([model.bandwidth], dtype="<f8").tobytes())
    for c in model.components:
        h.update(np.concatenate([c.center, [c.sill, c.smoothness, c.nugget],
                                 c.kernel.ravel()]).astype("<f8").tobytes())
    return h.hexdigest()


def cached_kriging_weights(all_coords: np.ndarray, knots: KnotSet, model: CovarianceModel,
                           cache_dir: Optional[Path]) -> KrigingWeights:
    """:func:`kriging_weights` with an optional on-disk cache of the weight matrix."""
    if cache_dir is None:
        return kriging_weights(all_coords, knots, model)
    cache_dir = Path(cache_dir)
    path = cache_dir / f"kriging_{kriging_cache_key(all_coords, knots, model)[:16]}.npy"
    if path.exists():
        return KrigingWeights(matrix=np.load(path))
    weights = kriging_weights(all_coords, knots, model)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.save(path, weights.matrix)
    return weights


def _det2(m: np.ndarray) -> np.ndarray:
    return m[..., 0, 0] * m[..., 1, 1] - m[..., 0, 1] * m[..., 1, 0]


def _check_spd(m: np.ndarray, name: str) -> np.ndarray:
    if m.shape != (2, 2) or not np.all(np.isfinite(m)):
        raise DomainError(f"{name} must be a finite 2x2 matrix.")
    if abs(m[0, 1] - m[1, 0]) > 1e-12 * max(1.0, float(np.abs(m).max())):
        raise DomainError(f"{name} must be symmetric.")
    m = 0.5 * (m + m.T)
    if np.any(np.linalg.eigvalsh(m) <= 0):
        raise DomainError(f"{name} must be positive definite.")
    return m


def _closest_pair(coords: np.ndarray) -> tuple[int, int]:
    d = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
    np.fill_diagonal(d, np.inf)
    i, j = np.unravel_index(np.argmin(d), d.shape)
    return int(min(i, j)), int(max(i, j))
