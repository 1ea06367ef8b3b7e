"""Comparison forecasters: persistence, per-site ARIMA, VAR and EOF-projected ESN.

Every method exposes a ``rolling_*`` function with the same contract as
``forecast.rolling_forecasts`` so it can be laid onto the evaluation grid by
``forecast.target_grid``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import itertools
from typing import Dict, Iterable, List, Optional, Sequence, Tuple
import warnings

import numpy as np
from scipy import linalg, optimize
from scipy.signal import lfilter

from WindESN.errors import ConfigurationError, FitFailureError, InsufficientDataError, \
    InsufficientHistoryError, InvalidDataError, SchemaError, SingularDesignError, \
    WindEsnWarning
from WindESN.esn import EsnSpec
from WindESN.forecast import HORIZONS, ForecastEnsemble, horizon_mse, run_ensemble, target_grid
from WindESN.parallel import parallel_map

METHODS = ("persistence", "arima", "var", "eof-esn")

# Roots of the AR polynomial are pulled back to this modulus when non-causal
CAUSAL_RADIUS = 0.99
LSTSQ_RETRIES = 10


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def persistence(history: np.ndarray, horizons: Sequence[int] = HORIZONS) -> np.ndarray:
    """The last observation repeated for every horizon: shape (H, n*)."""
    Y = _as_matrix(history)
    if Y.shape[0] == 0:
        raise InsufficientHistoryError("Persistence needs at least one observation.")
    return np.repeat(Y[-1][None, :], len(horizons), axis=0)


def rolling_persistence(series: np.ndarray, first_origin: int, last_origin: int,
                        horizons: Sequence[int] = HORIZONS) -> Dict[int, np.ndarray]:
    Y = _as_matrix(series)
    last = Y[first_origin:last_origin + 1]
    return {h: last.copy() for h in horizons}


# ---------------------------------------------------------------------------
# ARIMA
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ArimaModel:
    """ARIMA(p, d, q) fitted to one series.

    The differenced series z follows
    z_t = c + sum_i ar[i] z_{t-1-i} + e_t + sum_j ma[j] e_{t-1-j}.
    A constant is only estimated when d = 0.
    """
    order: Tuple[int, int, int]
    constant: float
    ar: np.ndarray
    ma: np.ndarray
    sigma2: float

    def __post_init__(self):
        p, d, q = self.order
        if min(p, d, q) < 0:
            raise ConfigurationError(f"ARIMA orders must be >= 0, got {self.order}.")
        if len(self.ar) != p or len(self.ma) != q:
            raise SchemaError(
                f"ARIMA{self.order} has {len(self.ar)} AR and {len(self.ma)} MA coefficients."
            )

    @property
    def is_causal(self) -> bool:
        return _is_stable(self.ar)


def fit_arima(series: Sequence[float], p: int, d: int, q: int, *, warn: bool = True
              ) -> ArimaModel:
    """Hannan–Rissanen two-stage least squares, refined by conditional sum of squares.

    Raises:
        InsufficientDataError: If the series is shorter than 10 (p + q + 1).
        FitFailureError: If the AR part cannot be made causal.
    """
    y = np.asarray(series, dtype=float).ravel()
    if not np.all(np.isfinite(y)):
        raise InvalidDataError("ARIMA input contains non-finite values.")
    if d not in (0, 1, 2):
        raise ConfigurationError(f"ARIMA differencing order must be 0, 1 or 2, got {d}.")
    if p < 0 or q < 0:
        raise ConfigurationError(f"ARIMA orders must be >= 0, got ({p}, {d}, {q}).")
    if y.size < 10 * (p + q + 1):
        raise InsufficientDataError(
            f"ARIMA({p}, {d}, {q}) needs at least {10 * (p + q + 1)} points, got {y.size}."
        )
    z = np.diff(y, n=d) if d else y
    with_constant = d == 0

    if p == 0 and q == 0:
        c = float(z.mean()) if with_constant else 0.0
        resid = z - c
        return ArimaModel((p, d, q), c, np.zeros(0), np.zeros(0), float(np.mean(resid ** 2)))

    c, ar, ma = _hannan_rissanen(z, p, q, with_constant)
    if q > 0:
        c, ar, ma = _css_refine(z, c, ar, ma, with_constant)

    if not _is_stable(ar):
        if warn:
            warnings.warn(
                f"ARIMA({p}, {d}, {q}) fit is not causal; projecting AR roots inside radius "
                f"{CAUSAL_RADIUS}.", WindEsnWarning, stacklevel=2, )
        ar = _project_stable(ar)
        if not _is_stable(ar):
            raise FitFailureError(f"ARIMA({p}, {d}, {q}) could not be made causal.")
        if with_constant:
            c = float(np.mean(_ar_filtered(z, 0.0, ar)))
    if q > 0 and not _is_stable(-ma):
        ma = -_project_stable(-ma)

    resid = css_residuals(z, c, ar, ma)[p:]
    return ArimaModel((p, d, q), float(c), ar, ma, float(np.mean(resid ** 2)))


def css_residuals(z: np.ndarray, c: float, ar: np.ndarray, ma: np.ndarray) -> np.ndarray:
    """Conditional residuals of the differenced series; the first p entries are 0."""
    p = len(ar)
    v = _ar_filtered(z, c, ar)
    e = lfilter([1.0], np.r_[1.0, ma], v) if len(ma) else v
    return np.r_[np.zeros(p), e]


def forecast_arima(model: ArimaModel, history: Sequence[float],
                   horizons: Sequence[int] = HORIZONS) -> np.ndarray:
    """Recursive mean forecasts with future innovations 0, integrated back d times."""
    y = np.asarray(history, dtype=float).ravel()
    preds = rolling_arima(model, y, y.size - 1, y.size - 1, horizons)
    return np.array([preds[h][0] for h in horizons])


def rolling_arima(model: ArimaModel, series: Sequence[float], first_origin: int,
                  last_origin: int, horizons: Sequence[int] = HORIZONS
                  ) -> Dict[int, np.ndarray]:
    """Forecasts from every origin in [first_origin, last_origin] using fixed parameters."""
    y = np.asarray(series, dtype=float).ravel()
    p, d, q = model.order
    need = d + max(p, q, 1) - 1
    if first_origin < need:
        raise InsufficientHistoryError(
            f"ARIMA{model.order} needs origins >= {need}, got {first_origin}."
        )
    if last_origin >= y.size:
        raise SchemaError(f"Origin {last_origin} is past the end of a series of length {y.size}.")

    levels = [np.diff(y, n=lvl) if lvl else y for lvl in range(d + 1)]
    z = levels[d]
    e = css_residuals(z, model.constant, model.ar, model.ma)
    s = np.arange(first_origin, last_origin + 1) - d
    K = max(horizons)
    zhat = np.zeros((s.size, K))
    for k in range(1, K + 1):
        acc = np.full(s.size, model.constant)
        for i, psi in enumerate(model.ar, start=1):
            ahead = k - i
            acc += psi * (zhat[:, ahead - 1] if ahead > 0 else z[s + ahead])
        for j, theta in enumerate(model.ma, start=1):
            ahead = k - j
            if ahead <= 0:
                acc += theta * e[s + ahead]
        zhat[:, k - 1] = acc
    fc = zhat
    for lvl in range(d - 1, -1, -1):
        fc = levels[lvl][s + d - lvl][:, None] + np.cumsum(fc, axis=1)
    return {h: fc[:, h - 1] for h in horizons}


def arima_order_grid(p_values: Iterable[int] = range(4), d_values: Iterable[int] = (0, 1),
                     q_values: Iterable[int] = range(4)) -> List[Tuple[int, int, int]]:
    return [(p, d, q) for p, d, q in itertools.product(p_values, d_values, q_values)]


def select_arima_order(train: Sequence[float], validation: Sequence[float],
                       orders: Optional[Sequence[Tuple[int, int, int]]] = None
                       ) -> Tuple[ArimaModel, float]:
    """Fit every order on ``train``; keep the one with the lowest horizon-1 validation MSE.

    Orders that cannot be fitted are skipped; ties keep the earlier order.
    """
    train = np.asarray(train, dtype=float).ravel()
    validation = np.asarray(validation, dtype=float).ravel()
    full = np.r_[train, validation]
    T = train.size - 1
    best: Optional[Tuple[ArimaModel, float]] = None
    for order in orders or arima_order_grid():
        try:
            model = fit_arima(train, *order, warn=False)
            grid = target_grid(lambda s, a, b, hs: _column(rolling_arima(model, s[:, 0], a, b, hs)),
                               full, T, (1,))
        except (InsufficientDataError, InsufficientHistoryError, FitFailureError):
            continue
        score = float(horizon_mse(validation[:, None], grid)[0])
        if np.isfinite(score) and (best is None or score < best[1]):
            best = (model, score)
    if best is None:
        raise FitFailureError("No ARIMA order in the grid could be fitted.")
    return best


def fit_arima_sites(train: np.ndarray, validation: Optional[np.ndarray] = None,
                    orders: Optional[Sequence[Tuple[int, int, int]]] = None,
                    threads: Optional[int] = None) -> List[ArimaModel]:
    """One ARIMA per column; orders are selected on ``validation`` when it is given."""
    train = _as_matrix(train)
    cols = range(train.shape[1])
    if validation is None:
        order = (orders or [(1, 0, 0)])[0]
        return parallel_map(lambda j: fit_arima(train[:, j], *order), cols, threads,
                            desc="   ARIMA", unit="site")
    validation = _as_matrix(validation)
    return parallel_map(lambda j: select_arima_order(train[:, j], validation[:, j], orders)[0],
                        cols, threads, desc="   ARIMA", unit="site")


def rolling_arima_sites(models: Sequence[ArimaModel], series: np.ndarray, first_origin: int,
                        last_origin: int, horizons: Sequence[int] = HORIZONS
                        ) -> Dict[int, np.ndarray]:
    Y = _as_matrix(series)
    if len(models) != Y.shape[1]:
        raise SchemaError(f"{len(models)} ARIMA models for {Y.shape[1]} series.")
    per_site = [rolling_arima(m, Y[:, j], first_origin, last_origin, horizons)
                for j, m in enumerate(models)]
    return {h: np.column_stack([site[h] for site in per_site]) for h in horizons}


# ---------------------------------------------------------------------------
# VAR
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VarModel:
    """y_t = intercept + sum_k coefs[k] y_{t-1-k} + e_t."""
    intercept: np.ndarray
    coefs: np.ndarray

    def __post_init__(self):
        n = self.intercept.shape[0]
        if self.coefs.ndim != 3 or self.coefs.shape[1:] != (n, n):
            raise SchemaError(
                f"VAR coefficients {self.coefs.shape} do not match {n} series."
            )

    @property
    def order(self) -> int:
        return self.coefs.shape[0]


def fit_var(series: np.ndarray, p: int) -> VarModel:
    """Multivariate least squares on stacked lags, with diagonal jitter if singular."""
    Y = _as_matrix(series)
    if not np.all(np.isfinite(Y)):
        raise InvalidDataError("VAR input contains non-finite values.")
    if p < 1:
        raise ConfigurationError(f"VAR order must be >= 1, got {p}.")
    T, n = Y.shape
    if T - p <= n * p + 1:
        raise InsufficientDataError(
            f"VAR({p}) on {n} series needs more than {n * p + 1 + p} points, got {T}."
        )
    X = np.hstack([np.ones((T - p, 1))] + [Y[p - k:T - k] for k in range(1, p + 1)])
    B = _least_squares(X, Y[p:])
    coefs = np.stack([B[1 + k * n:1 + (k + 1) * n].T for k in range(p)])
    return VarModel(intercept=B[0].copy(), coefs=coefs)


def forecast_var(model: VarModel, history: np.ndarray,
                 horizons: Sequence[int] = HORIZONS) -> np.ndarray:
    """Recursive mean forecasts: shape (H, n)."""
    Y = _as_matrix(history)
    preds = rolling_var(model, Y, Y.shape[0] - 1, Y.shape[0] - 1, horizons)
    return np.stack([preds[h][0] for h in horizons])


def rolling_var(model: VarModel, series: np.ndarray, first_origin: int, last_origin: int,
                horizons: Sequence[int] = HORIZONS) -> Dict[int, np.ndarray]:
    Y = _as_matrix(series)
    p = model.order
    if first_origin < p - 1:
        raise InsufficientHistoryError(f"VAR({p}) needs origins >= {p - 1}, got {first_origin}.")
    if Y.shape[1] != model.intercept.size:
        raise SchemaError(f"VAR fitted on {model.intercept.size} series, got {Y.shape[1]}.")
    t = np.arange(first_origin, last_origin + 1)
    K = max(horizons)
    preds: List[np.ndarray] = []
    for k in range(1, K + 1):
        acc = np.tile(model.intercept, (t.size, 1))
        for lag in range(1, p + 1):
            ahead = k - lag
            prev = preds[ahead - 1] if ahead > 0 else Y[t + ahead]
            acc += prev @ model.coefs[lag - 1].T
        preds.append(acc)
    return {h: preds[h - 1] for h in horizons}


def select_var_order(train: np.ndarray, validation: np.ndarray,
                     orders: Iterable[int] = (1, 2, 3)) -> Tuple[VarModel, float]:
    """VAR order with the lowest horizon-1 validation MSE."""
    train = _as_matrix(train)
    validation = _as_matrix(validation)
    full = np.vstack([train, validation])
    best: Optional[Tuple[VarModel, float]] = None
    for p in orders:
        try:
            model = fit_var(train, p)
        except InsufficientDataError:
            continue
        grid = target_grid(lambda s, a, b, hs: rolling_var(model, s, a, b, hs),
                           full, train.shape[0] - 1, (1,))
        score = float(horizon_mse(validation, grid)[0])
        if best is None or score < best[1]:
            best = (model, score)
    if best is None:
        raise FitFailureError("No VAR order could be fitted on the training window.")
    return best


# ---------------------------------------------------------------------------
# EOF projection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EofBasis:
    """Leading eigenvectors (rows of ``eofs``) of the training spatial covariance."""
    eofs: np.ndarray
    eigenvalues: np.ndarray

    @property
    def n_eof(self) -> int:
        return self.eofs.shape[0]

    @property
    def n_locations(self) -> int:
        return self.eofs.shape[1]

    def variance_fraction(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        return self.eigenvalues / total if total > 0 else np.zeros_like(self.eigenvalues)


def fit_eof(field: np.ndarray, n_eof: int) -> EofBasis:
    """Eigen-decomposition of Y^T Y / (T - 1), solved in the smaller of the two dimensions.

    The field is not centered; residual fields are zero mean already.
    """
    Y = _as_matrix(field)
    T, n = Y.shape
    if not 1 <= n_eof <= min(T, n):
        raise ConfigurationError(f"n_eof must be in [1, {min(T, n)}], got {n_eof}.")
    scale = max(T - 1, 1)
    if n <= T:
        vals, vecs = linalg.eigh(Y.T @ Y / scale)
        order = np.argsort(vals)[::-1][:n_eof]
        vals, eofs = vals[order], vecs[:, order].T
    else:
        # Gram trick: eigenvectors of Y Y^T map to those of Y^T Y through Y^T
        vals, vecs = linalg.eigh(Y @ Y.T / scale)
        order = np.argsort(vals)[::-1][:n_eof]
        vals = vals[order]
        eofs = (Y.T @ vecs[:, order]).T
        norms = np.linalg.norm(eofs, axis=1)
        if np.any(norms < 1e-12):
            k = int(np.argmax(norms < 1e-12))
            raise SingularDesignError(f"EOF {k} has zero variance; lower n_eof below {k + 1}.")
        eofs = eofs / norms[:, None]
    # largest-magnitude entry positive
    flip = np.sign(eofs[np.arange(n_eof), np.argmax(np.abs(eofs), axis=1)])
    eofs = eofs * np.where(flip == 0, 1.0, flip)[:, None]
    return EofBasis(eofs=eofs, eigenvalues=np.clip(vals, 0.0, None))


def eof_project(field: np.ndarray, basis: EofBasis) -> np.ndarray:
    Y = _as_matrix(field)
    if Y.shape[1] != basis.n_locations:
        raise SchemaError(f"Field has {Y.shape[1]} locations, basis has {basis.n_locations}.")
    return Y @ basis.eofs.T


def eof_reconstruct(coefficients: np.ndarray, basis: EofBasis) -> np.ndarray:
    return np.asarray(coefficients, dtype=float) @ basis.eofs


def eof_esn(spec: EsnSpec, member_count: int, train: np.ndarray, evaluation: np.ndarray,
            n_eof: int, *, horizons: Sequence[int] = HORIZONS, start: int = 0,
            threads: Optional[int] = None) -> Tuple[ForecastEnsemble, EofBasis]:
    """ESN ensemble on EOF coefficients, projected back onto every location.

    The returned ensemble holds coefficient forecasts in ``mean`` and the
    full-field forecasts in ``reconstructed``.
    """
    basis = fit_eof(train, n_eof)
    ensemble = run_ensemble(spec, member_count, eof_project(train, basis),
                            eof_project(evaluation, basis), horizons=horizons, start=start,
                            keep_members=False, threads=threads)
    return replace(ensemble, reconstructed=eof_reconstruct(ensemble.mean, basis)), basis


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _as_matrix(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return values.reshape(-1, 1) if values.ndim == 1 else values


def _column(preds: Dict[int, np.ndarray]) -> Dict[int, np.ndarray]:
    return {h: v.reshape(-1, 1) for h, v in preds.items()}


def _ar_filtered(z: np.ndarray, c: float, ar: np.ndarray) -> np.ndarray:
    """v_t = z_t - c - sum_i ar[i] z_{t-1-i} for t = p..len(z)-1."""
    p = len(ar)
    v = z[p:] - c
    for i, psi in enumerate(ar, start=1):
        v = v - psi * z[p - i:z.size - i]
    return v


def _lagmat(x: np.ndarray, lags: int, start: int) -> np.ndarray:
    """Columns x_{t-1}, .., x_{t-lags} for t = start..len(x)-1."""
    return np.column_stack([x[start - k:x.size - k] for k in range(1, lags + 1)]) \
        if lags else np.zeros((x.size - start, 0))


def _hannan_rissanen(z: np.ndarray, p: int, q: int, with_constant: bool
                     ) -> Tuple[float, np.ndarray, np.ndarray]:
    n = z.size
    if q == 0:
        X = _lagmat(z, p, p)
        if with_constant:
            X = np.hstack([np.ones((X.shape[0], 1)), X])
        beta = _least_squares(X, z[p:, None])[:, 0]
        c = float(beta[0]) if with_constant else 0.0
        return c, beta[int(with_constant):], np.zeros(0)

    # long autoregression for innovation estimates
    k = int(max(np.floor(np.log(n) ** 2), 2 * max(p, q)))
    k = min(k, max(n // 4, max(p, q) + 1))
    Xl = _lagmat(z, k, k)
    if with_constant:
        Xl = np.hstack([np.ones((Xl.shape[0], 1)), Xl])
    beta = _least_squares(Xl, z[k:, None])[:, 0]
    resid = np.r_[np.zeros(k), z[k:] - Xl @ beta]

    start = k + q
    X = np.hstack([_lagmat(z, p, start)[:, :p] if p else np.zeros((n - start, 0)),
                   _lagmat(resid, q, start)])
    if with_constant:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
    beta = _least_squares(X, z[start:, None])[:, 0]
    off = int(with_constant)
    c = float(beta[0]) if with_constant else 0.0
    return c, beta[off:off + p], beta[off + p:off + p + q]


def _css_refine(z: np.ndarray, c: float, ar: np.ndarray, ma: np.ndarray, with_constant: bool
                ) -> Tuple[float, np.ndarray, np.ndarray]:
    p, q = len(ar), len(ma)

    def unpack(theta):
        off = int(with_constant)
        return (theta[0] if with_constant else 0.0), theta[off:off + p], theta[off + p:]

    def ssr(theta):
        cc, a, m = unpack(theta)
        if not _is_stable(-m):
            return 1e300
        e = css_residuals(z, cc, a, m)[p:]
        val = float(e @ e)
        return val if np.isfinite(val) else 1e300

    x0 = np.r_[[c] if with_constant else [], ar, ma]
    start = ssr(x0)
    res = optimize.minimize(ssr, x0, method="Nelder-Mead",
                            options={"maxiter": 2000 * x0.size, "xatol": 1e-8, "fatol": 1e-10})
    if res.fun < start:
        cc, a, m = unpack(res.x)
        return float(cc), np.asarray(a, dtype=float), np.asarray(m, dtype=float)
    return c, ar, ma


def _is_stable(coefs: np.ndarray) -> bool:
    """Roots of 1 - sum_i coefs[i] L^{i+1} lie outside the unit circle."""
    coefs = np.asarray(coefs, dtype=float)
    if coefs.size == 0:
        return True
    # companion eigenvalues are the inverse roots
    return bool(np.all(np.abs(np.roots(np.r_[1.0, -coefs])) < 1.0))


def _project_stable(coefs: np.ndarray) -> np.ndarray:
    inv_roots = np.roots(np.r_[1.0, -np.asarray(coefs, dtype=float)])
    mod = np.abs(inv_roots)
    inv_roots = np.where(mod >= 1.0, CAUSAL_RADIUS * inv_roots / np.maximum(mod, 1e-300),
                         inv_roots)
    poly = np.real(np.poly(inv_roots))
    return -poly[1:]


def _least_squares(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Normal-equation solve with growing diagonal jitter when X^T X is singular."""
    gram = X.T @ X
    rhs = X.T @ Y
    base = max(float(np.trace(gram)) / max(gram.shape[0], 1), 1.0) * 1e-12
    jitter = 0.0
    for attempt in range(LSTSQ_RETRIES + 1):
        try:
            factor = linalg.cho_factor(gram + jitter * np.eye(gram.shape[0]))
            if jitter:
                warnings.warn(f"Least-squares design needed diagonal jitter {jitter:.3g}.",
                              WindEsnWarning, stacklevel=3, )
            return linalg.cho_solve(factor, rhs)
        except linalg.LinAlgError:
            jitter = base if attempt == 0 else jitter * 10.0
    raise SingularDesignError("Least-squares design is singular even after diagonal jitter.")
