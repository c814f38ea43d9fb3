"""First stage: Poisson quasi-likelihood for annual launch totals with a ridge penalty.

Coefficients are estimated on standardized covariates (non-intercept columns centered
and scaled to unit variance); the intercept is never penalized. The penalty weight is
chosen by k-fold cross-validation on out-of-fold Poisson deviance.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .core import InputError
from .optimize import maximize_concave

logger = logging.getLogger(__name__)

ECON_CATEGORIES = (
    "insurance_premiums", "commercial_satellite_launch", "commercial_satellite_manufacturing",
    "direct_to_home_tv", "satellite_communications", "satellite_radio", "earth_observation",
    "infrastructure", "us_government", "non_us_governments",
)
COVARIATES = ECON_CATEGORIES + ("mean_utility", "mean_collision_rate")
N_COEF = len(COVARIATES) + 1
MAX_LINEAR_PREDICTOR = 700.0
DEFAULT_LAMBDA_GRID = tuple(np.logspace(-4, 4, 50))


@dataclass(frozen=True)
class CountObservation:
    group: str
    year: int
    launches: float
    covariates: tuple  # the 12 named covariates, intercept implicit

    def __post_init__(self):
        if len(self.covariates) != len(COVARIATES):
            raise InputError(f"expected {len(COVARIATES)} covariates, got {len(self.covariates)}")
        if not np.isfinite(self.launches) or self.launches < 0:
            raise InputError(f"launch count must be non-negative, got {self.launches}")

    @property
    def Z(self) -> np.ndarray:
        return np.concatenate([[1.0], np.asarray(self.covariates, dtype=float)])


def design(data):
    """Stack observations into ``(Z, N, years)`` with a leading intercept column."""
    data = list(data)
    if not data:
        raise InputError("no count observations")
    Z = np.array([obs.Z for obs in data])
    N = np.array([obs.launches for obs in data], dtype=float)
    years = np.array([obs.year for obs in data])
    return Z, N, years


@dataclass
class CountModelParams:
    omega: np.ndarray
    lam: float = 0.0
    means: np.ndarray = field(default_factory=lambda: np.zeros(N_COEF - 1))
    scales: np.ndarray = field(default_factory=lambda: np.ones(N_COEF - 1))
    operator: str | None = None
    cv_table: list = field(default_factory=list)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.means = np.asarray(self.means, dtype=float)
        self.scales = np.asarray(self.scales, dtype=float)
        p = self.omega.size
        if self.means.shape != (p - 1,) or self.scales.shape != (p - 1,):
            raise InputError("standardization does not match the coefficient vector")
        if not np.all(np.isfinite(self.omega)):
            raise InputError("non-finite count-model coefficients")
        if self.lam < 0:
            raise InputError("ridge penalty must be non-negative")
        if np.any(self.scales <= 0):
            raise InputError("standardization scales must be positive")

    def standardize(self, Z):
        Z = np.array(Z, dtype=float)
        if Z.shape[-1] != self.omega.size:
            raise InputError(f"covariate vector has {Z.shape[-1]} entries, expected {self.omega.size}")
        Z[..., 1:] = (Z[..., 1:] - self.means) / self.scales
        return Z

    def raw_coefficients(self) -> np.ndarray:
        """Coefficients acting on unstandardized covariates."""
        raw = np.empty_like(self.omega)
        raw[1:] = self.omega[1:] / self.scales
        raw[0] = self.omega[0] - np.sum(raw[1:] * self.means)
        return raw

    def to_json(self):
        return {"operator": self.operator, "omega": self.omega.tolist(), "lambda": self.lam,
                "means": self.means.tolist(), "scales": self.scales.tolist(),
                "covariates": ["intercept", *COVARIATES], "cv_table": self.cv_table}

    @classmethod
    def from_json(cls, d):
        return cls(omega=d["omega"], lam=d["lambda"], means=d["means"], scales=d["scales"],
                   operator=d.get("operator"), cv_table=d.get("cv_table", []))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _linear_predictor(Z, omega):
    eta = Z @ omega
    if np.any(eta > MAX_LINEAR_PREDICTOR):
        raise OverflowError(f"linear predictor {np.max(eta):.1f} exceeds {MAX_LINEAR_PREDICTOR}")
    return eta


def poisson_mean(params: CountModelParams, Z) -> float | np.ndarray:
    """Conditional mean ``exp(Z @ omega)`` for a raw covariate vector with leading 1."""
    eta = _linear_predictor(params.standardize(Z), params.omega)
    return np.exp(eta) if np.ndim(eta) else float(np.exp(eta))


def predict_launch_total(params: CountModelParams, Z, draw=False, rng=None):
    mean = poisson_mean(params, Z)
    if not draw:
        return mean
    if rng is None:
        raise ValueError("a seeded generator is required for draw mode")
    return rng.poisson(mean)


def _penalty_mask(p):
    mask = np.ones(p)
    mask[0] = 0.0
    return mask


def penalized_objective(omega, data, lam) -> float:
    """``sum(N * eta - exp(eta)) - lam * sum(omega[1:]**2)`` with ``eta = Z @ omega``.

    ``data`` is a sequence of :class:`CountObservation` or a ``(Z, N)`` pair.
    """
    return _objective(np.asarray(omega, dtype=float), *_zn(data), lam)[0]


def penalized_gradient(omega, data, lam) -> np.ndarray:
    return _objective(np.asarray(omega, dtype=float), *_zn(data), lam)[1]


def _zn(data):
    if isinstance(data, tuple) and len(data) == 2:
        return np.asarray(data[0], dtype=float), np.asarray(data[1], dtype=float)
    Z, N, _ = design(data)
    return Z, N


def _objective(omega, Z, N, lam):
    eta = _linear_predictor(Z, omega)
    mu = np.exp(eta)
    mask = _penalty_mask(omega.size)
    value = float(N @ eta - mu.sum() - lam * np.sum(mask * omega**2))
    grad = Z.T @ (N - mu) - 2.0 * lam * mask * omega
    return value, grad


def poisson_deviance(N, mu) -> float:
    N = np.asarray(N, dtype=float)
    mu = np.asarray(mu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(N > 0, N * np.log(N / mu), 0.0)
    return float(2.0 * np.sum(term - (N - mu)))


def standardization(Z):
    means = Z[:, 1:].mean(axis=0)
    scales = Z[:, 1:].std(axis=0)
    scales = np.where(scales > 0, scales, 1.0)
    return means, scales


def fit_ridge(Z, N, lam, grad_tol=1e-8, max_iter=500, x0=None) -> np.ndarray:
    """Maximize the penalized objective on an already-prepared design."""
    Z = np.asarray(Z, dtype=float)
    N = np.asarray(N, dtype=float)
    if N.sum() <= 0:
        raise InputError("all launch counts are zero; intercept is unidentified")
    mask = _penalty_mask(Z.shape[1])
    if x0 is None:
        x0 = np.zeros(Z.shape[1])
        x0[0] = np.log(N.mean())

    def fun(w):
        try:
            return _objective(w, Z, N, lam)
        except OverflowError:
            return -np.inf, np.zeros_like(w)

    def hess(w):
        mu = np.exp(Z @ w)
        return -(Z.T * mu) @ Z - 2.0 * lam * np.diag(mask)

    return maximize_concave(fun, x0, hess, grad_tol=grad_tol, max_iter=max_iter)[0]


def make_folds(years, k, mode="contiguous", seed=0):
    """Index arrays of the held-out rows for each fold."""
    order = np.argsort(years, kind="stable")
    if mode == "random":
        order = np.random.default_rng(seed).permutation(len(years))
    elif mode != "contiguous":
        raise InputError(f"unknown fold mode {mode!r}")
    return [np.sort(f) for f in np.array_split(order, k)]


def fit_count_model(data, lambda_grid=DEFAULT_LAMBDA_GRID, k_folds=5, max_iter=500,
                    grad_tol=1e-8, fold_mode="contiguous", seed=0, operator=None) -> CountModelParams:
    """Cross-validated Poisson ridge fit.

    Every penalty on the grid is scored by mean out-of-fold deviance, standardizing on
    each training split. The smallest penalty attaining the minimum wins. The final model
    is refit on all rows; the full-data coefficient norm at each grid point is kept in
    ``cv_table`` alongside the deviance.
    """
    Z, N, years = design(data) if not isinstance(data, tuple) else data
    Z = np.asarray(Z, dtype=float)
    N = np.asarray(N, dtype=float)
    n = len(N)
    if n < k_folds:
        raise InputError(f"{n} observations cannot be split into {k_folds} folds")
    grid = np.sort(np.asarray(lambda_grid, dtype=float))
    if np.any(grid < 0):
        raise InputError("penalties must be non-negative")
    folds = make_folds(np.asarray(years), k_folds, fold_mode, seed) if k_folds > 1 else []

    cv = np.zeros(grid.size)
    for f in folds:
        train = np.setdiff1d(np.arange(n), f)
        means, scales = standardization(Z[train])
        Zt = Z.copy()
        Zt[:, 1:] = (Z[:, 1:] - means) / scales
        w = None
        for i, lam in enumerate(grid):
            w = fit_ridge(Zt[train], N[train], lam, grad_tol, max_iter, x0=w)
            eta = Zt[f] @ w
            if np.any(eta > MAX_LINEAR_PREDICTOR):
                cv[i] = np.inf
            else:
                cv[i] += poisson_deviance(N[f], np.exp(eta)) / len(folds)
    best = int(np.argmin(cv)) if folds else 0

    means, scales = standardization(Z)
    Zs = Z.copy()
    Zs[:, 1:] = (Z[:, 1:] - means) / scales
    path = []
    w = None
    for lam in grid:
        w = fit_ridge(Zs, N, lam, grad_tol, max_iter, x0=w)
        path.append(w)
    omega = path[best]
    table = [{"lambda": float(lam), "cv_deviance": float(cv[i]),
              "coef_norm": float(np.linalg.norm(path[i][1:]))} for i, lam in enumerate(grid)]
    logger.info("selected lambda=%.4g for %s", grid[best], operator)
    return CountModelParams(omega=omega, lam=float(grid[best]), means=means, scales=scales,
                            operator=operator, cv_table=table)
