"""Second stage: multinomial-logit choice of orbital shell.

Utility of shell j for one operator type is ``asc[j] + X[j] @ beta + access_cost[j] * gamma``
with attributes ``X = (civil, commercial, defense, other payloads, total collision rate)``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .core import MU_EARTH, InputError, ShellGrid
from .optimize import ConvergenceError, maximize_concave

ATTRIBUTES = ("civil_payloads", "commercial_payloads", "defense_payloads",
              "other_payloads", "collision_rate")
N_ATTR = len(ATTRIBUTES)

# Published point estimates: (civil, commercial, defense, other payloads, collision rate), access cost.
PUBLISHED_ESTIMATES = {
    "commercial": dict(beta=(-0.006, 0.015, -0.021, -0.001, -0.003), gamma=-0.017,
                       n_obs=574, log_likelihood=-1210.0),
    "civil": dict(beta=(0.017, 0.016, 0.003, 0.011, -0.013), gamma=-0.019,
                  n_obs=1171, log_likelihood=-2833.0),
    "defense": dict(beta=(0.065, 0.014, 0.011, 0.053, -0.052), gamma=-0.022,
                    n_obs=463, log_likelihood=-963.0),
}

MAX_UTILITY_SPREAD = 700.0


class SeparationError(RuntimeError):
    pass


def energy_proxy(grid: ShellGrid, mu=MU_EARTH) -> np.ndarray:
    """Specific energy (GJ/tonne) of a circular orbit at each shell midpoint, from surface rest."""
    r = grid.earth_radius + grid.midpoints
    R = grid.earth_radius
    # 1 km^2/s^2 == 1 MJ/kg == 1 GJ/tonne
    return mu / (2.0 * r) + mu * (1.0 / R - 1.0 / r)


def access_costs(price, grid: ShellGrid, energy_table=None) -> np.ndarray:
    """Access cost (million $-GJ) of every shell at launch price ``price`` (million USD)."""
    if not np.isfinite(price) or price <= 0:
        raise InputError(f"launch price must be positive, got {price}")
    energy = energy_proxy(grid) if energy_table is None else np.asarray(energy_table, dtype=float)
    if energy.shape != (grid.n_shells,):
        raise InputError("energy table must have one entry per shell")
    return price * energy


def access_cost(price, shell: int, grid: ShellGrid, energy_table=None) -> float:
    grid._check(shell)
    return float(access_costs(price, grid, energy_table)[shell])


@dataclass(frozen=True, eq=False)
class ShellCharacteristics:
    """Per-shell attributes ``X`` (n_shells, 5) and access costs (n_shells,) for one operator-year."""

    X: np.ndarray
    access_cost: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        ac = np.asarray(self.access_cost, dtype=float)
        if X.ndim != 2 or X.shape[1] != N_ATTR or ac.shape != (X.shape[0],):
            raise InputError("characteristics must be (n_shells, 5) with one access cost per shell")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(ac))):
            raise InputError("characteristics contain non-finite values")
        if np.any(X < 0):
            raise InputError("payload counts and collision rates must be non-negative")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "access_cost", ac)

    @property
    def n_shells(self):
        return self.X.shape[0]


@dataclass(frozen=True)
class ChoiceOccasion:
    group: str
    year: int
    chosen: int
    chars: ShellCharacteristics

    def __post_init__(self):
        if not 0 <= self.chosen < self.chars.n_shells:
            raise InputError(f"chosen shell {self.chosen} outside the choice set")


class ChoiceSet:
    """Occasions stacked into arrays: ``F`` (n_occ, J, 6) holds X then access cost."""

    def __init__(self, X, access_cost, chosen, years=None, group=None):
        X = np.asarray(X, dtype=float)
        ac = np.asarray(access_cost, dtype=float)
        self.chosen = np.asarray(chosen, dtype=int)
        if X.ndim != 3 or X.shape[2] != N_ATTR or ac.shape != X.shape[:2]:
            raise InputError("choice set arrays have inconsistent shapes")
        if X.shape[1] == 0:
            raise InputError("occasion with empty choice set")
        if self.chosen.shape != (X.shape[0],):
            raise InputError("one chosen shell per occasion required")
        if np.any(self.chosen < 0) or np.any(self.chosen >= X.shape[1]):
            raise InputError("chosen shell outside the choice set")
        self.F = np.concatenate([X, ac[:, :, None]], axis=2)
        self.years = None if years is None else np.asarray(years, dtype=int)
        self.group = group

    @classmethod
    def from_occasions(cls, occasions):
        occasions = list(occasions)
        if not occasions:
            raise InputError("no choice occasions")
        J = {o.chars.n_shells for o in occasions}
        if len(J) != 1:
            raise InputError("occasions have inconsistent shell sets")
        return cls(np.stack([o.chars.X for o in occasions]),
                   np.stack([o.chars.access_cost for o in occasions]),
                   [o.chosen for o in occasions], [o.year for o in occasions],
                   occasions[0].group)

    @property
    def n_obs(self):
        return self.F.shape[0]

    @property
    def n_shells(self):
        return self.F.shape[1]


def _as_choice_set(occasions):
    return occasions if isinstance(occasions, ChoiceSet) else ChoiceSet.from_occasions(occasions)


@dataclass
class ChoiceModelParams:
    asc: np.ndarray
    beta: np.ndarray
    gamma: float
    reference_shell: int = 0
    asc_penalty: float = 0.0
    operator: str | None = None
    log_likelihood: float | None = None
    n_obs: int | None = None

    def __post_init__(self):
        self.asc = np.asarray(self.asc, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        self.gamma = float(self.gamma)
        if self.beta.shape != (N_ATTR,):
            raise InputError(f"beta must have {N_ATTR} entries")
        if not (np.all(np.isfinite(self.asc)) and np.all(np.isfinite(self.beta))
                and np.isfinite(self.gamma)):
            raise InputError("choice parameters must be finite")
        if self.asc_penalty < 0:
            raise InputError("asc_penalty must be non-negative")

    @classmethod
    def published(cls, operator, asc, reference_shell=0):
        row = PUBLISHED_ESTIMATES[operator]
        return cls(asc=asc, beta=row["beta"], gamma=row["gamma"],
                   reference_shell=reference_shell, operator=operator)

    def vector(self):
        return np.concatenate([self.asc, self.beta, [self.gamma]])

    def with_vector(self, theta):
        J = self.asc.size
        return ChoiceModelParams(theta[:J], theta[J:J + N_ATTR], theta[J + N_ATTR],
                                 self.reference_shell, self.asc_penalty, self.operator,
                                 self.log_likelihood, self.n_obs)

    def to_json(self):
        d = asdict(self)
        d["asc"] = self.asc.tolist()
        d["beta"] = self.beta.tolist()
        d["attributes"] = list(ATTRIBUTES)
        return d

    @classmethod
    def from_json(cls, d):
        d = {k: v for k, v in d.items() if k != "attributes"}
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def utility(params: ChoiceModelParams, chars: ShellCharacteristics) -> np.ndarray:
    if params.asc.shape != (chars.n_shells,):
        raise InputError(f"{params.asc.size} ASCs for {chars.n_shells} shells")
    return params.asc + chars.X @ params.beta + chars.access_cost * params.gamma


def _softmax(V):
    V = V - np.max(V, axis=-1, keepdims=True)
    e = np.exp(V)
    return e / e.sum(axis=-1, keepdims=True)


def choice_probabilities(params: ChoiceModelParams, chars: ShellCharacteristics) -> np.ndarray:
    V = utility(params, chars)
    if not np.all(np.isfinite(V)):
        raise InputError("non-finite utility")
    if np.max(np.abs(V - V.mean())) > MAX_UTILITY_SPREAD:
        raise InputError("utilities differ by more than the representable range")
    return _softmax(V)


def price_index(params: ChoiceModelParams, chars: ShellCharacteristics) -> float:
    """Choice-probability-weighted mean deterministic utility."""
    V = utility(params, chars)
    return float(choice_probabilities(params, chars) @ V)


def _ll_parts(theta, cs: ChoiceSet, asc_penalty):
    J = cs.n_shells
    asc, b = theta[:J], theta[J:]
    V = asc[None, :] + cs.F @ b
    lse = logsumexp(V, axis=1)
    idx = np.arange(cs.n_obs)
    ll = float(np.sum(V[idx, cs.chosen] - lse))
    P = np.exp(V - lse[:, None])
    return ll - asc_penalty * float(asc @ asc), P


def log_likelihood(params: ChoiceModelParams, occasions) -> float:
    """Sum of log choice probabilities of the chosen shells, minus ``asc_penalty * |asc|^2``."""
    cs = _as_choice_set(occasions)
    if params.asc.size != cs.n_shells:
        raise InputError("parameter and occasion shell counts differ")
    return _ll_parts(params.vector(), cs, params.asc_penalty)[0]


def log_likelihood_grad(params: ChoiceModelParams, occasions):
    """Log-likelihood and its gradient with respect to ``(asc, beta, gamma)``."""
    cs = _as_choice_set(occasions)
    return _value_grad(params.vector(), cs, params.asc_penalty)


def _value_grad(theta, cs, asc_penalty):
    J = cs.n_shells
    ll, P = _ll_parts(theta, cs, asc_penalty)
    idx = np.arange(cs.n_obs)
    g_asc = np.bincount(cs.chosen, minlength=J) - P.sum(axis=0) - 2.0 * asc_penalty * theta[:J]
    g_b = cs.F[idx, cs.chosen].sum(axis=0) - np.einsum("oj,ojk->k", P, cs.F)
    return ll, np.concatenate([g_asc, g_b])


def _hessian(theta, cs, asc_penalty):
    J = cs.n_shells
    _, P = _ll_parts(theta, cs, asc_penalty)
    Fbar = np.einsum("oj,ojk->ok", P, cs.F)
    H_aa = -(np.diag(P.sum(axis=0)) - P.T @ P) - 2.0 * asc_penalty * np.eye(J)
    H_ab = -(np.einsum("oj,ojk->jk", P, cs.F) - P.T @ Fbar)
    H_bb = -(np.einsum("oj,ojk,ojl->kl", P, cs.F, cs.F) - Fbar.T @ Fbar)
    return np.block([[H_aa, H_ab], [H_ab.T, H_bb]])


def fit_choice_model(occasions, max_iter=500, grad_tol=1e-6, asc_penalty=1e-4,
                     operator=None, asc_bound=50.0) -> ChoiceModelParams:
    """Maximum-likelihood fit of one operator group's logit model.

    The most frequently chosen shell is the reference alternative with its constant
    pinned to zero. With ``asc_penalty == 0`` shells that are never chosen push their
    constants toward minus infinity; that is reported as :class:`SeparationError`.
    """
    cs = _as_choice_set(occasions)
    J = cs.n_shells
    counts = np.bincount(cs.chosen, minlength=J)
    ref = int(np.argmax(counts))
    if asc_penalty == 0 and np.any(counts == 0):
        never = np.flatnonzero(counts == 0).tolist()
        raise SeparationError(f"shells {never} are never chosen so their constants have no finite "
                              "maximum; use a positive asc_penalty")
    free = np.ones(J + N_ATTR + 1, dtype=bool)
    free[ref] = False

    def embed(x):
        theta = np.zeros(free.size)
        theta[free] = x
        return theta

    def fun(x):
        ll, g = _value_grad(embed(x), cs, asc_penalty)
        return ll, g[free]

    def hess(x):
        return _hessian(embed(x), cs, asc_penalty)[np.ix_(free, free)]

    theta0 = np.zeros(free.size)
    shares = (counts + 0.5) / (counts.sum() + 0.5 * J)
    theta0[:J] = np.log(shares) - np.log(shares[ref])
    spread = cs.F.reshape(-1, cs.F.shape[2]).std(axis=0)
    scale = np.ones(free.size)
    scale[J:] = np.where(spread > 0, 1.0 / np.where(spread > 0, spread, 1.0), 1.0)

    try:
        x, _, _ = maximize_concave(fun, theta0[free], hess, grad_tol=grad_tol,
                                   max_iter=max_iter, scale=scale[free])
    except ConvergenceError as err:
        best = embed(err.best)
        if asc_penalty == 0 and np.max(np.abs(best[:J])) > asc_bound:
            raise SeparationError(
                "alternative-specific constants diverge (some shells are never chosen); "
                "use a positive asc_penalty") from err
        raise
    theta = embed(x)
    if asc_penalty == 0 and np.max(np.abs(theta[:J])) > asc_bound:
        raise SeparationError("alternative-specific constants exceed bound; use a positive asc_penalty")
    ll_unpen = _ll_parts(theta, cs, 0.0)[0]
    return ChoiceModelParams(asc=theta[:J], beta=theta[J:J + N_ATTR], gamma=theta[-1],
                             reference_shell=ref, asc_penalty=asc_penalty,
                             operator=operator or cs.group, log_likelihood=ll_unpen,
                             n_obs=cs.n_obs)


def simulate_choices(params: ChoiceModelParams, X, access_cost, rng) -> np.ndarray:
    """Draw one chosen shell per occasion from the model (for synthetic data)."""
    V = params.asc[None, :] + np.asarray(X) @ params.beta + np.asarray(access_cost) * params.gamma
    P = _softmax(V)
    u = rng.random(P.shape[0])
    chosen = (P.cumsum(axis=1) < u[:, None]).sum(axis=1)
    return np.minimum(chosen, P.shape[1] - 1)
