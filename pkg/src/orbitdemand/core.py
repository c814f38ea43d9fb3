"""Shell grid, species taxonomy, state containers and physical parameter tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

EARTH_RADIUS_KM = 6371.0
MU_EARTH = 398600.4418  # km^3/s^2
SECONDS_PER_YEAR = 365.25 * 86400.0


class InputError(ValueError):
    """Invalid or inconsistent input data (maps to CLI exit code 2)."""


class OperatorType(str, Enum):
    COMMERCIAL = "commercial"
    CIVIL = "civil"
    DEFENSE = "defense"
    AMATEUR = "amateur"
    CONSTELLATION = "constellation"


class DebrisType(str, Enum):
    RB = "RB"
    MRO = "MRO"
    IP = "IP"
    COF = "COF"


class OperatorGroup(str, Enum):
    """Grouping used by the demand model; amateur and constellation collapse to OTHER."""

    COMMERCIAL = "commercial"
    CIVIL = "civil"
    DEFENSE = "defense"
    OTHER = "other"


OPERATORS = tuple(OperatorType)
DEBRIS = tuple(DebrisType)
N_OPERATORS = len(OPERATORS)
N_DEBRIS = len(DEBRIS)
N_SPECIES = N_OPERATORS + N_DEBRIS
SPECIES_NAMES = tuple(o.value for o in OPERATORS) + tuple(d.value for d in DEBRIS)

# the three groups with an estimated demand model
MODELED_GROUPS = (OperatorGroup.COMMERCIAL, OperatorGroup.CIVIL, OperatorGroup.DEFENSE)


def operator_group(op: OperatorType) -> OperatorGroup:
    if op in (OperatorType.AMATEUR, OperatorType.CONSTELLATION):
        return OperatorGroup.OTHER
    return OperatorGroup(op.value)


def species_index(name: str) -> int:
    """Row index of a species in the stacked (operators, debris) layout."""
    try:
        return SPECIES_NAMES.index(name)
    except ValueError:
        raise InputError(f"unknown species {name!r}; expected one of {SPECIES_NAMES}") from None


def operator_index(name: str) -> int:
    try:
        return [o.value for o in OPERATORS].index(name)
    except ValueError:
        raise InputError(f"unknown operator {name!r}") from None


@dataclass(frozen=True)
class ShellGrid:
    """Contiguous spherical altitude shells.

    Parameters
    ----------
    alt_lo, alt_hi : tuple of float
        Lower and upper altitude of every shell, km, ascending.
    earth_radius : float
        km.
    """

    alt_lo: tuple
    alt_hi: tuple
    earth_radius: float = EARTH_RADIUS_KM

    def __post_init__(self):
        lo = np.asarray(self.alt_lo, dtype=float)
        hi = np.asarray(self.alt_hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size == 0:
            raise InputError("alt_lo and alt_hi must be equal-length 1-d sequences")
        if np.any(hi < lo):
            raise InputError("shell upper altitude below lower altitude")
        if np.any(lo[1:] != hi[:-1]):
            raise InputError("shells must be contiguous and ascending")
        object.__setattr__(self, "alt_lo", tuple(float(x) for x in lo))
        object.__setattr__(self, "alt_hi", tuple(float(x) for x in hi))

    @classmethod
    def uniform(cls, start_km=100.0, width_km=50.0, n_shells=24, earth_radius=EARTH_RADIUS_KM):
        lo = start_km + width_km * np.arange(n_shells)
        return cls(tuple(lo), tuple(lo + width_km), earth_radius)

    @property
    def n_shells(self) -> int:
        return len(self.alt_lo)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.alt_lo) + np.asarray(self.alt_hi))

    @property
    def volumes(self) -> np.ndarray:
        return np.array([shell_volume(self, j) for j in range(self.n_shells)])

    def shell_at(self, altitude_km: float) -> int:
        """Index of the shell containing ``altitude_km`` (upper edge belongs to the next shell)."""
        for j, (lo, hi) in enumerate(zip(self.alt_lo, self.alt_hi)):
            if lo <= altitude_km < hi:
                return j
        if altitude_km == self.alt_hi[-1]:
            return self.n_shells - 1
        raise InputError(f"altitude {altitude_km} km outside the grid")

    def _check(self, j):
        if not 0 <= j < self.n_shells:
            raise IndexError(f"shell index {j} out of range [0, {self.n_shells})")


DEFAULT_GRID = ShellGrid.uniform()


def shell_midpoint_altitude(grid: ShellGrid, j: int) -> float:
    grid._check(j)
    return 0.5 * (grid.alt_lo[j] + grid.alt_hi[j])


def shell_volume(grid: ShellGrid, j: int) -> float:
    """Volume of shell ``j`` in km^3."""
    grid._check(j)
    r_lo = grid.earth_radius + grid.alt_lo[j]
    r_hi = grid.earth_radius + grid.alt_hi[j]
    return 4.0 / 3.0 * math.pi * (r_hi**3 - r_lo**3)


def _as_matrix(values, shape, label):
    arr = np.array(values, dtype=float)
    if arr.shape != shape:
        raise InputError(f"{label} has shape {arr.shape}, expected {shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{label} contains non-finite entries")
    if np.any(arr < 0):
        where = np.argwhere(arr < 0)[0]
        pos = f"row {where[0]}, shell {where[1]}" if arr.ndim == 2 else f"index {where[0]}"
        raise InputError(f"{label} has negative entry at {pos}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OrbitalState:
    """Active-satellite stocks ``S[operator, shell]`` and debris stocks ``D[debris, shell]``."""

    year: int
    S: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        n = S.shape[1] if S.ndim == 2 else -1
        object.__setattr__(self, "S", _as_matrix(S, (N_OPERATORS, n), "S"))
        object.__setattr__(self, "D", _as_matrix(self.D, (N_DEBRIS, n), "D"))
        object.__setattr__(self, "year", int(self.year))

    @classmethod
    def zeros(cls, year, n_shells=24):
        return cls(year, np.zeros((N_OPERATORS, n_shells)), np.zeros((N_DEBRIS, n_shells)))

    @classmethod
    def from_stacked(cls, year, N):
        N = np.asarray(N, dtype=float)
        return cls(year, N[:N_OPERATORS], N[N_OPERATORS:])

    @property
    def n_shells(self) -> int:
        return self.S.shape[1]

    def stacked(self) -> np.ndarray:
        """All 9 species as one (9, n_shells) array, operators first."""
        return np.vstack([self.S, self.D])

    def with_debris(self, debris: DebrisType, additions) -> "OrbitalState":
        D = self.D.copy()
        D[DEBRIS.index(debris)] += np.asarray(additions, dtype=float)
        return OrbitalState(self.year, self.S, D)

    def __eq__(self, other):
        if not isinstance(other, OrbitalState):
            return NotImplemented
        return (self.year == other.year and np.array_equal(self.S, other.S)
                and np.array_equal(self.D, other.D))


@dataclass(frozen=True, eq=False)
class LaunchAllocation:
    """Satellites launched in one year, ``q[operator, shell]``."""

    q: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        n = q.shape[1] if q.ndim == 2 else -1
        object.__setattr__(self, "q", _as_matrix(q, (N_OPERATORS, n), "launches"))

    @classmethod
    def zeros(cls, n_shells=24):
        return cls(np.zeros((N_OPERATORS, n_shells)))


# Bulk properties used when no parameter file is supplied. COF: 10 cm aluminium sphere.
_COF_RADIUS = 0.05
_COF_MASS = 2700.0 * 4.0 / 3.0 * math.pi * _COF_RADIUS**3
DEFAULT_MASS_KG = (500.0, 1000.0, 1500.0, 5.0, 260.0, 1500.0, 10.0, 700.0, _COF_MASS)
DEFAULT_RADIUS_M = (1.0, 1.2, 1.5, 0.15, 1.0, 1.5, 0.3, 1.0, _COF_RADIUS)
PMD_TARGET_ALTITUDE_KM = 525.0


@dataclass(frozen=True, eq=False)
class PhysicalParams:
    """Physical parameter tables for the debris model.

    Array shapes: ``decay_rate`` (4, n) per debris species and shell; ``eol_rate`` and
    ``pmd_rate`` (5,); ``rb_per_launch``, ``mro_per_sat``, ``mro_per_launch`` (5, n);
    ``mass`` and ``radius`` (9,) over the stacked species layout. Active satellites
    station-keep, so no decay applies to them.
    """

    decay_rate: np.ndarray
    eol_rate: np.ndarray
    pmd_rate: np.ndarray
    mass: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_MASS_KG))
    radius: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_RADIUS_M))
    rb_per_launch: np.ndarray | None = None
    mro_per_sat: np.ndarray | None = None
    mro_per_launch: np.ndarray | None = None
    v_rel: float = 10.0
    debris_debris_adjust: float = 1e-4
    sat_avoidance: bool = True
    pmd_target_shell: int = 8
    catastrophic_threshold: float = 40.0
    frag_min_size: float = 0.1
    n_substeps: int = 12

    def __post_init__(self):
        decay = np.array(self.decay_rate, dtype=float)
        if decay.ndim != 2 or decay.shape[0] != N_DEBRIS:
            raise InputError(f"decay_rate must have shape ({N_DEBRIS}, n_shells)")
        n = decay.shape[1]

        def rate(values, shape, label):
            arr = _as_matrix(values, shape, label)
            if np.any(arr > 1):
                raise InputError(f"{label} must lie in [0, 1]")
            return arr

        object.__setattr__(self, "decay_rate", rate(decay, (N_DEBRIS, n), "decay_rate"))
        object.__setattr__(self, "eol_rate", rate(self.eol_rate, (N_OPERATORS,), "eol_rate"))
        object.__setattr__(self, "pmd_rate", rate(self.pmd_rate, (N_OPERATORS,), "pmd_rate"))
        for name in ("rb_per_launch", "mro_per_sat", "mro_per_launch"):
            val = getattr(self, name)
            val = np.zeros((N_OPERATORS, n)) if val is None else val
            object.__setattr__(self, name, _as_matrix(val, (N_OPERATORS, n), name))
        for name in ("mass", "radius"):
            arr = _as_matrix(getattr(self, name), (N_SPECIES,), name)
            if np.any(arr <= 0):
                raise InputError(f"{name} must be positive for every species")
            object.__setattr__(self, name, arr)
        if not self.v_rel > 0:
            raise InputError("v_rel must be positive")
        if not 0.0 <= self.debris_debris_adjust <= 1.0:
            raise InputError("debris_debris_adjust must lie in [0, 1]")
        if not 0 <= self.pmd_target_shell < n:
            raise InputError("pmd_target_shell outside the grid")
        if self.n_substeps < 1:
            raise InputError("n_substeps must be >= 1")
        if not self.frag_min_size > 0:
            raise InputError("frag_min_size must be positive")

    @property
    def n_shells(self) -> int:
        return self.decay_rate.shape[1]

    def replace(self, **changes) -> "PhysicalParams":
        return replace(self, **changes)


def natural_decay_time(decay_rate_row, j: int) -> float:
    """Years for an object in shell ``j`` to cascade out of the bottom shell (sum of residence times)."""
    row = np.asarray(decay_rate_row, dtype=float)[: j + 1]
    with np.errstate(divide="ignore"):
        return float(np.sum(1.0 / row))


def compliant_shell(decay_rate_row, horizon_years=25.0) -> int:
    """Highest shell whose natural decay time stays under ``horizon_years``."""
    best = -1
    for j in range(len(decay_rate_row)):
        if natural_decay_time(decay_rate_row, j) < horizon_years:
            best = j
        else:
            break
    if best < 0:
        raise InputError("no shell decays within the compliance horizon")
    return best
