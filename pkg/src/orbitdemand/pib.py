"""Particle-in-a-box propagation of the multi-shell, multi-species orbital population.

Species are stacked as rows (5 operator types, then RB, MRO, IP, COF); shells are columns.
Collision rates follow the kinetic-gas form ``sigma * v * N_m * N_n / V`` and fragment
counts the power law of the NASA standard breakup model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEBRIS, N_DEBRIS, N_OPERATORS, N_SPECIES, SECONDS_PER_YEAR, SPECIES_NAMES,
    DebrisType, InputError, LaunchAllocation, OrbitalState, PhysicalParams, ShellGrid,
    shell_volume,
)

_IP = N_OPERATORS + DEBRIS.index(DebrisType.IP)
_COF = N_OPERATORS + DEBRIS.index(DebrisType.COF)
_RB = N_OPERATORS + DEBRIS.index(DebrisType.RB)
_MRO = N_OPERATORS + DEBRIS.index(DebrisType.MRO)

_IS_OPERATOR = np.arange(N_SPECIES) < N_OPERATORS
_UPPER = np.triu(np.ones((N_SPECIES, N_SPECIES), dtype=bool))


def collision_kernel(params: PhysicalParams, grid: ShellGrid) -> np.ndarray:
    """Per-pair rate coefficient ``sigma_mn * v_rel / V_j`` in 1/yr, shape (9, 9, n_shells)."""
    vols = grid.volumes
    if np.any(vols <= 0):
        raise InputError("collision rates need every shell volume to be positive")
    r_km = params.radius / 1000.0
    sigma = np.pi * (r_km[:, None] + r_km[None, :]) ** 2
    v = params.v_rel * SECONDS_PER_YEAR
    return sigma[:, :, None] * v / vols[None, None, :]


def _pair_products(N):
    """N_m N_n for m != n and N_m (N_m - 1) / 2 on the diagonal, shape (9, 9, n)."""
    prod = N[:, None, :] * N[None, :, :]
    idx = np.arange(N.shape[0])
    prod[idx, idx, :] = np.maximum(N * (N - 1.0), 0.0) / 2.0
    return prod


def collision_rate_pair(state: OrbitalState, params: PhysicalParams, grid: ShellGrid,
                        j: int, m: int, n: int) -> float:
    """Collisions per year between species ``m`` and ``n`` in shell ``j`` (no adjustment)."""
    grid._check(j)
    if not (0 <= m < N_SPECIES and 0 <= n < N_SPECIES):
        raise IndexError("species index out of range")
    vol = shell_volume(grid, j)
    if vol <= 0:
        raise InputError(f"shell {j} has zero volume")
    N = state.stacked()[:, j]
    if np.any(N < 0):
        raise InputError("negative population")
    r_km = (params.radius[m] + params.radius[n]) / 1000.0
    coeff = np.pi * r_km**2 * params.v_rel * SECONDS_PER_YEAR / vol
    if m == n:
        return float(coeff * max(N[m] * (N[m] - 1.0), 0.0) / 2.0)
    return float(coeff * N[m] * N[n])


def unadjusted_collision_rates(state: OrbitalState, params: PhysicalParams, grid: ShellGrid,
                               kernel=None) -> np.ndarray:
    """Total collisions per year in every shell over all unordered species pairs."""
    K = collision_kernel(params, grid) if kernel is None else kernel
    pairs = K * _pair_products(state.stacked())
    return pairs[_UPPER].sum(axis=0)


def total_unadjusted_collision_rate(state, params, grid, j) -> float:
    grid._check(j)
    return float(unadjusted_collision_rates(state, params, grid)[j])


def adjustment_matrix(params: PhysicalParams) -> np.ndarray:
    """Multiplier applied to each species pair: avoidance zeroes satellite pairs."""
    A = np.ones((N_SPECIES, N_SPECIES))
    debris = ~_IS_OPERATOR
    A[np.ix_(debris, debris)] = params.debris_debris_adjust
    if params.sat_avoidance:
        A[_IS_OPERATOR, :] = 0.0
        A[:, _IS_OPERATOR] = 0.0
    return A


@dataclass(frozen=True)
class CollisionRates:
    """Shell-resolved collision rates.

    ``unadjusted_total`` and ``effective_total`` count collisions per year;
    ``effective_by_species`` counts objects removed per year (each collision removes
    one object of each participant, two for a self-pair); ``effective_pairs`` holds
    the adjusted (9, 9, n) pair rates with only the upper triangle populated.
    """

    unadjusted_total: np.ndarray
    effective_total: np.ndarray
    effective_by_species: np.ndarray
    effective_pairs: np.ndarray


def _losses(pairs):
    # pairs symmetric off-diagonal; self-pairs remove two objects of the species
    diag = np.einsum("mmj->mj", pairs)
    return pairs.sum(axis=1) + diag


def effective_collision_rates(state: OrbitalState, params: PhysicalParams,
                              grid: ShellGrid) -> CollisionRates:
    K = collision_kernel(params, grid)
    raw = K * _pair_products(state.stacked())
    eff = raw * adjustment_matrix(params)[:, :, None]
    return CollisionRates(
        unadjusted_total=raw[_UPPER].sum(axis=0),
        effective_total=eff[_UPPER].sum(axis=0),
        effective_by_species=_losses(eff),
        effective_pairs=np.where(_UPPER[:, :, None], eff, 0.0),
    )


def fragments_per_collision(params: PhysicalParams, m: int, n: int) -> float:
    """Fragments of at least ``frag_min_size`` produced by one collision of species m and n."""
    mm, mn = float(params.mass[m]), float(params.mass[n])
    if mm <= 0 or mn <= 0:
        raise InputError("masses must be positive")
    small, large = min(mm, mn), max(mm, mn)
    v = params.v_rel
    energy_j_per_g = 0.5 * small * (v * 1000.0) ** 2 / (large * 1000.0)
    if energy_j_per_g >= params.catastrophic_threshold:
        ref_mass = mm + mn
    else:
        ref_mass = small * v**2
    return 0.1 * ref_mass**0.75 * params.frag_min_size ** (-1.71)


def fragment_matrix(params: PhysicalParams) -> np.ndarray:
    return np.array([[fragments_per_collision(params, m, n) for n in range(N_SPECIES)]
                     for m in range(N_SPECIES)])


def apply_pmd(state: OrbitalState | None, params: PhysicalParams, eol_counts) -> np.ndarray:
    """Route end-of-life satellites into intact-payload stocks.

    A fraction ``pmd_rate[i]`` of satellites retiring above ``pmd_target_shell`` is
    relocated to that shell; the rest, and everything retiring at or below it, stays
    in place. Returns the (5, n_shells) IP additions attributed to each operator.
    ``state`` is accepted for interface symmetry and not read.
    """
    eol = np.asarray(eol_counts, dtype=float)
    target = params.pmd_target_shell
    out = eol.copy()
    above = np.arange(eol.shape[1]) > target
    moved = eol[:, above] * params.pmd_rate[:, None]
    out[:, above] -= moved
    out[:, target] += moved.sum(axis=1)
    return out


@dataclass(frozen=True)
class StepDiagnostics:
    fragments: np.ndarray          # (n,) COF created
    collisions: np.ndarray         # (n,) effective collisions
    collision_losses: np.ndarray   # (9, n) objects removed by collisions
    decay_flux: np.ndarray         # (4, n) debris leaving each shell downward
    bottom_outflow: np.ndarray     # (4,) debris leaving the grid
    eol: np.ndarray                # (5, n) satellites reaching end of life
    pmd_relocated: np.ndarray      # (5,) satellites moved to the disposal shell


def step_year(state: OrbitalState, launches: LaunchAllocation, params: PhysicalParams,
              grid: ShellGrid, n_substeps: int | None = None):
    """Advance the population by one year with explicit Euler sub-steps.

    Within a sub-step all flows are evaluated on the start-of-substep populations. If the
    outflows from a (species, shell) cell would exceed its stock, every outflow from that
    cell is scaled down proportionally; pair collisions use the smaller of their two
    participants' scale factors. This keeps every population non-negative.

    Returns
    -------
    (OrbitalState, StepDiagnostics)
        The state dated ``state.year + 1`` and the flows accumulated over the year.
    """
    n = grid.n_shells
    q = launches.q
    if state.n_shells != n or q.shape[1] != n or params.n_shells != n:
        raise InputError("state, launches, params and grid disagree on the number of shells")
    steps = params.n_substeps if n_substeps is None else int(n_substeps)
    if steps < 1:
        raise InputError("n_substeps must be >= 1")
    dt = 1.0 / steps

    K = collision_kernel(params, grid) * adjustment_matrix(params)[:, :, None]
    gamma = fragment_matrix(params)[:, :, None] * _UPPER[:, :, None]
    mu = params.eol_rate[:, None]
    delta = params.decay_rate
    rb_src = (params.rb_per_launch * q).sum(axis=0)
    mro_launch = (params.mro_per_launch * q).sum(axis=0)

    N = state.stacked().copy()
    acc = dict(fragments=np.zeros(n), collisions=np.zeros(n), losses=np.zeros((N_SPECIES, n)),
               decay=np.zeros((N_DEBRIS, n)), eol=np.zeros((N_OPERATORS, n)),
               pmd=np.zeros(N_OPERATORS))

    for _ in range(steps):
        pairs = K * _pair_products(N) * dt
        out = _losses(pairs)
        eol = mu * N[:N_OPERATORS] * dt
        dec = delta * N[N_OPERATORS:] * dt
        out[:N_OPERATORS] += eol
        out[N_OPERATORS:] += dec

        scale = np.ones_like(N)
        over = out > N
        if np.any(over):
            scale[over] = N[over] / out[over]
            pairs = pairs * np.minimum(scale[:, None, :], scale[None, :, :])
            eol = eol * scale[:N_OPERATORS]
            dec = dec * scale[N_OPERATORS:]
        losses = _losses(pairs)
        frags = (gamma * pairs).sum(axis=(0, 1))

        ip_add = apply_pmd(None, params, eol)
        S = N[:N_OPERATORS]
        new = N - losses
        new[:N_OPERATORS] += q * dt - eol
        new[N_OPERATORS:] -= dec
        new[N_OPERATORS:, :-1] += dec[:, 1:]
        new[_IP] += ip_add.sum(axis=0)
        new[_COF] += frags
        new[_RB] += rb_src * dt
        new[_MRO] += ((params.mro_per_sat * S).sum(axis=0) + mro_launch) * dt
        # round-off can leave -1e-17 where a cell was fully drained
        np.maximum(new, 0.0, out=new)
        if not np.all(np.isfinite(new)):
            s, j = np.argwhere(~np.isfinite(new))[0]
            raise FloatingPointError(f"non-finite population for {SPECIES_NAMES[s]} in shell {j}")
        N = new

        acc["fragments"] += frags
        acc["collisions"] += pairs[_UPPER].sum(axis=0)
        acc["losses"] += losses
        acc["decay"] += dec
        acc["eol"] += eol
        acc["pmd"] += eol[:, params.pmd_target_shell + 1:].sum(axis=1) * params.pmd_rate

    diag = StepDiagnostics(
        fragments=acc["fragments"], collisions=acc["collisions"],
        collision_losses=acc["losses"], decay_flux=acc["decay"],
        bottom_outflow=acc["decay"][:, 0].copy(), eol=acc["eol"], pmd_relocated=acc["pmd"],
    )
    return OrbitalState.from_stacked(state.year + 1, N), diag
