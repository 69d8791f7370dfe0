"""Truncated coagulation-fragmentation dynamics.

State vectors are stored 1-based: ``c`` has length N + 1 with ``c[0]``
permanently zero, so ``c[i]`` is the concentration of i-clusters and index
arithmetic matches the equations.  The right-hand side

    dc_j/dt = 1/2 sum_{k<j} W_{j-k,k} - sum_{k<=N-j} W_{j,k},
    W_{i,j} = a_{i,j} c_i c_j - b_{i,j} c_{i+j},

is evaluated on the precomputed coefficient triangle (fluxes with
i + j > N are zero, so the truncated flow conserves mass exactly).  All
reductions use a fixed deterministic order -- a single C pass over the
triangle in its stored layout -- so repeated runs are bit-identical.

Time stepping is an embedded explicit Dormand-Prince 5(4) pair with the
positivity policy: reject any step producing a component below -atol, clamp
accepted components in [-atol, 0) to zero, and account the clamped mass.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import StiffnessError

logger = logging.getLogger(__name__)


@numba.njit(cache=True)
def _rhs_pairs(ii, jj, ss, a_tri, b_tri, c, out):
    """Single deterministic accumulation pass over the stored pair order."""
    out[:] = 0.0
    for p in range(len(ii)):
        i = ii[p]
        j = jj[p]
        w = a_tri[p] * c[i] * c[j] - b_tri[p] * c[ss[p]]
        if i == j:
            out[ss[p]] += 0.5 * w
            out[i] -= w
        else:
            out[ss[p]] += w
            out[i] -= w
            out[j] -= w
    out[0] = 0.0
    return out


@dataclass
class State:
    """Concentrations c[1..n] at time t (c[0] unused, kept zero)."""

    t: float
    c: np.ndarray

    @property
    def n(self):
        return len(self.c) - 1

    def copy(self):
        return State(t=self.t, c=self.c.copy())

    def mass(self):
        return float(np.sum(np.arange(len(self.c)) * self.c))


@dataclass
class IntegratorConfig:
    t_end: float
    observer_cadence: float = 1.0
    rtol: float = 1e-8
    atol: float = 1e-12
    h_init: float | None = None
    h_max: float = math.inf
    positivity_floor: float = 0.0


@dataclass
class IntegrationStats:
    steps: int = 0
    rejected_error: int = 0
    rejected_negative: int = 0
    rhs_evaluations: int = 0
    clamped_mass: float = 0.0
    min_h: float = math.inf


@dataclass
class IntegrationResult:
    state: State
    stats: IntegrationStats


def rhs(tables, c):
    """Rate vector of the truncated system (length n + 1, entry 0 zero)."""
    if isinstance(c, State):
        c = c.c
    out = np.empty(tables.n + 1)
    _rhs_pairs(tables.ii, tables.jj, tables.ss, tables.a_tri, tables.b_tri,
               np.asarray(c, dtype=float), out)
    return out


def moment(state, k):
    """sum_{i<=n} i^k c_i; accepts a State or a padded array."""
    c = state.c if isinstance(state, State) else np.asarray(state)
    i = np.arange(1, len(c), dtype=float)
    return float(np.sum(i ** k * c[1:]))


def moment_rate(tables, state, k):
    """d/dt of the k-th moment via the interaction-pair identity.

    1/2 sum_{i+j<=N} W_{i,j} ((i+j)^k - i^k - j^k); agrees with
    sum_j j^k rhs_j by the weak-form rearrangement.
    """
    c = state.c if isinstance(state, State) else np.asarray(state)
    W = tables.a_tri * c[tables.ii] * c[tables.jj] - tables.b_tri * c[tables.ss]
    wk = (tables.ss.astype(float) ** k - tables.ii.astype(float) ** k
          - tables.jj.astype(float) ** k)
    return 0.5 * float(np.sum(tables.mult * W * wk))


# Dormand-Prince 5(4) tableau (FSAL: stage 7 equals the next step's stage 1).
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784,
                   11 / 84, 0.0])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200,
                  22 / 525, -1 / 40])


def _initial_step(f0, c, cfg):
    sc = cfg.atol + cfg.rtol * np.abs(c)
    d0 = math.sqrt(float(np.mean((c / sc) ** 2)))
    d1 = math.sqrt(float(np.mean((f0 / sc) ** 2)))
    h0 = 1e-6 if d1 < 1e-30 else 0.01 * d0 / d1
    return min(h0, cfg.h_max)


def integrate(tables, state0, cfg, observer=None):
    """Advance the truncated system to ``cfg.t_end``.

    Steps land exactly on every observation time (multiples of
    ``cfg.observer_cadence``), where ``observer(state, stats)`` is invoked;
    the initial state is observed too.  Components that dip below
    ``-cfg.atol`` reject the step; accepted components in [-atol, 0) are
    raised to ``cfg.positivity_floor`` and the repaired mass is accumulated
    in ``stats.clamped_mass``.

    Raises :class:`StiffnessError` (carrying the partial state and stats)
    if the step size underflows 1e-14 times the time scale.
    """
    c = state0.c.astype(float).copy()
    t = float(state0.t)
    t_end = float(cfg.t_end)
    stats = IntegrationStats()
    if t_end <= t:
        st = State(t=t, c=c)
        if observer is not None:
            observer(st, stats)
        return IntegrationResult(state=st, stats=stats)

    cadence = cfg.observer_cadence
    n_obs = int(math.floor((t_end - t) / cadence + 1e-9))
    obs_times = [t + k * cadence for k in range(1, n_obs + 1)]
    if not obs_times or obs_times[-1] < t_end - 1e-12 * max(1.0, abs(t_end)):
        obs_times.append(t_end)
    obs_idx = 0

    if observer is not None:
        observer(State(t=t, c=c.copy()), stats)

    k = [np.zeros_like(c) for _ in range(7)]
    k[0] = rhs(tables, c)
    stats.rhs_evaluations += 1
    h = cfg.h_init if cfg.h_init is not None else _initial_step(k[0], c, cfg)
    h_floor = 1e-14 * max(abs(t_end), 1.0)
    just_rejected = False

    while t < t_end:
        target = obs_times[obs_idx]
        h = min(h, cfg.h_max, target - t)
        if h < h_floor:
            raise StiffnessError(
                f"step size underflow (h={h:.3e}) at t={t:.6g}",
                state=State(t=t, c=c.copy()), stats=stats)
        # the landing guard must exceed the stiffness floor, or a step could
        # strand t within an un-steppable gap below the next target
        hits_target = (t + h >= target - 2.0 * h_floor)
        if hits_target:
            h = target - t

        for s in range(1, 7):
            inc = _DP_A[s][0] * k[0]
            for m in range(1, s):
                inc = inc + _DP_A[s][m] * k[m]
            k[s] = rhs(tables, c + h * inc)
        stats.rhs_evaluations += 6
        y5 = c + h * (_DP_B5[0] * k[0] + _DP_B5[2] * k[2] + _DP_B5[3] * k[3]
                      + _DP_B5[4] * k[4] + _DP_B5[5] * k[5])

        cmin = float(np.min(y5[1:]))
        if cmin < -cfg.atol:
            stats.rejected_negative += 1
            h *= 0.5
            just_rejected = True
            continue

        err_vec = h * (_DP_E[0] * k[0] + _DP_E[2] * k[2] + _DP_E[3] * k[3]
                       + _DP_E[4] * k[4] + _DP_E[5] * k[5] + _DP_E[6] * k[6])
        sc = cfg.atol + cfg.rtol * np.maximum(np.abs(c), np.abs(y5))
        err = math.sqrt(float(np.mean((err_vec / sc) ** 2)))
        if err > 1.0:
            stats.rejected_error += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            just_rejected = True
            continue

        # accept
        neg = y5 < cfg.positivity_floor
        neg[0] = False
        if np.any(neg):
            sizes = tables.sizes[neg]
            stats.clamped_mass += float(
                np.sum(sizes * np.abs(y5[neg] - cfg.positivity_floor)))
            y5[neg] = cfg.positivity_floor
        c = y5
        t = target if hits_target else t + h
        stats.steps += 1
        stats.min_h = min(stats.min_h, h)
        k[0] = k[6] if not np.any(neg) else rhs(tables, c)   # FSAL
        if np.any(neg):
            stats.rhs_evaluations += 1

        if hits_target:
            if observer is not None:
                observer(State(t=t, c=c.copy()), stats)
            obs_idx += 1
            if obs_idx >= len(obs_times):
                break

        fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        if just_rejected:
            fac = min(fac, 1.0)
            just_rejected = False
        h = min(h * fac, cfg.h_max)

    logger.debug("integrate: %d steps, %d/%d rejections (err/neg), h_min=%.3e",
                 stats.steps, stats.rejected_error, stats.rejected_negative,
                 stats.min_h)
    return IntegrationResult(state=State(t=t, c=c), stats=stats)


def initial_state(preset, n, rho, db=None, epsilon=0.0, seed=None, ratio=0.5,
                  path=None):
    """Build initial data of total mass ``rho`` on sizes 1..n.

    Presets: ``monodisperse`` (all mass in monomers), ``equilibrium`` (the
    z(rho) profile, which may carry slightly less than rho due to the
    truncated tail), ``equilibrium_perturbed`` (equilibrium times
    1 + epsilon * xi with xi uniform in [-1, 1], renormalized to mass rho),
    ``geometric`` (c_i proportional to ratio^i, scaled to mass rho), and
    ``file`` (CSV rows i,c_i).
    """
    c = np.zeros(n + 1)
    if preset == "monodisperse":
        c[1] = rho
    elif preset in ("equilibrium", "equilibrium_perturbed"):
        if db is None:
            raise ValueError(f"preset {preset!r} needs a detailed-balance sequence")
        from .equilibrium import solve_z

        prof = solve_z(db, rho, n=n)
        c[:n + 1] = prof.profile[:n + 1]
        if preset == "equilibrium_perturbed":
            rng = np.random.default_rng(seed)
            xi = rng.uniform(-1.0, 1.0, size=n)
            c[1:] *= 1.0 + epsilon * xi
            m = float(np.sum(np.arange(1, n + 1) * c[1:]))
            if m > 0:
                c[1:] *= rho / m
    elif preset == "geometric":
        i = np.arange(1, n + 1, dtype=float)
        raw = ratio ** i
        c[1:] = raw * (rho / float(np.sum(i * raw)))
    elif preset == "file":
        data = np.loadtxt(path, delimiter=",", skiprows=1)
        data = np.atleast_2d(data)
        for row in data:
            idx = int(row[0])
            if 1 <= idx <= n:
                c[idx] = row[1]
    else:
        raise ValueError(f"unknown initial preset {preset!r}")
    return State(t=0.0, c=c)


@dataclass
class TruncationStudy:
    n_list: list[int]
    times: np.ndarray
    discrepancies: list[tuple[int, int, float]] = field(default_factory=list)


def truncation_study(kernel, s0_generator, n_list, t_end, cfg=None, n_obs=21):
    """Integrate at each truncation size and compare on a shared grid.

    ``s0_generator(n)`` must produce consistent initial data for each size
    (smaller states are the larger ones with the tail cut).  Reports the
    mass-weighted l1 discrepancy sup_t sum_i i |c_i^N - c_i^N'| for each
    consecutive pair of sizes, padding the smaller system with zeros.
    """
    if sorted(n_list) != list(n_list):
        raise ValueError("n_list must be ascending")
    times = np.linspace(0.0, t_end, n_obs)
    snapshots = {}
    for n in n_list:
        tables = kernel.tables(n)
        run_cfg = IntegratorConfig(
            t_end=t_end if t_end > 0 else 0.0,
            observer_cadence=t_end / (n_obs - 1) if t_end > 0 else 1.0,
            rtol=cfg.rtol if cfg else 1e-8,
            atol=cfg.atol if cfg else 1e-12,
            h_init=cfg.h_init if cfg else None,
            h_max=cfg.h_max if cfg else math.inf,
            positivity_floor=cfg.positivity_floor if cfg else 0.0,
        )
        states = []
        integrate(tables, s0_generator(n), run_cfg,
                  observer=lambda st, stats: states.append(st.c.copy()))
        snapshots[n] = states
    study = TruncationStudy(n_list=list(n_list), times=times)
    for n_a, n_b in zip(n_list[:-1], n_list[1:]):
        worst = 0.0
        sizes = np.arange(n_b + 1, dtype=float)
        for ca, cb in zip(snapshots[n_a], snapshots[n_b]):
            pad = np.zeros(n_b + 1)
            pad[:len(ca)] = ca
            worst = max(worst, float(np.sum(sizes * np.abs(pad - cb))))
        study.discrepancies.append((n_a, n_b, worst))
    return study
