"""Free energy, relative energy, dissipation rates, and H-theorem checks.

All entropy-like quantities are evaluated in log space so that the huge
detailed-balance weights Q_i (log Q_i ~ i for the reference kernel) never
overflow: each term of V uses log c_i - log Q_i directly, and both
dissipation sums are rewritten through the physical fluxes
p = a_{i,j} c_i c_j and q = b_{i,j} c_{i+j}, which are equal to the
Q-weighted forms under detailed balance but stay in double range.

Exact zeros (monodisperse initial data, clamped tails) are absorbed by a
floor at 1e-300 inside logarithms; the number of floored terms is reported
rather than raised, since positivity holds for t > 0 in exact arithmetic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .dynamics import State
from .equilibrium import (K_z, partition_sum, series_tail_bound,
                          weighted_partial_sum, weighted_series)
from .errors import DomainError

LOG_FLOOR = 1e-300


@numba.njit(cache=True)
def _dcf_pairs(ii, jj, ss, a_tri, b_tri, c, floor):
    total = 0.0
    clamps = 0
    for p in range(len(ii)):
        i = ii[p]
        j = jj[p]
        fw = a_tri[p] * c[i] * c[j]
        bw = b_tri[p] * c[ss[p]]
        if fw > 0.0 or bw > 0.0:
            if fw <= 0.0 or bw <= 0.0:
                clamps += 1
            lp = math.log(fw if fw > floor else floor)
            lq = math.log(bw if bw > floor else floor)
            mult = 1.0 if i == j else 2.0
            total += 0.5 * mult * (fw - bw) * (lp - lq)
    return total, clamps


def _carr(state):
    return state.c if isinstance(state, State) else np.asarray(state, dtype=float)


def free_energy(c, db):
    """V(c) = sum_i c_i (log(c_i / Q_i) - 1), with 0 log 0 = 0."""
    c = _carr(c)
    n = len(c) - 1
    terms = np.zeros(n + 1)
    pos = c > 0
    pos[0] = False
    cp = c[pos]
    terms[pos] = cp * (np.log(cp) - db.log_q[:n + 1][pos] - 1.0)
    return float(np.sum(terms))


def _f_entropy(u):
    """f(u) = u log u - u + 1 (>= 0, = 0 iff u = 1); f(0) = 1.

    Written as (1+d) log1p(d) - d with d = u - 1 on u in (0.1, 10), which
    keeps the absolute error at ~1e-16 |d| per term; the direct formula is
    cancellation-free outside that band.
    """
    u = np.asarray(u, dtype=float)
    out = np.ones_like(u)
    pos = u > 0
    up = u[pos]
    d = up - 1.0
    vals = np.empty_like(up)
    band = (up > 0.1) & (up < 10.0)
    db_ = d[band]
    vals[band] = (1.0 + db_) * np.log1p(db_) - db_
    vals[~band] = up[~band] * np.log(up[~band]) - d[~band]
    out[pos] = vals
    return out


def relative_energy(c, db, z, tol=1e-10):
    """F_z(c) = V(c) + sum_i Q_i z^i - log(z) * mass(c).

    The partition constant uses the certified series through n_max; its
    remainder bound is negligible for z < z_s and reported by
    :func:`cfkin.equilibrium.partition_sum` when not.
    """
    if z <= 0 or z > db.z_s * (1 + 1e-12):
        raise DomainError(f"relative energy needs 0 < z <= z_s, got z={z}")
    c = _carr(c)
    part, _ = partition_sum(db, z, tol)
    i = np.arange(1, len(c), dtype=float)
    mass = float(np.sum(i * c[1:]))
    return free_energy(c, db) + part - math.log(z) * mass


def _rel_energy_terms(c_slice, lq):
    """Terms q_i f(c_i / q_i) for c_slice = c[1:], lq = log q_i.

    The ratio path (through :func:`_f_entropy`) is used whenever u = c/q is
    representable; the raw log-difference c (log c - log q) - c + q only
    when q underflows or u would overflow, where it carries no
    cancellation.
    """
    q = np.exp(lq)
    terms = q.copy()                       # c_i = 0 contributes q_i f(0)
    pos = c_slice > 0
    if not np.any(pos):
        return terms
    cp = c_slice[pos]
    qp = q[pos]
    lqp = lq[pos]
    log_c = np.log(cp)
    vals = np.empty_like(cp)
    ratio_ok = (qp > 0) & (log_c - lqp < 700.0)
    u = np.divide(cp, qp, out=np.ones_like(cp), where=ratio_ok)
    vals[ratio_ok] = (qp * _f_entropy(u))[ratio_ok]
    raw = ~ratio_ok
    if np.any(raw):
        vals[raw] = cp[raw] * (log_c[raw] - lqp[raw]) - cp[raw] + qp[raw]
    terms[pos] = vals
    return terms


def relative_energy_series(c, db, z):
    """F_z as the termwise-nonnegative series sum_i Q_i z^i f(u_i).

    Identical to :func:`relative_energy` in exact arithmetic; preferred for
    diagnostics because each term is >= 0, so no catastrophic cancellation
    occurs near equilibrium.  Terms with i beyond the support of c
    contribute Q_i z^i (f(0) = 1), summed through n_max.
    """
    if z <= 0 or z > db.z_s * (1 + 1e-12):
        raise DomainError(f"relative energy needs 0 < z <= z_s, got z={z}")
    c = _carr(c)
    n = len(c) - 1
    lq = db.log_q[1:n + 1] + np.arange(1, n + 1) * math.log(z)
    terms = _rel_energy_terms(c[1:], lq)
    beyond = weighted_partial_sum(db, z, 0, n + 1, db.n_max)
    return float(np.sum(terms)) + beyond


def dissipation_cf(tables, c, return_clamps=False):
    """Free-energy dissipation D_CF >= 0 for the truncated system.

    1/2 sum_{i+j<=N} (p - q)(log p - log q) with p = a c_i c_j and
    q = b c_{i+j}; under detailed balance this equals the Q-weighted form
    termwise.  Pairs with exactly one vanishing flux are floored at 1e-300
    inside the logs (clamp count reported on request); p = q = 0 terms
    vanish.
    """
    c = _carr(c)
    val, clamped = _dcf_pairs(tables.ii, tables.jj, tables.ss, tables.a_tri,
                              tables.b_tri, c, LOG_FLOOR)
    if return_clamps:
        return val, int(clamped)
    return val


def dissipation_bd(tables, c, return_clamps=False):
    """Becker-Doring dissipation D (monomer-interaction sub-sum of D_CF).

    sum_i a_i Q_i (c_1 c_i / Q_i - c_{i+1}/Q_{i+1}) (log ...) with
    a_1 = a_{1,1}/2 and a_i = a_{i,1}; evaluated through the fluxes
    p_i = a_{i,1} c_1 c_i, q_i = b_{i,1} c_{i+1} with the 1/2 on i = 1.
    Termwise nonnegative and termwise contained in D_CF.
    """
    c = _carr(c)
    n = tables.n
    i = np.arange(1, n)
    p = tables.a1[1:] * c[1] * c[i]
    q = tables.b1[1:] * c[i + 1]
    w = np.ones(n - 1)
    w[0] = 0.5
    active = (p > 0) | (q > 0)
    clamped = int(np.count_nonzero((p[active] <= 0) | (q[active] <= 0)))
    lp = np.log(np.maximum(p[active], LOG_FLOOR))
    lqv = np.log(np.maximum(q[active], LOG_FLOOR))
    val = float(np.sum(w[active] * (p[active] - q[active]) * (lp - lqv)))
    if return_clamps:
        return val, clamped
    return val


def strong_distance(c, db, z):
    """Mass-weighted l1 distance to the z-equilibrium with certified tail.

    sum_{i<=n} i |c_i - Q_i z^i| plus the equilibrium tail
    sum_{i>n} i Q_i z^i (series through n_max plus the certified remainder),
    which is the exact contribution of the zero-padded components.
    """
    c = _carr(c)
    n = len(c) - 1
    i = np.arange(1, n + 1, dtype=float)
    if z > 0:
        q = np.exp(db.log_q[1:n + 1] + i * math.log(z))
    else:
        q = np.zeros(n)
    head = float(np.sum(i * np.abs(c[1:] - q)))
    if z <= 0:
        return head
    beyond = weighted_partial_sum(db, z, 1, n + 1, db.n_max)
    return head + beyond + series_tail_bound(db, z, 1, db.n_max)


def proximity_bound_check(c, db, z):
    """Check distance-to-equilibrium <= max(2 F_z, K_z sqrt(F_z)).

    Returns a ProbeResult with lhs = strong distance, rhs = the entropy
    bound, and the witness carrying (z, mass ratio, F_z).
    """
    from .inequalities import ProbeResult

    if not 0.0 < z < db.z_s:
        raise DomainError(f"proximity bound needs 0 < z < z_s, got z={z}")
    c = _carr(c)
    lhs = strong_distance(c, db, z)
    F = relative_energy_series(c, db, z)
    F = max(F, 0.0)
    rhs = max(2.0 * F, K_z(z, db.z_s) * math.sqrt(F))
    rho_z, _ = weighted_series(db, z, 1)
    mass = float(np.sum(np.arange(len(c)) * c))
    return ProbeResult(lhs=lhs, rhs=rhs,
                       witness={"z": z, "F_z": F, "mass": mass,
                                "mass_ratio": mass / rho_z if rho_z else math.inf})


def free_energy_lower_bound(db, rho, n):
    """min of V over the truncated mass shell sum_{i<=n} i c_i = rho.

    The minimizer over the shell is the (truncated) equilibrium profile
    c_i = Q_i z~^i where z~ solves the finite moment equation; z~ may exceed
    z_s because the sum is finite.  Used as the analytic reference for the
    boundedness of V.
    """
    from scipy.optimize import brentq

    if rho <= 0:
        return 0.0
    i = np.arange(1, n + 1, dtype=float)
    lq = db.log_q[1:n + 1]

    def mass(log_z):
        # capped exp: only a root-finder residual, not a certified value
        return float(np.sum(np.exp(np.minimum(lq + i * log_z + np.log(i),
                                              700.0)))) - rho

    lo, hi = -50.0, 0.0
    while mass(hi) < 0:
        hi += 5.0
        if hi > 400:
            raise DomainError("mass shell root escaped bracket")
    log_z = brentq(mass, lo, hi, xtol=1e-14)
    q = np.exp(lq + i * log_z)
    return float(np.sum(q * (i * log_z - 1.0)))


@dataclass
class DiagnosticsRecord:
    """One observer tick of the trajectory diagnostics.

    The CSV schema (in this column order) is: t, mass, c1, V, F_z, D_CF,
    D_BD, M_2mlambda, dist_eq, tail_mass, clamped_mass.  ``positive`` and
    ``log_clamps`` are bookkeeping fields outside the schema; records of
    states containing exact zeros are flagged pre-positivity
    (positive=False) since the exact flow is positive for t > 0.
    """

    t: float
    mass: float
    c1: float
    V: float
    F_z: float
    D_CF: float
    D_BD: float
    M_2mlambda: float
    dist_eq: float
    tail_mass: float
    clamped_mass: float
    positive: bool = True
    log_clamps: int = 0

    CSV_FIELDS = ("t", "mass", "c1", "V", "F_z", "D_CF", "D_BD",
                  "M_2mlambda", "dist_eq", "tail_mass", "clamped_mass")

    def csv_values(self):
        return [getattr(self, f) for f in self.CSV_FIELDS]


class DiagnosticsCollector:
    """Observer assembling a DiagnosticsRecord per tick.

    ``z_target`` selects the reference equilibrium for F_z and dist_eq
    (the equal-mass value for subcritical runs, z_s for supercritical
    ones).  Pass the collector as ``observer=`` to
    :func:`cfkin.dynamics.integrate`.

    The recorded F_z is the truncated system's own relative energy (the
    series over i <= N): it is the Lyapunov functional of the truncated
    flow and decays to the truncated fixed point.  The infinite-series
    value of :func:`relative_energy_series` exceeds it by the constant
    sum_{i>N} Q_i z^i, which a truncated trajectory can never dissipate.
    """

    def __init__(self, tables, db, z_target, lam=None):
        self.tables = tables
        self.db = db
        self.z_target = z_target
        self.lam = tables.kernel.lam if lam is None else lam
        self.records = []
        # per-tick work is O(n): the z_target equilibrium arrays and the
        # series constants beyond the truncation are frozen here
        n = tables.n
        self._i = np.arange(1, n + 1, dtype=float)
        self._lq = db.log_q[1:n + 1] + self._i * math.log(z_target)
        self._q = np.exp(self._lq)
        self._dist_tail = (weighted_partial_sum(db, z_target, 1, n + 1,
                                                db.n_max)
                           + series_tail_bound(db, z_target, 1, db.n_max))

    def _f_z(self, c):
        return float(np.sum(_rel_energy_terms(c[1:], self._lq)))

    def __call__(self, state, stats):
        c = state.c
        n = len(c) - 1
        i = self._i
        mass = float(np.sum(i * c[1:]))
        dcf, ncl = dissipation_cf(self.tables, c, return_clamps=True)
        dbd = dissipation_bd(self.tables, c)
        rec = DiagnosticsRecord(
            t=state.t,
            mass=mass,
            c1=float(c[1]),
            V=free_energy(c, self.db),
            F_z=self._f_z(c),
            D_CF=dcf,
            D_BD=dbd,
            M_2mlambda=float(np.sum(i ** (2.0 - self.lam) * c[1:])),
            dist_eq=float(np.sum(i * np.abs(c[1:] - self._q)))
            + self._dist_tail,
            tail_mass=float(np.sum(i[n // 2:] * c[n // 2 + 1:])),
            clamped_mass=stats.clamped_mass,
            positive=bool(np.all(c[1:] > 0.0)),
            log_clamps=ncl,
        )
        self.records.append(rec)


@dataclass
class HTheoremReport:
    v_monotone_ok: bool
    worst_v_increase: float
    fd_ok: bool
    worst_fd_rel_err: float
    worst_fd_t: float | None
    n_fd_checked: int
    n_skipped_flagged: int
    n_skipped_floor: int
    violations: list = field(default_factory=list)


def h_theorem_check(records, rtol=1e-8, fd_rel_tol=1e-3, dcf_floor=1e-8,
                    v_slack_factor=10.0):
    """Verify dV/dt = -D_CF along a recorded trajectory.

    (a) V must be non-increasing between consecutive records up to
    ``v_slack_factor * rtol * |V|``;
    (b) the centered difference (V_{k+1} - V_{k-1}) / (t_{k+1} - t_{k-1})
    must match -D_CF(t_k) within ``fd_rel_tol`` relative wherever
    |D_CF(t_k)| > ``dcf_floor``.

    Windows touching pre-positivity records are skipped: with exact zeros
    present V has a logarithmic singularity at t = 0, so no cadence
    resolves it.  Returns the worst violations found.
    """
    recs = sorted(records, key=lambda r: r.t)
    worst_inc = -math.inf
    violations = []
    for r0, r1 in zip(recs[:-1], recs[1:]):
        slack = v_slack_factor * rtol * max(abs(r0.V), abs(r1.V))
        inc = r1.V - r0.V
        worst_inc = max(worst_inc, inc - slack)
        if inc > slack:
            violations.append(("V-increase", r1.t, inc))
    v_ok = worst_inc <= 0.0

    worst_rel = 0.0
    worst_t = None
    checked = 0
    skipped_flag = 0
    skipped_floor = 0
    for k in range(1, len(recs) - 1):
        r0, r1, r2 = recs[k - 1], recs[k], recs[k + 1]
        if not (r0.positive and r1.positive and r2.positive):
            skipped_flag += 1
            continue
        if abs(r1.D_CF) <= dcf_floor:
            skipped_floor += 1
            continue
        fd = (r2.V - r0.V) / (r2.t - r0.t)
        rel = abs(fd + r1.D_CF) / abs(r1.D_CF)
        checked += 1
        if rel > worst_rel:
            worst_rel = rel
            worst_t = r1.t
        if rel > fd_rel_tol:
            violations.append(("FD-mismatch", r1.t, rel))
    return HTheoremReport(
        v_monotone_ok=v_ok,
        worst_v_increase=worst_inc,
        fd_ok=worst_rel <= fd_rel_tol,
        worst_fd_rel_err=worst_rel,
        worst_fd_t=worst_t,
        n_fd_checked=checked,
        n_skipped_flagged=skipped_flag,
        n_skipped_floor=skipped_floor,
        violations=violations,
    )
