"""Detailed-balance sequence, critical mass, and equilibrium profiles.

The sequence Q_i (with Q_1 = 1) satisfying a(i,j) Q_i Q_j = b(i,j) Q_{i+j}
is built from the one-step recursion at j = 1 and kept in log space: for the
reference kernel log Q_i grows linearly in i, so Q_i itself overflows doubles
near i ~ 700.  Every series is assembled as exp(log_q[i] + i log z) and every
tail is certified:

* for z < z_s the monotonicity of Q_i z_s^i gives the geometric majorant
  Q_i z^i <= (Q_m z_s^m) (z/z_s)^i for i > m;
* at z = z_s a closed-form integral comparison is used when the kernel
  provides one, otherwise an observed-ratio bound (flagged as such).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (DetailedBalanceError, DomainError, EstimationFailedError,
                     SupercriticalMassError)


@dataclass
class DBSequence:
    """log Q_i for i = 1..n_max (entry 0 unused) plus critical data.

    Treat as immutable once :func:`build_db` has filled ``z_s`` and
    ``rho_s``; all operations are pure and reentrant.
    """

    log_q: np.ndarray
    kernel: object | None = None
    z_s: float | None = None
    z_s_uncertainty: float | None = None
    rho_s: float | None = None            # certified partial sum, or math.inf
    rho_s_tail_bound: float | None = None

    @property
    def n_max(self):
        return len(self.log_q) - 1

    def log_qzs(self, i):
        """log(Q_i z_s^i), the scale-invariant majorant sequence."""
        i = np.asarray(i)
        return self.log_q[i] + i * math.log(self.z_s)

    @property
    def rho_s_bracket(self):
        """Certified [lower, upper] bracket for the critical mass."""
        if self.rho_s is None:
            return None
        if math.isinf(self.rho_s):
            return (math.inf, math.inf)
        return (self.rho_s, self.rho_s + self.rho_s_tail_bound)


@dataclass
class ZsEstimate:
    value: float
    uncertainty: float
    method: str                 # "closed-form" | "richardson"


@dataclass
class RhoSEstimate:
    value: float                # certified partial sum (lower bound), or inf
    tail_bound: float
    diverged: bool
    certified: bool
    note: str = ""


@dataclass
class EquilibriumProfile:
    z: float
    profile: np.ndarray         # c_i = Q_i z^i for i = 1..n, entry 0 unused
    mass: float                 # sum_{i<=n} i Q_i z^i
    tail_mass_bound: float      # certified bound on sum_{i>n} i Q_i z^i
    tol_met: bool = True


def build_Q(kernel, n_max, check_to=256, residual_tol=1e-8):
    """Build log Q_i from the j = 1 detailed-balance recursion.

    log Q_{i+1} = log Q_i + log a(i,1) - log b(i,1), Q_1 = 1.  The full
    two-dimensional relation is then verified on i + j <= min(n_max, check_to)
    and a residual above ``residual_tol`` raises DetailedBalanceError: the
    one-step recursion is only consistent when the kernel really has detailed
    balance.
    """
    if n_max < 2:
        raise ValueError(f"n_max must be >= 2, got {n_max}")
    rows = np.arange(1, n_max, dtype=np.int64)
    a1 = np.asarray(kernel.a(rows, 1), dtype=float)
    b1 = np.asarray(kernel.b(rows, 1), dtype=float)
    if np.any(b1 <= 0) or np.any(a1 <= 0):
        i_bad = int(rows[np.argmax((b1 <= 0) | (a1 <= 0))])
        raise DetailedBalanceError(
            f"a({i_bad},1) or b({i_bad},1) vanishes: recursion underdetermined")
    log_q = np.zeros(n_max + 1)
    log_q[2:] = np.cumsum(np.log(a1) - np.log(b1))
    db = DBSequence(log_q=log_q, kernel=kernel)

    m = min(n_max, check_to)
    grid = np.arange(1, m, dtype=np.int64)
    I, J = np.meshgrid(grid, grid, indexing="ij")
    tri = (I + J <= m) & (I <= J)
    Ii, Jj = I[tri], J[tri]
    A = np.asarray(kernel.a(Ii, Jj), dtype=float)
    B = np.asarray(kernel.b(Ii, Jj), dtype=float)
    if np.any((A > 0) != (B > 0)):
        k = int(np.argmax((A > 0) != (B > 0)))
        raise DetailedBalanceError(
            f"kernel inconsistent with detailed balance: exactly one of "
            f"a({Ii[k]},{Jj[k]}), b({Ii[k]},{Jj[k]}) vanishes")
    pos = (A > 0) & (B > 0)
    lr = (np.log(A[pos]) + log_q[Ii[pos]] + log_q[Jj[pos]]
          - np.log(B[pos]) - log_q[Ii[pos] + Jj[pos]])
    res = float(np.max(np.abs(np.expm1(lr)))) if lr.size else 0.0
    if res > residual_tol:
        k = int(np.argmax(np.abs(np.expm1(lr))))
        raise DetailedBalanceError(
            f"2-D detailed-balance residual {res:.3e} exceeds "
            f"{residual_tol:.1e} (worst pair ({Ii[pos][k]},{Jj[pos][k]}))")
    return db


def estimate_zs(db, prefer_closed_form=True, richardson_tol=0.05):
    """Estimate z_s from lim Q_j^{1/j} = 1/z_s.

    Uses the kernel's closed form when available; otherwise Richardson
    extrapolation of -log Q_j / j in 1/j over j in {n/4, n/2, n}.  The
    reported uncertainty is the spread of the last two extrapolants; a
    spread above ``richardson_tol`` (in log-z units) raises
    EstimationFailedError carrying the partial extrapolants.
    """
    if prefer_closed_form and db.kernel is not None:
        zs = db.kernel.closed_form_zs()
        if zs is not None:
            return ZsEstimate(value=float(zs), uncertainty=0.0,
                              method="closed-form")
    n = db.n_max
    if n < 64:
        raise DomainError(f"n_max >= 64 required for extrapolation, got {n}")
    j1, j2, j3 = n // 4, n // 2, n
    v = [-db.log_q[j] / j for j in (j1, j2, j3)]
    r12 = 2 * v[1] - v[0]
    r23 = 2 * v[2] - v[1]
    spread = abs(r23 - r12)
    if spread > richardson_tol * max(1.0, abs(r23)):
        raise EstimationFailedError(
            f"z_s extrapolation oscillates: extrapolants {r12:.6g}, {r23:.6g}",
            partial={"v": v, "extrapolants": (r12, r23)})
    value = math.exp(r23)
    return ZsEstimate(value=value,
                      uncertainty=abs(math.exp(r23) - math.exp(r12)),
                      method="richardson")


def _geom_tail_factor(x, m, weight):
    """sum_{i>m} i^w x^i / x^(m+1) for x in (0,1) and w in {0,1,2}."""
    if weight == 0:
        return 1.0 / (1.0 - x)
    if weight == 1:
        return ((m + 1) - m * x) / (1.0 - x) ** 2
    if weight == 2:
        mp = m + 1.0
        num = (mp * (mp - m * x) * (1 - x) - m * x * (1 - x)
               + 2 * x * (mp - m * x))
        return num / (1.0 - x) ** 3
    raise ValueError(f"unsupported weight {weight}")


def series_tail_bound(db, z, weight, m):
    """Certified bound on sum_{i>m} i^weight Q_i z^i.

    For z < z_s: geometric majorant from the monotonicity of Q_i z_s^i.
    For z = z_s: kernel closed form when available, else an observed-ratio
    geometric bound (or inf when the observed ratios do not certify decay).
    """
    zs = db.z_s
    if z > zs * (1 + 1e-12):
        raise DomainError(f"z={z} exceeds z_s={zs}")
    if z <= 0:
        return 0.0
    x = z / zs
    if x < 1.0 - 1e-12:
        log_qm = float(db.log_qzs(m))
        lt = log_qm + (m + 1) * math.log(x) + math.log(_geom_tail_factor(x, m, weight))
        return math.exp(lt) if lt < 700.0 else math.inf
    # z at (or numerically at) z_s
    if db.kernel is not None:
        bound = db.kernel.qzs_tail_bound(m, weight)
        if bound is not None:
            return bound
    # observed-ratio fallback: assumes the worst recent ratio persists
    lo = max(1, m - max(16, m // 4))
    lq = db.log_qzs(np.arange(lo, m + 1))
    ratios = np.diff(lq)
    r = math.exp(float(np.max(ratios))) if len(ratios) else 1.0
    if r >= 1.0 - 1e-9:
        return math.inf
    qm = math.exp(float(db.log_qzs(m)))
    return qm * r * _geom_tail_factor(r, m, weight)


def weighted_partial_sum(db, z, weight, lo, hi):
    """sum_{lo<=i<=hi} i^weight Q_i z^i, summed directly (no cancellation)."""
    if z <= 0.0 or hi < lo:
        return 0.0
    i = np.arange(lo, hi + 1, dtype=float)
    log_terms = db.log_q[lo:hi + 1] + i * math.log(z)
    if weight:
        log_terms = log_terms + weight * np.log(i)
    with np.errstate(over="raise"):
        return float(np.sum(np.exp(log_terms)))


def weighted_series(db, z, weight, m=None):
    """(sum_{i<=m} i^w Q_i z^i, certified bound on the rest).

    ``m`` defaults to the full table; terms are accumulated from the small
    end (ascending i), which is a fixed deterministic order.
    """
    if z < 0:
        raise DomainError(f"z must be nonnegative, got {z}")
    if z == 0.0:
        return 0.0, 0.0
    m = db.n_max if m is None else min(m, db.n_max)
    return (weighted_partial_sum(db, z, weight, 1, m),
            series_tail_bound(db, z, weight, m))


def partition_sum(db, z, tol=1e-10):
    """sum_i Q_i z^i with certified remainder.

    Requires 0 <= z <= z_s.  At z = z_s the sum may still converge even when
    rho_s = +inf (the mass series is heavier); the tail machinery decides.
    Returns (value, tail_bound); tail_bound may exceed ``tol``, in which case
    the pair is a bracket rather than a point value.
    """
    if z < 0 or z > db.z_s * (1 + 1e-12):
        raise DomainError(f"z={z} outside [0, z_s={db.z_s}]")
    return weighted_series(db, min(z, db.z_s), 0)


def compute_rho_s(db, tol=1e-8):
    """Critical mass rho_s = sum_j j Q_j z_s^j with a certified tail bound.

    Divergence (e.g. Q_j z_s^j not decaying) is reported with
    ``diverged=True`` and value +inf.  When the tail cannot be certified
    below ``tol`` within n_max, the (partial, tail_bound) pair is returned
    as a bracket with ``certified=False`` -- callers treat
    [value, value + tail_bound] as the admissible range.
    """
    m = db.n_max
    i = np.arange(1, m + 1, dtype=float)
    log_terms = db.log_qzs(np.arange(1, m + 1)) + np.log(i)
    if float(np.max(log_terms)) > 700.0:
        return RhoSEstimate(value=math.inf, tail_bound=math.inf, diverged=True,
                            certified=True,
                            note="terms overflow doubles: mass series diverges")
    partial = float(np.sum(np.exp(log_terms)))
    tail = series_tail_bound(db, db.z_s, 1, m)
    if math.isinf(tail):
        # decide divergence from the term behavior at the top of the range
        window = log_terms[-max(8, m // 8):]
        increasing = bool(np.all(np.diff(window) >= -1e-14))
        if increasing or log_terms[-1] > math.log(tol):
            return RhoSEstimate(value=math.inf, tail_bound=math.inf,
                                diverged=True, certified=True,
                                note="terms do not decay: mass series diverges")
        return RhoSEstimate(value=partial, tail_bound=math.inf, diverged=False,
                            certified=False,
                            note="tail not certifiable within n_max")
    certified = tail < tol
    note = "" if certified else f"tail bound {tail:.3g} exceeds tol {tol:.3g}"
    return RhoSEstimate(value=partial, tail_bound=tail, diverged=False,
                        certified=certified, note=note)


def build_db(kernel, n_max, rho_s_tol=1e-8, check_to=256):
    """Build the sequence and fill z_s and rho_s in one call."""
    db = build_Q(kernel, n_max, check_to=check_to)
    est = estimate_zs(db)
    db.z_s = est.value
    db.z_s_uncertainty = est.uncertainty
    rs = compute_rho_s(db, tol=rho_s_tol)
    db.rho_s = rs.value
    db.rho_s_tail_bound = rs.tail_bound
    return db


def equilibrium_profile(db, z, n):
    """c_i = Q_i z^i for i <= n, with its mass and certified tail."""
    n = min(n, db.n_max)
    out = np.zeros(n + 1)
    i = np.arange(1, n + 1, dtype=float)
    if z > 0:
        with np.errstate(over="raise"):
            out[1:] = np.exp(db.log_q[1:n + 1] + i * math.log(z))
    mass = float(np.sum(i * out[1:]))
    tail = series_tail_bound(db, z, 1, n) if z > 0 else 0.0
    return EquilibriumProfile(z=z, profile=out, mass=mass, tail_mass_bound=tail)


def solve_z(db, rho, tol=1e-10, n=None):
    """Monomer parameter z of the equilibrium with mass ``rho``.

    Bisection on the strictly increasing map z -> sum_i i Q_i z^i (each
    evaluation carries a certified tail), then Newton refinement once the
    bracket is within 1e-3 z_s; capped at 200 Newton iterations.  The mass
    derivative vanishes at z = 0 and may blow up at z_s, which is why
    bisection goes first.

    rho > rho_s (above the certified upper bracket) raises
    SupercriticalMassError: callers must use the z_s profile instead.
    rho inside [rho_s, rho_s + tail] or exactly critical returns the z_s
    profile with ``tol_met=False`` when the tail cannot certify ``tol``.
    """
    if rho < 0:
        raise DomainError(f"rho must be nonnegative, got {rho}")
    n = db.n_max if n is None else n
    if rho == 0.0:
        return EquilibriumProfile(z=0.0, profile=np.zeros(n + 1), mass=0.0,
                                  tail_mass_bound=0.0)
    zs = db.z_s
    if db.rho_s is not None and not math.isinf(db.rho_s):
        hi_mass = db.rho_s + db.rho_s_tail_bound
        if rho > hi_mass:
            raise SupercriticalMassError(
                f"rho={rho} exceeds critical mass bracket "
                f"[{db.rho_s:.6g}, {hi_mass:.6g}]")
        if rho >= db.rho_s:
            prof = equilibrium_profile(db, zs, n)
            prof.tol_met = db.rho_s_tail_bound < tol
            return prof

    def mass_at(z):
        val, bound = weighted_series(db, z, 1)
        return val, bound

    # expand a strictly-subcritical upper bracket (mass -> inf as z -> z_s
    # when rho_s diverges, so this always terminates)
    lo, hi = 0.0, zs * (1 - 1e-9)
    v_hi, b_hi = mass_at(hi)
    while v_hi < rho:
        gap = zs - hi
        hi = zs - gap * 1e-3
        v_hi, b_hi = mass_at(hi)
        if zs - hi < 1e-15 * zs:
            prof = equilibrium_profile(db, zs, n)
            prof.tol_met = False
            return prof

    while hi - lo > 1e-3 * zs:
        mid = 0.5 * (lo + hi)
        v, _ = mass_at(mid)
        if v < rho:
            lo = mid
        else:
            hi = mid

    z = 0.5 * (lo + hi)
    for _ in range(200):
        v, _ = mass_at(z)
        err = v - rho
        if abs(err) < tol:
            break
        d2, _ = weighted_series(db, z, 2)
        deriv = d2 / z
        step = err / deriv
        z_new = z - step
        if not (lo < z_new < hi):       # Newton left the bracket: bisect
            if err > 0:
                hi = z
            else:
                lo = z
            z_new = 0.5 * (lo + hi)
        else:
            if err > 0:
                hi = z
            else:
                lo = z
        z = z_new
    prof = equilibrium_profile(db, z, n)
    prof.tol_met = abs(mass_at(z)[0] - rho) < tol
    return prof


def K_z(z, z_s):
    """Proximity constant 1/(1 - sqrt(z/z_s)) - 1 for 0 < z < z_s."""
    if not 0.0 < z < z_s:
        raise DomainError(f"K_z requires 0 < z < z_s, got z={z}, z_s={z_s}")
    return 1.0 / (1.0 - math.sqrt(z / z_s)) - 1.0
