"""Checkable evaluators for every explicit inequality, plus ratio probes.

Each evaluator returns a :class:`ProbeResult` carrying the two sides, the
margin rhs - lhs, and a witness snapshot of the inputs.  Inequalities whose
constants are explicit in their proofs (tail sum, square-log, power,
f-difference, x log^2 x, the two moment-log lemmas, and the explicit chain
inside the mass-difference estimate) are asserted by the sweep runner with
margin >= -1e-12 * scale; estimates with non-explicit constants
(relative-energy and supercritical-dissipation) are monitored as ratios.

Sweeps are deterministic: trial streams derive from a SeedSequence spawn
tree, so a seed reproduces every witness bit for bit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import zeta

from .dynamics import moment
from .equilibrium import (DBSequence, series_tail_bound,
                          weighted_partial_sum, weighted_series)
from .errors import DomainError, PreconditionError
from .functionals import (dissipation_bd, proximity_bound_check,
                          relative_energy_series)

MARGIN_SLACK = 1e-12


@dataclass
class ProbeResult:
    lhs: float
    rhs: float
    witness: dict = field(default_factory=dict)
    degenerate: bool = False

    @property
    def margin(self):
        return self.rhs - self.lhs

    @property
    def ratio(self):
        if self.rhs <= 0:
            return math.nan
        return self.lhs / self.rhs

    @property
    def scale(self):
        return max(abs(self.lhs), abs(self.rhs), 1.0)

    @property
    def ok(self):
        """Margin nonnegative up to floating-point slack."""
        return self.margin >= -MARGIN_SLACK * self.scale


def square_log_bound(x, y):
    """(x - y)^2 / max(x, y) <= (x - y)(log x - log y) for x, y > 0."""
    if x <= 0 or y <= 0:
        raise DomainError(f"positive arguments required, got {x}, {y}")
    lhs = (x - y) ** 2 / max(x, y)
    rhs = (x - y) * (math.log(x) - math.log(y))
    return ProbeResult(lhs=lhs, rhs=rhs, witness={"x": x, "y": y})


def power_inequality(lam, k, x, y):
    """(x^lam + y^lam)((x+y)^k - x^k - y^k) <= C_{k,lam} (xy)^((lam+k)/2).

    C_{k,lam} = (1 + 2^lam) 2^(k-1) k, valid for 0 <= lam <= 1 and
    1 <= k <= 2 - lam, x, y >= 0.
    """
    if not (0.0 <= lam <= 1.0 and 1.0 <= k <= 2.0 - lam):
        raise DomainError(f"need 0<=lam<=1 and 1<=k<=2-lam, got lam={lam}, k={k}")
    if x < 0 or y < 0:
        raise DomainError(f"nonnegative arguments required, got {x}, {y}")
    c_kl = (1.0 + 2.0 ** lam) * 2.0 ** (k - 1.0) * k
    lhs = (x ** lam + y ** lam) * ((x + y) ** k - x ** k - y ** k)
    rhs = c_kl * (x * y) ** (0.5 * (lam + k))
    return ProbeResult(lhs=lhs, rhs=rhs,
                       witness={"lam": lam, "k": k, "x": x, "y": y,
                                "C": c_kl})


def f_difference_bound(x, y):
    """f(x) - f(y) <= (x-y)(log x - log y) + (x-y) log max(x, y)."""
    if x <= 0 or y <= 0:
        raise DomainError(f"positive arguments required, got {x}, {y}")

    def f(u):
        return u * math.log(u) - u + 1.0

    lhs = f(x) - f(y)
    rhs = (x - y) * (math.log(x) - math.log(y)) \
        + (x - y) * math.log(max(x, y))
    return ProbeResult(lhs=lhs, rhs=rhs, witness={"x": x, "y": y})


def xlogx_bound(x):
    """x (log x)^2 <= 4 (x log x - x + 1) max(1, log x) for x > 0."""
    if x <= 0:
        raise DomainError(f"positive argument required, got {x}")
    lhs = x * math.log(x) ** 2
    rhs = 4.0 * (x * math.log(x) - x + 1.0) * max(1.0, math.log(x))
    return ProbeResult(lhs=lhs, rhs=rhs, witness={"x": x})


def tail_sum_bound(db, c1, j):
    """sum_{i>j} i Q_i c1^i <= 3 (z_s/(z_s - c1))^2 j Q_{j+1} c1^{j+1}.

    The left side is the certified upper value (series through n_max plus
    the geometric remainder), so a nonnegative margin is meaningful.
    """
    if not 0.0 < c1 < db.z_s:
        raise DomainError(f"need 0 < c1 < z_s, got c1={c1}, z_s={db.z_s}")
    if j < 1 or j + 1 > db.n_max:
        raise DomainError(f"need 1 <= j < n_max, got j={j}")
    lhs = weighted_partial_sum(db, c1, 1, j + 1, db.n_max) \
        + series_tail_bound(db, c1, 1, db.n_max)
    log_rhs_term = db.log_q[j + 1] + (j + 1) * math.log(c1)
    rhs = 3.0 * (db.z_s / (db.z_s - c1)) ** 2 * j * math.exp(log_rhs_term)
    return ProbeResult(lhs=lhs, rhs=rhs,
                       witness={"c1": c1, "j": j, "z_s": db.z_s})


def moment_log_bound_Q(c, db, k, c_upper, c_lower):
    """sum_i i^k c_i |log Q_i| <= max(|log C1|, |log C2|) sum_i i^(k+1) c_i.

    Requires the declared bounds C1 >= Q_i^{1/i} >= C2 > 0 on the support
    of c (verified; violation raises PreconditionError).
    """
    c = np.asarray(c, dtype=float)
    n = len(c) - 1
    if c_lower <= 0 or c_upper < c_lower:
        raise DomainError(f"need C1 >= C2 > 0, got {c_upper}, {c_lower}")
    i = np.arange(1, n + 1, dtype=float)
    lq = db.log_q[1:n + 1]
    support = c[1:] > 0
    qroot = lq[support] / i[support]
    if np.any(qroot > math.log(c_upper) + 1e-12) or \
            np.any(qroot < math.log(c_lower) - 1e-12):
        raise PreconditionError(
            "Q_i^{1/i} leaves [C2, C1] on the support of c")
    lhs = float(np.sum(i ** k * c[1:] * np.abs(lq)))
    const = max(abs(math.log(c_upper)), abs(math.log(c_lower)))
    rhs = const * float(np.sum(i ** (k + 1) * c[1:]))
    return ProbeResult(lhs=lhs, rhs=rhs,
                       witness={"k": k, "C1": c_upper, "C2": c_lower})


_XLOGX_SUP = None


def _xlogx_envelope_sup():
    """sup_{w>0} w / (2 cosh w), solved once: tanh(w) = 1/w."""
    global _XLOGX_SUP
    if _XLOGX_SUP is None:
        w = brentq(lambda t: math.tanh(t) * t - 1.0, 0.5, 3.0, xtol=1e-15)
        _XLOGX_SUP = w / (2.0 * math.cosh(w))
    return _XLOGX_SUP


def moment_log_bound_c(c, k, m):
    """sum_i i^k c_i |log c_i| <= C(k, m, M_m) for m > k, m >= 1.

    Constructive constant from the proof recipe with eps = (m - k)/(4 m):
    |x log x| <= C_eps (x^(1-eps) + x^(1+eps)) where
    C_eps = sup_x |x log x|/(x^(1-eps) + x^(1+eps)) = sup_w w/(2 cosh w) / eps
    (evaluated numerically once), then Hoelder on the first sum (the zeta
    exponent is -3m by this choice of eps) and c_i <= M_m on the second:

        rhs = C_eps (M_m^(1-eps) zeta(3m)^eps + M_m^(1+eps)).
    """
    if not (m > k and m >= 1):
        raise DomainError(f"need m > k and m >= 1, got k={k}, m={m}")
    c = np.asarray(c, dtype=float)
    n = len(c) - 1
    i = np.arange(1, n + 1, dtype=float)
    pos = c[1:] > 0
    lhs = float(np.sum((i ** k * c[1:])[pos] * np.abs(np.log(c[1:][pos]))))
    mm = float(np.sum(i ** m * c[1:]))
    if mm == 0.0:
        return ProbeResult(lhs=lhs, rhs=0.0, witness={"k": k, "m": m, "M_m": 0.0})
    eps = (m - k) / (4.0 * m)
    c_eps = _xlogx_envelope_sup() / eps
    z_exp = 3.0 * m          # -(k - m(1-eps))/eps with this eps
    rhs = c_eps * (mm ** (1.0 - eps) * float(zeta(z_exp)) ** eps
                   + mm ** (1.0 + eps))
    return ProbeResult(lhs=lhs, rhs=rhs,
                       witness={"k": k, "m": m, "eps": eps, "C_eps": c_eps,
                                "M_m": mm})


def coag_lower_constant(tables):
    """K_1 = min_i a(i,1)/i^lam over the table range."""
    n = tables.n
    i = np.arange(1, n, dtype=float)
    return float(np.min(tables.a1[1:] / i ** tables.kernel.lam))


def mass_difference_probe(tables, db, c):
    """Mass above the c1-equilibrium against sqrt(D) sqrt(M_{2-lam}).

    lhs  = sum_i i c_i - sum_i i Q_i c1^i   (certified lower series for the
           subtrahend, so lhs is an upper value);
    rhs  = (C1 / sqrt(z_s K_1)) sqrt(D) sqrt(M_{2-lam})  with
           C1 = 3 z_s^2/(z_s - c1)^2 -- the proof's own explicit chain, so
           margin >= 0 is asserted;
    ratio monitors lhs / (sqrt(D) sqrt(M)) for the non-explicit constant.
    """
    c = np.asarray(c, dtype=float)
    c1 = float(c[1])
    if not 0.0 < c1 < db.z_s:
        raise DomainError(f"need 0 < c1 < z_s, got c1={c1}")
    i = np.arange(1, len(c), dtype=float)
    mass = float(np.sum(i * c[1:]))
    rho1, _ = weighted_series(db, c1, 1)
    lhs = mass - rho1
    d_bd = dissipation_bd(tables, c)
    m2l = moment(c, 2.0 - tables.kernel.lam)
    core = math.sqrt(max(d_bd, 0.0)) * math.sqrt(max(m2l, 0.0))
    c1_const = 3.0 * db.z_s ** 2 / (db.z_s - c1) ** 2
    k1 = coag_lower_constant(tables)
    chain = c1_const / math.sqrt(db.z_s * k1)
    return ProbeResult(lhs=lhs, rhs=chain * core,
                       witness={"c1": c1, "mass": mass, "D_BD": d_bd,
                                "M_2mlam": m2l, "core": core,
                                "chain_constant": chain},
                       degenerate=(core == 0.0))


def relative_energy_probe(tables, db, c):
    """F_{c1}(c) against max(sqrt(D) sqrt(M_{2-lam}), D): ratio monitor.

    The constant here is non-explicit in the underlying estimate, so only
    the ratio lhs/rhs is meaningful; sweeps check that it stays bounded,
    not that any fixed margin holds.
    """
    c = np.asarray(c, dtype=float)
    c1 = float(c[1])
    if not 0.0 < c1 < db.z_s:
        raise DomainError(f"need 0 < c1 < z_s, got c1={c1}")
    F = relative_energy_series(c, db, c1)
    d_bd = dissipation_bd(tables, c)
    m2l = moment(c, 2.0 - tables.kernel.lam)
    rhs = max(math.sqrt(max(d_bd, 0.0)) * math.sqrt(max(m2l, 0.0)), d_bd)
    return ProbeResult(lhs=F, rhs=rhs,
                       witness={"c1": c1, "D_BD": d_bd, "M_2mlam": m2l},
                       degenerate=(rhs < 1e-20 or F < 1e-20))


def supercritical_dissipation_probe(tables, db, c, rho):
    """Strict positivity of D when c1 sits in the supersaturated band.

    Preconditions: mass(c) = rho < rho_s and c1 >= z_s - (z_s - z(rho))/4.
    The lower constant here is non-explicit in the underlying estimate, so
    the probe reports D_BD for sweep-level documentation of the infimum.
    """
    from .equilibrium import solve_z

    c = np.asarray(c, dtype=float)
    i = np.arange(1, len(c), dtype=float)
    mass = float(np.sum(i * c[1:]))
    if abs(mass - rho) > 1e-8 * max(rho, 1.0):
        raise PreconditionError(f"mass(c)={mass} differs from rho={rho}")
    if not math.isinf(db.rho_s) and rho >= db.rho_s:
        raise PreconditionError(f"rho={rho} not strictly below rho_s={db.rho_s}")
    z = solve_z(db, rho).z
    threshold = db.z_s - 0.25 * (db.z_s - z)
    c1 = float(c[1])
    if c1 < threshold * (1.0 - 1e-12):
        raise PreconditionError(
            f"c1={c1} below supersaturation threshold {threshold}")
    d_bd = dissipation_bd(tables, c)
    return ProbeResult(lhs=0.0, rhs=d_bd,
                       witness={"c1": c1, "z": z, "threshold": threshold,
                                "rho": rho})


# ----------------------------------------------------------------------
# seeded random generators for the sweeps
# ----------------------------------------------------------------------

def spawn_rngs(seed, count):
    """Deterministic independent generators from one seed."""
    return [np.random.default_rng(s)
            for s in np.random.SeedSequence(seed).spawn(count)]


def random_db_sequence(rng, n_max=1500):
    """Synthetic detailed-balance data satisfying the monotonicity hypothesis.

    Draws z_s and a non-increasing log(Q_i z_s^i) with one of three decay
    shapes: geometric, stretched-exponential, or a random mixture.
    """
    zs = float(rng.uniform(0.3, 3.0))
    i = np.arange(1, n_max + 1, dtype=float)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        dec = np.full(n_max - 1, rng.uniform(0.01, 0.8))
    elif kind == 1:
        mu = rng.uniform(0.3, 0.9)
        scale = rng.uniform(0.5, 3.0)
        lvl = -scale * i ** mu
        dec = -np.diff(lvl)
    else:
        dec = rng.exponential(rng.uniform(0.02, 0.5), size=n_max - 1)
    log_qzs = math.log(zs) - np.concatenate([[0.0], np.cumsum(dec)])
    log_q = np.concatenate([[0.0], log_qzs - i * math.log(zs)])
    db = DBSequence(log_q=log_q, kernel=None, z_s=zs, z_s_uncertainty=0.0)
    return db


def random_positive_state(rng, db, n, c1_frac_range=(0.05, 0.95)):
    """Strictly positive random state with c1 pinned inside (0, z_s).

    Stratified by c1/z_s, by shape (equilibrium-times-noise, geometric,
    polynomial-times-exponential), and by noise amplitude, mirroring the
    regimes the convergence proofs distinguish.
    """
    frac = float(rng.uniform(*c1_frac_range))
    c1 = frac * db.z_s
    i = np.arange(1, n + 1, dtype=float)
    kind = int(rng.integers(0, 3))
    if kind == 0:
        sigma = rng.uniform(0.02, 1.5)
        lq = db.log_q[1:n + 1] + i * math.log(c1)
        lq = np.maximum(lq, -600.0)
        c = np.exp(lq + rng.normal(0.0, sigma, size=n))
    elif kind == 1:
        r = rng.uniform(0.2, 0.95)
        c = (c1 / r) * r ** i
    else:
        p = rng.uniform(0.0, 2.0)
        q = rng.uniform(0.05, 1.0)
        raw = i ** p * np.exp(-q * i)
        c = raw * rng.uniform(0.1, 10.0)
    out = np.zeros(n + 1)
    out[1:] = np.maximum(c, 1e-280)
    out[1] = c1
    return out


@dataclass
class SweepResult:
    name: str
    trials: int
    asserted: bool
    min_norm_margin: float
    max_ratio: float
    violations: int
    worst_witness: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return (not self.asserted) or self.violations == 0

    def to_json(self):
        return {
            "name": self.name, "trials": self.trials,
            "asserted": self.asserted,
            "min_norm_margin": self.min_norm_margin,
            "max_ratio": self.max_ratio, "violations": self.violations,
            "worst_witness": {k: (float(v) if np.isscalar(v) else v)
                              for k, v in self.worst_witness.items()},
            "pass": self.ok, **self.extra,
        }


def _collect(name, results, asserted=True, extra=None):
    min_nm = math.inf
    max_ratio = -math.inf
    worst = {}
    violations = 0
    for res in results:
        nm = res.margin / res.scale
        if nm < min_nm:
            min_nm = nm
            worst = res.witness
        if not res.degenerate and not math.isnan(res.ratio):
            max_ratio = max(max_ratio, res.ratio)
        if asserted and not res.ok:
            violations += 1
    return SweepResult(name=name, trials=len(results), asserted=asserted,
                       min_norm_margin=min_nm, max_ratio=max_ratio,
                       violations=violations, worst_witness=worst,
                       extra=extra or {})


def run_probe_suite(tables, db, trials=10000, seed=42, suites=None):
    """Run the seeded sweeps; returns a list of SweepResult.

    ``tables``/``db`` provide the preset-kernel context for the state
    probes; the lemma sweeps build their own synthetic sequences.  The
    explicit-constant suites are asserted (margin >= -1e-12 scale); the
    non-explicit ones are recorded for documentation.
    """
    all_suites = ["square_log", "power", "f_difference", "xlogx",
                  "tail_sum", "moment_log_q", "moment_log_c",
                  "mass_difference", "proximity", "relative_energy",
                  "supercritical"]
    if suites is None or suites == "all":
        suites = all_suites
    unknown = set(suites) - set(all_suites)
    if unknown:
        raise DomainError(f"unknown probe suites: {sorted(unknown)}")
    rngs = dict(zip(all_suites, spawn_rngs(seed, len(all_suites))))
    out = []

    if "square_log" in suites:
        rng = rngs["square_log"]
        xs = np.exp(rng.uniform(math.log(1e-8), math.log(1e8), size=trials))
        ys = np.exp(rng.uniform(math.log(1e-8), math.log(1e8), size=trials))
        out.append(_collect("square_log",
                            [square_log_bound(x, y) for x, y in zip(xs, ys)]))

    if "power" in suites:
        rng = rngs["power"]
        res = []
        for _ in range(trials):
            lam = float(rng.uniform(0.0, 1.0))
            k = float(rng.uniform(1.0, 2.0 - lam))
            x = float(np.exp(rng.uniform(math.log(1e-6), math.log(1e6))))
            y = float(np.exp(rng.uniform(math.log(1e-6), math.log(1e6))))
            if rng.uniform() < 0.02:
                x = 0.0
            res.append(power_inequality(lam, k, x, y))
        out.append(_collect("power", res))

    if "f_difference" in suites:
        rng = rngs["f_difference"]
        res = [f_difference_bound(
            float(np.exp(rng.uniform(math.log(1e-8), math.log(1e8)))),
            float(np.exp(rng.uniform(math.log(1e-8), math.log(1e8)))))
            for _ in range(trials)]
        out.append(_collect("f_difference", res))

    if "xlogx" in suites:
        rng = rngs["xlogx"]
        res = [xlogx_bound(
            float(np.exp(rng.uniform(math.log(1e-8), math.log(1e8)))))
            for _ in range(trials)]
        out.append(_collect("xlogx", res))

    if "tail_sum" in suites:
        rng = rngs["tail_sum"]
        res = []
        for _ in range(trials):
            sdb = random_db_sequence(rng, n_max=1200)
            c1 = float(rng.uniform(0.05, 0.95)) * sdb.z_s
            j = int(np.exp(rng.uniform(0.0, math.log(1000.0))))
            res.append(tail_sum_bound(sdb, c1, j))
        out.append(_collect("tail_sum", res))

    if "moment_log_q" in suites:
        rng = rngs["moment_log_q"]
        res = []
        for _ in range(trials):
            sdb = random_db_sequence(rng, n_max=300)
            n = int(rng.integers(4, 256))
            c = np.zeros(n + 1)
            c[1:] = rng.exponential(1.0, size=n) * rng.uniform(1e-3, 10.0)
            i = np.arange(1, n + 1, dtype=float)
            qroot = np.exp(sdb.log_q[1:n + 1] / i)
            c_hi = float(np.max(qroot)) * (1.0 + rng.uniform(0.0, 1.0))
            c_lo = float(np.min(qroot)) * (1.0 - rng.uniform(0.0, 0.9))
            k = int(rng.integers(0, 2))
            res.append(moment_log_bound_Q(c, sdb, k, c_hi, c_lo))
        out.append(_collect("moment_log_q", res))

    if "moment_log_c" in suites:
        rng = rngs["moment_log_c"]
        res = []
        for _ in range(trials):
            n = int(rng.integers(2, 256))
            c = np.zeros(n + 1)
            c[1:] = rng.exponential(1.0, size=n) \
                * np.exp(rng.uniform(math.log(1e-6), math.log(1e3)))
            k = int(rng.integers(0, 2))
            m = float(rng.uniform(max(1.0, k + 0.5), 3.0))
            res.append(moment_log_bound_c(c, k, m))
        out.append(_collect("moment_log_c", res))

    def _padded(c):
        if len(c) == tables.n + 1:
            return c
        out_c = np.full(tables.n + 1, 1e-280)
        out_c[:len(c)] = c
        out_c[0] = 0.0
        return out_c

    if "mass_difference" in suites:
        rng = rngs["mass_difference"]
        res = []
        for _ in range(trials):
            n = int(rng.integers(8, tables.n + 1))
            c = _padded(random_positive_state(rng, db, n))
            res.append(mass_difference_probe(tables, db, c))
        out.append(_collect("mass_difference", res))

    if "proximity" in suites:
        rng = rngs["proximity"]
        res = []
        for _ in range(trials):
            n = int(rng.integers(8, tables.n + 1))
            c = random_positive_state(rng, db, n)
            mu = float(rng.uniform(0.02, 0.98))
            z = mu * db.z_s
            rho_z, _ = weighted_series(db, z, 1)
            i = np.arange(1, n + 1, dtype=float)
            ratio = float(rng.uniform(0.25, 2.0))
            c[1:] *= ratio * rho_z / float(np.sum(i * c[1:]))
            res.append(proximity_bound_check(c, db, z))
        out.append(_collect("proximity", res,
                            extra={"mass_ratio_range": [0.25, 2.0]}))

    if "relative_energy" in suites:
        rng = rngs["relative_energy"]
        res = []
        for _ in range(trials):
            n = int(rng.integers(8, tables.n + 1))
            c = _padded(random_positive_state(rng, db, n,
                                              c1_frac_range=(0.1, 0.9)))
            res.append(relative_energy_probe(tables, db, c))
        ratios = [r.ratio for r in res
                  if not r.degenerate and not math.isnan(r.ratio)]
        half = len(ratios) // 2
        batch_a = max(ratios[:half]) if ratios[:half] else math.nan
        batch_b = max(ratios[half:]) if ratios[half:] else math.nan
        out.append(_collect("relative_energy", res, asserted=False,
                            extra={"max_ratio_batch_a": batch_a,
                                   "max_ratio_batch_b": batch_b}))

    if "supercritical" in suites:
        rng = rngs["supercritical"]
        res = []
        n_sc = min(trials, 1000)
        rho_hi = db.rho_s if not math.isinf(db.rho_s) else 50.0
        for _ in range(n_sc):
            from .equilibrium import solve_z

            rho = float(rng.uniform(0.1, 0.9)) * rho_hi
            z = solve_z(db, rho).z
            lo = db.z_s - 0.25 * (db.z_s - z)
            c1 = float(rng.uniform(lo, db.z_s * 0.9999))
            n = tables.n
            zp = float(rng.uniform(0.3, 0.95)) * db.z_s
            i = np.arange(2, n + 1, dtype=float)
            shape = np.exp(db.log_q[2:n + 1] + i * math.log(zp))
            c = np.zeros(n + 1)
            c[1] = c1
            c[2:] = shape * (rho - c1) / float(np.sum(i * shape))
            res.append(supercritical_dissipation_probe(tables, db, c, rho))
        inf_d = min(r.rhs for r in res) if res else math.nan
        sr = _collect("supercritical", res, asserted=False,
                      extra={"min_D_BD": inf_d})
        sr.violations = sum(1 for r in res if r.rhs <= 0.0)
        sr.asserted = True        # strict positivity is asserted
        out.append(sr)

    return out
