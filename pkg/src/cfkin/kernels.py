"""Coagulation/fragmentation coefficient families and structural checks.

A kernel provides the symmetric nonnegative coefficients a(i, j) (merge rate
of an i- and a j-cluster) and b(i, j) (split rate of an (i+j)-cluster into an
i- and a j-piece).  Four families are implemented:

* :class:`PowerLawExpKernel` -- a(i,j) = C (i^lam + j^lam) with a Gibbs-factor
  fragmentation b(i,j) = a(i,j) exp(C' ((i+j)^mu - i^mu - j^mu)).
* :class:`BeckerDoringKernel` -- only monomer interactions are active.
* :class:`GeneralizedBDKernel` -- an inner kernel cut off when both cluster
  sizes exceed a threshold.
* :class:`TableKernel`       -- explicit finite coefficient matrices.

:class:`KernelTables` precomputes the coefficients on the truncated triangle
i + j <= N once per run; the O(N^2) right-hand side and the dissipation sums
read from these flat arrays.  :func:`validate_hypotheses` scans a kernel (and
its detailed-balance sequence) against the structural hypotheses H1..H6 and
reports fitted constants instead of requiring user input.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import KernelRangeError


class Kernel:
    """Base class: symmetric nonnegative coefficient family.

    Subclasses implement :meth:`a` and :meth:`b` accepting scalars or numpy
    arrays of cluster sizes (>= 1) and returning rates elementwise.
    """

    #: growth exponent used when scanning H1/H5; subclasses may override.
    lam: float = 0.0

    def a(self, i, j):
        raise NotImplementedError

    def b(self, i, j):
        raise NotImplementedError

    # Closed-form detailed-balance data, when the family admits one.
    def closed_form_log_q(self, i):
        """log Q_i in closed form, or None if the family has none."""
        return None

    def closed_form_zs(self):
        """Critical monomer concentration in closed form, or None."""
        return None

    def qzs_tail_bound(self, m, weight):
        """Certified bound on sum_{i>m} i^weight Q_i z_s^i, or None.

        Only families with closed-form Q can certify tails at z = z_s; the
        generic route in the equilibrium module falls back to an observed
        geometric-ratio bound.
        """
        return None

    def tables(self, n):
        return KernelTables.build(self, n)


class PowerLawExpKernel(Kernel):
    """Physically representative sum kernel with Gibbs-factor fragmentation.

    a(i,j) = coag_scale * (i^lam + j^lam)
    b(i,j) = a(i,j) * exp(gibbs_scale * ((i+j)^mu - i^mu - j^mu))

    with 0 <= lam <= 1, 0 < mu < 1 and positive scales.  The exponent in b is
    nonpositive (concavity of x^mu), so b <= a.  The family has closed-form
    detailed balance: log Q_i = gibbs_scale * (i - i^mu), z_s = e^{-gibbs_scale}.
    """

    def __init__(self, lam=0.5, coag_scale=1.0, gibbs_scale=1.0,
                 surface_exponent=0.5):
        if not 0.0 <= lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {lam}")
        if coag_scale <= 0:
            raise ValueError(f"coag_scale must be positive, got {coag_scale}")
        if gibbs_scale < 0:
            raise ValueError(f"gibbs_scale must be nonnegative, got {gibbs_scale}")
        if not 0.0 < surface_exponent < 1.0:
            raise ValueError(
                f"surface_exponent must be in (0, 1), got {surface_exponent}")
        self.lam = float(lam)
        self.coag_scale = float(coag_scale)
        self.gibbs_scale = float(gibbs_scale)
        self.surface_exponent = float(surface_exponent)

    def a(self, i, j):
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        return self.coag_scale * (i ** self.lam + j ** self.lam)

    def b(self, i, j):
        i = np.asarray(i, dtype=float)
        j = np.asarray(j, dtype=float)
        mu = self.surface_exponent
        # fixed operand order keeps b(i,j) == b(j,i) bit-exact
        lo = np.minimum(i, j)
        hi = np.maximum(i, j)
        gibbs = np.exp(self.gibbs_scale
                       * ((lo + hi) ** mu - lo ** mu - hi ** mu))
        return self.a(i, j) * gibbs

    def closed_form_log_q(self, i):
        i = np.asarray(i, dtype=float)
        return self.gibbs_scale * (i - i ** self.surface_exponent)

    def closed_form_zs(self):
        return math.exp(-self.gibbs_scale)

    def qzs_tail_bound(self, m, weight):
        """sum_{i>m} i^w e^{-gibbs_scale * i^mu} via an integral comparison.

        Valid once x^w e^{-g x^mu} is decreasing, i.e. m >= (w/(g mu))^(1/mu);
        returns None below that point or when gibbs_scale == 0 (divergent).
        """
        from scipy.special import gammaincc, gamma

        g, mu = self.gibbs_scale, self.surface_exponent
        if g == 0.0:
            return None
        x_star = (max(weight, 1e-12) / (g * mu)) ** (1.0 / mu)
        if m < x_star:
            return None
        # int_m^inf x^w e^{-g x^mu} dx = Gamma((w+1)/mu, g m^mu) / (mu g^((w+1)/mu))
        s = (weight + 1.0) / mu
        u0 = g * m ** mu
        return float(gammaincc(s, u0) * gamma(s) / (mu * g ** s))

    def __repr__(self):
        return (f"PowerLawExpKernel(lam={self.lam}, coag_scale={self.coag_scale}, "
                f"gibbs_scale={self.gibbs_scale}, "
                f"surface_exponent={self.surface_exponent})")


class BeckerDoringKernel(Kernel):
    """Monomer-only interactions: a(i,j) = b(i,j) = 0 when min(i,j) > 1.

    ``a`` and ``b`` may be scalars (constant rates for every size) or
    sequences indexed from size 1, so a(i, 1) = a[i] and b(i, 1) = b[i].
    Sequence-backed kernels raise :class:`KernelRangeError` beyond their
    length.
    """

    lam = 0.0

    def __init__(self, a=1.0, b=1.0):
        self._a_const = float(a) if np.isscalar(a) else None
        self._b_const = float(b) if np.isscalar(b) else None
        # padded so that seq[i] is the coefficient at size i
        self._a_seq = None if self._a_const is not None else \
            np.concatenate([[np.nan], np.asarray(a, dtype=float)])
        self._b_seq = None if self._b_const is not None else \
            np.concatenate([[np.nan], np.asarray(b, dtype=float)])
        for seq in (self._a_seq, self._b_seq):
            if seq is not None and np.any(seq[1:] < 0):
                raise ValueError("Becker-Doring coefficients must be nonnegative")

    def _lookup(self, const, seq, size):
        if const is not None:
            return np.full_like(np.asarray(size, dtype=float), const)
        size = np.asarray(size)
        if np.any(size >= len(seq)):
            raise KernelRangeError(
                f"size {int(np.max(size))} beyond coefficient sequence "
                f"(length {len(seq) - 1})")
        return seq[size]

    def a(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        active = np.minimum(i, j) == 1
        size = np.maximum(i, j)
        out = np.zeros(np.broadcast(i, j).shape, dtype=float)
        if np.any(active):
            vals = self._lookup(self._a_const, self._a_seq,
                                np.broadcast_to(size, out.shape)[active])
            out[active] = vals
        return out if out.shape else float(out)

    def b(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        active = np.minimum(i, j) == 1
        size = np.maximum(i, j)
        out = np.zeros(np.broadcast(i, j).shape, dtype=float)
        if np.any(active):
            vals = self._lookup(self._b_const, self._b_seq,
                                np.broadcast_to(size, out.shape)[active])
            out[active] = vals
        return out if out.shape else float(out)

    def __repr__(self):
        return f"BeckerDoringKernel(a={self._a_const or 'seq'}, b={self._b_const or 'seq'})"


class GeneralizedBDKernel(Kernel):
    """Inner kernel zeroed whenever both cluster sizes exceed ``cutoff``."""

    def __init__(self, cutoff, inner):
        if cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {cutoff}")
        self.cutoff = int(cutoff)
        self.inner = inner
        self.lam = inner.lam

    def _mask(self, i, j):
        return np.minimum(np.asarray(i), np.asarray(j)) <= self.cutoff

    def a(self, i, j):
        out = np.where(self._mask(i, j), self.inner.a(i, j), 0.0)
        return out if out.shape else float(out)

    def b(self, i, j):
        out = np.where(self._mask(i, j), self.inner.b(i, j), 0.0)
        return out if out.shape else float(out)

    # pairs (i, 1) are never cut off, so the detailed-balance sequence (built
    # from the j = 1 recursion) coincides with the inner kernel's
    def closed_form_log_q(self, i):
        return self.inner.closed_form_log_q(i)

    def closed_form_zs(self):
        return self.inner.closed_form_zs()

    def qzs_tail_bound(self, m, weight):
        return self.inner.qzs_tail_bound(m, weight)

    def __repr__(self):
        return f"GeneralizedBDKernel(cutoff={self.cutoff}, inner={self.inner!r})"


class TableKernel(Kernel):
    """Explicit coefficient matrices up to a finite size.

    ``a_table`` and ``b_table`` are (n+1) x (n+1) arrays with 1-based
    indexing (row/column 0 ignored).  Any evaluation with i, j or i + j - 1
    beyond the table raises :class:`KernelRangeError` rather than
    extrapolating.
    """

    lam = 0.0

    def __init__(self, a_table, b_table):
        a_table = np.asarray(a_table, dtype=float)
        b_table = np.asarray(b_table, dtype=float)
        if a_table.shape != b_table.shape or a_table.ndim != 2 \
                or a_table.shape[0] != a_table.shape[1]:
            raise ValueError("a_table and b_table must be equal square matrices")
        if np.any(a_table[1:, 1:] < 0) or np.any(b_table[1:, 1:] < 0):
            raise ValueError("table coefficients must be nonnegative")
        self._a = a_table
        self._b = b_table
        self.n_table = a_table.shape[0] - 1

    @classmethod
    def from_csv(cls, path):
        """Load i,j,a,b rows; symmetric entries are filled automatically."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].lstrip().startswith("#") or row[0] == "i":
                    continue
                i, j = int(row[0]), int(row[1])
                rows.append((i, j, float(row[2]), float(row[3])))
        if not rows:
            raise ValueError(f"no coefficient rows in {path}")
        n = max(max(i, j) for i, j, _, _ in rows)
        a = np.zeros((n + 1, n + 1))
        b = np.zeros((n + 1, n + 1))
        for i, j, av, bv in rows:
            for p, q in ((i, j), (j, i)):
                if a[p, q] not in (0.0, av) or b[p, q] not in (0.0, bv):
                    raise ValueError(f"conflicting entries for pair ({p},{q})")
                a[p, q] = av
                b[p, q] = bv
        return cls(a, b)

    def _check_range(self, i, j):
        if np.any(np.asarray(i) > self.n_table) or np.any(np.asarray(j) > self.n_table):
            raise KernelRangeError(
                f"index beyond table range (n_table={self.n_table})")

    def a(self, i, j):
        self._check_range(i, j)
        out = self._a[np.asarray(i), np.asarray(j)]
        return out if np.ndim(out) else float(out)

    def b(self, i, j):
        self._check_range(i, j)
        out = self._b[np.asarray(i), np.asarray(j)]
        return out if np.ndim(out) else float(out)

    def __repr__(self):
        return f"TableKernel(n_table={self.n_table})"


def reference_kernel():
    """The representative preset: lam = 1/2, C = C' = 1, mu = 1/2."""
    return PowerLawExpKernel(lam=0.5, coag_scale=1.0, gibbs_scale=1.0,
                             surface_exponent=0.5)


def becker_doring_unit():
    """Pure Becker-Doring cross-validation preset with unit rates."""
    return BeckerDoringKernel(a=1.0, b=1.0)


class KernelTables:
    """Coefficients precomputed on the truncated triangle i + j <= n.

    The unordered pairs (i, j) with i <= j and i + j <= n are stored flat;
    ``mult`` is 2 for off-diagonal pairs (which appear twice in ordered
    sums) and 1 on the diagonal.  ``a1``/``b1`` hold the monomer rows
    a(i, 1), b(i, 1) for i = 1..n-1 used by the Becker-Doring dissipation.

    Tables are immutable after construction; reads are safe from any number
    of threads.
    """

    def __init__(self, kernel, n, ii, jj, a_tri, b_tri, a1, b1):
        self.kernel = kernel
        self.n = n
        self.ii = ii
        self.jj = jj
        self.ss = ii + jj
        self.a_tri = a_tri
        self.b_tri = b_tri
        self.mult = np.where(ii == jj, 1.0, 2.0)
        self.offdiag = (ii != jj).astype(float)
        self.a1 = a1
        self.b1 = b1
        self.sizes = np.arange(n + 1, dtype=float)

    @classmethod
    def build(cls, kernel, n):
        if n < 2:
            raise ValueError(f"truncation size must be >= 2, got {n}")
        ii_list = []
        jj_list = []
        for i in range(1, n // 2 + 1):
            js = np.arange(i, n - i + 1, dtype=np.int64)
            ii_list.append(np.full_like(js, i))
            jj_list.append(js)
        ii = np.concatenate(ii_list)
        jj = np.concatenate(jj_list)
        a_tri = np.asarray(kernel.a(ii, jj), dtype=float)
        b_tri = np.asarray(kernel.b(ii, jj), dtype=float)
        rows = np.arange(1, n, dtype=np.int64)
        a1 = np.concatenate([[0.0], np.asarray(kernel.a(rows, 1), dtype=float)])
        b1 = np.concatenate([[0.0], np.asarray(kernel.b(rows, 1), dtype=float)])
        return cls(kernel, n, ii, jj, a_tri, b_tri, a1, b1)

    def frag_row_sums(self):
        """y_i = sum_{j<i} b(j, i-j) for i = 0..n (zero below i = 2)."""
        return np.bincount(self.ss, weights=self.mult * self.b_tri,
                           minlength=self.n + 1)


@dataclass
class HypothesisCheck:
    hid: str
    name: str
    status: str                  # "pass" | "fail" | "not-applicable"
    witness: dict | None = None
    note: str = ""


@dataclass
class HypothesisReport:
    checks: list[HypothesisCheck]
    constants: dict = field(default_factory=dict)

    def __getitem__(self, hid):
        for chk in self.checks:
            if chk.hid == hid:
                return chk
        raise KeyError(hid)

    @property
    def passed(self):
        return all(c.status != "fail" for c in self.checks)

    def summary(self):
        lines = [f"{c.hid} {c.status:>4s}  {c.name}" for c in self.checks]
        lines.append("constants: " + ", ".join(
            f"{k}={v:.6g}" for k, v in self.constants.items()))
        return "\n".join(lines)


def _fit_gamma(frag_sums, n):
    """Least-squares slope of log y_i vs log i over i in [n/2, n].

    Early indices pollute the asymptotic exponent, hence the upper window.
    Returns (gamma, K_gamma) with K_gamma the smallest prefactor making
    y_i <= K i^gamma hold on 2 <= i <= n.
    """
    i_lo = max(2, n // 2)
    idx = np.arange(i_lo, n + 1)
    y = frag_sums[idx]
    pos = y > 0
    if np.count_nonzero(pos) < 2:
        return 0.0, float(np.max(frag_sums)) if np.any(frag_sums > 0) else 0.0
    logs = np.log(idx[pos].astype(float))
    logy = np.log(y[pos])
    slope, _ = np.polyfit(logs, logy, 1)
    all_idx = np.arange(2, n + 1)
    ya = frag_sums[all_idx]
    k_gamma = float(np.max(ya / all_idx.astype(float) ** slope))
    return float(slope), k_gamma


def validate_hypotheses(kernel, db, n, c0=None, db_tol=1e-10):
    """Scan the structural hypotheses on ``kernel`` (with sequence ``db``).

    Checks for all i, j <= n: symmetry of a and b (H1); the smallest K with
    a, b <= K (i^lam + j^lam) and the fitted exponent gamma of the
    fragmentation row sums (H1); the relative detailed-balance residual
    against ``db`` (H2); finiteness of z_s (H3); monotonicity of Q_i z_s^i
    (H4); and the lower coagulation constant K_1 = min a(i,1)/i^lam (H5).
    H6 concerns initial data: any truncated sequence has finite moments, so
    it passes by construction (``c0`` is only echoed into the witness).

    Failures are reported with a concrete witness, never raised.
    """
    checks = []
    constants = {}
    lam = kernel.lam
    grid = np.arange(1, n + 1)
    I, J = np.meshgrid(grid, grid, indexing="ij")
    A = np.asarray(kernel.a(I, J), dtype=float)
    B = np.asarray(kernel.b(I, J), dtype=float)

    # H1: symmetry + growth bounds
    asym = np.abs(A - A.T)
    bsym = np.abs(B - B.T)
    scale = np.maximum(np.maximum(np.abs(A), np.abs(A.T)), 1e-300)
    rel_a = asym / scale
    scale_b = np.maximum(np.maximum(np.abs(B), np.abs(B.T)), 1e-300)
    rel_b = bsym / scale_b
    worst = max(float(np.max(rel_a)), float(np.max(rel_b)))
    denom = I.astype(float) ** lam + J.astype(float) ** lam
    k_ab = float(np.max(np.maximum(A, B) / denom))
    tab = kernel.tables(n)
    gamma, k_gamma = _fit_gamma(tab.frag_row_sums(), n)
    constants.update(K=max(k_ab, k_gamma), K_a=k_ab, gamma=gamma, lam=lam)
    if worst > 1e-12:
        which = rel_a if np.max(rel_a) >= np.max(rel_b) else rel_b
        wi, wj = np.unravel_index(int(np.argmax(which)), which.shape)
        checks.append(HypothesisCheck(
            "H1", "growth and symmetry of coefficients", "fail",
            witness={"i": int(grid[wi]), "j": int(grid[wj]),
                     "a_ij": float(A[wi, wj]), "a_ji": float(A[wj, wi]),
                     "b_ij": float(B[wi, wj]), "b_ji": float(B[wj, wi])}))
    else:
        checks.append(HypothesisCheck(
            "H1", "growth and symmetry of coefficients", "pass",
            note=f"K={constants['K']:.6g}, gamma={gamma:.4g}"))

    # H2: detailed balance residual, log-space to dodge Q overflow
    log_q = db.log_q
    m2 = min(n, len(log_q) - 1)
    mask = (I + J <= m2)
    res_worst = 0.0
    wit = None
    Ai = A[mask]
    Bi = B[mask]
    Im = I[mask]
    Jm = J[mask]
    both = (Ai > 0) & (Bi > 0)
    onesided = (Ai > 0) != (Bi > 0)
    if np.any(onesided):
        k = int(np.argmax(onesided))
        res_worst = math.inf
        wit = {"i": int(Im[k]), "j": int(Jm[k]), "a": float(Ai[k]),
               "b": float(Bi[k]), "residual": math.inf}
    if np.any(both):
        lr = (np.log(Ai[both]) + log_q[Im[both]] + log_q[Jm[both]]
              - np.log(Bi[both]) - log_q[Im[both] + Jm[both]])
        res = np.abs(np.expm1(lr))
        k = int(np.argmax(res))
        if float(res[k]) > res_worst:
            res_worst = float(res[k])
            wit = {"i": int(Im[both][k]), "j": int(Jm[both][k]),
                   "residual": float(res[k])}
    if res_worst <= db_tol:
        checks.append(HypothesisCheck(
            "H2", "detailed balance", "pass",
            note=f"max relative residual {res_worst:.3g}"))
    else:
        checks.append(HypothesisCheck("H2", "detailed balance", "fail",
                                      witness=wit))

    # H3: critical monomer concentration exists
    if db.z_s is not None and math.isfinite(db.z_s) and db.z_s > 0:
        checks.append(HypothesisCheck(
            "H3", "critical monomer concentration", "pass",
            note=f"z_s={db.z_s:.8g}"))
    else:
        checks.append(HypothesisCheck(
            "H3", "critical monomer concentration", "fail",
            witness={"z_s": db.z_s}))

    # H4: Q_i z_s^i non-increasing
    if db.z_s is not None and db.z_s > 0:
        m4 = min(n, len(log_q) - 1)
        seq = log_q[1:m4 + 1] + np.arange(1, m4 + 1) * math.log(db.z_s)
        diffs = np.diff(seq)
        tol4 = 1e-12 * np.maximum(1.0, np.abs(seq[:-1]))
        bad = diffs > tol4
        if np.any(bad):
            k = int(np.argmax(bad))
            checks.append(HypothesisCheck(
                "H4", "regularity of Q_i z_s^i", "fail",
                witness={"i": k + 1, "log_q_i": float(seq[k]),
                         "log_q_i+1": float(seq[k + 1])}))
        else:
            checks.append(HypothesisCheck("H4", "regularity of Q_i z_s^i", "pass"))
    else:
        checks.append(HypothesisCheck("H4", "regularity of Q_i z_s^i",
                                      "not-applicable", note="no z_s"))

    # H5: strong coagulation of small particles
    rows = np.arange(1, n + 1, dtype=float)
    a_col = np.asarray(kernel.a(rows.astype(np.int64), 1), dtype=float)
    ratios = a_col / rows ** lam
    k1 = float(np.min(ratios))
    constants["K_1"] = k1
    if k1 > 0:
        checks.append(HypothesisCheck(
            "H5", "strong coagulation of small particles", "pass",
            note=f"K_1={k1:.6g}"))
    else:
        wi = int(np.argmin(ratios))
        checks.append(HypothesisCheck(
            "H5", "strong coagulation of small particles", "fail",
            witness={"i": wi + 1, "a_i1": float(a_col[wi])}))

    # H6: moments of initial data -- finite by construction at desk scale
    note = "finite truncation: all moments finite"
    if c0 is not None:
        mu = max(2 - lam, 1 + lam, 1 + gamma)
        i_arr = np.arange(1, len(np.asarray(c0)) + 1 - 1, dtype=float)
        note = f"moment of order {mu:.3g} = " \
               f"{float(np.sum(i_arr ** mu * np.asarray(c0)[1:])):.6g}"
    checks.append(HypothesisCheck("H6", "moments of initial data", "pass",
                                  note=note))

    return HypothesisReport(checks=checks, constants=constants)
