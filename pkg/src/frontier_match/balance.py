"""Covariate balance diagnostics and kernel densities.

* standardized mean differences, before and after matching;
* a Becker-Ichino style stratification test on the propensity score;
* Gaussian kernel densities with boundary reflection, exported as grids.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import NumericalError, ValidationError


class BalanceError(NumericalError):
    pass


# ---------------------------------------------------------------------------
# standardized mean differences


def smd_columns(treated, control):
    """Column-wise signed SMD of two samples.

    ``(mean_T - mean_C) / sqrt((var_T + var_C) / 2)`` with ``n - 1``
    variances. Zero pooled variance gives 0 for equal means and a signed
    infinity otherwise.
    """
    t = np.asarray(treated, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.ndim == 1:
        t = t[:, None]
        c = c[:, None]
    if t.shape[0] == 0 or c.shape[0] == 0:
        raise ValidationError("both groups must be non-empty")
    mt, mc = t.mean(axis=0), c.mean(axis=0)
    vt = t.var(axis=0, ddof=1) if t.shape[0] > 1 else np.zeros(t.shape[1])
    vc = c.var(axis=0, ddof=1) if c.shape[0] > 1 else np.zeros(c.shape[1])
    diff = mt - mc
    pooled = np.sqrt((vt + vc) / 2.0)
    out = np.empty_like(diff)
    ok = pooled > 0
    out[ok] = diff[ok] / pooled[ok]
    deg = ~ok
    out[deg] = np.where(diff[deg] == 0, 0.0, np.copysign(np.inf, diff[deg]))
    return out


def smd(values, groups):
    """Signed SMD of ``values`` between ``groups == 1`` and ``groups == 0``.

    An infinite result flags a covariate that is constant within each group
    but differs between them.
    """
    v = np.asarray(values, dtype=float)
    g = np.asarray(groups).astype(bool)
    return float(smd_columns(v[g], v[~g])[0])


@dataclass
class SMDTable:
    """Absolute SMDs per covariate; ``after`` maps method name to a vector."""

    covariates: tuple
    before: np.ndarray
    after: dict = field(default_factory=dict)

    def max_before(self):
        return float(np.max(np.abs(self.before)))

    def max_after(self, method):
        return float(np.max(np.abs(self.after[method])))

    def flagged(self):
        out = [c for c, v in zip(self.covariates, self.before) if not np.isfinite(v)]
        for vec in self.after.values():
            out += [c for c, v in zip(self.covariates, vec) if not np.isfinite(v)]
        return sorted(set(out))


def covariate_columns(design):
    """Design columns used in balance checks (everything except the intercept)."""
    keep = [i for i, c in enumerate(design.columns) if c != "constant"]
    return [design.columns[i] for i in keep], design.X[:, keep]


def smd_before_after(design, matched_samples):
    """Unmatched vs matched SMDs; ``matched_samples`` maps method -> MatchedSample."""
    names, C = covariate_columns(design)
    t = design.treatment.astype(bool)
    table = SMDTable(tuple(names), smd_columns(C[t], C[~t]))
    for method, ms in matched_samples.items():
        ti, ci = ms.treated_control_indices()
        table.after[method] = smd_columns(C[ti], C[ci])
    return table


# ---------------------------------------------------------------------------
# stratification test


@dataclass(frozen=True)
class Block:
    lo: float
    hi: float
    n_treated: int
    n_control: int
    score_t: float
    score_p: float
    depth: int


@dataclass
class BalanceReport:
    """Outcome of the stratification test."""

    alpha: float
    support: tuple
    blocks: list
    covariates: tuple
    t_stats: np.ndarray          # (n_blocks, n_covariates)
    p_values: np.ndarray
    covariate_pass: dict
    score_balanced: bool
    splits: int
    smd: SMDTable = None

    @property
    def all_balanced(self):
        return self.score_balanced and all(self.covariate_pass.values())


def _fsum_mean_var(x):
    n = len(x)
    m = math.fsum(x) / n
    if n < 2:
        return m, 0.0
    return m, math.fsum((v - m) ** 2 for v in x) / (n - 1)


def welch_t(a, b):
    """Welch two-sample t statistic and two-sided p-value.

    Sums are exactly rounded, so groups that are permutations of one
    another give exactly ``t = 0``.
    """
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    ma, va = _fsum_mean_var(a)
    mb, vb = _fsum_mean_var(b)
    diff = ma - mb
    se2 = va / len(a) + vb / len(b)
    if se2 <= 0:
        if diff == 0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(se2)
    num = se2 * se2
    den = 0.0
    if len(a) > 1:
        den += (va / len(a)) ** 2 / (len(a) - 1)
    if len(b) > 1:
        den += (vb / len(b)) ** 2 / (len(b) - 1)
    df = num / den if den > 0 else max(len(a) + len(b) - 2, 1)
    p = float(2.0 * stats.t.sf(abs(t), df))
    return t, p


def common_support(scores, treatment):
    s = np.asarray(scores, dtype=float)
    t = np.asarray(treatment).astype(bool)
    lo = max(s[t].min(), s[~t].min())
    hi = min(s[t].max(), s[~t].max())
    if lo > hi:
        raise BalanceError(
            f"empty common support: treated and control propensities do not overlap ({lo:.6g} > {hi:.6g})"
        )
    return float(lo), float(hi)


def stratification_test(model, design, alpha=0.01, n_blocks=5, max_depth=6, min_per_group=2):
    """Becker-Ichino balancing test on the estimated propensity score.

    Start from ``n_blocks`` equal-width blocks over the common support;
    a block whose mean propensity differs between groups (Welch test at
    ``alpha``) is halved, recursively, while both halves keep at least
    ``min_per_group`` units per group and depth stays below ``max_depth``.
    Each covariate is then t-tested inside every final block. A covariate
    passes when no block rejects at ``alpha / n_final_blocks``
    (Bonferroni across blocks).
    """
    if not 0 < alpha < 1:
        raise ValidationError("alpha must lie in (0, 1)")
    s = np.asarray(model.scores, dtype=float)
    t = np.asarray(design.treatment).astype(bool)
    lo, hi = common_support(s, t)
    inside = (s >= lo) & (s <= hi)
    names, C = covariate_columns(design)

    def members(a, b, last):
        sel = inside & (s >= a) & ((s <= b) if last else (s < b))
        return sel & t, sel & ~t

    edges = np.linspace(lo, hi, n_blocks + 1) if hi > lo else np.array([lo, hi])
    pending = [(edges[i], edges[i + 1], i == len(edges) - 2, 0) for i in range(len(edges) - 1)]
    final = []
    splits = 0
    score_ok = True
    while pending:
        a, b, last, depth = pending.pop(0)
        mt, mc = members(a, b, last)
        if mt.sum() == 0 or mc.sum() == 0:
            final.append(Block(a, b, int(mt.sum()), int(mc.sum()), 0.0, 1.0, depth))
            continue
        ts, ps = welch_t(s[mt], s[mc])
        if ps < alpha:
            mid = 0.5 * (a + b)
            lt, lc = members(a, mid, False)
            rt, rc = members(mid, b, last)
            can_split = (
                depth + 1 <= max_depth
                and min(lt.sum(), lc.sum(), rt.sum(), rc.sum()) >= min_per_group
            )
            if can_split:
                splits += 1
                pending[:0] = [(a, mid, False, depth + 1), (mid, b, last, depth + 1)]
                continue
            score_ok = False
        final.append(Block(float(a), float(b), int(mt.sum()), int(mc.sum()), ts, ps, depth))

    final.sort(key=lambda blk: blk.lo)
    k = len(names)
    T = np.zeros((len(final), k))
    P = np.ones((len(final), k))
    for bi, blk in enumerate(final):
        mt, mc = members(blk.lo, blk.hi, blk.hi == hi)
        if mt.sum() == 0 or mc.sum() == 0:
            continue
        for j in range(k):
            T[bi, j], P[bi, j] = welch_t(C[mt, j], C[mc, j])
    tested = max(sum(1 for blk in final if blk.n_treated and blk.n_control), 1)
    passed = {name: bool(np.all(P[:, j] >= alpha / tested)) for j, name in enumerate(names)}
    return BalanceReport(
        alpha=alpha,
        support=(lo, hi),
        blocks=final,
        covariates=tuple(names),
        t_stats=T,
        p_values=P,
        covariate_pass=passed,
        score_balanced=score_ok,
        splits=splits,
    )


# ---------------------------------------------------------------------------
# kernel densities


@dataclass(frozen=True)
class DensityEstimate:
    grid: np.ndarray
    density: np.ndarray
    bandwidth: float
    support: tuple

    def integral(self):
        return float(np.trapezoid(self.density, self.grid))


def silverman_bandwidth(values):
    v = np.asarray(values, dtype=float)
    sd = v.std(ddof=1)
    q75, q25 = np.percentile(v, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34) if q75 > q25 else sd
    return 0.9 * spread * v.size ** (-0.2)


def reflected_density(values, points, bandwidth, support=None):
    """Gaussian kernel density at ``points`` with reflection at the bounds.

    With ``support=None`` no reflection is applied.
    """
    v = np.asarray(values, dtype=float)
    x = np.asarray(points, dtype=float)
    h = float(bandwidth)
    centres = [v]
    if support is not None:
        a, b = support
        centres += [2 * a - v, 2 * b - v]
    total = np.zeros_like(x)
    for c in centres:
        total += stats.norm.pdf((x[:, None] - c[None, :]) / h).sum(axis=1)
    return total / (v.size * h)


def kernel_density(values, support=(0.0, 1.0), bandwidth=None, n_grid=512):
    """Boundary-reflected Gaussian KDE on a uniform grid over ``support``.

    Parameters
    ----------
    values : array_like
        Observations inside ``support``.
    support : (float, float)
        Closed interval; mass is reflected at both ends.
    bandwidth : float, optional
        Defaults to Silverman's rule ``0.9 min(sd, IQR/1.34) n^(-1/5)``.
    """
    v = np.asarray(values, dtype=float)
    a, b = float(support[0]), float(support[1])
    if not a < b:
        raise ValidationError("support must be a non-degenerate interval")
    if v.size == 0:
        raise ValidationError("no values to smooth")
    if np.any((v < a) | (v > b)):
        raise ValidationError("values fall outside the declared support")
    if bandwidth is None:
        if np.unique(v).size < 2:
            raise ValidationError("degenerate density: all values identical")
        bandwidth = silverman_bandwidth(v)
    if not bandwidth > 0:
        raise ValidationError("bandwidth must be positive")
    grid = np.linspace(a, b, n_grid)
    dens = reflected_density(v, grid, bandwidth, (a, b))
    return DensityEstimate(grid=grid, density=dens, bandwidth=float(bandwidth), support=(a, b))
