"""Input-oriented CRS data envelopment analysis.

Each unit's score is the optimum of the envelopment program

    min theta
    s.t.  sum_i gamma_i * x_i <= theta * x_0     (one row per input)
          sum_i gamma_i * y_i >= y_0             (one row per output)
          gamma >= 0

solved with a small dense two-phase simplex. Rows are divided by the
target's own input/output values before solving, which keeps every tableau
entry a dimensionless ratio regardless of the data's units.
"""

from dataclasses import dataclass, field

import numpy as np

from ._accel import njit, prange
from .errors import NumericalError, ValidationError

COMMON = "common"
BY_GROUP = "by_group"

FEAS_TOL = 1e-9
PEER_TOL = 1e-7

_OPTIMAL, _INFEASIBLE, _UNBOUNDED, _ITERLIMIT = 0, 1, 2, 3

_REDUCED_TOL = 1e-11
_PIVOT_TOL = 1e-11
_BLAND_AFTER = 20


class DEAError(ValidationError):
    """Invalid frontier sample."""


class InfeasibleProgramError(NumericalError):
    """Target excluded from an undominating reference set."""


@dataclass(frozen=True)
class FrontierSample:
    """Input/output vectors of a set of decision-making units.

    ``inputs`` has shape (n, N), ``outputs`` (n, M). ``groups`` is required
    when ``scope`` is ``"by_group"``.
    """

    unit_ids: tuple
    inputs: np.ndarray
    outputs: np.ndarray
    scope: str = COMMON
    groups: tuple = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float)
        if x.ndim != 2 or y.ndim != 2:
            raise DEAError("inputs and outputs must be 2-D (units x dimensions)")
        if x.shape[0] != y.shape[0] or x.shape[0] != len(self.unit_ids):
            raise DEAError("unit_ids, inputs and outputs disagree on the number of units")
        _check_positive(x, "inputs")
        _check_positive(y, "outputs")
        if self.scope not in (COMMON, BY_GROUP):
            raise DEAError(f"unknown frontier scope {self.scope!r}")
        if self.scope == BY_GROUP:
            if self.groups is None or len(self.groups) != x.shape[0]:
                raise DEAError("by_group scope needs one group label per unit")
        object.__setattr__(self, "unit_ids", tuple(self.unit_ids))
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "outputs", y)
        if self.groups is not None:
            object.__setattr__(self, "groups", tuple(self.groups))

    def __len__(self):
        return len(self.unit_ids)


@dataclass(frozen=True)
class EfficiencyScore:
    unit_id: str
    score: float
    binding_peers: frozenset = field(default_factory=frozenset)


def _check_positive(a, name):
    if a.size == 0:
        raise DEAError(f"{name} is empty")
    if not np.all(np.isfinite(a)) or np.any(a <= 0):
        raise DEAError(f"all {name} must be strictly positive and finite")


# ---------------------------------------------------------------------------
# kernels


@njit
def _pivot(T, basis, row, col):
    m, w = T.shape
    p = T[row, col]
    for j in range(w):
        T[row, j] /= p
    T[row, col] = 1.0
    for i in range(m):
        if i == row:
            continue
        f = T[i, col]
        if f != 0.0:
            for j in range(w):
                T[i, j] -= f * T[row, j]
            T[i, col] = 0.0
    basis[row] = col


@njit
def _run_simplex(T, basis, cost, n_allowed, max_iter):
    """Minimise ``cost @ x`` from the basic feasible tableau ``T``.

    Dantzig pricing; switches to Bland's rule after a run of degenerate
    pivots so the zero right-hand sides of the input rows cannot cycle.
    """
    m, w = T.shape
    rhs = w - 1
    streak = 0
    for _ in range(max_iter):
        bland = streak > _BLAND_AFTER
        enter = -1
        best = -_REDUCED_TOL
        for j in range(n_allowed):
            d = cost[j]
            for i in range(m):
                d -= cost[basis[i]] * T[i, j]
            if d < best:
                enter = j
                if bland:
                    break
                best = d
        if enter < 0:
            return _OPTIMAL
        leave = -1
        ratio = np.inf
        for i in range(m):
            a = T[i, enter]
            if a > _PIVOT_TOL:
                r = T[i, rhs] / a
                if r < 0.0:
                    r = 0.0
                if leave < 0 or r < ratio - 1e-14 or (r <= ratio + 1e-14 and basis[i] < basis[leave]):
                    leave = i
                    ratio = r
        if leave < 0:
            return _UNBOUNDED
        if ratio <= 1e-14:
            streak += 1
        else:
            streak = 0
        _pivot(T, basis, leave, enter)
    return _ITERLIMIT


@njit
def solve_envelopment_kernel(Xr, Yr, x0, y0, gamma):
    """Solve one envelopment program; returns ``(status, theta)``.

    ``gamma`` (length n) receives the optimal intensities.
    """
    n, N = Xr.shape
    M = Yr.shape[1]
    m = N + M
    n_struct = n + 1 + N + M
    ncol = n_struct + M
    T = np.zeros((m, ncol + 1))
    basis = np.empty(m, np.int64)
    for k in range(N):
        inv = 1.0 / x0[k]
        for i in range(n):
            T[k, i] = Xr[i, k] * inv
        T[k, n] = -1.0
        T[k, n + 1 + k] = 1.0
        basis[k] = n + 1 + k
    for r in range(M):
        row = N + r
        inv = 1.0 / y0[r]
        for i in range(n):
            T[row, i] = Yr[i, r] * inv
        T[row, n + 1 + N + r] = -1.0
        T[row, n_struct + r] = 1.0
        T[row, ncol] = 1.0
        basis[row] = n_struct + r

    max_iter = 50 * (ncol + m)
    cost = np.zeros(ncol)
    for r in range(M):
        cost[n_struct + r] = 1.0
    status = _run_simplex(T, basis, cost, ncol, max_iter)
    if status != _OPTIMAL:
        return status, np.nan
    infeas = 0.0
    for i in range(m):
        if basis[i] >= n_struct:
            infeas += T[i, ncol]
    if infeas > FEAS_TOL:
        return _INFEASIBLE, np.nan
    # drive zero-level artificials out of the basis
    for i in range(m):
        if basis[i] >= n_struct:
            for j in range(n_struct):
                if abs(T[i, j]) > 1e-9:
                    _pivot(T, basis, i, j)
                    break

    cost[:] = 0.0
    cost[n] = 1.0
    status = _run_simplex(T, basis, cost, n_struct, max_iter)
    if status != _OPTIMAL:
        return status, np.nan
    theta = 0.0
    gamma[:] = 0.0
    for i in range(m):
        b = basis[i]
        if b == n:
            theta = T[i, ncol]
        elif b < n:
            gamma[b] = T[i, ncol]
    return _OPTIMAL, theta


@njit(parallel=True)
def score_many_kernel(Xt, Yt, Xr, Yr):
    """Scores of each target row against the reference set (no intensities)."""
    nt = Xt.shape[0]
    nr = Xr.shape[0]
    theta = np.empty(nt)
    status = np.empty(nt, np.int64)
    for t in prange(nt):
        gamma = np.empty(nr)
        s, v = solve_envelopment_kernel(Xr, Yr, Xt[t], Yt[t], gamma)
        status[t] = s
        theta[t] = v
    return status, theta


@njit(parallel=True)
def score_many_with_peers_kernel(Xt, Yt, Xr, Yr):
    nt = Xt.shape[0]
    nr = Xr.shape[0]
    theta = np.empty(nt)
    status = np.empty(nt, np.int64)
    G = np.zeros((nt, nr))
    for t in prange(nt):
        s, v = solve_envelopment_kernel(Xr, Yr, Xt[t], Yt[t], G[t])
        status[t] = s
        theta[t] = v
    return status, theta, G


@njit
def reference_mask_kernel(X, Y):
    """Flag units needed to span the CRS technology of ``(X, Y)``.

    Unit j is dropped when some scaled unit i uses no more of every input
    and produces no less of every output (so j adds nothing to the cone
    plus free disposal). Exact scaled clones keep their lowest index.
    Near-ties are kept, so the result is a safe superset of the generators.
    """
    n, N = X.shape
    M = Y.shape[1]
    keep = np.ones(n, np.bool_)
    for j in range(n):
        for i in range(n):
            if i == j or not keep[i]:
                continue
            lo = np.inf
            hi = 0.0
            for k in range(N):
                r = X[j, k] / X[i, k]
                lo = min(lo, r)
                hi = max(hi, r)
            need = 0.0
            lo_y = np.inf
            for r_ in range(M):
                r = Y[j, r_] / Y[i, r_]
                need = max(need, r)
                lo_y = min(lo_y, r)
            if need <= lo * (1.0 - 1e-12):
                keep[j] = False
                break
            if i < j:
                top = max(hi, need)
                bot = min(lo, lo_y)
                if top - bot <= 1e-12 * bot:
                    keep[j] = False
                    break
    return keep


# ---------------------------------------------------------------------------
# public API


def _finalize(status, theta, where):
    bad = np.flatnonzero(status != _OPTIMAL)
    if bad.size:
        i = int(bad[0])
        if status[i] == _INFEASIBLE:
            raise InfeasibleProgramError(f"envelopment program infeasible for {where(i)}")
        raise AssertionError(f"simplex failed (status {int(status[i])}) for {where(i)}")
    theta = np.where(np.abs(theta - 1.0) <= FEAS_TOL, 1.0, theta)
    return theta


def _reduce_reference(Xr, Yr):
    keep = reference_mask_kernel(Xr, Yr)
    idx = np.flatnonzero(keep)
    return np.ascontiguousarray(Xr[idx]), np.ascontiguousarray(Yr[idx]), idx


def efficiency_scores(inputs, outputs, ref_inputs=None, ref_outputs=None):
    """Vector of CRS input-oriented scores.

    Parameters
    ----------
    inputs, outputs : array_like, shape (n, N) and (n, M)
        Units to score.
    ref_inputs, ref_outputs : array_like, optional
        Reference technology; defaults to the scored units themselves.

    Returns
    -------
    numpy.ndarray
        One score per row of ``inputs``.
    """
    Xt = np.ascontiguousarray(inputs, dtype=float)
    Yt = np.ascontiguousarray(outputs, dtype=float)
    if ref_inputs is None:
        Xr, Yr = Xt, Yt
    else:
        Xr = np.ascontiguousarray(ref_inputs, dtype=float)
        Yr = np.ascontiguousarray(ref_outputs, dtype=float)
    if Xt.shape[0] == 0:
        return np.empty(0)
    Xr, Yr, _ = _reduce_reference(Xr, Yr)
    status, theta = score_many_kernel(Xt, Yt, Xr, Yr)
    return _finalize(status, theta, lambda i: f"unit at row {i}")


def solve_envelopment(unit_id, inputs, outputs, reference):
    """Score one unit against ``reference`` (a :class:`FrontierSample`).

    The target is not added to the reference set; pass a reference that
    contains it for the usual self-inclusive score.
    """
    x0 = np.asarray(inputs, dtype=float).reshape(-1)
    y0 = np.asarray(outputs, dtype=float).reshape(-1)
    if x0.size != reference.inputs.shape[1] or y0.size != reference.outputs.shape[1]:
        raise DEAError("target dimensions differ from the reference sample")
    _check_positive(x0, "inputs")
    _check_positive(y0, "outputs")
    status, theta, G = score_many_with_peers_kernel(
        x0[None, :], y0[None, :], reference.inputs, reference.outputs
    )
    theta = _finalize(status, theta, lambda i: f"unit {unit_id!r}")
    peers = frozenset(reference.unit_ids[j] for j in np.flatnonzero(G[0] > PEER_TOL))
    return EfficiencyScore(unit_id, float(theta[0]), peers)


def _reference_blocks(sample):
    if sample.scope == COMMON:
        return [np.arange(len(sample))]
    labels = np.asarray(sample.groups, dtype=object)
    return [np.flatnonzero(labels == g) for g in dict.fromkeys(sample.groups)]


def score_all(sample, with_peers=True):
    """Score every unit of ``sample`` under its frontier scope.

    Under ``common`` scope each unit is evaluated against the pooled sample,
    under ``by_group`` only against units sharing its group label. Results
    come back in input order.
    """
    if len(sample) == 0:
        raise DEAError("cannot score an empty sample")
    out = [None] * len(sample)
    for idx in _reference_blocks(sample):
        X = np.ascontiguousarray(sample.inputs[idx])
        Y = np.ascontiguousarray(sample.outputs[idx])
        Xr, Yr, ref = _reduce_reference(X, Y)
        ref = idx[ref]
        if with_peers:
            status, theta, G = score_many_with_peers_kernel(X, Y, Xr, Yr)
        else:
            status, theta = score_many_kernel(X, Y, Xr, Yr)
        theta = _finalize(status, theta, lambda i: f"unit {sample.unit_ids[idx[i]]!r}")
        for k, i in enumerate(idx):
            peers = frozenset()
            if with_peers:
                peers = frozenset(sample.unit_ids[ref[j]] for j in np.flatnonzero(G[k] > PEER_TOL))
            out[i] = EfficiencyScore(sample.unit_ids[i], float(theta[k]), peers)
    return out


def scores_by_scope(inputs, outputs, groups=None):
    """Array form of :func:`score_all`; ``groups=None`` means common frontier."""
    X = np.ascontiguousarray(inputs, dtype=float)
    Y = np.ascontiguousarray(outputs, dtype=float)
    if groups is None:
        return efficiency_scores(X, Y)
    groups = np.asarray(groups)
    out = np.empty(X.shape[0])
    for g in np.unique(groups):
        idx = np.flatnonzero(groups == g)
        out[idx] = efficiency_scores(X[idx], Y[idx])
    return out
