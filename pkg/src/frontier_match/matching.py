"""Greedy nearest-neighbour and genetic (weighted-distance) matching.

Both methods share one kernel: focal units are visited in descending
log-odds order and each takes the closest eligible unit from the opposite
group, ties going to the lexicographically smallest contract id. Matching
runs in both directions: every treated unit gets a control (used for the
ATT) and every retained control then gets its nearest retained treated
unit (used, together with the first direction, for the ATE). The reverse
pass always allows reuse of treated units; under 1:1 matching without
replacement a non-reusing reverse pass would only permute the first
pass's pairs and force ATE == ATT.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit
from .balance import covariate_columns, smd_columns
from .errors import ValidationError

T2C = "treated_to_control"
C2T = "control_to_treated"
NN = "nn"
GENETIC = "genetic"

_FITNESS_DEPTH = 3


class MatchingError(ValidationError):
    pass


@dataclass(frozen=True)
class MatchedSample:
    """Pairs stored as index arrays into the matched record sequence.

    ``direction`` is 1 for treated-to-control pairs and 0 for the reverse.
    """

    ids: tuple
    focal: np.ndarray
    matched: np.ndarray
    distance: np.ndarray
    direction: np.ndarray
    method: str
    unmatched: np.ndarray
    weights: np.ndarray = None
    weight_names: tuple = None
    fitness_history: tuple = None

    @property
    def pairs(self):
        return [
            (self.ids[f], self.ids[m], float(d), T2C if k else C2T)
            for f, m, d, k in zip(self.focal, self.matched, self.distance, self.direction)
        ]

    @property
    def unmatched_ids(self):
        return frozenset(self.ids[i] for i in self.unmatched)

    def treated_control_indices(self):
        sel = self.direction == 1
        return self.focal[sel], self.matched[sel]

    def control_treated_indices(self):
        sel = self.direction == 0
        return self.focal[sel], self.matched[sel]

    def units(self):
        """Sorted indices of every unit that appears in a pair."""
        return np.unique(np.concatenate([self.focal, self.matched]))


# ---------------------------------------------------------------------------
# kernel


@njit
def greedy_match_kernel(F, P, w, order, pool_rank, replace, max_dist):
    """Greedy matching of rows of ``F`` to rows of ``P``.

    ``order`` gives the focal visiting order, ``pool_rank`` the tie-break
    rank of pool rows. Distance is ``sqrt(sum_k w_k (F_k - P_k)^2)``; with a
    single column the absolute difference is compared directly. Returns the
    matched pool row per focal row (-1 if none) and the distance.
    """
    nf, d = F.shape
    npool = P.shape[0]
    used = np.zeros(npool, np.bool_)
    match = np.full(nf, -1, np.int64)
    dist = np.full(nf, np.nan)
    for t in order:
        best = -1
        bestv = np.inf
        for j in range(npool):
            if not replace and used[j]:
                continue
            if d == 1:
                v = abs(F[t, 0] - P[j, 0])
            else:
                v = 0.0
                for k in range(d):
                    diff = F[t, k] - P[j, k]
                    v += w[k] * diff * diff
            if v < bestv or (v == bestv and best >= 0 and pool_rank[j] < pool_rank[best]):
                best = j
                bestv = v
        if best < 0:
            continue
        dd = np.sqrt(w[0]) * bestv if d == 1 else np.sqrt(bestv)
        if dd > max_dist:
            continue
        match[t] = best
        dist[t] = dd
        if not replace:
            used[best] = True
    return match, dist


# ---------------------------------------------------------------------------
# helpers


def id_ranks(ids):
    """Rank of each id in lexicographic order (stable for repeated ids)."""
    order = np.argsort(np.asarray(ids, dtype=str), kind="stable")
    rank = np.empty(len(ids), np.int64)
    rank[order] = np.arange(len(ids))
    return rank


def _visit_order(log_odds, rank):
    # descending log-odds, ties by id
    return np.lexsort((rank, -np.asarray(log_odds, dtype=float))).astype(np.int64)


def _one_direction(feat, log_odds, rank, focal_idx, pool_idx, w, replace, max_dist):
    F = np.ascontiguousarray(feat[focal_idx])
    P = np.ascontiguousarray(feat[pool_idx])
    order = _visit_order(log_odds[focal_idx], rank[focal_idx])
    m, d = greedy_match_kernel(F, P, w, order, rank[pool_idx], replace, max_dist)
    ok = m >= 0
    return focal_idx[ok], pool_idx[m[ok]], d[ok], order


def _bidirectional(feat, log_odds, treatment, ids, w, replace, max_dist, method, **extra):
    t = np.asarray(treatment).astype(bool)
    if t.sum() == 0 or (~t).sum() == 0:
        raise MatchingError("both treated and control groups must be non-empty")
    rank = id_ranks(ids)
    treated = np.flatnonzero(t)
    controls = np.flatnonzero(~t)
    f1, m1, d1, _ = _one_direction(feat, log_odds, rank, treated, controls, w, replace, max_dist)
    kept_controls = np.unique(m1)
    kept_treated = np.unique(f1)
    if kept_controls.size and kept_treated.size:
        f2, m2, d2, _ = _one_direction(
            feat, log_odds, rank, kept_controls, kept_treated, w, True, max_dist
        )
    else:
        f2 = m2 = np.empty(0, np.int64)
        d2 = np.empty(0)
    focal = np.concatenate([f1, f2]).astype(np.int64)
    matched = np.concatenate([m1, m2]).astype(np.int64)
    direction = np.concatenate([np.ones(f1.size, np.int8), np.zeros(f2.size, np.int8)])
    present = np.zeros(len(ids), bool)
    present[focal] = True
    present[matched] = True
    return MatchedSample(
        ids=tuple(ids),
        focal=focal,
        matched=matched,
        distance=np.concatenate([d1, d2]),
        direction=direction,
        method=method,
        unmatched=np.flatnonzero(~present),
        **extra,
    )


def _caliper_distance(log_odds, caliper):
    if caliper is None:
        return np.inf
    if caliper <= 0:
        raise MatchingError("caliper must be positive")
    return float(caliper) * float(np.std(log_odds, ddof=1))


def match_nn(model, treatment, ids=None, with_replacement=False, caliper=None):
    """Nearest-neighbour matching on the estimated log-odds.

    Parameters
    ----------
    model : PropensityModel
    treatment : array_like of {0, 1}
    ids : sequence of str, optional
        Tie-break keys; defaults to zero-padded row numbers.
    with_replacement : bool
    caliper : float, optional
        In standard deviations of the log-odds; farther pairs are dropped.
    """
    lo = np.asarray(model.log_odds, dtype=float)
    if ids is None:
        ids = [f"{i:09d}" for i in range(lo.size)]
    return _bidirectional(
        lo[:, None], lo, treatment, ids, np.ones(1), with_replacement,
        _caliper_distance(lo, caliper), NN,
    )


# ---------------------------------------------------------------------------
# genetic matching


def genetic_features(design, model):
    """Standardised covariates plus standardised log-odds.

    Constant columns (and the intercept) are dropped. Returns
    ``(features, names, covariates)`` where ``covariates`` are the raw
    balance columns used in the fitness.
    """
    names, C = covariate_columns(design)
    lo = np.asarray(model.log_odds, dtype=float)
    raw = np.column_stack([C, lo])
    sd = raw.std(axis=0)
    keep = sd > 0
    Z = (raw[:, keep] - raw[:, keep].mean(axis=0)) / sd[keep]
    fnames = tuple(n for n, k in zip(names + ["log_odds"], keep) if k)
    return np.ascontiguousarray(Z), fnames, C


def balance_fitness(covariates, treated_idx, control_idx):
    """Sorted (descending) absolute SMDs of the first direction's pairs."""
    if treated_idx.size == 0:
        return np.full(_FITNESS_DEPTH, np.inf)
    a = np.abs(smd_columns(covariates[treated_idx], covariates[control_idx]))
    a = np.sort(a)[::-1]
    return a[:_FITNESS_DEPTH]


def _fitness_key(f):
    return tuple(float(v) for v in f)


def match_weighted(design, treatment, model, weights, ids=None, with_replacement=False):
    """Greedy matching under a fixed diagonal weighting of the genetic features."""
    Z, fnames, _ = genetic_features(design, model)
    w = np.asarray(weights, dtype=float)
    if w.shape != (Z.shape[1],):
        raise MatchingError(f"expected {Z.shape[1]} weights ({', '.join(fnames)})")
    if ids is None:
        ids = design.ids
    return _bidirectional(
        Z, np.asarray(model.log_odds, float), treatment, ids, w, with_replacement, np.inf,
        GENETIC, weights=w, weight_names=fnames,
    )


def _normalise(w):
    s = w.mean()
    if not np.isfinite(s) or s <= 0:
        return np.ones_like(w)
    return w / s


def match_genetic(
    design,
    treatment,
    model,
    population=32,
    generations=50,
    seed=0,
    ids=None,
    with_replacement=False,
    mutation_sigma=0.25,
    tournament=3,
    blend_alpha=0.5,
):
    """Genetic search for feature weights minimising post-match imbalance.

    Individuals are weight vectors over the standardised covariates and
    log-odds, normalised to mean 1. Fitness is the vector of the three
    largest absolute SMDs after treated-to-control matching, compared
    lexicographically. Each generation keeps the best individual and fills
    the rest by size-``tournament`` selection, blend crossover and
    multiplicative log-normal mutation. The initial population holds the
    unit weighting, every single-feature weighting (the pure log-odds one
    reproduces nearest-neighbour matching) and random log-normal draws.
    """
    if population < 8:
        raise MatchingError("population must be at least 8")
    if generations < 1:
        raise MatchingError("generations must be at least 1")
    t = np.asarray(treatment).astype(bool)
    if t.sum() == 0 or (~t).sum() == 0:
        raise MatchingError("both treated and control groups must be non-empty")
    Z, fnames, C = genetic_features(design, model)
    lo = np.asarray(model.log_odds, dtype=float)
    if ids is None:
        ids = design.ids
    rank = id_ranks(ids)
    treated = np.flatnonzero(t)
    controls = np.flatnonzero(~t)
    d = Z.shape[1]
    order = _visit_order(lo[treated], rank[treated])
    Ft = np.ascontiguousarray(Z[treated])
    Pc = np.ascontiguousarray(Z[controls])
    prank = rank[controls]
    cache = {}

    def fitness(w):
        key = w.tobytes()
        if key not in cache:
            m, _ = greedy_match_kernel(Ft, Pc, w, order, prank, with_replacement, np.inf)
            ok = m >= 0
            cache[key] = _fitness_key(balance_fitness(C, treated[ok], controls[m[ok]]))
        return cache[key]

    root = np.random.SeedSequence(seed)
    gen_seqs = root.spawn(generations + 1)
    init_rngs = [np.random.default_rng(s) for s in gen_seqs[0].spawn(population)]
    # unit weights, then the simplex corners (log-odds alone first, which
    # reproduces nearest-neighbour matching), then random draws
    pop = [np.ones(d)]
    for k in range(d - 1, -1, -1):
        if len(pop) == population:
            break
        corner = np.zeros(d)
        corner[k] = 1.0
        pop.append(_normalise(corner))
    while len(pop) < population:
        r = init_rngs[len(pop)]
        pop.append(_normalise(np.exp(r.normal(0.0, 1.0, d))))

    scores = [fitness(w) for w in pop]
    best_i = min(range(population), key=lambda i: (scores[i], i))
    history = [scores[best_i]]
    for g in range(1, generations + 1):
        rngs = [np.random.default_rng(s) for s in gen_seqs[g].spawn(population)]
        elite = pop[best_i]
        new = [elite]
        for k in range(1, population):
            r = rngs[k]

            def pick():
                cand = r.choice(population, size=tournament, replace=False)
                return pop[min(cand, key=lambda i: (scores[i], i))]

            p1, p2 = pick(), pick()
            lo_b = np.minimum(p1, p2)
            hi_b = np.maximum(p1, p2)
            span = hi_b - lo_b
            child = r.uniform(lo_b - blend_alpha * span, hi_b + blend_alpha * span)
            child = np.clip(child, 0.0, None)
            child = child * np.exp(r.normal(0.0, mutation_sigma, d))
            new.append(_normalise(child))
        pop = new
        scores = [fitness(w) for w in pop]
        best_i = min(range(population), key=lambda i: (scores[i], i))
        history.append(scores[best_i])

    best_w = pop[best_i]
    return _bidirectional(
        Z, lo, treatment, ids, best_w, with_replacement, np.inf, GENETIC,
        weights=best_w, weight_names=fnames, fitness_history=tuple(history),
    )


def fitness_of(matched, design):
    """Fitness vector of an existing matched sample (for comparing methods)."""
    _, C = covariate_columns(design)
    ti, ci = matched.treated_control_indices()
    return _fitness_key(balance_fitness(C, ti, ci))
