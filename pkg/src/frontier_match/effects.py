"""ATE / ATT on matched samples with a full-pipeline bootstrap."""

from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dataset import DesignMatrix, build_design, frontier_arrays
from .dea import efficiency_scores
from .errors import NumericalError, ValidationError
from .matching import GENETIC, NN, match_genetic, match_nn
from .pscore import fit_logit

ATE = "ATE"
ATT = "ATT"
MAX_FAILURE_RATE = 0.10


class BootstrapError(NumericalError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for one fit -> match -> score -> estimate pass.

    ``outcome`` overrides the DEA outcome: a callable receiving the record
    sequence and the matched-unit indices and returning one value per
    record (only the matched entries are read).
    """

    method: str = NN
    with_replacement: bool = False
    caliper: Optional[float] = None
    population: int = 32
    generations: int = 50
    outcome: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.method not in (NN, GENETIC):
            raise ValidationError(f"unknown matching method {self.method!r}")


@dataclass(frozen=True)
class EffectEstimate:
    estimand: str
    method: str
    point: float
    bootstrap_se: float
    ci_low: float
    ci_high: float
    replicates: int
    failures: int
    seed: int
    n_treated: int
    n_controls: int


@dataclass
class PipelineResult:
    design: object
    model: object
    matched: object
    outcomes: np.ndarray
    ate: float
    att: float


def _outcome_values(outcomes, ids, idx):
    """Outcome array for the unit indices ``idx``."""
    if isinstance(outcomes, Mapping):
        try:
            return np.array([float(outcomes[ids[i]]) for i in idx])
        except KeyError as e:
            raise ValidationError(f"missing outcome for unit {e.args[0]!r}") from None
    v = np.asarray(outcomes, dtype=float)[idx]
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        raise ValidationError(f"missing outcome for unit {ids[idx[bad[0]]]!r}")
    return v


def att(matched, outcomes):
    """Mean of (treated outcome - matched control outcome) over treated focal units.

    ``outcomes`` is either a mapping ``unit_id -> value`` or an array aligned
    with ``matched.ids``.
    """
    f, m = matched.treated_control_indices()
    if f.size == 0:
        raise ValidationError("no treated-to-control pairs")
    ids = matched.ids
    return float(np.mean(_outcome_values(outcomes, ids, f) - _outcome_values(outcomes, ids, m)))


def ate(matched, outcomes):
    """Mean over every focal unit of Y(treated) - Y(control).

    A treated focal unit contributes its own outcome minus its match's; a
    control focal unit contributes its match's outcome minus its own.
    """
    if not (np.any(matched.direction == 1) and np.any(matched.direction == 0)):
        raise ValidationError("ATE needs pairs in both match directions")
    ids = matched.ids
    own = _outcome_values(outcomes, ids, matched.focal)
    other = _outcome_values(outcomes, ids, matched.matched)
    sign = np.where(matched.direction == 1, 1.0, -1.0)
    return float(np.mean(sign * (own - other)))


def matched_dea_outcomes(records, units):
    """DEA scores of the matched units on their pooled (common) frontier."""
    x, y = frontier_arrays(records)
    return _dea_outcomes(x, y, units)


def _dea_outcomes(x, y, units):
    out = np.full(x.shape[0], np.nan)
    out[units] = efficiency_scores(x[units], y[units])
    return out


@dataclass(frozen=True)
class _Arrays:
    design: DesignMatrix
    inputs: np.ndarray
    outputs: np.ndarray

    @classmethod
    def of(cls, records):
        x, y = frontier_arrays(records)
        return cls(build_design(records), x, y)

    def take(self, idx):
        d = self.design
        ids = d.ids
        sub = DesignMatrix(d.X[idx], d.treatment[idx], tuple(ids[i] for i in idx), d.columns)
        return _Arrays(sub, self.inputs[idx], self.outputs[idx])


def _run(arrays, records, config, seed):
    design = arrays.design
    model = fit_logit(design)
    if config.method == NN:
        matched = match_nn(model, design.treatment, design.ids, config.with_replacement, config.caliper)
    else:
        matched = match_genetic(
            design, design.treatment, model,
            population=config.population, generations=config.generations,
            seed=seed, with_replacement=config.with_replacement,
        )
    units = matched.units()
    if config.outcome is None:
        outcomes = _dea_outcomes(arrays.inputs, arrays.outputs, units)
    else:
        outcomes = np.asarray(config.outcome(records, units), dtype=float)
    return PipelineResult(design, model, matched, outcomes, ate(matched, outcomes), att(matched, outcomes))


def run_pipeline_once(records, config, seed=0):
    """Propensity fit, matching, matched-sample scoring and both estimands.

    ``seed`` only matters for genetic matching.
    """
    records = list(records)
    return _run(_Arrays.of(records), records, config, seed)


def _stratified_indices(rng, treated, controls):
    return np.concatenate([
        rng.choice(treated, size=treated.size, replace=True),
        rng.choice(controls, size=controls.size, replace=True),
    ])


def bootstrap_effects(records, config, replicates=999, seed=0, point=None):
    """Bootstrap both estimands by re-running the whole pipeline.

    Records are resampled with replacement within each group, so group sizes
    are preserved. Replicate ``b`` uses the ``b``-th child of
    ``SeedSequence(seed)``, making results independent of evaluation order.
    Replicates whose propensity fit or matching fails are discarded; more
    than 10 % failures raises :class:`BootstrapError`.

    Returns
    -------
    dict
        ``{"ATE": EffectEstimate, "ATT": EffectEstimate}``
    """
    if replicates < 100:
        raise ValidationError("at least 100 bootstrap replicates are required")
    records = list(records)
    arrays = _Arrays.of(records)
    if point is None:
        point = _run(arrays, records, config, seed)
    g = arrays.design.treatment.astype(bool)
    treated = np.flatnonzero(g)
    controls = np.flatnonzero(~g)
    draws = {ATE: [], ATT: []}
    failures = 0
    for child in np.random.SeedSequence(seed).spawn(replicates):
        rng = np.random.default_rng(child)
        idx = _stratified_indices(rng, treated, controls)
        sample = [records[i] for i in idx] if config.outcome is not None else None
        try:
            res = _run(arrays.take(idx), sample, config, int(rng.integers(2**31)))
        except (NumericalError, ValidationError):
            failures += 1
            continue
        draws[ATE].append(res.ate)
        draws[ATT].append(res.att)
    if failures > MAX_FAILURE_RATE * replicates:
        raise BootstrapError(f"{failures} of {replicates} bootstrap replicates failed")
    out = {}
    ti, ci = point.matched.treated_control_indices()
    for est, value in ((ATE, point.ate), (ATT, point.att)):
        v = np.asarray(draws[est])
        lo, hi = np.percentile(v, [2.5, 97.5])
        out[est] = EffectEstimate(
            estimand=est,
            method=config.method,
            point=float(value),
            bootstrap_se=float(v.std(ddof=1)) if v.size > 1 else 0.0,
            ci_low=float(lo),
            ci_high=float(hi),
            replicates=int(v.size),
            failures=failures,
            seed=seed,
            n_treated=int(np.unique(ti).size),
            n_controls=int(np.unique(ci).size),
        )
    return out


def bootstrap(estimand, records, config, replicates=999, seed=0):
    """Single-estimand form of :func:`bootstrap_effects`."""
    if estimand not in (ATE, ATT):
        raise ValidationError(f"unknown estimand {estimand!r}")
    return bootstrap_effects(records, config, replicates, seed)[estimand]
