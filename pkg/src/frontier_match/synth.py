"""Synthetic contract populations with selection on observables and a planted effect.

Covariates follow the marginal shares of the descriptive statistics
(new build 0.39, negotiation 0.45, authority mix); treatment is a logit
draw on the design columns; execution overruns are lognormal shocks that
the treatment reduces by ``planted_effect`` (in log points):

    agreed_cost  = reserve_price * (1 - rebate),  rebate ~ U[0.05, 0.30]
    planned_time ~ lognormal with mean ~103 days
    actual_cost  = agreed_cost  * exp(max(0, oc - planted_effect * treated))
    actual_time  = planned_time * exp(max(0, ot - planted_effect * treated))

with ``oc ~ N(cost_overrun_loc, overrun_noise_sd)`` and likewise ``ot``.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import AUTHORITIES, DESIGN_COLUMNS, ContractRecord
from .errors import ValidationError

# signs follow the published logit; magnitudes chosen for a ~25 % treated share
BASELINE_SELECTION = (-2.35, 0.012, 0.6, -0.6, -1.1, -1.6, -0.95, -1.05, 0.35)
AUTHORITY_SHARES = (0.50, 0.12, 0.10, 0.11, 0.03, 0.13)

PLANNED_TIME_MEAN = 103.0
PLANNED_TIME_SD = 90.0


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 1000
    selection_coefficients: tuple = BASELINE_SELECTION
    planted_effect: float = 0.0
    overrun_noise_sd: float = 0.4
    cost_overrun_loc: float = 0.7
    time_overrun_loc: float = 0.9
    reserve_price_range: tuple = (40.0, 200.0)
    new_build_p: float = 0.39
    negotiation_p: float = 0.45
    authority_shares: tuple = AUTHORITY_SHARES
    rebate_range: tuple = (0.05, 0.30)
    seed: int = 0

    def __post_init__(self):
        if self.n < 50:
            raise ValidationError("scenario needs n >= 50")
        if len(self.selection_coefficients) != len(DESIGN_COLUMNS):
            raise ValidationError(
                f"selection_coefficients needs {len(DESIGN_COLUMNS)} entries ({', '.join(DESIGN_COLUMNS)})"
            )
        for name in ("new_build_p", "negotiation_p"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValidationError(f"{name} must be a probability")
        shares = np.asarray(self.authority_shares, dtype=float)
        if shares.shape != (len(AUTHORITIES),) or np.any(shares < 0) or shares.sum() <= 0:
            raise ValidationError("authority_shares needs one non-negative share per authority")
        lo, hi = self.reserve_price_range
        if not 0 < lo < hi:
            raise ValidationError("reserve_price_range must be an increasing positive interval")
        r0, r1 = self.rebate_range
        if not 0 <= r0 <= r1 < 1:
            raise ValidationError("rebate_range must lie in [0, 1)")
        if self.overrun_noise_sd < 0:
            raise ValidationError("overrun_noise_sd must be non-negative")
        object.__setattr__(self, "selection_coefficients", tuple(float(c) for c in self.selection_coefficients))

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown scenario fields: {', '.join(sorted(extra))}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


@dataclass(frozen=True)
class PotentialOutcomes:
    """Inputs each record would show under either arm (same shocks)."""

    treated: np.ndarray              # bool
    inputs_if_treated: np.ndarray    # (n, 2) actual cost, actual time
    inputs_if_control: np.ndarray
    outputs: np.ndarray              # (n, 2) agreed cost, planned time
    log_overrun: np.ndarray = field(repr=False, default=None)


def _lognormal_params(mean, sd):
    s2 = np.log1p((sd / mean) ** 2)
    return np.log(mean) - s2 / 2.0, np.sqrt(s2)


def _draw(config):
    rng = np.random.default_rng(config.seed)
    n = config.n
    lo, hi = config.reserve_price_range
    reserve = rng.uniform(lo, hi, n)
    new_build = rng.random(n) < config.new_build_p
    negotiation = rng.random(n) < config.negotiation_p
    shares = np.asarray(config.authority_shares, dtype=float)
    authority = rng.choice(len(AUTHORITIES), size=n, p=shares / shares.sum())

    X = np.zeros((n, len(DESIGN_COLUMNS)))
    X[:, 0] = 1.0
    X[:, 1] = reserve
    X[:, 2] = new_build
    X[:, 3] = negotiation
    for k in range(1, len(AUTHORITIES)):
        X[:, 3 + k] = authority == k
    treated = rng.random(n) < expit(X @ np.asarray(config.selection_coefficients))

    rebate = rng.uniform(*config.rebate_range, n)
    agreed = reserve * (1.0 - rebate)
    mu, s = _lognormal_params(PLANNED_TIME_MEAN, PLANNED_TIME_SD)
    planned = np.exp(rng.normal(mu, s, n))
    oc = rng.normal(config.cost_overrun_loc, config.overrun_noise_sd, n)
    ot = rng.normal(config.time_overrun_loc, config.overrun_noise_sd, n)
    base = np.column_stack([oc, ot])
    out = np.column_stack([agreed, planned])
    d = config.planted_effect
    x1 = out * np.exp(np.maximum(0.0, base - d))
    x0 = out * np.exp(np.maximum(0.0, base))
    pot = PotentialOutcomes(treated, x1, x0, out, base)
    return reserve, new_build, negotiation, authority, pot


def generate(config, with_potential=False):
    """Draw a population; deterministic for a given ``config.seed``.

    With ``with_potential=True`` also returns :class:`PotentialOutcomes`.
    """
    reserve, new_build, negotiation, authority, pot = _draw(config)
    width = len(str(config.n - 1))
    x = np.where(pot.treated[:, None], pot.inputs_if_treated, pot.inputs_if_control)
    records = [
        ContractRecord(
            contract_id=f"C{i:0{width}d}",
            group="DB" if pot.treated[i] else "DBB",
            reserve_price=float(reserve[i]),
            new_build=bool(new_build[i]),
            negotiation=bool(negotiation[i]),
            authority=AUTHORITIES[authority[i]],
            actual_cost=float(x[i, 0]),
            actual_time=float(x[i, 1]),
            agreed_cost=float(pot.outputs[i, 0]),
            planned_time=float(pot.outputs[i, 1]),
        )
        for i in range(config.n)
    ]
    if with_potential:
        return records, pot
    return records


def potential_score_shift(potential, units, reference=None):
    """Mean efficiency gain from treatment for ``units``, holding shocks fixed.

    Both potential input vectors of every unit are scored against the
    observed frontier of ``reference`` (default: ``units``), with the unit's
    own counterfactual point added to the reference set, so scores stay in
    (0, 1]. Repeated indices in ``units`` count repeatedly.
    """
    from .dea import efficiency_scores

    units = np.asarray(units, dtype=int)
    ref = np.unique(units if reference is None else np.asarray(reference, dtype=int))
    t = potential.treated[ref][:, None]
    x_obs = np.where(t, potential.inputs_if_treated[ref], potential.inputs_if_control[ref])
    y_ref = potential.outputs[ref]
    y = potential.outputs[units]
    s1 = efficiency_scores(potential.inputs_if_treated[units], y, x_obs, y_ref)
    s0 = efficiency_scores(potential.inputs_if_control[units], y, x_obs, y_ref)
    return float(np.mean(np.minimum(s1, 1.0) - np.minimum(s0, 1.0)))
