"""Logit propensity model fitted by Newton / IRLS."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.special import expit

from .errors import NumericalError

GRAD_TOL = 1e-8
MAX_ITER = 50
MAX_HALVINGS = 20
SEPARATION_NORM = 1e3
# |log-odds| beyond this means a fitted probability within ~3e-7 of 0 or 1
SATURATION = 15.0


class PropensityError(NumericalError):
    pass


class SeparationError(PropensityError):
    """Coefficients diverge: some covariate direction separates the groups."""


@dataclass(frozen=True)
class PropensityModel:
    columns: tuple
    coefficients: np.ndarray
    std_errors: np.ndarray
    covariance: np.ndarray
    log_likelihood: float
    converged: bool
    iterations: int
    scores: np.ndarray
    log_odds: np.ndarray

    def coefficient_table(self):
        """Rows of ``(name, estimate, standard error)``."""
        return [
            (c, float(b), float(s))
            for c, b, s in zip(self.columns, self.coefficients, self.std_errors)
        ]


def _loglik(eta, y):
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


def separation(Z, y, tol=1e-7):
    """Classify the sample as ``"none"``, ``"quasi"`` or ``"complete"`` separation.

    Returns ``(kind, direction)``. Complete separation means some ``d``
    gives ``z_i d > 0`` for every treated and ``< 0`` for every control row;
    quasi-complete separation allows ties at zero (a dummy level containing
    only one group is the typical case). Both are bounded LPs.
    """
    s = np.where(np.asarray(y) > 0, 1.0, -1.0)
    S = Z * s[:, None]
    n, p = S.shape
    # maximise the smallest signed margin t
    res = linprog(
        np.r_[np.zeros(p), -1.0], A_ub=np.c_[-S, np.ones(n)], b_ub=np.zeros(n),
        bounds=[(-1.0, 1.0)] * p + [(0.0, None)], method="highs",
    )
    if res.status == 0 and -res.fun > tol:
        return "complete", res.x[:p]
    res = linprog(-S.sum(axis=0), A_ub=-S, b_ub=np.zeros(n), bounds=[(-1.0, 1.0)] * p, method="highs")
    if res.status == 0 and -res.fun > tol * n:
        return "quasi", res.x
    return "none", None


def fit_logit(design):
    """Maximum-likelihood logit of treatment on the design matrix.

    Column 0 of ``design.X`` must be the intercept. The remaining columns
    are standardised for the Newton iterations and coefficients are mapped
    back to the original units afterwards. Iteration stops once every
    score-equation component is below ``GRAD_TOL`` (on the standardised
    scale) or after ``MAX_ITER`` steps.

    Raises
    ------
    SeparationError
        If the coefficient norm exceeds ``SEPARATION_NORM``, or the fit
        saturates and the groups are completely separated. Quasi-complete
        separation (e.g. a dummy level holding only controls) is returned
        with ``converged=False``.
    PropensityError
        On a single-class sample or a singular information matrix.
    """
    X = np.asarray(design.X, dtype=float)
    y = np.asarray(design.treatment, dtype=float)
    columns = tuple(design.columns)
    n, p = X.shape
    n1 = y.sum()
    if n1 == 0 or n1 == n:
        raise PropensityError("need at least one treated and one control record")
    if not np.allclose(X[:, 0], 1.0):
        raise PropensityError("first design column must be the intercept")

    mu = X[:, 1:].mean(axis=0)
    sd = X[:, 1:].std(axis=0)
    flat = np.flatnonzero(sd == 0)
    if flat.size:
        raise PropensityError(
            f"singular information matrix: column {columns[1 + flat[0]]!r} is constant"
        )
    Z = np.empty_like(X)
    Z[:, 0] = 1.0
    Z[:, 1:] = (X[:, 1:] - mu) / sd

    b = np.zeros(p)
    ybar = n1 / n
    b[0] = np.log(ybar / (1.0 - ybar))
    eta = Z @ b
    ll = _loglik(eta, y)
    converged = False
    it = 0
    while True:
        prob = expit(eta)
        grad = Z.T @ (y - prob)
        if np.max(np.abs(grad)) < GRAD_TOL:
            converged = True
            break
        if it >= MAX_ITER:
            break
        w = prob * (1.0 - prob)
        H = (Z * w[:, None]).T @ Z
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            raise PropensityError("singular information matrix")
        if not np.all(np.isfinite(step)):
            raise PropensityError("singular information matrix")
        it += 1
        t = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = b + t * step
            eta_c = Z @ cand
            ll_c = _loglik(eta_c, y)
            if ll_c >= ll:
                break
            t *= 0.5
        else:
            # no ascent possible at working precision
            break
        b, eta, ll = cand, eta_c, ll_c
        if np.linalg.norm(b) > SEPARATION_NORM:
            k = int(np.argmax(np.abs(b[1:]))) + 1
            raise SeparationError(
                f"perfect separation: coefficient on {columns[k]!r} diverges"
            )

    if not converged or np.max(np.abs(eta)) > SATURATION:
        kind, d = separation(Z, y)
        if kind == "complete":
            k = int(np.argmax(np.abs(d[1:]))) + 1
            raise SeparationError(f"perfect separation: the data are separated along {columns[k]!r}")
        if kind == "quasi":
            # the likelihood has no maximiser; keep the fit but do not call it converged
            converged = False

    # map back: beta_k = b_k / sd_k, beta_0 = b_0 - sum b_k mu_k / sd_k
    A = np.zeros((p, p))
    A[0, 0] = 1.0
    A[0, 1:] = -mu / sd
    A[np.arange(1, p), np.arange(1, p)] = 1.0 / sd
    beta = A @ b
    prob = expit(eta)
    w = prob * (1.0 - prob)
    info = (Z * w[:, None]).T @ Z
    try:
        cov_b = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise PropensityError("singular information matrix")
    cov = A @ cov_b @ A.T
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    scores = np.clip(prob, np.finfo(float).tiny, 1.0 - np.finfo(float).epsneg)
    return PropensityModel(
        columns=columns,
        coefficients=beta,
        std_errors=se,
        covariance=cov,
        log_likelihood=ll,
        converged=converged,
        iterations=it,
        scores=scores,
        log_odds=eta.copy(),
    )
