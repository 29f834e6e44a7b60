"""Tabular report objects and their CSV / markdown renderings.

Every stage of the pipeline produces :class:`Table` objects; the CLI writes
each as ``<name>.csv`` and/or ``<name>.md``. Floats are written with
``repr`` in CSV (lossless) and to four decimals in markdown. No timestamps
or absolute paths enter any output, so bundles are byte-reproducible.
"""

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dataset import GROUPS, TREATED
from .errors import ValidationError

GROUP_LABELS = {"DB": "D&B", "DBB": "DBB"}
POOLED = "Pooled"


@dataclass
class Table:
    name: str
    title: str
    headers: tuple
    rows: list
    notes: list = field(default_factory=list)

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(self.headers)
        for row in self.rows:
            w.writerow([_csv_cell(v) for v in row])
        return out.getvalue()

    def to_markdown(self):
        lines = [f"## {self.title}", ""]
        lines.append("| " + " | ".join(str(h) for h in self.headers) + " |")
        lines.append("|" + "|".join("---" for _ in self.headers) + "|")
        for row in self.rows:
            lines.append("| " + " | ".join(_md_cell(v) for v in row) + " |")
        for note in self.notes:
            lines += ["", note]
        return "\n".join(lines) + "\n"


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def _md_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "yes" if v else "no"
    if isinstance(v, (float, np.floating)):
        return fmt4(v)
    return "" if v is None else str(v)


def fmt4(v):
    v = float(v)
    if not np.isfinite(v):
        return "nan" if np.isnan(v) else ("inf" if v > 0 else "-inf")
    s = f"{v:.4f}"
    return "0.0000" if s == "-0.0000" else s


def _parse_cell(text):
    # only exact round-trips become numbers, so ids such as "007" stay text
    try:
        if str(int(text)) == text:
            return int(text)
    except ValueError:
        pass
    try:
        v = float(text)
    except ValueError:
        return text
    return v if repr(v) == text else text


def read_csv_table(text, name, title=None):
    """Inverse of :meth:`Table.to_csv`; numeric cells come back as numbers."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValidationError(f"table {name!r} is empty")
    body = [tuple(_parse_cell(c) for c in r) for r in rows[1:]]
    return Table(name, title or name, tuple(rows[0]), body)


# ---------------------------------------------------------------------------
# efficiency summaries


@dataclass(frozen=True)
class ScoreSummary:
    label: str
    obs: int
    mean: float
    sd: float
    min: float
    max: float


def _summary(label, v):
    v = np.asarray(v, dtype=float)
    sd = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return ScoreSummary(label, int(v.size), float(v.mean()), sd, float(v.min()), float(v.max()))


def summarize_scores(scores, grouping):
    """Obs / Mean / SD / Min / Max, pooled first and then DBB, D&B.

    Parameters
    ----------
    scores : array_like
    grouping : sequence of str
        Group label (``"DB"`` or ``"DBB"``) per score.

    Groups with no scores are omitted.
    """
    s = np.asarray(scores, dtype=float)
    if s.size == 0:
        raise ValidationError("no scores to summarize")
    g = np.asarray(grouping, dtype=object)
    if g.shape != s.shape:
        raise ValidationError("grouping must have one label per score")
    rows = [_summary(POOLED, s)]
    for label in ("DBB", TREATED):
        sel = g == label
        if sel.any():
            rows.append(_summary(GROUP_LABELS[label], s[sel]))
    return rows


def summary_table(name, title, summaries, sample=None):
    headers = ("sample", "group", "obs", "mean", "sd", "min", "max") if sample else (
        "group", "obs", "mean", "sd", "min", "max"
    )
    rows = []
    for r in summaries:
        vals = (r.label, r.obs, round(r.mean, 4), round(r.sd, 4), round(r.min, 4), round(r.max, 4))
        rows.append(((sample,) + vals) if sample else vals)
    return Table(name, title, headers, rows)


# ---------------------------------------------------------------------------
# stage tables


def coefficient_table(model):
    rows = [(c, b, s, b / s if s > 0 else float("nan")) for c, b, s in model.coefficient_table()]
    t = Table("pscore", "Propensity score logit (treatment: D&B)", ("covariate", "estimate", "std_error", "z"), rows)
    t.notes.append(
        f"log-likelihood {fmt4(model.log_likelihood)}, iterations {model.iterations}, "
        f"converged {'yes' if model.converged else 'no'}"
    )
    return t


def matches_table(matched):
    rows = [(f, m, d, k, matched.method) for f, m, d, k in matched.pairs]
    return Table(
        f"matches_{matched.method}",
        f"Matched pairs ({matched.method})",
        ("focal_id", "matched_id", "direction", "distance", "method"),
        rows,
    )


def weights_table(matched):
    if matched.weights is None:
        return None
    rows = [(n, float(w)) for n, w in zip(matched.weight_names, matched.weights)]
    t = Table(f"weights_{matched.method}", f"Genetic matching weights ({matched.method})", ("feature", "weight"), rows)
    if matched.fitness_history:
        best = matched.fitness_history[-1]
        t.notes.append("best fitness (largest |SMD| first): " + ", ".join(fmt4(v) for v in best))
    return t


def scores_table(name, title, sample, scores):
    groups = sample.groups if sample.groups is not None else (None,) * len(sample)
    rows = [
        (s.unit_id, sample.scope, g, s.score, ";".join(sorted(s.binding_peers)))
        for s, g in zip(scores, groups)
    ]
    return Table(name, title, ("unit_id", "scope", "group", "score", "peers"), rows)


def smd_table(table):
    methods = list(table.after)
    headers = ("covariate", "unmatched") + tuple(methods)
    rows = []
    for j, c in enumerate(table.covariates):
        rows.append((c, abs(float(table.before[j]))) + tuple(abs(float(table.after[m][j])) for m in methods))
    rows.append(("max", table.max_before()) + tuple(table.max_after(m) for m in methods))
    t = Table("balance_smd", "Absolute standardized mean differences", headers, rows)
    flagged = table.flagged()
    if flagged:
        t.notes.append("degenerate (constant within groups, different between): " + ", ".join(flagged))
    return t


def stratification_table(report):
    rows = [
        (i, b.lo, b.hi, b.n_treated, b.n_control, b.score_t, b.score_p)
        for i, b in enumerate(report.blocks)
    ]
    t = Table(
        "balance_blocks",
        "Propensity-score blocks",
        ("block", "lo", "hi", "n_treated", "n_control", "t_score", "p_score"),
        rows,
    )
    t.notes.append(
        f"alpha {report.alpha}, common support [{fmt4(report.support[0])}, {fmt4(report.support[1])}], "
        f"splits {report.splits}, score balanced {'yes' if report.score_balanced else 'no'}"
    )
    return t


def covariate_pass_table(report):
    rows = []
    for j, c in enumerate(report.covariates):
        rows.append((c, float(np.min(report.p_values[:, j])), "yes" if report.covariate_pass[c] else "no"))
    return Table("balance_covariates", "Within-block covariate balance", ("covariate", "min_p", "balanced"), rows)


def density_table(name, title, estimate):
    return Table(name, title, ("x", "density"), list(zip(estimate.grid.tolist(), estimate.density.tolist())))


def effects_tables(estimates):
    """Long-form CSV rows plus the wide two-line-per-estimand markdown layout.

    ``estimates`` maps method -> {"ATE": EffectEstimate, "ATT": EffectEstimate}.
    """
    methods = list(estimates)
    long_rows = []
    for est in ("ATE", "ATT"):
        for m in methods:
            e = estimates[m][est]
            long_rows.append((
                est, m, e.point, e.bootstrap_se, e.ci_low, e.ci_high,
                e.n_treated, e.n_controls, e.replicates, e.failures, e.seed,
            ))
    long = Table(
        "effects",
        "Treatment effects on DEA efficiency",
        ("estimand", "method", "point", "se", "ci_low", "ci_high",
         "n_treated", "n_controls", "replicates", "failures", "seed"),
        long_rows,
    )
    wide_rows = []
    for est in ("ATE", "ATT"):
        wide_rows.append((est,) + tuple(fmt4(estimates[m][est].point) for m in methods))
        wide_rows.append(("",) + tuple(f"({fmt4(estimates[m][est].bootstrap_se)})" for m in methods))
    wide_rows.append(("N treated",) + tuple(str(estimates[m]["ATT"].n_treated) for m in methods))
    wide_rows.append(("N controls",) + tuple(str(estimates[m]["ATT"].n_controls) for m in methods))
    wide = Table(
        "effects_table",
        "Average treatment effects (ATE) and on the treated (ATT)",
        ("",) + tuple(methods),
        wide_rows,
        notes=["Bootstrapped standard errors in parentheses; 95% percentile intervals in effects.csv."],
    )
    return long, wide


def ftest_table(result):
    rows = [
        ("tau", result.tau, result.tau_pvalue),
        ("ks", result.ks, result.ks_pvalue),
    ]
    t = Table("ftest", "Common-frontier test (bias-corrected mean difference and KS)", ("statistic", "value", "p_value"), rows)
    t.notes.append(result.line())
    t.notes.append(
        f"n(D&B)={result.n1}, n(DBB)={result.n0}, kappa={result.kappa:g}, split_seed={result.split_seed}; "
        "tau is this package's reduced construction of the separability test."
    )
    return t


def write_tables(tables, out_dir, formats):
    """Write each table in the requested formats; returns the file names written."""
    written = []
    for t in tables:
        if "csv" in formats:
            p = out_dir / f"{t.name}.csv"
            p.write_text(t.to_csv(), encoding="utf-8")
            written.append(p.name)
        if "md" in formats:
            p = out_dir / f"{t.name}.md"
            p.write_text(t.to_markdown(), encoding="utf-8")
            written.append(p.name)
    return written


def dumps_json(obj):
    """Canonical JSON: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (set, frozenset, tuple)):
        return list(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def group_label(group):
    if group not in GROUPS:
        raise ValidationError(f"unknown group {group!r}")
    return GROUP_LABELS[group]
