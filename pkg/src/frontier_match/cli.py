"""Command-line interface: ``frontier-match <command> [options]``.

Settings are resolved in increasing priority from built-in defaults, a
JSON ``--config`` file, ``FRONTIER_MATCH_*`` environment variables and
command-line flags. Exit status is 0 on success, 2 on invalid input or
configuration and 3 on numerical failure.
"""

import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import BACKEND
from .balance import kernel_density, smd_before_after, stratification_test
from .dataset import TREATED, build_design, check_unique_ids, frontier_arrays, parse_csv, to_csv
from .dea import BY_GROUP, COMMON, FrontierSample, score_all
from .effects import PipelineConfig, bootstrap_effects
from .errors import FrontierMatchError, NumericalError, ValidationError
from .ftest import group_mean_test
from .matching import GENETIC, NN, match_genetic, match_nn
from .pscore import fit_logit
from .report import (
    Table, coefficient_table, covariate_pass_table, density_table, dumps_json, effects_tables,
    ftest_table, matches_table, read_csv_table, scores_table, smd_table, stratification_table,
    summarize_scores, summary_table, weights_table, write_tables,
)
from .synth import ScenarioConfig, generate

ENV_PREFIX = "FRONTIER_MATCH_"
METHODS = (NN, GENETIC)
FORMATS = ("csv", "md", "both")
MANIFEST = "manifest.json"
REPORT = "report.md"

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


@dataclass(frozen=True)
class RunConfig:
    input: str = None
    scenario: object = None          # path to a scenario JSON or an inline dict
    methods: tuple = (NN,)
    with_replacement: bool = False
    caliper: float = None
    population: int = 32
    generations: int = 50
    replicates: int = 999
    seed: int = None
    out: str = None
    format: str = "both"

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad or not self.methods:
            raise ValidationError(f"methods must be drawn from {METHODS}, got {list(self.methods)}")
        if len(set(self.methods)) != len(self.methods):
            raise ValidationError("each matching method may be given once")
        if self.format not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}")
        if self.caliper is not None and not self.caliper > 0:
            raise ValidationError("caliper must be positive")
        if self.replicates < 100:
            raise ValidationError("replicates must be at least 100")

    @property
    def formats(self):
        return ("csv", "md") if self.format == "both" else (self.format,)

    def echo(self):
        d = asdict(self)
        d["methods"] = list(self.methods)
        d.pop("out")
        if isinstance(self.input, str):
            d["input"] = Path(self.input).name
        if isinstance(self.scenario, str):
            d["scenario"] = Path(self.scenario).name
        return d


class StageError(FrontierMatchError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if isinstance(ev, FrontierMatchError) and not isinstance(ev, StageError):
            raise StageError(self.name, ev) from ev
        return False


# ---------------------------------------------------------------------------
# configuration


_FIELD_TYPES = {
    "input": str, "scenario": str, "methods": "list", "with_replacement": "bool",
    "caliper": float, "population": int, "generations": int, "replicates": int,
    "seed": int, "out": str, "format": str,
}
_ENV_NAMES = {"methods": "METHOD"}


def _coerce(name, value):
    kind = _FIELD_TYPES[name]
    try:
        if kind == "list":
            items = value.split(",") if isinstance(value, str) else list(value)
            return tuple(s.strip() for s in items if str(s).strip())
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text not in ("0", "1", "true", "false", "yes", "no"):
                raise ValueError(value)
            return text in ("1", "true", "yes")
        if kind is str and isinstance(value, dict) and name == "scenario":
            return value
        if kind is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"invalid value for {name}: {value!r}") from None


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name in _FIELD_TYPES:
        key = ENV_PREFIX + _ENV_NAMES.get(name, name.upper())
        if key in environ and environ[key] != "":
            out[name] = _coerce(name, environ[key])
    return out


def load_config_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as e:
        raise ValidationError(f"cannot read config {path}: {e.strerror}") from None
    except json.JSONDecodeError as e:
        raise ValidationError(f"config {path} is not valid JSON: {e}") from None
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    if "method" in data and "methods" not in data:
        data["methods"] = data.pop("method")
    unknown = set(data) - set(_FIELD_TYPES)
    if unknown:
        raise ValidationError(f"unknown config fields: {', '.join(sorted(unknown))}")
    return {k: (v if k == "scenario" and isinstance(v, dict) else _coerce(k, v)) for k, v in data.items()}


def resolve_config(args, environ=None):
    """Merge defaults, config file, environment and flags into a RunConfig."""
    values = {}
    if getattr(args, "config", None):
        values.update(load_config_file(args.config))
    values.update(env_overrides(environ))
    flags = {
        "input": getattr(args, "input", None),
        "scenario": getattr(args, "scenario", None),
        "methods": tuple(args.method) if getattr(args, "method", None) else None,
        "caliper": getattr(args, "caliper", None),
        "population": getattr(args, "population", None),
        "generations": getattr(args, "generations", None),
        "replicates": getattr(args, "replicates", None),
        "seed": getattr(args, "seed", None),
        "out": getattr(args, "out", None),
        "format": getattr(args, "format", None),
    }
    if getattr(args, "with_replacement", False):
        flags["with_replacement"] = True
    values.update({k: v for k, v in flags.items() if v is not None})
    return RunConfig(**values)


def _require_seed(cfg, what):
    if cfg.seed is None:
        raise ValidationError(f"--seed is required for {what}")


def derive_seed(seed, *keys):
    """Independent integer seed for a named sub-stream of the top-level seed."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


_METHOD_KEY = {NN: 1, GENETIC: 2}
_FTEST_KEY = 7


# ---------------------------------------------------------------------------
# stages


def _scenario_config(source, seed=None):
    if isinstance(source, dict):
        cfg = ScenarioConfig.from_dict(source)
    else:
        try:
            cfg = ScenarioConfig.from_json(source)
        except OSError as e:
            raise ValidationError(f"cannot read scenario {source}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"scenario {source} is not valid JSON: {e}") from None
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    return cfg


def load_records(cfg):
    """Records from ``--input`` or, failing that, a generated ``--scenario``."""
    with _Stage("ingest"):
        if cfg.input and cfg.scenario:
            raise ValidationError("give either --input or --scenario, not both")
        if cfg.input:
            try:
                records = parse_csv(cfg.input)
            except OSError as e:
                raise ValidationError(f"cannot read {cfg.input}: {e.strerror}") from None
        elif cfg.scenario:
            records = generate(_scenario_config(cfg.scenario))
        else:
            raise ValidationError("an --input CSV or a --scenario is required")
        check_unique_ids(records)
        if not records:
            raise ValidationError("input holds no records")
        return records


def _input_digest(cfg):
    if cfg.input:
        return hashlib.sha256(Path(cfg.input).read_bytes()).hexdigest()
    return None


def _match(cfg, design, model, method):
    with _Stage(f"match[{method}]"):
        if method == NN:
            return match_nn(model, design.treatment, design.ids, cfg.with_replacement, cfg.caliper)
        return match_genetic(
            design, design.treatment, model,
            population=cfg.population, generations=cfg.generations,
            seed=derive_seed(cfg.seed, _METHOD_KEY[method]), ids=design.ids,
            with_replacement=cfg.with_replacement,
        )


def _pipeline_config(cfg, method):
    return PipelineConfig(
        method=method, with_replacement=cfg.with_replacement, caliper=cfg.caliper,
        population=cfg.population, generations=cfg.generations,
    )


class Bundle:
    """Collects tables during a run and writes them plus the manifest."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.summaries = []      # human-facing tables (md and/or csv)
        self.data = []           # bulk exports (always csv)
        self.results = {}

    def summary(self, table):
        if table is not None:
            self.summaries.append(table)

    def export(self, table):
        if table is not None:
            self.data.append(table)

    def _reloaded(self):
        # the report command rebuilds tables from CSV, so render from the same text
        tables = []
        for t in self.summaries:
            r = read_csv_table(t.to_csv(), t.name, t.title)
            r.notes = list(t.notes)
            tables.append(r)
        return tables

    def write(self, out):
        out = Path(out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ValidationError(f"cannot create output directory {out}: {e.strerror}") from None
        files = write_tables(self.summaries, out, self.cfg.formats)
        files += write_tables(self.data, out, ("csv",))
        if "md" in self.cfg.formats:
            (out / REPORT).write_text(render_report(self._reloaded(), self.command), encoding="utf-8")
            files.append(REPORT)
        manifest = {
            "command": self.command,
            "config": self.cfg.echo(),
            "seed": self.cfg.seed,
            "input_sha256": _input_digest(self.cfg),
            "versions": {
                "frontier_match": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": _version("scipy"),
                "numba": _version("numba"),
            },
            "backend": BACKEND,
            "results": self.results,
            "tables": [{"name": t.name, "title": t.title, "notes": t.notes} for t in self.summaries],
            "files": sorted(files + [MANIFEST]),
        }
        (out / MANIFEST).write_text(dumps_json(manifest), encoding="utf-8")
        return sorted(files + [MANIFEST])


def _version(mod):
    try:
        return __import__(mod).__version__
    except ImportError:
        return None


def render_report(tables, command):
    parts = [f"# frontier-match {command} report", ""]
    for t in tables:
        parts.append(t.to_markdown())
    return "\n".join(parts)


def stage_pscore(records, bundle):
    design = build_design(records)
    with _Stage("pscore"):
        model = fit_logit(design)
    bundle.summary(coefficient_table(model))
    bundle.results["pscore"] = {
        "converged": model.converged,
        "log_likelihood": model.log_likelihood,
        "coefficients": dict(zip(model.columns, model.coefficients.tolist())),
    }
    return design, model


def stage_match(cfg, design, model, bundle):
    matched = {}
    for m in cfg.methods:
        ms = _match(cfg, design, model, m)
        matched[m] = ms
        bundle.export(matches_table(ms))
        bundle.export(weights_table(ms))
        bundle.results.setdefault("matching", {})[m] = {
            "pairs": int(ms.focal.size),
            "treated_control_pairs": int(np.sum(ms.direction == 1)),
            "unmatched": int(ms.unmatched.size),
        }
    return matched


def stage_balance(cfg, design, model, matched, bundle):
    with _Stage("balance"):
        smd = smd_before_after(design, matched)
        strat = stratification_test(model, design)
        bundle.summary(smd_table(smd))
        bundle.summary(stratification_table(strat))
        bundle.summary(covariate_pass_table(strat))
        t = design.treatment.astype(bool)
        samples = [("unmatched", np.flatnonzero(t), np.flatnonzero(~t))]
        samples += [(m, *ms.treated_control_indices()) for m, ms in matched.items()]
        for label, ti, ci in samples:
            for group, idx in (("DB", ti), ("DBB", ci)):
                v = model.scores[np.unique(idx)]
                if np.unique(v).size < 2:
                    continue
                bundle.export(density_table(
                    f"density_pscore_{label}_{group}",
                    f"Propensity score density ({label}, {group})",
                    kernel_density(v),
                ))
    bundle.results["balance"] = {
        "max_smd_before": smd.max_before(),
        "max_smd_after": {m: smd.max_after(m) for m in matched},
        "score_balanced": strat.score_balanced,
        "covariates_balanced": strat.covariate_pass,
    }
    return smd, strat


def _groups(records):
    return tuple(r.group for r in records)


def stage_score(records, matched, bundle):
    x, y = frontier_arrays(records)
    ids = tuple(r.contract_id for r in records)
    groups = _groups(records)
    summaries = []
    with _Stage("score"):
        for m, ms in matched.items():
            units = ms.units()
            sample = FrontierSample(
                tuple(ids[i] for i in units), x[units], y[units], COMMON, tuple(groups[i] for i in units)
            )
            sc = score_all(sample)
            bundle.export(scores_table(f"scores_matched_{m}", f"Matched-sample scores ({m})", sample, sc))
            summaries.append((f"matched ({m})", sample, sc))
        full = {}
        for scope in (COMMON, BY_GROUP):
            sample = FrontierSample(ids, x, y, scope, groups)
            sc = score_all(sample)
            full[scope] = np.array([s.score for s in sc])
            bundle.export(scores_table(f"scores_full_{scope}", f"Full-sample scores ({scope})", sample, sc))
            summaries.append((f"full ({scope})", sample, sc))
        for group in ("DB", "DBB"):
            v = full[COMMON][np.asarray(groups) == group]
            if np.unique(v).size >= 2:
                bundle.export(density_table(
                    f"density_efficiency_{group}",
                    f"Common-frontier efficiency density ({group})",
                    kernel_density(v),
                ))
    rows = []
    for label, sample, sc in summaries:
        rows += summary_table("", "", summarize_scores([s.score for s in sc], sample.groups), sample=label).rows
    bundle.summary(Table(
        "efficiency_summary", "DEA (CRS) efficiency estimates",
        ("sample", "group", "obs", "mean", "sd", "min", "max"), rows,
    ))
    bundle.results["scores"] = {
        label: {r.label: {"obs": r.obs, "mean": r.mean} for r in summarize_scores([s.score for s in sc], sample.groups)}
        for label, sample, sc in summaries
    }
    return full


def stage_ftest(cfg, records, bundle):
    x, y = frontier_arrays(records)
    ids = tuple(r.contract_id for r in records)
    labels = np.array([r.group == TREATED for r in records], dtype=int)
    with _Stage("ftest"):
        res = group_mean_test(FrontierSample(ids, x, y), labels, seed=derive_seed(cfg.seed, _FTEST_KEY))
    bundle.summary(ftest_table(res))
    bundle.results["ftest"] = {
        "tau": res.tau, "tau_pvalue": res.tau_pvalue, "ks": res.ks, "ks_pvalue": res.ks_pvalue,
        "kappa": res.kappa, "verdict": res.verdict,
    }
    return res


def stage_effects(cfg, records, bundle):
    estimates = {}
    for m in cfg.methods:
        with _Stage(f"effects[{m}]"):
            estimates[m] = bootstrap_effects(
                records, _pipeline_config(cfg, m), cfg.replicates, seed=derive_seed(cfg.seed, _METHOD_KEY[m])
            )
    long, wide = effects_tables(estimates)
    bundle.summary(wide)
    bundle.summary(long)
    bundle.results["effects"] = {
        m: {k: {"point": e.point, "se": e.bootstrap_se, "ci": [e.ci_low, e.ci_high]} for k, e in est.items()}
        for m, est in estimates.items()
    }
    return estimates


# ---------------------------------------------------------------------------
# commands


def _finish(cfg, bundle):
    if cfg.out:
        bundle.write(cfg.out)
    else:
        for t in bundle.summaries:
            sys.stdout.write(t.to_markdown() + "\n")


def cmd_validate(cfg):
    records = load_records(cfg)
    n_t = sum(r.treated for r in records)
    print(f"ok: {len(records)} records, {n_t} D&B, {len(records) - n_t} DBB")


def cmd_simulate(cfg):
    with _Stage("simulate"):
        scenario = _scenario_config(cfg.scenario or {}, cfg.seed)
        records = generate(scenario)
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            to_csv(records, fh)
    else:
        to_csv(records, sys.stdout)


def cmd_pscore(cfg):
    bundle = Bundle(cfg, "pscore")
    stage_pscore(load_records(cfg), bundle)
    _finish(cfg, bundle)


def _needs_seed(cfg):
    if GENETIC in cfg.methods:
        _require_seed(cfg, "genetic matching")


def cmd_match(cfg):
    _needs_seed(cfg)
    bundle = Bundle(cfg, "match")
    design, model = stage_pscore(load_records(cfg), bundle)
    matched = stage_match(cfg, design, model, bundle)
    with _Stage("balance"):
        bundle.summary(smd_table(smd_before_after(design, matched)))
    _finish(cfg, bundle)


def cmd_score(cfg):
    bundle = Bundle(cfg, "score")
    records = load_records(cfg)
    _needs_seed(cfg)
    design, model = stage_pscore(records, bundle)
    matched = stage_match(cfg, design, model, bundle)
    stage_score(records, matched, bundle)
    _finish(cfg, bundle)


def cmd_balance(cfg):
    _needs_seed(cfg)
    bundle = Bundle(cfg, "balance")
    design, model = stage_pscore(load_records(cfg), bundle)
    matched = stage_match(cfg, design, model, bundle)
    stage_balance(cfg, design, model, matched, bundle)
    _finish(cfg, bundle)


def cmd_effects(cfg):
    _require_seed(cfg, "bootstrap effects")
    bundle = Bundle(cfg, "effects")
    stage_effects(cfg, load_records(cfg), bundle)
    _finish(cfg, bundle)


def cmd_ftest(cfg):
    _require_seed(cfg, "the frontier test")
    bundle = Bundle(cfg, "ftest")
    res = stage_ftest(cfg, load_records(cfg), bundle)
    print(res.line())
    if cfg.out:
        bundle.write(cfg.out)


def cmd_analyze(cfg):
    _require_seed(cfg, "analyze")
    if not cfg.out:
        raise ValidationError("analyze needs --out")
    bundle = Bundle(cfg, "analyze")
    records = load_records(cfg)
    design, model = stage_pscore(records, bundle)
    matched = stage_match(cfg, design, model, bundle)
    stage_balance(cfg, design, model, matched, bundle)
    stage_score(records, matched, bundle)
    res = stage_ftest(cfg, records, bundle)
    estimates = stage_effects(cfg, records, bundle)
    files = bundle.write(cfg.out)
    print(res.line())
    for m, est in estimates.items():
        for k, e in est.items():
            print(f"{k} [{m}] = {e.point:.4f} (se {e.bootstrap_se:.4f})")
    print(f"wrote {len(files)} files to {cfg.out}")


def cmd_report(cfg):
    """Re-render report.md from an existing bundle's manifest and CSV tables."""
    if not cfg.out:
        raise ValidationError("report needs --out pointing at a bundle directory")
    out = Path(cfg.out)
    try:
        manifest = json.loads((out / MANIFEST).read_text(encoding="utf-8"))
    except OSError:
        raise ValidationError(f"no {MANIFEST} in {out}") from None
    tables = []
    for entry in manifest["tables"]:
        path = out / f"{entry['name']}.csv"
        try:
            text = path.read_text(encoding="utf-8")
        except OSError:
            raise ValidationError(f"bundle is missing {path.name}") from None
        t = read_csv_table(text, entry["name"], entry["title"])
        t.notes = list(entry["notes"])
        tables.append(t)
    (out / REPORT).write_text(render_report(tables, manifest["command"]), encoding="utf-8")
    print(f"wrote {out / REPORT}")


COMMANDS = {
    "validate": (cmd_validate, "check an input CSV against the schema"),
    "simulate": (cmd_simulate, "generate a synthetic contract CSV"),
    "pscore": (cmd_pscore, "fit the propensity-score logit"),
    "match": (cmd_match, "match D&B and DBB contracts"),
    "score": (cmd_score, "DEA scores on matched and full samples"),
    "balance": (cmd_balance, "balance diagnostics and density grids"),
    "effects": (cmd_effects, "bootstrap ATE and ATT"),
    "ftest": (cmd_ftest, "common-frontier test on the full sample"),
    "analyze": (cmd_analyze, "run the full pipeline and write a report bundle"),
    "report": (cmd_report, "rebuild report.md from a bundle"),
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="frontier-match",
        description="Propensity-score matching with DEA efficiency outcomes.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--input", help="contract CSV")
        p.add_argument("--scenario", help="scenario JSON (synthetic data)")
        p.add_argument("--method", action="append", choices=METHODS, help="matching method; repeatable")
        p.add_argument("--replicates", type=int, help="bootstrap replicates (>= 100)")
        p.add_argument("--seed", type=int, help="top-level random seed")
        p.add_argument("--caliper", type=float, help="caliper in SDs of the propensity log-odds (nn)")
        p.add_argument("--with-replacement", action="store_true", help="reuse controls when matching")
        p.add_argument("--population", type=int, help="genetic matching population size")
        p.add_argument("--generations", type=int, help="genetic matching generations")
        p.add_argument("--out", help="output directory (file for simulate)")
        p.add_argument("--format", choices=FORMATS, help="summary table formats")
    return parser


def main(argv=None, environ=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args, environ)
        COMMANDS[args.command][0](cfg)
    except FrontierMatchError as e:
        cause = e.cause if isinstance(e, StageError) else e
        print(f"frontier-match: error: {e}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(cause, NumericalError) else EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
