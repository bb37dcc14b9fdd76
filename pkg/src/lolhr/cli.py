"""Command line front end: ``lolhr run | report | validate``.

Runs are described by a JSON config, checked against :data:`CONFIG_SCHEMA`
before anything is computed.  Every seed writes ``record.json`` and the
predicted/validated fronts as CSV to ``<out>/<problem>/seed<N>/``.

Exit codes: 0 success, 1 compute failure (partial artifacts are kept),
2 invalid configuration or usage.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import math
import shlex
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np

from .bench.problems import PROBLEMS, BenchmarkProblem, Protocol, get_problem
from .bench.runner import STRATEGIES, SURROGATES, clean_json, dumps_record, front_csv_rows, run_strategy, \
    settings_for
from .core import Marginal, Objective, ProblemSpec, RandomVector
from .moo import MooConfig
from .refine import SurrogateFailure
from .reliability import ReliabilityConfig
from .surrogate import TrainSettings

log = logging.getLogger("lolhr")

EXIT_OK, EXIT_COMPUTE, EXIT_CONFIG = 0, 1, 2

_RELIABILITY = {
    "type": "object",
    "additionalProperties": False,
    "required": ["method"],
    "properties": {
        "method": {"enum": ["ds", "mc", "none"]},
        "directions": {"type": "integer", "minimum": 2},
        "brackets": {"type": "integer", "minimum": 2},
        "samples": {"type": "integer", "minimum": 1},
    },
}

_MARGINAL = {
    "type": "object",
    "additionalProperties": False,
    "required": ["family", "mean"],
    "properties": {
        "family": {"enum": ["normal", "uniform", "lognormal", "degenerate"]},
        "mean": {"type": "number"},
        "std": {"type": "number", "minimum": 0},
        "design": {"type": "boolean"},
        "std_rule": {"enum": ["absolute", "proportional"]},
    },
}

_OBJECTIVE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["mean", "variance", "std", "mean_plus_k_var", "mean_plus_k_std", "pf"]},
        "response": {"type": "integer", "minimum": 0},
        "k": {"type": "number"},
    },
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "problem": {"enum": sorted(PROBLEMS)},
        "external": {
            "type": "object",
            "additionalProperties": False,
            "required": ["command", "inputs", "objectives", "n_responses", "design_lower", "design_upper",
                         "target_pf", "reference_point"],
            "properties": {
                "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
                "command": {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}}]},
                "inputs": {"type": "array", "minItems": 1, "items": _MARGINAL},
                "objectives": {"type": "array", "minItems": 2, "items": _OBJECTIVE},
                "limit_states": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "n_responses": {"type": "integer", "minimum": 1},
                "design_lower": {"type": "array", "items": {"type": "number"}},
                "design_upper": {"type": "array", "items": {"type": "number"}},
                "target_pf": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "pf_floor": {"type": "number", "minimum": 0},
                "reference_point": {"type": "array", "items": {"type": "number"}},
                "timeout": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "strategy": {"enum": list(STRATEGIES)},
        "surrogate": {"enum": list(SURROGATES)},
        "budget": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "m0": {"type": "integer", "minimum": 2},
                "m_s": {"type": "integer", "minimum": 1},
                "steps": {"type": "integer", "minimum": 0},
            },
        },
        "reliability": _RELIABILITY,
        "validation": _RELIABILITY,
        "moo": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "population": {"type": "integer", "minimum": 4},
                "generations": {"type": "integer", "minimum": 1},
            },
        },
        "direct": {"enum": ["short", "long"]},
        "training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gp_restarts": {"type": "integer", "minimum": 1},
                "cv_restarts": {"type": "integer", "minimum": 1},
                "svr_levels": {"type": "integer", "minimum": 1},
                "svr_grid": {"type": "integer", "minimum": 2},
            },
        },
        "moment_samples": {"type": "integer", "minimum": 3},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "output": {"type": "string"},
    },
    "oneOf": [{"required": ["problem"]}, {"required": ["external"]}],
}


class ConfigError(ValueError):
    """Configuration problem, reported with exit code 2."""


class BridgeError(RuntimeError):
    """External evaluator failed or returned malformed output."""


# configuration -------------------------------------------------------------------
def parse_config_text(text, source="<config>"):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None


def apply_overrides(config, overrides):
    """Apply ``key=value`` overrides; dotted keys reach nested objects.

    Values are parsed as JSON when possible, otherwise kept as strings.
    """
    config = json.loads(json.dumps(config))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {p} is not an object")
        node[parts[-1]] = value
    return config


def validate_config(config):
    """Schema check; raises :class:`ConfigError` listing every offending field."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        lines = []
        for e in errors:
            where = "/".join(str(p) for p in e.absolute_path) or "<root>"
            msg = e.message
            if e.validator == "oneOf" and not e.absolute_path:
                msg = "exactly one of 'problem' or 'external' is required"
            lines.append(f"{where}: {msg}")
        raise ConfigError("invalid config:\n  " + "\n  ".join(lines))
    if "external" in config:
        ext = config["external"]
        n_design = sum(1 for m in ext["inputs"] if m.get("design", False))
        if len(ext["design_lower"]) != n_design or len(ext["design_upper"]) != n_design:
            raise ConfigError("external: design bounds need one entry per design input")
        if len(ext["reference_point"]) != len(ext["objectives"]):
            raise ConfigError("external: reference_point needs one entry per objective")
        for key in ("budget", "reliability"):
            if key not in config:
                raise ConfigError(f"{key}: required for external problems")
    return config


def load_config(path, overrides=()):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return validate_config(apply_overrides(parse_config_text(text, str(path)), overrides))


def _reliability(cfg, default=None):
    if cfg is None:
        return default
    if cfg["method"] == "mc":
        return ReliabilityConfig("mc", mc_samples=cfg.get("samples", 1_000_000))
    if cfg["method"] == "ds":
        return ReliabilityConfig("ds", directions=cfg.get("directions", 160), brackets=cfg.get("brackets", 20))
    return ReliabilityConfig("none")


def external_problem(ext, budget, reliability, validation) -> BenchmarkProblem:
    marginals = []
    for m in ext["inputs"]:
        std_rule = m.get("std_rule", "absolute")
        marginals.append(Marginal(m["family"], m["mean"], m.get("std", 0.0), m.get("design", False), std_rule))
    objectives = [Objective(o["kind"], o.get("response"), o.get("k", 0.0)) for o in ext["objectives"]]
    spec = ProblemSpec(RandomVector(tuple(marginals)), tuple(objectives), tuple(ext.get("limit_states", ())),
                       ext["target_pf"], ext["design_lower"], ext["design_upper"], ext["n_responses"],
                       pf_floor=ext.get("pf_floor", 0.0), name=ext.get("name", "external"))
    bridge = ExternalEvaluator(ext["command"], ext["n_responses"], timeout=ext.get("timeout"))
    protocol = Protocol(budget["m0"], budget["m_s"], budget["steps"], reliability, validation or reliability,
                        MooConfig(100, 100))
    return BenchmarkProblem(spec.name, spec, bridge, tuple(ext["reference_point"]), protocol)


def build_problem(config) -> BenchmarkProblem:
    """Benchmark problem with the protocol adjusted by the config."""
    if "external" in config:
        rel = _reliability(config["reliability"])
        problem = external_problem(config["external"], _budget(config, None), rel,
                                   _reliability(config.get("validation"), rel))
    else:
        problem = get_problem(config["problem"])
    p = problem.protocol
    b = _budget(config, p)
    moo = p.moo
    if "moo" in config:
        moo = dataclasses.replace(moo, population=config["moo"].get("population", moo.population),
                                  generations=config["moo"].get("generations", moo.generations))
    protocol = dataclasses.replace(
        p, m0=b["m0"], m_s=b["m_s"], n_steps=b["steps"], moo=moo,
        reliability=_reliability(config.get("reliability"), p.reliability),
        validation=_reliability(config.get("validation"), p.validation),
        moment_samples=config.get("moment_samples", p.moment_samples))
    return dataclasses.replace(problem, protocol=protocol)


def _budget(config, protocol):
    b = dict(config.get("budget", {}))
    if protocol is not None:
        b.setdefault("m0", protocol.m0)
        b.setdefault("m_s", protocol.m_s)
        b.setdefault("steps", protocol.n_steps)
    return b


def run_settings(problem: BenchmarkProblem, config):
    strategy = config.get("strategy", "lolhr")
    surrogate = config.get("surrogate", "gp")
    if strategy not in ("lolhr", "stationary", "gu2013"):
        return None
    training = TrainSettings(**config.get("training", {}))
    return settings_for(problem, strategy, surrogate, {"training": training})


# external evaluator --------------------------------------------------------------
class ExternalEvaluator:
    """Black-box responses computed by a child process.

    The command reads a headerless CSV of inputs (one design per row) on
    stdin and writes a headerless CSV of responses, one row per input row
    and in the same order, on stdout.
    """

    def __init__(self, command, n_responses, timeout=None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.n_responses = int(n_responses)
        self.timeout = timeout

    def __call__(self, X, responses=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        buf = io.StringIO()
        np.savetxt(buf, X, delimiter=",", fmt="%.17g")
        try:
            proc = subprocess.run(self.command, input=buf.getvalue(), capture_output=True, text=True,
                                  timeout=self.timeout)
        except FileNotFoundError as exc:
            raise BridgeError(f"cannot start {self.command[0]!r}: {exc.strerror}") from None
        except subprocess.TimeoutExpired:
            raise BridgeError(f"evaluator timed out after {self.timeout} s") from None
        if proc.returncode != 0:
            raise BridgeError(f"evaluator exited with status {proc.returncode}; stderr:\n{proc.stderr.strip()}")
        rows = [r for r in csv.reader(io.StringIO(proc.stdout)) if r and any(c.strip() for c in r)]
        if len(rows) != X.shape[0]:
            raise BridgeError(f"evaluator returned {len(rows)} rows for {X.shape[0]} inputs")
        Y = np.empty((X.shape[0], self.n_responses))
        for i, r in enumerate(rows):
            if len(r) != self.n_responses:
                raise BridgeError(f"row {i}: expected {self.n_responses} values, got {len(r)}")
            try:
                Y[i] = [float(v) for v in r]
            except ValueError:
                raise BridgeError(f"row {i}: malformed value in {r!r}") from None
        bad = ~np.all(np.isfinite(Y), axis=1)
        if bad.any():
            raise BridgeError(f"non-finite response in row {int(np.flatnonzero(bad)[0])}")
        return Y


# run ----------------------------------------------------------------------------
def run_dir(out, problem_id, seed):
    return Path(out) / problem_id / f"seed{seed}"


def write_artifacts(directory: Path, record, n_design, n_obj):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "record.json").write_text(dumps_record(record))
    for name, key, validated in (("predicted_front.csv", "predicted_front", False),
                                 ("validated_front.csv", "validated_front", True)):
        with open(directory / name, "w", newline="") as fh:
            csv.writer(fh).writerows(front_csv_rows(record.get(key, []), n_design, n_obj, validated))


def run_one(config, seed, out):
    """Run one seed and write its artifacts; returns ``(seed, error message or None)``."""
    problem = build_problem(config)
    strategy = config.get("strategy", "lolhr")
    directory = run_dir(out, problem.id, seed)
    try:
        record = run_strategy(problem, strategy, config.get("surrogate", "gp"), seed,
                              settings=run_settings(problem, config),
                              direct_long=config.get("direct", "short") == "long")
    except SurrogateFailure as exc:
        partial = exc.partial
        record = clean_json({"config": {"problem": problem.id, "strategy": strategy}, "seed": seed,
                             "error": str(exc), "failed_step": exc.step, "steps": partial.steps,
                             "dataset": partial.dataset.to_dict()})
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "record.partial.json").write_text(dumps_record(record))
        return seed, str(exc)
    except (BridgeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "record.partial.json").write_text(
            dumps_record({"config": {"problem": problem.id, "strategy": strategy}, "seed": seed, "error": str(exc)}))
        return seed, str(exc)
    record["config"]["run_config"] = {k: v for k, v in config.items() if k not in ("seeds", "output")}
    write_artifacts(directory, record, problem.spec.n_design, problem.spec.n_objectives)
    return seed, None


def cmd_run(args):
    config = load_config(args.config, args.set)
    seeds = args.seed or config.get("seeds")
    if not seeds:
        raise ConfigError("no seeds given: pass --seed or list 'seeds' in the config")
    if config.get("strategy") == "direct" and config.get("direct") == "long" and not args.heavy:
        raise ConfigError("direct: 'long' needs --heavy")
    out = args.out or config.get("output", "runs")
    failures = []
    if args.jobs > 1 and len(seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(run_one, [config] * len(seeds), seeds, [out] * len(seeds)))
    else:
        results = [run_one(config, s, out) for s in seeds]
    for seed, err in results:
        if err is None:
            print(f"seed {seed}: ok -> {run_dir(out, build_problem(config).id, seed)}")
        else:
            failures.append(seed)
            print(f"seed {seed}: FAILED: {err}", file=sys.stderr)
    return EXIT_COMPUTE if failures else EXIT_OK


# report -------------------------------------------------------------------------
REPORT_COLUMNS = ("mu_h", "sigma_h", "min_h", "max_h", "mu_F", "mu_p", "mu_m")


def find_records(paths):
    found = []
    for p in paths:
        p = Path(p)
        if p.is_file():
            found.append(p)
        elif p.is_dir():
            found.extend(sorted(p.rglob("record.json")))
        else:
            raise ConfigError(f"no such file or directory: {p}")
    return found


def strategy_label(record):
    c = record["config"]
    label = c["strategy"]
    if c["strategy"] in ("lolhr", "stationary", "gu2013"):
        label = f"{c.get('surrogate', 'gp')}-{label}"
    elif c["strategy"] == "direct":
        label = f"direct-{c.get('variant', 'short')}"
    return label


def aggregate(records):
    """Per strategy statistics of the stored records.

    ``sigma_h`` is the sample standard deviation (0 with ``n1`` flagged when
    only one record exists).
    """
    problems = sorted({r["config"]["problem"] for r in records})
    if len(problems) > 1:
        offenders = [f"{r.get('_path', '?')}: {r['config']['problem']}" for r in records]
        raise ConfigError("records belong to different problems:\n  " + "\n  ".join(offenders))
    groups = {}
    for r in records:
        groups.setdefault(strategy_label(r), []).append(r)
    rows = []
    for label in sorted(groups):
        rs = groups[label]
        h = np.array([r["hvi"] for r in rs], dtype=float)
        row = {"strategy": label, "n": len(rs),
               "mu_h": float(h.mean()), "sigma_h": float(h.std(ddof=1)) if len(rs) > 1 else 0.0,
               "min_h": float(h.min()), "max_h": float(h.max()),
               "mu_F": float(np.mean([r["counts"]["m_F"] for r in rs])),
               "mu_p": float(np.mean([r["counts"]["pareto"] for r in rs])),
               "mu_m": float(np.mean([r["counts"]["m"] for r in rs])),
               "n1": len(rs) == 1}
        costs = [r.get("so_cost") for r in rs]
        if any(c is not None for c in costs):
            row["mu_cost"] = float(np.mean([c for c in costs if c is not None]))
        rows.append(row)
    return problems[0], rows


def format_markdown(problem, rows):
    extra = any("mu_cost" in r for r in rows)
    head = ["strategy", "n", *REPORT_COLUMNS] + (["mu_cost"] if extra else [])
    lines = [f"# {problem}", "", "| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for r in rows:
        cells = [r["strategy"], f"{r['n']}{' (n=1)' if r['n1'] else ''}"]
        cells += [_fmt(r[c]) for c in REPORT_COLUMNS]
        if extra:
            cells.append(_fmt(r.get("mu_cost", math.nan)))
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def _fmt(v):
    return f"{v:.6g}" if math.isfinite(v) else "-"


def format_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["strategy", "n", *REPORT_COLUMNS, "mu_cost", "n1"])
    for r in rows:
        w.writerow([r["strategy"], r["n"], *(repr(r[c]) for c in REPORT_COLUMNS),
                    repr(r["mu_cost"]) if "mu_cost" in r else "", int(r["n1"])])
    return buf.getvalue()


def load_records(paths):
    records = []
    for f in find_records(paths):
        try:
            r = json.loads(f.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{f}: line {exc.lineno}: {exc.msg}") from None
        r["_path"] = str(f)
        records.append(r)
    if not records:
        raise ConfigError("no record.json found")
    return records


def cmd_report(args):
    problem, rows = aggregate(load_records(args.paths))
    text = format_markdown(problem, rows)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(format_csv(rows) if out.suffix == ".csv" else text)
    print(text, end="")
    return EXIT_OK


# validate -----------------------------------------------------------------------
def check_record(record):
    """Consistency problems of a stored run record (empty list if none)."""
    issues = []
    for key in ("config", "seed", "steps", "predicted_front", "validated_front", "hvi", "counts"):
        if key not in record:
            issues.append(f"missing key {key!r}")
    if issues:
        return issues
    v = record["validated_front"]
    c = record["counts"]
    n_feas = sum(1 for r in v if r["feasible"])
    if c["m_F"] != len(v) - n_feas:
        issues.append("counts.m_F disagrees with the validated front")
    if c["p"] != n_feas:
        issues.append("counts.p disagrees with the validated front")
    if c["pareto"] != sum(1 for r in v if r.get("pareto")):
        issues.append("counts.pareto disagrees with the validated front")
    if c["m_F"] + c["p"] != len(record["predicted_front"]):
        issues.append("m_F + feasible != size of the predicted front")
    return issues


def cmd_validate(args):
    status = EXIT_OK
    if args.config:
        config = load_config(args.config, args.set)
        build_problem(config)
        print(f"{args.config}: ok")
    for f in find_records(args.records or []):
        issues = check_record(json.loads(f.read_text()))
        if issues:
            status = EXIT_CONFIG
            print(f"{f}: " + "; ".join(issues), file=sys.stderr)
        else:
            print(f"{f}: ok")
    return status


def build_parser():
    parser = argparse.ArgumentParser(prog="lolhr", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a strategy for one or more seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, action="append", help="seed (repeatable); overrides the config list")
    run.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out")
    run.add_argument("--heavy", action="store_true", help="allow full-size direct runs")
    run.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="aggregate run records into a table")
    rep.add_argument("paths", nargs="+")
    rep.add_argument("--out", help="write the table (.md or .csv)")
    rep.set_defaults(func=cmd_report)

    val = sub.add_parser("validate", help="check a config and/or stored records")
    val.add_argument("--config")
    val.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    val.add_argument("records", nargs="*")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
