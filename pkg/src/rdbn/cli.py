"""Command-line entry point: ``rdbn simulate | filter | eval | validate``.

Every option can also be set in an INI-style config file passed with
``--config``: keys are option names (dashes or underscores), read from the
``[common]`` section and then from the section named after the subcommand.
Flags given on the command line override file values.

Exit status: 0 success, 1 runtime failure, 2 usage, parse or input error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger("rdbn")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad input detected before any work starts (exit status 2)."""


@dataclass(frozen=True)
class Opt:
    flags: tuple
    dest: str
    kind: str          # int | float | str | bool | list
    default: object
    help: str


_ASSEMBLY = [
    Opt(("--assembly",), "assembly", "bool", False, "use the built-in assembly domain generator"),
    Opt(("--plates",), "plates", "int", 4, "number of plates"),
    Opt(("--brackets",), "brackets", "int", 3, "number of brackets"),
    Opt(("--bolts",), "bolts", "int", 3, "number of bolts"),
    Opt(("--values",), "values", "int", 3, "values per attribute"),
    Opt(("--kappa",), "kappa", "int", 1, "maximum partners per object"),
    Opt(("--relational-similarity",), "relational_similarity", "bool", False,
        "wrong-object faults also prefer objects sharing a partner with the intended one"),
    Opt(("--pf",), "pf", "float", 0.01, "fault probability of an action"),
    Opt(("--po",), "po", "float", None, "observation noise (default: equal to --pf)"),
    Opt(("--steps",), "steps", "int", None, "number of plan steps"),
]

_COMMON = [
    Opt(("--seed",), "seed", "int", 0, "master seed"),
    Opt(("--verbose", "-v"), "verbose", "bool", False, "debug logging and per-run logs"),
]

OPTIONS = {
    "simulate": _COMMON + _ASSEMBLY + [
        Opt(("--model",), "model", "str", None, "model file (instead of --assembly)"),
        Opt(("--plan",), "plan", "str", None,
            "plan file for --model: one step per line, space-separated event facts"),
        Opt(("--out", "-o"), "out", "str", "trajectory.log", "trajectory log to write"),
    ],
    "filter": _COMMON + [
        Opt(("--log",), "log", "str", None, "trajectory log to filter"),
        Opt(("--model",), "model", "str", None, "model file (logs not written by --assembly)"),
        Opt(("--method",), "method", "str", "pf", "pf, rbpf (any model); spf, aspf, rkde, "
            "rbpf_sets (assembly logs)"),
        Opt(("--particles", "-n"), "particles", "int", 1000, "number of particles"),
        Opt(("--po",), "po", "float", None, "observation noise (model logs; assembly logs "
            "carry their own)"),
        Opt(("--joint",), "joint", "bool", False, "write joint probabilities of the logged state"),
        Opt(("--known-initial",), "known_initial", "bool", False,
            "start from the logged initial state instead of the initial network (model logs)"),
        Opt(("--recover",), "recover", "bool", False,
            "reweight uniformly instead of failing when every particle has zero weight"),
        Opt(("--out", "-o"), "out", "str", "-", "per-step CSV output ('-' for stdout)"),
        Opt(("--checkpoint",), "checkpoint", "str", None, "write the final filter state here"),
    ],
    "eval": _COMMON + _ASSEMBLY + [
        Opt(("--method",), "method", "list", [], "method or method:particles, repeatable"),
        Opt(("--particles", "-n"), "particles", "int", 1000, "particles for methods without a count"),
        Opt(("--runs",), "runs", "int", 1, "number of sampled trajectories"),
        Opt(("--joint",), "joint", "bool", False, "score the joint relation state"),
        Opt(("--shared",), "shared", "bool", False,
            "particle-filter estimators with equal particle counts read one particle population"),
        Opt(("--max-len",), "max_len", "int", None, "longest abstraction used by aspf/rkde"),
        Opt(("--no-recover",), "no_recover", "bool", False,
            "count zero-weight collapses as failures instead of reweighting"),
        Opt(("--jobs", "-j"), "jobs", "int", None, "worker processes (default: all cores)"),
        Opt(("--out", "-o"), "out", "str", "results.csv", "CSV of per-step results"),
        Opt(("--run-log",), "run_log", "str", None,
            "per-run JSON lines (default with --verbose: <out>.runs.jsonl)"),
    ],
    "validate": _COMMON + _ASSEMBLY + [
        Opt(("--model",), "model", "str", None, "model file to check"),
        Opt(("--emit",), "emit", "str", None, "with --assembly: write the encoded model here"),
    ],
}

HELP = {
    "simulate": "sample a ground-truth trajectory with observations",
    "filter": "run one filter over a trajectory log",
    "eval": "compare filters by sampled K-L divergence on assembly runs",
    "validate": "parse and check a model",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rdbn", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name],
                           argument_default=argparse.SUPPRESS)
        p.add_argument("--config", "-c", help="config file (INI sections [common], [%s])" % name)
        for o in opts:
            shown = "" if o.default in (None, [], False) else f" (default: {o.default})"
            if o.kind == "bool":
                p.add_argument(*o.flags, dest=o.dest, action="store_true", help=o.help)
            elif o.kind == "list":
                p.add_argument(*o.flags, dest=o.dest, action="append", help=o.help + shown)
            else:
                conv = {"int": int, "float": float, "str": str}[o.kind]
                p.add_argument(*o.flags, dest=o.dest, type=conv, help=o.help + shown)
    return parser


def _coerce(opt: Opt, raw: str, section: configparser.SectionProxy, key: str):
    try:
        if opt.kind == "bool":
            return section.getboolean(key)
        if opt.kind == "int":
            return int(raw)
        if opt.kind == "float":
            return float(raw)
        if opt.kind == "list":
            return [x.strip() for x in raw.split(",") if x.strip()]
        return raw
    except ValueError:
        raise UsageError(f"config key {key!r}: cannot read {raw!r} as {opt.kind}") from None


def resolve(command: str, given: dict) -> dict:
    """Defaults, then config file values, then flags."""
    opts = {o.dest: o for o in OPTIONS[command]}
    cfg = {d: (list(o.default) if isinstance(o.default, list) else o.default)
           for d, o in opts.items()}
    path = given.pop("config", None)
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise UsageError(f"{path}: {exc}") from None
        for sect in ("common", command):
            if not parser.has_section(sect):
                continue
            for key, raw in parser[sect].items():
                dest = key.replace("-", "_")
                if dest not in opts:
                    if sect == "common":
                        continue    # shared files may hold keys of other commands
                    raise UsageError(f"{path}: unknown key {key!r} in [{sect}]")
                cfg[dest] = _coerce(opts[dest], raw, parser[sect], key)
    cfg.update(given)
    cfg["config"] = path
    return cfg


def _echo(command: str, cfg: dict) -> None:
    log.info("config [%s] %s", command, " ".join(f"{k}={cfg[k]}" for k in sorted(cfg)))


# -- shared helpers -----------------------------------------------------------------------

def _need_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return Path(path)


def _assembly_config(cfg: dict):
    from .assembly import AssemblyConfig
    steps = 20 if cfg["steps"] is None else cfg["steps"]
    try:
        return AssemblyConfig(n_plates=cfg["plates"], n_brackets=cfg["brackets"],
                              n_bolts=cfg["bolts"], n_values=cfg["values"],
                              fault_probability=cfg["pf"], observation_noise=cfg["po"],
                              kappa=cfg["kappa"], plan_length=steps, seed=cfg["seed"],
                              relational_similarity=cfg["relational_similarity"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path):
    from .language import load_model
    return load_model(_need_file(path, "model file"))


def _is_assembly_log(path) -> bool:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("CONFIG n_plates="):
                return True
            if line.startswith("STEP "):
                return False
    return False


def _open_out(path):
    if path in (None, "-"):
        return sys.stdout, False
    return open(path, "w", newline="", encoding="utf-8"), True


# -- simulate -----------------------------------------------------------------------------

def _read_plan(path, steps):
    from .simulation import parse_fact
    plan = []
    if path is not None:
        for n, raw in enumerate(_need_file(path, "plan file").read_text(encoding="utf-8")
                                .splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if line == "-" or not line:
                plan.append([])
                continue
            try:
                plan.append([parse_fact(x) for x in line.split()])
            except ValueError as exc:
                raise UsageError(f"{path}:{n}: {exc}") from None
    if steps is not None:
        plan = (plan + [[] for _ in range(max(0, steps - len(plan)))])[:steps]
    return plan


def cmd_simulate(cfg: dict) -> int:
    from .assembly import derive_rng, simulate_assembly, write_assembly_log
    from .simulation import simulate, write_log
    if cfg["assembly"] == (cfg["model"] is not None):
        raise UsageError("give exactly one of --assembly and --model")
    if cfg["assembly"]:
        traj = simulate_assembly(_assembly_config(cfg), seed=cfg["seed"])
        write_assembly_log(traj, cfg["out"])
        print(f"wrote {cfg['out']}: {traj.length} steps, {traj.fault_events} fault events, "
              f"{traj.domain.n} objects")
        return EXIT_OK
    model = _load_model(cfg["model"])
    plan = _read_plan(cfg["plan"], cfg["steps"])
    for step in plan:
        for pred, args in step:
            try:
                model.vocabulary.check(pred, args)
            except ValueError as exc:
                raise UsageError(f"plan: {exc}") from None
    p_o = 0.0 if cfg["po"] is None else cfg["po"]
    traj = simulate(model, plan, derive_rng(cfg["seed"], 0, "simulate"), p_o=p_o)
    traj.config.update(model=str(cfg["model"]), p_o=repr(p_o))
    write_log(traj, cfg["out"])
    print(f"wrote {cfg['out']}: {traj.length} steps")
    return EXIT_OK


# -- filter -------------------------------------------------------------------------------

GENERIC_METHODS = ("pf", "rbpf")


def _filter_generic(cfg, out) -> None:
    from .assembly import derive_rng
    from .filters.particles import pf_init, pf_marginal, pf_step
    from .filters.rbpf import rbpf_init, rbpf_marginal, rbpf_step, rbpf_violations
    from .relational import GroundPredicate
    from .simulation import read_log

    method = cfg["method"]
    if method not in GENERIC_METHODS:
        raise UsageError(f"method {method!r} needs an assembly log; use one of {GENERIC_METHODS}")
    model = _load_model(cfg["model"])
    if method == "rbpf":
        viol = rbpf_violations(model)
        if viol:
            raise UsageError("rbpf refused: " + "; ".join(d.message for d in viol))
        if cfg["joint"]:
            raise UsageError("--joint is available for pf only on model logs")
    traj = read_log(cfg["log"], model.vocabulary)
    p_o = cfg["po"]
    if p_o is None:
        p_o = float(traj.config.get("p_o", 0.0))
    rng = derive_rng(cfg["seed"], 0, "filter", method)
    initial = traj.states[0] if cfg["known_initial"] else None
    vocab = model.vocabulary
    ground = [(p, a) for p in model.uncertain for a in vocab.groundings(p)]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "log_joint"] if cfg["joint"] else ["step", "variable", "probability"])
    if method == "pf":
        parts = pf_init(model, cfg["particles"], rng, initial)
    else:
        parts = rbpf_init(model, cfg["particles"], rng, initial)
    for t, (action, obs) in enumerate(zip(traj.actions, traj.observations), start=1):
        if method == "pf":
            parts = pf_step(parts, model, action, obs, rng, p_o, step=t, recover=cfg["recover"])
        else:
            parts = rbpf_step(parts, model, action, obs, rng, p_o, step=t)
        if cfg["joint"]:
            uncertain = set(model.uncertain)
            truth = {f for f in traj.states[t].facts if f[0] in uncertain}
            hit = sum(int(k) for s, k in zip(parts.states, parts.counts)
                      if {f for f in s.facts if f[0] in uncertain} == truth)
            w.writerow([t, repr(math.log(hit / parts.size)) if hit else "-inf"])
            continue
        for p, a in ground:
            g = GroundPredicate(p, a, t)
            prob = pf_marginal(parts, g) if method == "pf" else rbpf_marginal(parts, g)
            w.writerow([t, f"{p}({','.join(a)})", repr(float(prob))])
    if cfg["checkpoint"]:
        if method != "pf":
            raise UsageError("checkpoints of model-log filters are written for pf only")
        from .filters.checkpoint import save_particles
        save_particles(parts, cfg["checkpoint"])


def _filter_assembly(cfg, out) -> None:
    from .assembly import ATTRIBUTES, RELATIONS, derive_rng, read_assembly_log
    from .filters.assembly import FILTERS, make_filter

    method = cfg["method"]
    if method not in FILTERS:
        raise UsageError(f"unknown method {method!r}; choose from {sorted(FILTERS)}")
    traj = read_assembly_log(cfg["log"])
    d = traj.domain
    acfg = d.cfg
    if method in ("rbpf", "rbpf_sets") and acfg.relational_similarity:
        raise UsageError(f"{method} refused: with relational similarity the wrong-object "
                         "choice reads the relations of other objects (edge "
                         "WeldedTo/BoltedTo@t-1 -> WeldedTo/BoltedTo at another anchor)")
    if method == "rbpf" and acfg.kappa != 1:
        raise UsageError("rbpf needs one partner per object (kappa = 1); use rbpf_sets")
    kw = dict(kappa=acfg.kappa, relational_similarity=acfg.relational_similarity,
              recover=cfg["recover"])
    filt = make_filter(method, d, cfg["particles"], acfg.fault_probability, acfg.p_o,
                       derive_rng(cfg["seed"], 0, "filter", method), **kw)
    filt.reset(traj.states[0])
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "log_joint"] if cfg["joint"] else ["step", "variable", "value",
                                                           "probability"])
    attr_rows = [(o, a) for o, a in zip(*np.nonzero(d.applicable))]
    pairs = [filt.pairs[r] for r in (0, 1)]
    for t, (action, obs) in enumerate(zip(traj.actions, traj.observations), start=1):
        filt.step(action, obs)
        if cfg["joint"]:
            lj = filt.log_joint(traj.states[t])
            w.writerow([t, repr(float(lj)) if math.isfinite(lj) else "-inf"])
            continue
        attrs = filt.attrs
        for o, a in attr_rows:
            name = ATTRIBUTES[a]
            freq = np.bincount(attrs[:, o, a].astype(np.int64), minlength=len(d.values[name]))
            freq = freq / attrs.shape[0]
            for v, label in enumerate(d.values[name]):
                w.writerow([t, f"{name}({d.names[o]})", label, repr(float(freq[v]))])
        probs = filt.relation_probs()
        for r in (0, 1):
            for x, y in pairs[r]:
                w.writerow([t, f"{RELATIONS[r]}({d.names[x]},{d.names[y]})", "true",
                            repr(float(probs[r, x, y]))])
    if cfg["checkpoint"]:
        from .filters.checkpoint import save_filter
        save_filter(filt, cfg["checkpoint"])


def cmd_filter(cfg: dict) -> int:
    path = _need_file(cfg["log"], "trajectory log (--log)")
    if cfg["particles"] < 1:
        raise UsageError("--particles must be >= 1")
    out, close = _open_out(cfg["out"])
    try:
        if _is_assembly_log(path):
            _filter_assembly(cfg, out)
        else:
            _filter_generic(cfg, out)
    finally:
        if close:
            out.close()
    return EXIT_OK


# -- eval ---------------------------------------------------------------------------------

def parse_methods(items, default_particles: int):
    from .evaluation import MethodSpec
    specs = []
    for item in items:
        for part in str(item).split(","):
            part = part.strip()
            if not part:
                continue
            name, _, n = part.partition(":")
            try:
                count = int(n) if n else default_particles
                specs.append(MethodSpec(name.strip(), count))
            except ValueError as exc:
                raise UsageError(f"bad method {part!r}: {exc}") from None
    if not specs:
        raise UsageError("at least one --method is required")
    return tuple(specs)


def cmd_eval(cfg: dict) -> int:
    from .evaluation import ExperimentConfig, report_csv, run_experiment
    methods = parse_methods(cfg["method"], cfg["particles"])
    try:
        exp = ExperimentConfig(_assembly_config(cfg), methods, runs=cfg["runs"],
                               mode="joint" if cfg["joint"] else "marginals", seed=cfg["seed"],
                               recover=not cfg["no_recover"], max_len=cfg["max_len"],
                               shared=cfg["shared"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run_log = cfg["run_log"]
    if run_log is None and cfg["verbose"]:
        run_log = str(cfg["out"]) + ".runs.jsonl"
    jobs = cfg["jobs"] if cfg["jobs"] is not None else (os.cpu_count() or 1)
    if jobs < 1:
        raise UsageError("--jobs must be >= 1")
    series = run_experiment(exp, jobs=jobs, log_path=run_log)
    report_csv(series, cfg["out"])
    for s in series:
        finite = s.mean[np.isfinite(s.mean)]
        mean = f"{finite.mean():.6g}" if finite.size else "inf"
        blow = "none" if s.blowup_step is None else str(s.blowup_step)
        errors = sum(r.error is not None for r in s.per_run)
        print(f"{s.method}: mean D_hat over finite steps {mean}, first blow-up {blow}"
              + (f", {errors} failed runs" if errors else ""))
    print(f"wrote {cfg['out']}" + (f" and {run_log}" if run_log else ""))
    failed = [r for s in series for r in s.per_run if r.error]
    for r in failed:
        log.error("run %d %s: %s", r.run, r.method, r.error)
    return EXIT_RUNTIME if failed and len(failed) == sum(len(s.per_run) for s in series) \
        else EXIT_OK


# -- validate -----------------------------------------------------------------------------

def cmd_validate(cfg: dict) -> int:
    from .filters.rbpf import rbpf_violations
    from .model import validate_acyclic
    if cfg["assembly"] == (cfg["model"] is not None):
        raise UsageError("give exactly one of --assembly and --model")
    if cfg["assembly"]:
        from .assembly import AssemblyDomain
        from .assembly.encoding import assembly_model_source
        from .language import parse_model
        acfg = _assembly_config(cfg)
        source = assembly_model_source(AssemblyDomain(acfg), acfg.fault_probability, acfg.kappa)
        model = parse_model(source, "<assembly>")
        if cfg["emit"]:
            Path(cfg["emit"]).write_text(source, encoding="utf-8")
        name = "<assembly>"
    else:
        if cfg["emit"]:
            raise UsageError("--emit needs --assembly")
        model = _load_model(cfg["model"])
        name = cfg["model"]
    diags = validate_acyclic(model)
    for dgn in diags:
        print(dgn, file=sys.stderr)
    if diags:
        return EXIT_USAGE
    viol = rbpf_violations(model)
    n_ground = sum(len(model.vocabulary.groundings(p)) for p in model.uncertain)
    print(f"{name}: ok, {len(model.uncertain)} uncertain predicates, "
          f"{n_ground} uncertain groundings per slice")
    if viol:
        print("rbpf not applicable:")
        for dgn in viol:
            print(f"  {dgn.message}")
    else:
        print("rbpf applicable")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "filter": cmd_filter, "eval": cmd_eval,
            "validate": cmd_validate}


def main(argv=None) -> int:
    from .filters.rbpf import RbpfAssumptionError
    from .filters.resampling import DegenerateFilterError
    from .language import ModelSyntaxError
    from .simulation import LogFormatError

    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(f"rdbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return int(exc.code or 0)
    given = vars(ns)
    command = given.pop("command")
    try:
        cfg = resolve(command, given)
        logging.basicConfig(level=logging.DEBUG if cfg["verbose"] else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
        _echo(command, cfg)
        return COMMANDS[command](cfg)
    except UsageError as exc:
        print(f"rdbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelSyntaxError, LogFormatError, RbpfAssumptionError) as exc:
        print(f"rdbn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DegenerateFilterError as exc:
        print(f"rdbn: filter failed at step {exc.step}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"rdbn: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
