"""Command-line entry point: ``simmh {gen,run-linear,run-dm,diagnose}``.

Runs are configured by a JSON tree. Every key has a default; unknown keys
are rejected. The fully materialised tree is written to ``config.resolved``
in the output directory, and re-running that file reproduces the run.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, numcore, traceio
from .adapt import AdaptConfig
from .conjlinear import EvaluationError, LinearProblem, ModelPrior, NIGPrior
from .dirmult import PMLEError
from .linsampler import ChainTrace, SamplerConfig, lambda_sweep, run_chain
from .localmove import read_adjacency

log = logging.getLogger("simmh")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4
OUTPUT_ENV = "SDMH_OUTPUT_DIR"
RESOLVED = "config.resolved"


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# -- configuration ----------------------------------------------------------

def _adapt_defaults() -> dict:
    return dataclasses.asdict(AdaptConfig())


def _defaults(kind: str) -> dict:
    from .rjmcmc import RJConfig
    from .synthgen import DMSynthConfig, LinearSynthConfig

    diag = {"acf_maxlag": 50, "fdr_alpha": 0.05}
    if kind == "linear":
        synth = dict(dataclasses.asdict(LinearSynthConfig()), seed=None)
        return {
            "kind": "linear",
            "seed": 0,
            "output": "runs/linear",
            "data": None,
            "synth": synth,
            "prior": {"precision": 0.01, "a0": 0.01, "b0": 0.01, "a_pi": 1.0, "b_pi": 1.0},
            "sampler": {"T": 20000, "burn_in": 10000, "dissim": "F", "lam": 0.7,
                        "swap": False, "lambda_move": 1.25, "graph_threshold": 0.5,
                        "graph": None},
            "adapt": None,
            "sweep": None,
            "diagnostics": dict(diag, exact=False),
        }
    if kind == "dm":
        synth = dict(dataclasses.asdict(DMSynthConfig()), seed=None)
        synth["associations"] = [list(a) for a in synth["associations"]]
        sampler = {f.name: getattr(RJConfig(), f.name) for f in dataclasses.fields(RJConfig)
                   if f.name not in ("adapt", "seed")}
        return {
            "kind": "dm",
            "seed": 0,
            "output": "runs/dm",
            "data": None,
            "synth": synth,
            "sampler": sampler,
            "adapt": _adapt_defaults(),
            "diagnostics": diag,
        }
    raise ConfigError(f"unknown experiment kind {kind!r}")


# schemas of sections whose default is null
_NULLABLE = {
    "data": {"linear": {"X": None, "y": None}, "dm": {"X": None, "Y": None}},
    "adapt": {"linear": _adapt_defaults(), "dm": _adapt_defaults()},
    "sweep": {"linear": {"lo": 0.01, "hi": 1.5, "n": 100, "T": None, "burn_in": None}},
}


def _merge(defaults: dict, user: dict, where: str, kind: str) -> dict:
    if not isinstance(user, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        path = f"{where}.{key}" if where else key
        if key not in defaults:
            raise ConfigError(f"unknown configuration key {path!r}")
        base = defaults[key]
        if base is None and where == "" and key in _NULLABLE:
            out[key] = None if val is None else _merge(_NULLABLE[key][kind], val, path, kind)
        elif isinstance(base, dict):
            out[key] = _merge(base, val, path, kind)
        else:
            out[key] = val
    return out


def resolve_config(kind: str, user: dict | None = None) -> dict:
    """Merge ``user`` into the defaults of ``kind`` and validate the result."""
    user = dict(user or {})
    if user.get("kind", kind) != kind:
        raise ConfigError(f"config is for {user['kind']!r}, not {kind!r}")
    cfg = _merge(_defaults(kind), user, "", kind)
    if cfg["synth"].get("seed") is None:
        cfg["synth"]["seed"] = cfg["seed"]
    if cfg["data"] is not None:
        for name, path in cfg["data"].items():
            if path is None:
                raise ConfigError(f"data.{name} must be given")
            if not Path(path).is_file():
                raise ConfigError(f"data file not found: {path}")
    sweep = cfg.get("sweep")
    if sweep is not None:
        sweep["T"] = cfg["sampler"]["T"] if sweep["T"] is None else sweep["T"]
        sweep["burn_in"] = cfg["sampler"]["burn_in"] if sweep["burn_in"] is None else sweep["burn_in"]
        if int(sweep["n"]) < 1 or not 0 < sweep["lo"] <= sweep["hi"]:
            raise ConfigError("sweep needs n >= 1 and 0 < lo <= hi")
    graph = cfg["sampler"].get("graph")
    if graph is not None and not Path(graph).is_file():
        raise ConfigError(f"graph file not found: {graph}")
    # construct the typed configs once so that value errors surface here
    try:
        _synth_config(cfg)
        if kind == "linear":
            _linear_sampler_config(cfg)
            _linear_priors(cfg, 1)
        else:
            _rj_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical resolved config, excluding the output location."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def load_user_config(path) -> dict:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc.msg} at line {exc.lineno}") from None
    if not isinstance(obj, dict):
        raise ConfigError("config must be a JSON object")
    return obj


def _adapt_config(cfg: dict) -> AdaptConfig | None:
    return None if cfg["adapt"] is None else AdaptConfig(**cfg["adapt"])


def _synth_config(cfg: dict):
    from .synthgen import DMSynthConfig, LinearSynthConfig

    s = dict(cfg["synth"])
    if cfg["kind"] == "dm":
        s["associations"] = tuple(tuple(a) for a in s["associations"])
        if s["beta0"] is not None:
            s["beta0"] = tuple(s["beta0"])
        return DMSynthConfig(**s)
    return LinearSynthConfig(**s)


def _linear_sampler_config(cfg: dict, graph=None) -> SamplerConfig:
    s = dict(cfg["sampler"])
    s.pop("graph")
    return SamplerConfig(adapt=_adapt_config(cfg), graph=graph, seed=cfg["seed"], **s)


def _linear_priors(cfg: dict, P: int):
    p = cfg["prior"]
    return (NIGPrior.default(P, p["precision"], p["a0"], p["b0"]),
            ModelPrior(p["a_pi"], p["b_pi"]))


def _rj_config(cfg: dict):
    from .rjmcmc import RJConfig

    return RJConfig(adapt=_adapt_config(cfg), seed=cfg["seed"], **cfg["sampler"])


# -- data -----------------------------------------------------------------

def _read_matrix(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            M = np.loadtxt(fh, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if M.shape[1] != len(header):
        raise DataError(f"{path}: header has {len(header)} fields, rows have {M.shape[1]}")
    if not np.all(np.isfinite(M)):
        raise DataError(f"{path}: non-finite entries")
    return header, M


def _write_matrix(path, M: np.ndarray, prefix: str) -> None:
    traceio.write_columns(path, {f"{prefix}{i}": M[:, i] for i in range(M.shape[1])})


def load_linear(cfg: dict) -> LinearProblem:
    from .synthgen import gen_linear

    if cfg["data"] is None:
        problem, _ = gen_linear(_synth_config(cfg))
        X, y = problem.X, problem.y
    else:
        _, X = _read_matrix(cfg["data"]["X"])
        _, Y = _read_matrix(cfg["data"]["y"])
        if Y.shape[1] != 1:
            raise DataError("y.csv must have exactly one column")
        y = Y[:, 0]
        if X.shape[0] != y.shape[0]:
            raise DataError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    prior, model_prior = _linear_priors(cfg, X.shape[1])
    return LinearProblem(X, y, prior, model_prior)


def load_dm(cfg: dict):
    from .dirmult import DMData
    from .synthgen import gen_dm

    if cfg["data"] is None:
        data, _ = gen_dm(_synth_config(cfg))
        return data
    _, X = _read_matrix(cfg["data"]["X"])
    _, Y = _read_matrix(cfg["data"]["Y"])
    if np.any(Y < 0) or np.any(Y != np.round(Y)):
        raise DataError("count matrix must hold nonnegative integers")
    if X.shape[0] != Y.shape[0]:
        raise DataError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
    try:
        return DMData(Y.astype(np.int64), X)
    except ValueError as exc:
        raise DataError(str(exc)) from None


# -- output ---------------------------------------------------------------

def _output_dir(cfg: dict, flag: str | None) -> Path:
    if flag is not None:
        return Path(flag)
    env = os.environ.get(OUTPUT_ENV)
    return Path(env) if env else Path(cfg["output"])


def _prepare(out: Path, force: bool) -> Path:
    if out.exists() and any(out.iterdir()) and not force:
        raise ConfigError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(out: Path, cfg: dict) -> None:
    (out / RESOLVED).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _parse_sweep(text: str) -> dict:
    try:
        lo, hi, n = text.split(":")
        return {"lo": float(lo), "hi": float(hi), "n": int(n)}
    except ValueError:
        raise ConfigError(f"--sweep-lambda expects lo:hi:n, got {text!r}") from None


# -- summaries shared by run and diagnose ----------------------------------

def _summary_extra(cfg: dict) -> dict:
    extra = {"seed": cfg["seed"], "config_hash": config_hash(cfg), "kind": cfg["kind"]}
    s = cfg["sampler"]
    if cfg["kind"] == "dm":
        extra["hyperparameters"] = {k: s[k] for k in ("c", "a", "b", "r2", "s2", "lam0")}
        extra["local_move"] = s["local_move"]
    else:
        extra["hyperparameters"] = {"dissim": s["dissim"], "lam": s["lam"], "swap": s["swap"]}
    return extra


def _exact_tv(problem: LinearProblem, trace: ChainTrace, burn_in: int) -> float:
    _, exact = problem.enumerate_posterior()
    emp = diagnostics.empirical_distribution(trace.configs[1 + burn_in:], problem.P)
    return diagnostics.total_variation(emp, exact)


def summarize(cfg: dict, trace, out: Path, acf_maxlag: int, problem=None) -> dict:
    diag = cfg["diagnostics"]
    extra = _summary_extra(cfg)
    burn_in = cfg["sampler"]["burn_in"]
    if cfg["kind"] == "linear":
        if diag["exact"]:
            extra["tv_exact"] = _exact_tv(problem if problem is not None else load_linear(cfg),
                                          trace, burn_in)
        return diagnostics.linear_summary(trace, burn_in, out, acf_maxlag, diag["fdr_alpha"], extra)
    return diagnostics.dm_summary(trace, burn_in, out, acf_maxlag, diag["fdr_alpha"], extra)


# -- commands ---------------------------------------------------------------

def cmd_gen(args) -> int:
    from .synthgen import gen_dm, gen_linear

    cfg = resolve_config(args.kind, _with_seed(load_user_config(args.config), args.seed))
    out = _prepare(_output_dir(cfg, args.out), args.force)
    if args.kind == "linear":
        problem, truth = gen_linear(_synth_config(cfg))
        _write_matrix(out / "X.csv", problem.X, "x")
        traceio.write_columns(out / "y.csv", {"y": problem.y})
        info = {"active": [int(i) for i in truth.xi.active()], "intercept": truth.intercept,
                "beta": [float(b) for b in truth.beta]}
    else:
        data, truth = gen_dm(_synth_config(cfg))
        _write_matrix(out / "X.csv", data.X, "x")
        _write_matrix(out / "Y.csv", data.Y, "y")
        info = {"associations": [[int(p), int(j), float(truth.beta[p, j])]
                                 for p, j in zip(*np.nonzero(truth.xi))],
                "beta0": [float(b) for b in truth.beta0]}
    diagnostics.write_json(out / "truth.json", info)
    _write_resolved(out, cfg)
    print(out)
    return 0


def _with_seed(user: dict, seed: int | None) -> dict:
    if seed is not None:
        user = dict(user, seed=seed)
    return user


def cmd_run_linear(args) -> int:
    user = _with_seed(load_user_config(args.config), args.seed)
    sampler = dict(user.get("sampler", {}))
    if args.no_swap:
        sampler["swap"] = False
    if args.swap:
        sampler["swap"] = True
    if sampler:
        user["sampler"] = sampler
    diag = dict(user.get("diagnostics", {}))
    if args.exact:
        diag["exact"] = True
    if args.acf_maxlag is not None:
        diag["acf_maxlag"] = args.acf_maxlag
    if diag:
        user["diagnostics"] = diag
    if args.sweep_lambda is not None:
        user["sweep"] = dict(user.get("sweep") or {}, **_parse_sweep(args.sweep_lambda))
    cfg = resolve_config("linear", user)
    problem = load_linear(cfg)
    out = _prepare(_output_dir(cfg, args.out), args.force)
    _write_resolved(out, cfg)

    graph = None
    if cfg["sampler"]["graph"] is not None:
        try:
            graph = read_adjacency(cfg["sampler"]["graph"], problem.P)
        except ValueError as exc:
            raise DataError(str(exc)) from None
    if cfg["diagnostics"]["exact"] and problem.P > 16:
        raise ConfigError("--exact needs P <= 16")
    trace = run_chain(problem, _linear_sampler_config(cfg, graph))
    trace.write(out)
    summary = summarize(cfg, trace, out, cfg["diagnostics"]["acf_maxlag"], problem)

    sw = cfg.get("sweep")
    if sw is not None:
        lams = np.linspace(sw["lo"], sw["hi"], int(sw["n"]))
        rates = lambda_sweep(problem, lams, sw["T"], sw["burn_in"], cfg["sampler"]["dissim"],
                             cfg["seed"])
        traceio.write_columns(out / "acceptance_vs_lambda.csv",
                              {"lambda": lams, "acceptance": rates})
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_run_dm(args) -> int:
    from .rjmcmc import run_rjmcmc

    user = _with_seed(load_user_config(args.config), args.seed)
    if args.local_move:
        user["sampler"] = dict(user.get("sampler", {}), local_move=True)
    if args.acf_maxlag is not None:
        user["diagnostics"] = dict(user.get("diagnostics", {}), acf_maxlag=args.acf_maxlag)
    cfg = resolve_config("dm", user)
    data = load_dm(cfg)
    out = _prepare(_output_dir(cfg, args.out), args.force)
    _write_resolved(out, cfg)
    trace = run_rjmcmc(data, _rj_config(cfg))
    trace.write(out)
    summary = summarize(cfg, trace, out, cfg["diagnostics"]["acf_maxlag"])
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_diagnose(args) -> int:
    from .rjmcmc import RJTrace

    run = Path(args.run_dir)
    resolved = run / RESOLVED
    if not resolved.is_file():
        raise DataError(f"no {RESOLVED} in {run}")
    stored = load_user_config(resolved)
    kind = stored.get("kind")
    if kind not in ("linear", "dm"):
        raise ConfigError(f"{resolved}: unknown kind {kind!r}")
    cfg = resolve_config(kind, stored)
    cls = ChainTrace if kind == "linear" else RJTrace
    try:
        trace = cls.read(run, burn_in=cfg["sampler"]["burn_in"])
    except FileNotFoundError as exc:
        raise DataError(f"missing trace file: {exc.filename}") from None
    except (ValueError, KeyError) as exc:
        raise DataError(f"unreadable trace in {run}: {exc}") from None
    out = Path(args.out) if args.out else run / "diagnose"
    out.mkdir(parents=True, exist_ok=True)
    maxlag = cfg["diagnostics"]["acf_maxlag"] if args.acf_maxlag is None else args.acf_maxlag
    summary = summarize(cfg, trace, out, maxlag)
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="simmh", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
        p.add_argument("--seed", type=int, help="override the top-level seed")
        p.add_argument("--force", action="store_true", help="write into a non-empty directory")

    g = sub.add_parser("gen", help="generate a synthetic dataset")
    g.add_argument("kind", choices=("linear", "dm"))
    common(g)
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run-linear", help="variable selection for the linear model")
    common(r)
    r.add_argument("--exact", action="store_true",
                   help="report total variation to the enumerated posterior (P <= 16)")
    r.add_argument("--sweep-lambda", metavar="LO:HI:N",
                   help="also run N fixed-lambda chains on an even grid")
    sw = r.add_mutually_exclusive_group()
    sw.add_argument("--swap", action="store_true", help="enable graph-guided swap moves")
    sw.add_argument("--no-swap", action="store_true", help="disable swap moves")
    r.add_argument("--acf-maxlag", type=int)
    r.set_defaults(func=cmd_run_linear)

    d = sub.add_parser("run-dm", help="reversible-jump selection for Dirichlet-Multinomial data")
    common(d)
    d.add_argument("--local-move", action="store_true", help="add the per-category swap step")
    d.add_argument("--acf-maxlag", type=int)
    d.set_defaults(func=cmd_run_dm)

    q = sub.add_parser("diagnose", help="recompute diagnostics from a run directory")
    q.add_argument("run_dir")
    q.add_argument("--out", help="where to write (default RUN_DIR/diagnose)")
    q.add_argument("--acf-maxlag", type=int)
    q.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        code, msg = EXIT_CONFIG, f"config error: {exc}"
    except DataError as exc:
        code, msg = EXIT_DATA, f"data error: {exc}"
    except (numcore.FactorizationError, numcore.DomainError, EvaluationError,
            FloatingPointError, np.linalg.LinAlgError, PMLEError) as exc:
        code, msg = EXIT_NUMERIC, f"numerical failure: {exc}"
    print(msg.replace("\n", " "), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
