"""Command-line interface.

Exit codes: 0 success, 2 identifiability failure, 3 numerical degeneracy,
4 I/O or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .errors import ConfigError, LatentIdError
from .kruskal import DEFAULT_TOL, check_proposition1, check_theorem1
from .model import ModelSpec, simulate
from .pipeline import PipelineConfig, run_identify, run_montecarlo, write_block_csv


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(4, f"{self.prog}: error: {message}\n")


def _common(p, out=True):
    p.add_argument("--config", required=True, metavar="PATH", help="JSON config file")
    if out:
        p.add_argument("--out", metavar="DIR", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, metavar="N", help="master seed (overrides config)")
    p.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads for replications")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentid", description="Identify linear measurement-error models from three blocks.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("identify", help="run the identification pipeline"))
    mc = sub.add_parser("montecarlo", help="replicate the pipeline on simulated samples")
    _common(mc)
    mc.add_argument("--replications", type=int, default=20, metavar="R")
    mc.add_argument("--n", type=int, nargs="+", metavar="N", help="sample sizes (default: config n)")
    cr = sub.add_parser("check-rank", help="Kruskal ranks and identification inequalities")
    _common(cr, out=False)
    sim = sub.add_parser("simulate", help="write simulated blocks x1.csv, x2.csv, x3.csv")
    _common(sim)
    sim.add_argument("--n", type=int, metavar="N", help="sample size (overrides config)")
    return p


def _load_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None


def _config(args, **overrides) -> PipelineConfig:
    d = _load_json(args.config)
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    if getattr(args, "out", None):
        d["out"] = args.out
    if args.seed is not None:
        d["seed"] = args.seed
    d.update({k: v for k, v in overrides.items() if v is not None})
    return PipelineConfig.from_dict(d)


def _identify(args):
    cfg = _config(args)
    if not cfg.out:
        raise ConfigError("an output directory is required (--out or config 'out')")
    rec = run_identify(cfg)
    summary = {"out": cfg.out, "files": rec.files, "metrics": rec.metrics}
    print(json.dumps(summary, indent=2, default=lambda o: None))
    return 0


def _montecarlo(args):
    cfg = _config(args)
    res = run_montecarlo(cfg, args.replications, args.n, threads=max(1, args.threads))
    print(json.dumps(res["aggregate"], indent=2))
    return 0


def _check_rank(args):
    d = _load_json(args.config)
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    if "matrices" in d:
        mats = [np.array(m, dtype=float, ndmin=2) for m in d["matrices"]]
    elif "model" in d:
        mats = list(ModelSpec.from_dict(d["model"]).loadings)
    else:
        raise ConfigError("check-rank needs 'matrices' (three loading matrices) or 'model'")
    if len(mats) != 3:
        raise ConfigError("exactly three loading matrices are required")
    cond = d.get("condition", d.get("mode", "theorem1"))
    check = {"theorem1": check_theorem1, "proposition1": check_proposition1}.get(cond)
    if check is None:
        raise ConfigError("condition must be theorem1 or proposition1")
    L = int(d.get("L", mats[0].shape[1]))
    report = check(*mats, L, float(d.get("tol", DEFAULT_TOL)))
    print(json.dumps(report.to_dict(), indent=2))
    return 0 if report.verdict else 2


def _simulate(args):
    cfg = _config(args, n=args.n)
    if cfg.model is None or cfg.n is None:
        raise ConfigError("simulate needs a model and a sample size n")
    if not cfg.out:
        raise ConfigError("an output directory is required (--out or config 'out')")
    data = simulate(cfg.model, cfg.n, cfg.seed, force=cfg.force)
    try:
        os.makedirs(cfg.out, exist_ok=True)
        for i, x in enumerate(data.blocks, start=1):
            write_block_csv(os.path.join(cfg.out, f"x{i}.csv"), x)
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {cfg.out}: {exc.strerror}") from None
    print(json.dumps({"out": cfg.out, "n": data.n, "files": ["x1.csv", "x2.csv", "x3.csv"]}))
    return 0


_COMMANDS = {"identify": _identify, "montecarlo": _montecarlo, "check-rank": _check_rank, "simulate": _simulate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except LatentIdError as exc:
        print(f"latentid: {type(exc).__name__}: {exc}", file=sys.stderr)
        margin = getattr(exc, "margin", None)
        if margin is not None:
            print(f"latentid: margin {margin}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"latentid: I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
