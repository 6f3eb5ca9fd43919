"""Command-line entry point: ``gmmnls {toy,psr,hessian-sweep,selftest}``.

Options may also come from a flat ``key = value`` file given with ``--config``;
command-line flags take precedence over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .mixtures import METHODS
from .solver import SolverConfig

log = logging.getLogger("gmmnls")

DEFAULT_SEED = 0

# (n_param_draws, n_inits) for toy, (n_configs, n_pairs) for psr
SCALES = {
    "toy": {"desk": (100, 100), "full": (1000, 100)},
    "psr": {"desk": (10, 10), "full": (100, 100)},
}

_FLOAT_KEYS = {"step_tol", "msm_delta", "lm_tau"}
_INT_KEYS = {"dim", "max_iters", "seed", "workers"}
_BOOL_KEYS = {"timing", "full"}


class CliError(Exception):
    pass


def _methods(text: str):
    ms = tuple(m.strip().lower() for m in text.split(",") if m.strip())
    bad = [m for m in ms if m not in METHODS]
    if bad or not ms:
        raise argparse.ArgumentTypeError(f"unknown method(s) {', '.join(bad) or '(none)'}; choose from {','.join(METHODS)}")
    return ms


def _formats(text: str):
    fs = tuple(f.strip().lower() for f in text.split(",") if f.strip())
    bad = [f for f in fs if f not in ("csv", "json", "md")]
    if bad or not fs:
        raise argparse.ArgumentTypeError(f"unknown format(s) {', '.join(bad) or '(none)'}; choose from csv,json,md")
    return fs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmmnls", description="Gaussian-mixture least-squares studies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value file; flags win")
    common.add_argument("--seed", type=int, help=f"master seed (default {DEFAULT_SEED}, or $GMMNLS_SEED)")
    common.add_argument("--out", type=Path, help="output directory (default results/<command>)")
    common.add_argument("--methods", type=_methods, help="comma list from mm,sm,msm,hsm")
    common.add_argument("--formats", type=_formats, help="comma list from csv,json,md")
    common.add_argument("--max-iters", type=int)
    common.add_argument("--step-tol", type=float)
    common.add_argument("--msm-delta", type=float)
    common.add_argument("--lm-tau", type=float)
    common.add_argument("--workers", type=int, help="parallel worker processes")
    common.add_argument("--timing", action="store_const", const=True,
                        help="record wall time per trial (makes outputs run-dependent)")

    scale = argparse.ArgumentParser(add_help=False)
    scale.add_argument("--scale", choices=("desk", "full"))

    t = sub.add_parser("toy", parents=[common, scale], help="toy mixture study")
    t.add_argument("--dim", type=int, choices=(1, 2))
    s = sub.add_parser("psr", parents=[common, scale], help="point-set registration study")
    s.add_argument("--space", choices=("se2", "se3"), type=str.lower)
    sub.add_parser("hessian-sweep", parents=[common], help="1D Hessian comparison table")
    st = sub.add_parser("selftest", parents=[common], help="run the acceptance checks")
    st.add_argument("--full", action="store_const", const=True, help="include the Monte-Carlo studies")
    return p


DEFAULTS = dict(
    methods=METHODS,
    formats=("csv", "json", "md"),
    max_iters=200,
    step_tol=1e-8,
    msm_delta=1.0,
    lm_tau=1e-3,
    workers=1,
    timing=False,
    scale="desk",
    dim=1,
    space="se2",
    full=False,
)


def read_config_file(path: Path) -> dict:
    out = {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{n}: expected key = value")
        k, v = (x.strip() for x in line.split("=", 1))
        k = k.replace("-", "_")
        try:
            if k == "methods":
                out[k] = _methods(v)
            elif k == "formats":
                out[k] = _formats(v)
            elif k in _FLOAT_KEYS:
                out[k] = float(v)
            elif k in _INT_KEYS:
                out[k] = int(v)
            elif k in _BOOL_KEYS:
                out[k] = v.lower() in ("1", "true", "yes", "on")
            elif k in ("scale", "space", "out"):
                out[k] = Path(v) if k == "out" else v.lower()
            else:
                raise CliError(f"{path}:{n}: unknown key {k!r}")
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise CliError(f"{path}:{n}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, environment seed, config file and flags, in that order."""
    cfg = dict(DEFAULTS)
    env_seed = os.environ.get("GMMNLS_SEED")
    try:
        cfg["seed"] = int(env_seed) if env_seed not in (None, "") else DEFAULT_SEED
    except ValueError as exc:
        raise CliError(f"GMMNLS_SEED must be an integer, got {env_seed!r}") from exc
    if getattr(args, "config", None):
        try:
            cfg.update(read_config_file(args.config))
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}") from exc
    for k, v in vars(args).items():
        if v is not None and k not in ("config", "verbose"):
            cfg[k] = v
    if cfg["scale"] not in ("desk", "full") or cfg["space"] not in ("se2", "se3") or cfg["dim"] not in (1, 2):
        raise CliError("invalid scale, space or dim")
    cfg.setdefault("out", Path("results") / args.command)
    return cfg


def _solver_config(cfg) -> SolverConfig:
    try:
        return SolverConfig(max_iters=cfg["max_iters"], step_tol=cfg["step_tol"], lm_tau=cfg["lm_tau"])
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _prepare_out(path: Path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
        probe = path / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {path} is not writable: {exc}") from exc
    return path


def _write_study(out: Path, cfg: dict, records, table_fn, dims: str) -> None:
    from .benchmarks.metrics import aggregate, write_csv

    aggs = aggregate(records)
    if "csv" in cfg["formats"]:
        write_csv(out / "trials.csv", records)
    if "json" in cfg["formats"]:
        (out / "aggregates.json").write_text(
            json.dumps({m: a.to_dict() for m, a in aggs.items()}, indent=2, sort_keys=True, allow_nan=True) + "\n"
        )
    table = table_fn(aggs, dims)
    if "md" in cfg["formats"]:
        (out / "table.md").write_text(table)
    print(table, end="")


def cmd_toy(cfg) -> int:
    from .benchmarks.metrics import toy_table
    from .benchmarks.toy import ToySpec, run_toy_mc

    draws, inits = SCALES["toy"][cfg["scale"]]
    spec = ToySpec(dim=cfg["dim"], n_param_draws=draws, n_inits=inits, seed=cfg["seed"])
    out = _prepare_out(cfg["out"])
    log.info("toy %dD: %d draws x %d inits, seed %d", spec.dim, draws, inits, spec.seed)
    recs = run_toy_mc(spec, cfg["methods"], _solver_config(cfg), cfg["msm_delta"], cfg["timing"], cfg["workers"])
    _write_study(out, cfg, recs, toy_table, f"{spec.dim}D")
    return 0


def cmd_psr(cfg) -> int:
    from .benchmarks.metrics import psr_table
    from .benchmarks.psr import PsrSpec, run_psr_mc

    n_cfg, n_pairs = SCALES["psr"][cfg["scale"]]
    spec = PsrSpec(space=cfg["space"], n_configs=n_cfg, n_pairs=n_pairs, seed=cfg["seed"])
    out = _prepare_out(cfg["out"])
    log.info("psr %s: %d configs x %d pairs, seed %d", spec.space, n_cfg, n_pairs, spec.seed)
    recs = run_psr_mc(spec, cfg["methods"], _solver_config(cfg), cfg["msm_delta"], cfg["timing"], cfg["workers"])
    _write_study(out, cfg, recs, psr_table, f"{spec.dim}D")
    return 0


def cmd_sweep(cfg) -> int:
    from .benchmarks.sweep import hessian_sweep_1d, write_sweep_csv

    out = _prepare_out(cfg["out"])
    res = hessian_sweep_1d(delta=cfg["msm_delta"])
    write_sweep_csv(out / "hessian_sweep.csv", res)
    if "json" in cfg["formats"]:
        (out / "deviation.json").write_text(json.dumps(res.deviation, indent=2, sort_keys=True) + "\n")
    for m, v in res.deviation.items():
        print(f"{m}\t{v:.6f}")
    return 0


def cmd_selftest(cfg) -> int:
    from .selftest import run_selftest

    return 0 if run_selftest(cfg["seed"], full=cfg["full"]) else 1


COMMANDS = {"toy": cmd_toy, "psr": cmd_psr, "hessian-sweep": cmd_sweep, "selftest": cmd_selftest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"gmmnls: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
