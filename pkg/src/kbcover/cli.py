"""``kbcover`` command line: run, compare, tune, lloyd and map.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The thread count of the linear-algebra backend can be capped with the
``KBCOVER_THREADS`` environment variable.
"""

from __future__ import annotations

import argparse
import copy
import csv
import itertools
import os
import sys
import time
from datetime import datetime
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, Config, defaults_help, load_config, params_fragment, tune_spec, write_config
from .coverage import lloyd_placement
from .field import FieldError, MissionGrid, write_block_csv
from .kriging import KrigingSystem
from .sim import METHODS, compare_methods, format_table, run_scenario, write_run_artifacts, write_summary
from .tune import TuneError, tune, write_trace

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p):
    p.add_argument("--config", action="append", default=[], metavar="PATH", help="config file; repeat to merge (later wins)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one config key; repeatable")
    p.add_argument("--out", default="runs", metavar="DIR", help="parent directory for outputs (default: runs)")
    p.add_argument("--seed", type=int, default=None, help="override the seed")
    p.add_argument("--quiet", action="store_true", help="only print the final result")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(
        prog="kbcover",
        description="Kernel-based kriging with dissimilarity-driven persistent coverage.",
        epilog="configuration keys and defaults:\n\n" + defaults_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("run", help="run one scenario and write its logs")
    _common(p)

    p = sub.add_parser("compare", help="sweep methods x weathers x n x seeds")
    _common(p)
    p.add_argument("--methods", default=None, help="comma list (default: all three)")
    p.add_argument("--weathers", default=None, help="comma list (default: config field.weather)")
    p.add_argument("--n", default=None, help="comma list of agent counts (default: config agents.n)")
    p.add_argument("--seeds", default=None, help="comma list (default: config sim.seed)")

    p = sub.add_parser("tune", help="tune free parameters on the training window")
    _common(p)
    p.add_argument("--restarts", type=int, default=None, help="extra random restarts (default: config tune.restarts)")

    p = sub.add_parser("lloyd", help="print centroidal fixed-sensor positions")
    _common(p)
    p.add_argument("--n", type=int, default=None, help="sensor count (default: config agents.n)")

    p = sub.add_parser("map", help="dissimilarity map of a buffer state")
    _common(p)
    p.add_argument("--buffer", required=True, metavar="CSV", help="samples with columns q1,q2,t and optionally cf")
    p.add_argument("--t", type=float, default=None, help="prediction time (default: newest buffer time + 1)")
    return ap


def _outdir(parent, command) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    base = Path(parent) / f"{command}-{stamp}"
    out, k = base, 1
    while out.exists():
        k += 1
        out = Path(f"{base}-{k}")
    out.mkdir(parents=True)
    return out


def _load(args) -> Config:
    overrides = list(args.set)
    if args.seed is not None and args.command in ("run", "compare", "map", "lloyd"):
        overrides += [f"sim.seed={args.seed}", f"field.seed={args.seed}"]
    return load_config(args.config, overrides)


def _list(text, conv=str):
    items = [x.strip() for x in text.split(",") if x.strip()]
    try:
        return [conv(x) for x in items]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None


def _say(args, *msg):
    if not args.quiet:
        print(*msg, flush=True)


def cmd_run(args) -> int:
    cfg = _load(args)
    t = time.perf_counter()
    log = run_scenario(cfg.scenario)
    dt = time.perf_counter() - t
    out = _outdir(args.out, "run")
    write_run_artifacts(log, out, cfg.scenario.field.grid())
    write_config(out / "config.ini", cfg)
    _say(args, f"artifacts in {out}")
    print(f"method={log.method} weather={log.weather} n={log.n} seed={log.seed} E={log.E:.6g} runtime={dt:.2f}s")
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _load(args)
    sc = cfg.scenario
    methods = _list(args.methods) if args.methods is not None else list(METHODS)
    weathers = _list(args.weathers) if args.weathers is not None else [sc.field.weather]
    ns = _list(args.n, int) if args.n is not None else [sc.agents.n]
    seeds = _list(args.seeds, int) if args.seeds is not None else [sc.sim.seed]
    if not (methods and weathers and ns and seeds):
        raise UsageError("empty sweep")
    cfgs = []
    for m, w, n, s in itertools.product(methods, weathers, ns, seeds):
        c = copy.deepcopy(sc)
        c.sim.method, c.field.weather, c.agents.n = m, w, n
        c.sim.seed = c.field.seed = s
        try:
            c.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        cfgs.append(c)
    out = _outdir(args.out, "compare")
    write_config(out / "config.ini", cfg)
    progress = None if args.quiet else (lambda r: print(f"  {r['method']} {r['weather']} n={r['n']} seed={r['seed']} E={r['E']:.6g}", flush=True))
    rows = compare_methods(cfgs, progress)
    write_summary(out / "summary.csv", rows)
    table = format_table(rows)
    (out / "table.txt").write_text(table)
    _say(args, f"artifacts in {out}")
    print(table, end="")
    return EXIT_OK


def cmd_tune(args) -> int:
    cfg = _load(args)
    spec = tune_spec(cfg, seed=args.seed, restarts=args.restarts)
    try:
        spec.validate()
    except TuneError as e:
        raise ConfigError(str(e)) from None
    progress = None if args.quiet else (lambda e: print(f"  #{e.eval} E={e.E:.6g} {e.params}", flush=True))
    res = tune(spec, progress=progress)
    out = _outdir(args.out, "tune")
    write_trace(out / "tune_trace.csv", res)
    (out / "best.cfg").write_text(params_fragment(res.best))
    write_config(out / "config.ini", cfg)
    _say(args, f"artifacts in {out}")
    print(f"best E={res.best_E:.6g} " + " ".join(f"{k}={v:.6g}" for k, v in res.best.items()))
    return EXIT_OK


def cmd_lloyd(args) -> int:
    cfg = _load(args)
    n = cfg.scenario.agents.n if args.n is None else args.n
    if n < 1:
        raise UsageError("--n must be >= 1")
    pos = lloyd_placement(cfg.scenario.field.grid(), n, seed=cfg.scenario.sim.seed)
    for i, (q1, q2) in enumerate(pos):
        print(f"{i} {q1:.4f} {q2:.4f}")
    return EXIT_OK


def _read_buffer(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise UsageError(f"cannot read buffer {path}: {e.strerror}") from None
    if not rows or not {"q1", "q2", "t"} <= set(rows[0]):
        raise UsageError(f"{path}: need a header with q1,q2,t[,cf] and at least one row")
    try:
        Z = np.array([[float(r["q1"]), float(r["q2"]), float(r["t"])] for r in rows])
        Y = np.array([float(r["cf"]) for r in rows]) if "cf" in rows[0] else None
    except (TypeError, ValueError):
        raise UsageError(f"{path}: non-numeric buffer entry") from None
    return Z, Y


def cmd_map(args) -> int:
    cfg = _load(args)
    Z, Y = _read_buffer(args.buffer)
    grid: MissionGrid = cfg.scenario.field.grid()
    t_pred = float(Z[:, 2].max() + 1) if args.t is None else args.t
    system = KrigingSystem(Z, cfg.scenario.kernel, Y)
    J, pred = system.evaluate(grid.centers(), t_pred)
    out = _outdir(args.out, "map")
    write_block_csv(out / "dissimilarity.csv", grid, [J.reshape(grid.shape)], [t_pred])
    if Y is not None:
        write_block_csv(out / "prediction.csv", grid, [pred.reshape(grid.shape)], [t_pred])
    _say(args, f"artifacts in {out}")
    print(f"t={t_pred:g} N={len(Z)} J_mean={J.mean():.6g} J_max={J.max():.6g}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "tune": cmd_tune, "lloyd": cmd_lloyd, "map": cmd_map}


def _limit_threads():
    n = os.environ.get("KBCOVER_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    try:
        return threadpool_limits(int(n))
    except ValueError:
        raise UsageError(f"KBCOVER_THREADS must be an integer, got {n!r}") from None


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command is None:
            ap.print_help()
            return EXIT_USAGE
        _limit_threads()
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"kbcover: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (FieldError, TuneError, ValueError, RuntimeError, OSError) as e:
        print(f"kbcover: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
