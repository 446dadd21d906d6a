"""``voroto`` command-line entry point."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataset, fea, optimize, surrogate, verify
from ._parallel import resolve_threads
from .artifacts import write_pgm
from .config import RunConfig, load_config
from .voronoi import DEFAULT_K

log = logging.getLogger("voroto")

SWEEP_PARAMS = ("beta_max", "alpha_max", "theta_fixed", "vmax")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI-style run configuration file")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: $VOROTO_THREADS or all cores)")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voroto", description="Voronoi multiscale topology optimization")
    sub = ap.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("gen-data", help="sample and homogenize a training corpus")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", action="store_true", help="also write <out>.csv")
    _add_common(p)

    p = sub.add_parser("train", help="train the surrogate")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, help="use only the first N corpus samples")
    p.add_argument("--split", help="train,val,test sizes (default: n/12 each for val and test)")
    p.add_argument("--epochs", type=int, help="override max_epochs")
    p.add_argument("--history", help="history CSV path (default: <out>.history.csv)")
    _add_common(p)

    p = sub.add_parser("optimize", help="optimize a catalog problem")
    _add_opt_args(p)
    p.add_argument("--vmax", type=float)
    p.add_argument("--out", required=True, help="run directory")
    _add_common(p)

    p = sub.add_parser("verify", help="check a design against true homogenization")
    p.add_argument("--state", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="report CSV")
    p.add_argument("--render", help="also write the stitched density as PGM")
    p.add_argument("--render-resolution", type=int, default=32)
    p.add_argument("--resolution", type=int, help="micro resolution (default: config, 120)")
    p.add_argument("--problem", help="problem name (default: the one stored in the state)")
    p.add_argument("--catalog")
    _add_common(p)

    p = sub.add_parser("render", help="write the stitched density of a design as PGM")
    p.add_argument("--state", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=32)
    p.add_argument("--k", type=float, help="sharpness (default: stored with the design)")
    _add_common(p)

    p = sub.add_parser("sweep", help="repeat an optimization over one parameter")
    _add_opt_args(p)
    p.add_argument("--vmax", type=float)
    p.add_argument("--param", required=True, choices=SWEEP_PARAMS)
    p.add_argument("--values", required=True,
                   help="comma-separated values; theta_fixed also accepts 'free'")
    p.add_argument("--out", required=True, help="sweep directory")
    p.add_argument("--verify", action="store_true", help="verify every final design")
    p.add_argument("--resolution", type=int, help="verification micro resolution")
    _add_common(p)
    return ap


def _add_opt_args(p):
    p.add_argument("--model", required=True)
    p.add_argument("--problem", required=True)
    p.add_argument("--catalog", help="problem catalog file (default: built-in)")
    p.add_argument("--nelx", type=int)
    p.add_argument("--nely", type=int)
    p.add_argument("--max-iter", type=int)


def _setup_logging(quiet: bool) -> None:
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING if quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", force=True)


def _model_k(model) -> float:
    return float(model.meta.get("data_config", {}).get("k", DEFAULT_K))


def cmd_gen_data(args, cfg: RunConfig) -> None:
    ds = dataset.generate(args.count, cfg.data, args.seed, resolve_threads(args.threads))
    csv_path = str(args.out) + ".csv" if args.csv else None
    dataset.save_corpus(args.out, ds, csv_path)
    log.info("wrote %d samples to %s", len(ds), args.out)


def _default_split(n: int):
    m = n // 12
    return n - 2 * m, m, m


def cmd_train(args, cfg: RunConfig) -> None:
    ds = dataset.load_corpus(args.data)
    if args.limit:
        ds = ds.subset(slice(0, args.limit))
    sizes = tuple(int(s) for s in args.split.split(",")) if args.split else _default_split(len(ds))
    tr, va, te = dataset.split(ds, sizes, args.seed)
    tcfg = replace(cfg.train, seed=args.seed)
    if args.epochs:
        tcfg = replace(tcfg, max_epochs=args.epochs)
    model, history = surrogate.train(tr, va, te, tcfg)
    model.meta.update(data=str(args.data), split=list(sizes),
                      data_config=ds.metadata.get("config", cfg.data.to_dict()),
                      data_seed=ds.metadata.get("seed"))
    surrogate.save_model(args.out, model)
    surrogate.write_history(args.history or str(args.out) + ".history.csv", history)
    log.info("best epoch %d, val loss %.4e", model.meta["best_epoch"], model.meta["best_val"])


def _opt_config(args, cfg: RunConfig) -> optimize.OptConfig:
    oc = cfg.optimize
    if args.vmax is not None:
        oc = replace(oc, vmax=args.vmax)
    if args.max_iter is not None:
        oc = replace(oc, max_iter=args.max_iter)
    return oc


def _run_one(model, mesh, bc, oc, out: Path, extra: dict):
    out.mkdir(parents=True, exist_ok=True)

    def report(entry):
        if entry.iteration % 10 == 0:
            log.info("it %d J %.4f g_V %+.4f loss %.5f", entry.iteration, entry.compliance,
                     entry.g_v, entry.loss)

    state, clog, _ = optimize.optimize(model, mesh, bc, oc, callback=report)
    echo = {"optimize": optimize.config_dict(oc), **extra}
    optimize.save_state(out / "state.bin", state, echo)
    clog.write_csv(out / "log.csv")
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")
    last = clog.entries[-1]
    log.info("finished after %d iterations: J %.4f g_V %+.4f", len(clog), last.compliance, last.g_v)
    return state, clog


def cmd_optimize(args, cfg: RunConfig) -> None:
    model = surrogate.load_model(args.model)
    mesh, bc = fea.problem(args.problem, args.nelx, args.nely, args.catalog)
    oc = _opt_config(args, cfg)
    extra = {"problem": args.problem, "catalog": args.catalog, "model": str(args.model),
             "k": _model_k(model)}
    _run_one(model, mesh, bc, oc, Path(args.out), extra)


def _state_context(path, catalog=None, problem_name=None):
    state, header = optimize.load_state(path)
    name = problem_name or header.get("problem")
    if name is None:
        raise ValueError(f"{path}: no problem recorded; pass --problem")
    _, bc = fea.problem(name, state.mesh.nelx, state.mesh.nely, catalog or header.get("catalog"))
    radius = header.get("optimize", {}).get("filter_radius", optimize.OptConfig().filter_radius)
    return state, header, bc, radius


def cmd_verify(args, cfg: RunConfig) -> None:
    model = surrogate.load_model(args.model)
    state, header, bc, radius = _state_context(args.state, args.catalog, args.problem)
    k = header.get("k", _model_k(model))
    res = args.resolution or cfg.verify_resolution
    rep = verify.verify(state, model, state.mesh, bc, radius, res, k, cfg.data.material,
                        resolve_threads(args.threads))
    verify.write_report(args.out, rep, {"state": args.state, "model": args.model, "k": k,
                                        "filter_radius": radius, "resolution": res})
    log.info("compliance error %.2f%%, volume error %.2f%%", 100 * rep.compliance_error,
             100 * rep.volume_error)
    if args.render:
        field = verify.reconstruct(state, args.render_resolution, radius, k)
        write_pgm(args.render, field.values)


def cmd_render(args, cfg: RunConfig) -> None:
    state, header = optimize.load_state(args.state)
    radius = header.get("optimize", {}).get("filter_radius", optimize.OptConfig().filter_radius)
    k = args.k or header.get("k", DEFAULT_K)
    write_pgm(args.out, verify.reconstruct(state, args.resolution, radius, k).values)


def sweep_config(base: optimize.OptConfig, param: str, value: str) -> optimize.OptConfig:
    if param == "theta_fixed":
        return base if value == "free" else base.with_theta_fixed(float(value))
    v = float(value)
    if param == "beta_max":
        return replace(base, beta=(base.beta[0], v))
    if param == "alpha_max":
        return replace(base, alpha=(base.alpha[0], v))
    return replace(base, vmax=v)


def cmd_sweep(args, cfg: RunConfig) -> None:
    model = surrogate.load_model(args.model)
    mesh, bc = fea.problem(args.problem, args.nelx, args.nely, args.catalog)
    base = _opt_config(args, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    k = _model_k(model)
    rows = []
    for value in [v.strip() for v in args.values.split(",") if v.strip()]:
        oc = sweep_config(base, args.param, value)
        log.info("sweep %s = %s", args.param, value)
        extra = {"problem": args.problem, "catalog": args.catalog, "model": str(args.model),
                 "k": k, "sweep": {args.param: value}}
        state, clog = _run_one(model, mesh, bc, oc, out / f"{args.param}-{value}", extra)
        last = clog.entries[-1]
        row = {"param": args.param, "value": value, "compliance": last.compliance,
               "rel_compliance": last.rel_compliance, "g_v": last.g_v, "iterations": len(clog)}
        if args.verify:
            rep = verify.verify(state, model, mesh, bc, oc.filter_radius,
                                args.resolution or cfg.verify_resolution, k, cfg.data.material,
                                resolve_threads(args.threads))
            row.update(J_fe=rep.J_fe, v_nn=rep.v_nn, v_fe=rep.v_fe,
                       compliance_error=rep.compliance_error, volume_error=rep.volume_error)
        rows.append(row)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "optimize": cmd_optimize,
            "verify": cmd_verify, "render": cmd_render, "sweep": cmd_sweep}


def main(argv=None) -> int:
    ap = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        ap.print_usage(sys.stderr)
        return 2
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        ap.print_usage(sys.stderr)
        return 2
    _setup_logging(args.quiet)
    try:
        cfg = load_config(args.config)
        log.info("%s config: %s", args.command, json.dumps(cfg.to_dict(), sort_keys=True))
        COMMANDS[args.command](args, cfg)
    except Exception as exc:
        log.debug("traceback", exc_info=True)
        print(f"voroto {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
