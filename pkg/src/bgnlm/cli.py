"""Command line interface.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import platform
import subprocess
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .data_io import SyntheticSpec, gen_synthetic, load_csv, write_summary
from .errors import BGNLMError, ConfigError, DataError
from .features import count_features, from_dict, to_dict
from .model_space import VisitedStore, dump_csv, prior_a

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("bgnlm")


# ------------------------------------------------------------------ helpers


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="configuration file (key = value lines)")
    for f in fields(RunConfig):
        if f.name in ("data", "response"):
            continue  # declared with help text by the fit parser
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f"cfg_{f.name}", default=None, metavar=f.name.upper())


def build_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.apply_env()
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    cfg.update(flags, "command line")
    return cfg


def _git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _run_dir(base, seed) -> Path:
    stamp = time.strftime("%Y%m%d-%H%M%S")
    d = Path(base) / f"run_{stamp}_{seed}"
    k = 1
    while d.exists():
        d = Path(base) / f"run_{stamp}_{seed}_{k}"
        k += 1
    d.mkdir(parents=True)
    return d


def _attach_log(path: Path) -> logging.Handler:
    h = logging.FileHandler(path)
    h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger("bgnlm").addHandler(h)
    return h


def _load_dataset(args, cfg: RunConfig):
    if not cfg.data:
        raise ConfigError("no data file given (use --data or data = ... in the config)")
    if not cfg.response:
        raise ConfigError("no response column given (use --response)")
    cats = [c.strip() for c in cfg.categorical.split(",") if c.strip()]
    ds = load_csv(cfg.data, cfg.response, cats)
    if ds.dropped_rows:
        print(f"dropped {ds.dropped_rows} rows with missing values", file=sys.stderr)
    return ds.standardized() if cfg.standardize else ds


def store_to_json(store: VisitedStore, names, path) -> None:
    from .model_space import posterior

    post = posterior(store) if len(store) else {}
    doc = {
        "column_names": list(names),
        "features": {k: to_dict(f) for k, f in store.features.items()},
        "models": [
            {"features": list(r.model.feature_keys), "log_marginal": r.log_marginal, "log_prior": r.log_prior,
             "beta_hat": r.beta_hat.tolist(), "posterior": post.get(k, 0.0)}
            for k, r in store.records.items()
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def store_from_json(path):
    from .model_space import ModelStructure

    with open(path) as fh:
        doc = json.load(fh)
    store = VisitedStore()
    store.register_features(from_dict(d) for d in doc["features"].values())
    for m in doc["models"]:
        store.record(ModelStructure.of(m["features"]), m["log_marginal"], m["log_prior"], np.array(m["beta_hat"]))
    return store, doc.get("column_names", [])


# ----------------------------------------------------------------- commands


def cmd_fit(args) -> int:
    from .parallel import aggregate, merged_store, run_parallel, successful, write_report_csv, write_report_json

    cfg = build_config(args)
    ds = _load_dataset(args, cfg)
    cfg.validate(ds.n)
    out = _run_dir(args.out, cfg.seed)
    handler = _attach_log(out / "log.txt")
    try:
        (out / "config.echo").write_text(cfg.echo())
        t0 = time.time()
        chain_cfg = cfg.to_chain_config(ds.n)
        summaries = run_parallel(ds.X, ds.y, chain_cfg, cfg.B, cfg.seed, workers=cfg.workers)
        ok = successful(summaries)
        merged = aggregate(ok, cfg.aggregation)
        store = merged_store(ok)
        feats = store.features
        write_report_csv(ok, merged, out / "report.csv", ds.column_names, feats)
        write_report_json(ok, merged, out / "report.json", cfg.aggregation)
        dump_csv(store, out / "store.csv")
        store_to_json(store, ds.column_names, out / "store.json")
        meta = {
            "version": __version__,
            "git_hash": _git_hash(),
            "seed": cfg.seed,
            "chains": cfg.B,
            "failed_chains": [r.seed for r in summaries if r.failed],
            "n": ds.n,
            "m": ds.m,
            "dropped_rows": ds.dropped_rows,
            "prior_a": prior_a(cfg.prior_a, ds.n),
            "elapsed_seconds": time.time() - t0,
            "chain_seconds": [r.elapsed for r in summaries],
            "python": platform.python_version(),
            "config": cfg.as_dict(),
        }
        (out / "metadata.json").write_text(json.dumps(meta, indent=2))
    finally:
        logging.getLogger("bgnlm").removeHandler(handler)
        handler.close()
    top = sorted(merged.items(), key=lambda kv: -kv[1])[:10]
    print(f"results written to {out}")
    for k, p in top:
        print(f"  {p:8.4f}  {k}")
    return EXIT_OK


def cmd_predict(args) -> int:
    from .glm import FamilySpec
    from .predictor import predict

    store, names = store_from_json(args.store)
    ds = load_csv(args.test, args.response, [c for c in (args.categorical or "").split(",") if c]) \
        if args.response else None
    if ds is None:
        raise ConfigError("--response is required to read the test file")
    family = FamilySpec(args.family)
    has_truth = args.truth
    rep = predict(store, ds.X, family, args.threshold, y_true=ds.y if has_truth else None)
    rep.to_csv(args.output)
    print(f"predictions written to {args.output}")
    for k, v in rep.metrics.items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK


def format_count(c: int) -> str:
    """Exact decimal when printable, otherwise a power of ten with its leading digits."""
    if c.bit_length() < 13000:
        return str(c)
    # refine the exponent using the top 64 bits
    shift = c.bit_length() - 64
    lg = math.log10(c >> shift) + shift * math.log10(2)
    e = math.floor(lg)
    return f"{10 ** (lg - e):.6f}e+{e}"


def cmd_count_features(args) -> int:
    print(format_count(count_features(args.m, args.gsize, args.d, args.mode)))
    return EXIT_OK


def cmd_experiment(args) -> int:
    from .experiments import (detection_experiment, enumeration_experiment, format_detection_table,
                              format_enumeration_table)

    if args.name == "enumeration":
        rows = enumeration_experiment(args.replicates, args.budget, args.seed)
        print(format_enumeration_table(rows))
        return EXIT_OK
    B = int(os.environ.get("BGNLM_THREADS", args.B))
    res = detection_experiment(args.name, args.replicates, B, args.seed, workers=args.workers)
    print(format_detection_table(res))
    print(f"  elapsed {res.elapsed:.1f} s")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    spec = SyntheticSpec(args.generator, args.n, args.noise_sd, args.seed)
    ds = gen_synthetic(spec)
    with open(args.output, "w") as fh:
        fh.write(",".join(list(ds.column_names) + ["y"]) + "\n")
        for row, yv in zip(ds.X, ds.y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{float(yv)!r}\n")
    if args.summary:
        write_summary(ds, args.summary)
    print(f"wrote {ds.n} rows to {args.output}")
    return EXIT_OK


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bgnlm", description="Bayesian generalised nonlinear models fitted by GMJMCMC")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a model to a CSV file")
    f.add_argument("--data", dest="cfg_data", help="training CSV")
    f.add_argument("--response", dest="cfg_response", help="response column")
    f.add_argument("--out", default=".", help="directory receiving run_<timestamp>_<seed>/")
    _add_config_flags(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="model-averaged predictions from a saved store")
    pr.add_argument("--store", required=True, help="store.json written by fit")
    pr.add_argument("--test", required=True, help="test CSV")
    pr.add_argument("--response", help="response column of the test CSV")
    pr.add_argument("--truth", action="store_true", help="report metrics against the response column")
    pr.add_argument("--categorical", default="")
    pr.add_argument("--family", default="gaussian")
    pr.add_argument("--threshold", type=float, default=0.5)
    pr.add_argument("--output", default="predictions.csv")
    pr.set_defaults(func=cmd_predict)

    c = sub.add_parser("count-features", help="size of the feature space")
    c.add_argument("m", type=int)
    c.add_argument("gsize", type=int)
    c.add_argument("d", type=int)
    c.add_argument("--mode", choices=("full", "lower_bound"), default="full")
    c.set_defaults(func=cmd_count_features)

    e = sub.add_parser("experiment", help="replicated recovery experiments")
    e.add_argument("name", choices=("kepler", "mass", "logic", "enumeration"))
    e.add_argument("--replicates", type=int, default=10)
    e.add_argument("--B", type=int, default=4)
    e.add_argument("--workers", type=int, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--budget", type=int, default=500, help="visit budget for the enumeration experiment")
    e.set_defaults(func=cmd_experiment)

    g = sub.add_parser("gen-data", help="write a synthetic dataset to CSV")
    g.add_argument("generator", choices=("kepler", "mass", "logic"))
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--noise-sd", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--output", required=True)
    g.add_argument("--summary", help="optional dataset summary JSON")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("bgnlm").setLevel(min(level, logging.INFO))
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (BGNLMError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
