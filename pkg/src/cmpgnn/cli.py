"""Command-line entry point: ``cmpgnn <subcommand> [flags]``.

Exit codes: 0 success / all checks pass, 1 runtime or verification failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .csbm import ConstructionError, generate, parse_params
from .estimators import TrainingError
from .experiments import edge_error_table, estimator_study, gap_checks, lemma_grid
from .graph import BundleParseError, load_bundle, write_bundle
from .model import MODES, RunConfig, ablation_q3, em_train, homophily_estimates, save_checkpoint
from .spectral import run_suite

log = logging.getLogger("cmpgnn")


class UsageError(Exception):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("CMP_THREADS", "1")))
    except ValueError:
        raise UsageError("CMP_THREADS must be an integer") from None


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


# flags that map straight onto RunConfig fields
RUN_FLAGS = {"scheme": "scheme", "sign_source": "sign_source", "seed": "seed",
             "epochs": "epochs", "lr": "lr", "hidden": "hidden", "layers": "layers",
             "norm": "norm", "b_endpoint": "b_endpoint"}


def resolve_config(args) -> tuple[RunConfig, dict]:
    """Defaults, then the ``--config`` file, then explicit flags."""
    values: dict = {}
    extra: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise UsageError(f"{path}: expected a JSON object")
        known = {f.name for f in fields(RunConfig)}
        for key, val in data.items():
            (values if key in known else extra)[key] = val
    for flag, key in RUN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[key] = val
    if values.get("norm") == "sym":
        values["norm"] = "sym-selfloop"
    try:
        return RunConfig(**values), extra
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None


def _load_graph(args, extra: dict, seed: int):
    dataset = args.dataset or extra.get("dataset")
    spec = args.csbm or extra.get("csbm")
    if dataset and spec:
        raise UsageError("give either --dataset or --csbm, not both")
    if dataset:
        path = Path(dataset)
        if not path.is_dir():
            raise UsageError(f"dataset directory not found: {path}")
        try:
            return load_bundle(path)
        except BundleParseError as exc:
            raise UsageError(str(exc)) from None
    if spec:
        try:
            return generate(parse_params(spec, seed=seed))
        except (ValueError, ConstructionError) as exc:
            raise UsageError(f"bad --csbm: {exc}") from None
    raise UsageError("need --dataset DIR or --csbm PARAMS")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _echo(out: Path, args, cfg: RunConfig | None = None, **more) -> None:
    echo = {"subcommand": args.command, "args": {k: v for k, v in vars(args).items()
                                                  if k not in ("func",)}, "version": __version__}
    if cfg is not None:
        echo["run_config"] = cfg.to_dict()
    echo.update(more)
    _write_json(out / "config.json", echo)


METRIC_COLUMNS = ("epoch", "train_loss", "alpha", "e_t", "mean_b_hat", "blocked_count",
                  "smoothing", "true_e", "seconds")


def cmd_train(args) -> int:
    cfg, extra = resolve_config(args)
    g = _load_graph(args, extra, cfg.seed)
    out = _out_dir(args)
    _echo(out, args, cfg)
    state, summary = em_train(g, cfg)
    _write_csv(out / "metrics.csv", [{k: r[k] for k in METRIC_COLUMNS} for r in state.log])
    _write_json(out / "summary.json", summary)
    save_checkpoint(out / "checkpoint.cmp", state.best_params, cfg)
    print(f"best_val={summary['best_val']:.4f} test_accuracy={summary['test_accuracy']:.4f}")
    return 0


def cmd_verify_lemmas(args) -> int:
    out = _out_dir(args)
    _echo(out, args)
    base = parse_params(args.csbm or "", n=1000, c=2, degree=10, feat_dim=2, seed=args.seed or 0)
    if args.trials < 100:
        raise UsageError("--trials must be at least 100")
    rows = lemma_grid(base, trials=args.trials)
    if rows[0]["se_multiplier"] != 3.0:
        print(f"note: {args.trials} trials, using the wide {rows[0]['se_multiplier']:g}-SE tolerance")
    gaps = gap_checks(args.resolution)
    for r in gaps:
        rows.append({"scheme": r["check"], "b": "", "e": "", "dim": "", "expected": r["target"],
                     "empirical": r["value"], "stderr": "", "se_multiplier": "",
                     "passed": r["passed"]})
    _write_csv(out / "lemmas.csv", rows)
    bad = [r for r in rows if not r["passed"]]
    print(f"{len(rows) - len(bad)}/{len(rows)} checks passed")
    return 0 if not bad else 1


def cmd_verify_estimators(args) -> int:
    out = _out_dir(args)
    _echo(out, args)
    seed = args.seed or 0
    params = parse_params(args.csbm or "", n=1000, c=2, degree=10, b=0.5, b_spread=0.4,
                          mu=2.0, seed=seed)
    cfg = RunConfig(scheme="calibrated", epochs=args.epochs or 200, seed=seed)
    rows, pearson = estimator_study(params, cfg, warmup=args.warmup)
    table = edge_error_table(trials=args.oracle_trials, seed=seed)
    post = [r for r in rows if r["post_warmup"]]
    ok_e = bool(post) and max(r["abs_err"] for r in post) <= 0.05
    ok_b = pearson >= 0.8
    ok_o = max(r["abs_diff"] for r in table) <= 0.01
    _write_csv(out / "estimators.csv", rows)
    _write_csv(out / "edge_error_oracle.csv", table)
    _write_json(out / "estimators_summary.json",
                {"pearson_b": pearson, "edge_error_ok": ok_e, "homophily_ok": ok_b,
                 "closed_form_vs_oracle_ok": ok_o})
    print(f"pearson(b_hat, b)={pearson:.3f} edge_error_ok={ok_e} oracle_ok={ok_o}")
    return 0 if (ok_e and ok_b and ok_o) else 1


def cmd_spectral(args) -> int:
    out = _out_dir(args)
    _echo(out, args)
    rows = run_suite(seed=args.seed or 0)
    _write_csv(out / "spectral.csv", rows)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['check']} = {r['value']:.6g} ({r['target']})")
    return 0 if all(r["passed"] for r in rows) else 1


def cmd_ablation(args) -> int:
    cfg, extra = resolve_config(args)
    out = _out_dir(args)
    _echo(out, args, cfg)
    seeds = [cfg.seed + i for i in range(args.seeds)]

    def one(seed):
        run = replace(cfg, seed=seed)
        g = _load_graph(args, extra, seed)
        res = ablation_q3(g, run, b_hat=homophily_estimates(g, run))
        return [{"mode": m, "seed": seed, "accuracy": res[m]} for m in MODES]

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        chunks = list(pool.map(one, seeds))
    rows = [r for chunk in chunks for r in chunk]
    _write_csv(out / "ablation.csv", rows)
    for m in MODES:
        med = float(np.median([r["accuracy"] for r in rows if r["mode"] == m]))
        print(f"{m} median accuracy {med:.4f}")
    return 0


def cmd_gen_csbm(args) -> int:
    try:
        params = parse_params(args.csbm or "", seed=args.seed or 0)
        g = generate(params)
    except (ValueError, ConstructionError) as exc:
        raise UsageError(f"bad --csbm: {exc}") from None
    out = _out_dir(args)
    write_bundle(g, out)
    _echo(out, args, csbm=params.to_dict())
    print(f"wrote {g.n} nodes, {g.num_edges} edges to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cmpgnn", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, run=False):
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--csbm", help="CSBM params, e.g. n=1000,c=2,b=0.3,degree=10")
        if run:
            sp.add_argument("--config", help="JSON file of run settings")
            sp.add_argument("--dataset", help="graph bundle directory")
            sp.add_argument("--scheme", choices=("plane", "signed", "blocked", "calibrated"))
            sp.add_argument("--sign-source", dest="sign_source",
                            help="oracle | predicted | forced:<rate>")
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--hidden", type=int)
            sp.add_argument("--layers", type=int)
            sp.add_argument("--norm", choices=("row", "sym"))
            sp.add_argument("--b-endpoint", dest="b_endpoint", choices=("row", "min"))

    sp = sub.add_parser("train", help="run calibrated EM training")
    common(sp, run=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("verify-lemmas", help="Monte-Carlo one-hop means and gap integrals")
    common(sp)
    sp.add_argument("--trials", type=int, default=10_000)
    sp.add_argument("--resolution", type=int, default=1000)
    sp.set_defaults(func=cmd_verify_lemmas)

    sp = sub.add_parser("verify-estimators", help="homophily and edge-error estimator fidelity")
    common(sp)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--warmup", type=int, default=20)
    sp.add_argument("--oracle-trials", dest="oracle_trials", type=int, default=1_000_000)
    sp.set_defaults(func=cmd_verify_estimators)

    sp = sub.add_parser("spectral", help="spectral radius and smoothing suite")
    common(sp)
    sp.set_defaults(func=cmd_spectral)

    sp = sub.add_parser("ablation", help="negative-edge policy ablation across seeds")
    common(sp, run=True)
    sp.add_argument("--seeds", type=int, default=10)
    sp.set_defaults(func=cmd_ablation)

    sp = sub.add_parser("gen-csbm", help="write a CSBM graph bundle")
    common(sp)
    sp.set_defaults(func=cmd_gen_csbm)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
