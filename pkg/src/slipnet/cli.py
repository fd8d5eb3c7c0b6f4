"""``slipnet`` command line: gen-dataset, train, eval, simulate, oracle.

Artifacts go to files, key=value reports to stdout, progress to stderr.
Exit codes: 0 ok, 2 usage/domain, 3 I/O or file format, 4 divergence,
5 scenario validation.
"""
from __future__ import annotations

import argparse
import configparser
import json
import math
import sys
from pathlib import Path

import numpy as np

from slipnet import __version__
from slipnet.dataset import (
    DEFAULT_NOISE_SIGMA,
    DEFAULT_NUM_POINTS,
    DEFAULT_WINDOW,
    DESIGNS,
    DESK_CUBE,
    Dataset,
    DatasetManifest,
    FrictionCube,
    build_dataset,
    export_csv,
    load_dataset,
    make_windows,
    sample_curve,
    save_dataset,
    train_test_split_indices,
)
from slipnet.estimator import SlipRegressor
from slipnet.exceptions import DomainError, SlipNetError
from slipnet.friction import ReferenceRoad, optimal_point_closed_form, optimal_point_grid, parse_road
from slipnet.net import PLACEMENTS


def _floats(text: str, count: int | None = None) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(vals) != count:
        raise argparse.ArgumentTypeError(f"expected {count} values, got {len(vals)}")
    return vals


def _range(text):
    return _floats(text, 2)


def _counts(text):
    vals = _floats(text, 3)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError("counts must be integers")
    return tuple(int(v) for v in vals)


def _ints(text):
    return tuple(int(v) for v in _floats(text))


def _progress(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _report(pairs: dict) -> str:
    lines = []
    for k, v in pairs.items():
        if isinstance(v, float):
            v = "nan" if math.isnan(v) else f"{v:.6g}"
        lines.append(f"{k}={v}")
    return "\n".join(lines)


# --- gen-dataset -----------------------------------------------------------

_CUBE_KEYS = {
    "design": str,
    "counts": _counts,
    "beta1_range": _range,
    "beta2_range": _range,
    "beta3_range": _range,
    "scale_range": _range,
    "beta3_scale_range": _range,
    "design_seed": int,
}
_DATA_KEYS = {"n": int, "noise": float, "stride": int, "num_points": int, "seed": int}


def _read_config(path: str) -> dict:
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if not cp.read(path):
        raise FileNotFoundError(f"cannot read config {path}")
    out = {}
    for section, keys in (("cube", _CUBE_KEYS), ("dataset", _DATA_KEYS)):
        if not cp.has_section(section):
            continue
        for key, value in cp.items(section):
            if key not in keys:
                raise DomainError(f"{path}: unknown key [{section}] {key}")
            try:
                out[key] = keys[key](value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise DomainError(f"{path}: [{section}] {key}: {exc}") from None
    return out


def cmd_gen_dataset(args) -> int:
    settings = _read_config(args.config) if args.config else {}
    for key in list(_CUBE_KEYS) + list(_DATA_KEYS):
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    cube_kwargs = {k: settings[k] for k in _CUBE_KEYS if k in settings}
    cube = FrictionCube(**{**DESK_CUBE.__dict__, **cube_kwargs})
    n = settings.get("n", DEFAULT_WINDOW)
    if n < 2:
        raise DomainError("window size n must be at least 2")
    seed = settings.get("seed", 42)
    _progress(f"generating dataset: design={cube.design} counts={cube.counts} n={n} seed={seed}")
    ds = build_dataset(
        cube,
        n=n,
        noise_sigma=settings.get("noise", DEFAULT_NOISE_SIGMA),
        stride=settings.get("stride"),
        seed=seed,
        num_points=settings.get("num_points", DEFAULT_NUM_POINTS),
    )
    out = ds
    if args.holdout_out:
        fit_idx, test_idx = train_test_split_indices(len(ds), args.holdout_fraction, seed)
        test_idx = np.sort(test_idx[~ds.noisy[test_idx]])
        fit_idx = np.sort(fit_idx)
        out = _subset(ds, fit_idx)
        save_dataset(_subset(ds, test_idx), args.holdout_out)
        _progress(f"holdout: {len(test_idx)} clean windows -> {args.holdout_out}")
    save_dataset(out, args.out)
    if args.csv:
        export_csv(out, args.csv)
    m = out.manifest
    print(_report({
        "total_windows": m.total_windows,
        "curves": len(set(ds.curve_index.tolist())),
        "n": m.n,
        "stride": m.stride,
        "noise_sigma": m.noise_sigma,
        "seed": m.seed,
        "design": m.cube.design,
        "counts": ":".join(map(str, m.cube.counts)),
        "out": args.out,
    }))
    return 0


def _subset(ds: Dataset, idx: np.ndarray) -> Dataset:
    m = ds.manifest
    manifest = DatasetManifest(len(idx), m.n, m.noise_sigma, m.seed, m.cube, m.stride, m.num_points)
    return Dataset(manifest, ds.X[idx], ds.y[idx], ds.curve_index[idx], ds.noisy[idx])


# --- train -----------------------------------------------------------------

def cmd_train(args) -> int:
    ds = load_dataset(args.dataset)
    _progress(f"training on {len(ds)} windows from {args.dataset}")
    est = SlipRegressor(
        hidden_layer_sizes=args.hidden,
        dropout=args.dropout,
        dropout_placement=args.placement,
        epochs=args.epochs,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        batch_size=args.batch_size,
        momentum=args.momentum,
        s_forwards=args.s_forwards,
        validation_fraction=args.validation_fraction,
        random_state=args.seed,
    )

    def report(epoch, value):
        _progress(f"epoch {epoch}/{args.epochs} loss {value:.6g}")

    est.fit(ds.X, ds.y, callback=report)
    est.save(args.out)
    loss_log = args.loss_log or f"{args.out}.loss.csv"
    with open(loss_log, "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(est.loss_history_, 1):
            fh.write(f"{i},{v!r}\n")
    print(_report({"model": args.out, "epochs": args.epochs, "final_loss": est.loss_history_[-1],
                   "sigma_obs": est.sigma_obs_, "loss_log": loss_log}))
    return 0


# --- eval ------------------------------------------------------------------

def reference_windows(n: int, seed: int, num_points: int = DEFAULT_NUM_POINTS) -> dict[str, tuple[np.ndarray, float]]:
    """Clean windows of each reference road, shuffled like the training data."""
    out = {}
    for k, road in enumerate(ReferenceRoad):
        rng = np.random.default_rng([int(seed), 0xE7A1, k])
        windows, noisy = make_windows(sample_curve(road.params, num_points), n, 0.0, rng)
        out[road.name.lower()] = (windows[~noisy].reshape(int((~noisy).sum()), -1),
                                  optimal_point_closed_form(road.params).lambda_star)
    return out


def evaluate(est: SlipRegressor, X: np.ndarray, y: np.ndarray, seed: int = 0) -> dict:
    mean, std = est.predict(X, return_std=True)
    err = np.abs(mean - y)
    report = {
        "windows": int(len(y)),
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "mae": float(err.mean()),
        "mean_std": float(std.mean()),
        "sigma_obs": float(est.sigma_obs_),
    }
    for k in (1, 2, 3):
        report[f"calibration_k{k}"] = float(np.mean(err <= k * std))
    for name, (Xr, lam) in reference_windows(est.n_features_in_ // 2, seed).items():
        m = est.predict(Xr)
        report[f"rmse_{name}"] = float(np.sqrt(np.mean((m - lam) ** 2)))
    return report


def cmd_eval(args) -> int:
    est = SlipRegressor.load(args.model, s_forwards=args.s_forwards, random_state=args.seed)
    ds = load_dataset(args.dataset)
    if ds.X.shape[1] != est.n_features_in_:
        raise DomainError(f"dataset windows have {ds.X.shape[1]} features, model expects {est.n_features_in_}")
    _progress(f"evaluating {args.model} on {len(ds)} windows, S={args.s_forwards}")
    report = evaluate(est, ds.X, ds.y, args.seed)
    text = _report(report)
    print(text)
    if args.report:
        Path(args.report).write_text(text + "\n")
    return 0


# --- simulate --------------------------------------------------------------

def cmd_simulate(args) -> int:
    from slipnet.scenario import bundled_names, load_scenario, run_scenario

    if args.list:
        print("\n".join(bundled_names()))
        return 0
    if not args.scenario or not args.out:
        raise DomainError("simulate needs --scenario and --out (or --list)")
    scen = load_scenario(args.scenario)
    if args.seed is not None:
        scen.seed = args.seed
    _progress(f"simulating {scen.name} ({scen.mode})")
    result = run_scenario(scen, args.model)
    result.write_csv(args.out)
    metrics = {"scenario": scen.name, "mode": scen.mode, **result.metrics}
    from slipnet.harness import transition_stats

    for i, tr in enumerate(transition_stats(result)):
        for key in ("time", "pre_mean", "post_peak", "ratio"):
            metrics[f"transition{i + 1}_{key}"] = tr[key]
        metrics[f"transition{i + 1}_roads"] = f"{tr['from']}->{tr['to']}"
    print(_report(metrics))
    summary = args.summary or f"{args.out}.json"
    clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in metrics.items()}
    Path(summary).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
    return 0


# --- oracle ----------------------------------------------------------------

def cmd_oracle(args) -> int:
    params = parse_road(args.road)
    pt = optimal_point_grid(params, args.grid) if args.grid else optimal_point_closed_form(params)
    print(f"lambda_star={pt.lambda_star:.6f}")
    print(f"mu_star={pt.mu_star:.6f}")
    return 0


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slipnet", description="Optimal-slip estimation with MC-dropout uncertainty.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-dataset", help="generate a windowed friction-curve dataset",
                       description="Generate the windowed (slip, friction) dataset.")
    g.add_argument("--config", help="INI file with [cube] and [dataset] sections; flags override it")
    g.add_argument("--out", required=True, help="output dataset file")
    g.add_argument("--design", choices=DESIGNS, help="curve design (default path)")
    g.add_argument("--counts", type=_counts, help="design counts a,b,c (default 12,3,1)")
    g.add_argument("--beta1-range", dest="beta1_range", type=_range, help="lo,hi (default 0.15,1.35)")
    g.add_argument("--beta2-range", dest="beta2_range", type=_range, help="lo,hi (default 20,100)")
    g.add_argument("--beta3-range", dest="beta3_range", type=_range, help="lo,hi (default 0.05,0.55)")
    g.add_argument("--scale-range", dest="scale_range", type=_range, help="amplitude scales for the path design")
    g.add_argument("--beta3-scale-range", dest="beta3_scale_range", type=_range, help="beta3 scales for the path design")
    g.add_argument("--design-seed", dest="design_seed", type=int, help="seed of the lhs design")
    g.add_argument("--n", type=int, help="pairs per window (default 15)")
    g.add_argument("--noise", type=float, help="std of the friction noise (default 0.01)")
    g.add_argument("--stride", type=int, help="window stride (default n)")
    g.add_argument("--num-points", dest="num_points", type=int, help="samples per curve (default 10000)")
    g.add_argument("--seed", type=int, help="dataset seed (default 42)")
    g.add_argument("--holdout-fraction", type=float, default=0.1, help="share of windows held out (default 0.1)")
    g.add_argument("--holdout-out", help="write the clean held-out windows here; --out then keeps the rest")
    g.add_argument("--csv", help="also export the (training) windows as CSV")
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train the MC-dropout network", description="Train the MC-dropout network.")
    t.add_argument("--dataset", required=True, help="dataset file")
    t.add_argument("--out", required=True, help="output model file")
    t.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    t.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 0.001)")
    t.add_argument("--weight-decay", type=float, default=1e-4, help="weight decay (default 0.0001)")
    t.add_argument("--batch-size", type=int, default=64, help="minibatch size (default 64)")
    t.add_argument("--momentum", type=float, default=0.0, help="SGD momentum (default 0)")
    t.add_argument("--dropout", type=float, default=0.2, help="dropout probability (default 0.2)")
    t.add_argument("--placement", choices=PLACEMENTS, default="except_last", help="hidden layers with dropout")
    t.add_argument("--hidden", type=_ints, default=(30, 30), help="hidden layer widths (default 30,30)")
    t.add_argument("--s-forwards", type=int, default=500, help="MC passes for calibration (default 500)")
    t.add_argument("--validation-fraction", type=float, default=0.1, help="rows held out to calibrate sigma_obs")
    t.add_argument("--loss-log", help="per-epoch loss CSV (default <out>.loss.csv)")
    t.add_argument("--seed", type=int, default=0, help="training seed (default 0)")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a model on a dataset", description="Score a model on a dataset.")
    e.add_argument("--model", required=True, help="model file")
    e.add_argument("--dataset", required=True, help="held-out dataset file")
    e.add_argument("--s-forwards", type=int, default=500, help="MC passes (default 500)")
    e.add_argument("--report", help="also write the report to this file")
    e.add_argument("--seed", type=int, default=0, help="MC seed (default 0)")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("simulate", help="run a scenario and write its trace", description="Run a scenario.")
    s.add_argument("--scenario", help="scenario file, bundled name or road code such as DSD")
    s.add_argument("--model", help="model file (overrides the scenario's)")
    s.add_argument("--out", help="trace CSV")
    s.add_argument("--summary", help="JSON metrics summary (default <out>.json)")
    s.add_argument("--seed", type=int, help="MC seed (overrides the scenario's)")
    s.add_argument("--list", action="store_true", help="list bundled scenarios and exit")
    s.set_defaults(func=cmd_simulate)

    o = sub.add_parser("oracle", help="optimal slip of a Burckhardt curve", description="Print the optimal slip and friction.")
    o.add_argument("--road", required=True, help="dry, wet, snow or b1,b2,b3")
    o.add_argument("--grid", type=int, help="use a grid argmax with this many points instead of the closed form")
    o.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SlipNetError as exc:
        _progress(f"error: {exc}")
        return exc.exit_code
    except (OSError, EOFError) as exc:
        _progress(f"error: {exc}")
        return 3
    except ValueError as exc:
        _progress(f"error: {exc}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
