"""Trainer command line: dataset generation, training, export, evaluation."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .data import load_class_dir, make_dataset, save_class_dir
from .evaluate import calibrate_tau, metrics_at, plot_sweep, score_matrix, sweep, write_csv
from .export import export_model
from .ran import RanModel, TrainConfig


def _emit(record: dict):
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


def cmd_gen_data(args):
    data = make_dataset(args.users, args.count, seed=args.seed)
    for uid, (train, test) in data.items():
        save_class_dir(Path(args.out) / f"user{uid}" / "train", train)
        save_class_dir(Path(args.out) / f"user{uid}" / "test", test)
    _emit({"command": "gen-data", "users": args.users, "count": args.count})


def cmd_train(args):
    images = load_class_dir(args.class_dir)
    cfg = TrainConfig(
        lr=args.lr,
        gamma=args.gamma,
        beta=args.beta,
        batch=args.batch,
        max_iters=args.max_iters,
        seed=args.seed,
    )
    model = RanModel(config=cfg)
    t0 = time.time()
    stats = model.train(images, log_every=args.log_every)
    l_r = stats["l_r_history"]
    export_model(
        model,
        args.out,
        user_id=args.user_id,
        k=args.k,
        f=args.f,
        input_shape=images.shape[1:],
    )
    _emit(
        {
            "command": "train",
            "user_id": args.user_id,
            "iterations": stats["iterations"],
            "l_r_first": l_r[0],
            "l_r_final": float(np.mean(l_r[-20:])),
            "seconds": round(time.time() - t0, 1),
            "out": str(args.out),
        }
    )


def _parse_sweep(text: str) -> np.ndarray:
    lo, hi, step = (float(x) for x in text.split(":"))
    return np.arange(lo, hi + step / 2, step)


def cmd_evaluate(args):
    model_dirs = sorted(p for p in Path(args.models).iterdir() if p.is_dir())
    models = {}
    for d in model_dirs:
        manifest = json.loads((d / "model.json").read_text())
        uid = int(manifest["user_id"])
        models[uid] = _reload_model(d, manifest, seed=args.seed)
    user_ids = sorted(models)
    scores_by_class = {}
    for uid in user_ids:
        test = load_class_dir(Path(args.data) / f"user{uid}" / "test")
        scores_by_class[uid] = score_matrix(models, test)
    taus = _parse_sweep(args.sweep)
    rows = sweep(scores_by_class, user_ids, taus)
    out_dir = Path(args.out_dir)
    write_csv(rows, out_dir / "sweep.csv")
    plot_sweep(rows, user_ids, out_dir / "sweep.png")
    tau_star = calibrate_tau(rows)
    ms = metrics_at(scores_by_class, user_ids, tau_star)
    _emit(
        {
            "command": "evaluate",
            "tau": tau_star,
            "per_user": {
                str(m.user_id): {"recall": round(m.recall, 4), "precision": round(m.precision, 4)}
                for m in ms
            },
            "csv": str(out_dir / "sweep.csv"),
            "plot": str(out_dir / "sweep.png"),
        }
    )


def _reload_model(path, manifest, seed=0) -> RanModel:
    """Rebuild a float model from an exported directory for evaluation."""
    from .export import reload_kernels
    from .ran import LayerDef

    defs = []
    for layer in manifest["layers"]:
        if layer["kind"] == "conv":
            defs.append(
                LayerDef(
                    "conv",
                    tuple(layer["shape"]),
                    layer["stride"],
                    layer["activation"],
                    layer["alpha_shift"],
                )
            )
        else:
            defs.append(LayerDef("upsample", factor=layer["factor"]))
    model = RanModel(recon_defs=defs, config=TrainConfig(seed=seed))
    kernels = reload_kernels(path, defs, manifest["k"], manifest["f"])
    for conv, kern in zip(model.R.convs, kernels):
        conv.kernel = kern
    return model


def build_parser():
    top = argparse.ArgumentParser(prog="privedge-trainer")
    sub = top.add_subparsers(dest="command", required=True)

    gd = sub.add_parser("gen-data", help="synthesize per-user image classes")
    gd.add_argument("--out", required=True)
    gd.add_argument("--users", type=int, default=3)
    gd.add_argument("--count", type=int, default=300)
    gd.add_argument("--seed", type=int, default=0)
    gd.set_defaults(func=cmd_gen_data)

    tr = sub.add_parser("train", help="train one user's reconstructor")
    tr.add_argument("--class-dir", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--user-id", type=int, required=True)
    tr.add_argument("--lr", type=float, default=2e-4)
    tr.add_argument("--gamma", type=float, default=0.999)
    tr.add_argument("--beta", type=float, default=0.001)
    tr.add_argument("--batch", type=int, default=32)
    tr.add_argument("--max-iters", type=int, default=3000)
    tr.add_argument("--k", type=int, default=64)
    tr.add_argument("--f", type=int, default=16)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--log-every", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="threshold sweep over trained models")
    ev.add_argument("--models", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--sweep", default="0.5:40:0.5", help="lo:hi:step")
    ev.add_argument("--out-dir", required=True)
    ev.add_argument("--seed", type=int, default=0)
    ev.set_defaults(func=cmd_evaluate)

    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
        return 0
    except FloatingPointError as exc:
        sys.stderr.write(json.dumps({"error": "divergence", "message": str(exc)}) + "\n")
        return 4
    except (OSError, OverflowError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": "data", "message": str(exc)}) + "\n")
        return 5


if __name__ == "__main__":
    sys.exit(main())
