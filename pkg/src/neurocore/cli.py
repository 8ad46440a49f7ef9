"""Command-line entry point: train, continual, federated, simulate, report."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

log = logging.getLogger("neurocore")


def _json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=_default)


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _rows_csv(path, rows):
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)


def _load_json(path):
    if path is None:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _run_dir(args) -> Path:
    d = Path(args.run_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _model(args, default="mnist"):
    from .snn.layers import InputSpec, ModelGraph, NeuronConfig, conv, mnist_convnet

    if getattr(args, "model", None):
        return ModelGraph.load(args.model)
    preset = getattr(args, "preset", None) or default
    T = getattr(args, "timesteps", None) or 4
    if preset == "mnist":
        return mnist_convnet(T)
    if preset == "three-layer":
        nc = NeuronConfig()
        layers = [conv(16, 16, 8, 8, neuron=nc, name=f"conv{i + 1}") for i in range(3)]
        return ModelGraph(InputSpec(16, 8, 8, "poisson", nc), layers, T)
    raise SystemExit(f"unknown preset {preset!r}")


def _train_config(args):
    from .workloads.train import TrainConfig

    d = _load_json(args.config)
    d = d.get("train", d)
    for key in ("epochs", "batch_size", "lr", "seed", "deployment", "cores"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    return TrainConfig.from_dict(d)


def _dataset(args):
    from .workloads.data import load_mnist

    ds = load_mnist(args.data)
    return ds.subset(args.n_train, args.n_test, seed=args.seed or 0)


def _log_row(row):
    log.info("%s", json.dumps(row, default=_default))


# ---------------------------------------------------------------- commands


def cmd_train(args):
    from .workloads.train import run_training

    d = _run_dir(args)
    model = _model(args)
    cfg = _train_config(args)
    res = run_training(model, _dataset(args), config=cfg, log=_log_row)
    _json(d / "train.json", res.to_dict())
    _rows_csv(d / "history.csv", res.history.epochs)
    model.save(d / "model.json")
    np.savez(d / "weights.npz", *res.trainer.weights)
    print(f"test accuracy {res.test_accuracy:.4f} after {len(res.history.epochs)} epochs "
          f"({res.seconds:.0f} s, {cfg.deployment})")
    return 0


def cmd_continual(args):
    from .workloads.train import run_continual, split_classes

    d = _run_dir(args)
    model = _model(args)
    cfg = _train_config(args)
    old, new = split_classes(_dataset(args), tuple(args.old), tuple(args.new))
    res = run_continual(model, old, new, cfg, pretrain_epochs=args.pretrain_epochs,
                        finetune_epochs=args.finetune_epochs, replay=args.replay, log=_log_row)
    _json(d / "continual.json", res.to_dict())
    print(f"mixed-set accuracy {res.before:.4f} -> {res.after:.4f} "
          f"(old {res.old_before:.3f}->{res.old_after:.3f}, new {res.new_before:.3f}->{res.new_after:.3f})")
    return 0


def cmd_federated(args):
    from .workloads.data import iid_shards, label_shards
    from .workloads.train import FederationConfig, run_federated

    d = _run_dir(args)
    model = _model(args)
    cfg = _train_config(args)
    raw = _load_json(args.config).get("federation", {})
    fed = FederationConfig(**{**raw, **{k: v for k, v in {
        "workers": args.workers, "rounds": args.rounds, "local_epochs": args.local_epochs,
        "cores_per_worker": args.cores_per_worker}.items() if v is not None}})
    ds = _dataset(args)
    if args.iid:
        parts = iid_shards(len(ds.y_train), fed.workers, cfg.seed, args.per_worker)
    else:
        parts = label_shards(ds.y_train, fed.workers, args.labels_per_worker, cfg.seed, args.per_worker)
    res = run_federated(model, ds, parts, fed, cfg, log=_log_row)
    _json(d / "federated.json", {**res.to_dict(), "federation": asdict(fed)})
    rows = [{"round": r, "federated": res.federated[r], **{f"worker{k}": res.workers[k][i]
                                                             for k in range(fed.workers)}}
            for i, r in enumerate(res.eval_rounds)]
    _rows_csv(d / "federated.csv", rows)
    print(f"federated accuracy {res.final:.4f}; workers " + " ".join(f"{a:.4f}" for a in res.worker_final))
    return 0


def cmd_simulate(args):
    from . import perf
    from .arch import ArchConfig
    from .deploy import CoreSimRunner
    from .mapper import Mapping, map_model
    from .snn.network import init_weights

    d = _run_dir(args)
    rng = np.random.default_rng(args.seed or 0)
    if args.streams:
        mapping = Mapping.load(args.streams)
    else:
        arch = ArchConfig.load(args.arch) if args.arch else ArchConfig()
        mapping = map_model(_model(args, "three-layer"), args.batch, arch, args.cores)
        mapping.save(d / "streams")
    model, N, T = mapping.model, mapping.batch, mapping.model.timesteps
    weights = init_weights(model, rng)
    inp = model.input
    if mapping.input_kind == "direct":
        x = np.round(rng.random((N, inp.C, inp.H, inp.W)) * 1024) / 1024
    else:
        x = (rng.random((N, T, inp.C, inp.H, inp.W)) < args.input_rate).astype(np.uint8)
    labels = rng.integers(0, model.num_classes or 10, N)
    runner = CoreSimRunner(mapping)
    res = runner.run_batch(weights, x, labels=labels, gating=not args.no_gating)
    sim = res.sim
    rep = perf.perf_report(sim, mapping)
    rep.save(d / "perf.json")
    _json(d / "trace.json", {"cycles": sim.cycles, "cores": len(mapping.cores), "batch": N,
                             "arch": mapping.arch.to_dict(), "dram_layout": mapping.dram,
                             "dram_records": sim.dram_records, "energy": sim.energy.to_dict(),
                             "gating": sim.gating.to_dict(), "noc": sim.noc, "records": sim.records})
    sim.counters_csv(d / "counters.csv")
    if args.emit_figure_data:
        perf.emit_figure_data(rep, sim.records, d / "figure_data", arch=mapping.arch)
    print(f"P={rep.P} cycles (fp_first {rep.P_fp_first}, bp {rep.P_bp}, wg {rep.P_wg}); util {rep.util:.3f}; "
          f"{rep.fps:.0f} samples/s on {rep.cores} cores; loss {res.loss:.4f}")
    return 0


def cmd_report(args):
    from . import perf
    from .arch import ArchConfig

    d = Path(args.run_dir)
    with open(d / "trace.json") as fh:
        tr = json.load(fh)
    arch = ArchConfig.from_dict(tr["arch"]) if "arch" in tr else ArchConfig()
    rep = perf.report_from_records(tr["records"], tr["cores"], tr["batch"], arch, tr.get("energy"),
                                   tr.get("gating"), [tuple(r) for r in tr.get("dram_records", [])],
                                   perf.preloaded_regions(tr.get("dram_layout", {})))
    rep.save(d / "report.json")
    if args.emit_figure_data:
        perf.emit_figure_data(rep, tr["records"], d / "figure_data", args.bucket, arch)
    print(json.dumps({k: v for k, v in rep.to_dict().items() if k not in ("energy", "gating")}, indent=2))
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurocore", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, training=True):
        sp.add_argument("--run-dir", default="runs/latest", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--model", help="model graph JSON")
        sp.add_argument("--preset", choices=["mnist", "three-layer"])
        sp.add_argument("--timesteps", type=int)
        if training:
            sp.add_argument("--config", help="JSON with training (and federation) settings")
            sp.add_argument("--deployment", choices=["golden", "core-sim"])
            sp.add_argument("--data", help="directory with MNIST IDX files (default $NEUROCORE_DATA)")
            sp.add_argument("--n-train", type=int, default=10000)
            sp.add_argument("--n-test", type=int, default=1000)
            sp.add_argument("--epochs", type=int)
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--lr", type=float)
            sp.add_argument("--cores", type=int)

    sp = sub.add_parser("train", help="train a classifier")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("continual", help="pre-train on old classes, fine-tune on new ones")
    common(sp)
    sp.add_argument("--old", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    sp.add_argument("--new", type=int, nargs="+", default=[5, 6, 7, 8, 9])
    sp.add_argument("--pretrain-epochs", type=int, default=None)
    sp.add_argument("--finetune-epochs", type=int, default=1)
    sp.add_argument("--replay", type=float, default=0.2, help="fraction of old training data mixed in")
    sp.set_defaults(func=cmd_continual)

    sp = sub.add_parser("federated", help="federated averaging over simulated workers")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--local-epochs", type=int)
    sp.add_argument("--cores-per-worker", type=int)
    sp.add_argument("--labels-per-worker", type=int, default=2)
    sp.add_argument("--per-worker", type=int, default=None, help="cap on samples per worker")
    sp.add_argument("--iid", action="store_true")
    sp.set_defaults(func=cmd_federated)

    sp = sub.add_parser("simulate", help="compile (or load) device streams and run one batch")
    common(sp, training=False)
    sp.add_argument("--streams", help="directory of saved device streams to replay")
    sp.add_argument("--arch", help="architecture JSON")
    sp.add_argument("--batch", type=int, default=4)
    sp.add_argument("--cores", type=int)
    sp.add_argument("--input-rate", type=float, default=0.3)
    sp.add_argument("--no-gating", action="store_true")
    sp.add_argument("--emit-figure-data", action="store_true")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("report", help="performance report from a simulate run directory")
    sp.add_argument("run_dir")
    sp.add_argument("--bucket", type=int, default=256)
    sp.add_argument("--emit-figure-data", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
