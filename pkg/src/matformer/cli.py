"""Command-line surface: graph construction, invariance audits, featurization,
training, prediction, benchmarking, and the line-graph size analysis."""

from __future__ import annotations

import argparse
import glob
import json
import math
import os
import sys
import time
from dataclasses import fields

import numpy as np

from . import audit as audit_mod
from . import engine, io, synthetic, training
from .featurize import GraphEmbedding, featurize_graph
from .graphs import add_self_connecting_edges, build_radius_graph, build_t_fully_connected
from .model import Matformer, ModelConfig


def _load_crystals(paths: list[str]) -> list[tuple[str, "object"]]:
    out = []
    for path in paths:
        if os.path.isdir(path):
            entries = sorted(
                p
                for p in glob.glob(os.path.join(path, "*"))
                if p.endswith(".json") or "POSCAR" in os.path.basename(p) or p.endswith(".poscar")
            )
            for p in entries:
                out.append((os.path.splitext(os.path.basename(p))[0], io.read_crystal(p)))
        else:
            out.append((os.path.splitext(os.path.basename(path))[0], io.read_crystal(path)))
    if not out:
        raise SystemExit("no crystal files found")
    return out


def _build_graph(crystal, method: str, rank: int, t: int, self_edges: bool):
    if method == "radius":
        g = build_radius_graph(crystal, neighbor_rank=rank)
    elif method == "tfc":
        g = build_t_fully_connected(crystal, t=t)
    else:
        raise SystemExit(f"unknown method {method!r}")
    if self_edges:
        g = add_self_connecting_edges(g, crystal)
    return g


def cmd_build_graph(args) -> int:
    crystals = _load_crystals([args.input])
    for name, crystal in crystals:
        graph = _build_graph(crystal, args.method, args.rank, args.t, args.self_edges)
        text = io.graph_to_text(graph) if args.format == "text" else io.graph_to_json(graph)
        if args.out:
            io.atomic_write(args.out, text)
            print(f"{name}: wrote {len(graph.edges)} edges to {args.out}")
        else:
            print(text, end="")
    return 0


def cmd_audit(args) -> int:
    crystals = [c for _, c in _load_crystals(args.inputs)]
    builder = audit_mod.make_builder(
        args.builder,
        neighbor_rank=args.rank,
        t=args.t,
        self_edges=args.self_edges,
        radius=args.radius,
        k=args.k,
        perturbation_seed=args.seed,
    )
    alphas = ((1, 1, 1),) if args.no_supercell else audit_mod.DEFAULT_ALPHAS
    if args.mode == "periodic":
        report = audit_mod.audit_periodic_invariance(
            builder, crystals, args.trials, args.seed, alphas=alphas, name=args.builder
        )
    else:
        report = audit_mod.audit_e3_invariance(
            builder, crystals, args.trials, args.seed, name=args.builder
        )
    payload = json.dumps(report.to_dict(), indent=1)
    if args.out:
        io.atomic_write(args.out, payload)
    print(
        f"{args.builder}: {report.violations} violation(s) in {report.trials} trials, "
        f"worst discrepancy {report.worst_discrepancy:.3e}"
    )
    if report.witness is not None:
        print("witness transform:", json.dumps(report.witness["transform"]))
    return 1 if report.violations > 0 else 0


def cmd_featurize(args) -> int:
    crystals = _load_crystals([args.input])
    rng = np.random.default_rng(args.seed)
    embedding = GraphEmbedding(args.d_model, n_kernels=args.kernels, rng=rng)
    for name, crystal in crystals:
        graph = _build_graph(crystal, args.method, args.rank, args.t, args.self_edges)
        feats = featurize_graph(graph, embedding)
        payload = json.dumps(
            {
                "id": name,
                "node_input": feats.node_input.values.tolist(),
                "edge_input": feats.edge_input.values.tolist(),
                "src": feats.src.tolist(),
                "dst": feats.dst.tolist(),
            }
        )
        if args.out:
            io.atomic_write(args.out, payload)
            print(f"{name}: features written to {args.out}")
        else:
            print(payload)
    return 0


def _config_from_mapping(cls, mapping: dict[str, str], prefix: str):
    kwargs = {}
    for f in fields(cls):
        key = f"{prefix}.{f.name}"
        if key not in mapping:
            continue
        raw = mapping[key]
        if f.type in ("int", int):
            kwargs[f.name] = int(raw)
        elif f.type in ("float", float):
            kwargs[f.name] = float(raw)
        elif f.type in ("bool", bool):
            kwargs[f.name] = raw.lower() in ("1", "true", "yes")
        elif f.name == "grad_clip":
            kwargs[f.name] = None if raw.lower() in ("none", "") else float(raw)
        elif f.name == "betas":
            parts = [float(x) for x in raw.split(",")]
            kwargs[f.name] = (parts[0], parts[1])
        else:
            kwargs[f.name] = raw
    return cls(**kwargs)


def _load_dataset(args) -> list[io.DatasetRecord]:
    if args.synthetic:
        target_fn = synthetic.TARGET_FUNCTIONS[args.target]
        crystals = synthetic.random_corpus(args.synthetic, seed=args.data_seed)
        return [
            io.DatasetRecord(id=f"syn-{i:04d}", crystal=c, target=target_fn(c))
            for i, c in enumerate(crystals)
        ]
    if not args.data or not args.targets:
        raise SystemExit("provide --synthetic N or both --data and --targets")
    with open(args.targets, "r", encoding="utf-8") as fh:
        targets = io.parse_targets_csv(fh.read())
    records = []
    for name, crystal in _load_crystals([args.data]):
        if name not in targets:
            raise SystemExit(f"no target for crystal {name!r}")
        records.append(io.DatasetRecord(id=name, crystal=crystal, target=targets[name]))
    return records


def _split(records, val_fraction, test_fraction, seed):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_val = int(len(records) * val_fraction)
    n_test = int(len(records) * test_fraction)
    val_ids = order[:n_val]
    test_ids = order[n_val : n_val + n_test]
    train_ids = order[n_val + n_test :]
    pick = lambda ids: [records[i] for i in ids]
    return pick(train_ids), pick(val_ids), pick(test_ids)


def cmd_train(args) -> int:
    mapping = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            mapping = io.parse_run_config(fh.read())
    model_config = _config_from_mapping(ModelConfig, mapping, "model")
    train_config = _config_from_mapping(training.TrainConfig, mapping, "train")

    records = _load_dataset(args)
    train_recs, val_recs, test_recs = _split(records, args.val_fraction, args.test_fraction, train_config.seed)
    if not val_recs:
        val_recs = train_recs
    model = Matformer(model_config, seed=train_config.seed)
    result = training.train(model, train_recs, val_recs, train_config)

    os.makedirs(args.out_dir, exist_ok=True)
    io.atomic_write(os.path.join(args.out_dir, "log.csv"), io.write_training_log_csv(result.log))
    io.atomic_write(
        os.path.join(args.out_dir, "checkpoint.json"), json.dumps(result.best_checkpoint)
    )
    if test_recs:
        best = Matformer.from_checkpoint(result.best_checkpoint)
        scale = result.best_checkpoint["target_scale"]
        prepared = [best.prepare(r.crystal) for r in test_recs]
        preds = training.evaluate(best, prepared) * scale["std"] + scale["mean"]
        rows = [(r.id, float(p), r.target) for r, p in zip(test_recs, preds)]
        io.atomic_write(os.path.join(args.out_dir, "predictions.csv"), io.write_predictions_csv(rows))
    print(f"best validation MAE: {result.best_val_mae:.6f} (artifacts in {args.out_dir})")
    return 0


def cmd_predict(args) -> int:
    with open(args.checkpoint, "r", encoding="utf-8") as fh:
        checkpoint = json.load(fh)
    model = Matformer.from_checkpoint(checkpoint)
    scale = checkpoint.get("target_scale", {"mean": 0.0, "std": 1.0})
    targets = {}
    if args.targets:
        with open(args.targets, "r", encoding="utf-8") as fh:
            targets = io.parse_targets_csv(fh.read())
    rows = []
    for name, crystal in _load_crystals([args.data]):
        pred = model.predict(crystal) * scale["std"] + scale["mean"]
        rows.append((name, pred, targets.get(name, math.nan)))
    text = io.write_predictions_csv(rows)
    if args.out:
        io.atomic_write(args.out, text)
        print(f"wrote {len(rows)} predictions to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_bench(args) -> int:
    crystals = synthetic.random_corpus(args.n, seed=args.seed)
    results = []
    for method in ("radius", "tfc"):
        start = time.perf_counter()
        for c in crystals:
            _build_graph(c, method, args.rank, args.t, self_edges=True)
        elapsed = time.perf_counter() - start
        results.append((method, len(crystals) / elapsed, elapsed))
    print(f"{'method':<10} {'crystals/s':>12} {'total s':>10}")
    for method, rate, elapsed in results:
        print(f"{method:<10} {rate:>12.1f} {elapsed:>10.3f}")
    if args.out:
        io.atomic_write(
            args.out,
            json.dumps({m: {"crystals_per_s": r, "seconds": e} for m, r, e in results}, indent=1),
        )
    return 0


def cmd_analyze(args) -> int:
    if args.what == "line-graph-size":
        nodes, edges = audit_mod.line_graph_size(args.n, degree=args.degree)
        print(f"nodes={nodes} edges={edges}")
        return 0
    raise SystemExit(f"unknown analysis {args.what!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matformer", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_graph_options(p):
        p.add_argument("--method", choices=("radius", "tfc"), default="radius")
        p.add_argument("--rank", type=int, default=12, help="neighbor rank for the radius method")
        p.add_argument("--t", type=int, default=3, help="edges per pair for the tfc method")
        p.add_argument("--self-edges", action="store_true", help="add the six lattice self edges")

    p = sub.add_parser("build-graph", help="construct a crystal graph")
    p.add_argument("input")
    add_graph_options(p)
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_build_graph)

    p = sub.add_parser("audit", help="fuzz a construction for invariance violations")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--builder", choices=("radius", "tfc", "ocgraph", "knn"), default="radius")
    add_graph_options(p)
    p.add_argument("--mode", choices=("periodic", "e3"), default="periodic")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--radius", type=float, default=1.0, help="radius for the ocgraph builder")
    p.add_argument("--k", type=int, default=12, help="neighbor count for the knn builder")
    p.add_argument("--no-supercell", action="store_true", help="audit boundary shifts only")
    p.add_argument("--out")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("featurize", help="embed a crystal graph with seeded weights")
    p.add_argument("input")
    add_graph_options(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--kernels", type=int, default=128)
    p.add_argument("--out")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train on a dataset or a synthetic corpus")
    p.add_argument("--data", help="directory of crystal files")
    p.add_argument("--targets", help="CSV mapping crystal id to target")
    p.add_argument("--synthetic", type=int, default=0, help="generate N synthetic crystals instead")
    p.add_argument("--target", choices=sorted(synthetic.TARGET_FUNCTIONS), default="mean_lattice_length")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--config", help="flat key=value run config")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--out-dir", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a saved checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--targets")
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("bench", help="graph-construction throughput on synthetic cells")
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rank", type=int, default=12)
    p.add_argument("--t", type=int, default=3)
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("analyze", help="derived size analyses")
    p.add_argument("what", choices=("line-graph-size",))
    p.add_argument("--n", type=int, required=True, help="atoms per cell")
    p.add_argument("--degree", type=int, default=12)
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
