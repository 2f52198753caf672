"""Command-line front end.

Subcommands:
  split      dataset -> split index files (s.txt, u.txt, t.txt)
  project    dataset -> 2D embedding csv (id,x,y)
  propagate  embedding + seeds -> forest result csv
  run        full experiment grid from a run-config JSON file
  report     records.jsonl -> aggregate table and iteration curves

Every rejected input exits nonzero with a single diagnostic line on
stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from confprop.core import stratified_split
from confprop.harness import (
    emit_derived,
    emit_reports,
    load_dataset,
    parse_run_config,
    read_records,
    run_experiments,
)
from confprop.opf import PropagationGraph, fit_propagate
from confprop.tsne import TsneParams, run_tsne


def _parse_fractions(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise ValueError("fractions must be three comma-separated numbers")
    return tuple(parts)  # type: ignore[return-value]


def cmd_split(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, args.format, limit=args.limit)
    split = stratified_split(dataset, _parse_fractions(args.fractions), args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, idx in (("s", split.s_idx), ("u", split.u_idx), ("t", split.t_idx)):
        with open(out / f"{name}.txt", "w", encoding="utf-8") as fout:
            for i in idx:
                fout.write(f"{int(i)}\n")
    print(f"split written to {out} (|S|={split.s_idx.size}, "
          f"|U|={split.u_idx.size}, |T|={split.t_idx.size})")
    return 0


def cmd_project(args: argparse.Namespace) -> int:
    dataset = load_dataset(args.dataset, args.format, limit=args.limit)
    params = TsneParams(
        perplexity=args.perplexity, n_iter=args.iters, seed=args.seed
    )
    embedding = run_tsne(dataset.features, params)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "embedding.csv"
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(["id", "x", "y"])
        for sid, (x, y) in zip(dataset.ids, embedding.y):
            writer.writerow([sid, repr(float(x)), repr(float(y))])
    print(f"embedding written to {path}")
    return 0


def _read_embedding(path: str) -> tuple[list[str], np.ndarray]:
    ids: list[str] = []
    pts: list[list[float]] = []
    with open(path, "r", encoding="utf-8", newline="") as fin:
        reader = csv.reader(fin)
        header = next(reader)
        if header[:3] != ["id", "x", "y"]:
            raise ValueError(f"{path}: expected header id,x,y")
        for row in reader:
            ids.append(row[0])
            pts.append([float(row[1]), float(row[2])])
    return ids, np.asarray(pts)


def _read_seeds(path: str) -> tuple[np.ndarray, np.ndarray]:
    idx: list[int] = []
    labels: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as fin:
        reader = csv.reader(fin)
        header = next(reader)
        if header[:2] != ["index", "label"]:
            raise ValueError(f"{path}: expected header index,label")
        for row in reader:
            idx.append(int(row[0]))
            labels.append(int(row[1]))
    return np.asarray(idx, dtype=np.int64), np.asarray(labels, dtype=np.int64)


def cmd_propagate(args: argparse.Namespace) -> int:
    ids, points = _read_embedding(args.embedding)
    seed_idx, seed_labels = _read_seeds(args.seeds)
    graph = PropagationGraph(
        points=points,
        seed_indices=seed_idx,
        seed_labels=seed_labels,
        c=int(seed_labels.max()) + 1,
    )
    forest = fit_propagate(graph)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "forest.csv"
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(["id", "label", "cost", "rival_cost", "confidence"])
        for i, sid in enumerate(ids):
            writer.writerow(
                [
                    sid,
                    int(forest.label[i]),
                    f"{forest.cost[i]:.9g}",
                    f"{forest.rival_cost[i]:.9g}",
                    f"{forest.confidence[i]:.6f}",
                ]
            )
    print(f"forest written to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    config = parse_run_config(args.config)
    if args.regime is not None:
        regimes = [(n, c) for n, c in config.regimes if n == args.regime]
        if not regimes:
            raise ValueError(
                f"regime {args.regime!r} not in config "
                f"(have: {[n for n, _ in config.regimes]})"
            )
        config = dataclasses.replace(config, regimes=regimes)
    if args.tau is not None:
        config = dataclasses.replace(
            config,
            regimes=[
                (n, dataclasses.replace(c, tau=args.tau) if c.tau is not None else c)
                for n, c in config.regimes
            ],
        )
    if args.seed is not None:
        config = dataclasses.replace(config, seeds=(args.seed,))
    outdir = args.out or config.output_dir
    archive = run_experiments(config, workers=args.workers)
    written = emit_reports(archive, outdir)
    print(f"{len(archive.records)} records written to {written['records']}")
    if archive.errors:
        for e in archive.errors:
            print(
                f"cell (seed={e.seed}, regime={e.regime}) failed: {e.message}",
                file=sys.stderr,
            )
        return 1
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = read_records(args.records)
    if not rows:
        raise ValueError(f"{args.records}: no records")
    written = emit_derived(rows, args.out)
    print(f"aggregate table written to {written['aggregate']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="confprop",
        description="Confidence-gated pseudo-labeling experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("split", help="emit stratified split index files")
    p.add_argument("dataset")
    p.add_argument("--format", choices=("csv", "idx"), default="csv")
    p.add_argument("--fractions", default="0.01,0.69,0.30")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default="split_out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("project", help="project features to a 2D embedding")
    p.add_argument("dataset")
    p.add_argument("--format", choices=("csv", "idx"), default="csv")
    p.add_argument("--perplexity", type=float, default=30.0)
    p.add_argument("--iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--out", default="project_out")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("propagate", help="propagate labels over an embedding")
    p.add_argument("--embedding", required=True)
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", default="propagate_out")
    p.set_defaults(func=cmd_propagate)

    p = sub.add_parser("run", help="run the experiment grid from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--regime", default=None, help="run only this named regime")
    p.add_argument("--tau", type=float, default=None,
                   help="override tau on thresholded regimes")
    p.add_argument("--seed", type=int, default=None,
                   help="replace the config's seed list with one seed")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="derive tables and curves from records")
    p.add_argument("--records", required=True)
    p.add_argument("--out", default="report_out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
