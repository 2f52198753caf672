"""Experiment harness: dataset ingestion, grid execution, report emission.

Raw per-iteration records are emitted as line-delimited JSON; aggregate
tables and per-regime iteration curves are derived from the *serialized*
record values, so re-deriving them from an emitted records file is exact.
Timing is volatile by nature and goes to a separate sidecar file, keeping
the result files byte-identical across reruns.
"""

from __future__ import annotations

import csv
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from confprop.core import Dataset, stratified_split
from confprop.pipeline import LoopConfig, run_loop

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

RECORD_METRICS = (
    "propagation_accuracy",
    "coverage",
    "test_accuracy",
    "kappa",
)
TABLE_METRICS = ("propagation_accuracy", "test_accuracy", "kappa")
CURVE_METRICS = ("kappa", "propagation_accuracy")


# ---------------------------------------------------------------------------
# dataset loading
# ---------------------------------------------------------------------------


def _remap_labels(raw_labels: np.ndarray) -> tuple[np.ndarray, tuple]:
    """Map arbitrary label values onto contiguous ids 0..c-1 (sorted order)."""
    values = np.unique(raw_labels)
    lookup = {v: k for k, v in enumerate(values.tolist())}
    labels = np.array([lookup[v] for v in raw_labels.tolist()], dtype=np.int64)
    return labels, tuple(values.tolist())


def _load_csv(path: str, limit: int | None) -> Dataset:
    with open(path, "r", encoding="utf-8", newline="") as fin:
        reader = csv.reader(fin)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if "label" not in header:
            raise ValueError(f"{path}: no 'label' column in header")
        label_col = header.index("label")
        width = len(header)
        raw_labels: list[float] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if limit is not None and len(rows) >= limit:
                break
            if len(row) != width:
                raise ValueError(
                    f"{path}:{lineno}: ragged row ({len(row)} cells, expected {width})"
                )
            try:
                numeric = [float(v) for v in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric cell") from None
            raw_labels.append(numeric[label_col])
            rows.append(numeric[:label_col] + numeric[label_col + 1 :])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    labels, label_values = _remap_labels(np.asarray(raw_labels))
    return Dataset(
        features=np.asarray(rows, dtype=np.float64),
        labels=labels,
        c=len(label_values),
        label_values=label_values,
    )


def _read_idx(path: str, expected_magic: int) -> np.ndarray:
    def read_int(fin) -> int:
        raw = fin.read(4)
        if len(raw) != 4:
            raise ValueError(f"{path}: truncated header")
        return struct.unpack(">i", raw)[0]

    with open(path, "rb") as fin:
        magic = read_int(fin)
        if magic != expected_magic:
            raise ValueError(
                f"{path}: magic {magic} does not match expected {expected_magic}"
            )
        n_dims = magic % 256
        dims = [read_int(fin) for _ in range(n_dims)]
        data = np.frombuffer(fin.read(), dtype=np.uint8)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"{path}: payload size does not match header dims {dims}")
    return data.reshape(dims)


def _default_labels_path(images_path: str) -> str:
    p = Path(images_path)
    name = p.name.replace("images", "labels").replace("idx3", "idx1")
    if name == p.name:
        raise ValueError(
            f"cannot derive labels path from {images_path!r}; pass labels_path"
        )
    return str(p.with_name(name))


def _load_idx(path: str, labels_path: str | None, limit: int | None) -> Dataset:
    labels_path = labels_path or _default_labels_path(path)
    images = _read_idx(path, IDX_IMAGES_MAGIC)
    raw_labels = _read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != raw_labels.shape[0]:
        raise ValueError(
            f"image count {images.shape[0]} does not match "
            f"label count {raw_labels.shape[0]}"
        )
    if limit is not None:
        images = images[:limit]
        raw_labels = raw_labels[:limit]
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels, label_values = _remap_labels(raw_labels.astype(np.int64))
    return Dataset(
        features=features,
        labels=labels,
        c=len(label_values),
        label_values=label_values,
    )


def load_dataset(
    path: str,
    format: str,
    labels_path: str | None = None,
    limit: int | None = None,
) -> Dataset:
    """Load a dataset from a csv table or an IDX image/label file pair.

    csv: header row with a ``label`` column; every other column is a
    numeric feature. idx: ``path`` is the images file; the labels file is
    derived by the images->labels name substitution unless given. Pixels
    are scaled to [0, 1] and flattened row-major. Label values are
    remapped onto contiguous ids, with the original values recorded on
    the dataset. Ids are assigned by row order.
    """
    if not Path(path).exists():
        raise FileNotFoundError(path)
    if format == "csv":
        return _load_csv(path, limit)
    if format == "idx":
        return _load_idx(path, labels_path, limit)
    raise ValueError(f"unknown dataset format {format!r}")


def export_csv(dataset: Dataset, path: str) -> None:
    """Write a dataset back out as csv; loading the file reproduces it."""
    values = dataset.label_values or tuple(range(dataset.c))
    with open(path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(["label"] + [f"f{j}" for j in range(dataset.d)])
        for i in range(dataset.n):
            writer.writerow(
                [repr(float(values[dataset.labels[i]]))]
                + [repr(float(v)) for v in dataset.features[i]]
            )


def subsample(dataset: Dataset, size: int, seed: int) -> Dataset:
    """Seeded random subset of the dataset, preserving row order and ids.

    Labels are re-remapped in case a class vanished from the subset.
    """
    if size > dataset.n:
        raise ValueError(f"subset size {size} exceeds n={dataset.n}")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(dataset.n, size=size, replace=False))
    old_values = dataset.label_values or tuple(range(dataset.c))
    labels, kept_classes = _remap_labels(dataset.labels[keep])
    return Dataset(
        features=dataset.features[keep],
        labels=labels,
        c=len(kept_classes),
        ids=[dataset.ids[i] for i in keep],
        label_values=tuple(old_values[k] for k in kept_classes),
    )


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class DatasetConfig:
    path: str
    format: str = "csv"
    labels_path: str | None = None
    limit: int | None = None
    subset_size: int | None = None
    subset_seed: int = 0

    def load(self) -> Dataset:
        ds = load_dataset(
            self.path, self.format, labels_path=self.labels_path, limit=self.limit
        )
        if self.subset_size is not None:
            ds = subsample(ds, self.subset_size, self.subset_seed)
        return ds


@dataclass
class RunConfig:
    dataset: DatasetConfig
    regimes: list[tuple[str, LoopConfig]]
    fractions: tuple[float, float, float] = (0.01, 0.69, 0.30)
    seeds: tuple[int, ...] = (0, 1, 2)
    output_dir: str = "results"

    def __post_init__(self) -> None:
        if not self.seeds:
            raise ValueError("need at least one seed")
        if not self.regimes:
            raise ValueError("need at least one regime")
        names = [name for name, _ in self.regimes]
        if len(set(names)) != len(names):
            raise ValueError("regime names must be unique")


def _regime_from_dict(entry: dict) -> tuple[str, LoopConfig]:
    from confprop.learner import MlpConfig
    from confprop.pipeline import LearnerConfig
    from confprop.tsne import TsneParams

    learner_d = dict(entry.get("learner", {}))
    kind = learner_d.pop("kind", "mlp")
    store_path = learner_d.pop("store_path", None)
    if "hidden_sizes" in learner_d:
        learner_d["hidden_sizes"] = tuple(learner_d["hidden_sizes"])
    learner = LearnerConfig(kind=kind, mlp=MlpConfig(**learner_d), store_path=store_path)
    tsne = TsneParams(**entry.get("tsne", {}))
    cfg = LoopConfig(
        regime=entry["regime"],
        tau=entry.get("tau"),
        tau_schedule=tuple(entry["tau_schedule"]) if entry.get("tau_schedule") else None,
        n_iterations=entry.get("n_iterations", 5),
        seed=entry.get("seed", 0),
        learner=learner,
        tsne=tsne,
        inclusive_threshold=entry.get("inclusive_threshold", True),
        warm_start=entry.get("warm_start", False),
    )
    default_name = cfg.regime.value + (f"_{cfg.tau}" if cfg.tau is not None else "")
    return entry.get("name", default_name), cfg


def parse_run_config(path: str) -> RunConfig:
    """Read a run configuration from a JSON file."""
    with open(path, "r", encoding="utf-8") as fin:
        raw = json.load(fin)
    ds = raw["dataset"]
    dataset = DatasetConfig(
        path=ds["path"],
        format=ds.get("format", "csv"),
        labels_path=ds.get("labels_path"),
        limit=ds.get("limit"),
        subset_size=ds.get("subset_size"),
        subset_seed=ds.get("subset_seed", 0),
    )
    if not Path(dataset.path).exists():
        raise FileNotFoundError(dataset.path)
    return RunConfig(
        dataset=dataset,
        regimes=[_regime_from_dict(e) for e in raw["regimes"]],
        fractions=tuple(raw.get("fractions", (0.01, 0.69, 0.30))),
        seeds=tuple(raw.get("seeds", (0, 1, 2))),
        output_dir=raw.get("output_dir", "results"),
    )


# ---------------------------------------------------------------------------
# grid execution
# ---------------------------------------------------------------------------


@dataclass
class RawRecord:
    seed: int
    regime: str
    iteration: int
    tau: float | None
    n_selected: int
    propagation_accuracy: float
    coverage: float
    test_accuracy: float
    kappa: float
    wall_ms: float = field(compare=False, default=0.0)
    stage_ms: dict[str, float] = field(compare=False, default_factory=dict)


@dataclass
class CellError:
    seed: int
    regime: str
    message: str


@dataclass
class ResultsArchive:
    records: list[RawRecord]
    errors: list[CellError] = field(default_factory=list)


def run_experiments(config: RunConfig, workers: int = 1) -> ResultsArchive:
    """Run the full (seed x regime) grid.

    A failing cell is recorded as an error and does not disturb the other
    cells; records are assembled in (seed, regime, iteration) order
    regardless of worker scheduling.
    """
    dataset = config.dataset.load()

    def cell(seed: int, name: str, cfg: LoopConfig):
        split = stratified_split(dataset, config.fractions, seed)
        reports = run_loop(replace(cfg, seed=seed), dataset, split)
        return [
            RawRecord(
                seed=seed,
                regime=name,
                iteration=r.iteration,
                tau=r.tau,
                n_selected=r.n_selected,
                propagation_accuracy=r.propagation_accuracy,
                coverage=r.coverage,
                test_accuracy=r.test_accuracy,
                kappa=r.kappa,
                wall_ms=sum(r.stage_ms.values()),
                stage_ms=dict(r.stage_ms),
            )
            for r in reports
        ]

    tasks = [(seed, name, cfg) for seed in config.seeds for name, cfg in config.regimes]
    outcomes: dict[tuple[int, str], object] = {}
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {
                (seed, name): pool.submit(cell, seed, name, cfg)
                for seed, name, cfg in tasks
            }
        for key, fut in futures.items():
            try:
                outcomes[key] = fut.result()
            except Exception as exc:
                outcomes[key] = exc
    else:
        for seed, name, cfg in tasks:
            try:
                outcomes[(seed, name)] = cell(seed, name, cfg)
            except Exception as exc:
                outcomes[(seed, name)] = exc

    archive = ResultsArchive(records=[])
    for seed, name, _ in tasks:
        outcome = outcomes[(seed, name)]
        if isinstance(outcome, Exception):
            archive.errors.append(CellError(seed=seed, regime=name, message=str(outcome)))
        else:
            archive.records.extend(outcome)
    return archive


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _round6(v: float | None) -> float | None:
    if v is None:
        return None
    if isinstance(v, float) and np.isnan(v):
        return None
    return round(float(v), 6)


def record_to_dict(r: RawRecord) -> dict:
    """The deterministic (timing-free) serialized form of a raw record."""
    return {
        "seed": r.seed,
        "regime": r.regime,
        "iteration": r.iteration,
        "tau": _round6(r.tau),
        "n_selected": r.n_selected,
        "propagation_accuracy": _round6(r.propagation_accuracy),
        "coverage": _round6(r.coverage),
        "test_accuracy": _round6(r.test_accuracy),
        "kappa": _round6(r.kappa),
    }


def _mean_std(values: list[float | None]) -> tuple[float | None, float | None]:
    """Sample mean/stddev (ddof=1); None if any contributing value is
    undefined; std 0 for a single value."""
    if any(v is None for v in values):
        return None, None
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def aggregate_records(rows: list[dict]) -> list[dict]:
    """Per (regime, iteration) mean and stddev across seeds.

    Operates on serialized record dicts so emitted aggregates are exactly
    recomputable from an emitted records file.
    """
    regimes: list[str] = []
    for r in rows:
        if r["regime"] not in regimes:
            regimes.append(r["regime"])
    out: list[dict] = []
    for regime in regimes:
        iterations = sorted({r["iteration"] for r in rows if r["regime"] == regime})
        for it in iterations:
            cell = [r for r in rows if r["regime"] == regime and r["iteration"] == it]
            entry: dict = {"regime": regime, "iteration": it, "n_seeds": len(cell)}
            for metric in RECORD_METRICS:
                mean, std = _mean_std([r[metric] for r in cell])
                entry[f"mean_{metric}"] = _round6(mean)
                entry[f"std_{metric}"] = _round6(std)
            out.append(entry)
    return out


def _fmt(v: float | None) -> str:
    return "nan" if v is None else f"{v:.6f}"


def emit_reports(archive: ResultsArchive, outdir: str) -> dict[str, str]:
    """Write record, aggregate, curve, timing, and error files.

    Returns a name -> path map of everything written. records.jsonl,
    aggregate.csv, and the curve files are deterministic; timings.jsonl
    carries the volatile wall-clock measurements.
    """
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}

    rows = [record_to_dict(r) for r in archive.records]
    records_path = out / "records.jsonl"
    with open(records_path, "w", encoding="utf-8") as fout:
        for row in rows:
            fout.write(json.dumps(row, allow_nan=False) + "\n")
    written["records"] = str(records_path)

    for name, path in emit_derived(rows, outdir).items():
        written[name] = path

    timings_path = out / "timings.jsonl"
    with open(timings_path, "w", encoding="utf-8") as fout:
        for r in archive.records:
            fout.write(
                json.dumps(
                    {
                        "seed": r.seed,
                        "regime": r.regime,
                        "iteration": r.iteration,
                        "wall_ms": round(r.wall_ms, 3),
                        "stage_ms": {k: round(v, 3) for k, v in r.stage_ms.items()},
                    }
                )
                + "\n"
            )
    written["timings"] = str(timings_path)

    if archive.errors:
        errors_path = out / "errors.jsonl"
        with open(errors_path, "w", encoding="utf-8") as fout:
            for e in archive.errors:
                fout.write(
                    json.dumps(
                        {"seed": e.seed, "regime": e.regime, "message": e.message}
                    )
                    + "\n"
                )
        written["errors"] = str(errors_path)
    return written


def emit_derived(rows: list[dict], outdir: str) -> dict[str, str]:
    """Aggregate table and per-regime curves from serialized records."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, str] = {}
    aggregates = aggregate_records(rows)

    agg_path = out / "aggregate.csv"
    regimes: list[str] = []
    for a in aggregates:
        if a["regime"] not in regimes:
            regimes.append(a["regime"])
    last_iter = {
        regime: max(a["iteration"] for a in aggregates if a["regime"] == regime)
        for regime in regimes
    }
    with open(agg_path, "w", encoding="utf-8", newline="") as fout:
        writer = csv.writer(fout)
        writer.writerow(["metric"] + regimes)
        for metric in TABLE_METRICS:
            row = [metric]
            for regime in regimes:
                a = next(
                    a
                    for a in aggregates
                    if a["regime"] == regime and a["iteration"] == last_iter[regime]
                )
                row.append(
                    f"{_fmt(a[f'mean_{metric}'])}±{_fmt(a[f'std_{metric}'])}"
                )
            writer.writerow(row)
    written["aggregate"] = str(agg_path)

    curves_dir = out / "curves"
    curves_dir.mkdir(exist_ok=True)
    for regime in regimes:
        series = sorted(
            (a for a in aggregates if a["regime"] == regime),
            key=lambda a: a["iteration"],
        )
        for metric in CURVE_METRICS:
            path = curves_dir / f"{regime}_{metric}.csv"
            with open(path, "w", encoding="utf-8") as fout:
                for a in series:
                    fout.write(f"{a['iteration']},{_fmt(a[f'mean_{metric}'])}\n")
            written[f"curve_{regime}_{metric}"] = str(path)
    return written


def read_records(path: str) -> list[dict]:
    """Load serialized records back from a records.jsonl file."""
    rows = []
    with open(path, "r", encoding="utf-8") as fin:
        for line in fin:
            line = line.strip()
            if line:
                rows.append(json.loads(line))
    return rows
