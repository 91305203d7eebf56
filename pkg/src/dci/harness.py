"""Dataset ingestion, experiment drivers and report emission.

Experiments run over *instances* (image handle, candidate labels, true
label). Desk-scale runs synthesize instances for the dilution oracle, which
keys on the true label rather than on pixels; live runs read a JSON-lines
dataset and use the HTTP backend unchanged.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from collections.abc import Callable, Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import best_case_calls, worst_case_calls
from .backends import Backend, DilutionOracle, HttpBackend
from .config import SECTIONS, AppConfig, ConfigError, read_document
from .engine import EngineConfig, RunTrace, dci_classify, flat_classify
from .label_space import (
    Grouping,
    LabelSet,
    SimilarityMatrix,
    SimilarityMismatch,
    check_group_size,
)

logger = logging.getLogger(__name__)


class DatasetError(ValueError):
    pass


# -- ingestion -------------------------------------------------------------


def load_labels(path: str | Path) -> LabelSet:
    """Newline-separated labels; blank lines skipped, duplicates dropped with a warning."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"label file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    labels = LabelSet.from_strings(lines)
    if len(labels) < sum(1 for line in lines if line.strip()):
        logger.warning("%s: duplicate labels dropped", path)
    return labels


@dataclass(frozen=True)
class DatasetRecord:
    image_ref: str
    label: str

    def __post_init__(self) -> None:
        if not self.label.strip():
            raise ValueError("record label must be non-empty")


def load_dataset(path: str | Path, labels: LabelSet | None = None,
                 on_unknown: str = "abort") -> list[DatasetRecord]:
    """JSON-lines records ``{"image": ..., "label": ...}``.

    With ``labels`` given, records whose label is not a candidate either
    abort the load or are skipped, per ``on_unknown``.
    """
    if on_unknown not in ("abort", "skip"):
        raise ValueError("on_unknown must be 'abort' or 'skip'")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    records: list[DatasetRecord] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path}:{lineno}: expected an object")
            missing = [key for key in ("image", "label") if key not in obj]
            if missing:
                raise DatasetError(f"{path}:{lineno}: missing field(s) {missing}")
            label = str(obj["label"]).strip()
            if not label:
                raise DatasetError(f"{path}:{lineno}: empty label")
            if labels is not None and label not in labels:
                if on_unknown == "abort":
                    raise DatasetError(f"{path}:{lineno}: label {label!r} not in label set")
                logger.warning("%s:%d: skipping unknown label %r", path, lineno, label)
                continue
            records.append(DatasetRecord(str(obj["image"]), label))
    return records


def load_similarity_matrix(path: str | Path) -> SimilarityMatrix:
    """CSV with a header row of labels followed by the dense square matrix."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        rows = [row for row in csv.reader(fh) if row]
    if not rows:
        raise SimilarityMismatch(f"{path}: empty similarity file")
    labels = LabelSet(tuple(rows[0]))
    body = rows[1:]
    if len(body) != len(labels) or any(len(r) != len(labels) for r in body):
        raise SimilarityMismatch(
            f"{path}: expected a {len(labels)}x{len(labels)} matrix, got "
            f"{len(body)} rows of widths {sorted({len(r) for r in body})}"
        )
    try:
        scores = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise SimilarityMismatch(f"{path}: non-numeric entry ({exc})") from exc
    return SimilarityMatrix(labels, scores)


def write_similarity_matrix(sim: SimilarityMatrix, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(sim.labels))
        for row in sim.scores:
            writer.writerow([repr(float(x)) for x in row])


# -- experiment spec -------------------------------------------------------

EXPERIMENT_KINDS = ("pclsr", "k_ablation", "grouping", "dataset")


@dataclass
class ExperimentSpec:
    kind: str = "pclsr"
    label_space_sizes: list[int] = field(default_factory=lambda: [10, 100, 1000])
    k_values: list[int] = field(default_factory=lambda: [10])
    trials: int = 1000
    seed: int = 0
    labels_file: str | None = None
    similarity_file: str | None = None
    dataset_file: str | None = None
    on_unknown_label: str = "abort"
    strategies: list[str] = field(
        default_factory=lambda: ["random", "most_similar", "least_similar"]
    )
    workers: int = 1
    config: AppConfig = field(default_factory=AppConfig)

    def __post_init__(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"kind must be one of {EXPERIMENT_KINDS}")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        for k in self.k_values:
            check_group_size(k)
        if any(n < 1 for n in self.label_space_sizes):
            raise ConfigError("label space sizes must be >= 1")

    @classmethod
    def from_mapping(cls, data: dict[str, Any]) -> ExperimentSpec:
        data = dict(data)
        config = AppConfig.from_mapping({s: data.pop(s) for s in SECTIONS if s in data})
        known = {f.name for f in fields(cls)} - {"config"}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown experiment keys: {unknown}")
        return cls(config=config, **data)

    @classmethod
    def from_file(cls, path: str | Path) -> ExperimentSpec:
        return cls.from_mapping(read_document(path))

    def to_mapping(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "config"}
        d.update(self.config.to_mapping())
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_mapping(), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# -- reports ---------------------------------------------------------------

CSV_COLUMNS = (
    "n", "k", "method", "grouping", "accuracy_pct", "mean_calls",
    "mean_sim_latency_s", "mean_wall_s", "config_hash",
)


@dataclass
class EvalRow:
    n: int
    k: int
    method: str
    grouping: str
    accuracy: float
    mean_calls: float
    mean_sim_latency_s: float
    mean_wall_s: float
    trials: int = 0
    correct: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must be a fraction in [0, 1]")


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def row(self, method: str, n: int | None = None, k: int | None = None,
            grouping: str | None = None) -> EvalRow:
        hits = [r for r in self.rows
                if r.method == method and (n is None or r.n == n)
                and (k is None or r.k == k) and (grouping is None or r.grouping == grouping)]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {method=} {n=} {k=} {grouping=}")
        return hits[0]

    def deterministic_view(self) -> list[dict]:
        """Rows without wall-clock fields."""
        return [{k: v for k, v in asdict(r).items() if k != "mean_wall_s"} for r in self.rows]


def emit_report(r: EvalReport, fmt: str, path: str | Path) -> None:
    path = Path(path)
    if fmt == "json":
        doc = {"metadata": r.metadata, "rows": [asdict(row) for row in r.rows]}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
        return
    if fmt != "csv":
        raise ValueError("format must be 'csv' or 'json'")
    config_hash = r.metadata.get("config_hash", "")
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in r.rows:
            writer.writerow([
                row.n, row.k, row.method, row.grouping,
                f"{100 * row.accuracy:.4f}", f"{row.mean_calls:.4f}",
                f"{row.mean_sim_latency_s:.4f}", f"{row.mean_wall_s:.4f}", config_hash,
            ])


def load_report(path: str | Path) -> EvalReport:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return EvalReport([EvalRow(**row) for row in doc["rows"]], doc["metadata"])


# -- drivers ---------------------------------------------------------------


@dataclass(frozen=True)
class Instance:
    image_ref: str
    labels: LabelSet
    truth: str


@dataclass(frozen=True)
class Method:
    """One report row's worth of configuration."""

    method: str  # "flat" or "dci"
    k: int | None = None
    grouping: str = "sequential"


@dataclass
class _Tally:
    correct: int = 0
    calls: int = 0
    sim: float = 0.0
    wall: float = 0.0
    count: int = 0

    def add(self, trace: RunTrace, truth: str) -> None:
        self.correct += int(trace.prediction == truth)
        self.calls += trace.total_calls
        self.sim += trace.total_sim_s
        self.wall += trace.total_wall_s
        self.count += 1


def _trial_seed(*parts: object) -> int:
    return random.Random(":".join(str(p) for p in parts)).getrandbits(32)


def label_pool(spec: ExperimentSpec, sim: SimilarityMatrix | None = None) -> LabelSet:
    if spec.labels_file:
        pool = load_labels(spec.labels_file)
    elif sim is not None:
        pool = sim.labels
    else:
        size = max(spec.label_space_sizes, default=0)
        pool = LabelSet(tuple(f"class_{i:05d}" for i in range(size)))
    if sim is not None and set(pool) != set(sim.labels):
        raise SimilarityMismatch(
            f"similarity matrix covers {len(sim.labels)} labels, pool has {len(pool)}"
        )
    need = max(spec.label_space_sizes, default=0)
    if need > len(pool):
        raise ConfigError(f"label pool has {len(pool)} labels, sweep needs {need}")
    return pool


def synthetic_instances(pool: LabelSet, n: int, trials: int, seed: int) -> Iterator[Instance]:
    """Closed-set instances: a random n-subset of the pool, truth uniform within it."""
    items = list(pool)
    for trial in range(trials):
        rng = random.Random(f"{seed}:{n}:{trial}")
        subset = rng.sample(items, n)
        yield Instance(f"synthetic:{seed}:{n}:{trial}", LabelSet(tuple(subset)), rng.choice(subset))


def _make_backend_factory(cfg: AppConfig) -> tuple[Callable[[str], Backend], Callable[[], None]]:
    if cfg.backend.kind == "oracle":
        def factory(truth: str) -> Backend:
            return DilutionOracle(cfg.oracle_params(truth))
        return factory, lambda: None
    if cfg.backend.kind == "http":
        http = HttpBackend(cfg.http_config())
        return (lambda truth: http), http.close
    raise ConfigError(f"unknown backend kind {cfg.backend.kind!r}")


def _run_instance(inst: Instance, trial: int, methods: Sequence[Method],
                  backend: Backend, cfg: AppConfig, seed: int,
                  sim: SimilarityMatrix | None) -> list[RunTrace]:
    policy = cfg.parse_policy()
    template = cfg.template()
    traces = []
    for m in methods:
        if m.method == "flat":
            traces.append(flat_classify(inst.image_ref, inst.labels, backend, policy, template))
            continue
        assert m.k is not None
        grouping = Grouping(m.grouping, _trial_seed(seed, "group", trial),
                            sim if m.grouping.endswith("_similar") else None)
        ecfg = EngineConfig(
            k=m.k, grouping=grouping, parallelism=cfg.engine.parallelism,
            parse_policy=policy, max_depth_override=cfg.engine.max_depth, template=template,
        )
        traces.append(dci_classify(inst.image_ref, inst.labels, ecfg, backend))
    return traces


def evaluate_instances(instances: Sequence[Instance], methods: Sequence[Method],
                       cfg: AppConfig, *, backend_for: Callable[[str], Backend],
                       seed: int = 0, sim: SimilarityMatrix | None = None,
                       workers: int = 1, n: int | None = None) -> list[EvalRow]:
    """Run every method on every instance and aggregate one row per method."""
    def work(args: tuple[int, Instance]) -> list[RunTrace]:
        trial, inst = args
        return _run_instance(inst, trial, methods, backend_for(inst.truth), cfg, seed, sim)

    tallies = [_Tally() for _ in methods]
    jobs = list(enumerate(instances))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    for (_, inst), traces in zip(jobs, results):
        for tally, trace in zip(tallies, traces):
            tally.add(trace, inst.truth)

    rows = []
    size = n if n is not None else (len(instances[0].labels) if instances else 0)
    for m, tally in zip(methods, tallies):
        count = max(tally.count, 1)
        rows.append(EvalRow(
            n=size,
            k=m.k if m.k is not None else size,
            method=m.method,
            grouping="flat" if m.method == "flat" else m.grouping,
            accuracy=tally.correct / count,
            mean_calls=tally.calls / count,
            mean_sim_latency_s=tally.sim / count,
            mean_wall_s=tally.wall / count,
            trials=tally.count,
            correct=tally.correct,
        ))
    return rows


def _metadata(spec: ExperimentSpec, **extra: Any) -> dict[str, Any]:
    return {
        "kind": spec.kind,
        "config_hash": spec.config_hash(),
        "seeds": {"experiment": spec.seed, "oracle": spec.config.oracle.seed},
        "trials": spec.trials,
        "backend": spec.config.backend.kind,
        **extra,
    }


def _sweep(spec: ExperimentSpec, methods_for: Callable[[int], list[Method]],
           sim: SimilarityMatrix | None = None) -> EvalReport:
    pool = label_pool(spec, sim)
    factory, close = _make_backend_factory(spec.config)
    report = EvalReport(metadata=_metadata(spec))
    try:
        for n in spec.label_space_sizes:
            instances = list(synthetic_instances(pool, n, spec.trials, spec.seed))
            report.rows.extend(evaluate_instances(
                instances, methods_for(n), spec.config, backend_for=factory,
                seed=spec.seed, sim=sim, workers=spec.workers, n=n,
            ))
            logger.info("finished n=%d", n)
    finally:
        close()
    return report


def run_pclsr_sweep(spec: ExperimentSpec) -> EvalReport:
    """Flat vs DCI accuracy as the candidate count grows."""
    grouping = spec.config.grouping.strategy
    return _sweep(spec, lambda n: [Method("flat")] + [
        Method("dci", k, grouping) for k in spec.k_values
    ])


def run_k_ablation(spec: ExperimentSpec) -> EvalReport:
    """Fixed candidate count, one DCI row per group size, plus the flat baseline."""
    return run_pclsr_sweep(spec)


def run_grouping_ablation(spec: ExperimentSpec,
                          sim_matrix_path: str | Path | None = None) -> EvalReport:
    path = sim_matrix_path or spec.similarity_file
    needs_sim = any(s.endswith("_similar") for s in spec.strategies)
    if needs_sim and not path:
        raise ConfigError("similarity strategies need a similarity matrix file")
    sim = load_similarity_matrix(path) if path else None
    # validated against the pool before any inference runs
    return _sweep(spec, lambda n: [
        Method("dci", k, s) for k in spec.k_values for s in spec.strategies
    ], sim)


def run_dataset_eval(spec: ExperimentSpec) -> EvalReport:
    """Evaluate flat and DCI over a JSON-lines dataset with a fixed label file."""
    if not spec.dataset_file or not spec.labels_file:
        raise ConfigError("dataset experiments need dataset_file and labels_file")
    labels = load_labels(spec.labels_file)
    records = load_dataset(spec.dataset_file, labels, spec.on_unknown_label)
    if spec.trials < len(records):
        records = records[: spec.trials]
    instances = [Instance(r.image_ref, labels, r.label) for r in records]
    sim = load_similarity_matrix(spec.similarity_file) if spec.similarity_file else None
    methods = [Method("flat")] + [
        Method("dci", k, spec.config.grouping.strategy) for k in spec.k_values
    ]
    factory, close = _make_backend_factory(spec.config)
    try:
        rows = evaluate_instances(instances, methods, spec.config, backend_for=factory,
                                  seed=spec.seed, sim=sim, workers=spec.workers,
                                  n=len(labels))
    finally:
        close()
    return EvalReport(rows, _metadata(spec, dataset=spec.dataset_file))


def run_experiment(spec: ExperimentSpec) -> EvalReport:
    if spec.kind == "pclsr":
        return run_pclsr_sweep(spec)
    if spec.kind == "k_ablation":
        return run_k_ablation(spec)
    if spec.kind == "grouping":
        return run_grouping_ablation(spec)
    return run_dataset_eval(spec)


def check_call_bounds(report: EvalReport) -> list[str]:
    """Rows whose mean call count falls outside [best, worst]; empty when all hold."""
    problems = []
    for r in report.rows:
        if r.method == "flat" or r.k >= r.n:
            lo = hi = 1.0
        else:
            lo, hi = best_case_calls(r.n, r.k), worst_case_calls(r.n, r.k)
        if not lo - 1e-9 <= r.mean_calls <= hi + 1e-9:
            problems.append(f"n={r.n} k={r.k} {r.method}: {r.mean_calls} not in [{lo}, {hi}]")
    return problems
