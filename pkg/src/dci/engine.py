"""Divide-and-Conquer Inference: partition, query each group, prune, recurse."""

from __future__ import annotations

import json
import logging
import time
from collections.abc import Sequence
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field

from .analysis import ceil_log
from .backends import Backend, BackendError, BackendResult, ImageRef, Query, image_key
from .label_space import Grouping, LabelSet, Partition, check_group_size
from .prompting import (
    DEFAULT_TEMPLATE,
    InferenceOutcome,
    Invalid,
    Match,
    ParsePolicy,
    PromptTemplate,
    build_prompt,
    outcome_from_dict,
    outcome_to_dict,
    parse_response,
)

logger = logging.getLogger(__name__)

TRACE_SCHEMA_VERSION = 1


class ClassificationAborted(RuntimeError):
    """A backend failed for good; ``trace`` holds the iterations completed so far."""

    def __init__(self, message: str, trace: RunTrace):
        super().__init__(message)
        self.trace = trace


class DepthExceeded(RuntimeError):
    pass


@dataclass(frozen=True)
class EngineConfig:
    k: int = 10
    grouping: Grouping = field(default_factory=Grouping)
    parallelism: int = 1
    parse_policy: ParsePolicy = field(default_factory=ParsePolicy)
    max_depth_override: int | None = None
    template: PromptTemplate = DEFAULT_TEMPLATE

    def __post_init__(self) -> None:
        check_group_size(self.k)
        if self.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if self.max_depth_override is not None and self.max_depth_override < 1:
            raise ValueError("max_depth_override must be >= 1")


@dataclass(frozen=True)
class GroupResult:
    outcome: InferenceOutcome
    raw_text: str
    calls: int
    latency_s: float


@dataclass
class IterationRecord:
    t: int
    input_set: LabelSet
    partition: Partition
    outcomes: list[InferenceOutcome]
    raw_responses: list[str]
    survivors: LabelSet
    calls_made: int
    wall_time_s: float
    simulated_time_s: float

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = {
            "t": self.t,
            "input_set": list(self.input_set),
            "groups": [list(g) for g in self.partition.groups],
            "outcomes": [outcome_to_dict(o) for o in self.outcomes],
            "raw_responses": list(self.raw_responses),
            "survivors": list(self.survivors),
            "calls_made": self.calls_made,
            "simulated_time_s": self.simulated_time_s,
        }
        if wall_clock:
            d["wall_time_s"] = self.wall_time_s
        return d

    @classmethod
    def from_dict(cls, d: dict) -> IterationRecord:
        input_set = LabelSet(tuple(d["input_set"]))
        groups = tuple(LabelSet(tuple(g)) for g in d["groups"])
        return cls(
            t=d["t"],
            input_set=input_set,
            partition=Partition(groups, len(input_set)),
            outcomes=[outcome_from_dict(o) for o in d["outcomes"]],
            raw_responses=list(d["raw_responses"]),
            survivors=LabelSet(tuple(d["survivors"])),
            calls_made=d["calls_made"],
            wall_time_s=d.get("wall_time_s", 0.0),
            simulated_time_s=d["simulated_time_s"],
        )


@dataclass
class RunTrace:
    iterations: list[IterationRecord] = field(default_factory=list)
    prediction: str | None = None  # None means a negative (None) prediction
    method: str = "dci"
    image: str = ""
    k: int | None = None
    grouping: str = ""

    @property
    def total_calls(self) -> int:
        return sum(it.calls_made for it in self.iterations)

    @property
    def total_wall_s(self) -> float:
        return sum(it.wall_time_s for it in self.iterations)

    @property
    def total_sim_s(self) -> float:
        return sum(it.simulated_time_s for it in self.iterations)

    @property
    def depth(self) -> int:
        return len(self.iterations)

    def to_dict(self, wall_clock: bool = True) -> dict:
        d = {
            "schema_version": TRACE_SCHEMA_VERSION,
            "method": self.method,
            "image": self.image,
            "k": self.k,
            "grouping": self.grouping,
            "final": (
                {"kind": "predicted", "label": self.prediction}
                if self.prediction is not None
                else {"kind": "none"}
            ),
            "total_calls": self.total_calls,
            "total_sim_s": self.total_sim_s,
            "iterations": [it.to_dict(wall_clock) for it in self.iterations],
        }
        if wall_clock:
            d["total_wall_s"] = self.total_wall_s
        return d

    def to_json(self, wall_clock: bool = True, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(wall_clock), indent=indent, ensure_ascii=False,
                          sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunTrace:
        version = d.get("schema_version")
        if version != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema version {version!r}")
        final = d["final"]
        return cls(
            iterations=[IterationRecord.from_dict(x) for x in d["iterations"]],
            prediction=final["label"] if final["kind"] == "predicted" else None,
            method=d["method"],
            image=d["image"],
            k=d["k"],
            grouping=d["grouping"],
        )


def simulated_wave_time(latencies: Sequence[float], parallelism: int) -> float:
    """Sum over waves of ``parallelism`` queries (in index order) of the slowest one."""
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    return sum(
        max(latencies[i : i + parallelism])
        for i in range(0, len(latencies), parallelism)
    )


def _query_group(q: Query, backend: Backend, policy: ParsePolicy) -> GroupResult:
    calls = 0
    latency = 0.0
    result: BackendResult | None = None
    outcome: InferenceOutcome = Invalid("")
    for _ in range(policy.max_retries + 1):
        result = backend.infer(q)
        calls += result.attempts
        latency += result.latency_s
        outcome = parse_response(result.raw_text, q.group, policy)
        if not isinstance(outcome, Invalid):
            break
        logger.debug("invalid answer %r for group %d", result.raw_text, q.group_index)
    assert result is not None
    return GroupResult(outcome, result.raw_text, calls, latency)


def run_parallel_conquer(queries: Sequence[Query], parallelism: int, backend: Backend,
                         policy: ParsePolicy | None = None) -> list[GroupResult]:
    """Run all group queries with at most ``parallelism`` in flight.

    Results come back in query order. On a backend failure, queued queries
    are cancelled, in-flight ones are allowed to finish, and the error of the
    lowest-indexed failed query is raised.
    """
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    policy = policy or ParsePolicy()
    if parallelism == 1 or len(queries) <= 1:
        return [_query_group(q, backend, policy) for q in queries]

    with ThreadPoolExecutor(max_workers=min(parallelism, len(queries))) as pool:
        futures = [pool.submit(_query_group, q, backend, policy) for q in queries]
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        if pending:
            for f in pending:
                f.cancel()
            wait(pending)
    errors = [f.exception() for f in futures if not f.cancelled() and f.exception()]
    if errors:
        raise errors[0]
    return [f.result() for f in futures]


def _conquer(image: ImageRef, t: int, partition: Partition, cfg: EngineConfig,
             backend: Backend) -> tuple[list[GroupResult], float, float]:
    queries = [
        Query(image, build_prompt(cfg.template, group), group, t, i)
        for i, group in enumerate(partition.groups, start=1)
    ]
    start = time.perf_counter()
    results = run_parallel_conquer(queries, cfg.parallelism, backend, cfg.parse_policy)
    wall = time.perf_counter() - start
    sim = simulated_wave_time([r.latency_s for r in results], cfg.parallelism)
    return results, wall, sim


def _record(t: int, current: LabelSet, partition: Partition,
            results: list[GroupResult], wall: float, sim: float) -> IterationRecord:
    survivors: list[str] = []
    for r in results:
        if isinstance(r.outcome, Match) and r.outcome.label not in survivors:
            survivors.append(r.outcome.label)
    return IterationRecord(
        t=t,
        input_set=current,
        partition=partition,
        outcomes=[r.outcome for r in results],
        raw_responses=[r.raw_text for r in results],
        survivors=LabelSet._trusted(tuple(survivors)),
        calls_made=sum(r.calls for r in results),
        wall_time_s=wall,
        simulated_time_s=sim,
    )


def dci_classify(image: ImageRef, labels: LabelSet, cfg: EngineConfig,
                 backend: Backend) -> RunTrace:
    if len(labels) == 0:
        raise ValueError("labels must be non-empty")
    k = cfg.k
    trace = RunTrace(method="dci", image=image_key(image), k=k,
                     grouping=cfg.grouping.describe())
    current = labels
    t = 1
    while True:
        if cfg.max_depth_override is not None and t > cfg.max_depth_override:
            raise DepthExceeded(
                f"exceeded max depth {cfg.max_depth_override} with {len(current)} left"
            )
        base = len(current) <= k
        if base:
            partition = Partition((current,), len(current))
        else:
            partition = cfg.grouping.apply(current, k)
        try:
            results, wall, sim = _conquer(image, t, partition, cfg, backend)
        except BackendError as exc:
            raise ClassificationAborted(f"iteration {t}: {exc}", trace) from exc
        record = _record(t, current, partition, results, wall, sim)
        trace.iterations.append(record)

        survivors = record.survivors
        if base or len(survivors) <= 1:
            trace.prediction = survivors[0] if len(survivors) == 1 else None
            return trace
        current = survivors
        t += 1


def flat_classify(image: ImageRef, labels: LabelSet, backend: Backend,
                  policy: ParsePolicy | None = None,
                  template: PromptTemplate = DEFAULT_TEMPLATE) -> RunTrace:
    """Baseline: a single query over the full candidate list."""
    if len(labels) == 0:
        raise ValueError("labels must be non-empty")
    cfg_policy = policy or ParsePolicy()
    trace = RunTrace(method="flat", image=image_key(image), k=len(labels),
                     grouping="flat")
    partition = Partition((labels,), len(labels))
    q = Query(image, build_prompt(template, labels), labels, 1, 1)
    start = time.perf_counter()
    try:
        result = _query_group(q, backend, cfg_policy)
    except BackendError as exc:
        raise ClassificationAborted(f"flat query: {exc}", trace) from exc
    wall = time.perf_counter() - start
    record = _record(1, labels, partition, [result], wall, result.latency_s)
    trace.iterations.append(record)
    trace.prediction = record.survivors[0] if len(record.survivors) == 1 else None
    return trace


def max_iterations(n: int, k: int) -> int:
    """Upper bound on conquer rounds for ``n`` labels: max(1, ceil(log_k n))."""
    return max(1, ceil_log(n, check_group_size(k)))

