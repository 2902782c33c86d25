"""Evaluation protocols, retention metrics and multi-policy comparisons.

Two protocols are supported. The streaming protocol feeds one policy every
frame from the start of the stream (resampled to ``fps``) and snapshots its
readout at each query time. The sliding-window protocol builds a fresh policy
per query and feeds it only the last ``window_s`` seconds before the query.

Alongside each policy the harness maintains a :class:`CacheState`: sync events
erase the invalidated suffix, and after every ingest the part of the readout
not yet in the cache is appended. If the cache ever disagrees with the readout
beyond what the sync events erased, the divergent suffix is dropped and counted
as a forced resync; the pyramid bank never needs one.
"""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .core import PMBError
from .kvcache import CacheState, consistency_check
from .stream import SceneAnnotation, Stream

PROTOCOLS = ("streaming", "sliding")
RECALL_NOTE = "scene_recall: fraction of begun scenes with >=1 retained frame (harness-defined retention proxy)"


class QueryOutOfRange(PMBError):
    pass


# -- metrics ------------------------------------------------------------------


def scene_recall(readout, scenes: list[SceneAnnotation], up_to_tick: int) -> float:
    """Fraction of scenes begun before ``up_to_tick`` holding at least one readout frame."""
    begun = [s for s in scenes if s.start_tick < up_to_tick]
    if not begun or not readout:
        return 0.0
    ticks = np.fromiter((f.tick for f in readout), dtype=np.int64, count=len(readout))
    hit = sum(bool(np.any((ticks >= s.start_tick) & (ticks < s.end_tick))) for s in begun)
    return hit / len(begun)


def temporal_coverage(readout, first_offered: int | None, last_offered: int | None) -> float:
    """Span of retained timestamps relative to the span of offered timestamps."""
    if not readout or first_offered is None:
        return 0.0
    offered_span = last_offered - first_offered
    if offered_span == 0:
        return 1.0
    return (readout[-1].tick - readout[0].tick) / offered_span


# -- resampling ---------------------------------------------------------------


def sample_ticks(base_fps: int, fps: int, start: Fraction, end: Fraction) -> list[int]:
    """Base ticks nearest to the ``fps`` sampling instants k/fps in [start, end).

    Halfway cases resolve to the earlier tick; repeated ticks are kept once.
    """
    first = math.ceil(start * fps)
    stop = math.ceil(end * fps)
    out = []
    for k in range(first, stop):
        exact = Fraction(k * base_fps, fps)
        tick = math.ceil(exact - Fraction(1, 2))
        if not out or tick != out[-1]:
            out.append(tick)
    return out


def _indices_for(stream: Stream, ticks) -> list[int]:
    pos = np.searchsorted(stream.ticks, np.asarray(ticks, dtype=np.uint64))
    return [int(p) for p, t in zip(pos, ticks) if p < len(stream) and int(stream.ticks[p]) == t]


def _check_queries(stream: Stream, query_ticks):
    query_ticks = [int(q) for q in query_ticks]
    if any(b < a for a, b in zip(query_ticks, query_ticks[1:])):
        raise QueryOutOfRange("query ticks must be sorted ascending")
    for q in query_ticks:
        if q < 0 or q > stream.end_tick:
            raise QueryOutOfRange(f"query tick {q} outside stream range [0, {stream.end_tick}]")
    return query_ticks


# -- reports ------------------------------------------------------------------


@dataclass
class QueryRecord:
    query_tick: int
    frames_offered: int
    frames_in_readout: int
    token_count: int
    scene_recall: float
    temporal_coverage: float


@dataclass
class RunReport:
    policy: str
    protocol: str
    budget: int | None
    simulator_only: bool
    records: list[QueryRecord] = field(default_factory=list)
    peak_tokens: int = 0
    tokens_appended: int = 0
    tokens_erased: int = 0
    full_reprocess_tokens: int = 0
    forced_resyncs: int = 0
    sync_events: int = 0
    wall_time_s: float = 0.0
    config_digest: str | None = None

    @property
    def mean_recall(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.scene_recall for r in self.records) / len(self.records)

    @property
    def recompute_savings(self) -> float | None:
        if self.tokens_appended == 0 or self.full_reprocess_tokens == 0:
            return None
        return 1.0 - self.tokens_appended / self.full_reprocess_tokens

    def aggregates(self) -> dict:
        """Deterministic summary values (wall time excluded)."""
        return {
            "policy": self.policy,
            "protocol": self.protocol,
            "budget": self.budget,
            "simulator_only": self.simulator_only,
            "queries": len(self.records),
            "mean_recall": self.mean_recall,
            "peak_tokens": self.peak_tokens,
            "tokens_appended": self.tokens_appended,
            "tokens_erased": self.tokens_erased,
            "recompute_savings": self.recompute_savings,
            "forced_resyncs": self.forced_resyncs,
            "sync_events": self.sync_events,
        }

    def to_jsonl(self, header: dict | None = None) -> str:
        lines = [{"kind": "header", "policy": self.policy, "protocol": self.protocol,
                  "config_digest": self.config_digest, "note": RECALL_NOTE, **(header or {})}]
        lines += [{"kind": "query", **asdict(r)} for r in self.records]
        lines.append({"kind": "aggregate", **self.aggregates()})
        return "".join(json.dumps(line, sort_keys=True) + "\n" for line in lines)


class _Session:
    """One policy plus the cache kept consistent with it."""

    def __init__(self, policy, report: RunReport):
        self.policy = policy
        self.cache = CacheState()
        self.report = report
        self.offered = 0
        self.first_tick = None
        self.last_tick = None

    def offer(self, ts, grid):
        events = self.policy.ingest(ts, grid)
        self.offered += 1
        if self.first_tick is None:
            self.first_tick = ts.tick
        self.last_tick = ts.tick
        for event in events:
            self.cache.sync_on_eviction(event)
        readout = self.policy.readout()
        check = consistency_check(self.cache, readout)
        if not check:
            self.cache.erase_from(check.ts.tick)
            self.report.forced_resyncs += 1
        self.cache.append_frames(readout[len(self.cache):])
        tokens = sum(f.tokens for f in readout)
        self.cache.record_full_reprocess(tokens)
        self.report.sync_events += len(events)
        self.report.peak_tokens = max(self.report.peak_tokens, self.policy.token_count())

    def record(self, query_tick: int, scenes) -> QueryRecord:
        readout = self.policy.readout()
        up_to = -1 if self.last_tick is None else self.last_tick
        return QueryRecord(
            query_tick=query_tick,
            frames_offered=self.offered,
            frames_in_readout=len(readout),
            token_count=self.policy.token_count(),
            # recall counts scenes begun up to the last frame actually shown to the policy
            scene_recall=scene_recall(readout, scenes, up_to + 1),
            temporal_coverage=temporal_coverage(readout, self.first_tick, self.last_tick),
        )

    def close(self):
        self.report.tokens_appended += self.cache.tokens_appended_total
        self.report.tokens_erased += self.cache.tokens_erased_total
        self.report.full_reprocess_tokens += self.cache.full_reprocess_tokens


def _new_report(policy, protocol) -> RunReport:
    return RunReport(policy.name, protocol, policy.budget(), policy.simulator_only)


def run_streaming_protocol(stream: Stream, policy, query_ticks, fps: int = 2) -> RunReport:
    """Feed every ``fps`` sample from stream start; snapshot the policy at each query."""
    query_ticks = _check_queries(stream, query_ticks)
    started = time.perf_counter()
    report = _new_report(policy, "streaming")
    session = _Session(policy, report)
    end = Fraction(query_ticks[-1], stream.base_fps) if query_ticks else Fraction(0)
    order = _indices_for(stream, sample_ticks(stream.base_fps, fps, Fraction(0), end))
    nxt = 0
    for q in query_ticks:
        while nxt < len(order) and stream.ticks[order[nxt]] < q:
            i = order[nxt]
            session.offer(stream.timestamp(i), stream.grids[i])
            nxt += 1
        report.records.append(session.record(q, stream.scenes))
    session.close()
    report.wall_time_s = time.perf_counter() - started
    return report


def run_sliding_window_protocol(stream: Stream, policy_factory, query_ticks, window_s: int = 32,
                                fps: int = 2) -> RunReport:
    """Fresh policy per query, fed only the ``window_s`` seconds before the query."""
    query_ticks = _check_queries(stream, query_ticks)
    started = time.perf_counter()
    report = None
    for q in query_ticks:
        policy = policy_factory()
        if report is None:
            report = _new_report(policy, "sliding")
        session = _Session(policy, report)
        end = Fraction(q, stream.base_fps)
        start = max(Fraction(0), end - window_s)
        for i in _indices_for(stream, sample_ticks(stream.base_fps, fps, start, end)):
            if stream.ticks[i] < q:
                session.offer(stream.timestamp(i), stream.grids[i])
        report.records.append(session.record(q, stream.scenes))
        session.close()
    if report is None:
        report = _new_report(policy_factory(), "sliding")
    report.wall_time_s = time.perf_counter() - started
    return report


def query_ticks_every(stream: Stream, every_s: Fraction | float, include_end: bool = True) -> list[int]:
    """Query ticks at multiples of ``every_s`` seconds, excluding tick 0."""
    step = Fraction(every_s).limit_denominator(10**6) * stream.base_fps
    if step <= 0:
        raise ValueError("query interval must be positive")
    ticks, k = [], 1
    while k * step <= stream.end_tick:
        ticks.append(math.floor(k * step))
        k += 1
    if include_end and (not ticks or ticks[-1] != stream.end_tick) and stream.end_tick > 0:
        ticks.append(stream.end_tick)
    return ticks


def run_protocol(stream, policy_factory, protocol, query_ticks, window_s=32, fps=2) -> RunReport:
    if protocol == "streaming":
        return run_streaming_protocol(stream, policy_factory(), query_ticks, fps=fps)
    if protocol == "sliding":
        return run_sliding_window_protocol(stream, policy_factory, query_ticks, window_s=window_s, fps=fps)
    raise ValueError(f"unknown protocol {protocol!r}; choose from {', '.join(PROTOCOLS)}")


# -- comparisons --------------------------------------------------------------


@dataclass
class Comparison:
    reports: dict[str, RunReport]
    errors: dict[str, str]
    ranking: list[str]

    def summary_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        cols = ["budget", "simulator_only", "queries", "mean_recall", "peak_tokens", "tokens_appended",
                "tokens_erased", "recompute_savings", "forced_resyncs", "sync_events"]
        writer.writerow(["rank", "policy", *cols, "error"])
        for rank, name in enumerate(self.ranking, start=1):
            agg = self.reports[name].aggregates()
            writer.writerow([rank, name, *(_csv_value(agg[c]) for c in cols), ""])
        for name in sorted(self.errors):
            writer.writerow(["", name, *([""] * len(cols)), self.errors[name]])
        return buf.getvalue()


def _csv_value(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


def compare_policies(stream: Stream, policies: dict, protocol: str, query_ticks, jobs: int = 1,
                     window_s: int = 32, fps: int = 2) -> Comparison:
    """Run each named policy factory independently and rank them by mean scene recall.

    A failing policy is recorded in ``errors`` without affecting the others.
    """
    if len(policies) < 2:
        raise ValueError("compare_policies needs at least two policies")

    def run(name):
        try:
            return name, run_protocol(stream, policies[name], protocol, query_ticks, window_s, fps), None
        except PMBError as exc:
            return name, None, f"{type(exc).__name__}: {exc}"

    names = list(policies)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, names))
    else:
        results = [run(name) for name in names]

    reports = {name: rep for name, rep, err in results if rep is not None}
    errors = {name: err for name, rep, err in results if err is not None}
    ranking = sorted(reports, key=lambda n: (-reports[n].mean_recall, n))
    return Comparison(reports, errors, ranking)
