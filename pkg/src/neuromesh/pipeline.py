"""Three-stage concurrent pipeline: encode, message-pass/aggregate, decode.

Each stage runs on its own thread; stages hand items over through depth-1
slots. A producer admits a new item just in time for its consumer's next
pickup, predicted from the bottleneck period (the largest per-stage
processing-time estimate). In steady state the output period therefore
equals the slowest stage's duration while each item still flows through
the stages without queueing: end-to-end latency stays at the sum of the
stage durations.

Handoff slots never discard items, so parallel and sequential execution
produce identical output sequences for deterministic stages. The
keep-latest drop policy applies only at ingress, when a paced observation
source outruns the encoder; those drops are counted and reported.

A stage that raises poisons only its current item: the error is logged,
the item is skipped, and the pipeline keeps running.
"""

from __future__ import annotations

import logging
import threading
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)

_SENTINEL = object()
_COST_ALPHA = 0.4  # EWMA weight for new stage-cost samples

WARMUP_ITEMS = 2


def _sleep_until(target_ns: int) -> None:
    while True:
        remaining = target_ns - time.monotonic_ns()
        if remaining <= 0:
            return
        time.sleep(remaining / 1e9)


class _StageCosts:
    """Per-stage processing-time EWMAs shared by the three stage threads.

    The bottleneck period is the maximum of the per-stage costs. Using
    processing times rather than observed handoff cadences keeps the
    admission controller stable: idle gaps a bad schedule introduces can
    never feed back into the estimate.
    """

    def __init__(self, n_stages: int = 3):
        self._costs = [0.0] * n_stages

    def record(self, stage: int, cost_ns: int) -> None:
        prev = self._costs[stage]
        self._costs[stage] = cost_ns if not prev else prev + _COST_ALPHA * (cost_ns - prev)

    def cost(self, stage: int) -> float:
        return self._costs[stage]

    def period_ns(self) -> float:
        return max(self._costs)


class _Handoff:
    """Depth-1 blocking handoff between two stages."""

    def __init__(self):
        self._cv = threading.Condition()
        self._item = _SENTINEL
        self._full = False
        self._last_take_ns = 0
        self._taker_waiting = False

    def put(self, item) -> None:
        with self._cv:
            while self._full:
                self._cv.wait()
            self._item = item
            self._full = True
            self._cv.notify_all()

    def take(self):
        with self._cv:
            while not self._full:
                self._taker_waiting = True
                self._cv.wait()
            self._taker_waiting = False
            item = self._item
            self._item = _SENTINEL
            self._full = False
            self._last_take_ns = time.monotonic_ns()
            self._cv.notify_all()
            return item

    def next_start_ns(self, period_ns: float, own_cost_ns: float) -> int:
        """When the producer should start its next item to arrive just in time.

        The consumer picks items up every bottleneck period; starting one
        period ahead of that pickup minus our own processing time lands the
        item exactly when the consumer frees up, so items neither queue in
        the slot nor starve the consumer. Returns 0 (start now) while
        estimates are missing or the consumer is already starving.
        """
        with self._cv:
            if not period_ns or not self._last_take_ns:
                return 0
            if self._taker_waiting and not self._full:
                return 0  # consumer is starving right now
            pickups_ahead = 2 if self._full else 1
            return int(self._last_take_ns + pickups_ahead * period_ns - own_cost_ns)


@dataclass
class _Item:
    index: int
    ingress_ns: int
    value: object


class PacedSource:
    """Emits observations at a fixed rate into a keep-latest ingress slot.

    When the encoder cannot keep up, older pending observations are
    overwritten and counted as drops. Each observation's ingress timestamp
    is its generation time.
    """

    def __init__(self, observations, interval_ns: int):
        self.observations = list(observations)
        self.interval_ns = int(interval_ns)
        self.drops = 0
        self._cv = threading.Condition()
        self._pending = None
        self._done = False
        self._thread: threading.Thread | None = None

    def __len__(self):
        return len(self.observations)

    def start(self) -> None:
        self._thread = threading.Thread(target=self._run, name="paced-source", daemon=True)
        self._thread.start()

    def _run(self) -> None:
        next_ns = time.monotonic_ns()
        for index, obs in enumerate(self.observations):
            _sleep_until(next_ns)
            next_ns += self.interval_ns
            with self._cv:
                if self._pending is not None:
                    self.drops += 1
                self._pending = _Item(index, time.monotonic_ns(), obs)
                self._cv.notify_all()
        with self._cv:
            self._done = True
            self._cv.notify_all()

    def next_item(self):
        with self._cv:
            while self._pending is None and not self._done:
                self._cv.wait()
            if self._pending is None:
                return None
            item = self._pending
            self._pending = None
            return item

    def join(self) -> None:
        if self._thread is not None:
            self._thread.join()


class _ListSource:
    """Pull-driven source: the encoder draws items on demand, nothing drops."""

    def __init__(self, observations):
        self._iter = iter(observations)
        self._index = 0
        self.drops = 0

    def next_item(self):
        try:
            obs = next(self._iter)
        except StopIteration:
            return None
        item = _Item(self._index, time.monotonic_ns(), obs)
        self._index += 1
        return item


@dataclass
class PipelineStats:
    """Measured steady-state behavior of one pipeline run.

    Periods and latencies are in nanoseconds, computed over outputs after a
    two-item warm-up. ``items_processed`` counts all emitted outputs;
    ``drops`` counts observations discarded at ingress; ``errors`` counts
    items poisoned by a raising stage.
    """

    period_mean_ns: float
    period_std_ns: float
    latency_mean_ns: float
    latency_std_ns: float
    items_processed: int
    drops: int
    errors: int = 0

    CSV_COLUMNS = (
        "agent_id",
        "period_mean_ms",
        "period_std_ms",
        "latency_mean_ms",
        "latency_std_ms",
        "items",
        "drops",
    )

    def to_csv_row(self, agent_id) -> list:
        return [
            agent_id,
            f"{self.period_mean_ns / 1e6:.3f}",
            f"{self.period_std_ns / 1e6:.3f}",
            f"{self.latency_mean_ns / 1e6:.3f}",
            f"{self.latency_std_ns / 1e6:.3f}",
            self.items_processed,
            self.drops,
        ]


def _compute_stats(records, drops: int, errors: int) -> PipelineStats:
    # records: (index, ingress_ns, egress_ns) in emission order
    measured = records[WARMUP_ITEMS:]
    latencies = np.array([e - i for _, i, e in measured], dtype=np.float64)
    egress = np.array([e for _, _, e in measured], dtype=np.float64)
    periods = np.diff(egress)
    return PipelineStats(
        period_mean_ns=float(periods.mean()) if periods.size else 0.0,
        period_std_ns=float(periods.std()) if periods.size else 0.0,
        latency_mean_ns=float(latencies.mean()) if latencies.size else 0.0,
        latency_std_ns=float(latencies.std()) if latencies.size else 0.0,
        items_processed=len(records),
        drops=drops,
        errors=errors,
    )


def with_delay(fn, delay_s: float):
    """Wrap a stage with an injected processing delay (timing fixtures)."""

    def delayed(x):
        time.sleep(delay_s)
        return fn(x)

    return delayed


def identity_stage(x):
    return x


def _make_source(observations, cycles):
    if isinstance(observations, PacedSource):
        if cycles is not None and cycles != len(observations):
            raise ConfigError("cycles", "cycle count must match the paced source length")
        return observations, len(observations), True
    items = list(observations)
    if cycles is not None:
        items = items[:cycles]
    return _ListSource(items), len(items), False


def run_pipeline(encoder, aggregator, decoder, observations, cycles=None):
    """Run the three stages concurrently; returns (outputs, PipelineStats).

    ``observations`` is an iterable (pulled on demand, lossless) or a
    :class:`PacedSource` (pushed at a fixed rate, keep-latest at ingress).
    Outputs preserve observation order.
    """
    source, total, paced = _make_source(observations, cycles)
    if total < 3:
        raise ConfigError("cycles", f"need at least 3 items to fill the pipeline, got {total}")

    slot_a = _Handoff()
    slot_b = _Handoff()
    costs = _StageCosts()
    outputs: list = []
    records: list = []
    errors = [0]
    failures: list = []

    def encoder_loop():
        while True:
            start_at = slot_a.next_start_ns(costs.period_ns(), costs.cost(0))
            if start_at:
                _sleep_until(start_at)
            item = source.next_item()
            if item is None:
                slot_a.put(_SENTINEL)
                return
            t0 = time.monotonic_ns()
            if not paced:
                item.ingress_ns = t0
            try:
                value = encoder(item.value)
            except Exception:
                log.warning("encoder failed on item %d; skipping", item.index, exc_info=True)
                errors[0] += 1
                continue
            costs.record(0, time.monotonic_ns() - t0)
            slot_a.put(_Item(item.index, item.ingress_ns, value))

    def middle_loop():
        while True:
            start_at = slot_b.next_start_ns(costs.period_ns(), costs.cost(1))
            if start_at:
                _sleep_until(start_at)
            item = slot_a.take()
            if item is _SENTINEL:
                slot_b.put(_SENTINEL)
                return
            t0 = time.monotonic_ns()
            try:
                value = aggregator(item.value)
            except Exception:
                log.warning("aggregator failed on item %d; skipping", item.index, exc_info=True)
                errors[0] += 1
                continue
            costs.record(1, time.monotonic_ns() - t0)
            slot_b.put(_Item(item.index, item.ingress_ns, value))

    def decoder_loop():
        while True:
            item = slot_b.take()
            if item is _SENTINEL:
                return
            t0 = time.monotonic_ns()
            try:
                value = decoder(item.value)
            except Exception:
                log.warning("decoder failed on item %d; skipping", item.index, exc_info=True)
                errors[0] += 1
                continue
            t_out = time.monotonic_ns()
            costs.record(2, t_out - t0)
            outputs.append(value)
            records.append((item.index, item.ingress_ns, t_out))

    def guarded(fn):
        def runner():
            try:
                fn()
            except BaseException as exc:  # pragma: no cover - internal bug guard
                failures.append(exc)

        return runner

    threads = [
        threading.Thread(target=guarded(encoder_loop), name="stage-encoder"),
        threading.Thread(target=guarded(middle_loop), name="stage-aggregator"),
        threading.Thread(target=guarded(decoder_loop), name="stage-decoder"),
    ]
    if paced:
        source.start()
    for t in threads:
        t.start()
    for t in threads:
        t.join(timeout=600.0)
        if t.is_alive():
            raise RuntimeError(f"pipeline thread {t.name} failed to finish")
    if paced:
        source.join()
    if failures:
        raise failures[0]
    return outputs, _compute_stats(records, getattr(source, "drops", 0), errors[0])


def run_sequential(encoder, aggregator, decoder, observations, cycles=None):
    """Run the stages back to back per item; same stats as run_pipeline."""
    source, total, paced = _make_source(observations, cycles)
    if total < 3:
        raise ConfigError("cycles", f"need at least 3 items to fill the pipeline, got {total}")
    if paced:
        source.start()
    outputs: list = []
    records: list = []
    errors = 0
    while True:
        item = source.next_item()
        if item is None:
            break
        t_in = item.ingress_ns if paced else time.monotonic_ns()
        try:
            value = decoder(aggregator(encoder(item.value)))
        except Exception:
            log.warning("stage failed on item %d; skipping", item.index, exc_info=True)
            errors += 1
            continue
        t_out = time.monotonic_ns()
        outputs.append(value)
        records.append((item.index, t_in, t_out))
    if paced:
        source.join()
    return outputs, _compute_stats(records, getattr(source, "drops", 0), errors)
