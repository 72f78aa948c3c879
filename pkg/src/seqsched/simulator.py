"""Batched autoregressive decoding under a calibrated cost model.

Decode-step time grows linearly with the kv position and, past a saturation
point, with batch size.  A batch runs until its cap or until every member
has finished; members whose realized length exceeds the cap are failures and
are regenerated from scratch in uncapped recompute batches after the group.
Times are abstract units rescaled to seconds by calibrating the vanilla
baseline against a reference throughput.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

from .predictor import NoisyPredictorConfig, predict
from .scheduler import (
    MicroBatch,
    SchedulePolicy,
    collect_failures,
    schedule_group,
    schedule_recompute,
)
from .workload import Request, realized_lengths


class SimulationError(ValueError):
    """Inconsistent simulation input."""


class CalibrationError(RuntimeError):
    """Anchors cannot be fit within tolerance."""

    def __init__(self, message: str, residuals: Optional[list[float]] = None):
        super().__init__(message)
        self.residuals = residuals or []


# Default shape: per-step cost doubles once decoding reaches this kv
# position.  Exposed as a knob because only the linear growth itself is a
# measured fact; the absolute slope is a modeling choice.
POSITION_COST_DOUBLING = 377


@dataclass(frozen=True)
class CostModel:
    """Parameters of simulated decode-step timing.

    step time = (t0 + t1 * position) * (1 + batch_penalty * max(0, B - batch_sat)).
    prefill_per_token charges prompt processing; pred_tokens is the number of
    decode steps one length prediction costs.  time_scale converts abstract
    units to seconds (set by calibrate).
    """

    t0: float = 1.0
    t1: float = 1.0 / POSITION_COST_DOUBLING
    batch_sat: int = 16
    batch_penalty: float = 0.035
    prefill_per_token: float = 0.0015
    pred_tokens: int = 3
    time_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.t0 <= 0:
            raise SimulationError("t0 must be > 0")
        if self.t1 < 0:
            raise SimulationError("t1 must be >= 0")
        if self.batch_sat < 1:
            raise SimulationError("batch_sat must be >= 1")
        if self.batch_penalty < 0:
            raise SimulationError("batch_penalty must be >= 0")
        if self.prefill_per_token < 0:
            raise SimulationError("prefill_per_token must be >= 0")
        if self.pred_tokens < 1:
            raise SimulationError("pred_tokens must be >= 1")
        if self.time_scale <= 0:
            raise SimulationError("time_scale must be > 0")


def default_cost_model() -> CostModel:
    return CostModel()


def step_time(cm: CostModel, batch_size: int, position: float) -> float:
    """Time of one decode step at a kv position, in abstract units."""
    if batch_size < 1:
        raise SimulationError("batch_size must be >= 1")
    if position < 0:
        raise SimulationError("position must be >= 0")
    over = max(0, batch_size - cm.batch_sat)
    return (cm.t0 + cm.t1 * position) * (1.0 + cm.batch_penalty * over)


def _decode_span(cm: CostModel, batch_size: int, start_pos: float, steps: int) -> float:
    """Closed form of sum(step_time(cm, B, start_pos + i) for i in range(steps))."""
    if steps <= 0:
        return 0.0
    base = cm.t0 * steps + cm.t1 * (start_pos * steps + steps * (steps - 1) / 2.0)
    over = max(0, batch_size - cm.batch_sat)
    return base * (1.0 + cm.batch_penalty * over)


@dataclass(frozen=True)
class BatchRecord:
    """Accounting for one simulated micro-batch."""

    request_ids: tuple[int, ...]
    batch_size: int
    kind: str
    cap: Optional[int]
    steps_run: int
    prefill_time: float
    decode_time: float
    slot_tokens: int
    unfinished: tuple[int, ...]

    @property
    def time(self) -> float:
        return self.prefill_time + self.decode_time

    def to_dict(self) -> dict:
        return {
            "ids": list(self.request_ids),
            "size": self.batch_size,
            "kind": self.kind,
            "cap": self.cap,
            "steps_run": self.steps_run,
            "prefill_time": self.prefill_time,
            "decode_time": self.decode_time,
            "slot_tokens": self.slot_tokens,
            "unfinished": list(self.unfinished),
        }


def simulate_batch(
    batch: MicroBatch,
    realized: dict[int, int],
    cm: CostModel,
    prompt_lens: dict[int, int],
) -> BatchRecord:
    """Run one micro-batch to its cap or to completion.

    The batch stops at min(cap, max realized length among members); members
    whose realized length exceeds the cap are reported unfinished.  Decode
    positions are offset by the mean prompt length since attention cost
    depends on absolute kv position.
    """
    missing = [rid for rid in batch.request_ids if rid not in realized]
    if missing:
        raise SimulationError(f"no realized length for requests {missing}")
    lengths = [realized[rid] for rid in batch.request_ids]
    max_real = max(lengths)
    steps = max_real if batch.cap is None else min(batch.cap, max_real)
    unfinished = tuple(
        rid
        for rid in batch.request_ids
        if batch.cap is not None and realized[rid] > batch.cap
    )
    prompts = [prompt_lens[rid] for rid in batch.request_ids]
    prefill = cm.prefill_per_token * sum(prompts)
    start_pos = sum(prompts) / len(prompts)
    decode = _decode_span(cm, batch.batch_size, start_pos, steps)
    return BatchRecord(
        request_ids=batch.request_ids,
        batch_size=batch.batch_size,
        kind=batch.kind,
        cap=batch.cap,
        steps_run=steps,
        prefill_time=prefill,
        decode_time=decode,
        slot_tokens=batch.batch_size * steps,
        unfinished=unfinished,
    )


@dataclass(frozen=True)
class RunReport:
    """Full accounting of one simulated run (times in seconds after rescale)."""

    label: str
    samples: int
    total_time: float
    throughput: float
    sum_realized_tokens: int
    sum_slot_tokens: int
    redundancy: float
    avg_batch_len: float
    failure_rate: float
    prediction_overhead_time: float
    per_batch: Optional[tuple[BatchRecord, ...]] = None

    def to_dict(self, include_batches: bool = False) -> dict:
        out = {
            "label": self.label,
            "samples": self.samples,
            "total_time": self.total_time,
            "throughput": self.throughput,
            "sum_realized_tokens": self.sum_realized_tokens,
            "sum_slot_tokens": self.sum_slot_tokens,
            "redundancy": self.redundancy,
            "avg_batch_len": self.avg_batch_len,
            "failure_rate": self.failure_rate,
            "prediction_overhead_time": self.prediction_overhead_time,
        }
        if include_batches and self.per_batch is not None:
            out["per_batch"] = [b.to_dict() for b in self.per_batch]
        return out

    def to_json(self, include_batches: bool = False) -> str:
        return json.dumps(self.to_dict(include_batches), indent=2)

    @property
    def token_throughput(self) -> float:
        return self.sum_realized_tokens / self.total_time


def _chunks(seq: Sequence, size: int):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _build_report(
    label: str,
    samples: int,
    records: list[BatchRecord],
    pred_overhead_raw: float,
    realized_sum: int,
    n_failures: int,
    cm: CostModel,
    keep_batches: bool,
) -> RunReport:
    raw_total = pred_overhead_raw + sum(r.time for r in records)
    slot = sum(r.slot_tokens for r in records)
    sized_steps = sum(r.batch_size * r.steps_run for r in records)
    total_size = sum(r.batch_size for r in records)
    total_time = raw_total * cm.time_scale
    return RunReport(
        label=label,
        samples=samples,
        total_time=total_time,
        throughput=samples / total_time,
        sum_realized_tokens=realized_sum,
        sum_slot_tokens=slot,
        redundancy=1.0 - realized_sum / slot,
        avg_batch_len=sized_steps / total_size,
        failure_rate=n_failures / samples,
        prediction_overhead_time=pred_overhead_raw * cm.time_scale,
        per_batch=tuple(records) if keep_batches else None,
    )


def run_vanilla(
    requests: Sequence[Request],
    mbs: int,
    cm: CostModel,
    run_seed: int,
    *,
    label: str = "vanilla",
    keep_batches: bool = False,
) -> RunReport:
    """Baseline: arrival order, fixed batch size, every batch runs uncapped."""
    if mbs < 1:
        raise SimulationError("mbs must be >= 1")
    if not requests:
        raise SimulationError("empty workload")
    realized = realized_lengths(requests, run_seed)
    prompts = {r.id: r.prompt_len for r in requests}
    records = [
        simulate_batch(
            MicroBatch(tuple(r.id for r in chunk), None, "scheduled"),
            realized,
            cm,
            prompts,
        )
        for chunk in _chunks(requests, mbs)
    ]
    return _build_report(
        label,
        len(requests),
        records,
        0.0,
        sum(realized.values()),
        0,
        cm,
        keep_batches,
    )


def run_scheduled(
    requests: Sequence[Request],
    policy: SchedulePolicy,
    predictor_kind: str,
    cm: CostModel,
    run_seed: int,
    *,
    noise: Optional[NoisyPredictorConfig] = None,
    fixed_value: Optional[int] = None,
    label: str = "scheduled",
    keep_batches: bool = False,
) -> RunReport:
    """Full pipeline: predict per group, schedule, decode, recompute failures.

    Per group: each prediction batch of base_batch requests costs a prompt
    prefill plus pred_tokens decode steps; scheduled batches are then
    simulated and overruns are regenerated from scratch in uncapped
    recompute batches.  A failed request's capped partial output counts only
    toward slot tokens; its realized tokens come from the regeneration.
    """
    if not requests:
        raise SimulationError("empty workload")
    realized = realized_lengths(requests, run_seed)
    prompts = {r.id: r.prompt_len for r in requests}

    records: list[BatchRecord] = []
    pred_overhead_raw = 0.0
    n_failures = 0
    for group in _chunks(requests, policy.group_size):
        for pred_chunk in _chunks(group, policy.base_batch):
            plens = [r.prompt_len for r in pred_chunk]
            pred_overhead_raw += cm.prefill_per_token * sum(plens)
            pred_overhead_raw += _decode_span(
                cm, len(pred_chunk), sum(plens) / len(plens), cm.pred_tokens
            )
        predictions = [
            predict(predictor_kind, r, noise, fixed_value=fixed_value) for r in group
        ]
        queue: list[int] = []
        for batch in schedule_group(predictions, policy):
            record = simulate_batch(batch, realized, cm, prompts)
            records.append(record)
            if record.unfinished:
                queue.extend(collect_failures(batch, record.unfinished))
        n_failures += len(queue)
        for batch in schedule_recompute(queue, policy):
            records.append(simulate_batch(batch, realized, cm, prompts))
    return _build_report(
        label,
        len(requests),
        records,
        pred_overhead_raw,
        sum(realized.values()),
        n_failures,
        cm,
        keep_batches,
    )


DEFAULT_ANCHORS: tuple[tuple[int, float], ...] = ((16, 1.22),)


def calibrate(
    requests: Sequence[Request],
    anchors: Sequence[tuple[int, float]] = DEFAULT_ANCHORS,
    *,
    base: Optional[CostModel] = None,
    run_seed: int = 0,
    rel_tol: float = 0.01,
) -> CostModel:
    """Fit the unit-to-seconds rescale so vanilla runs hit anchor throughputs.

    anchors are (mbs, target samples/s) pairs; the single free parameter is
    time_scale, fit by least squares over all anchors.  Raises
    CalibrationError with per-anchor residuals when no scale satisfies every
    anchor within rel_tol.
    """
    if not anchors:
        raise CalibrationError("need at least one anchor")
    cm0 = replace(base or default_cost_model(), time_scale=1.0)
    raw = []
    targets = []
    for mbs, target in anchors:
        if target <= 0:
            raise CalibrationError(f"anchor throughput must be > 0, got {target}")
        report = run_vanilla(requests, mbs, cm0, run_seed)
        raw.append(report.throughput)  # samples per abstract unit
        targets.append(target)
    # throughput_seconds = raw / scale; least squares on u = 1/scale.
    u = sum(r * t for r, t in zip(raw, targets)) / sum(r * r for r in raw)
    residuals = [(r * u - t) / t for r, t in zip(raw, targets)]
    worst = max(abs(res) for res in residuals)
    if worst > rel_tol:
        raise CalibrationError(
            f"anchors cannot be fit by a single time scale "
            f"(worst relative residual {worst:.3f})",
            residuals,
        )
    return replace(cm0, time_scale=1.0 / u)


def cost_model_to_dict(cm: CostModel) -> dict:
    return {
        "t0": cm.t0,
        "t1": cm.t1,
        "batch_sat": cm.batch_sat,
        "batch_penalty": cm.batch_penalty,
        "prefill_per_token": cm.prefill_per_token,
        "pred_tokens": cm.pred_tokens,
        "time_scale": cm.time_scale,
    }


def save_cost_model(cm: CostModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(cost_model_to_dict(cm), indent=2) + "\n")


def load_cost_model(path: str | Path) -> CostModel:
    obj = json.loads(Path(path).read_text())
    return CostModel(**obj)
