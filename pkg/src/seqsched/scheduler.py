"""Micro-batch scheduling: binning, sorting, variable batch sizes, failures.

A group of predicted lengths is turned into an ordered list of micro-batches:
predictions are coarsened to bins, sorted, packed into runs that never mix
bin keys, and capped at the largest key in each batch so that overruns can be
collected and recomputed after the group finishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .predictor import Prediction


class ScheduleError(ValueError):
    """Invalid policy or scheduling input."""


@dataclass(frozen=True)
class SchedulePolicy:
    """Knobs of the scheduling pipeline.

    vbs_token_budget is the per-batch token budget batch_size * cap aims at;
    caps at or above vbs_cutoff fall back to base_batch.  max_cap is the hard
    generation limit used when a batch is uncapped (no FCR) or recomputed.
    """

    group_size: int = 256
    base_batch: int = 16
    binning: bool = True
    bin_cell: int = 50
    fcr: bool = True
    vbs: bool = True
    vbs_token_budget: int = 256 * 50
    vbs_cutoff: int = 300
    max_cap: int = 512

    def __post_init__(self) -> None:
        if not (self.group_size >= self.base_batch >= 1):
            raise ScheduleError("need group_size >= base_batch >= 1")
        if self.bin_cell < 1:
            raise ScheduleError("bin_cell must be >= 1")
        if self.vbs_token_budget < self.base_batch:
            raise ScheduleError("vbs_token_budget must be >= base_batch")
        if self.vbs_cutoff < 1:
            raise ScheduleError("vbs_cutoff must be >= 1")
        if self.max_cap < 1:
            raise ScheduleError("max_cap must be >= 1")


@dataclass(frozen=True)
class MicroBatch:
    """Requests decoded together, with a shared new-token cap.

    cap=None means uncapped (run until every member finishes).
    """

    request_ids: tuple[int, ...]
    cap: Optional[int]
    kind: str = "scheduled"  # "scheduled" | "recompute"

    def __post_init__(self) -> None:
        if len(self.request_ids) < 1:
            raise ScheduleError("a micro-batch needs at least one request")
        if self.cap is not None and self.cap < 1:
            raise ScheduleError("cap must be >= 1 or None")
        if self.kind not in ("scheduled", "recompute"):
            raise ScheduleError(f"unknown batch kind: {self.kind!r}")

    @property
    def batch_size(self) -> int:
        return len(self.request_ids)


def bin_of(length: int, cell: int) -> int:
    """Smallest multiple of cell that is >= length (exact multiples stay)."""
    if length < 1 or cell < 1:
        raise ScheduleError("length and cell must be >= 1")
    return ((length + cell - 1) // cell) * cell


def _nearest_pow2(x: float) -> int:
    """Nearest power of two to x, ties rounding up; at least 1."""
    if x <= 1:
        return 1
    lo = 2 ** int(math.floor(math.log2(x)))
    hi = lo * 2
    return hi if (hi - x) <= (x - lo) else lo


def vbs_batch_size(cap: int, policy: SchedulePolicy) -> int:
    """Batch size for a given cap under the token-budget rule.

    Caps at or above the cutoff use the base batch size; shorter caps get the
    power of two nearest to vbs_token_budget / cap.
    """
    if cap < 1:
        raise ScheduleError("cap must be >= 1")
    if cap >= policy.vbs_cutoff:
        return policy.base_batch
    return _nearest_pow2(policy.vbs_token_budget / cap)


def schedule_group(
    predictions: Sequence[Prediction], policy: SchedulePolicy
) -> list[MicroBatch]:
    """Pack one group of predictions into capped micro-batches.

    Keys are binned predicted lengths (raw lengths when binning is off);
    requests are sorted by (key, id) and packed into runs that never mix two
    bin keys.  Batch size is vbs_batch_size of the largest key in the batch
    when VBS is on, else base_batch; the cap is the largest member key when
    FCR is on, else max_cap.
    """
    if len(predictions) == 0:
        raise ScheduleError("cannot schedule an empty group")
    if len(predictions) > policy.group_size:
        raise ScheduleError(
            f"group of {len(predictions)} exceeds group_size {policy.group_size}"
        )
    if policy.binning:
        keyed = [(bin_of(p.predicted_len, policy.bin_cell), p.request_id) for p in predictions]
    else:
        keyed = [(p.predicted_len, p.request_id) for p in predictions]
    keyed.sort()

    batches: list[MicroBatch] = []
    current: list[tuple[int, int]] = []

    def flush() -> None:
        if current:
            cap = current[-1][0] if policy.fcr else policy.max_cap
            batches.append(
                MicroBatch(tuple(rid for _, rid in current), cap, "scheduled")
            )
            current.clear()

    for key, rid in keyed:
        if current:
            # Keys ascend, so `key` is the running max of the would-be batch.
            limit = vbs_batch_size(key, policy) if policy.vbs else policy.base_batch
            if len(current) + 1 > limit or (policy.binning and key != current[-1][0]):
                flush()
        current.append((key, rid))
    flush()
    return batches


def collect_failures(
    batch: MicroBatch, unfinished_ids: Sequence[int]
) -> list[int]:
    """Validate and return the ids to append to the group's failure queue."""
    if batch.kind != "scheduled":
        raise ScheduleError("failures are only collected from scheduled batches")
    members = set(batch.request_ids)
    for rid in unfinished_ids:
        if rid not in members:
            raise ScheduleError(f"request {rid} is not a member of this batch")
    return list(unfinished_ids)


def schedule_recompute(
    queue: Sequence[int], policy: SchedulePolicy
) -> list[MicroBatch]:
    """Pack collected failures into uncapped batches of base_batch, id order."""
    ids = sorted(queue)
    return [
        MicroBatch(tuple(ids[i : i + policy.base_batch]), policy.max_cap, "recompute")
        for i in range(0, len(ids), policy.base_batch)
    ]


def schedule_to_dict(batches: Sequence[MicroBatch]) -> dict:
    """JSON-friendly dump of a schedule for inspection."""
    return {
        "batches": [
            {
                "ids": list(b.request_ids),
                "cap": b.cap,
                "size": b.batch_size,
                "kind": b.kind,
            }
            for b in batches
        ]
    }
