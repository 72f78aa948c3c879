"""Response-length perception: predictors, accuracy metrics, and prompts.

Predictors map a request to a single predicted response length.  The oracle
variants read the recorded generation samples directly; the noisy variant
perturbs the oracle with heavy-tailed noise and is calibrated (by bisection
on its spread) to match the accuracy profile of an instruction-tuned length
predictor: mean absolute error ~63, within-50 accuracy ~56%, within-100
accuracy ~81% on the alpaca-like reference workload.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

import numpy as np

from .workload import Request

TargetKind = Literal["max_of_k", "mean_of_k"]

PREDICTOR_KINDS = ("oracle_max", "oracle_mean", "noisy", "fixed", "trace")

# Appended to an instruction to ask for an in-band length estimate before
# the answer (perception-in-advance style).
PIA_SUFFIX = (
    "Before responding to the above instruction, you have to predict the "
    "length of your response. Print the estimated number of words in your "
    "response in the first line. Then change to a new line to respond to "
    "the instruction."
)

# Appended to an instruction to ask for the length estimate alone
# (perception-only style); generation happens separately.
PO_SUFFIX = (
    "Don't output the response for the above instruction. Instead, you "
    "need to predict the number of tokens in your response. Output only "
    "one number."
)


class PredictionError(ValueError):
    """Invalid predictor configuration or unpredictable request."""


# Stream tag keeping predictor noise disjoint from realized-length draws
# even when the two seeds coincide.
_NOISE_STREAM = 15485863


class ParseFailure(ValueError):
    """A length reply did not contain a usable integer."""


@dataclass(frozen=True)
class Prediction:
    request_id: int
    predicted_len: int
    target_kind: TargetKind = "max_of_k"

    def __post_init__(self) -> None:
        if self.predicted_len < 1:
            raise PredictionError("predicted_len must be >= 1")


@dataclass(frozen=True)
class NoisyPredictorConfig:
    """Additive Gaussian noise around the max-of-k oracle.

    Symmetric noise with a clamp at clamp_min; the spread is the only knob
    and is bisected against a target within-50 accuracy.  The heavy tail of
    real predictors' absolute errors comes from the workload's own length
    heterogeneity, not from the noise itself.
    """

    bias: int = 0
    spread: float = 0.0
    clamp_min: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.spread < 0:
            raise PredictionError("spread must be >= 0")
        if self.clamp_min < 1:
            raise PredictionError("clamp_min must be >= 1")


# Spread calibrated by fit_noise_spread on the alpaca-like 10k reference
# workload (see scripts/tune_presets.py) against the accuracy targets in the
# module docstring.
REFERENCE_NOISE_SPREAD = 46.34


def reference_noisy_config(seed: int = 0) -> NoisyPredictorConfig:
    """Noisy predictor at the frozen reference calibration."""
    return NoisyPredictorConfig(bias=0, spread=REFERENCE_NOISE_SPREAD, seed=seed)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def predict(
    kind: str,
    request: Request,
    cfg: Optional[NoisyPredictorConfig] = None,
    *,
    fixed_value: Optional[int] = None,
) -> Prediction:
    """Predict the response length of one request.

    kind selects the strategy: oracle_max / oracle_mean read the recorded
    samples, noisy perturbs oracle_max using cfg, fixed returns fixed_value,
    trace reads the request's recorded predicted_len.  Noisy predictions are
    deterministic per (cfg.seed, request.id).
    """
    if kind == "oracle_max":
        return Prediction(request.id, request.max_sample, "max_of_k")
    if kind == "oracle_mean":
        return Prediction(request.id, _round_half_up(request.mean_sample), "mean_of_k")
    if kind == "noisy":
        if cfg is None:
            raise PredictionError("noisy predictor requires a NoisyPredictorConfig")
        rng = np.random.default_rng((cfg.seed, _NOISE_STREAM, request.id))
        noise = cfg.spread * float(rng.standard_normal())
        value = _round_half_up(request.max_sample + cfg.bias + noise)
        return Prediction(request.id, max(cfg.clamp_min, value), "max_of_k")
    if kind == "fixed":
        if fixed_value is None or fixed_value < 1:
            raise PredictionError("fixed predictor requires fixed_value >= 1")
        return Prediction(request.id, fixed_value, "max_of_k")
    if kind == "trace":
        if request.predicted_len is None:
            raise PredictionError(f"request {request.id} has no recorded predicted_len")
        return Prediction(request.id, request.predicted_len, "max_of_k")
    raise PredictionError(f"unknown predictor kind: {kind!r}")


def predict_all(
    kind: str,
    requests: Sequence[Request],
    cfg: Optional[NoisyPredictorConfig] = None,
    *,
    fixed_value: Optional[int] = None,
) -> list[Prediction]:
    return [predict(kind, r, cfg, fixed_value=fixed_value) for r in requests]


@dataclass(frozen=True)
class PerceptionReport:
    """Aggregate prediction quality against realized lengths."""

    error_w: float
    acc50: float
    acc100: float
    underestimate_rate: float

    def to_dict(self) -> dict:
        return {
            "error_w": self.error_w,
            "acc50": self.acc50,
            "acc100": self.acc100,
            "underestimate_rate": self.underestimate_rate,
        }


def perception_metrics(
    predictions: Sequence[Prediction], realized: Sequence[int]
) -> PerceptionReport:
    """Mean absolute error plus within-50 / within-100 hit rates.

    predictions[i] is scored against realized[i]; a hit within 50 is by
    construction also a hit within 100.
    """
    if len(predictions) == 0:
        raise PredictionError("perception_metrics needs at least one prediction")
    if len(predictions) != len(realized):
        raise PredictionError(
            f"got {len(predictions)} predictions but {len(realized)} realized lengths"
        )
    pred = np.array([p.predicted_len for p in predictions], dtype=float)
    real = np.array(realized, dtype=float)
    diff = np.abs(pred - real)
    return PerceptionReport(
        error_w=float(diff.mean()),
        acc50=float((diff < 50).mean()),
        acc100=float((diff < 100).mean()),
        underestimate_rate=float((pred < real).mean()),
    )


def build_pia_prompt(instruction: str) -> str:
    """Instruction plus the estimate-first-then-answer suffix."""
    if not instruction:
        raise PredictionError("instruction must be non-empty")
    return f"{instruction}\n{PIA_SUFFIX}"


def build_po_prompt(instruction: str) -> str:
    """Instruction plus the estimate-only suffix."""
    if not instruction:
        raise PredictionError("instruction must be non-empty")
    return f"{instruction}\n{PO_SUFFIX}"


_INT_RE = re.compile(r"\d+")


def parse_length_reply(reply: str) -> int:
    """Extract the predicted length from a model reply.

    Takes the first integer on the first non-empty line; anything else is a
    ParseFailure, which callers count toward the predictor's failure rate.
    """
    for line in reply.splitlines():
        if not line.strip():
            continue
        match = _INT_RE.search(line)
        if match is None:
            raise ParseFailure(f"no integer in reply line: {line!r}")
        value = int(match.group())
        if value < 1:
            raise ParseFailure(f"non-positive length in reply line: {line!r}")
        return value
    raise ParseFailure("empty reply")


def parse_failure_rate(replies: Sequence[str]) -> float:
    """Fraction of replies the length parser rejects."""
    if not replies:
        raise PredictionError("parse_failure_rate needs at least one reply")
    failures = 0
    for reply in replies:
        try:
            parse_length_reply(reply)
        except ParseFailure:
            failures += 1
    return failures / len(replies)


def fit_noise_spread(
    requests: Sequence[Request],
    run_seed: int,
    *,
    target_acc50: float = 0.56,
    noise_seed: int = 0,
    tol: float = 1e-3,
    max_iter: int = 40,
) -> float:
    """Bisect the noisy predictor's spread until acc50 matches the target.

    acc50 decreases monotonically in the spread, so plain bisection on
    [0, hi] converges; the caller should verify error_w and acc100 land in
    their expected bands afterwards.
    """
    from .workload import realized_lengths

    real_map = realized_lengths(requests, run_seed)
    real = [real_map[r.id] for r in requests]

    def acc50_at(spread: float) -> float:
        cfg = NoisyPredictorConfig(spread=spread, seed=noise_seed)
        preds = predict_all("noisy", requests, cfg)
        return perception_metrics(preds, real).acc50

    lo, hi = 0.0, 64.0
    while acc50_at(hi) > target_acc50:
        hi *= 2
        if hi > 1e5:
            raise PredictionError("cannot reach target acc50: too accurate at any spread")
    if acc50_at(lo) < target_acc50:
        raise PredictionError("cannot reach target acc50: baseline error too large")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if acc50_at(mid) >= target_acc50:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def save_predictions(predictions: Sequence[Prediction], path: str | Path) -> None:
    """Write predictions as JSONL {request_id, predicted_len, target_kind}."""
    with Path(path).open("w", encoding="utf-8") as fh:
        for p in predictions:
            fh.write(
                json.dumps(
                    {
                        "request_id": p.request_id,
                        "predicted_len": p.predicted_len,
                        "target_kind": p.target_kind,
                    }
                )
                + "\n"
            )


def load_predictions(path: str | Path) -> list[Prediction]:
    preds = []
    for lineno, line in enumerate(
        Path(path).read_text(encoding="utf-8").splitlines(), 1
    ):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            preds.append(
                Prediction(obj["request_id"], obj["predicted_len"], obj["target_kind"])
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise PredictionError(f"{path}: line {lineno}: {exc}")
    return preds
