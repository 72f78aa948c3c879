"""Length-aware sequence scheduling with a calibrated batched-decode simulator."""

from .metrics import ComparisonRow, SweepPoint, compare, emit_csv, emit_svg
from .predictor import (
    NoisyPredictorConfig,
    ParseFailure,
    PerceptionReport,
    Prediction,
    build_pia_prompt,
    build_po_prompt,
    fit_noise_spread,
    parse_length_reply,
    perception_metrics,
    predict,
    reference_noisy_config,
)
from .scheduler import (
    MicroBatch,
    SchedulePolicy,
    bin_of,
    collect_failures,
    schedule_group,
    schedule_recompute,
    vbs_batch_size,
)
from .simulator import (
    CalibrationError,
    CostModel,
    RunReport,
    calibrate,
    default_cost_model,
    run_scheduled,
    run_vanilla,
    simulate_batch,
    step_time,
)
from .workload import (
    PRESETS,
    Request,
    WorkloadConfig,
    alpaca_like,
    generate_synthetic,
    load_trace,
    realized_length,
    save_trace,
    wild_like,
)

__version__ = "0.1.0"
