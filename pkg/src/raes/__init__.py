"""Residual acoustic echo suppression toolkit.

A streaming echo-control pipeline: a subband NLMS adaptive filter removes the
linear part of the loudspeaker echo, and a compact multi-task CNN predicts a
phase-sensitive spectral mask (plus a double-talk state) that suppresses the
nonlinear residual. Includes a synthetic mixture generator, evaluation
metrics (ERLE / STOI / real-time factor / FLOPs), an HTTP service, and a CLI.
"""

from __future__ import annotations

from raes.audio import AudioSignal, read_wav, write_wav
from raes.stft import StftConfig, istft, stft
from raes.nlms import NlmsState, nlms_step
from raes.pipeline import (
    PipelineState,
    apply_mask,
    dtd_postprocess,
    process_file,
    process_signals,
    process_stream,
    psm_target,
)
from raes.metrics import (
    EvalReport,
    count_flops,
    erle,
    evaluate_record,
    mflops_per_frame,
    rt_factor,
    stoi,
)
from raes.targets import (
    TrainingTargets,
    build_targets,
    dump_targets,
    load_targets,
    save_targets,
)

__version__ = "0.1.0"

__all__ = [
    "AudioSignal",
    "EvalReport",
    "NlmsState",
    "PipelineState",
    "StftConfig",
    "TrainingTargets",
    "__version__",
    "apply_mask",
    "build_targets",
    "count_flops",
    "dtd_postprocess",
    "dump_targets",
    "erle",
    "evaluate_record",
    "istft",
    "load_targets",
    "mflops_per_frame",
    "nlms_step",
    "process_file",
    "process_signals",
    "process_stream",
    "psm_target",
    "read_wav",
    "rt_factor",
    "save_targets",
    "stft",
    "stoi",
    "write_wav",
]
