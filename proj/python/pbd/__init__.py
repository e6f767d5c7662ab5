"""Clean-label backdoor toolkit for prompt-based text classifiers.

Thin wrapper over the native extension: dataset poisoning with negative
augmentation, non-robust sample selection, trigger prompt search, victim
training and ASR/FTR/C-Acc evaluation, all driven by a JSON run config.
"""

from ._pbdcore import (
    attach_trigger,
    derive_seed,
    false_trigger_texts,
    generate_benchmark,
    logit_discrepancy,
    read_metrics,
    run,
    run_stage,
    sweep,
    top3_mean,
)

__version__ = "0.1.0"

__all__ = [
    "attach_trigger",
    "derive_seed",
    "false_trigger_texts",
    "generate_benchmark",
    "logit_discrepancy",
    "read_metrics",
    "run",
    "run_stage",
    "sweep",
    "top3_mean",
    "__version__",
]
