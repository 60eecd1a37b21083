"""Deep Gaussian mixture clustering.

Numerical work happens in the compiled ``_core`` extension; this package
re-exports it and adds a small convenience runner.
"""

from ._core import (
    CheckpointError,
    FormatError,
    Gmm,
    accuracy,
    assign,
    ch_score,
    config,
    embed,
    em_fit,
    encode,
    evaluate,
    gradients,
    init_gmm,
    kmeans_init,
    nmi,
    pretrain,
    separability,
    synth,
    synth_gmm,
    train,
)

__all__ = [
    "CheckpointError",
    "FormatError",
    "Gmm",
    "accuracy",
    "assign",
    "ch_score",
    "config",
    "embed",
    "em_fit",
    "encode",
    "evaluate",
    "gradients",
    "init_gmm",
    "kmeans_init",
    "nmi",
    "pretrain",
    "separability",
    "synth",
    "synth_gmm",
    "train",
    "run_pipeline",
]


def run_pipeline(options):
    """Pretrain, fit the initial mixture, train jointly and evaluate.

    ``options`` holds config keys (``out``, ``data``, ``clusters``, ...).
    Returns the evaluation dict.
    """
    pretrain(options)
    init_gmm(options)
    train(options)
    return evaluate(options)
