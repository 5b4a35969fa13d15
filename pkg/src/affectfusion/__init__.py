"""Multitask dimensional-emotion regression with CCC loss and multistage SVR fusion."""

from affectfusion.metrics import (
    ATTRIBUTES,
    DEFAULT_WEIGHTS,
    AttributeTriple,
    CccStats,
    MtlWeights,
    ccc,
    ccc_loss,
    masked_ccc,
    masked_ccc_loss,
    mtl_loss,
    pearson,
)

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTES",
    "DEFAULT_WEIGHTS",
    "AttributeTriple",
    "CccStats",
    "MtlWeights",
    "ccc",
    "ccc_loss",
    "masked_ccc",
    "masked_ccc_loss",
    "mtl_loss",
    "pearson",
    "__version__",
]
