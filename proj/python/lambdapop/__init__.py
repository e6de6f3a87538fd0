"""Multiple-merger coalescent simulation and Ne(t)/alpha inference."""

from ._lambdapop import (
    InputError,
    NumericalError,
    block_size_mle,
    block_size_pmf,
    fit,
    simulate,
    total_rate,
    tree_stats,
    __version__,
)

__all__ = [
    "InputError",
    "NumericalError",
    "block_size_mle",
    "block_size_pmf",
    "fit",
    "simulate",
    "total_rate",
    "tree_stats",
    "__version__",
]
