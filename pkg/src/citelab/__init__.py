"""Arbitration laboratory for the minimal citation-impact model.

Compares the zero-citation fixed point of the corrected rate equation with
the closed-form ultimate impact m(e^lambda - 1), using exact stochastic
simulation of the underlying attachment process under both readings of
the kernel.
"""

__version__ = "0.1.0"

from .errors import CitelabError  # noqa: E402
from .model import (  # noqa: E402
    AgingKernel,
    CitationHistory,
    Exponential,
    KernelVariant,
    LogNormal,
    PaperParams,
    SystemParams,
    Uniform,
    citation_curve,
    comment_curve,
    kernel_weight,
    paper_count,
    parse_kernel,
    relative_fitness,
    ultimate_citations,
)
