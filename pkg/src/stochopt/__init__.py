"""Stochastic and batch optimization methods for finite-sum objectives, with a
harness that checks their convergence guarantees on synthetic problems."""

from .core import (Batch, Diminishing, Fixed, PerCoordinate, RandomStream, Trace,
                   TraceRecord, __version__, sample_batch, stepsize_at)

__all__ = ["Batch", "Diminishing", "Fixed", "PerCoordinate", "RandomStream", "Trace",
           "TraceRecord", "__version__", "sample_batch", "stepsize_at"]
