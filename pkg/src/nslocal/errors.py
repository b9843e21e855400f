"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: bad arguments and
malformed inputs exit 2, failed checks exit 1, runtime aborts exit 3.
"""

from __future__ import annotations


class InvalidArgument(ValueError):
    """An argument violates a documented precondition."""


class DomainMismatch(ValueError):
    """A geometric query extends beyond the data it is evaluated on."""


class OutOfDomain(ValueError):
    """A point lies outside the covered box."""


class NotFound(KeyError):
    """A referenced object is not a member of the queried container."""


class ResolutionError(ValueError):
    """The grid is too coarse to resolve the requested object."""


class SingularPoint(ValueError):
    """Evaluation requested exactly at a kernel singularity."""


class SolverAbort(RuntimeError):
    """The time integrator stopped (CFL violation, NaN, ...)."""


class CheckpointError(RuntimeError):
    """A checkpoint is corrupt, or incompatible with the requested run."""
