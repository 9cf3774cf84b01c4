"""Shared exception types."""


class GridMismatch(ValueError):
    """Two discretised objects live on different grids."""


class DomainError(ValueError):
    """An argument lies outside its admissible domain."""


class SimulationBlowUp(RuntimeError):
    """A simulated state became non-finite; message names path and step."""


class SolverBlowUp(RuntimeError):
    """A deterministic solve exceeded its configured cap; message names the step."""
