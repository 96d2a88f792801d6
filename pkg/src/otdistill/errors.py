"""Exception hierarchy shared by every module."""


class OTDistillError(Exception):
    """Base class for all package errors."""


class ContractError(OTDistillError, ValueError):
    """An operation was called outside its preconditions."""


class DimensionError(ContractError):
    """Operand shapes do not line up."""


class ZeroRowError(ContractError):
    """A row with zero Euclidean norm where a norm is divided by."""

    def __init__(self, row, message=None):
        self.row = row
        super().__init__(message or f"row {row} has zero norm")


class GraphError(ContractError):
    """Misuse of the gradient graph (non-scalar loss, reused graph)."""


class NumericalError(OTDistillError, ArithmeticError):
    """NaN or Inf where finite values are required."""


class TrainingDivergedError(NumericalError):
    """Loss became non-finite during training."""


class ConfigError(OTDistillError, ValueError):
    """Invalid experiment or generator configuration."""


class CheckpointError(OTDistillError):
    """Checkpoint missing, corrupt, or inconsistent with the config."""
