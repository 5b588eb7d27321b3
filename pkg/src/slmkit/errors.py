"""Exception types shared across the package."""


class ContractError(ValueError):
    """An argument or call violates a documented precondition."""


class DimensionError(ContractError):
    """Tensor shapes do not line up for the requested operation."""


class LengthError(ContractError):
    """A sequence length is outside the supported range."""


class FullyMaskedRowError(ContractError):
    """A softmax row has no allowed entries to normalize over."""
