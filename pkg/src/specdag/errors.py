"""Exception types shared across the package."""


class SpecDagError(Exception):
    """Base class for all engine errors."""


class InputTooLongError(SpecDagError):
    """Context exceeds the model's declared maximum length."""


class InvalidMaskError(SpecDagError):
    """Attention mask allows positions outside the ancestor closure."""


class DegenerateDistributionError(SpecDagError):
    """No probability mass left to sample from."""


class ModelMismatchError(SpecDagError):
    """Draft and target models disagree on the vocabulary."""


class TraceFormatError(SpecDagError):
    """Trace file is truncated, malformed, or has an unsupported version."""
