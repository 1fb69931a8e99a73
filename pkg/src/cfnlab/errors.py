"""Exception hierarchy. Every fatal condition raised by the library derives
from CfnLabError so the CLI can map domain failures to exit code 1."""


class CfnLabError(Exception):
    pass


class ShapeError(CfnLabError, ValueError):
    """Operand shapes are inconsistent."""


class ValidationError(CfnLabError, ValueError):
    """Bad user-supplied argument (rates, counts, token ids, ...)."""


class CorpusError(CfnLabError):
    """Unusable text input: empty train split, undecodable bytes, short split."""


class CheckpointError(CfnLabError):
    """Malformed or inconsistent checkpoint file."""


class NumericsError(CfnLabError):
    """Non-finite value where the computation must stay finite."""
