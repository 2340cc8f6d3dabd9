"""Exception hierarchy shared by every module."""


class SparseAttnError(Exception):
    """Base class for all library errors."""


class ShapeMismatch(SparseAttnError, ValueError):
    pass


class DomainError(SparseAttnError, ValueError):
    """A parameter lies outside the domain where a formula is defined."""


class DegenerateRow(SparseAttnError, ValueError):
    """Layer norm met a (near) constant row while running in strict mode."""


class FormatError(SparseAttnError, ValueError):
    """A matrix or manifest file is malformed."""


class ConfigError(SparseAttnError, ValueError):
    pass
