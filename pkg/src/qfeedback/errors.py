"""Exception types shared across the package."""


class KindMismatchError(ValueError):
    """An operation was applied to a tensor factor of the wrong kind."""


class SpaceMismatchError(ValueError):
    """Operands live on different (or incompatible) Hilbert spaces."""


class ContractViolation(ValueError):
    """An input violated a documented precondition (e.g. non-Hermitian Z)."""


class PSDViolation(ContractViolation):
    """A density matrix has an eigenvalue below the allowed tolerance."""


class ConvergenceError(RuntimeError):
    """A numerical solve did not reach its residual tolerance."""


class MultiplicityError(ConvergenceError):
    """The generator has more than one stationary state."""


class TruncationError(RuntimeError):
    """Population reached the top of a truncated Fock factor."""


class TrajectoryError(RuntimeError):
    """A quantum-jump trajectory produced an unusable state."""


class ConfigError(ValueError):
    """A scenario configuration is malformed or inconsistent."""
